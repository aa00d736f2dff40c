from __future__ import annotations

import json
import math
from itertools import product

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cohcomm import gates
from cohcomm.protocol import (
    MessageProtocol,
    all_message_pairs,
    builtin_gate,
    cnot_protocol,
    coherent_copy,
    coherentify,
    crossing_protocol,
    crossing_with_epr,
    extract_gamma,
    identity_protocol,
    make_epr,
    matrix_op,
    message_error,
    op,
    operator_schmidt_rank,
    otp,
    outcome_distribution,
    protocol_from_json,
    protocol_to_json,
    run_p_prime,
    run_protocol,
    silent_protocol,
    swap_entangler_protocol,
    verify_cobit,
)
from cohcomm.qstate import Party, QuantumState, RegisterLayout, basis_state, partial_trace, project, schmidt


def _haar(d: int, rng: np.random.Generator) -> np.ndarray:
    q, r = np.linalg.qr(rng.normal(size=(d, d)) + 1j * rng.normal(size=(d, d)))
    return q * (np.diag(r) / np.abs(np.diag(r)))


def _scrambled_crossing(seed: int) -> MessageProtocol:
    """Crossing gate sandwiched between random local unitaries that leave the
    message inputs untouched but mix the outputs with fresh ancillas."""
    rng = np.random.default_rng(seed)
    base = crossing_protocol()
    lay = base.layout.extend(("Ax", Party.ALICE, 1), ("Bx", Party.BOB, 1))
    ra = (matrix_op(_haar(2, rng), "Ax"),)
    rb = (matrix_op(_haar(2, rng), "Bx"),)
    post_a = (matrix_op(_haar(4, rng), "A1p", "Ax"),)
    post_b = (matrix_op(_haar(4, rng), "B1p", "Bx"),)
    return MessageProtocol(
        gate=base.gate,
        layout=lay,
        rounds=((ra, rb), (post_a, post_b)),
        gate_targets=base.gate_targets,
        c1_bits=1,
        c2_bits=1,
        out_a="A1p",
        out_b="B1p",
        name="scrambled",
    )


# ------------------------------------------------------------- primitives


def test_coherent_copy_examples():
    lay = RegisterLayout.of(("S", "alice", 1), ("D", "bob", 1))
    s = coherent_copy(basis_state(lay, {"S": "1", "D": "0"}), "S", "D")
    assert s.amplitudes[3] == 1
    plus = QuantumState(lay, np.array([1, 0, 1, 0]) / math.sqrt(2))
    out = coherent_copy(plus, "S", "D")
    np.testing.assert_allclose(out.amplitudes, np.array([1, 0, 0, 1]) / math.sqrt(2))
    assert schmidt(out, ["S"]).entropy == pytest.approx(1.0)
    lay2 = RegisterLayout.of(("S", "alice", 2), ("D", "bob", 2))
    out2 = coherent_copy(basis_state(lay2, {"S": "10", "D": "00"}), "S", "D")
    assert project(out2, {"S": "10", "D": "10"}).weight == pytest.approx(1.0)


def test_otp_examples():
    lay = RegisterLayout.of(("M", "alice", 1), ("K", "alice", 1))
    s = otp(basis_state(lay, {"M": "1", "K": "1"}), "M", "K")
    assert s.amplitudes[1] == 1  # |m=0>|x=1>
    key = QuantumState(lay, np.array([1, 1, 0, 0]) / math.sqrt(2))
    np.testing.assert_allclose(otp(key, "M", "K").amplitudes, np.array([1, 0, 0, 1]) / math.sqrt(2))
    with pytest.raises(ValueError):
        otp(key, "M", "K", direction="sideways")


@pytest.mark.parametrize("width", [1, 2])
def test_otp_involution_on_all_basis_states(width):
    lay = RegisterLayout.of(("M", "alice", width), ("K", "alice", width))
    for m, k in product(range(2 ** width), repeat=2):
        bits = {"M": format(m, f"0{width}b"), "K": format(k, f"0{width}b")}
        s = basis_state(lay, bits)
        assert np.array_equal(otp(otp(s, "M", "K"), "M", "K", "decrypt").amplitudes, s.amplitudes)


def test_otp_requires_same_party():
    lay = RegisterLayout.of(("M", "alice", 1), ("K", "bob", 1))
    with pytest.raises(ValueError, match="same party"):
        otp(basis_state(lay, {"M": "0", "K": "0"}), "M", "K")


@pytest.mark.parametrize("count", [1, 3])
def test_make_epr(count):
    s = make_epr(count)
    sch = schmidt(s, [Party.ALICE])
    assert sch.entropy == pytest.approx(count)
    assert sch.rank == 2 ** count
    np.testing.assert_allclose(partial_trace(s, ["A"]).matrix, np.eye(2 ** count) / 2 ** count, atol=1e-14)


def test_gate_schmidt_numbers():
    assert builtin_gate("cnot").schmidt_number == 2
    assert builtin_gate("crossing").schmidt_number == 4
    assert builtin_gate("swap", 2).schmidt_number == 16
    assert builtin_gate("identity").schmidt_number == 1
    assert operator_schmidt_rank(np.kron(gates.H, gates.X), 1, 1) == 1


# ---------------------------------------------------------------- runs


def test_crossing_run_exact():
    p = crossing_protocol()
    out = run_protocol(p, "1", "0")
    assert project(out, {"A1p": "0", "B1p": "1"}).weight == pytest.approx(1.0, abs=1e-15)


def test_crossing_all_pairs_deterministic():
    p = crossing_protocol()
    for a, b in all_message_pairs(p):
        dist = outcome_distribution(p, run_protocol(p, a, b))
        for (ap, bp), pr in dist.items():
            assert pr == pytest.approx(1.0 if (ap, bp) == (a, b) else 0.0, abs=1e-15)
        assert message_error(dist, a, b) == pytest.approx(0.0, abs=1e-15)


def test_identity_zero_bit_protocol():
    p = silent_protocol()
    out = run_protocol(p, "", "")
    assert outcome_distribution(p, out) == {("", ""): 1.0}


def test_noisy_epsilon():
    p = crossing_protocol(0.1)
    g = extract_gamma(p, {pr: run_protocol(p, *pr) for pr in all_message_pairs(p)})
    assert g.epsilon_measured == pytest.approx(0.1, abs=1e-9)
    assert g.error_free().weight == pytest.approx(1 - g.epsilon_bar, abs=1e-12)
    g0 = extract_gamma(crossing_protocol(), {pr: run_protocol(crossing_protocol(), *pr) for pr in all_message_pairs(p)})
    assert g0.epsilon_measured == pytest.approx(0.0, abs=1e-15)


def test_reserved_names_and_ownership():
    base = crossing_protocol()
    with pytest.raises(ValueError, match="reserved"):
        MessageProtocol(
            gate=base.gate,
            layout=base.layout.extend(("A3", Party.ALICE, 1)),
            rounds=base.rounds,
            gate_targets=base.gate_targets,
            c1_bits=1,
            c2_bits=1,
            out_a="A1p",
            out_b="B1p",
        )
    with pytest.raises(ValueError, match="touches"):
        MessageProtocol(
            gate=base.gate,
            layout=base.layout,
            rounds=(((op("x", "B1"),), ()), ((), ())),
            gate_targets=base.gate_targets,
            c1_bits=1,
            c2_bits=1,
            out_a="A1p",
            out_b="B1p",
        )


# ------------------------------------------------------------ coherent wrapper


def test_noiseless_p_prime():
    p = crossing_protocol()
    for a, b in all_message_pairs(p):
        out = run_p_prime(p, a, b)
        assert out.decoupling_error <= 1e-9
        msg = project(out.final_state, {"A0": a, "A1p": b, "B0": b, "B1p": a})
        assert msg.weight == pytest.approx(1.0, abs=1e-12)
    rep = coherentify(p)
    assert rep.gamma00_entropy == pytest.approx(2.0, abs=1e-9)
    assert rep.gamma00_rank == 4


def test_zero_bit_p_prime():
    out = run_p_prime(silent_protocol(), "", "")
    assert out.decoupling_error <= 1e-12
    g = out.gamma.error_free()
    assert g.layout == out.final_state.layout


def test_gamma_difference_law_noisy():
    rep = coherentify(crossing_protocol(0.1))
    g1 = rep.outputs[("0", "0")].gamma.gamma_states
    g2 = rep.outputs[("1", "1")].gamma.gamma_states
    for key in g1:
        if g1[key].weight < 1e-14:
            assert g2[key].weight < 1e-14
            continue
        ov = abs(np.vdot(g1[key].amplitudes, g2[key].amplitudes)) ** 2
        assert ov / (g1[key].weight * g2[key].weight) >= 1 - 1e-9
    assert rep.min_key_fidelity >= 1 - 1e-9


@pytest.mark.parametrize(
    "p",
    [crossing_protocol(), crossing_protocol(0.1), crossing_protocol(0.2, 0.05, asymmetric=True), crossing_with_epr(0.1), swap_entangler_protocol(), cnot_protocol()],
    ids=lambda p: p.name,
)
def test_wrapper_invariants_on_stock_protocols(p):
    rep = coherentify(p)
    assert rep.reconstruction_error < 1e-9
    assert rep.min_key_fidelity >= 1 - 1e-9
    eps = rep.gamma.epsilon_measured
    floor = p.c1_bits + p.c2_bits + math.log2(1 - eps)
    assert rep.gamma00_entropy >= floor - 1e-6
    sch, n = p.gate.schmidt_number, p.n_uses
    ceiling = sch ** n if p.e_in_ebits == 0 else (sch * 2 ** p.e_in_ebits) ** n
    assert rep.gamma00_rank <= ceiling
    assert rep.gamma.epsilon_bar <= eps + 1e-12


def test_epr_protocol_rank_ceiling_doubles():
    rep = coherentify(crossing_with_epr())
    assert rep.gamma00_rank == 8
    assert rep.gamma00_entropy == pytest.approx(3.0, abs=1e-9)


@settings(max_examples=12)
@given(st.integers(0, 2 ** 31))
def test_wrapper_invariants_random_local_ops(seed):
    p = _scrambled_crossing(seed)
    rep = coherentify(p)
    assert rep.reconstruction_error < 1e-9
    assert rep.min_key_fidelity >= 1 - 1e-9
    eps = rep.gamma.epsilon_measured
    if eps < 1:
        assert rep.gamma00_entropy >= 2 + math.log2(1 - eps) - 1e-6


@settings(max_examples=15)
@given(st.floats(0.0, 0.5), st.floats(0.0, 0.5))
def test_epsilon_matches_flip_law(fa, fb):
    p = crossing_protocol(fa, fb)
    g = extract_gamma(p, {pr: run_protocol(p, *pr) for pr in all_message_pairs(p)})
    assert g.epsilon_measured == pytest.approx(1 - (1 - fa) * (1 - fb), abs=1e-9)
    for (a, b, ap, bp), pr in g.prob.items():
        assert 0 <= pr <= 1 + 1e-12
    for a, b in all_message_pairs(p):
        total = sum(v for (x, y, _, _), v in g.prob.items() if (x, y) == (a, b))
        assert total == pytest.approx(1.0, abs=1e-10)


# ----------------------------------------------------------------- cobits


def test_verify_cobit_examples():
    assert verify_cobit(cnot_protocol()) == pytest.approx(0.0, abs=1e-10)
    assert verify_cobit(cnot_protocol(measured=True)) == pytest.approx(0.5, abs=1e-10)
    assert verify_cobit(identity_protocol(1)) == pytest.approx(1.0, abs=1e-10)


def test_verify_cobit_coherentified_crossing():
    assert verify_cobit(crossing_protocol(), "both", coherent=True) <= 1e-10


@pytest.mark.slow
def test_verify_cobit_haar_probes():
    assert verify_cobit(cnot_protocol(), haar_probes=200, seed=1) <= 1e-10
    assert verify_cobit(cnot_protocol(measured=True), haar_probes=200, seed=1) <= 0.5 + 1e-10


# -------------------------------------------------------------------- json


@pytest.mark.parametrize(
    "p",
    [crossing_protocol(0.1), crossing_protocol(0.2, 0.1, asymmetric=True), cnot_protocol(True), silent_protocol(), crossing_with_epr(), swap_entangler_protocol(), _scrambled_crossing(4)],
    ids=lambda p: p.name,
)
def test_protocol_json_round_trip(p):
    q = protocol_from_json(json.loads(json.dumps(protocol_to_json(p))))
    assert q.layout == p.layout and q.rounds == p.rounds and q.gate_targets == p.gate_targets
    for a, b in all_message_pairs(p):
        np.testing.assert_allclose(run_protocol(q, a, b).amplitudes, run_protocol(p, a, b).amplitudes, atol=1e-15)


def test_stock_reference_json():
    p = protocol_from_json({"builtin": "crossing", "flip_a": 0.1})
    assert p.declared_epsilon == pytest.approx(0.1)
