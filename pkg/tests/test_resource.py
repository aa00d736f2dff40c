from __future__ import annotations

import itertools
import json
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from cohcomm.resource import (
    EDGES,
    IDENTITIES,
    RegionError,
    ResourcePoint,
    builtin_derivations,
    check_derivation,
    eval_rate,
    identity_report,
    map_along,
    map_cce_cocoe,
    map_diamond,
    map_one_way,
    named_map,
    region_name,
    region_path,
    verify_identity,
)

F = Fraction
fracs = st.fractions(min_value=-20, max_value=20, max_denominator=64)
triples = st.tuples(fracs, fracs, fracs)


def _rational_points(n: int, seed: int) -> list[tuple[Fraction, Fraction, Fraction]]:
    rng = np.random.default_rng(seed)
    num = rng.integers(-500, 501, size=(n, 3))
    den = rng.integers(1, 97, size=(n, 3))
    return [tuple(F(int(a), int(b)) for a, b in zip(r, d)) for r, d in zip(num, den)]


POINTS = _rational_points(1000, 7)


# ------------------------------------------------------------- region maps


@pytest.mark.parametrize(
    "p, expected",
    [((1, 1, -1), (1, 1, -1)), ((-1, 2, 0), (-1, 2, 1)), ((-1, -1, 0), (-1, -1, 2)), ((0, 0, 3), (0, 0, 3))],
)
def test_cce_cocoe_examples(p, expected):
    assert map_cce_cocoe(p) == tuple(F(x) for x in expected)


def test_cce_cocoe_round_trip_1000_points():
    for p in POINTS:
        assert map_cce_cocoe(map_cce_cocoe(p), "inverse") == p
        assert map_cce_cocoe(map_cce_cocoe(p, "inverse")) == p


@given(fracs.filter(lambda x: x >= 0), fracs.filter(lambda x: x >= 0), fracs)
def test_cce_cocoe_identity_in_first_quadrant(c1, c2, e):
    assert map_cce_cocoe((c1, c2, e)) == (c1, c2, e)


def test_cce_cocoe_bad_direction():
    with pytest.raises(ValueError):
        map_cce_cocoe((0, 0, 0), "sideways")


@pytest.mark.parametrize(
    "p, dst, expected",
    [((1, 0, 0), "CoQE", (2, 0, -1)), ((1, 1, 0), "CoCoE", (2, 2, -2)), ((0, 1, 0), "QCoE", (0, 2, -1))],
)
def test_diamond_examples(p, dst, expected):
    assert map_diamond(p, "QQE", dst) == tuple(F(x) for x in expected)


def test_diamond_closed_form_and_path_independence():
    for q1, q2, e in POINTS:
        via_coqe = map_along((q1, q2, e), ["QQE", "CoQE", "CoCoE"])
        via_qcoe = map_along((q1, q2, e), ["QQE", "QCoE", "CoCoE"])
        assert via_coqe == via_qcoe == (2 * q1, 2 * q2, e - q1 - q2)
        assert map_diamond(via_coqe, "CoCoE", "QQE") == (q1, q2, e)


@given(triples, st.sampled_from(["CoQE", "QCoE", "CoCoE", "CCE", "QCE", "CQE", "RRE"]))
def test_diamond_round_trip(p, region):
    assert map_diamond(map_diamond(p, "QQE", region), region, "QQE") == p


@pytest.mark.parametrize("edge", EDGES, ids=lambda e: e.name)
def test_every_edge_is_invertible(edge):
    for p in POINTS[:200]:
        assert edge.inverse(edge.transform(p)) == p
        assert edge.transform(edge.inverse(p)) == p


def test_rre_is_a_labeled_identity_onto_cce():
    rre = next(e for e in EDGES if e.domain_region == "RRE")
    assert rre.codomain_region == "CCE"
    assert all(rre.transform(p) == p for p in POINTS[:100])
    assert map_diamond((1, -2, 3), "RRE", "CCE") == (1, -2, 3)


def test_region_aliases_and_errors():
    assert region_name("C_oC_oE") == region_name("cocoe") == "CoCoE"
    assert region_path("QQE", "QQE") == []
    with pytest.raises(RegionError):
        region_name("XYZ")
    with pytest.raises(RegionError):
        region_path("QQE", "QE")
    with pytest.raises(RegionError):
        named_map("nonsense")


def test_one_way_examples_and_round_trip():
    assert map_one_way((1, 0)) == (2, -1)
    assert map_one_way((0, F(3, 7))) == (0, F(3, 7))
    for q, e, _ in POINTS:
        assert map_one_way(map_one_way((q, e)), "inverse") == (q, e)


def test_named_maps_match_functions():
    assert named_map("thm12")((-1, 2, 0)) == (-1, 2, 1)
    assert named_map("thm12-inverse")((-1, 2, 1)) == (-1, 2, 0)
    assert named_map("qqe-to-cocoe")((1, 1, 0)) == (2, 2, -2)
    assert named_map("one-way")((1, 0)) == (2, -1)
    assert named_map("one-way-inverse")((2, -1)) == (1, 0)


# ------------------------------------------------------ exact identities


@pytest.mark.parametrize("name", ["teleport", "superdense", "two_cobits", "tp_sd", "coherent_teleport"])
def test_identities_are_exact(name):
    assert verify_identity(name) <= 1e-10


def test_unknown_identity():
    with pytest.raises(KeyError):
        verify_identity("telepathy")


def test_tp_sd_ebit_ledger():
    rep = identity_report("tp_sd")
    # the circuit runs the identity twice: 2 cbits + 2 ebits -> 2 cobits
    assert rep.consumes == ResourcePoint.of(cbit_fwd=1, ebit=1).scale(2)
    assert rep.produces == ResourcePoint.of(cobit_fwd=1).scale(2)
    assert rep.ebits_per_cobit_on_plus == pytest.approx(1.0, abs=1e-10)


def _coherent_superdense_oracle(a: int, b: int) -> np.ndarray:
    """Plain numpy: qubits (a, b, ea, eb), Alice holds a, b, ea."""
    I, X, Z = np.eye(2), np.array([[0, 1], [1, 0]]), np.diag([1, -1])
    H = np.array([[1, 1], [1, -1]]) / np.sqrt(2)
    P0, P1 = np.diag([1, 0]), np.diag([0, 1])

    def k(*ms):
        out = np.ones((1, 1))
        for m in ms:
            out = np.kron(out, m)
        return out

    psi = k(np.eye(2)[a][:, None], np.eye(2)[b][:, None], np.array([[1], [0], [0], [1]]) / np.sqrt(2)).ravel()
    psi = (k(P0, I, I, I) + k(P1, I, X, I)) @ psi  # controlled X from a
    psi = (k(I, P0, I, I) + k(I, P1, Z, I)) @ psi  # controlled Z from b
    psi = (k(I, I, P0, I) + k(I, I, P1, X)) @ psi  # Bob: CNOT ea -> eb
    psi = k(I, I, H, I) @ psi
    return psi


@pytest.mark.parametrize("a, b", list(itertools.product([0, 1], repeat=2)))
def test_two_cobits_oracle_leaves_copies_with_both(a, b):
    psi = _coherent_superdense_oracle(a, b)
    expected = np.zeros(16)
    expected[(a << 3) | (b << 2) | (b << 1) | a] = 1
    assert np.allclose(psi, expected, atol=1e-12)


# ------------------------------------------------------------ derivations


def test_all_shipped_derivations_valid_except_the_invalid_one():
    scripts = builtin_derivations()
    assert "tp_sd_chain" in scripts and len(scripts) >= 10
    for name, script in scripts.items():
        verdict = check_derivation(script)
        assert verdict.valid == (not name.startswith("invalid")), (name, verdict.reason)


def test_invalid_script_reports_offending_step():
    v = check_derivation(builtin_derivations()["invalid_unheld_ebit"])
    assert not v.valid and v.offending_step == 0 and "ebit" in v.reason


@pytest.mark.parametrize(
    "rates",
    [{"C1": "1/3", "C2": "2/5", "E": "1/7"}, {"C1": 2, "C2": 0, "E": 0}, {"C1": "3/4", "C2": "3/4", "E": 5}],
)
def test_tradeoff_chains_valid_across_rates(rates):
    for name, script in builtin_derivations().items():
        if name.startswith(("oneway_", "entangling_")):
            assert check_derivation(script, rates).valid, name


def test_cited_premises_are_listed_as_unverified():
    v = check_derivation(builtin_derivations()["oneway_back_cbits_to_plain"])
    assert v.valid and v.unverified_premises == ("no_back_gain",)


def test_borrow_must_be_repaid():
    script = {"initial": {"cbit_fwd": 1}, "goal": {"cobit_fwd": 1}, "steps": [{"borrow": {"ebit": 1}}, {"use": "tp_sd"}]}
    v = check_derivation(script)
    assert not v.valid and "unpaid" in v.reason


def test_goal_shortfall_is_reported():
    v = check_derivation({"initial": {"qubit_fwd": 1}, "goal": {"cbit_fwd": 2}, "steps": []})
    assert not v.valid and "short" in v.reason


def test_verdict_json_round_trips():
    v = check_derivation(builtin_derivations()["tp_sd_chain"])
    assert json.loads(json.dumps(v.to_json()))["valid"] is True


@given(st.integers(0, 6), st.integers(0, 6))
def test_teleport_then_superdense_is_covered(n_tel, extra):
    script = {
        "initial": {"cbit_fwd": 2 * n_tel, "ebit": 2 * n_tel + extra},
        "goal": {"cbit_fwd": 2 * n_tel},
        "steps": [{"use": "teleport", "times": n_tel}, {"use": "superdense", "times": n_tel}],
    }
    assert check_derivation(script).valid


def test_identity_table_mirrors():
    c, p, _ = IDENTITIES["tp_sd_back"]
    assert c == ResourcePoint.of(cbit_back=1, ebit=1) and p == ResourcePoint.of(cobit_back=1)


def test_eval_rate_expressions():
    sym = {"C1": F(1, 2), "E": F(1, 3)}
    assert eval_rate("2*C1 + E - 1/6", sym) == F(7, 6)
    with pytest.raises(ValueError):
        eval_rate("__import__('os')", sym)


@pytest.mark.parametrize("name", ["two_cobits", "tp_sd", "superdense"])
def test_two_bit_identities_cover_basis_and_superposition_probes(name):
    probes = identity_report(name).probe_errors
    assert {"00", "01", "10", "11", "++", "bell"} <= set(probes)
    assert max(probes.values()) <= 1e-10
