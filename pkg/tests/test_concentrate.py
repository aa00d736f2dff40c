from __future__ import annotations

import csv
import io
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cohcomm.code import binary_entropy
from cohcomm.concentrate import (
    SchmidtSpectrum,
    YieldParams,
    binary_expected_ebits,
    concentrate,
    expected_ebits,
    log2_multinomial,
    rank_yield_bound,
    reports_csv,
    sample_ebits,
    spectrum_of,
    type_class_size,
    type_of,
    yield_bound,
)
from cohcomm.protocol import coherentify, crossing_protocol, gamma00_state
from cohcomm.qstate import Party, RegisterLayout, zero_state
from cohcomm.protocol import make_epr


def test_spectrum_examples():
    np.testing.assert_allclose(spectrum_of(make_epr(1), [Party.ALICE]).probs, [0.5, 0.5])
    lay = RegisterLayout.of(("A", "alice", 1), ("B", "bob", 1))
    np.testing.assert_allclose(spectrum_of(zero_state(lay), ["A"]).probs, [1.0])
    g = gamma00_state(coherentify(crossing_protocol()).gamma)
    np.testing.assert_allclose(spectrum_of(g, [Party.ALICE]).probs, [0.25] * 4, atol=1e-12)


def test_spectrum_validation():
    with pytest.raises(ValueError):
        SchmidtSpectrum([0.5, 0.4])
    with pytest.raises(ValueError):
        SchmidtSpectrum([1.2, -0.2])
    assert SchmidtSpectrum([0.2, 0.8, 0.0]).rank == 2


def test_yield_bound_example():
    ebits, prob = yield_bound(0, 2, 0.0, 4, 1, 400)
    assert ebits == pytest.approx(800 - 4 * (20 - math.log2(401)), abs=1e-9)
    assert ebits == pytest.approx(754.5898, abs=1e-4)
    assert prob == pytest.approx(1.0)


@pytest.mark.parametrize("k_prime", range(1, 17))
def test_small_k_bound_is_clamped(k_prime):
    _, prob = yield_bound(1, 1, 0.0, 4, 1, k_prime)
    assert 0.0 <= prob <= 1.0
    if math.sqrt(k_prime) < math.log2(k_prime + 1):
        assert prob == 0.0


def test_bound_diverges_near_eps_one():
    values = [yield_bound(1, 1, 1 - 10.0 ** -j, 4, 1, 100)[0] for j in (2, 6, 12)]
    assert values[0] > values[1] > values[2]
    assert values[2] < -3000


def test_rank_one_yields_nothing():
    s = SchmidtSpectrum([1.0])
    r = concentrate(s, 50, 0)
    assert r.ebits_out == 0
    assert r.success == (r.bound_ebits <= 0)


def test_binary_spectrum_window():
    mean = binary_expected_ebits(0.2, 64) / 64
    assert 0.60 <= mean <= 0.73
    assert mean < binary_entropy(0.2)


def test_binary_monte_carlo_matches_exact():
    s = SchmidtSpectrum([0.8, 0.2])
    e = sample_ebits(s, 64, 10 ** 4, np.random.default_rng(0))
    exact = binary_expected_ebits(0.2, 64)
    assert abs(e.mean() - exact) <= 3 * e.std(ddof=1) / math.sqrt(len(e))
    assert expected_ebits(s, 64) == pytest.approx(exact, rel=1e-12)


def test_vectorized_sampler_matches_single_reports():
    s = SchmidtSpectrum([0.4, 0.3, 0.2, 0.1])
    batch = sample_ebits(s, 64, 25, np.random.default_rng(7))
    g = np.random.default_rng(7)
    single = [concentrate(s, 64, g).ebits_out for _ in range(25)]
    np.testing.assert_allclose(batch, single, rtol=1e-12)


def test_protocol_params_bound():
    s = SchmidtSpectrum([0.25] * 4)
    r = concentrate(s, 400, 1, YieldParams(1, 1, 0.0, 4, 1))
    assert r.bound_ebits == pytest.approx(754.5898, abs=1e-4)
    assert r.rank_bound_ebits == pytest.approx(rank_yield_bound(s, 400)[0])
    assert r.success


def test_reports_csv():
    s = SchmidtSpectrum([0.5, 0.5])
    rows = [concentrate(s, 8, i) for i in range(3)]
    text = reports_csv(rows)
    assert text.startswith("k_prime,ebits_out,bound_ebits,success\r\n")
    parsed = list(csv.DictReader(io.StringIO(text)))
    assert len(parsed) == 3 and float(parsed[0]["ebits_out"]) == rows[0].ebits_out


# ----------------------------------------------------------------- properties


@given(st.lists(st.integers(0, 30), min_size=1, max_size=6), st.randoms())
def test_type_class_size_permutation_invariant(counts, rnd):
    shuffled = counts[:]
    rnd.shuffle(shuffled)
    assert type_class_size(shuffled) == pytest.approx(type_class_size(counts), abs=1e-9)


@settings(max_examples=20)
@given(st.lists(st.floats(0.01, 1.0), min_size=2, max_size=5), st.integers(0, 2 ** 31), st.randoms())
def test_ebits_invariant_under_spectrum_relabeling(weights, seed, rnd):
    w = np.array(weights) / sum(weights)
    perm = w.copy()
    rnd.shuffle(perm)
    a = concentrate(SchmidtSpectrum(w), 40, seed)
    b = concentrate(SchmidtSpectrum(perm), 40, seed)
    assert a.ebits_out == b.ebits_out


@pytest.mark.parametrize("p", [0.05, 0.2, 0.5])
def test_mean_yield_per_copy_nondecreasing(p):
    ks = [2, 4, 8, 16, 32, 64]
    per = [binary_expected_ebits(p, k) / k for k in ks]
    assert all(b >= a - 1e-12 for a, b in zip(per, per[1:]))


def test_type_of_and_multinomial():
    t = type_of([0, 1, 1, 3], 4)
    assert t == (1, 2, 0, 1)
    assert log2_multinomial(t) == pytest.approx(math.log2(12))
