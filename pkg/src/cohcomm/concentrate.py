"""Entanglement concentration of k' copies of a pure bipartite state by local
type measurement in the Schmidt basis.

Type-measurement statistics depend only on the Schmidt spectrum, so the
simulation draws the observed type from a multinomial and reports the size of
its type class: that many equal Schmidt coefficients are left behind, i.e.
log2 of the multinomial coefficient ebits.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from itertools import combinations_with_replacement
from typing import Iterable, Sequence

import numpy as np

from .qstate import TOL, QuantumState, schmidt

CSV_FIELDS = ("k_prime", "ebits_out", "bound_ebits", "success")


@dataclass(frozen=True)
class SchmidtSpectrum:
    probs: np.ndarray = field(repr=False)

    def __post_init__(self):
        p = np.asarray(self.probs, dtype=float).reshape(-1)
        if p.size == 0 or p.min() < -1e-12:
            raise ValueError("spectrum needs nonnegative entries")
        if abs(p.sum() - 1.0) > 1e-9:
            raise ValueError(f"spectrum sums to {p.sum()}, expected 1")
        p = np.sort(np.clip(p, 0.0, None))[::-1]
        p = p[p > TOL.rank ** 2]
        p = p / p.sum()
        p.flags.writeable = False
        object.__setattr__(self, "probs", p)

    @property
    def rank(self) -> int:
        return int(self.probs.size)

    @property
    def entropy(self) -> float:
        p = self.probs
        return float(max(0.0, -np.sum(p * np.log2(p))))


def spectrum_of(state: QuantumState, cut) -> SchmidtSpectrum:
    return SchmidtSpectrum(schmidt(state, cut).coefficients ** 2)


def yield_bound(c1: float, c2: float, eps: float, sch_u: int, n: int, k_prime: int) -> tuple[float, float]:
    """Guaranteed yield and success probability of concentrating k' copies.

    bound_ebits = k'(c1 + c2 + log2(1 - eps)) - Sch^n (sqrt k' - log2(k'+1))
    bound_prob  = 1 - 2^(-Sch^n (sqrt k' - log2(k'+1))), clamped to [0, 1]."""
    if sch_u < 1 or n < 1:
        raise ValueError("need sch_u >= 1 and n >= 1")
    if eps >= 1:
        raise ValueError("eps must be below 1")
    if k_prime < 0:
        raise ValueError("k_prime must be nonnegative")
    slack = float(sch_u) ** n * (math.sqrt(k_prime) - math.log2(k_prime + 1))
    ebits = k_prime * (c1 + c2 + math.log2(1 - eps)) - slack
    prob = min(1.0, max(0.0, 1.0 - 2.0 ** (-slack)))
    return ebits, prob


def rank_yield_bound(spectrum: SchmidtSpectrum, k_prime: int) -> tuple[float, float]:
    """Same bound with the measured rank and entropy in place of Sch^n and
    c1 + c2 + log2(1 - eps)."""
    slack = spectrum.rank * (math.sqrt(k_prime) - math.log2(k_prime + 1))
    return k_prime * spectrum.entropy - slack, min(1.0, max(0.0, 1.0 - 2.0 ** (-slack)))


@dataclass(frozen=True)
class YieldParams:
    """Inputs of :func:`yield_bound` besides k'."""

    c1: float
    c2: float
    eps: float
    sch_u: int
    n: int = 1


def log2_multinomial(counts: Sequence[int]) -> float:
    counts = [int(c) for c in counts]
    total = sum(counts)
    return (math.lgamma(total + 1) - sum(math.lgamma(c + 1) for c in counts)) / math.log(2)


@dataclass(frozen=True)
class ConcentrationReport:
    k_prime: int
    type_observed: tuple[int, ...]
    ebits_out: float
    success: bool
    bound_ebits: float
    bound_prob: float
    rank_bound_ebits: float
    rank_bound_prob: float

    def csv_row(self) -> dict:
        return {
            "k_prime": self.k_prime,
            "ebits_out": repr(self.ebits_out),
            "bound_ebits": repr(self.bound_ebits),
            "success": int(self.success),
        }


def concentrate(
    spectrum: SchmidtSpectrum,
    k_prime: int,
    rng_seed: int | np.random.Generator = 0,
    params: YieldParams | None = None,
) -> ConcentrationReport:
    """Simulate one type measurement on k' copies.

    ``params`` supplies the protocol-level bound; without it the bound uses the
    spectrum's own rank and entropy."""
    if k_prime < 1:
        raise ValueError("k_prime must be at least 1")
    rng = rng_seed if isinstance(rng_seed, np.random.Generator) else np.random.default_rng(rng_seed)
    counts = rng.multinomial(k_prime, spectrum.probs)
    ebits = 0.0 if spectrum.rank == 1 else max(0.0, log2_multinomial(counts))
    rb_e, rb_p = rank_yield_bound(spectrum, k_prime)
    if params is None:
        b_e, b_p = rb_e, rb_p
    else:
        b_e, b_p = yield_bound(params.c1, params.c2, params.eps, params.sch_u, params.n, k_prime)
    return ConcentrationReport(k_prime, tuple(int(c) for c in counts), ebits, ebits >= b_e, b_e, b_p, rb_e, rb_p)


def sample_ebits(spectrum: SchmidtSpectrum, k_prime: int, trials: int, rng: np.random.Generator) -> np.ndarray:
    """Vectorized ebits_out for ``trials`` independent type measurements."""
    if spectrum.rank == 1:
        return np.zeros(trials)
    counts = rng.multinomial(k_prime, spectrum.probs, size=trials)
    log_fact = np.array([math.lgamma(i + 1) for i in range(k_prime + 1)])
    return np.maximum(0.0, (log_fact[k_prime] - log_fact[counts].sum(axis=1)) / math.log(2))


def _compositions(total: int, parts: int) -> Iterable[tuple[int, ...]]:
    for bars in combinations_with_replacement(range(total + 1), parts - 1):
        prev = 0
        out = []
        for b in bars:
            out.append(b - prev)
            prev = b
        out.append(total - prev)
        yield tuple(out)


def expected_ebits(spectrum: SchmidtSpectrum, k_prime: int, max_terms: int = 500_000) -> float:
    """Exact E[log2 C(k'; T)] by summing over all types."""
    r = spectrum.rank
    if r == 1:
        return 0.0
    if math.comb(k_prime + r - 1, r - 1) > max_terms:
        raise ValueError("too many types to enumerate")
    logp = np.log(spectrum.probs)
    lg_total = math.lgamma(k_prime + 1)
    acc = 0.0
    for t in _compositions(k_prime, r):
        log_coef = lg_total - sum(math.lgamma(c + 1) for c in t)
        log_prob = log_coef + sum(c * lp for c, lp in zip(t, logp))
        acc += math.exp(log_prob) * log_coef
    return acc / math.log(2)


def binary_expected_ebits(p: float, k_prime: int) -> float:
    """sum_j Binom(k', j) p^j (1-p)^(k'-j) log2 C(k', j)."""
    acc = 0.0
    for j in range(k_prime + 1):
        lc = math.lgamma(k_prime + 1) - math.lgamma(j + 1) - math.lgamma(k_prime - j + 1)
        acc += math.exp(lc + j * math.log(p) + (k_prime - j) * math.log1p(-p)) * lc
    return acc / math.log(2)


def type_of(symbols: Sequence[int], alphabet: int) -> tuple[int, ...]:
    counts = np.bincount(np.asarray(symbols, dtype=np.int64), minlength=alphabet)
    return tuple(int(c) for c in counts)


def type_class_size(counts: Sequence[int]) -> float:
    """log2 of the number of sequences with the given type."""
    return log2_multinomial(counts)


def reports_csv(reports: Iterable[ConcentrationReport]) -> str:
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=CSV_FIELDS, lineterminator="\r\n")
    w.writeheader()
    for r in reports:
        w.writerow(r.csv_row())
    return buf.getvalue()
