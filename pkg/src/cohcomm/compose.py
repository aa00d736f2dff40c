"""Error-corrected composition of k coherent-pad runs, resource ledgers, the
error-plus-inefficiency functional f(k, n) and the catalysis schedule.

The k runs are simulated block-factored: each position is an independent
statevector, cached by its message pair, and everything after that (joint
branch weights, decoding, post-decode decoupling) is computed from per-position
branch weights and overlaps.  The joint state of the k runs is a tensor
product, so this is exact.
"""

from __future__ import annotations

import csv
import hashlib
import io
import json
import math
from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np

from .code import (
    BlockCode,
    alpha_premise,
    decode,
    index_word,
    support_bit_cost,
    syndrome_support,
)
from .concentrate import ConcentrationReport, SchmidtSpectrum, YieldParams, concentrate
from .protocol import (
    MessageProtocol,
    PPrimeOutput,
    bitstrings,
    coherentify,
    extract_gamma,
    run_p_prime,
    run_protocol,
    all_message_pairs,
)
from .qstate import Party, schmidt

TERM_NAMES = (
    "block_error",
    "concentration_error",
    "entanglement_consumed",
    "concentration_shortfall",
    "side_channel",
    "rate_shortfall",
    "capacity_gap",
)

LEDGER_FIELDS = (
    "u_uses",
    "ebits_in",
    "ebits_out",
    "cobits_fwd",
    "cobits_back",
    "p_fail",
    "decoupling_error",
    "failed",
    "k_prime",
    "syndrome_bits",
    "ebits_discarded",
    "fidelity_worst",
    "fidelity_avg",
)


class PipelineAbort(RuntimeError):
    """Decoding-failure weight exceeded the configured abort threshold."""


@dataclass(frozen=True)
class AccountingConfig:
    k: int
    n: int
    alpha: float
    r_side_channel: float = 4.0
    catalysis_c: float | None = None


@dataclass
class PipelineConfig:
    protocol: MessageProtocol
    k: int
    code_a: BlockCode | None
    code_b: BlockCode | None
    alpha: float
    r_side_channel: float = 4.0
    delta_n: float = 0.0
    abort_threshold: float = 1.0
    catalysis_c: float | None = None
    enumerate_limit: int = 2 ** 16
    fidelity_sweep_limit: int = 64

    def __post_init__(self):
        p = self.protocol
        need = math.ceil(2 * self.k * self.alpha - 1e-9)
        for code, bits, side in ((self.code_a, p.c1_bits, "code_a"), (self.code_b, p.c2_bits, "code_b")):
            if bits == 0:
                if code is not None:
                    raise ValueError(f"{side} given for a direction with no message bits")
                continue
            if code is None:
                raise ValueError(f"{side} required for {bits}-bit messages")
            if code.params.k != self.k:
                raise ValueError(f"{side} has block length {code.params.k}, pipeline k={self.k}")
            if code.params.n_symbols != 2 ** bits:
                raise ValueError(f"{side} alphabet {code.params.n_symbols} != 2^{bits}")
            if code.params.distance < need:
                raise ValueError(f"{side} distance {code.params.distance} below ceil(2 k alpha) = {need}")

    def accounting(self) -> AccountingConfig:
        return AccountingConfig(self.k, self.protocol.n_uses, self.alpha, self.r_side_channel, self.catalysis_c)

    @property
    def l(self) -> int:
        ls = [c.l for c in (self.code_a, self.code_b) if c is not None]
        return min(ls) if ls else 0


@dataclass(frozen=True)
class Ledger:
    u_uses: int
    ebits_in: float
    ebits_out: float
    cobits_fwd: int
    cobits_back: int
    p_fail: float
    decoupling_error: float
    failed: bool
    k_prime: int
    syndrome_bits: int
    ebits_discarded: float
    fidelity_worst: float
    fidelity_avg: float

    def row(self) -> dict:
        return {f: getattr(self, f) for f in LEDGER_FIELDS}


@dataclass(frozen=True)
class AccountingReport:
    f_value: float
    terms: tuple[float, ...]
    m: int | None
    catalysis_overhead: float | None
    term_names: tuple[str, ...] = TERM_NAMES

    def as_dict(self) -> dict:
        return {
            "f_value": self.f_value,
            "terms": dict(zip(self.term_names, self.terms)),
            "m": self.m,
            "catalysis_overhead": self.catalysis_overhead,
        }


# --------------------------------------------------------------- accounting


def f_of(acc: AccountingConfig, sch_u: int, c1: float, c2: float, eps_n: float, delta_n: float) -> AccountingReport:
    """Error plus fractional inefficiency of the composed protocol.

    ``c1``, ``c2`` are per-use rates.  ``eps_n`` does not enter the sum
    directly; it constrains alpha through the Chernoff premise."""
    k, n = acc.k, acc.n
    if k <= 0 or n <= 0:
        raise ValueError("k and n must be positive")
    if min(c1, c2, acc.alpha, delta_n, acc.r_side_channel) < 0 or not 0 <= eps_n < 1:
        raise ValueError("all rates must be nonnegative and eps_n in [0, 1)")
    sn = float(sch_u) ** n
    rates = c1 + c2
    terms = (
        2.0 ** (-(k - 2)),
        2.0 ** (-math.sqrt(k) * sn),
        2 * acc.alpha * rates,
        sn / (n * math.sqrt(k)),
        acc.r_side_channel / n,
        3 * acc.alpha * rates,
        2 * delta_n,
    )
    f = math.fsum(terms)
    if f > 0:
        m = max(1, math.floor(1 / math.sqrt(f)))
        c = acc.catalysis_c if acc.catalysis_c is not None else rates
        overhead = c / m
    else:
        m, overhead = None, None
    return AccountingReport(f, terms, m, overhead)


def f_limit(acc: AccountingConfig, c1: float, c2: float, delta_n: float) -> float:
    """k -> infinity value 5 alpha (C1 + C2) + 2 delta + R / n."""
    return 5 * acc.alpha * (c1 + c2) + 2 * delta_n + acc.r_side_channel / acc.n


def catalysis_objective(m: int, f: float, c: float) -> float:
    return m * f + c / m


def catalysis_m(f: float) -> int:
    return max(1, math.floor(1 / math.sqrt(f)))


def catalysis_optimum(f: float, c: float, m_max: int | None = None) -> tuple[int, float]:
    """Best m on the grid 1..m_max by direct search."""
    m_max = m_max or max(10, 10 * math.ceil(math.sqrt(max(c, 1.0) / f)))
    ms = np.arange(1, m_max + 1)
    obj = ms * f + c / ms
    i = int(np.argmin(obj))
    return int(ms[i]), float(obj[i])


@dataclass(frozen=True)
class SchedulePoint:
    n: int
    k: int
    eps_n: float
    delta_n: float
    alpha_n: float
    f_value: float


def schedule(n: int, sch_u: int, c1: float = 1.0, c2: float = 1.0, r_side_channel: float = 4.0) -> SchedulePoint:
    """eps_n = 2^-sqrt(n), delta_n = 1/sqrt(n), alpha_n from its max rule,
    k = Sch^(3n)."""
    eps = 2.0 ** (-math.sqrt(n))
    delta = 1.0 / math.sqrt(n)
    alpha = alpha_premise(round(n * c1), round(n * c2), eps)
    k = int(sch_u) ** (3 * n)
    rep = f_of(AccountingConfig(k, n, alpha, r_side_channel), sch_u, c1, c2, eps, delta)
    return SchedulePoint(n, k, eps, delta, alpha, rep.f_value)


def schedule_sweep(ns: Sequence[int], sch_u: int, **kw) -> list[SchedulePoint]:
    return [schedule(n, sch_u, **kw) for n in ns]


# ---------------------------------------------------------------- pipeline


def _hash_state(out: PPrimeOutput) -> str:
    return hashlib.sha256(np.round(out.final_state.amplitudes, 12).tobytes()).hexdigest()[:16]


def _sym_bits(sym: int, width: int) -> str:
    return format(int(sym), f"0{width}b") if width else ""


def _bits_sym(bits: str) -> int:
    return int(bits, 2) if bits else 0


class _PositionCache:
    """Coherent-pad runs keyed by the (a_j, b_j) symbol pair."""

    def __init__(self, protocol: MessageProtocol):
        self.p = protocol
        self.runs: dict[tuple[int, int], PPrimeOutput] = {}
        self.derived: dict[tuple, np.ndarray] = {}

    def get(self, a: int, b: int) -> PPrimeOutput:
        key = (int(a), int(b))
        if key not in self.runs:
            self.runs[key] = run_p_prime(self.p, _sym_bits(a, self.p.c1_bits), _sym_bits(b, self.p.c2_bits))
        return self.runs[key]

    def weights(self, a: int, b: int) -> np.ndarray:
        """W[da, db]: weight of the error pattern (da, db) at this position."""
        key = ("w", int(a), int(b))
        if key not in self.derived:
            self.derived[key] = self._weights(a, b)
        return self.derived[key]

    def _weights(self, a: int, b: int) -> np.ndarray:
        out = self.get(a, b)
        n1, n2 = 2 ** self.p.c1_bits, 2 ** self.p.c2_bits
        w = np.zeros((n1, n2))
        for (da, db), br in out.gamma.gamma_states.items():
            w[_bits_sym(da), _bits_sym(db)] = br.weight
        return w

    def overlaps(self, a: int, b: int, ref: tuple[int, int]) -> np.ndarray:
        key = ("o", int(a), int(b), int(ref[0]), int(ref[1]))
        if key not in self.derived:
            self.derived[key] = self._overlaps(a, b, ref)
        return self.derived[key]

    def _overlaps(self, a: int, b: int, ref: tuple[int, int]) -> np.ndarray:
        out, base = self.get(a, b), self.get(*ref)
        n1, n2 = 2 ** self.p.c1_bits, 2 ** self.p.c2_bits
        o = np.zeros((n1, n2), dtype=complex)
        for key, br in out.gamma.gamma_states.items():
            o[_bits_sym(key[0]), _bits_sym(key[1])] = np.vdot(base.gamma.gamma_states[key].amplitudes, br.amplitudes)
        return o


def _correctable_sum(mats: Sequence[np.ndarray], t_a: int, t_b: int) -> complex:
    """Sum over error patterns with at most t_a nonzero a-symbols and t_b
    nonzero b-symbols of the product of per-position entries."""
    dp = np.zeros((t_a + 1, t_b + 1), dtype=complex)
    dp[0, 0] = 1.0
    for m in mats:
        m = np.asarray(m)
        classes = {
            (0, 0): m[0, 0],
            (1, 0): m[1:, 0].sum(),
            (0, 1): m[0, 1:].sum(),
            (1, 1): m[1:, 1:].sum(),
        }
        new = np.zeros_like(dp)
        for (ia, ib), val in classes.items():
            if val == 0:
                continue
            new[ia:, ib:] += val * dp[: t_a + 1 - ia, : t_b + 1 - ib]
        dp = new
    return complex(dp.sum())


def _failure_sum(weights: Sequence[np.ndarray], t_a: int, t_b: int) -> float:
    """Mass of error patterns with more than t_a nonzero a-symbols or more than
    t_b nonzero b-symbols, summed directly (counts saturate at t + 1) so that a
    noiseless protocol gives exactly 0 rather than 1 minus a rounded sum."""
    ca, cb = t_a + 1, t_b + 1
    dp = np.zeros((ca + 1, cb + 1))
    dp[0, 0] = 1.0
    ia_next = np.minimum(np.arange(ca + 1) + 1, ca)
    ib_next = np.minimum(np.arange(cb + 1) + 1, cb)
    for w in weights:
        w = np.asarray(w, dtype=float)
        w = w / w.sum()
        new = w[0, 0] * dp
        np.add.at(new, (ia_next, slice(None)), w[1:, 0].sum() * dp)
        np.add.at(new, (slice(None), ib_next), w[0, 1:].sum() * dp)
        np.add.at(new, np.ix_(ia_next, ib_next), w[1:, 1:].sum() * dp)
        dp = new
    return float(dp[ca, :].sum() + dp[:ca, cb].sum())


def _decode_table(code: BlockCode) -> np.ndarray:
    """Index of the decoded codeword for every received word, -1 on failure."""
    p = code.params
    total = p.n_symbols ** p.k
    out = np.full(total, -1, dtype=np.int64)
    chunk = max(1, 2 ** 20 // max(1, code.size))
    digits = p.n_symbols ** np.arange(p.k - 1, -1, -1)
    for start in range(0, total, chunk):
        idx = np.arange(start, min(total, start + chunk))
        words = (idx[:, None] // digits[None, :]) % p.n_symbols
        dist = (words[:, None, :] != code.codewords[None, :, :]).sum(axis=2)
        ok = dist <= p.correctable
        hit = ok.any(axis=1)
        out[idx[hit]] = ok[hit].argmax(axis=1)
    return out


@dataclass
class _Side:
    code: BlockCode | None
    bits: int

    @property
    def t(self) -> int:
        return self.code.params.correctable if self.code is not None else 0

    def encode(self, msgs) -> np.ndarray:
        if self.code is None:
            if len(msgs):
                raise ValueError("no message bits in this direction")
            return None
        msgs = [int(m) for m in msgs]
        if any(not 0 <= m < self.code.params.n_symbols for m in msgs):
            raise ValueError("message symbol outside the alphabet")
        return self.code.encode(msgs)


def _block_quantities(cfg: PipelineConfig, cache: _PositionCache, cw_a, cw_b, ref_pairs) -> tuple[float, float, float]:
    """(p_fail, post-decode decoupling error, fidelity with the reference output)."""
    k = cfg.k
    sa, sb = _Side(cfg.code_a, cfg.protocol.c1_bits), _Side(cfg.code_b, cfg.protocol.c2_bits)
    pairs = [(cw_a[j] if cw_a is not None else 0, cw_b[j] if cw_b is not None else 0) for j in range(k)]
    weights = [cache.weights(*pr) for pr in pairs]
    p_ok = _correctable_sum(weights, sa.t, sb.t).real
    p_fail = min(1.0, _failure_sum(weights, sa.t, sb.t))
    over = [cache.overlaps(*pr, ref) for pr, ref in zip(pairs, ref_pairs)]
    ov = _correctable_sum(over, sa.t, sb.t)
    ref_w = [cache.weights(*ref) for ref in ref_pairs]
    p_ok_ref = _correctable_sum(ref_w, sa.t, sb.t).real
    if p_ok <= 0 or p_ok_ref <= 0:
        return p_fail, 1.0, 0.0
    f_cond = min(1.0, abs(ov) ** 2 / (p_ok * p_ok_ref))
    dec = math.sqrt(max(0.0, 1.0 - f_cond))
    fid = min(1.0, abs(ov) ** 2 / p_ok_ref)
    return p_fail, dec, fid


def _enumerated_errors(cfg: PipelineConfig, cache: _PositionCache, cw_a, cw_b) -> dict:
    """Exact outcome statistics by listing every received word pair."""
    p = cfg.protocol
    n1, n2 = 2 ** p.c1_bits, 2 ** p.c2_bits
    k = cfg.k
    joint = np.ones((1, 1))
    for j in range(k):
        a = cw_a[j] if cw_a is not None else 0
        b = cw_b[j] if cw_b is not None else 0
        w = cache.weights(a, b)
        # received symbols: a' = a ^ da, b' = b ^ db
        recv = np.zeros((n1, n2))
        for da in range(n1):
            for db in range(n2):
                recv[a ^ da, b ^ db] = w[da, db]
        joint = np.einsum("xy,uv->xuyv", joint, recv).reshape(joint.shape[0] * n1, joint.shape[1] * n2)
    ok_a = np.ones(joint.shape[0], dtype=bool)
    ok_b = np.ones(joint.shape[1], dtype=bool)
    in_a = np.ones(joint.shape[0], dtype=bool)
    in_b = np.ones(joint.shape[1], dtype=bool)
    if cfg.code_a is not None:
        table = _decode_table(cfg.code_a)
        target = int(np.flatnonzero((cfg.code_a.codewords == cw_a).all(axis=1))[0])
        ok_a = table == target
        words = np.array([index_word(i, k, n1) for i in range(n1 ** k)])
        in_a = (words != cw_a).sum(axis=1) <= cfg.code_a.params.correctable
    if cfg.code_b is not None:
        table = _decode_table(cfg.code_b)
        target = int(np.flatnonzero((cfg.code_b.codewords == cw_b).all(axis=1))[0])
        ok_b = table == target
        words = np.array([index_word(i, k, n2) for i in range(n2 ** k)])
        in_b = (words != cw_b).sum(axis=1) <= cfg.code_b.params.correctable
    return {
        "message_error": float(1.0 - ok_a.astype(float) @ joint @ ok_b.astype(float)),
        "p_fail": float(1.0 - in_a.astype(float) @ joint @ in_b.astype(float)),
    }


def _sample_errors(cache: _PositionCache, pairs, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    das, dbs = [], []
    for a, b in pairs:
        w = cache.weights(a, b)
        flat = w.reshape(-1) / w.sum()
        i = int(rng.choice(flat.size, p=flat))
        da, db = divmod(i, w.shape[1])
        das.append(da)
        dbs.append(db)
    return np.array(das), np.array(dbs)


def _gamma00_spectrum(out: PPrimeOutput) -> tuple[SchmidtSpectrum, float]:
    g = out.gamma.error_free()
    st = g.normalized()
    if st.layout.party_registers(Party.ALICE) and len(st.layout.party_registers(Party.ALICE)) < len(st.layout.names):
        sch = schmidt(st, [Party.ALICE])
        return SchmidtSpectrum(sch.coefficients ** 2), sch.entropy
    return SchmidtSpectrum([1.0]), 0.0


def _branch_entropy(out: PPrimeOutput, key) -> float:
    br = out.gamma.gamma_states[key]
    if br.weight <= 1e-14:
        return 0.0
    st = br.normalized()
    alice = st.layout.party_registers(Party.ALICE)
    if not alice or len(alice) == len(st.layout.names):
        return 0.0
    return schmidt(st, [Party.ALICE]).entropy


class PipelineContext:
    """Work shared by every trial of one configuration: the coherent-pad runs
    per symbol pair, the measured epsilon, and block quantities per message."""

    def __init__(self, cfg: PipelineConfig):
        self.cfg = cfg
        self.cache = _PositionCache(cfg.protocol)
        self._eps: float | None = None
        self._blocks: dict[tuple, tuple[float, float, float]] = {}
        self._enumerated: dict[tuple, dict] = {}
        self._fids: list[float] | None = None

    @property
    def epsilon(self) -> float:
        if self._eps is None:
            p = self.cfg.protocol
            self._eps = extract_gamma(p, {pr: run_protocol(p, *pr) for pr in all_message_pairs(p)}).epsilon_measured
        return self._eps

    def _codewords(self, ma, mb):
        p = self.cfg.protocol
        return _Side(self.cfg.code_a, p.c1_bits).encode(ma), _Side(self.cfg.code_b, p.c2_bits).encode(mb)

    def block(self, ma, mb) -> tuple[float, float, float]:
        key = (tuple(int(x) for x in ma), tuple(int(x) for x in mb))
        if key not in self._blocks:
            cw_a, cw_b = self._codewords(ma, mb)
            self._blocks[key] = _block_quantities(self.cfg, self.cache, cw_a, cw_b, [(0, 0)] * self.cfg.k)
        return self._blocks[key]

    def enumerated(self, ma, mb) -> dict:
        key = (tuple(int(x) for x in ma), tuple(int(x) for x in mb))
        if key not in self._enumerated:
            cw_a, cw_b = self._codewords(ma, mb)
            self._enumerated[key] = _enumerated_errors(self.cfg, self.cache, cw_a, cw_b)
        return self._enumerated[key]

    def fidelities(self, ma, mb) -> list[float]:
        """Fidelity over every message pair when that set is small, else for
        this pair only."""
        cfg = self.cfg
        space = [(a, b) for a in _all_msgs(cfg.code_a) for b in _all_msgs(cfg.code_b)]
        if len(space) > cfg.fidelity_sweep_limit:
            return [self.block(ma, mb)[2]]
        if self._fids is None:
            self._fids = [self.block(a, b)[2] for a, b in space]
        return self._fids


def run_pipeline(
    cfg: PipelineConfig,
    msgs_a: Sequence[int],
    msgs_b: Sequence[int],
    rng_seed: int | np.random.Generator = 0,
    context: PipelineContext | None = None,
) -> tuple[Ledger, dict]:
    """Simulate the error-corrected composition on one message pair.

    Pass a shared ``context`` to reuse per-configuration work across trials."""
    rng = rng_seed if isinstance(rng_seed, np.random.Generator) else np.random.default_rng(rng_seed)
    ctx = context if context is not None else PipelineContext(cfg)
    if ctx.cfg is not cfg:
        raise ValueError("context belongs to a different configuration")
    p = cfg.protocol
    k = cfg.k
    sa, sb = _Side(cfg.code_a, p.c1_bits), _Side(cfg.code_b, p.c2_bits)
    cw_a, cw_b = sa.encode(msgs_a), sb.encode(msgs_b)
    cache = ctx.cache
    pairs = [(int(cw_a[j]) if cw_a is not None else 0, int(cw_b[j]) if cw_b is not None else 0) for j in range(k)]
    eps = ctx.epsilon

    p_fail, dec, fid = ctx.block(msgs_a, msgs_b)
    if p_fail > cfg.abort_threshold:
        raise PipelineAbort(f"failure weight {p_fail:.3g} exceeds abort threshold {cfg.abort_threshold}")

    n1, n2 = 2 ** p.c1_bits, 2 ** p.c2_bits
    enumerated = None
    if n1 ** k * n2 ** k <= cfg.enumerate_limit and (cfg.code_a is not None or cfg.code_b is not None):
        enumerated = ctx.enumerated(msgs_a, msgs_b)

    fids = ctx.fidelities(msgs_a, msgs_b)

    das, dbs = _sample_errors(cache, pairs, rng)
    failed = int(np.count_nonzero(das)) > sa.t or int(np.count_nonzero(dbs)) > sb.t
    alpha = cfg.alpha
    bits_each = support_bit_cost(k, alpha)
    syndrome_bits = bits_each * ((p.c1_bits > 0) + (p.c2_bits > 0))
    ref_out = cache.get(0, 0)
    spectrum, h00 = _gamma00_spectrum(ref_out)

    conc: ConcentrationReport | None = None
    if failed:
        k_prime, ebits_out, discarded = 0, 0.0, 0.0
        supp_a = supp_b = None
    else:
        supp_a = syndrome_support(das, alpha) if p.c1_bits else None
        supp_b = syndrome_support(dbs, alpha) if p.c2_bits else None
        bad = set()
        for s in (supp_a, supp_b):
            if s is not None:
                bad |= s.positions
        k_prime = k - len(bad)
        discarded = 0.0
        for j in bad:
            key = (_sym_bits(das[j], p.c1_bits), _sym_bits(dbs[j], p.c2_bits))
            discarded += _branch_entropy(cache.get(*pairs[j]), key)
        if k_prime > 0:
            params = YieldParams(p.c1_bits, p.c2_bits, min(eps, 1 - 1e-12), p.gate.schmidt_number, max(1, p.n_uses))
            conc = concentrate(spectrum, k_prime, rng, params)
            ebits_out = conc.ebits_out
            discarded += max(0.0, k_prime * h00 - ebits_out)
        else:
            ebits_out = 0.0

    ledger = Ledger(
        u_uses=p.n_uses * k + math.ceil(cfg.r_side_channel * k),
        ebits_in=float(k * (p.c1_bits + p.c2_bits)),
        ebits_out=float(ebits_out),
        cobits_fwd=cfg.l * p.c1_bits,
        cobits_back=cfg.l * p.c2_bits,
        p_fail=float(p_fail),
        decoupling_error=float(dec),
        failed=bool(failed),
        k_prime=int(k_prime),
        syndrome_bits=int(syndrome_bits),
        ebits_discarded=float(discarded),
        fidelity_worst=float(min(fids)),
        fidelity_avg=float(np.mean(fids)),
    )
    transcript = {
        "codeword_a": None if cw_a is None else cw_a.tolist(),
        "codeword_b": None if cw_b is None else cw_b.tolist(),
        "positions": [
            {
                "pair": [a, b],
                "state_sha256": _hash_state(cache.get(a, b)),
                "decoupling_error": cache.get(a, b).decoupling_error,
                "error_weights": cache.weights(a, b).tolist(),
            }
            for a, b in pairs
        ],
        "p_fail": p_fail,
        "enumerated": enumerated,
        "sampled_errors": {"a": das.tolist(), "b": dbs.tolist()},
        "support_a": None if supp_a is None else sorted(supp_a.positions),
        "support_b": None if supp_b is None else sorted(supp_b.positions),
        "gamma00_entropy": h00,
        "gamma00_rank": spectrum.rank,
        "concentration": None if conc is None else asdict(conc),
        "epsilon": eps,
        "chernoff_premise": bool(cfg.alpha >= alpha_premise(0, 0, eps) - 1e-12),
        "alpha_premise": alpha_premise(p.c1_bits, p.c2_bits, eps),
    }
    return ledger, transcript


def _all_msgs(code: BlockCode | None) -> list[tuple[int, ...]]:
    if code is None:
        return [()]
    n, l = code.params.n_symbols, code.l
    return [tuple(index_word(i, l, n)) for i in range(n ** l)] if l else [()]


def p_fail_by_message(cfg: PipelineConfig) -> dict[tuple, float]:
    """p_fail for every message pair (exhaustive)."""
    ctx = PipelineContext(cfg)
    return {(ma, mb): ctx.block(ma, mb)[0] for ma in _all_msgs(cfg.code_a) for mb in _all_msgs(cfg.code_b)}


# ------------------------------------------------------- entanglement cases


@dataclass(frozen=True)
class LedgerDelta:
    e_sign: str
    e_rate: float
    ebits_in_delta: float
    ebits_out_delta: float
    inefficiency_delta: float
    rank_ceiling: float
    entropy_floor: float
    measured_rank: int
    measured_entropy: float


def entanglement_variant(cfg: PipelineConfig, e_sign: str, e_rate: float) -> LedgerDelta:
    """Adjustments for protocols that consume (E < 0) or create (E > 0)
    entanglement at ``e_rate`` ebits per gate use."""
    if e_sign not in ("consume", "produce"):
        raise ValueError("e_sign must be 'consume' or 'produce'")
    if e_rate < 0:
        raise ValueError("e_rate is a magnitude; use e_sign for the direction")
    p = cfg.protocol
    n = max(1, p.n_uses)
    sch = p.gate.schmidt_number
    rep = coherentify(p)
    eps = rep.gamma.epsilon_measured
    base_floor = p.c1_bits + p.c2_bits + (math.log2(1 - eps) if eps < 1 else -math.inf)
    e_n = e_rate * n
    if e_rate == 0:
        return LedgerDelta(e_sign, 0.0, 0.0, 0.0, 0.0, float(sch) ** n, base_floor, rep.gamma00_rank, rep.gamma00_entropy)
    if e_sign == "consume":
        if p.e_in_ebits != round(e_n):
            raise ValueError(f"protocol declares {p.e_in_ebits} consumed ebits, e_rate implies {e_n}")
        ceiling = (sch * 2.0 ** (e_rate + cfg.delta_n)) ** n
        if rep.gamma00_rank > ceiling + 1e-9:
            raise ValueError(f"measured rank {rep.gamma00_rank} exceeds ceiling {ceiling}")
        return LedgerDelta(e_sign, e_rate, cfg.k * e_n, 0.0, 0.0, ceiling, base_floor, rep.gamma00_rank, rep.gamma00_entropy)
    floor = base_floor + e_n
    if rep.gamma00_entropy < floor - 1e-6:
        raise ValueError(f"measured entropy {rep.gamma00_entropy:.6f} below declared floor {floor:.6f}")
    extra = rep.gamma00_entropy - (p.c1_bits + p.c2_bits)
    return LedgerDelta(
        e_sign,
        e_rate,
        0.0,
        cfg.k * extra,
        2 * cfg.alpha * e_rate,
        float(sch) ** n,
        floor,
        rep.gamma00_rank,
        rep.gamma00_entropy,
    )


# ------------------------------------------------------------------ output


def ledger_csv(rows: Sequence[Ledger], extra: Sequence[dict] | None = None) -> str:
    buf = io.StringIO()
    names = list(LEDGER_FIELDS)
    if extra:
        names = list(extra[0]) + names
    w = csv.DictWriter(buf, fieldnames=names, lineterminator="\r\n")
    w.writeheader()
    for i, led in enumerate(rows):
        row = led.row()
        row["failed"] = int(row["failed"])
        for key in ("ebits_out", "p_fail", "decoupling_error", "ebits_discarded", "fidelity_worst", "fidelity_avg"):
            row[key] = repr(float(row[key]))
        if extra:
            row = {**extra[i], **row}
        w.writerow(row)
    return buf.getvalue()


def transcript_json(transcript: dict) -> str:
    return json.dumps(transcript, sort_keys=True, default=_json_default)


def _json_default(obj):
    if isinstance(obj, np.generic):
        return obj.item()
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    raise TypeError(f"not JSON serializable: {type(obj).__name__}")
