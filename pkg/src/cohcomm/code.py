"""Classical block codes over an N-symbol alphabet with a guaranteed minimum
distance, bounded-distance decoding and syndrome supports.

Symbols are integers in [0, N).  When N is a power of two a symbol is a
log2(N)-bit string and symbol differences are bitwise XOR, which is what the
coherent decoder needs; otherwise differences are taken mod N.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from itertools import combinations, product
from typing import Sequence

import numpy as np

from .qstate import QuantumState, Register, RegisterLayout, apply_basis_map, add_registers

ENUMERATION_CAP = 2 ** 22


def binary_entropy(p: float) -> float:
    if not 0.0 <= p <= 1.0:
        raise ValueError(f"binary entropy needs p in [0, 1], got {p}")
    if p in (0.0, 1.0):
        return 0.0
    return float(-p * math.log2(p) - (1 - p) * math.log2(1 - p))


def kl_divergence(a: float, e: float) -> float:
    """Binary relative entropy D(a || e) in bits."""
    if not (0.0 < a < 1.0 and 0.0 < e < 1.0):
        raise ValueError(f"kl_divergence needs both arguments strictly inside (0, 1), got {a}, {e}")
    return float(a * math.log2(a / e) + (1 - a) * math.log2((1 - a) / (1 - e)))


def chernoff_bound(k: int, alpha: float, eps: float) -> float:
    """2^(-k D(alpha || eps)), the tail bound on >= k*alpha errors at rate eps < alpha."""
    return 2.0 ** (-k * kl_divergence(alpha, eps))


def relaxed_chernoff_bound(k: int, alpha: float, eps: float) -> float:
    """2^(k + k alpha log2 eps); at most 2^-k once alpha >= -2/log2 eps."""
    return 2.0 ** (k + k * alpha * math.log2(eps))


def binomial_tail(k: int, p: float, j: int) -> float:
    """Exact Pr[Binomial(k, p) >= j]."""
    j = max(j, 0)
    return float(sum(math.comb(k, i) * p ** i * (1 - p) ** (k - i) for i in range(j, k + 1)))


def ball_volume(k: int, radius: int, n_symbols: int) -> int:
    return sum(math.comb(k, j) * (n_symbols - 1) ** j for j in range(0, min(radius, k) + 1))


def is_power_of_two(n: int) -> bool:
    return n >= 2 and n & (n - 1) == 0


@dataclass(frozen=True)
class CodeParams:
    k: int
    n_symbols: int
    alpha: float

    def __post_init__(self):
        if self.k < 1:
            raise ValueError("block length must be positive")
        if self.n_symbols < 2:
            raise ValueError("alphabet needs at least two symbols")
        if not 0.0 < self.alpha <= 0.5:
            raise ValueError(f"alpha must lie in (0, 1/2], got {self.alpha}")

    @property
    def distance(self) -> int:
        return max(1, math.ceil(2 * self.k * self.alpha - 1e-9))

    @property
    def correctable(self) -> int:
        return (self.distance - 1) // 2

    @property
    def symbol_bits(self) -> int:
        if not is_power_of_two(self.n_symbols):
            raise ValueError(f"alphabet size {self.n_symbols} is not a power of two")
        return self.n_symbols.bit_length() - 1

    def rate_bound(self) -> float:
        """k[1 - 2a - H2(2a)/log2 N]: the guaranteed number of message symbols
        (may be negative, i.e. vacuous, at small k)."""
        two_a = min(2 * self.alpha, 1.0)
        return self.k * (1 - two_a - binary_entropy(two_a) / math.log2(self.n_symbols))

    def gv_guarantee(self) -> int:
        return math.ceil(self.n_symbols ** self.k / ball_volume(self.k, self.distance - 1, self.n_symbols))


def alpha_premise(c1: int, c2: int, eps: float) -> float:
    """Smallest alpha allowed by alpha >= max(1/c1, 1/c2, -2/log2 eps)."""
    terms = [1.0 / c for c in (c1, c2) if c > 0]
    if 0 < eps < 1:
        terms.append(-2.0 / math.log2(eps))
    return max(terms) if terms else 0.0


def symbol_diff(x, y, n_symbols: int) -> np.ndarray:
    x = np.asarray(x, dtype=np.int64)
    y = np.asarray(y, dtype=np.int64)
    if is_power_of_two(n_symbols):
        return x ^ y
    return (x - y) % n_symbols


def symbol_add(x, e, n_symbols: int) -> np.ndarray:
    x = np.asarray(x, dtype=np.int64)
    e = np.asarray(e, dtype=np.int64)
    if is_power_of_two(n_symbols):
        return x ^ e
    return (x + e) % n_symbols


def hamming(x, y) -> int:
    return int(np.count_nonzero(np.asarray(x) != np.asarray(y)))


def word_index(word: Sequence[int], n_symbols: int) -> int:
    idx = 0
    for s in word:
        idx = idx * n_symbols + int(s)
    return idx


def index_word(idx: int, k: int, n_symbols: int) -> np.ndarray:
    out = np.zeros(k, dtype=np.int64)
    for j in range(k - 1, -1, -1):
        idx, out[j] = divmod(idx, n_symbols)
    return out


@dataclass(frozen=True)
class BlockCode:
    params: CodeParams
    codewords: np.ndarray = field(repr=False)
    seed: int | None = None

    def __post_init__(self):
        cw = np.asarray(self.codewords, dtype=np.int64)
        if cw.ndim != 2 or cw.shape[1] != self.params.k or len(cw) == 0:
            raise ValueError("codewords must be a nonempty (M, k) array")
        if cw.min() < 0 or cw.max() >= self.params.n_symbols:
            raise ValueError("codeword symbols out of range")
        cw = cw.copy()
        cw.flags.writeable = False
        object.__setattr__(self, "codewords", cw)

    @property
    def size(self) -> int:
        return len(self.codewords)

    @property
    def l(self) -> int:
        """Message length: the largest l with N^l <= number of codewords."""
        n, m = self.params.n_symbols, self.size
        l = 0
        while n ** (l + 1) <= m:
            l += 1
        return l

    def encode(self, message: Sequence[int]) -> np.ndarray:
        message = list(message)
        if len(message) != self.l:
            raise ValueError(f"message needs {self.l} symbols, got {len(message)}")
        return self.codewords[word_index(message, self.params.n_symbols)].copy()

    def min_distance(self) -> int:
        cw = self.codewords
        if len(cw) < 2:
            return self.params.k + 1
        best = self.params.k
        for i in range(len(cw) - 1):
            d = np.count_nonzero(cw[i + 1 :] != cw[i], axis=1).min()
            best = min(best, int(d))
        return best

    def to_json(self) -> dict:
        p = self.params
        return {
            "params": {"k": p.k, "n_symbols": p.n_symbols, "alpha": p.alpha},
            "seed": self.seed,
            "codewords": self.codewords.tolist(),
        }

    @classmethod
    def from_json(cls, data: dict) -> "BlockCode":
        p = data["params"]
        return cls(CodeParams(int(p["k"]), int(p["n_symbols"]), float(p["alpha"])), np.array(data["codewords"]), data.get("seed"))


def _error_patterns(k: int, radius: int, n_symbols: int) -> np.ndarray:
    rows = []
    for w in range(0, min(radius, k) + 1):
        for pos in combinations(range(k), w):
            for vals in product(range(1, n_symbols), repeat=w):
                e = np.zeros(k, dtype=np.int64)
                e[list(pos)] = vals
                rows.append(e)
    return np.array(rows, dtype=np.int64).reshape(-1, k)


def build_code(params: CodeParams, seed: int = 0) -> BlockCode:
    """Greedy Gilbert-Varshamov code: scan all words in a seeded random order
    and keep each one at distance >= d from everything kept so far."""
    k, n, d = params.k, params.n_symbols, params.distance
    if d > k:
        raise ValueError(f"distance {d} exceeds block length {k}; no two codewords fit")
    total = n ** k
    if total > ENUMERATION_CAP:
        raise ValueError(f"N^k = {total} words exceeds the enumeration cap {ENUMERATION_CAP}")
    patterns = _error_patterns(k, d - 1, n)
    weights = n ** np.arange(k - 1, -1, -1, dtype=np.int64)
    blocked = np.zeros(total, dtype=bool)
    order = np.random.default_rng(seed).permutation(total)
    kept = []
    for idx in order:
        if blocked[idx]:
            continue
        word = index_word(int(idx), k, n)
        kept.append(word)
        blocked[symbol_add(word[None, :], patterns, n) @ weights] = True
    return BlockCode(params, np.array(kept), seed)


def repetition_code(k: int, n_symbols: int = 2) -> BlockCode:
    """The N constant words; distance k."""
    words = np.repeat(np.arange(n_symbols)[:, None], k, axis=1)
    return BlockCode(CodeParams(k, n_symbols, 0.5), words, None)


@dataclass(frozen=True)
class Decoded:
    codeword: np.ndarray
    error: np.ndarray
    index: int


def decode(code: BlockCode, received: Sequence[int]) -> Decoded | None:
    """Bounded-distance decoding: the codeword within distance t, if any."""
    r = np.asarray(received, dtype=np.int64)
    if r.shape != (code.params.k,):
        raise ValueError(f"received word must have {code.params.k} symbols")
    dist = np.count_nonzero(code.codewords != r, axis=1)
    hits = np.flatnonzero(dist <= code.params.correctable)
    if len(hits) == 0:
        return None
    i = int(hits[0])
    cw = code.codewords[i]
    return Decoded(cw.copy(), symbol_diff(r, cw, code.params.n_symbols), i)


@dataclass(frozen=True)
class SyndromeSupport:
    positions: frozenset[int]
    bit_cost: int
    oversized: bool


def support_bit_cost(k: int, alpha: float) -> int:
    """ceil(k H2(alpha) + log2(k alpha)): bits to name a support of size <= k alpha."""
    return math.ceil(k * binary_entropy(alpha) + math.log2(k * alpha) - 1e-12)


def syndrome_support(error: Sequence[int], alpha: float) -> SyndromeSupport:
    e = np.asarray(error)
    k = len(e)
    s = frozenset(int(j) for j in np.flatnonzero(e))
    return SyndromeSupport(s, support_bit_cost(k, alpha), len(s) > k * alpha + 1e-9)


# ---------------------------------------------------------- coherent decoding


def _decode_permutation(code: BlockCode) -> np.ndarray:
    """Basis permutation on (word, error, fail) realising
    |v,0,0> -> |c, v-c, 0> inside a correctable ball and |v,0,0> -> |v,0,1> outside."""
    p = code.params
    bits = p.symbol_bits
    wbits = p.k * bits
    dim_w = 2 ** wbits
    n_in = dim_w * dim_w * 2
    images = np.full(n_in, -1, dtype=np.int64)
    used = np.zeros(n_in, dtype=bool)

    def pack(word_idx, err_idx, fail):
        return (word_idx * dim_w + err_idx) * 2 + fail

    for v in range(dim_w):
        res = decode(code, index_word(v, p.k, p.n_symbols))
        if res is None:
            out = pack(v, 0, 1)
        else:
            out = pack(word_index(res.codeword, p.n_symbols), word_index(res.error, p.n_symbols), 0)
        src = pack(v, 0, 0)
        images[src] = out
        used[out] = True
    free = iter(np.flatnonzero(~used))
    for src in np.flatnonzero(images < 0):
        images[src] = next(free)
    return images


def decoding_isometry(code: BlockCode) -> np.ndarray:
    """Full unitary (permutation matrix) behind :func:`coherent_decode`; its
    restriction to zero ancillas is the decoding isometry."""
    images = _decode_permutation(code)
    m = np.zeros((len(images), len(images)))
    m[images, np.arange(len(images))] = 1.0
    return m


def coherent_decode(state: QuantumState, code: BlockCode, register: str) -> QuantumState:
    """Append ``<register>_err`` and ``<register>_fail`` and decode in place."""
    p = code.params
    width = p.k * p.symbol_bits
    reg = state.layout[register]
    if reg.width != width:
        raise ValueError(f"register {register!r} has width {reg.width}, code needs {width}")
    state = add_registers(state, Register(f"{register}_err", reg.party, width), Register(f"{register}_fail", reg.party, 1))
    return apply_basis_map(state, [register, f"{register}_err", f"{register}_fail"], _decode_permutation(code))


def chernoff_tail_mc(k: int, eps: float, alpha: float, trials: int, rng: np.random.Generator) -> tuple[float, float, float]:
    """Monte-Carlo estimate of Pr[#errors >= k alpha] at per-symbol rate eps.

    Returns (estimate, Chernoff bound, binomial standard error of the estimate)."""
    counts = rng.binomial(k, eps, size=trials)
    est = float(np.mean(counts >= math.ceil(k * alpha - 1e-9)))
    sigma = math.sqrt(max(est * (1 - est), 1.0 / trials) / trials)
    return est, chernoff_bound(k, alpha, eps), sigma
