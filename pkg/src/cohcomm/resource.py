"""Resource calculus: rate vectors, the affine maps between achievable
regions, exact circuit-level checks of the basic identities (teleportation,
superdense coding and their coherent versions) and a checker for derivation
scripts that chain identities and protocol capabilities.

All rate arithmetic uses :class:`fractions.Fraction`, so maps round-trip and
compose exactly.
"""

from __future__ import annotations

import ast
import json
import operator
from collections import deque
from dataclasses import dataclass, field, fields
from fractions import Fraction
from importlib import resources
from typing import Callable, Iterable, Mapping, Sequence

import numpy as np

from . import gates
from .qstate import (
    Party,
    QuantumState,
    RegisterLayout,
    apply_local,
    basis_state,
    partial_trace,
    permute_registers,
    project,
    trace_distance,
)

Number = int | float | Fraction | str


def _frac(x: Number) -> Fraction:
    if isinstance(x, Fraction):
        return x
    if isinstance(x, float):
        return Fraction(x).limit_denominator(10 ** 12)
    return Fraction(x)


# ----------------------------------------------------------- rate vectors


@dataclass(frozen=True)
class ResourcePoint:
    """Rates of each resource; negative entries are consumed.  ``gate``
    counts uses of the bipartite unitary."""

    cbit_fwd: Fraction = Fraction(0)
    cbit_back: Fraction = Fraction(0)
    cobit_fwd: Fraction = Fraction(0)
    cobit_back: Fraction = Fraction(0)
    qubit_fwd: Fraction = Fraction(0)
    qubit_back: Fraction = Fraction(0)
    ebit: Fraction = Fraction(0)
    gate: Fraction = Fraction(0)

    def __post_init__(self):
        for f in fields(self):
            object.__setattr__(self, f.name, _frac(getattr(self, f.name)))

    @classmethod
    def of(cls, mapping: Mapping[str, Number] | None = None, **kw) -> "ResourcePoint":
        data = dict(mapping or {})
        data.update(kw)
        unknown = set(data) - {f.name for f in fields(cls)}
        if unknown:
            raise KeyError(f"unknown resources {sorted(unknown)}")
        return cls(**{k: _frac(v) for k, v in data.items()})

    def items(self):
        return [(f.name, getattr(self, f.name)) for f in fields(self)]

    def __add__(self, other: "ResourcePoint") -> "ResourcePoint":
        return ResourcePoint(**{k: v + getattr(other, k) for k, v in self.items()})

    def __sub__(self, other: "ResourcePoint") -> "ResourcePoint":
        return ResourcePoint(**{k: v - getattr(other, k) for k, v in self.items()})

    def __neg__(self) -> "ResourcePoint":
        return ResourcePoint(**{k: -v for k, v in self.items()})

    def scale(self, r: Number) -> "ResourcePoint":
        r = _frac(r)
        return ResourcePoint(**{k: r * v for k, v in self.items()})

    def positive(self) -> "ResourcePoint":
        return ResourcePoint(**{k: max(v, Fraction(0)) for k, v in self.items()})

    def negative_entries(self) -> dict[str, Fraction]:
        return {k: v for k, v in self.items() if v < 0}

    def covers(self, other: "ResourcePoint") -> bool:
        return all(v >= getattr(other, k) for k, v in self.items())

    def to_json(self) -> dict:
        return {k: str(v) for k, v in self.items() if v != 0}


# ------------------------------------------------------------ region maps

Triple = tuple[Fraction, Fraction, Fraction]

REGION_ALIASES = {
    "cce": "CCE",
    "cocoe": "CoCoE",
    "c_oc_oe": "CoCoE",
    "qqe": "QQE",
    "qcoe": "QCoE",
    "qc_oe": "QCoE",
    "coqe": "CoQE",
    "c_oqe": "CoQE",
    "qce": "QCE",
    "cqe": "CQE",
    "rre": "RRE",
    "coe": "CoE",
    "c_oe": "CoE",
    "qe": "QE",
}

TRIPLE_REGIONS = ("CCE", "CoCoE", "QQE", "QCoE", "CoQE", "QCE", "CQE", "RRE")
PAIR_REGIONS = ("CoE", "QE")


class RegionError(ValueError):
    """Regions that no chain of maps connects."""


def region_name(label: str) -> str:
    key = label.replace("$", "").replace("!", "").replace("{", "").replace("}", "").replace("\\rm", "").lower()
    if key not in REGION_ALIASES:
        raise RegionError(f"unknown region {label!r}")
    return REGION_ALIASES[key]


def _t(p) -> Triple:
    if len(p) != 3:
        raise ValueError(f"expected a rate triple, got {p!r}")
    return tuple(_frac(x) for x in p)  # type: ignore[return-value]


def _zero_min(x: Fraction) -> Fraction:
    return min(x, Fraction(0))


@dataclass(frozen=True)
class RegionMap:
    name: str
    domain_region: str
    codomain_region: str
    transform: Callable[[Triple], Triple]
    inverse: Callable[[Triple], Triple]

    def __call__(self, p) -> Triple:
        return self.transform(_t(p))


def _edges() -> list[RegionMap]:
    half = Fraction(1, 2)
    return [
        RegionMap(
            "thm12",
            "CCE",
            "CoCoE",
            lambda p: (p[0], p[1], p[2] - _zero_min(p[0]) - _zero_min(p[1])),
            lambda p: (p[0], p[1], p[2] + _zero_min(p[0]) + _zero_min(p[1])),
        ),
        RegionMap("qqe-coqe", "QQE", "CoQE", lambda p: (2 * p[0], p[1], p[2] - p[0]), lambda p: (half * p[0], p[1], p[2] + half * p[0])),
        RegionMap("qqe-qcoe", "QQE", "QCoE", lambda p: (p[0], 2 * p[1], p[2] - p[1]), lambda p: (p[0], half * p[1], p[2] + half * p[1])),
        RegionMap("coqe-cocoe", "CoQE", "CoCoE", lambda p: (p[0], 2 * p[1], p[2] - p[1]), lambda p: (p[0], half * p[1], p[2] + half * p[1])),
        RegionMap("qcoe-cocoe", "QCoE", "CoCoE", lambda p: (2 * p[0], p[1], p[2] - p[0]), lambda p: (half * p[0], p[1], p[2] + half * p[0])),
        RegionMap("qce-qcoe", "QCE", "QCoE", lambda p: (p[0], p[1], p[2] - _zero_min(p[1])), lambda p: (p[0], p[1], p[2] + _zero_min(p[1]))),
        RegionMap("cqe-coqe", "CQE", "CoQE", lambda p: (p[0], p[1], p[2] - _zero_min(p[0])), lambda p: (p[0], p[1], p[2] + _zero_min(p[0]))),
        RegionMap("rre-cce", "RRE", "CCE", lambda p: p, lambda p: p),
    ]


EDGES = _edges()


def map_cce_cocoe(p, direction: str = "forward") -> Triple:
    """(C1, C2, E) in CCE <-> (C1, C2, E - min(C1,0) - min(C2,0)) in CoCoE."""
    edge = EDGES[0]
    if direction == "forward":
        return edge.transform(_t(p))
    if direction == "inverse":
        return edge.inverse(_t(p))
    raise ValueError("direction must be 'forward' or 'inverse'")


def region_path(from_region: str, to_region: str) -> list[tuple[RegionMap, bool]]:
    """Shortest chain of maps (edge, forward?) joining two triple regions."""
    a, b = region_name(from_region), region_name(to_region)
    if a in PAIR_REGIONS or b in PAIR_REGIONS:
        if a == b:
            return []
        raise RegionError(f"{a} and {b} are not connected; use map_one_way for CoE/QE")
    prev: dict[str, tuple[str, RegionMap, bool] | None] = {a: None}
    queue = deque([a])
    while queue:
        cur = queue.popleft()
        for e in EDGES:
            for src, dst, fwd in ((e.domain_region, e.codomain_region, True), (e.codomain_region, e.domain_region, False)):
                if src == cur and dst not in prev:
                    prev[dst] = (cur, e, fwd)
                    queue.append(dst)
    if b not in prev:
        raise RegionError(f"{a} and {b} are not connected")
    path = []
    cur = b
    while prev[cur] is not None:
        src, e, fwd = prev[cur]
        path.append((e, fwd))
        cur = src
    return path[::-1]


def map_along(point, hops: Sequence[str]) -> Triple:
    """Apply maps along an explicit region sequence, e.g. QQE -> CoQE -> CoCoE."""
    p = _t(point)
    names = [region_name(h) for h in hops]
    for a, b in zip(names, names[1:]):
        for e in EDGES:
            if (e.domain_region, e.codomain_region) == (a, b):
                p = e.transform(p)
                break
            if (e.domain_region, e.codomain_region) == (b, a):
                p = e.inverse(p)
                break
        else:
            raise RegionError(f"no direct map between {a} and {b}")
    return p


def map_diamond(point, from_region: str, to_region: str) -> Triple:
    p = _t(point)
    for e, fwd in region_path(from_region, to_region):
        p = e.transform(p) if fwd else e.inverse(p)
    return p


def map_one_way(point, direction: str = "forward") -> tuple[Fraction, Fraction]:
    """(Q, E) in QE <-> (2Q, E - Q) in CoE."""
    if len(point) != 2:
        raise ValueError("one-way points are (rate, E) pairs")
    x, e = (_frac(v) for v in point)
    if direction == "forward":
        return 2 * x, e - x
    if direction == "inverse":
        return x / 2, e + x / 2
    raise ValueError("direction must be 'forward' or 'inverse'")


def named_map(name: str) -> Callable:
    """Resolve a CLI map name: ``thm12``, ``thm12-inverse``, ``one-way``,
    ``one-way-inverse`` or ``<region>-to-<region>``."""
    key = name.lower()
    if key == "thm12":
        return lambda p: map_cce_cocoe(p, "forward")
    if key == "thm12-inverse":
        return lambda p: map_cce_cocoe(p, "inverse")
    if key == "one-way":
        return lambda p: map_one_way(p, "forward")
    if key == "one-way-inverse":
        return lambda p: map_one_way(p, "inverse")
    if "-to-" in key:
        a, b = key.split("-to-", 1)
        region_path(a, b)  # raises early when unconnected
        return lambda p: map_diamond(p, a, b)
    raise RegionError(f"unknown map {name!r}")


# ------------------------------------------------------ identity circuits


@dataclass(frozen=True)
class IdentityReport:
    name: str
    epsilon: float
    consumes: ResourcePoint
    produces: ResourcePoint
    ebits_per_cobit_on_plus: float | None = None
    ebits_left: float | None = None
    probe_errors: dict[str, float] = field(default_factory=dict)


def _h_all(state: QuantumState, *regs: str) -> QuantumState:
    for r in regs:
        state = apply_local(state, gates.H, [r])
    return state


def _epr(state: QuantumState, a: str, b: str) -> QuantumState:
    return apply_local(apply_local(state, gates.H, [a]), gates.CNOT, [a, b])


def _send_cbit(state: QuantumState, src: str, dst: str, env: str) -> QuantumState:
    """|x>_src |0>_dst |0>_env -> |0>_src |x>_dst |x>_env."""
    state = apply_local(state, gates.CNOT, [src, env])
    return apply_local(state, gates.SWAP, [src, dst])


def _send_qubit(state: QuantumState, src: str, dst: str) -> QuantumState:
    return apply_local(state, gates.SWAP, [src, dst])


def _send_cobit(state: QuantumState, src: str, dst: str) -> QuantumState:
    """|x>_src |0>_dst -> |x>_src |x>_dst."""
    return apply_local(state, gates.CNOT, [src, dst])


SINGLE_PROBES = {
    "0": np.array([1, 0], dtype=complex),
    "1": np.array([0, 1], dtype=complex),
    "+": np.array([1, 1], dtype=complex) / np.sqrt(2),
    "i": np.array([1, 1j], dtype=complex) / np.sqrt(2),
}


def _probes(nbits: int, labels: str) -> list[tuple[str, np.ndarray]]:
    """Probe vectors on reference (nbits) x inputs (nbits)."""
    import itertools

    d = 2 ** nbits
    ref0 = np.zeros(d, dtype=complex)
    ref0[0] = 1
    out = []
    for combo in itertools.product(labels, repeat=nbits):
        v = np.ones(1, dtype=complex)
        for c in combo:
            v = np.kron(v, SINGLE_PROBES[c])
        out.append(("".join(combo), np.kron(ref0, v)))
    out.append(("bell", np.eye(d, dtype=complex).reshape(-1) / np.sqrt(d)))
    return out


def _run_identity(
    layout: RegisterLayout,
    inputs: Sequence[str],
    prepare: Callable[[QuantumState], QuantumState],
    circuit: Callable[[QuantumState], QuantumState],
    copies: Sequence[Sequence[str]],
    labels: str,
) -> tuple[float, dict[str, QuantumState], dict[str, float]]:
    """Worst trace distance (plus the distance per probe) to the map |x>_inputs -> |x>_c1 |x>_c2 ... where
    each entry of ``copies`` lists registers (one per input bit) that must
    hold a copy of the input; every other register is junk."""
    nbits = len(inputs)
    full = RegisterLayout.of(("R", Party.REFERENCE, nbits)).extend(*layout.registers)
    blank = prepare(basis_state(full, {r.name: "0" * r.width for r in full.registers}))
    head = ["R"] + list(inputs)
    rest = [n for n in full.names if n not in head]
    rest_vec = project(permute_registers(blank, head + rest), {n: "0" * full[n].width for n in head}).amplitudes
    keep = ["R"] + [r for group in copies for r in group]
    keep_layout = full.select(keep)
    errors: dict[str, float] = {}
    finals = {}
    d = 2 ** nbits
    for label, probe in _probes(nbits, labels):
        st = permute_registers(QuantumState(full.select(head + rest), np.kron(probe, rest_vec)), full.names)
        st = circuit(st)
        finals[label] = st
        rho = partial_trace(st, keep)
        t = probe.reshape(d, d)
        ideal = np.zeros(2 ** keep_layout.width, dtype=complex)
        for r in range(d):
            for x in range(d):
                if t[r, x] == 0:
                    continue
                idx = r
                for _ in copies:
                    idx = (idx << nbits) | x
                ideal[idx] += t[r, x]
        errors[label] = trace_distance(rho, QuantumState(keep_layout, ideal).density())
    return max(errors.values()), finals, errors


def _entropy(state: QuantumState, regs: Sequence[str]) -> float:
    ev = np.clip(partial_trace(state, regs).eigenvalues(), 0, None)
    ev = ev[ev > 1e-15]
    return float(-np.sum(ev * np.log2(ev)))


def _teleport() -> IdentityReport:
    lay = RegisterLayout.of(
        ("A", Party.ALICE, 1), ("Ae", Party.ALICE, 1), ("Be", Party.BOB, 1),
        ("M1", Party.BOB, 1), ("M2", Party.BOB, 1), ("E1", Party.ENVIRONMENT, 1), ("E2", Party.ENVIRONMENT, 1),
    )

    def circuit(s):
        s = apply_local(s, gates.CNOT, ["A", "Ae"])
        s = apply_local(s, gates.H, ["A"])
        s = _send_cbit(s, "A", "M1", "E1")
        s = _send_cbit(s, "Ae", "M2", "E2")
        s = apply_local(s, gates.CNOT, ["M2", "Be"])
        return apply_local(s, gates.CZ, ["M1", "Be"])

    eps, _, errs = _run_identity(lay, ["A"], lambda s: _epr(s, "Ae", "Be"), circuit, [["Be"]], "01+i")
    return IdentityReport("teleport", eps, ResourcePoint.of(cbit_fwd=2, ebit=1), ResourcePoint.of(qubit_fwd=1), probe_errors=errs)


def _superdense_layout(extra: Iterable[tuple] = ()) -> RegisterLayout:
    return RegisterLayout.of(
        ("A1", Party.ALICE, 1), ("A2", Party.ALICE, 1), ("Ae", Party.ALICE, 1),
        ("Bq", Party.BOB, 1), ("Be", Party.BOB, 1), *extra,
    )


def _encode_dense(s: QuantumState, carrier: str) -> QuantumState:
    s = apply_local(s, gates.CNOT, ["A1", carrier])
    return apply_local(s, gates.CZ, ["A2", carrier])


def _decode_dense(s: QuantumState) -> QuantumState:
    """Coherent Bell measurement: leaves the X bit in Be and the Z bit in Bq."""
    s = apply_local(s, gates.CNOT, ["Bq", "Be"])
    return apply_local(s, gates.H, ["Bq"])


def _two_cobits() -> IdentityReport:
    lay = _superdense_layout()

    def circuit(s):
        s = _encode_dense(s, "Ae")
        s = _send_qubit(s, "Ae", "Bq")
        return _decode_dense(s)

    # Be holds a, Bq holds b after decoding
    eps, finals, errs = _run_identity(lay, ["A1", "A2"], lambda s: _epr(s, "Bq", "Be"), _swap_epr(circuit), [["A1", "A2"], ["Be", "Bq"]], "01+")
    plus = _entropy(finals["++"], ["A1", "A2"]) / 2
    return IdentityReport("two_cobits", eps, ResourcePoint.of(qubit_fwd=1, ebit=1), ResourcePoint.of(cobit_fwd=2), plus, probe_errors=errs)


def _swap_epr(circuit):
    """EPR was prepared on (Bq, Be); move Bq's half to Alice's carrier first."""

    def run(s):
        s = apply_local(s, gates.SWAP, ["Bq", "Ae"])
        return circuit(s)

    return run


def _superdense() -> IdentityReport:
    lay = _superdense_layout([("E1", Party.ENVIRONMENT, 1), ("E2", Party.ENVIRONMENT, 1)])

    def circuit(s):
        s = _encode_dense(s, "Ae")
        s = _send_qubit(s, "Ae", "Bq")
        s = _decode_dense(s)
        s = apply_local(s, gates.CNOT, ["Be", "E1"])
        return apply_local(s, gates.CNOT, ["Bq", "E2"])

    # a cbit leaves copies with Bob and the environment; Alice's leftover
    # input registers are counted with the environment as a third copy
    eps, _, errs = _run_identity(lay, ["A1", "A2"], lambda s: _epr(s, "Bq", "Be"), _swap_epr(circuit), [["A1", "A2"], ["Be", "Bq"], ["E1", "E2"]], "01+")
    return IdentityReport("superdense", eps, ResourcePoint.of(qubit_fwd=1, ebit=1), ResourcePoint.of(cbit_fwd=2), probe_errors=errs)


def _tp_sd() -> IdentityReport:
    lay = _superdense_layout(
        [
            ("At", Party.ALICE, 1), ("Bt", Party.BOB, 1),
            ("M1", Party.BOB, 1), ("M2", Party.BOB, 1),
            ("E1", Party.ENVIRONMENT, 1), ("E2", Party.ENVIRONMENT, 1),
        ]
    )

    def prepare(s):
        s = _epr(s, "Ae", "Be")  # superdense pair
        return _epr(s, "At", "Bt")  # teleportation pair

    def circuit(s):
        s = _encode_dense(s, "Ae")
        # teleport the carrier Ae into Bq using the (At, Bt) pair
        s = apply_local(s, gates.CNOT, ["Ae", "At"])
        s = apply_local(s, gates.H, ["Ae"])
        s = _send_cbit(s, "Ae", "M1", "E1")
        s = _send_cbit(s, "At", "M2", "E2")
        s = apply_local(s, gates.CNOT, ["M2", "Bt"])
        s = apply_local(s, gates.CZ, ["M1", "Bt"])
        s = apply_local(s, gates.SWAP, ["Bt", "Bq"])
        return _decode_dense(s)

    eps, finals, errs = _run_identity(lay, ["A1", "A2"], prepare, circuit, [["A1", "A2"], ["Be", "Bq"]], "01+")
    plus = _entropy(finals["++"], ["A1", "A2"]) / 2
    return IdentityReport("tp_sd", eps, ResourcePoint.of(cbit_fwd=2, ebit=2), ResourcePoint.of(cobit_fwd=2), plus, probe_errors=errs)


def _coherent_teleport() -> IdentityReport:
    lay = RegisterLayout.of(
        ("A", Party.ALICE, 1), ("Ae", Party.ALICE, 1), ("Be", Party.BOB, 1), ("M1", Party.BOB, 1), ("M2", Party.BOB, 1)
    )

    def circuit(s):
        s = apply_local(s, gates.CNOT, ["A", "Ae"])
        s = apply_local(s, gates.H, ["A"])
        s = _send_cobit(s, "A", "M1")
        s = _send_cobit(s, "Ae", "M2")
        s = apply_local(s, gates.CNOT, ["M2", "Be"])
        return apply_local(s, gates.CZ, ["M1", "Be"])

    eps, finals, errs = _run_identity(lay, ["A"], lambda s: _epr(s, "Ae", "Be"), circuit, [["Be"]], "01+i")
    left = min(_entropy(st, ["A", "Ae"]) for label, st in finals.items() if label != "bell")
    return IdentityReport(
        "coherent_teleport", eps, ResourcePoint.of(cobit_fwd=2, ebit=1), ResourcePoint.of(qubit_fwd=1, ebit=2), None, left, errs
    )


IDENTITY_CIRCUITS = {
    "teleport": _teleport,
    "superdense": _superdense,
    "two_cobits": _two_cobits,
    "tp_sd": _tp_sd,
    "coherent_teleport": _coherent_teleport,
}


def identity_report(name: str) -> IdentityReport:
    if name not in IDENTITY_CIRCUITS:
        raise KeyError(f"unknown identity {name!r}; known: {sorted(IDENTITY_CIRCUITS)}")
    return IDENTITY_CIRCUITS[name]()


def verify_identity(name: str) -> float:
    return identity_report(name).epsilon


# ------------------------------------------------------------- derivations


def _mirror(p: ResourcePoint) -> ResourcePoint:
    return ResourcePoint(
        cbit_fwd=p.cbit_back, cbit_back=p.cbit_fwd, cobit_fwd=p.cobit_back, cobit_back=p.cobit_fwd,
        qubit_fwd=p.qubit_back, qubit_back=p.qubit_fwd, ebit=p.ebit, gate=p.gate,
    )


def _identity_table() -> dict[str, tuple[ResourcePoint, ResourcePoint, str]]:
    """name -> (consumes, produces, justification)."""
    R = ResourcePoint.of
    base = {
        "teleport": (R(cbit_fwd=2, ebit=1), R(qubit_fwd=1), "circuit:teleport"),
        "superdense": (R(qubit_fwd=1, ebit=1), R(cbit_fwd=2), "circuit:superdense"),
        "two_cobits": (R(qubit_fwd=1, ebit=1), R(cobit_fwd=2), "circuit:two_cobits"),
        "tp_sd": (R(cbit_fwd=1, ebit=1), R(cobit_fwd=1), "circuit:tp_sd"),
        "coherent_teleport": (R(cobit_fwd=2, ebit=1), R(qubit_fwd=1, ebit=2), "circuit:coherent_teleport"),
        "cobit_to_cbit": (R(cobit_fwd=1), R(cbit_fwd=1), "sender hands its copy to the environment"),
        "cobit_to_ebit": (R(cobit_fwd=1), R(ebit=1), "cobit applied to |+>"),
        "qubit_to_cobit": (R(qubit_fwd=1), R(cobit_fwd=1), "sender copies then sends the qubit"),
        "qubit_to_ebit": (R(qubit_fwd=1), R(ebit=1), "send half of a local EPR pair"),
        "discard": (R(), R(), "dropping resources is free"),
    }
    table = dict(base)
    for name, (c, p, why) in base.items():
        if name != "discard":
            table[name + "_back"] = (_mirror(c), _mirror(p), why + " (reversed)")
    return table


IDENTITIES = _identity_table()

_OPS = {ast.Add: operator.add, ast.Sub: operator.sub, ast.Mult: operator.mul, ast.Div: operator.truediv}


def eval_rate(expr: Number, rates: Mapping[str, Fraction]) -> Fraction:
    """Evaluate a rate expression such as ``"E + C2"`` or ``"1/2"`` exactly."""
    if not isinstance(expr, str):
        return _frac(expr)

    def ev(node):
        if isinstance(node, ast.Expression):
            return ev(node.body)
        if isinstance(node, ast.Constant) and isinstance(node.value, (int, float)):
            return _frac(node.value)
        if isinstance(node, ast.Name):
            if node.id not in rates:
                raise KeyError(f"unknown rate symbol {node.id!r}")
            return rates[node.id]
        if isinstance(node, ast.BinOp) and type(node.op) in _OPS:
            return _OPS[type(node.op)](ev(node.left), ev(node.right))
        if isinstance(node, ast.UnaryOp) and isinstance(node.op, (ast.USub, ast.UAdd)):
            v = ev(node.operand)
            return -v if isinstance(node.op, ast.USub) else v
        raise ValueError(f"unsupported rate expression {expr!r}")

    return ev(ast.parse(expr, mode="eval"))


def _point(spec: Mapping[str, Number] | None, rates) -> ResourcePoint:
    return ResourcePoint.of({k: eval_rate(v, rates) for k, v in (spec or {}).items()})


@dataclass(frozen=True)
class StepRecord:
    index: int
    action: str
    holdings: dict
    ok: bool
    message: str = ""


@dataclass(frozen=True)
class Verdict:
    name: str
    valid: bool
    steps: tuple[StepRecord, ...]
    final: ResourcePoint
    goal: ResourcePoint
    unverified_premises: tuple[str, ...] = ()
    reason: str = ""
    offending_step: int | None = None

    def to_json(self) -> dict:
        return {
            "name": self.name,
            "valid": self.valid,
            "reason": self.reason,
            "offending_step": self.offending_step,
            "unverified_premises": list(self.unverified_premises),
            "final": self.final.to_json(),
            "goal": self.goal.to_json(),
            "steps": [
                {"index": s.index, "action": s.action, "ok": s.ok, "message": s.message, "holdings": s.holdings}
                for s in self.steps
            ],
        }


def check_derivation(script: Mapping, rates: Mapping[str, Number] | None = None) -> Verdict:
    """Execute a derivation script and report whether every step is covered
    by the resources held at that point and the goal is met at the end.

    Script keys: ``name``, ``rates`` (symbol -> value), ``premises`` (name ->
    {consumes, produces, cited}), ``initial``, ``goal`` and ``steps``.  A step
    is {"use": name, "times": rate}, {"borrow": {...}} or {"repay": {...}}.
    Negative goal entries are moved to the initial holdings, so a goal that
    consumes entanglement is supplied with it."""
    sym = {k: _frac(v) for k, v in (script.get("rates") or {}).items()}
    if rates:
        sym.update({k: _frac(v) for k, v in rates.items()})
    sym = {k: eval_rate(v, sym) if isinstance(v, str) else v for k, v in sym.items()}
    table = dict(IDENTITIES)
    cited = []
    for name, prem in (script.get("premises") or {}).items():
        net = _point(prem.get("produces"), sym) - _point(prem.get("consumes"), sym)
        table[name] = ((-net).positive(), net.positive(), "premise")
        if prem.get("cited"):
            cited.append(name)
    goal_raw = _point(script.get("goal"), sym)
    holdings = _point(script.get("initial"), sym) + (-goal_raw).positive()
    goal = goal_raw.positive()
    name = script.get("name", "derivation")
    debt = ResourcePoint()
    records: list[StepRecord] = []
    used_cited = []

    def fail(i, action, msg):
        records.append(StepRecord(i, action, holdings.to_json(), False, msg))
        return Verdict(name, False, tuple(records), holdings, goal, tuple(used_cited), msg, i)

    for i, step in enumerate(script.get("steps", [])):
        if "use" in step:
            key = step["use"]
            if key not in table:
                return fail(i, f"use {key}", f"unknown identity or premise {key!r}")
            times = eval_rate(step.get("times", 1), sym)
            if times < 0:
                return fail(i, f"use {key}", "negative multiplicity")
            cons, prod, _ = table[key]
            holdings = holdings - cons.scale(times)
            action = f"use {key} x{times}"
            neg = holdings.negative_entries()
            if neg:
                return fail(i, action, f"insufficient {', '.join(sorted(neg))}")
            holdings = holdings + prod.scale(times)
            if key in cited and key not in used_cited:
                used_cited.append(key)
        elif "borrow" in step:
            amt = _point(step["borrow"], sym)
            holdings, debt = holdings + amt, debt + amt
            action = f"borrow {amt.to_json()}"
        elif "repay" in step:
            amt = _point(step["repay"], sym)
            holdings, debt = holdings - amt, debt - amt
            action = f"repay {amt.to_json()}"
            if holdings.negative_entries():
                return fail(i, action, "cannot repay from current holdings")
            if debt.negative_entries():
                return fail(i, action, "repaying more than was borrowed")
        else:
            return fail(i, "?", f"malformed step {step!r}")
        records.append(StepRecord(i, action, holdings.to_json(), True))
    if any(v != 0 for _, v in debt.items()):
        return Verdict(name, False, tuple(records), holdings, goal, tuple(used_cited), f"unpaid loan {debt.to_json()}", None)
    if not holdings.covers(goal):
        short = {k: str(v) for k, v in (goal - holdings).items() if v > 0}
        return Verdict(name, False, tuple(records), holdings, goal, tuple(used_cited), f"goal not met, short by {short}", None)
    return Verdict(name, True, tuple(records), holdings, goal, tuple(used_cited))


def builtin_derivations() -> dict[str, dict]:
    """Shipped derivation scripts, keyed by file stem."""
    out = {}
    root = resources.files("cohcomm") / "data" / "derivations"
    for entry in sorted(root.iterdir(), key=lambda e: e.name):
        if entry.name.endswith(".json"):
            out[entry.name[:-5]] = json.loads(entry.read_text())
    return out
