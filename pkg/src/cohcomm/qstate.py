"""Dense statevectors over named, party-tagged registers.

Amplitudes are stored as a flat complex vector indexed by the concatenated
register bits in layout order, most-significant register first.  Reshaping to
``(2,) * width`` gives one tensor axis per qubit, which is how every kernel
below addresses registers.
"""

from __future__ import annotations

import contextlib
import json
from dataclasses import dataclass, field, fields, replace
from enum import Enum
from typing import Iterable, Mapping, NamedTuple, Sequence

import numpy as np


class Party(str, Enum):
    ALICE = "alice"
    BOB = "bob"
    ENVIRONMENT = "environment"
    REFERENCE = "reference"


@dataclass
class Tolerances:
    norm: float = 1e-10
    rank: float = 1e-9
    unitarity: float = 1e-10
    psd: float = 1e-9
    max_qubits: int = 22


TOL = Tolerances()


@contextlib.contextmanager
def tolerances(**overrides):
    """Temporarily override entries of the module-wide :data:`TOL`."""
    saved = {f.name: getattr(TOL, f.name) for f in fields(TOL)}
    for key, value in overrides.items():
        if key not in saved:
            raise KeyError(f"unknown tolerance {key!r}")
        setattr(TOL, key, value)
    try:
        yield TOL
    finally:
        for key, value in saved.items():
            setattr(TOL, key, value)


class WidthOverflowError(ValueError):
    """Requested layout exceeds the dense-storage qubit cap."""


@dataclass(frozen=True)
class Register:
    name: str
    party: Party
    width: int

    def __post_init__(self):
        object.__setattr__(self, "party", Party(self.party))
        if self.width < 1:
            raise ValueError(f"register {self.name!r} must have width >= 1, got {self.width}")


@dataclass(frozen=True)
class RegisterLayout:
    registers: tuple[Register, ...]

    def __post_init__(self):
        regs = tuple(r if isinstance(r, Register) else Register(*r) for r in self.registers)
        object.__setattr__(self, "registers", regs)
        names = [r.name for r in regs]
        if len(set(names)) != len(names):
            raise ValueError(f"duplicate register names in layout: {names}")

    @classmethod
    def of(cls, *specs) -> "RegisterLayout":
        """Build from ``(name, party, width)`` triples."""
        return cls(tuple(Register(*s) for s in specs))

    @property
    def width(self) -> int:
        return sum(r.width for r in self.registers)

    @property
    def names(self) -> tuple[str, ...]:
        return tuple(r.name for r in self.registers)

    def __contains__(self, name: str) -> bool:
        return name in self.names

    def __getitem__(self, name: str) -> Register:
        for r in self.registers:
            if r.name == name:
                return r
        raise KeyError(f"unknown register {name!r}")

    def offset(self, name: str) -> int:
        off = 0
        for r in self.registers:
            if r.name == name:
                return off
            off += r.width
        raise KeyError(f"unknown register {name!r}")

    def axes(self, names: Iterable[str]) -> list[int]:
        out: list[int] = []
        for name in names:
            off = self.offset(name)
            out.extend(range(off, off + self[name].width))
        return out

    def party_registers(self, *parties: Party) -> list[str]:
        wanted = {Party(p) for p in parties}
        return [r.name for r in self.registers if r.party in wanted]

    def select(self, names: Sequence[str]) -> "RegisterLayout":
        return RegisterLayout(tuple(self[n] for n in names))

    def without(self, names: Iterable[str]) -> "RegisterLayout":
        drop = set(names)
        return RegisterLayout(tuple(r for r in self.registers if r.name not in drop))

    def extend(self, *regs) -> "RegisterLayout":
        new = tuple(r if isinstance(r, Register) else Register(*r) for r in regs)
        return RegisterLayout(self.registers + new)

    def check_capacity(self) -> None:
        if self.width > TOL.max_qubits:
            raise WidthOverflowError(
                f"layout needs {self.width} qubits, dense cap is {TOL.max_qubits} "
                f"({', '.join(f'{r.name}:{r.width}' for r in self.registers)})"
            )

    def to_json(self) -> list[dict]:
        return [{"name": r.name, "party": r.party.value, "width": r.width} for r in self.registers]

    @classmethod
    def from_json(cls, data: list[dict]) -> "RegisterLayout":
        return cls(tuple(Register(d["name"], d["party"], int(d["width"])) for d in data))


def _as_vector(amplitudes, layout: RegisterLayout) -> np.ndarray:
    vec = np.asarray(amplitudes, dtype=complex).reshape(-1)
    if vec.size != 2 ** layout.width:
        raise ValueError(f"expected {2 ** layout.width} amplitudes, got {vec.size}")
    vec = vec.copy()
    vec.flags.writeable = False
    return vec


@dataclass(frozen=True)
class QuantumState:
    layout: RegisterLayout
    amplitudes: np.ndarray
    norm_tolerance: float | None = None

    def __post_init__(self):
        vec = _as_vector(self.amplitudes, self.layout)
        object.__setattr__(self, "amplitudes", vec)
        tol = TOL.norm if self.norm_tolerance is None else self.norm_tolerance
        norm = np.linalg.norm(vec)
        if abs(norm - 1.0) > tol:
            raise ValueError(f"state norm {norm!r} deviates from 1 by more than {tol}")

    @property
    def tensor(self) -> np.ndarray:
        return self.amplitudes.reshape((2,) * self.layout.width) if self.layout.width else self.amplitudes.reshape(())

    def probabilities(self) -> np.ndarray:
        return np.abs(self.amplitudes) ** 2

    def density(self) -> "DensityOperator":
        return DensityOperator(self.layout, np.outer(self.amplitudes, self.amplitudes.conj()))

    def __matmul__(self, other: "QuantumState") -> "QuantumState":
        return tensor(self, other)


@dataclass(frozen=True)
class Branch:
    """Subnormalized component of a state, e.g. one measurement branch."""

    layout: RegisterLayout
    amplitudes: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "amplitudes", _as_vector(self.amplitudes, self.layout))
        if self.weight > 1.0 + 1e-9:
            raise ValueError(f"branch weight {self.weight} exceeds 1")

    @property
    def weight(self) -> float:
        return float(np.vdot(self.amplitudes, self.amplitudes).real)

    def normalized(self) -> QuantumState:
        w = self.weight
        if w <= 0:
            raise ValueError("cannot normalize a zero-weight branch")
        return QuantumState(self.layout, self.amplitudes / np.sqrt(w))


@dataclass(frozen=True)
class DensityOperator:
    layout: RegisterLayout
    matrix: np.ndarray = field(repr=False)

    def __post_init__(self):
        m = np.asarray(self.matrix, dtype=complex)
        dim = 2 ** self.layout.width
        if m.shape != (dim, dim):
            raise ValueError(f"density matrix must be {dim}x{dim}, got {m.shape}")
        if not np.allclose(m, m.conj().T, atol=1e-10):
            raise ValueError("density matrix is not Hermitian")
        tr = np.trace(m).real
        if abs(tr - 1.0) > 1e-8:
            raise ValueError(f"density matrix trace {tr} != 1")
        if np.linalg.eigvalsh(m).min() < -TOL.psd:
            raise ValueError("density matrix is not positive semidefinite")
        m = m.copy()
        m.flags.writeable = False
        object.__setattr__(self, "matrix", m)

    def eigenvalues(self) -> np.ndarray:
        return np.sort(np.linalg.eigvalsh(self.matrix))[::-1]


# ---------------------------------------------------------------- construction


def _bits_to_int(bits: str, width: int, name: str) -> int:
    if len(bits) != width or any(c not in "01" for c in bits):
        raise ValueError(f"register {name!r} of width {width} needs a {width}-bit string, got {bits!r}")
    return int(bits, 2) if bits else 0


def basis_index(layout: RegisterLayout, assignment: Mapping[str, str]) -> int:
    unknown = set(assignment) - set(layout.names)
    if unknown:
        raise KeyError(f"unknown registers {sorted(unknown)}")
    idx = 0
    for r in layout.registers:
        idx = (idx << r.width) | _bits_to_int(assignment.get(r.name, "0" * r.width), r.width, r.name)
    return idx


def basis_state(layout: RegisterLayout, assignment: Mapping[str, str]) -> QuantumState:
    """Computational basis state.  Every register needs a bitstring of its
    own width; use :func:`zero_state` for the all-zero state."""
    missing = set(layout.names) - set(assignment)
    if missing:
        raise ValueError(f"registers without assignment: {sorted(missing)}")
    layout.check_capacity()
    vec = np.zeros(2 ** layout.width, dtype=complex)
    vec[basis_index(layout, assignment)] = 1.0
    return QuantumState(layout, vec)


def zero_state(layout: RegisterLayout) -> QuantumState:
    return basis_state(layout, {r.name: "0" * r.width for r in layout.registers})


def from_register_vector(register: Register, vector) -> QuantumState:
    vec = np.asarray(vector, dtype=complex)
    return QuantumState(RegisterLayout((register,)), vec / np.linalg.norm(vec))


def tensor(*states: QuantumState) -> QuantumState:
    layout = RegisterLayout(tuple(r for s in states for r in s.layout.registers))
    layout.check_capacity()
    vec = np.ones(1, dtype=complex)
    for s in states:
        vec = np.kron(vec, s.amplitudes)
    return QuantumState(layout, vec)


def add_registers(state: QuantumState, *regs) -> QuantumState:
    """Append fresh registers initialised to |0...0>."""
    new = RegisterLayout(tuple(r if isinstance(r, Register) else Register(*r) for r in regs))
    return tensor(state, zero_state(new))


# -------------------------------------------------------------------- kernels


def _apply_matrix(vec: np.ndarray, layout: RegisterLayout, matrix: np.ndarray, axes: list[int]) -> np.ndarray:
    n = layout.width
    t = vec.reshape((2,) * n)
    front = list(range(len(axes)))
    t = np.moveaxis(t, axes, front)
    shape = t.shape
    t = (matrix @ t.reshape(2 ** len(axes), -1)).reshape(shape)
    return np.moveaxis(t, front, axes).reshape(-1)


def _check_targets(layout: RegisterLayout, targets: Sequence[str]) -> None:
    if len(set(targets)) != len(targets):
        raise ValueError(f"overlapping targets {list(targets)}")
    for t in targets:
        if t not in layout:
            raise KeyError(f"unknown register {t!r}")


def is_unitary(matrix: np.ndarray, tol: float | None = None) -> bool:
    tol = TOL.unitarity if tol is None else tol
    m = np.asarray(matrix, dtype=complex)
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        return False
    return bool(np.abs(m.conj().T @ m - np.eye(m.shape[0])).max() <= tol)


def apply_local(state: QuantumState, unitary, targets: Sequence[str]) -> QuantumState:
    """Apply ``unitary`` to the concatenation of ``targets`` (first target is
    most significant).  Isometries are modelled as unitaries acting on
    zero-initialised ancilla registers included among the targets."""
    targets = list(targets)
    _check_targets(state.layout, targets)
    axes = state.layout.axes(targets)
    u = np.asarray(unitary, dtype=complex)
    if u.shape != (2 ** len(axes), 2 ** len(axes)):
        raise ValueError(f"matrix shape {u.shape} does not match {len(axes)} target qubits")
    if not is_unitary(u):
        raise ValueError("matrix is not unitary within tolerance")
    return QuantumState(state.layout, _apply_matrix(state.amplitudes, state.layout, u, axes))


def apply_basis_map(state: QuantumState, targets: Sequence[str], images: np.ndarray) -> QuantumState:
    """Apply the permutation |i> -> |images[i]> on the target registers."""
    targets = list(targets)
    _check_targets(state.layout, targets)
    axes = state.layout.axes(targets)
    images = np.asarray(images, dtype=np.int64)
    dim = 2 ** len(axes)
    if images.shape != (dim,) or not np.array_equal(np.sort(images), np.arange(dim)):
        raise ValueError("basis map must be a permutation of the target basis")
    n = state.layout.width
    front = list(range(len(axes)))
    t = np.moveaxis(state.amplitudes.reshape((2,) * n), axes, front).reshape(dim, -1)
    out = np.empty_like(t)
    out[images] = t
    out = np.moveaxis(out.reshape((2,) * n), front, axes).reshape(-1)
    return QuantumState(state.layout, out)


def permute_registers(state: QuantumState, new_order: Sequence[str]) -> QuantumState:
    new_order = list(new_order)
    if sorted(new_order) != sorted(state.layout.names) or len(new_order) != len(state.layout.names):
        raise ValueError(f"{new_order} is not a permutation of {list(state.layout.names)}")
    if tuple(new_order) == state.layout.names:
        return state
    axes = state.layout.axes(new_order)
    t = np.transpose(state.tensor, axes).reshape(-1)
    return QuantumState(state.layout.select(new_order), t)


def project(state: QuantumState, assignment: Mapping[str, str]) -> Branch:
    """Branch of ``state`` with the assigned registers fixed; those registers
    are removed from the returned layout."""
    names = list(assignment)
    _check_targets(state.layout, names)
    axes = state.layout.axes(names)
    n = state.layout.width
    t = np.moveaxis(state.tensor, axes, list(range(len(axes))))
    idx = 0
    for name in names:
        w = state.layout[name].width
        idx = (idx << w) | _bits_to_int(assignment[name], w, name)
    sub = t.reshape(2 ** len(axes), -1)[idx]
    return Branch(state.layout.without(names), sub.reshape(-1) if n > len(axes) else sub.reshape(1))


# ----------------------------------------------------------------- analysis


def partial_trace(state: QuantumState, keep: Sequence[str]) -> DensityOperator:
    keep = list(keep)
    if not keep:
        raise ValueError("keep list is empty")
    _check_targets(state.layout, keep)
    axes = state.layout.axes(keep)
    t = np.moveaxis(state.tensor, axes, list(range(len(axes)))).reshape(2 ** len(axes), -1)
    return DensityOperator(state.layout.select(keep), t @ t.conj().T)


class Schmidt(NamedTuple):
    coefficients: np.ndarray
    rank: int
    entropy: float


def _cut_sides(layout: RegisterLayout, cut) -> tuple[list[str], list[str]]:
    items = list(cut)
    left: list[str] = []
    for item in items:
        if isinstance(item, Party) or item in {p.value for p in Party}:
            left.extend(layout.party_registers(Party(item)))
        else:
            if item not in layout:
                raise KeyError(f"unknown register {item!r}")
            left.append(item)
    left_set = set(left)
    left = [n for n in layout.names if n in left_set]
    right = [n for n in layout.names if n not in left_set]
    if not left or not right:
        raise ValueError("cut must leave registers on both sides")
    return left, right


def schmidt(state: QuantumState, cut, rank_threshold: float | None = None) -> Schmidt:
    """Schmidt coefficients across ``cut``; ``cut`` lists the parties and/or
    register names on one side, everything else is the other side."""
    thr = TOL.rank if rank_threshold is None else rank_threshold
    left, _ = _cut_sides(state.layout, cut)
    axes = state.layout.axes(left)
    m = np.moveaxis(state.tensor, axes, list(range(len(axes)))).reshape(2 ** len(axes), -1)
    s = np.linalg.svd(m, compute_uv=False)
    s = np.sort(s)[::-1]
    p = s ** 2
    nz = p[p > 0]
    entropy = float(-np.sum(nz * np.log2(nz)))
    return Schmidt(s, int(np.count_nonzero(s > thr)), max(entropy, 0.0))


def overlap(a: QuantumState | Branch, b: QuantumState | Branch) -> complex:
    _check_same_layout(a.layout, b.layout)
    return complex(np.vdot(a.amplitudes, b.amplitudes))


def fidelity(a: QuantumState | Branch, b: QuantumState | Branch) -> float:
    """|<a|b>|^2 after normalizing both arguments."""
    wa = float(np.vdot(a.amplitudes, a.amplitudes).real)
    wb = float(np.vdot(b.amplitudes, b.amplitudes).real)
    return abs(overlap(a, b)) ** 2 / (wa * wb)


def _check_same_layout(la: RegisterLayout, lb: RegisterLayout) -> None:
    if la != lb:
        raise ValueError(f"layout mismatch: {la.names} vs {lb.names}")


def trace_distance(a: QuantumState | DensityOperator, b: QuantumState | DensityOperator) -> float:
    _check_same_layout(a.layout, b.layout)
    if isinstance(a, QuantumState) and isinstance(b, QuantumState):
        ov = abs(np.vdot(a.amplitudes, b.amplitudes)) ** 2
        return float(np.sqrt(max(0.0, 1.0 - ov)))
    ra = a.matrix if isinstance(a, DensityOperator) else a.density().matrix
    rb = b.matrix if isinstance(b, DensityOperator) else b.density().matrix
    ev = np.linalg.eigvalsh(ra - rb)
    return float(min(1.0, 0.5 * np.abs(ev).sum()))


def lowrank_trace_distance(vecs_a: Sequence[np.ndarray], vecs_b: Sequence[np.ndarray]) -> float:
    """Half the trace norm of sum_i |a_i><a_i| - sum_j |b_j><b_j|.

    The vectors carry their own weights (subnormalized).  Works in the span of
    the inputs, so the ambient dimension never gets squared."""
    cols = [np.asarray(v, dtype=complex).reshape(-1) for v in list(vecs_a) + list(vecs_b)]
    if not cols:
        return 0.0
    v = np.stack(cols, axis=1)
    signs = np.array([1.0] * len(vecs_a) + [-1.0] * len(vecs_b))
    _, r = np.linalg.qr(v)
    small = (r * signs) @ r.conj().T
    ev = np.linalg.eigvalsh((small + small.conj().T) / 2)
    return float(0.5 * np.abs(ev).sum())


# ----------------------------------------------------------------------- json


def to_json(state: QuantumState | Branch) -> dict:
    inter = np.empty(2 * state.amplitudes.size)
    inter[0::2] = state.amplitudes.real
    inter[1::2] = state.amplitudes.imag
    return {"layout": state.layout.to_json(), "amplitudes": inter.tolist()}


def from_json(data: Mapping) -> QuantumState:
    flat = np.asarray(data["amplitudes"], dtype=float)
    return QuantumState(RegisterLayout.from_json(data["layout"]), flat[0::2] + 1j * flat[1::2])


def dumps(state: QuantumState) -> str:
    return json.dumps(to_json(state))


def with_layout(state: QuantumState, layout: RegisterLayout) -> QuantumState:
    """Relabel registers without touching amplitudes (widths must agree)."""
    if [r.width for r in layout.registers] != [r.width for r in state.layout.registers]:
        raise ValueError("relabelled layout must keep register widths")
    return replace(state, layout=layout)
