"""Two-way message protocols built from a bipartite gate, and the coherent
one-time-pad construction that turns them into coherent communication.

A :class:`MessageProtocol` interleaves local unitaries with ``n_uses``
applications of a :class:`BipartiteGate`.  Alice's message enters register
``in_a`` and Bob's ``in_b``; after the run Bob's guess of Alice's message sits
in ``out_b`` and Alice's guess of Bob's in ``out_a``.  Everything else is the
protocol's ancilla.

:func:`run_p_prime` wraps one run with coherent copies, key registers holding
EPR halves, encryption, decryption and the final decoupling CNOTs.  The
ancilla it leaves behind depends on the messages only through the error
pattern, which is what makes the communication coherent once the error-free
ancilla can be split off.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

import numpy as np

from . import gates
from .qstate import (
    Branch,
    Party,
    QuantumState,
    Register,
    RegisterLayout,
    TOL,
    apply_basis_map,
    apply_local,
    basis_state,
    fidelity,
    is_unitary,
    lowrank_trace_distance,
    partial_trace,
    permute_registers,
    project,
    schmidt,
    tensor,
    trace_distance,
)

RESERVED = ("A0", "A3", "A4", "A5", "B0", "B3", "B4", "B5")


def xor_bits(a: str, b: str) -> str:
    if len(a) != len(b):
        raise ValueError(f"bitstrings of different width: {a!r}, {b!r}")
    return "".join("1" if x != y else "0" for x, y in zip(a, b))


def bitstrings(width: int) -> list[str]:
    return ["".join(bits) for bits in itertools.product("01", repeat=width)]


# ---------------------------------------------------------------------- gates


def operator_schmidt_rank(matrix: np.ndarray, alice_width: int, bob_width: int, tol: float = 1e-9) -> int:
    da, db = 2 ** alice_width, 2 ** bob_width
    t = np.asarray(matrix, dtype=complex).reshape(da, db, da, db)
    realigned = t.transpose(0, 2, 1, 3).reshape(da * da, db * db)
    s = np.linalg.svd(realigned, compute_uv=False)
    return int(np.count_nonzero(s > tol * max(1.0, s[0])))


@dataclass(frozen=True)
class BipartiteGate:
    name: str
    alice_width: int
    bob_width: int
    matrix: np.ndarray = field(repr=False)
    schmidt_number: int = field(init=False)

    def __post_init__(self):
        m = np.asarray(self.matrix, dtype=complex)
        dim = 2 ** (self.alice_width + self.bob_width)
        if m.shape != (dim, dim):
            raise ValueError(f"gate {self.name!r} must be {dim}x{dim}, got {m.shape}")
        if not is_unitary(m):
            raise ValueError(f"gate {self.name!r} is not unitary")
        m = m.copy()
        m.flags.writeable = False
        object.__setattr__(self, "matrix", m)
        object.__setattr__(self, "schmidt_number", operator_schmidt_rank(m, self.alice_width, self.bob_width))


def _crossing_matrix(width: int) -> np.ndarray:
    # qubit order (A1, A1', B1, B1'), each `width` wide
    d = 2 ** width
    images = []
    for a1, a1p, b1, b1p in itertools.product(range(d), repeat=4):
        out = (a1, a1p ^ b1, b1, b1p ^ a1)
        images.append(((out[0] * d + out[1]) * d + out[2]) * d + out[3])
    return gates.permutation_matrix(images)


def builtin_gate(name: str, width: int = 1) -> BipartiteGate:
    key = name.lower()
    if key == "cnot":
        if width != 1:
            raise ValueError("cnot is defined for width 1")
        return BipartiteGate("cnot", 1, 1, gates.CNOT)
    if key == "crossing":
        return BipartiteGate("crossing", 2 * width, 2 * width, _crossing_matrix(width))
    if key == "swap":
        return BipartiteGate("swap", width, width, gates.register_swap(width))
    if key == "identity":
        return BipartiteGate("identity", width, width, np.eye(4 ** width))
    raise KeyError(f"unknown builtin gate {name!r}")


# ------------------------------------------------------------------ protocols


@dataclass(frozen=True)
class LocalOp:
    label: str
    targets: tuple[str, ...]
    params: tuple[float, ...] = ()
    matrix: np.ndarray | None = field(default=None, repr=False, compare=False)

    def unitary(self, layout: RegisterLayout) -> np.ndarray:
        if self.matrix is not None:
            return np.asarray(self.matrix, dtype=complex)
        widths = [layout[t].width for t in self.targets]
        if self.label == "xor":
            if len(widths) != 2 or widths[0] != widths[1]:
                raise ValueError("xor needs two registers of equal width")
            return gates.xor_copy(widths[0])
        if self.label == "swapreg":
            if len(widths) != 2 or widths[0] != widths[1]:
                raise ValueError("swapreg needs two registers of equal width")
            return gates.register_swap(widths[0])
        base = gates.named(self.label, self.params)
        total = sum(widths)
        k = int(round(np.log2(base.shape[0])))
        if k == total:
            return base
        if k == 1:
            out = np.ones((1, 1), dtype=complex)
            for _ in range(total):
                out = np.kron(out, base)
            return out
        raise ValueError(f"gate {self.label!r} acts on {k} qubits, targets span {total}")


def op(label: str, *targets: str, params: Sequence[float] = ()) -> LocalOp:
    return LocalOp(label, tuple(targets), tuple(float(p) for p in params))


def matrix_op(matrix, *targets: str, label: str = "matrix") -> LocalOp:
    return LocalOp(label, tuple(targets), (), np.asarray(matrix, dtype=complex))


Round = tuple[tuple[LocalOp, ...], tuple[LocalOp, ...]]


@dataclass(frozen=True)
class MessageProtocol:
    gate: BipartiteGate
    layout: RegisterLayout
    rounds: tuple[Round, ...]
    gate_targets: tuple[tuple[str, ...], tuple[str, ...]]
    c1_bits: int
    c2_bits: int
    out_a: str | None
    out_b: str | None
    in_a: str | None = "A1"
    in_b: str | None = "B1"
    keep_a: str | None = None
    keep_b: str | None = None
    e_in_ebits: int = 0
    declared_epsilon: float = 0.0
    name: str = "protocol"

    def __post_init__(self):
        rounds = tuple((tuple(a), tuple(b)) for a, b in self.rounds)
        object.__setattr__(self, "rounds", rounds)
        if len(rounds) < 1:
            raise ValueError("a protocol needs at least one round of local operations")
        if self.keep_a is None:
            object.__setattr__(self, "keep_a", self.in_a)
        if self.keep_b is None:
            object.__setattr__(self, "keep_b", self.in_b)
        self._validate()

    # validation ---------------------------------------------------------
    def _validate(self):
        lay = self.full_layout
        for name in self.layout.names:
            if name in RESERVED:
                raise ValueError(f"register name {name!r} is reserved for the coherent wrapper")
        checks = [
            (self.in_a, self.c1_bits, Party.ALICE),
            (self.keep_a, self.c1_bits, Party.ALICE),
            (self.out_b, self.c1_bits, Party.BOB),
            (self.in_b, self.c2_bits, Party.BOB),
            (self.keep_b, self.c2_bits, Party.BOB),
            (self.out_a, self.c2_bits, Party.ALICE),
        ]
        for reg, width, party in checks:
            if width == 0:
                continue
            if reg is None or reg not in lay:
                raise ValueError(f"protocol with {width}-bit message needs a register, got {reg!r}")
            if lay[reg].width != width or lay[reg].party != party:
                raise ValueError(f"register {reg!r} must be a {width}-qubit {party.value} register")
        if self.c1_bits and self.out_b == self.in_b and self.c2_bits:
            pass
        alice_t, bob_t = self.gate_targets
        for regs, party, width in ((alice_t, Party.ALICE, self.gate.alice_width), (bob_t, Party.BOB, self.gate.bob_width)):
            for r in regs:
                if lay[r].party != party:
                    raise ValueError(f"gate target {r!r} is not a {party.value} register")
            if sum(lay[r].width for r in regs) != width:
                raise ValueError(f"gate needs {width} {party.value} qubits, targets give {sum(lay[r].width for r in regs)}")
        allowed = {
            Party.ALICE: {Party.ALICE, Party.ENVIRONMENT},
            Party.BOB: {Party.BOB, Party.ENVIRONMENT},
        }
        for ra, rb in self.rounds:
            for ops, owner in ((ra, Party.ALICE), (rb, Party.BOB)):
                for o in ops:
                    for t in o.targets:
                        if lay[t].party not in allowed[owner]:
                            raise ValueError(f"{owner.value} operation {o.label!r} touches {t!r} owned by {lay[t].party.value}")
                    if not is_unitary(o.unitary(lay)):
                        raise ValueError(f"local operation {o.label!r} is not unitary")
        if self.e_in_ebits < 0 or self.c1_bits < 0 or self.c2_bits < 0:
            raise ValueError("bit counts must be nonnegative")

    # structure ------------------------------------------------------------
    @property
    def n_uses(self) -> int:
        return len(self.rounds) - 1

    @property
    def full_layout(self) -> RegisterLayout:
        if self.e_in_ebits:
            epr = (Register("A5", Party.ALICE, self.e_in_ebits), Register("B5", Party.BOB, self.e_in_ebits))
            return RegisterLayout(epr + self.layout.registers)
        return self.layout

    @property
    def message_outputs(self) -> list[str]:
        return [r for r in (self.out_a, self.out_b) if r is not None and self._bits_for(r)]

    def _bits_for(self, reg: str) -> int:
        return self.c2_bits if reg == self.out_a else self.c1_bits

    @property
    def ancilla_registers(self) -> list[str]:
        """Registers of one run that are neither message outputs (the A2/B2 part)."""
        outs = set(self.message_outputs)
        return [n for n in self.full_layout.names if n not in outs]

    def apply(self, state: QuantumState) -> QuantumState:
        lay = state.layout
        alice_t, bob_t = self.gate_targets
        for j, (ra, rb) in enumerate(self.rounds):
            for o in ra + rb:
                state = apply_local(state, o.unitary(lay), o.targets)
            if j < self.n_uses:
                state = apply_local(state, self.gate.matrix, list(alice_t) + list(bob_t))
        return state


def _epr_pairs(state: QuantumState, left: str, right: str) -> QuantumState:
    w = state.layout[left].width
    hw = np.ones((1, 1), dtype=complex)
    for _ in range(w):
        hw = np.kron(hw, gates.H)
    state = apply_local(state, hw, [left])
    return apply_local(state, gates.xor_copy(w), [left, right])


def make_epr(count: int) -> QuantumState:
    if count <= 0:
        raise ValueError("need at least one EPR pair")
    lay = RegisterLayout.of(("A", Party.ALICE, count), ("B", Party.BOB, count))
    return _epr_pairs(basis_state(lay, {"A": "0" * count, "B": "0" * count}), "A", "B")


def _xor_into(state: QuantumState, src: str, dst: str) -> QuantumState:
    """|s>|t> -> |s>|t xor s>, as a basis permutation."""
    w = state.layout[src].width
    if state.layout[dst].width != w:
        raise ValueError(f"width mismatch between {src!r} and {dst!r}")
    d = 2 ** w
    images = np.array([(s << w) | (t ^ s) for s in range(d) for t in range(d)])
    return apply_basis_map(state, [src, dst], images)


def coherent_copy(state: QuantumState, src: str, dst: str) -> QuantumState:
    return _xor_into(state, src, dst)


def otp(state: QuantumState, message: str, key: str, direction: str = "encrypt") -> QuantumState:
    """Coherent one-time pad |m>|x> -> |m xor x>|x>; decryption is the same map."""
    if direction not in ("encrypt", "decrypt"):
        raise ValueError(f"direction must be 'encrypt' or 'decrypt', got {direction!r}")
    lay = state.layout
    if lay[message].party != lay[key].party:
        raise ValueError("message and key must belong to the same party")
    return _xor_into(state, key, message)


def initial_state(p: MessageProtocol, a: str, b: str) -> QuantumState:
    lay = p.full_layout
    assign = {r.name: "0" * r.width for r in lay.registers}
    if p.c1_bits:
        assign[p.in_a] = a
    elif a:
        raise ValueError("protocol carries no forward message")
    if p.c2_bits:
        assign[p.in_b] = b
    elif b:
        raise ValueError("protocol carries no backward message")
    if len(a) != p.c1_bits or len(b) != p.c2_bits:
        raise ValueError(f"messages must have {p.c1_bits} and {p.c2_bits} bits")
    state = basis_state(lay, assign)
    if p.e_in_ebits:
        state = _epr_pairs(state, "A5", "B5")
    return state


def run_protocol(p: MessageProtocol, a: str, b: str) -> QuantumState:
    return p.apply(initial_state(p, a, b))


def outcome_distribution(p: MessageProtocol, phi: QuantumState) -> dict[tuple[str, str], float]:
    """Pr(a', b') read off the output registers of one run."""
    out: dict[tuple[str, str], float] = {}
    for ap in bitstrings(p.c1_bits):
        for bp in bitstrings(p.c2_bits):
            assign = {}
            if p.c1_bits:
                assign[p.out_b] = ap
            if p.c2_bits:
                assign[p.out_a] = bp
            out[(ap, bp)] = project(phi, assign).weight if assign else 1.0
    return out


def message_error(dist: Mapping[tuple[str, str], float], a: str, b: str) -> float:
    return 0.5 * sum(abs(pr - (1.0 if (ap, bp) == (a, b) else 0.0)) for (ap, bp), pr in dist.items())


# -------------------------------------------------------- coherent wrapper


@dataclass(frozen=True)
class WrapperLayout:
    layout: RegisterLayout
    message_registers: tuple[str, ...]
    gamma_registers: tuple[str, ...]


def p_prime_layout(p: MessageProtocol) -> WrapperLayout:
    c1, c2 = p.c1_bits, p.c2_bits
    extra_a = [("A0", c1), ("A3", c1), ("A4", c2)]
    extra_b = [("B0", c2), ("B3", c1), ("B4", c2)]
    base = p.full_layout
    regs = {r.name: r for r in base.registers}
    for name, w in extra_a:
        if w:
            regs[name] = Register(name, Party.ALICE, w)
    for name, w in extra_b:
        if w:
            regs[name] = Register(name, Party.BOB, w)

    def present(names):
        return [n for n in names if n in regs]

    alice_msg = present(["A0"]) + ([p.out_a] if c2 else [])
    bob_msg = present(["B0"]) + ([p.out_b] if c1 else [])
    alice_gamma = present(["A3", "A4"]) + [n for n in base.names if regs[n].party == Party.ALICE and n not in alice_msg]
    bob_gamma = present(["B3", "B4"]) + [n for n in base.names if regs[n].party == Party.BOB and n not in bob_msg]
    others = [n for n in base.names if regs[n].party not in (Party.ALICE, Party.BOB)]
    order = alice_msg + alice_gamma + bob_msg + bob_gamma + others
    layout = RegisterLayout(tuple(regs[n] for n in order))
    return WrapperLayout(layout, tuple(alice_msg + bob_msg), tuple(alice_gamma + bob_gamma + others))


def p_prime_apply(p: MessageProtocol, state: QuantumState) -> QuantumState:
    """Steps 1-5 on a state already holding messages in ``in_a``/``in_b``,
    zeroed copy registers and EPR pairs in the key registers."""
    c1, c2 = p.c1_bits, p.c2_bits
    if c1:
        state = coherent_copy(state, p.in_a, "A0")
        state = otp(state, p.in_a, "A3")
    if c2:
        state = coherent_copy(state, p.in_b, "B0")
        state = otp(state, p.in_b, "B4")
    state = p.apply(state)
    if c2:
        state = otp(state, p.out_a, "A4", "decrypt")
    if c1:
        state = otp(state, p.out_b, "B3", "decrypt")
    if c2:
        state = _xor_into(state, p.out_a, "A4")
        state = _xor_into(state, "B0", "B4")
    if c1:
        state = _xor_into(state, "A0", "A3")
        state = _xor_into(state, p.out_b, "B3")
    return state


def p_prime_initial(p: MessageProtocol, a: str, b: str, wl: WrapperLayout | None = None) -> QuantumState:
    wl = wl or p_prime_layout(p)
    wl.layout.check_capacity()
    base = initial_state(p, a, b)
    extra = RegisterLayout(tuple(wl.layout[n] for n in wl.layout.names if n not in base.layout))
    state = tensor(base, basis_state(extra, {r.name: "0" * r.width for r in extra.registers})) if extra.registers else base
    if p.c1_bits:
        state = _epr_pairs(state, "A3", "B3")
    if p.c2_bits:
        state = _epr_pairs(state, "A4", "B4")
    return permute_registers(state, wl.layout.names)


@dataclass(frozen=True)
class GammaDecomposition:
    prob: dict[tuple[str, str, str, str], float]
    gamma_states: dict[tuple[str, str], Branch]
    epsilon_measured: float
    epsilon_bar: float
    min_key_fidelity: float = 1.0

    @property
    def gamma00(self) -> Branch:
        return self.gamma_states[next(iter(self.gamma_states))]

    def error_free(self) -> Branch:
        zero = next(k for k in self.gamma_states if set(k[0] + k[1]) <= {"0"})
        return self.gamma_states[zero]


@dataclass(frozen=True)
class PPrimeOutput:
    final_state: QuantumState
    gamma: GammaDecomposition
    decoupling_error: float
    message_registers: tuple[str, ...] = ()
    gamma_registers: tuple[str, ...] = ()


def _msg_assignment(p: MessageProtocol, a: str, b: str, ap: str, bp: str) -> dict[str, str]:
    out = {}
    if p.c1_bits:
        out["A0"] = a
        out[p.out_b] = ap
    if p.c2_bits:
        out["B0"] = b
        out[p.out_a] = bp
    return out


def run_p_prime(p: MessageProtocol, a: str, b: str) -> PPrimeOutput:
    """One coherent-pad run on messages (a, b).

    The returned decomposition is that of this single run: its outcome
    distribution is the pad-averaged one, and its Gamma branches are keyed by
    (a xor a', b xor b')."""
    wl = p_prime_layout(p)
    state = p_prime_apply(p, p_prime_initial(p, a, b, wl))
    prob: dict[tuple[str, str, str, str], float] = {}
    branches: dict[tuple[str, str], Branch] = {}
    for ap in bitstrings(p.c1_bits):
        for bp in bitstrings(p.c2_bits):
            assign = _msg_assignment(p, a, b, ap, bp)
            br = project(state, assign) if assign else Branch(state.layout, state.amplitudes)
            prob[(a, b, ap, bp)] = br.weight
            branches[(xor_bits(a, ap), xor_bits(b, bp))] = br
    total = sum(prob.values())
    if abs(total - 1.0) > 1e-9:
        raise AssertionError(f"copy registers leaked weight: branch total {total}")
    zero = ("0" * p.c1_bits, "0" * p.c2_bits)
    g00 = branches[zero]
    eps_here = message_error({(k[2], k[3]): v for k, v in prob.items()}, a, b)
    gamma = GammaDecomposition(prob, branches, eps_here, 1.0 - g00.weight)
    if g00.weight <= 0:
        dec = 1.0
    else:
        target = g00.amplitudes / np.sqrt(g00.weight)
        dec = lowrank_trace_distance([br.amplitudes for br in branches.values()], [target])
    return PPrimeOutput(state, gamma, min(1.0, dec), wl.message_registers, wl.gamma_registers)


def gamma_from_outputs(p: MessageProtocol, outputs: Mapping[tuple[str, str], QuantumState], da: str, db: str) -> Branch:
    """Gamma_{da,db} assembled from plain protocol outputs by summing over key
    values: (1/sqrt N) sum_xy |x>_A3 |da^x>_B3 |db^y>_A4 |y>_B4 gamma^{x,y}_{da^x, db^y}."""
    wl = p_prime_layout(p)
    glay = wl.layout.select(wl.gamma_registers)
    n_keys = 2 ** (p.c1_bits + p.c2_bits)
    gamma_run = p.ancilla_registers
    vec = np.zeros(2 ** glay.width, dtype=complex)
    for x in bitstrings(p.c1_bits):
        for y in bitstrings(p.c2_bits):
            phi = outputs[(x, y)]
            ax, by = xor_bits(da, x), xor_bits(db, y)
            assign = {}
            if p.c1_bits:
                assign[p.out_b] = ax
            if p.c2_bits:
                assign[p.out_a] = by
            g = project(phi, assign) if assign else Branch(phi.layout, phi.amplitudes)
            g = permute_registers_branch(g, gamma_run)
            keys = {}
            if p.c1_bits:
                keys["A3"], keys["B3"] = x, ax
            if p.c2_bits:
                keys["A4"], keys["B4"] = by, y
            key_lay = RegisterLayout(tuple(glay[n] for n in keys))
            key_vec = basis_state(key_lay, keys).amplitudes if keys else np.ones(1)
            full_names = list(keys) + list(gamma_run)
            joint = np.kron(key_vec, g.amplitudes)
            joint_state = Branch(RegisterLayout(tuple(glay[n] for n in full_names)), joint)
            vec += permute_registers_branch(joint_state, glay.names).amplitudes
    return Branch(glay, vec / np.sqrt(n_keys))


def permute_registers_branch(br: Branch, new_order: Sequence[str]) -> Branch:
    new_order = list(new_order)
    if tuple(new_order) == br.layout.names:
        return br
    axes = br.layout.axes(new_order)
    t = np.transpose(br.amplitudes.reshape((2,) * br.layout.width), axes).reshape(-1)
    return Branch(br.layout.select(new_order), t)


def all_message_pairs(p: MessageProtocol) -> list[tuple[str, str]]:
    return [(a, b) for a in bitstrings(p.c1_bits) for b in bitstrings(p.c2_bits)]


def extract_gamma(p: MessageProtocol, outputs: Mapping[tuple[str, str], QuantumState]) -> GammaDecomposition:
    """Error statistics and Gamma family from the outputs of the plain protocol
    on every message pair."""
    pairs = all_message_pairs(p)
    missing = [pr for pr in pairs if pr not in outputs]
    if missing:
        raise ValueError(f"outputs missing for message pairs {missing[:4]}")
    layouts = {outputs[pr].layout for pr in pairs}
    if len(layouts) != 1:
        raise ValueError("inconsistent layouts among protocol outputs")
    prob: dict[tuple[str, str, str, str], float] = {}
    eps = 0.0
    diag = []
    for a, b in pairs:
        dist = outcome_distribution(p, outputs[(a, b)])
        for (ap, bp), pr in dist.items():
            prob[(a, b, ap, bp)] = pr
        eps = max(eps, message_error(dist, a, b))
        diag.append(dist[(a, b)])
    eps_bar = 1.0 - float(np.mean(diag))
    gam = {(da, db): gamma_from_outputs(p, outputs, da, db) for da, db in pairs}
    return GammaDecomposition(prob, gam, eps, eps_bar)


@dataclass(frozen=True)
class CoherentReport:
    """Everything the coherent wrapper yields on all message pairs."""

    outputs: dict[tuple[str, str], PPrimeOutput]
    gamma: GammaDecomposition
    decoupling_error: float
    min_key_fidelity: float
    reconstruction_error: float
    gamma00_entropy: float
    gamma00_rank: int
    gamma00_spectrum: np.ndarray


def key_fidelities(outputs: Mapping[tuple[str, str], PPrimeOutput]) -> float:
    """Smallest fidelity between Gamma branches that share a difference key
    but come from different message pairs."""
    by_key: dict[tuple[str, str], list[Branch]] = {}
    for out in outputs.values():
        for key, br in out.gamma.gamma_states.items():
            by_key.setdefault(key, []).append(br)
    worst = 1.0
    for brs in by_key.values():
        ref = brs[0]
        for br in brs[1:]:
            if ref.weight < 1e-14 and br.weight < 1e-14:
                continue
            if ref.weight < 1e-14 or br.weight < 1e-14:
                return 0.0
            worst = min(worst, fidelity(ref, br))
    return worst


def rebuild_p_prime(p: MessageProtocol, gamma: GammaDecomposition, a: str, b: str) -> np.ndarray:
    """sum_{a'b'} |a>|b>|b'>|a'> |Gamma_{a^a', b^b'}> in wrapper register order."""
    wl = p_prime_layout(p)
    lay = wl.layout
    msg_lay = lay.select(wl.message_registers)
    vec = np.zeros(2 ** lay.width, dtype=complex)
    for ap in bitstrings(p.c1_bits):
        for bp in bitstrings(p.c2_bits):
            g = gamma.gamma_states[(xor_bits(a, ap), xor_bits(b, bp))]
            assign = _msg_assignment(p, a, b, ap, bp)
            mvec = basis_state(msg_lay, assign).amplitudes if assign else np.ones(1)
            joint = Branch(RegisterLayout(msg_lay.registers + g.layout.registers), np.kron(mvec, g.amplitudes))
            vec += permute_registers_branch(joint, lay.names).amplitudes
    return vec


def gamma00_state(gamma: GammaDecomposition) -> QuantumState:
    return gamma.error_free().normalized()


def coherentify(p: MessageProtocol) -> CoherentReport:
    pairs = all_message_pairs(p)
    plain = {pr: run_protocol(p, *pr) for pr in pairs}
    gamma = extract_gamma(p, plain)
    outs = {pr: run_p_prime(p, *pr) for pr in pairs}
    dec = max(o.decoupling_error for o in outs.values())
    recon = 0.0
    for (a, b), o in outs.items():
        rebuilt = rebuild_p_prime(p, gamma, a, b)
        recon = max(recon, float(np.linalg.norm(rebuilt - o.final_state.amplitudes)))
    g00 = gamma.error_free()
    if g00.weight > 0:
        st = g00.normalized()
        if st.layout.party_registers(Party.ALICE) and st.layout.party_registers(Party.BOB):
            sch = schmidt(st, [Party.ALICE])
            ent, rank, spec = sch.entropy, sch.rank, sch.coefficients ** 2
        else:
            ent, rank, spec = 0.0, 1, np.ones(1)
    else:
        ent, rank, spec = 0.0, 0, np.zeros(0)
    return CoherentReport(outs, gamma, dec, key_fidelities(outs), recon, ent, rank, spec)


# ------------------------------------------------------------ cobit checks


def _probe_vectors(bits: int, haar: int, rng: np.random.Generator) -> list[np.ndarray]:
    """Probe states on reference (``bits`` qubits) x message (``bits`` qubits)."""
    d = 2 ** bits
    singles = {
        "0": np.array([1, 0], dtype=complex),
        "1": np.array([0, 1], dtype=complex),
        "+": np.array([1, 1], dtype=complex) / np.sqrt(2),
    }
    ref0 = np.zeros(d, dtype=complex)
    ref0[0] = 1.0
    probes = []
    for combo in itertools.product("01+", repeat=bits):
        msg = np.ones(1, dtype=complex)
        for c in combo:
            msg = np.kron(msg, singles[c])
        probes.append(np.kron(ref0, msg))
    probes.append(np.eye(d, dtype=complex).reshape(-1) / np.sqrt(d))
    for _ in range(haar):
        v = rng.normal(size=d * d) + 1j * rng.normal(size=d * d)
        probes.append(v / np.linalg.norm(v))
    return probes


def verify_cobit(
    p: MessageProtocol,
    direction: str = "forward",
    *,
    coherent: bool = False,
    haar_probes: int = 0,
    seed: int = 0,
) -> float:
    """Worst trace distance between the protocol and ideal cobits
    |x>_sender -> |x>_sender |x>_receiver over a probe set.

    Probes are |0>, |1>, |+> on every message bit, a maximally entangled
    reference, plus ``haar_probes`` random reference-entangled states.  With
    ``coherent=True`` the protocol is first wrapped by the coherent one-time
    pad and the Gamma registers are discarded."""
    if direction not in ("forward", "backward", "both"):
        raise ValueError(f"unknown direction {direction!r}")
    fwd = direction in ("forward", "both")
    bwd = direction in ("backward", "both")
    bits_a = p.c1_bits if fwd else 0
    bits_b = p.c2_bits if bwd else 0
    if bits_a + bits_b == 0:
        raise ValueError(f"direction {direction!r} carries no declared bits")

    if coherent:
        wl = p_prime_layout(p)
        base_layout = wl.layout
        keep_a, keep_b = "A0", "B0"
    else:
        base_layout = p.full_layout
        keep_a, keep_b = p.keep_a, p.keep_b
    sent, kept, received = [], [], []
    if bits_a:
        sent.append(p.in_a)
        kept.append(keep_a)
        received.append(p.out_b)
    if bits_b:
        sent.append(p.in_b)
        kept.append(keep_b)
        received.append(p.out_a)
    nbits = bits_a + bits_b
    ref = Register("R", Party.REFERENCE, nbits)
    layout = RegisterLayout((ref,) + base_layout.registers)
    layout.check_capacity()

    zeros = {r.name: "0" * r.width for r in layout.registers}
    blank = basis_state(layout, zeros)
    if p.e_in_ebits:
        blank = _epr_pairs(blank, "A5", "B5")
    if coherent:
        if p.c1_bits:
            blank = _epr_pairs(blank, "A3", "B3")
        if p.c2_bits:
            blank = _epr_pairs(blank, "A4", "B4")

    rng = np.random.default_rng(seed)
    worst = 0.0
    order_in = ["R"] + sent
    rest = [n for n in layout.names if n not in order_in]
    keep_names = ["R"] + kept + received
    ideal_lay = layout.select(keep_names)
    for probe in _probe_vectors(nbits, haar_probes, rng):
        # prepare probe on R + sent registers; the rest of blank is a product
        rest_state = project(permute_registers(blank, order_in + rest), {n: "0" * layout[n].width for n in order_in})
        vec = np.kron(probe, rest_state.amplitudes)
        st = permute_registers(QuantumState(layout.select(order_in + rest), vec), layout.names)
        st = p_prime_apply(p, st) if coherent else p.apply(st)
        rho = partial_trace(st, keep_names)
        # ideal: |r>|x> -> |r>|x>_kept|x>_received
        t = probe.reshape(2 ** nbits, 2 ** nbits)
        ideal = np.zeros(2 ** ideal_lay.width, dtype=complex)
        widths = [layout[n].width for n in kept]
        for r_idx in range(2 ** nbits):
            for x in range(2 ** nbits):
                amp = t[r_idx, x]
                if amp == 0:
                    continue
                parts = _split_bits(x, [layout[n].width for n in sent])
                idx = r_idx
                for part, w in zip(parts, widths):
                    idx = (idx << w) | part
                for part, n in zip(parts, received):
                    idx = (idx << layout[n].width) | part
                ideal[idx] += amp
        worst = max(worst, trace_distance(rho, QuantumState(ideal_lay, ideal).density()))
    return worst


def _split_bits(x: int, widths: Sequence[int]) -> list[int]:
    out = []
    shift = sum(widths)
    for w in widths:
        shift -= w
        out.append((x >> shift) & ((1 << w) - 1))
    return out


# ----------------------------------------------------------- stock protocols


def crossing_protocol(flip_a: float = 0.0, flip_b: float = 0.0, *, asymmetric: bool = False) -> MessageProtocol:
    """One use of the crossing gate, optionally preceded by local noise.

    ``flip_a`` flips Alice's message qubit with that probability before it is
    sent (symmetrically for 0 and 1, or only for 1 when ``asymmetric``)."""
    regs = [("A1", Party.ALICE, 1), ("A1p", Party.ALICE, 1), ("B1", Party.BOB, 1), ("B1p", Party.BOB, 1)]
    ra: list[LocalOp] = []
    rb: list[LocalOp] = []
    if asymmetric:
        regs += [("An", Party.ALICE, 1), ("Bn", Party.BOB, 1)]
    for flip, ops, msg, anc in ((flip_a, ra, "A1", "An"), (flip_b, rb, "B1", "Bn")):
        if flip <= 0:
            continue
        theta = gates.flip_angle(flip)
        if asymmetric:
            ops.append(matrix_op(gates.controlled(gates.ry(theta)), msg, anc, label="cry"))
            ops.append(op("cnot", anc, msg))
        else:
            ops.append(op("ry", msg, params=[theta]))
    return MessageProtocol(
        gate=builtin_gate("crossing"),
        layout=RegisterLayout.of(*regs),
        rounds=((tuple(ra), tuple(rb)), ((), ())),
        gate_targets=(("A1", "A1p"), ("B1", "B1p")),
        c1_bits=1,
        c2_bits=1,
        out_a="A1p",
        out_b="B1p",
        declared_epsilon=max(flip_a, flip_b),
        name="crossing" if flip_a == flip_b == 0 else "noisy-crossing",
    )


def cnot_protocol(measured: bool = False) -> MessageProtocol:
    regs = [("A1", Party.ALICE, 1), ("B1p", Party.BOB, 1)]
    after: tuple[LocalOp, ...] = ()
    if measured:
        regs.append(("E", Party.ENVIRONMENT, 1))
        after = (op("cnot", "A1", "E"),)
    return MessageProtocol(
        gate=builtin_gate("cnot"),
        layout=RegisterLayout.of(*regs),
        rounds=(((), ()), (after, ())),
        gate_targets=(("A1",), ("B1p",)),
        c1_bits=1,
        c2_bits=0,
        out_a=None,
        out_b="B1p",
        in_b=None,
        name="cnot-measured" if measured else "cnot",
    )


def identity_protocol(bits: int = 1) -> MessageProtocol:
    return MessageProtocol(
        gate=builtin_gate("identity"),
        layout=RegisterLayout.of(("A1", Party.ALICE, bits), ("B1p", Party.BOB, bits)),
        rounds=(((), ()), ((), ())),
        gate_targets=(("A1",), ("B1p",)),
        c1_bits=bits,
        c2_bits=0,
        out_a=None,
        out_b="B1p",
        in_b=None,
        name="identity",
    )


def silent_protocol() -> MessageProtocol:
    """No messages; one identity use on a pair of ancillas."""
    return MessageProtocol(
        gate=builtin_gate("identity"),
        layout=RegisterLayout.of(("Ax", Party.ALICE, 1), ("Bx", Party.BOB, 1)),
        rounds=(((op("h", "Ax"),), ()), ((), ())),
        gate_targets=(("Ax",), ("Bx",)),
        c1_bits=0,
        c2_bits=0,
        out_a=None,
        out_b=None,
        in_a=None,
        in_b=None,
        name="silent",
    )


def crossing_with_epr(flip_a: float = 0.0) -> MessageProtocol:
    """Crossing-gate protocol that also consumes one EPR pair per use; Alice
    rotates her EPR half conditioned on the message before sending."""
    base = crossing_protocol(flip_a)
    ra, rb = base.rounds[0]
    ra = ra + (op("cz", "A1", "A5"),)
    return MessageProtocol(
        gate=base.gate,
        layout=base.layout,
        rounds=((ra, rb), base.rounds[1]),
        gate_targets=base.gate_targets,
        c1_bits=1,
        c2_bits=1,
        out_a="A1p",
        out_b="B1p",
        e_in_ebits=1,
        declared_epsilon=flip_a,
        name="crossing+epr",
    )


def swap_entangler_protocol() -> MessageProtocol:
    """One two-qubit SWAP: Alice sends her message and one half of a locally
    prepared |+>|0> -> EPR pair, so the run also creates an ebit."""
    return MessageProtocol(
        gate=builtin_gate("swap", 2),
        layout=RegisterLayout.of(
            ("A1", Party.ALICE, 1),
            ("Am", Party.ALICE, 1),
            ("Ak", Party.ALICE, 1),
            ("B1p", Party.BOB, 1),
            ("Bm", Party.BOB, 1),
        ),
        rounds=(((op("h", "Ak"), op("cnot", "Ak", "Am")), ()), ((), ())),
        gate_targets=(("A1", "Am"), ("B1p", "Bm")),
        c1_bits=1,
        c2_bits=0,
        out_a=None,
        out_b="B1p",
        in_b=None,
        name="swap-entangler",
    )


STOCK = {
    "crossing": crossing_protocol,
    "cnot": cnot_protocol,
    "identity": identity_protocol,
    "silent": silent_protocol,
    "crossing_epr": crossing_with_epr,
    "swap_entangler": swap_entangler_protocol,
}


# ----------------------------------------------------------------- json io


def _matrix_to_json(m: np.ndarray) -> list:
    m = np.asarray(m, dtype=complex)
    return [[[float(z.real), float(z.imag)] for z in row] for row in m]


def _matrix_from_json(rows) -> np.ndarray:
    return np.array([[complex(re, im) for re, im in row] for row in rows], dtype=complex)


def _op_to_json(o: LocalOp) -> dict:
    out: dict = {"gate": o.label, "targets": list(o.targets)}
    if o.params:
        out["params"] = list(o.params)
    if o.matrix is not None:
        out["matrix"] = _matrix_to_json(o.matrix)
    return out


def _op_from_json(d: Mapping) -> LocalOp:
    targets = tuple(d["targets"])
    if "matrix" in d:
        return LocalOp(d.get("gate", "matrix"), targets, (), _matrix_from_json(d["matrix"]))
    return LocalOp(d["gate"], targets, tuple(float(x) for x in d.get("params", ())))


def protocol_to_json(p: MessageProtocol) -> dict:
    g = p.gate
    if g.name in ("cnot", "crossing", "swap", "identity"):
        width = {"cnot": 1, "crossing": g.alice_width // 2, "swap": g.alice_width, "identity": g.alice_width}[g.name]
        gate = {"builtin": g.name, "width": width}
    else:
        gate = {"name": g.name, "alice_width": g.alice_width, "bob_width": g.bob_width, "matrix": _matrix_to_json(g.matrix)}
    return {
        "schema": "cohcomm/protocol/v1",
        "name": p.name,
        "gate": gate,
        "registers": p.layout.to_json(),
        "gate_targets": {"alice": list(p.gate_targets[0]), "bob": list(p.gate_targets[1])},
        "rounds": [{"alice": [_op_to_json(o) for o in ra], "bob": [_op_to_json(o) for o in rb]} for ra, rb in p.rounds],
        "c1_bits": p.c1_bits,
        "c2_bits": p.c2_bits,
        "e_in_ebits": p.e_in_ebits,
        "declared_epsilon": p.declared_epsilon,
        "in_a": p.in_a,
        "in_b": p.in_b,
        "out_a": p.out_a,
        "out_b": p.out_b,
        "keep_a": p.keep_a,
        "keep_b": p.keep_b,
    }


def protocol_from_json(d: Mapping) -> MessageProtocol:
    if "builtin" in d and "registers" not in d:
        kwargs = {k: v for k, v in d.items() if k not in ("builtin", "schema")}
        return STOCK[d["builtin"]](**kwargs)
    g = d["gate"]
    if "builtin" in g:
        gate = builtin_gate(g["builtin"], int(g.get("width", 1)))
    else:
        gate = BipartiteGate(g.get("name", "custom"), int(g["alice_width"]), int(g["bob_width"]), _matrix_from_json(g["matrix"]))
    rounds = tuple(
        (tuple(_op_from_json(o) for o in r.get("alice", [])), tuple(_op_from_json(o) for o in r.get("bob", [])))
        for r in d["rounds"]
    )
    c1, c2 = int(d["c1_bits"]), int(d["c2_bits"])
    return MessageProtocol(
        gate=gate,
        layout=RegisterLayout.from_json(d["registers"]),
        rounds=rounds,
        gate_targets=(tuple(d["gate_targets"]["alice"]), tuple(d["gate_targets"]["bob"])),
        c1_bits=c1,
        c2_bits=c2,
        out_a=d.get("out_a"),
        out_b=d.get("out_b"),
        in_a=d.get("in_a", "A1" if c1 else None),
        in_b=d.get("in_b", "B1" if c2 else None),
        keep_a=d.get("keep_a"),
        keep_b=d.get("keep_b"),
        e_in_ebits=int(d.get("e_in_ebits", 0)),
        declared_epsilon=float(d.get("declared_epsilon", 0.0)),
        name=d.get("name", "protocol"),
    )
