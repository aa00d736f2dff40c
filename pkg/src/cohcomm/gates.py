"""Named gate matrices used by protocol files and identity circuits."""

from __future__ import annotations

import math

import numpy as np

I2 = np.eye(2, dtype=complex)
X = np.array([[0, 1], [1, 0]], dtype=complex)
Y = np.array([[0, -1j], [1j, 0]], dtype=complex)
Z = np.array([[1, 0], [0, -1]], dtype=complex)
H = np.array([[1, 1], [1, -1]], dtype=complex) / math.sqrt(2)
S = np.array([[1, 0], [0, 1j]], dtype=complex)
SDG = S.conj().T
T = np.array([[1, 0], [0, np.exp(1j * math.pi / 4)]], dtype=complex)


def rx(theta: float) -> np.ndarray:
    c, s = math.cos(theta / 2), math.sin(theta / 2)
    return np.array([[c, -1j * s], [-1j * s, c]], dtype=complex)


def ry(theta: float) -> np.ndarray:
    c, s = math.cos(theta / 2), math.sin(theta / 2)
    return np.array([[c, -s], [s, c]], dtype=complex)


def rz(theta: float) -> np.ndarray:
    return np.diag([np.exp(-0.5j * theta), np.exp(0.5j * theta)])


def permutation_matrix(images) -> np.ndarray:
    images = list(images)
    m = np.zeros((len(images), len(images)), dtype=complex)
    for i, j in enumerate(images):
        m[j, i] = 1.0
    return m


def controlled(u: np.ndarray, n_controls: int = 1) -> np.ndarray:
    """Controls are the most significant qubits; fire on all-ones."""
    d = u.shape[0]
    full = np.eye(d * 2 ** n_controls, dtype=complex)
    full[-d:, -d:] = u
    return full


CNOT = controlled(X)
CZ = controlled(Z)
SWAP = permutation_matrix([0, 2, 1, 3])
TOFFOLI = controlled(X, 2)


def xor_copy(width: int) -> np.ndarray:
    """|s>|t> -> |s>|t xor s> on two ``width``-qubit registers."""
    d = 2 ** width
    return permutation_matrix([(s << width) | (t ^ s) for s in range(d) for t in range(d)])


def register_swap(width: int) -> np.ndarray:
    d = 2 ** width
    return permutation_matrix([(t << width) | s for s in range(d) for t in range(d)])


FIXED = {
    "id": I2,
    "x": X,
    "y": Y,
    "z": Z,
    "h": H,
    "s": S,
    "sdg": SDG,
    "t": T,
    "cnot": CNOT,
    "cx": CNOT,
    "cz": CZ,
    "swap": SWAP,
    "toffoli": TOFFOLI,
}

PARAMETRIC = {"rx": rx, "ry": ry, "rz": rz}


def named(name: str, params=()) -> np.ndarray:
    key = name.lower()
    if key in FIXED:
        if params:
            raise ValueError(f"gate {name!r} takes no parameters")
        return FIXED[key]
    if key in PARAMETRIC:
        if len(params) != 1:
            raise ValueError(f"gate {name!r} takes exactly one angle")
        return PARAMETRIC[key](float(params[0]))
    raise KeyError(f"unknown gate {name!r}")


def flip_angle(p: float) -> float:
    """Ry angle whose action flips a basis qubit with probability ``p``."""
    return 2.0 * math.asin(math.sqrt(p))
