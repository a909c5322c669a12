"""Dense state engine: Pauli words, gate lists, statevectors and density matrices.

Conventions used throughout the package:

* qubit 0 is the most significant bit of a basis index;
* a Pauli word is a pair of bit masks ``(x_mask, z_mask)`` with a ``+1/-1``
  sign, where ``Y = iXZ`` on every qubit carrying both bits;
* every kernel acts on the *leading* axis of an array of shape
  ``(2**n, ...)``, so the same code applies a gate to a single vector, to a
  batch of candidate states stored as columns, or to the columns of a
  density matrix.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache
from typing import Callable, Iterable, Sequence

import numpy as np

from .rng import as_generator

__all__ = [
    "PauliString",
    "StateVector",
    "DensityMatrix",
    "Gate",
    "Circuit",
    "apply_pauli",
    "apply_pauli_rotation",
    "apply_controlled",
    "expectation",
    "sample_outcome",
    "sample_plus_count",
    "bell_outcome_distribution",
    "bell_sample_pair",
    "bell_sample_counts",
    "evolve_density",
    "trace_distance",
    "apply_channel",
    "random_channel",
    "post_selected_damage",
    "random_state",
    "random_density",
    "zero_state",
    "pauli_matrix",
    "BELL_LABELS",
]

HERM_TOL = 1e-10


# --------------------------------------------------------------------------- Pauli words


@dataclass(frozen=True)
class PauliString:
    """n-qubit Pauli word ``sign * P_0 (x) P_1 (x) ... (x) P_{n-1}``."""

    n: int
    x_mask: int = 0
    z_mask: int = 0
    sign: int = 1

    def __post_init__(self):
        limit = 1 << self.n
        if not (0 <= self.x_mask < limit and 0 <= self.z_mask < limit):
            raise ValueError("bit masks exceed the qubit count")
        if self.sign not in (1, -1):
            raise ValueError("sign must be +1 or -1")

    @classmethod
    def identity(cls, n: int) -> "PauliString":
        return cls(n)

    @classmethod
    def from_label(cls, label: str, n: int | None = None) -> "PauliString":
        """Parse a dense label ``"-XIZY"`` or a sparse one ``"Z0 X2"``.

        Sparse labels need ``n``; dense labels infer it from their length.
        """
        text = label.strip()
        sign = 1
        if text[:1] in "+-":
            sign = -1 if text[0] == "-" else 1
            text = text[1:].strip()
        if any(ch.isdigit() for ch in text):
            if n is None:
                raise ValueError("sparse Pauli labels need an explicit qubit count")
            ops = {}
            for token in text.replace(",", " ").replace("*", " ").split():
                op, q = token[0].upper(), int(token[1:])
                if q in ops or not 0 <= q < n:
                    raise ValueError(f"bad qubit index in {label!r}")
                ops[q] = op
            text = "".join(ops.get(q, "I") for q in range(n))
        if n is not None and len(text) != n:
            raise ValueError(f"label {label!r} does not have {n} qubits")
        x = z = 0
        width = len(text)
        for q, ch in enumerate(text.upper()):
            bit = 1 << (width - 1 - q)
            if ch == "X":
                x |= bit
            elif ch == "Z":
                z |= bit
            elif ch == "Y":
                x |= bit
                z |= bit
            elif ch != "I":
                raise ValueError(f"unknown Pauli letter {ch!r}")
        return cls(width, x, z, sign)

    @classmethod
    def single(cls, n: int, qubit: int, op: str) -> "PauliString":
        return cls.from_label(f"{op}{qubit}", n)

    @property
    def label(self) -> str:
        chars = []
        for q in range(self.n):
            bit = 1 << (self.n - 1 - q)
            chars.append("IXZY"[bool(self.x_mask & bit) + 2 * bool(self.z_mask & bit)])
        return ("-" if self.sign < 0 else "") + "".join(chars)

    def __str__(self):
        return self.label

    @property
    def n_y(self) -> int:
        return int(self.x_mask & self.z_mask).bit_count()

    @property
    def weight(self) -> int:
        return int(self.x_mask | self.z_mask).bit_count()

    def is_identity(self) -> bool:
        return self.x_mask == 0 and self.z_mask == 0

    def commutes(self, other: "PauliString") -> bool:
        anti = (self.x_mask & other.z_mask).bit_count() + (self.z_mask & other.x_mask).bit_count()
        return anti % 2 == 0

    def compose(self, other: "PauliString") -> tuple[complex, "PauliString"]:
        """Return ``(phase, R)`` with ``self @ other == phase * R`` and ``R.sign == +1``."""
        if other.n != self.n:
            raise ValueError("qubit count mismatch")
        x = self.x_mask ^ other.x_mask
        z = self.z_mask ^ other.z_mask
        power = self.n_y + other.n_y - (x & z).bit_count() + 2 * (self.z_mask & other.x_mask).bit_count()
        phase = self.sign * other.sign * (1j ** (power % 4))
        return complex(phase), PauliString(self.n, x, z, 1)

    def __neg__(self):
        return PauliString(self.n, self.x_mask, self.z_mask, -self.sign)

    def tensor(self, other: "PauliString") -> "PauliString":
        """``self (x) other`` with ``self`` on the leading qubits."""
        return PauliString(
            self.n + other.n,
            (self.x_mask << other.n) | other.x_mask,
            (self.z_mask << other.n) | other.z_mask,
            self.sign * other.sign,
        )

    def lift(self, n_total: int, offset: int) -> "PauliString":
        """Embed into ``n_total`` qubits starting at qubit ``offset``."""
        shift = n_total - offset - self.n
        if shift < 0 or offset < 0:
            raise ValueError("Pauli word does not fit")
        return PauliString(n_total, self.x_mask << shift, self.z_mask << shift, self.sign)

    def to_matrix(self) -> np.ndarray:
        return pauli_matrix(self)


@lru_cache(maxsize=4096)
def _pauli_kernel(n: int, x: int, z: int, sign: int):
    idx = np.arange(1 << n, dtype=np.int64)
    src = idx ^ x
    parity = np.bitwise_count(src & z) & 1
    phase = sign * (1j ** ((x & z).bit_count() % 4)) * (1 - 2 * parity.astype(np.float64))
    return src, phase.astype(np.complex128)


def _bcast(vec: np.ndarray, arr: np.ndarray) -> np.ndarray:
    return vec.reshape(vec.shape + (1,) * (arr.ndim - 1))


def _pauli_array(arr: np.ndarray, p: PauliString) -> np.ndarray:
    src, phase = _pauli_kernel(p.n, p.x_mask, p.z_mask, p.sign)
    return _bcast(phase, arr) * arr[src]


def _rotation_array(arr: np.ndarray, p: PauliString, angle: float) -> np.ndarray:
    if p.is_identity():
        return np.exp(-1j * angle * p.sign) * arr
    return np.cos(angle) * arr - 1j * np.sin(angle) * _pauli_array(arr, p)


def pauli_matrix(p: PauliString) -> np.ndarray:
    return _pauli_array(np.eye(1 << p.n, dtype=np.complex128), p)


# --------------------------------------------------------------------------- gates

_H = np.array([[1, 1], [1, -1]], dtype=np.complex128) / np.sqrt(2)
_ONE_QUBIT_DIAG = {
    "S": np.array([1, 1j]),
    "SDG": np.array([1, -1j]),
    "Z": np.array([1, -1]),
}
_INVERSE_NAME = {"S": "SDG", "SDG": "S"}
GATE_ARITY = {"H": 1, "S": 1, "SDG": 1, "X": 1, "Y": 1, "Z": 1, "CNOT": 2, "CZ": 2, "SWAP": 2}


def _one_qubit_matrix(arr: np.ndarray, n: int, q: int, mat: np.ndarray) -> np.ndarray:
    shape = arr.shape
    view = arr.reshape((1 << q, 2, 1 << (n - q - 1), -1))
    out = np.einsum("ij,ajbk->aibk", mat, view)
    return out.reshape(shape)


def _one_qubit_diag(arr: np.ndarray, n: int, q: int, diag: np.ndarray) -> np.ndarray:
    shape = arr.shape
    view = arr.reshape((1 << q, 2, 1 << (n - q - 1), -1))
    return (view * diag.reshape(1, 2, 1, 1)).reshape(shape)


@lru_cache(maxsize=4096)
def _cnot_perm(n: int, c: int, t: int) -> np.ndarray:
    idx = np.arange(1 << n, dtype=np.int64)
    cb, tb = 1 << (n - 1 - c), 1 << (n - 1 - t)
    return np.where(idx & cb, idx ^ tb, idx)


@lru_cache(maxsize=4096)
def _swap_perm(n: int, a: int, b: int) -> np.ndarray:
    idx = np.arange(1 << n, dtype=np.int64)
    ab, bb = 1 << (n - 1 - a), 1 << (n - 1 - b)
    differ = ((idx & ab) > 0) != ((idx & bb) > 0)
    return np.where(differ, idx ^ ab ^ bb, idx)


@lru_cache(maxsize=4096)
def _cz_phase(n: int, a: int, b: int) -> np.ndarray:
    idx = np.arange(1 << n, dtype=np.int64)
    ab, bb = 1 << (n - 1 - a), 1 << (n - 1 - b)
    both = ((idx & ab) > 0) & ((idx & bb) > 0)
    return np.where(both, -1.0, 1.0).astype(np.complex128)


@dataclass(frozen=True)
class Gate:
    """One gate of a fixed circuit.

    ``name`` is one of ``H, S, SDG, X, Y, Z, CNOT, CZ, SWAP`` (acting on
    ``qubits``), ``ROT`` for ``exp(-i * angle * pauli)`` or ``PAULI`` for the
    bare word ``pauli``.
    """

    name: str
    qubits: tuple = ()
    pauli: PauliString | None = None
    angle: float = 0.0

    def __post_init__(self):
        name = self.name.upper()
        object.__setattr__(self, "name", name)
        object.__setattr__(self, "qubits", tuple(int(q) for q in self.qubits))
        if name in GATE_ARITY:
            if len(self.qubits) != GATE_ARITY[name]:
                raise ValueError(f"{name} acts on {GATE_ARITY[name]} qubit(s)")
            if len(set(self.qubits)) != len(self.qubits):
                raise ValueError(f"{name} needs distinct qubits")
        elif name in ("ROT", "PAULI"):
            if self.pauli is None:
                raise ValueError(f"{name} needs a Pauli word")
        else:
            raise ValueError(f"unknown gate {self.name!r}")

    def inverse(self) -> "Gate":
        if self.name in ("S", "SDG"):
            return Gate(_INVERSE_NAME[self.name], self.qubits)
        if self.name == "ROT":
            return Gate("ROT", pauli=self.pauli, angle=-self.angle)
        return self

    def apply_array(self, arr: np.ndarray, n: int) -> np.ndarray:
        name, qs = self.name, self.qubits
        if name == "H":
            return _one_qubit_matrix(arr, n, qs[0], _H)
        if name in _ONE_QUBIT_DIAG:
            return _one_qubit_diag(arr, n, qs[0], _ONE_QUBIT_DIAG[name])
        if name in ("X", "Y"):
            return _pauli_array(arr, PauliString.single(n, qs[0], name))
        if name == "CNOT":
            return arr[_cnot_perm(n, *qs)]
        if name == "SWAP":
            return arr[_swap_perm(n, *qs)]
        if name == "CZ":
            return _bcast(_cz_phase(n, *qs), arr) * arr
        if self.pauli.n != n:
            raise ValueError("Pauli gate width does not match the register")
        if name == "ROT":
            return _rotation_array(arr, self.pauli, self.angle)
        return _pauli_array(arr, self.pauli)

    def shifted(self, n_total: int, offset: int) -> "Gate":
        if self.pauli is not None:
            return Gate(self.name, (), self.pauli.lift(n_total, offset), self.angle)
        return Gate(self.name, tuple(q + offset for q in self.qubits))

    def to_json(self) -> dict:
        if self.name == "ROT":
            return {"gate": "ROT", "pauli": self.pauli.label, "angle": self.angle}
        if self.name == "PAULI":
            return {"gate": "PAULI", "pauli": self.pauli.label}
        return {"gate": self.name, "qubits": list(self.qubits)}

    @classmethod
    def from_json(cls, doc: dict, n: int) -> "Gate":
        name = doc["gate"].upper()
        if name in ("ROT", "PAULI"):
            return cls(name, pauli=PauliString.from_label(doc["pauli"], n), angle=float(doc.get("angle", 0.0)))
        return cls(name, tuple(doc["qubits"]))


@dataclass(frozen=True)
class Circuit:
    """Immutable gate list on ``n`` qubits, applied first-to-last."""

    n: int
    gates: tuple = ()

    def __post_init__(self):
        object.__setattr__(self, "gates", tuple(self.gates))
        for g in self.gates:
            if any(q >= self.n for q in g.qubits) or (g.pauli is not None and g.pauli.n != self.n):
                raise ValueError(f"gate {g} does not fit on {self.n} qubits")

    def __len__(self):
        return len(self.gates)

    def __add__(self, other: "Circuit") -> "Circuit":
        if other.n != self.n:
            raise ValueError("qubit count mismatch")
        return Circuit(self.n, self.gates + other.gates)

    def inverse(self) -> "Circuit":
        return Circuit(self.n, tuple(g.inverse() for g in reversed(self.gates)))

    def shifted(self, n_total: int, offset: int) -> "Circuit":
        return Circuit(n_total, tuple(g.shifted(n_total, offset) for g in self.gates))

    def apply_array(self, arr: np.ndarray, ledger=None, phase: str = "main", copies: int = 0) -> np.ndarray:
        if arr.shape[0] != 1 << self.n:
            raise ValueError(f"circuit on {self.n} qubits applied to dimension {arr.shape[0]}")
        for g in self.gates:
            arr = g.apply_array(arr, self.n)
        if ledger is not None and self.gates:
            ledger.gates(len(self.gates), phase, copies)
        return arr

    def apply(self, s: "StateVector", ledger=None, phase: str = "main") -> "StateVector":
        return StateVector(self.n, self.apply_array(s.amps, ledger, phase))

    def unitary(self) -> np.ndarray:
        return self.apply_array(np.eye(1 << self.n, dtype=np.complex128))

    def to_json(self) -> list:
        return [g.to_json() for g in self.gates]

    @classmethod
    def from_json(cls, docs: Iterable[dict], n: int) -> "Circuit":
        return cls(n, tuple(Gate.from_json(d, n) for d in docs))

    @classmethod
    def rotation(cls, p: PauliString, angle: float) -> "Circuit":
        return cls(p.n, (Gate("ROT", pauli=p, angle=angle),))


# --------------------------------------------------------------------------- states


@dataclass(frozen=True)
class StateVector:
    n: int
    amps: np.ndarray = field(repr=False)

    def __post_init__(self):
        amps = np.asarray(self.amps, dtype=np.complex128)
        if amps.shape != (1 << self.n,):
            raise ValueError(f"expected {1 << self.n} amplitudes, got shape {amps.shape}")
        norm = np.linalg.norm(amps)
        if abs(norm - 1.0) > 1e-10:
            raise ValueError(f"state is not normalised (norm {norm})")
        object.__setattr__(self, "amps", amps)

    @classmethod
    def from_amplitudes(cls, amps, normalize: bool = False) -> "StateVector":
        amps = np.asarray(amps, dtype=np.complex128)
        n = int(round(np.log2(amps.size)))
        if normalize:
            amps = amps / np.linalg.norm(amps)
        return cls(n, amps)

    @classmethod
    def basis(cls, n: int, index: int = 0) -> "StateVector":
        amps = np.zeros(1 << n, dtype=np.complex128)
        amps[index] = 1.0
        return cls(n, amps)

    @classmethod
    def from_bits(cls, bits: str) -> "StateVector":
        return cls.basis(len(bits), int(bits, 2) if bits else 0)

    def tensor(self, other: "StateVector") -> "StateVector":
        return StateVector(self.n + other.n, np.kron(self.amps, other.amps))

    def inner(self, other: "StateVector") -> complex:
        """``<self|other>``."""
        return complex(np.vdot(self.amps, other.amps))

    def fidelity(self, other: "StateVector") -> float:
        return abs(self.inner(other)) ** 2

    def density(self) -> "DensityMatrix":
        return DensityMatrix(self.n, np.outer(self.amps, self.amps.conj()))

    def probabilities(self) -> np.ndarray:
        p = np.abs(self.amps) ** 2
        return p / p.sum()


@dataclass(frozen=True)
class DensityMatrix:
    n: int
    mat: np.ndarray = field(repr=False)

    def __post_init__(self):
        mat = np.asarray(self.mat, dtype=np.complex128)
        dim = 1 << self.n
        if mat.shape != (dim, dim):
            raise ValueError(f"expected a {dim}x{dim} matrix, got {mat.shape}")
        if np.max(np.abs(mat - mat.conj().T), initial=0.0) > HERM_TOL:
            raise ValueError("density matrix is not Hermitian")
        if abs(np.trace(mat).real - 1.0) > 1e-10:
            raise ValueError("density matrix does not have unit trace")
        object.__setattr__(self, "mat", mat)

    @classmethod
    def maximally_mixed(cls, n: int) -> "DensityMatrix":
        dim = 1 << n
        return cls(n, np.eye(dim, dtype=np.complex128) / dim)

    def eigenvalues(self) -> np.ndarray:
        return np.linalg.eigvalsh(self.mat)

    def is_valid(self, tol: float = 1e-8) -> bool:
        return bool(self.eigenvalues().min() >= -tol)

    def purity(self) -> float:
        return float(np.real(np.trace(self.mat @ self.mat)))


def zero_state(n: int) -> StateVector:
    return StateVector.basis(n, 0)


def random_state(n: int, rng) -> StateVector:
    gen = as_generator(rng)
    v = gen.normal(size=1 << n) + 1j * gen.normal(size=1 << n)
    return StateVector(n, v / np.linalg.norm(v))


def random_density(n: int, rng, rank: int | None = None) -> DensityMatrix:
    gen = as_generator(rng)
    dim = 1 << n
    rank = dim if rank is None else rank
    g = gen.normal(size=(dim, rank)) + 1j * gen.normal(size=(dim, rank))
    rho = g @ g.conj().T
    rho = (rho + rho.conj().T) / 2
    return DensityMatrix(n, rho / np.trace(rho).real)


# --------------------------------------------------------------------------- operations


def _check_width(s, n: int):
    if s.n != n:
        raise ValueError(f"dimension mismatch: state on {s.n} qubits, operator on {n}")


def apply_pauli(s: StateVector, p: PauliString, ledger=None) -> StateVector:
    _check_width(s, p.n)
    if ledger is not None:
        ledger.gates(1)
    return StateVector(s.n, _pauli_array(s.amps, p))


def apply_pauli_rotation(s: StateVector, p: PauliString, angle: float, ledger=None) -> StateVector:
    """``exp(-i * angle * P) |s>``."""
    _check_width(s, p.n)
    if ledger is not None:
        ledger.gates(1)
    return StateVector(s.n, _rotation_array(s.amps, p, angle))


def _action_on_array(action, arr: np.ndarray, ledger=None) -> np.ndarray:
    if isinstance(action, Circuit):
        return action.apply_array(arr, ledger)
    if isinstance(action, PauliString):
        if ledger is not None:
            ledger.gates(1)
        return _pauli_array(arr, action)
    if isinstance(action, np.ndarray):
        if action.shape != (arr.shape[0], arr.shape[0]):
            raise ValueError("unitary matrix does not match the target register")
        if ledger is not None:
            ledger.gates(1)
        return np.tensordot(action, arr, axes=(1, 0))
    return action(arr)


def controlled_array(arr: np.ndarray, n: int, control_qubit: int, control_value: int, action, ledger=None):
    """Array form of :func:`apply_controlled`; ``action`` acts on the other ``n - 1`` qubits."""
    if not 0 <= control_qubit < n:
        raise ValueError("control qubit out of range")
    if isinstance(action, (Circuit, PauliString)) and action.n != n - 1:
        raise ValueError(f"controlled action must act on {n - 1} qubits")
    shape = arr.shape
    view = arr.reshape((1 << control_qubit, 2, 1 << (n - control_qubit - 1)) + shape[1:])
    out = view.copy()
    branch = np.ascontiguousarray(view[:, control_value])
    sub = branch.reshape((1 << (n - 1),) + shape[1:])
    new = _action_on_array(action, sub, ledger)
    if new.shape != sub.shape:
        raise ValueError("controlled action changed the register dimension")
    out[:, control_value] = new.reshape(branch.shape)
    return out.reshape(shape)


def apply_controlled(s: StateVector, control_qubit: int, control_value: int, action, ledger=None) -> StateVector:
    """Apply ``action`` to the remaining qubits on the ``control_value`` branch only.

    ``action`` may be a :class:`Circuit` or :class:`PauliString` on ``n - 1``
    qubits, a dense unitary, or a callable acting on the leading axis.
    """
    if control_value not in (0, 1):
        raise ValueError("control value must be 0 or 1")
    return StateVector(s.n, controlled_array(s.amps, s.n, control_qubit, control_value, action, ledger))


def _observable_kind(obs, dim: int):
    if isinstance(obs, PauliString):
        if obs.n != int(np.log2(dim)):
            raise ValueError("dimension mismatch between state and observable")
        return "pauli"
    arr = np.asarray(obs)
    if arr.ndim == 1:
        if arr.shape != (dim,):
            raise ValueError("diagonal observable has the wrong length")
        if np.iscomplexobj(arr) and np.max(np.abs(arr.imag)) > HERM_TOL:
            raise ValueError("diagonal observable is not Hermitian")
        return "diag"
    if arr.shape != (dim, dim):
        raise ValueError("dimension mismatch between state and observable")
    if np.max(np.abs(arr - arr.conj().T)) > HERM_TOL:
        raise ValueError("observable is not Hermitian")
    return "dense"


def expectation(s: StateVector, obs) -> float:
    """Exact ``<s|O|s>`` for a Pauli word, a diagonal (1-D array) or a dense Hermitian matrix."""
    kind = _observable_kind(obs, s.amps.size)
    if kind == "pauli":
        return float(np.real(np.vdot(s.amps, _pauli_array(s.amps, obs))))
    if kind == "diag":
        return float(np.dot(np.abs(s.amps) ** 2, np.real(obs)))
    return float(np.real(np.vdot(s.amps, np.asarray(obs) @ s.amps)))


def _plus_probability(value: float) -> float:
    return min(1.0, max(0.0, 0.5 * (1.0 + value)))


def sample_outcome(s: StateVector, obs, rng) -> int:
    """One two-outcome measurement: ``+1`` with probability ``(1 + <obs>)/2``."""
    p = _plus_probability(expectation(s, obs))
    return 1 if as_generator(rng).random() < p else -1


def sample_plus_count(value: float, shots: int, rng) -> int:
    """Number of ``+1`` outcomes in ``shots`` measurements with mean ``value``."""
    return int(as_generator(rng).binomial(shots, _plus_probability(value)))


BELL_LABELS = ("Phi+", "Phi-", "Psi+", "Psi-")


@lru_cache(maxsize=16)
def _bell_index_map(n: int) -> np.ndarray:
    """Map joint computational index (a bits, then b bits) to the base-4 Bell outcome code."""
    idx = np.arange(1 << (2 * n), dtype=np.int64)
    code = np.zeros_like(idx)
    for j in range(n):
        ma = (idx >> (2 * n - 1 - j)) & 1
        mb = (idx >> (n - 1 - j)) & 1
        code += (ma + 2 * mb) * 4 ** (n - 1 - j)
    return code


def bell_outcome_distribution(a: StateVector, b: StateVector) -> np.ndarray:
    """Born probabilities of the transversal Bell measurement on ``a (x) b``.

    Entry ``c`` is the probability of the outcome whose base-4 digits (qubit 0
    most significant) are the per-qubit Bell indices ``0=Phi+, 1=Phi-, 2=Psi+, 3=Psi-``.
    """
    if a.n != b.n:
        raise ValueError("Bell sampling needs two states on the same number of qubits")
    n = a.n
    joint = np.kron(a.amps, b.amps)
    for j in range(n):
        joint = joint[_cnot_perm(2 * n, j, n + j)]
        joint = _one_qubit_matrix(joint, 2 * n, j, _H)
    probs = np.zeros(4**n)
    np.add.at(probs, _bell_index_map(n), np.abs(joint) ** 2)
    return probs / probs.sum()


def _digits(code: int, n: int) -> tuple:
    return tuple((code // 4 ** (n - 1 - j)) % 4 for j in range(n))


def bell_sample_pair(a: StateVector, b: StateVector, rng) -> tuple:
    """Per-qubit Bell indices from one transversal Bell measurement of ``a (x) b``."""
    probs = bell_outcome_distribution(a, b)
    code = int(as_generator(rng).choice(probs.size, p=probs))
    return _digits(code, a.n)


def bell_sample_counts(a: StateVector, b: StateVector, pairs: int, rng) -> np.ndarray:
    """Outcome histogram (length ``4**n``) of ``pairs`` independent Bell measurements."""
    return as_generator(rng).multinomial(pairs, bell_outcome_distribution(a, b))


def evolve_density(rho: DensityMatrix, u) -> DensityMatrix:
    """``U rho U^dagger`` for a circuit, dense unitary or leading-axis callable ``u``."""
    if isinstance(u, (Circuit, PauliString)):
        _check_width(rho, u.n)
    half = _action_on_array(u, rho.mat)
    full = _action_on_array(u, half.conj().T).conj().T
    full = (full + full.conj().T) / 2
    return DensityMatrix(rho.n, full)


def trace_distance(a: DensityMatrix, b: DensityMatrix) -> float:
    """``||a - b||_1 / 2``."""
    if a.n != b.n:
        raise ValueError("trace distance needs equal dimensions")
    diff = a.mat - b.mat
    if np.max(np.abs(diff - diff.conj().T)) > 1e-9:
        raise ValueError("difference is not Hermitian")
    return float(0.5 * np.sum(np.abs(np.linalg.eigvalsh((diff + diff.conj().T) / 2))))


def apply_channel(rho: DensityMatrix, kraus: Sequence[np.ndarray]) -> DensityMatrix:
    out = sum(k @ rho.mat @ k.conj().T for k in kraus)
    return DensityMatrix(rho.n, (out + out.conj().T) / 2)


def random_channel(n: int, n_kraus: int, rng) -> list:
    """Kraus operators of a random CPTP map (Stinespring isometry slices)."""
    gen = as_generator(rng)
    dim = 1 << n
    g = gen.normal(size=(dim * n_kraus, dim)) + 1j * gen.normal(size=(dim * n_kraus, dim))
    q, _ = np.linalg.qr(g)
    return [q[i * dim:(i + 1) * dim] for i in range(n_kraus)]


def post_selected_damage(rho: DensityMatrix, kraus_op: np.ndarray) -> float:
    """Trace distance between ``rho`` and its normalised post-measurement state.

    A measurement is alpha-gentle on a set of states when this damage is at
    most alpha for every outcome and state in the set.
    """
    post = kraus_op @ rho.mat @ kraus_op.conj().T
    prob = np.trace(post).real
    if prob <= 0:
        raise ValueError("outcome has zero probability")
    return trace_distance(DensityMatrix(rho.n, (post + post.conj().T) / (2 * prob)), rho)
