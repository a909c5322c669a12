"""Uniform random Clifford sampling, tableau synthesis and Clifford classical shadows."""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .ledger import CopyLedger
from .qcore import Circuit, Gate, PauliString, StateVector
from .rng import as_generator

__all__ = [
    "CliffordTableau",
    "conjugate_pauli",
    "sample_random_clifford",
    "synthesize",
    "clifford_shadow_fidelities",
    "median_of_means",
    "shadow_count",
    "KAPPA_S",
]

MAX_CLIFFORD_QUBITS = 6
KAPPA_S = 8.0


def conjugate_pauli(gate: Gate, p: PauliString) -> PauliString:
    """``g P g^dagger`` for a Clifford gate ``g`` from the shared gate vocabulary."""
    n = p.n
    x, z, sign = p.x_mask, p.z_mask, p.sign
    bit = lambda q: 1 << (n - 1 - q)
    name = gate.name
    if name in ("X", "Y", "Z"):
        b = bit(gate.qubits[0])
        hx, hz = bool(x & b), bool(z & b)
        flip = {"X": hz, "Z": hx, "Y": hx != hz}[name]
        return PauliString(n, x, z, -sign if flip else sign)
    if name == "H":
        b = bit(gate.qubits[0])
        hx, hz = bool(x & b), bool(z & b)
        if hx and hz:
            sign = -sign
        x = (x & ~b) | (b if hz else 0)
        z = (z & ~b) | (b if hx else 0)
        return PauliString(n, x, z, sign)
    if name in ("S", "SDG"):
        b = bit(gate.qubits[0])
        if x & b:
            had_z = bool(z & b)
            if had_z == (name == "S"):
                sign = -sign
            z ^= b
        return PauliString(n, x, z, sign)
    if name == "CNOT":
        cb, tb = bit(gate.qubits[0]), bit(gate.qubits[1])
        xc, zc, xt, zt = bool(x & cb), bool(z & cb), bool(x & tb), bool(z & tb)
        if xc and zt and (xt == zc):
            sign = -sign
        if xc:
            x ^= tb
        if zt:
            z ^= cb
        return PauliString(n, x, z, sign)
    if name == "CZ":
        a, b2 = gate.qubits
        out = conjugate_pauli(Gate("H", (b2,)), p)
        out = conjugate_pauli(Gate("CNOT", (a, b2)), out)
        return conjugate_pauli(Gate("H", (b2,)), out)
    if name == "SWAP":
        a, b2 = gate.qubits
        for c, t in ((a, b2), (b2, a), (a, b2)):
            p = conjugate_pauli(Gate("CNOT", (c, t)), p)
        return p
    raise ValueError(f"{name} is not a Clifford gate of the shared vocabulary")


def _omega(a: tuple, b: tuple) -> int:
    return ((a[0] & b[1]).bit_count() + (a[1] & b[0]).bit_count()) & 1


@dataclass
class CliffordTableau:
    """Images ``C X_i C^dag`` (rows ``0..n-1``) and ``C Z_i C^dag`` (rows ``n..2n-1``)."""

    n: int
    rows: tuple

    def __post_init__(self):
        self.rows = tuple(self.rows)
        if len(self.rows) != 2 * self.n or any(r.n != self.n for r in self.rows):
            raise ValueError("a tableau has 2n rows on n qubits")
        if not self.is_symplectic():
            raise ValueError("tableau rows violate the symplectic commutation relations")
        self._circuit = None

    @classmethod
    def identity(cls, n: int) -> "CliffordTableau":
        xs = [PauliString.single(n, q, "X") for q in range(n)]
        zs = [PauliString.single(n, q, "Z") for q in range(n)]
        return cls(n, xs + zs)

    @property
    def x_images(self):
        return self.rows[: self.n]

    @property
    def z_images(self):
        return self.rows[self.n:]

    def is_symplectic(self) -> bool:
        vecs = [(r.x_mask, r.z_mask) for r in self.rows]
        n = self.n
        for i in range(2 * n):
            for j in range(2 * n):
                want = 1 if abs(i - j) == n else 0
                if _omega(vecs[i], vecs[j]) != want:
                    return False
        return True

    def key(self) -> tuple:
        return tuple((r.x_mask, r.z_mask, r.sign) for r in self.rows)

    def conjugate(self, p: PauliString) -> PauliString:
        """``C P C^dag`` from the tableau rows."""
        if p.n != self.n:
            raise ValueError("Pauli width does not match the tableau")
        phase = complex(p.sign) * (1j ** p.n_y)
        acc = PauliString.identity(self.n)
        for q in range(self.n):
            b = 1 << (self.n - 1 - q)
            if p.x_mask & b:
                ph, acc = acc.compose(self.rows[q])
                phase *= ph
            if p.z_mask & b:
                ph, acc = acc.compose(self.rows[self.n + q])
                phase *= ph
        sign = int(round(phase.real))
        if abs(phase - sign) > 1e-9:
            raise ArithmeticError("Clifford image acquired a non-real phase")
        return PauliString(self.n, acc.x_mask, acc.z_mask, sign)

    @property
    def circuit(self) -> Circuit:
        if self._circuit is None:
            self._circuit = synthesize(self)
        return self._circuit


def sample_random_clifford(n: int, rng) -> CliffordTableau:
    """Uniformly random n-qubit Clifford (modulo global phase).

    Builds a uniformly random symplectic basis one pair at a time, each new
    pair drawn from the symplectic complement of the previous ones, then draws
    ``2n`` uniform sign bits.
    """
    if not 1 <= n <= MAX_CLIFFORD_QUBITS:
        raise ValueError(f"random Cliffords are supported for 1 <= n <= {MAX_CLIFFORD_QUBITS}")
    gen = as_generator(rng)
    full = 1 << n
    xs, zs = [], []

    def draw_in_complement():
        v = (int(gen.integers(full)), int(gen.integers(full)))
        vx, vz = v
        for xk, zk in zip(xs, zs):
            if _omega(v, zk):
                vx, vz = vx ^ xk[0], vz ^ xk[1]
            if _omega(v, xk):
                vx, vz = vx ^ zk[0], vz ^ zk[1]
        return vx, vz

    for _ in range(n):
        while True:
            xv = draw_in_complement()
            if xv != (0, 0):
                break
        while True:
            zv = draw_in_complement()
            if _omega(xv, zv) == 1:
                break
        xs.append(xv)
        zs.append(zv)
    signs = 1 - 2 * gen.integers(0, 2, size=2 * n)
    rows = [PauliString(n, v[0], v[1], int(s)) for v, s in zip(xs + zs, signs)]
    return CliffordTableau(n, rows)


def synthesize(t: CliffordTableau) -> Circuit:
    """Gate list over ``{H, S, SDG, CNOT, X, Z}`` implementing the tableau.

    Sweeps qubit by qubit, reducing the images of ``X_i`` and ``Z_i`` to
    themselves by conjugation; the circuit is the inverse of that reduction.
    """
    n = t.n
    rows = list(t.rows)
    ops: list[Gate] = []

    def apply(g: Gate):
        ops.append(g)
        for idx in range(2 * n):
            rows[idx] = conjugate_pauli(g, rows[idx])

    def has(p, mask_name, q):
        return bool(getattr(p, mask_name) & (1 << (n - 1 - q)))

    def to_pure_x(idx, start):
        p = rows[idx]
        for q in range(start, n):
            hx, hz = has(p, "x_mask", q), has(p, "z_mask", q)
            if hx and hz:
                apply(Gate("S", (q,)))
            elif hz:
                apply(Gate("H", (q,)))
            p = rows[idx]

    for i in range(n):
        to_pure_x(i, i)
        a = rows[i]
        if not has(a, "x_mask", i):
            q = next(q for q in range(i + 1, n) if has(a, "x_mask", q))
            apply(Gate("CNOT", (q, i)))
        for q in range(i + 1, n):
            if has(rows[i], "x_mask", q):
                apply(Gate("CNOT", (i, q)))
        apply(Gate("H", (i,)))
        to_pure_x(n + i, i + 1)
        if has(rows[n + i], "z_mask", i):
            apply(Gate("S", (i,)))
        for q in range(i + 1, n):
            if has(rows[n + i], "x_mask", q):
                apply(Gate("CNOT", (i, q)))
        apply(Gate("H", (i,)))
    for i in range(n):
        if rows[i].sign < 0:
            apply(Gate("Z", (i,)))
        if rows[n + i].sign < 0:
            apply(Gate("X", (i,)))
    return Circuit(n, tuple(g.inverse() for g in reversed(ops)))


def shadow_count(K: int, eps: float, kappa_S: float = KAPPA_S) -> int:
    """Snapshots for ``K`` fidelities to precision ``eps``: ``floor(kappa_S * log(K) / eps^2)``.

    Rounded down so the count never exceeds the stated budget; the log is clamped at 1.
    """
    return max(1, math.floor(kappa_S * max(math.log(max(K, 1)), 1.0) / eps**2))


def median_of_means(samples: np.ndarray, groups: int) -> np.ndarray:
    """Median over ``groups`` contiguous blocks of the per-block means (along axis 0)."""
    samples = np.asarray(samples)
    groups = max(1, min(int(groups), samples.shape[0]))
    blocks = np.array_split(samples, groups, axis=0)
    return np.median(np.stack([b.mean(axis=0) for b in blocks]), axis=0)


def _resolve_source(source) -> StateVector:
    return source() if callable(source) else source


def clifford_shadow_fidelities(psi_source, candidates: Sequence[StateVector], shots: int, rng, *,
                               delta: float = 0.1, groups: int | None = None,
                               ledger: CopyLedger | None = None) -> np.ndarray:
    """Median-of-means Clifford-shadow estimates of ``|<phi_i|psi>|^2`` for every candidate.

    Each snapshot applies a uniform random Clifford ``C`` to a fresh copy of
    ``psi``, measures a basis outcome ``b`` and contributes
    ``(2^n + 1) |<b|C|phi_i>|^2 - 1`` for every candidate at once.
    """
    candidates = list(candidates)
    K = len(candidates)
    if K == 0:
        raise ValueError("need at least one candidate state")
    if shots < 1:
        raise ValueError("need at least one snapshot")
    gen = as_generator(rng)
    psi = _resolve_source(psi_source)
    n = psi.n
    if any(c.n != n for c in candidates):
        raise ValueError("candidate and target widths differ")
    cand = np.stack([c.amps for c in candidates], axis=1)
    dim = 1 << n
    estimates = np.empty((shots, K))
    for s in range(shots):
        u = sample_random_clifford(n, gen).circuit.unitary()
        probs = np.abs(u @ psi.amps) ** 2
        b = int(gen.choice(dim, p=probs / probs.sum()))
        estimates[s] = (dim + 1) * np.abs(u[b] @ cand) ** 2 - 1
    if ledger is not None:
        ledger.charge("shadows", copies_consumed=shots, destructive_shots=shots, circuit_executions=shots)
    if groups is None:
        groups = math.ceil(2 * math.log(2 * K / delta))
    return median_of_means(estimates, groups)
