"""Two-copy Bell-sampling gradient scheme and circuit identification by Clifford shadows.

The gradient targets here are ``2 tr(sigma P_k)`` for ``sigma = V rho V^dag``:
magnitudes come from transversal Bell measurements on pairs of copies (one
batch of pairs serves every Pauli at once), signs from single-copy votes on
the candidates whose magnitude clears the threshold.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, NamedTuple, Sequence

import numpy as np

from .clifford import KAPPA_S, clifford_shadow_fidelities, shadow_count
from .ledger import CopyLedger, ResourceCapError
from .models import GradientReport
from .qcore import GATE_ARITY, Circuit, Gate, PauliString, StateVector, bell_outcome_distribution, expectation, sample_plus_count
from .rng import as_generator

__all__ = [
    "BELL_FACTOR",
    "BellEstimate",
    "bell_character",
    "bell_pairs",
    "pauli_magnitudes_bell",
    "sign_vote_shots",
    "pauli_signs_vote",
    "special_case_gradient",
    "enumerate_circuit_states",
    "Identification",
    "identify_circuit",
    "KAPPA_B",
]

KAPPA_B = 4.0
MAX_ENUMERATION = 10**6

# Eigenvalue of P (x) P on each Bell state; rows I, X, Y, Z and columns Phi+, Phi-, Psi+, Psi-.
BELL_FACTOR = np.array(
    [
        [1, 1, 1, 1],
        [1, -1, 1, -1],
        [-1, 1, 1, -1],
        [1, 1, -1, -1],
    ],
    dtype=np.int8,
)
_LETTER_ROW = {"I": 0, "X": 1, "Y": 2, "Z": 3}


@dataclass(frozen=True)
class BellEstimate:
    pauli: PauliString
    squared_mean: float
    samples: int

    def __post_init__(self):
        if self.samples < 1:
            raise ValueError("an estimate needs at least one sample")

    @property
    def magnitude(self) -> float:
        """``sqrt(max(mean, 0))``, the estimate of ``|tr(P sigma)|``."""
        return math.sqrt(max(self.squared_mean, 0.0))


def bell_character(p: PauliString) -> np.ndarray:
    """``chi_P`` on every joint outcome code: the product of per-qubit Bell factors."""
    n = p.n
    codes = np.arange(4**n)
    chi = np.ones(4**n, dtype=np.int8)
    label = p.label.lstrip("-")
    for j, letter in enumerate(label):
        digit = (codes // 4 ** (n - 1 - j)) % 4
        chi *= BELL_FACTOR[_LETTER_ROW[letter], digit]
    return chi


def _resolve(source) -> StateVector:
    return source() if callable(source) else source


def bell_pairs(M: int, eps: float, kappa_B: float = KAPPA_B) -> int:
    """State pairs for ``M`` magnitudes: ``ceil(kappa_B * log(M) / eps^4)`` (log clamped at 1)."""
    return math.ceil(kappa_B * max(math.log(max(M, 1)), 1.0) / eps**4)


def pauli_magnitudes_bell(sigma_source, paulis: Sequence[PauliString], eps: float, rng, *,
                          kappa_B: float = KAPPA_B, pairs: int | None = None,
                          ledger: CopyLedger | None = None) -> list:
    """Estimate ``tr(P sigma)^2`` for every Pauli from one shared batch of Bell measurements."""
    paulis = list(paulis)
    sigma = _resolve(sigma_source)
    if any(p.n != sigma.n for p in paulis):
        raise ValueError("Pauli and state widths differ")
    if not paulis:
        return []
    gen = as_generator(rng)
    pairs = bell_pairs(len(paulis), eps, kappa_B) if pairs is None else int(pairs)
    counts = gen.multinomial(pairs, bell_outcome_distribution(sigma, sigma))
    if ledger is not None:
        ledger.charge("magnitude", copies_consumed=2 * pairs, destructive_shots=pairs)
    out = []
    for p in paulis:
        mean = float(np.dot(counts, bell_character(p))) / pairs
        out.append(BellEstimate(p, min(1.0, max(-1.0, mean)), pairs))
    return out


def sign_vote_shots(M: int, eps: float) -> int:
    """Single-copy measurements per candidate: ``ceil(8 ln(M) / eps^2)`` (log clamped at 1)."""
    return math.ceil(8.0 * max(math.log(max(M, 1)), 1.0) / eps**2)


def pauli_signs_vote(sigma_source, candidates: Sequence[PauliString], eps: float, rng, *,
                     M: int | None = None, ledger: CopyLedger | None = None) -> list:
    """Majority sign of ``tr(P sigma)`` per candidate from direct single-copy measurements."""
    candidates = list(candidates)
    if not candidates:
        return []
    sigma = _resolve(sigma_source)
    gen = as_generator(rng)
    shots = sign_vote_shots(len(candidates) if M is None else M, eps)
    signs = []
    for p in candidates:
        plus = sample_plus_count(expectation(sigma, p), shots, gen)
        signs.append(1 if 2 * plus >= shots else -1)
    if ledger is not None:
        ledger.charge("sign", copies_consumed=shots * len(candidates), destructive_shots=shots * len(candidates))
    return signs


def special_case_gradient(V: Circuit, rho_source, paulis: Sequence[PauliString], eps: float, rng, *,
                          kappa_B: float = KAPPA_B) -> GradientReport:
    """Estimates of ``2 tr(V rho V^dag P_k)`` for every ``k`` to ``eps`` in the max norm.

    Magnitudes are estimated to ``eps/4``; components below ``eps/4`` are
    reported as zero, the rest get a sign from a vote at precision ``eps/4``.
    The ledger keeps the ``magnitude`` and ``sign`` phases separate.
    """
    paulis = list(paulis)
    gen = as_generator(rng)
    rho = _resolve(rho_source)
    if rho.n != V.n:
        raise ValueError("circuit and state widths differ")
    sigma = StateVector(rho.n, V.apply_array(rho.amps))
    ledger = CopyLedger()
    M = len(paulis)
    mags = pauli_magnitudes_bell(sigma, paulis, eps / 4, gen, kappa_B=kappa_B, ledger=ledger)
    keep = [i for i, est in enumerate(mags) if est.magnitude >= eps / 4]
    signs = pauli_signs_vote(sigma, [paulis[i] for i in keep], eps / 4, gen, M=M, ledger=ledger)
    values = np.zeros(M)
    for i, s in zip(keep, signs):
        values[i] = 2.0 * s * mags[i].magnitude
    ledger.copies_total = ledger.copies_consumed
    return GradientReport(values, "pauli-gentle", ledger, eps, {"candidates": len(keep), "magnitudes": mags})


# --------------------------------------------------------------------------- circuit identification


def _placements(gate_set: Sequence[str], n: int) -> list:
    out = []
    for name in gate_set:
        name = name.upper()
        arity = GATE_ARITY.get(name)
        if arity is None:
            raise ValueError(f"gate {name!r} is not in the shared vocabulary")
        if arity == 1:
            out.extend(Gate(name, (q,)) for q in range(n))
        else:
            out.extend(Gate(name, (a, b)) for a in range(n) for b in range(n) if a != b)
    return out


def _state_key(amps: np.ndarray, decimals: int = 8) -> bytes:
    idx = int(np.argmax(np.abs(amps) > 1e-6))
    phase = amps[idx] / abs(amps[idx])
    canon = np.round(amps / phase, decimals) + 0.0
    return canon.tobytes()


def enumerate_circuit_states(gate_set: Sequence[str], p: int, n: int,
                             cap: int = MAX_ENUMERATION) -> tuple[list, list]:
    """Distinct states reachable from ``|0...0>`` with at most ``p`` gates.

    Returns the shortest circuit found for each state and the states. States
    equal up to global phase are merged.
    """
    G = len(gate_set)
    if (n * G) ** (2 * p) > cap:
        raise ResourceCapError(f"enumeration bound (n*G)^(2p) = {(n * G) ** (2 * p)} exceeds {cap}")
    moves = _placements(gate_set, n)
    start = StateVector.basis(n, 0)
    seen = {_state_key(start.amps): 0}
    circuits, states = [Circuit(n)], [start.amps]
    frontier = [0]
    for _ in range(p):
        nxt = []
        for idx in frontier:
            for g in moves:
                amps = g.apply_array(states[idx], n)
                key = _state_key(amps)
                if key in seen:
                    continue
                seen[key] = len(states)
                circuits.append(Circuit(n, circuits[idx].gates + (g,)))
                states.append(amps)
                nxt.append(len(states) - 1)
        frontier = nxt
    return circuits, [StateVector(n, a) for a in states]


class Identification(NamedTuple):
    circuit: Circuit
    state: StateVector
    candidates: int
    shots: int
    estimates: np.ndarray
    ledger: CopyLedger


def identify_circuit(gate_set: Sequence[str], p: int, n: int, psi_source, rng, *, eps: float = 0.2,
                     delta: float = 0.1, kappa_S: float = KAPPA_S, shots: int | None = None) -> Identification:
    """Enumerate circuit outputs, estimate their fidelities with ``psi`` and return the best."""
    if n > 3:
        raise ResourceCapError("circuit identification is limited to n <= 3 qubits")
    circuits, states = enumerate_circuit_states(gate_set, p, n)
    K = len(states)
    shots = shadow_count(K, eps, kappa_S) if shots is None else int(shots)
    ledger = CopyLedger()
    est = clifford_shadow_fidelities(psi_source, states, shots, as_generator(rng), delta=delta, ledger=ledger)
    ledger.copies_total = ledger.copies_consumed
    best = int(np.argmax(est))
    return Identification(circuits[best], states[best], K, shots, est, ledger)
