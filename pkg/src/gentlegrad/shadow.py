"""Online shadow tomography and the gradient backpropagation protocol built on it.

The hypothesis state is a dense density matrix updated by matrix
multiplicative weights. Threshold search is emulated at its interface: a
check draws single-copy outcomes from the current batch, reports ``pass`` when
the prediction is within ``eps/2`` of the batch estimate and otherwise flags,
refines the estimate on the same batch and discards it.

Copy accounting follows one convention throughout: ``copies_total = R * m0``
is the allocation requested up front, ``copies_consumed`` counts the batches
actually opened. ``gate_applications`` counts operations on a representative
register (one transversal operation over a batch counts once) and
``copy_gate_applications`` weights each operation by the copies it touched.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .ledger import BatchExhaustedError, CopyLedger, ResourceCapError
from .models import (
    GradientReport,
    LayeredModel,
    ModelKind,
    _forward,
    _pauli_array,
    _unapply_layer,
    advance_gradient_array,
    advance_step_circuits,
    build_gradient_state,
    gradient_state_observable,
    prepare_register,
)
from .qcore import HERM_TOL, DensityMatrix, PauliString, StateVector, expectation, sample_plus_count
from .rng import as_generator

__all__ = [
    "OnlineLearner",
    "learner_predict",
    "mmw_update",
    "rotate_learner",
    "ThresholdSession",
    "ThresholdResult",
    "threshold_check",
    "batch_size",
    "batch_allowance",
    "shadow_tomography",
    "backprop_gradients",
    "ideal_swap_test_gradient",
    "write_trace_csv",
    "MAX_HYPOTHESIS_QUBITS",
]

MAX_HYPOTHESIS_QUBITS = 12
KAPPA_R = 8.0
KAPPA_0 = 16.0
REFINE_CONSTANT = 16.0


def _log_term(M: int) -> float:
    return max(math.log(max(M, 1)), 1.0)


def batch_size(M: int, eps: float, kappa_0: float = KAPPA_0) -> int:
    """Copies per batch, ``m0 = ceil(kappa_0 * log(M)^2 / eps^2)`` with the log clamped at 1."""
    return math.ceil(kappa_0 * _log_term(M) ** 2 / eps**2)


def batch_allowance(n_qubits: int, eps: float, kappa_R: float = KAPPA_R) -> int:
    """Number of batches, ``R = ceil(kappa_R * n / eps^2)``."""
    return math.ceil(kappa_R * n_qubits / eps**2)


# --------------------------------------------------------------------------- learner


def _dense(E, n: int) -> np.ndarray:
    if isinstance(E, PauliString):
        if E.n != n:
            raise ValueError("observable and hypothesis state have different widths")
        return E.to_matrix()
    E = np.asarray(E, dtype=np.complex128)
    if E.shape != (1 << n, 1 << n):
        raise ValueError("observable and hypothesis state have different dimensions")
    if np.max(np.abs(E - E.conj().T)) > HERM_TOL:
        raise ValueError("observable is not Hermitian")
    return E


def _trace_product(E, mat: np.ndarray, n: int) -> float:
    if isinstance(E, PauliString):
        if E.n != n:
            raise ValueError("observable and hypothesis state have different widths")
        return float(np.real(np.trace(_pauli_array(mat, E))))
    return float(np.real(np.sum(_dense(E, n).T * mat)))


def _gibbs(acc: np.ndarray, eta: float) -> np.ndarray:
    w, v = np.linalg.eigh((acc + acc.conj().T) / 2)
    weights = np.exp(-eta * (w - w.min()))
    weights /= weights.sum()
    rho = (v * weights) @ v.conj().T
    return (rho + rho.conj().T) / 2


@dataclass
class OnlineLearner:
    """Matrix-multiplicative-weights learner over ``n``-qubit density matrices."""

    n: int
    eta: float
    omega: DensityMatrix = None
    loss_accumulator: np.ndarray = field(default=None, repr=False)
    mistakes: int = 0

    def __post_init__(self):
        if self.n > MAX_HYPOTHESIS_QUBITS:
            raise ResourceCapError(f"hypothesis state on {self.n} qubits exceeds the {MAX_HYPOTHESIS_QUBITS}-qubit cap")
        if self.eta <= 0:
            raise ValueError("learning rate must be positive")
        dim = 1 << self.n
        if self.loss_accumulator is None:
            self.loss_accumulator = np.zeros((dim, dim), dtype=np.complex128)
        if self.omega is None:
            self.omega = DensityMatrix.maximally_mixed(self.n)
        if self.omega.n != self.n:
            raise ValueError("hypothesis state has the wrong width")


def learner_predict(l: OnlineLearner, E) -> float:
    """Prediction ``Tr(E omega)``."""
    return _trace_product(E, l.omega.mat, l.n)


def mmw_update(l: OnlineLearner, E, b: float) -> OnlineLearner:
    """One absolute-loss MMW step towards ``Tr(E omega) = b`` (in place; returns ``l``)."""
    if abs(b) > 1 + 1e-12:
        raise ValueError("target value must lie in [-1, 1]")
    dense = _dense(E, l.n)
    direction = np.sign(learner_predict(l, E) - b)
    l.mistakes += 1
    if direction != 0:
        l.loss_accumulator = l.loss_accumulator + direction * dense
        l.omega = DensityMatrix(l.n, _gibbs(l.loss_accumulator, l.eta))
    return l


def _conjugate(arr: np.ndarray, action) -> np.ndarray:
    half = action(arr)
    return action(half.conj().T).conj().T


def rotate_learner(l: OnlineLearner, action) -> OnlineLearner:
    """Conjugate the hypothesis state and the loss accumulator by ``action`` (leading-axis callable)."""
    mat = _conjugate(l.omega.mat, action)
    l.omega = DensityMatrix(l.n, (mat + mat.conj().T) / 2)
    l.loss_accumulator = _conjugate(l.loss_accumulator, action)
    return l


# --------------------------------------------------------------------------- threshold search


@dataclass
class ThresholdSession:
    """Batches of ``m0`` copies consumed by successive threshold checks.

    The current batch is opened on first use; a flag discards it. At most
    ``allowance`` batches are ever opened.
    """

    m0: int
    eps: float
    M: int
    allowance: int
    ledger: CopyLedger = field(default_factory=CopyLedger)
    consumed_batches: int = 0
    batch_open: bool = False

    def __post_init__(self):
        self.ledger.batch_size = self.m0
        self.ledger.batch_allowance = self.allowance
        if not self.ledger.copies_total:
            self.ledger.copies_total = self.allowance * self.m0

    @property
    def refine_shots(self) -> int:
        return math.ceil(REFINE_CONSTANT * _log_term(self.M) / self.eps**2)

    def open_batch(self) -> bool:
        """Open the next batch if none is live; returns True when a new batch was opened."""
        if self.batch_open:
            return False
        if self.consumed_batches >= self.allowance:
            raise BatchExhaustedError(
                f"all {self.allowance} batches consumed; increase kappa_R", self.ledger)
        self.batch_open = True
        self.ledger.charge("threshold", batches_used=1, copies_consumed=self.m0)
        return True


@dataclass(frozen=True)
class ThresholdResult:
    outcome: str
    b: float
    estimate: float

    @property
    def passed(self) -> bool:
        return self.outcome == "pass"


def threshold_check(t: ThresholdSession, E, a: float, true_state: StateVector, rng) -> ThresholdResult:
    """Emulated threshold search on the current batch.

    Pass when ``|a - estimate| <= eps/2`` with ``estimate`` the mean of ``m0``
    single-copy outcomes. Otherwise flag: ``refine_shots`` further outcomes are
    drawn from the same batch, pooled with the first ``m0``, and the batch is
    discarded.
    """
    gen = as_generator(rng)
    t.open_batch()
    truth = expectation(true_state, E)
    plus = sample_plus_count(truth, t.m0, gen)
    estimate = 2.0 * plus / t.m0 - 1.0
    if abs(a - estimate) <= t.eps / 2:
        return ThresholdResult("pass", float(a), estimate)
    extra = t.refine_shots
    plus += sample_plus_count(truth, extra, gen)
    b = 2.0 * plus / (t.m0 + extra) - 1.0
    t.ledger.charge("refine", destructive_shots=extra)
    t.batch_open = False
    t.consumed_batches += 1
    return ThresholdResult("flag", float(b), estimate)


# --------------------------------------------------------------------------- Algorithm-1 style loop


def _check_observable(E, n: int):
    if isinstance(E, PauliString):
        if E.n != n:
            raise ValueError("observable width does not match the state")
        return
    dense = _dense(E, n)
    if np.max(np.abs(np.linalg.eigvalsh(dense))) > 1 + 1e-9:
        raise ValueError("observables must have operator norm at most 1")


def shadow_tomography(state: StateVector, observables: Sequence, eps: float, rng, *,
                      kappa_R: float = KAPPA_R, kappa_0: float = KAPPA_0, eta: float | None = None,
                      trace: list | None = None) -> tuple[np.ndarray, CopyLedger]:
    """Estimate every ``<psi|E_k|psi>`` to ``eps`` with an online learner and threshold search."""
    if not 0 < eps < 1:
        raise ValueError("eps must lie in (0, 1)")
    observables = list(observables)
    for E in observables:
        _check_observable(E, state.n)
    gen = as_generator(rng)
    M = len(observables)
    session = ThresholdSession(batch_size(M, eps, kappa_0), eps, M, batch_allowance(state.n, eps, kappa_R))
    learner = OnlineLearner(state.n, eps / 4 if eta is None else eta)
    estimates = np.zeros(M)
    for k, E in enumerate(observables):
        a = learner_predict(learner, E)
        res = threshold_check(session, E, a, state, gen)
        estimates[k] = res.b
        if not res.passed:
            mmw_update(learner, E, res.b)
            session.ledger.charge("learner", learner_updates=1)
        if trace is not None:
            trace.append(_trace_row(k, a, res, session.ledger))
    return estimates, session.ledger


def _trace_row(k, a, res, ledger) -> dict:
    return {
        "k": k,
        "a_k": a,
        "outcome": res.outcome,
        "b_k": res.b,
        "batches_used": ledger.batches_used,
        "gate_applications": ledger.gate_applications,
    }


TRACE_FIELDS = ("k", "a_k", "outcome", "b_k", "batches_used", "gate_applications")


def write_trace_csv(rows: Sequence[dict], path) -> None:
    """One CSV row per threshold check."""
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=TRACE_FIELDS, lineterminator="\n")
        writer.writeheader()
        for row in rows:
            writer.writerow({k: (f"{row[k]:.12g}" if isinstance(row[k], float) else row[k]) for k in TRACE_FIELDS})


# --------------------------------------------------------------------------- gradient protocol


def _preparation_cost(m: LayeredModel) -> int:
    """Gate applications of :func:`build_gradient_state` for the first layer."""
    return 2 * m.forward_cost + 1


def _step_cost(m: LayeredModel, k: int) -> int:
    b0, b1 = advance_step_circuits(m, k)
    return len(b0) + len(b1)


def backprop_gradients(m: LayeredModel, input: StateVector | None, eps: float, rng, *,
                       kappa_R: float = KAPPA_R, kappa_0: float = KAPPA_0, eta: float | None = None,
                       learner: OnlineLearner | None = None, rebuild: bool = False,
                       trace: list | None = None) -> tuple[GradientReport, CopyLedger]:
    """Half-derivatives ``b_k ~ (1/2) dQNN/dtheta_k`` read from advancing gradient states.

    One gradient state per batch is prepared for layer 0; after each
    threshold check on ``X`` of the ancilla, the live batch and the hypothesis
    state are advanced by the layer-local step circuits. Unopened batches are
    brought up to date when first opened by replaying the logged steps. With
    ``rebuild=True`` every gradient state is instead prepared from scratch,
    which is the quadratic-cost comparison.
    """
    if m.kind is not ModelKind.QNN:
        raise ValueError("backpropagation through gradient states needs a QNN model")
    if not 0 < eps < 1:
        raise ValueError("eps must lie in (0, 1)")
    n_total = m.n + 2
    if n_total > MAX_HYPOTHESIS_QUBITS:
        raise ResourceCapError(f"{n_total} qubits exceed the dense hypothesis-state cap of {MAX_HYPOTHESIS_QUBITS}")
    gen = as_generator(rng)
    M = m.M
    session = ThresholdSession(batch_size(M, eps, kappa_0), eps, M, batch_allowance(n_total, eps, kappa_R))
    ledger = session.ledger
    learner = OnlineLearner(n_total, eps / 4 if eta is None else eta) if learner is None else learner
    if learner.n != n_total:
        raise ValueError("learner does not act on the gradient-state register")
    obs = gradient_state_observable(m)
    prep = _preparation_cost(m)
    state = build_gradient_state(m, input, 0)
    ledger.charge("prepare", gate_applications=prep)
    replay = prep
    values = np.zeros(M)
    for k in range(M):
        if rebuild and k > 0:
            state = build_gradient_state(m, input, k)
            ledger.charge("prepare", gate_applications=prep)
            replay = prep
        if session.open_batch():
            ledger.charge("prepare", copy_gate_applications=session.m0 * replay)
        a = learner_predict(learner, obs)
        res = threshold_check(session, obs, a, state, gen)
        values[k] = res.b
        if not res.passed:
            mmw_update(learner, obs, res.b)
            ledger.charge("learner", learner_updates=1)
        if trace is not None:
            trace.append(_trace_row(k, a, res, ledger))
        if k + 1 < M:
            step = _step_cost(m, k)
            if not rebuild:
                live = session.m0 if session.batch_open else 0
                state = StateVector(n_total, advance_gradient_array(state.amps, m, k, ledger, "advance", live))
                replay += step
            rotate_learner(learner, lambda arr, k=k: advance_gradient_array(arr, m, k))
    report = GradientReport(values, "shadow-backprop", ledger, eps,
                            {"m0": session.m0, "R": session.allowance, "mistakes": learner.mistakes},
                            target_scale=0.5)
    return report, ledger


# --------------------------------------------------------------------------- idealized swap test


def _is_involution(circuit, tol: float = 1e-9) -> bool:
    if len(circuit) == 0:
        return True
    u = circuit.unitary()
    return bool(np.allclose(u @ u, np.eye(u.shape[0]), atol=tol))


def ideal_swap_test_gradient(m: LayeredModel, input: StateVector | None = None) -> tuple[GradientReport, int]:
    """Exact gradients from non-destructive reads of two branch registers.

    Branch ``psi`` holds the forward state and branch ``lam`` holds ``O`` applied
    to it. Walking ``k`` down from the last layer, ``-i P_k`` is inserted on
    ``psi``, the derivative ``2 Re <lam|psi>`` is read without collapse, and both
    branches step back through layer ``k``. The read is free (a simulator
    idealization); every branch operation is charged to the gate counter.
    """
    if m.kind is not ModelKind.SIMPLE:
        raise ValueError("the swap-test baseline is defined for simple variational models")
    for k, layer in enumerate(m.layers):
        if not _is_involution(layer.fixed):
            raise ValueError(f"fixed circuit of layer {k} is not an involution")
    ledger = CopyLedger()
    psi = _forward(m, input)
    ledger.charge("prepare", gate_applications=m.forward_cost)
    lam = _pauli_array(psi.copy(), m.observable)
    ledger.charge("prepare", gate_applications=m.forward_cost + 1)
    grad = np.zeros(m.M)
    for k in range(m.M - 1, -1, -1):
        gen = m.layers[k].generator
        psi = -1j * _pauli_array(psi, gen)
        ledger.charge("sweep", gate_applications=1)
        grad[k] = 2.0 * np.real(np.vdot(lam, psi))
        if k > 0:
            lam = _unapply_layer(m, k, lam)
            psi = _unapply_layer(m, k, 1j * _pauli_array(psi, gen))
            cost = len(m.layers[k].fixed) + 1
            ledger.charge("sweep", gate_applications=2 * cost + 1)
    report = GradientReport(grad, "ideal-gentle", ledger)
    return report, ledger.gate_applications
