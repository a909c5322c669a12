"""Shot-based gradient estimators: sampled parameter shift and SPSA.

Measurements are two-outcome (``+1/-1``) draws from the exact Born
probability, so a batch of ``shots`` measurements is a single binomial draw.
Every estimator charges its circuit executions and gate applications to a
:class:`~gentlegrad.ledger.CopyLedger`.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .ledger import CopyLedger
from .models import GradientReport, LayeredModel, _evaluate_at
from .qcore import StateVector, sample_plus_count
from .rng import as_generator

__all__ = [
    "ShotBudget",
    "hoeffding_shots",
    "shot_estimate",
    "paramshift_shot_gradient",
    "spsa_gradient",
    "SpsaVarianceTable",
    "spsa_variance_experiment",
    "shots_to_precision",
]


@dataclass(frozen=True)
class ShotBudget:
    shots_per_term: int
    terms: int
    epsilon: float
    delta: float

    def __post_init__(self):
        if not (0 < self.epsilon < 1 and 0 < self.delta < 1):
            raise ValueError("epsilon and delta must lie in (0, 1)")

    @property
    def total_shots(self) -> int:
        return self.shots_per_term * self.terms


def hoeffding_shots(eps: float, delta: float, M: int) -> int:
    """Shots per shifted circuit so every shift difference is within ``eps`` w.p. ``1 - delta``.

    Each of the ``2M`` means of ``+-1`` outcomes must land within ``eps/2``:
    ``2 exp(-N eps^2 / 8) <= delta / (2M)`` gives ``N = 8 ln(4M/delta) / eps^2``.
    """
    if not (0 < eps < 1 and 0 < delta < 1):
        raise ValueError("epsilon and delta must lie in (0, 1)")
    return math.ceil(8.0 * math.log(4 * max(M, 1) / delta) / eps**2)


def _mean_from_value(value: float, shots: int, gen) -> float:
    return 2.0 * sample_plus_count(value, shots, gen) / shots - 1.0


def _charge_runs(ledger, phase, runs, gates_per_run):
    if ledger is not None:
        ledger.charge(phase, copies_consumed=runs, circuit_executions=runs, destructive_shots=runs,
                      gate_applications=runs * gates_per_run)


def shot_estimate(m: LayeredModel, input: StateVector | None, shots: int, rng, ledger: CopyLedger | None = None,
                  theta=None) -> float:
    """Mean of ``shots`` single-shot measurements of the model observable."""
    if shots < 1:
        raise ValueError("need at least one shot")
    value = _evaluate_at(m, input, m.theta if theta is None else np.asarray(theta))
    _charge_runs(ledger, "shots", shots, m.forward_cost)
    return _mean_from_value(value, int(shots), as_generator(rng))


def paramshift_shot_gradient(m: LayeredModel, input: StateVector | None, eps: float, delta: float, rng,
                             shots_per_term: int | None = None) -> GradientReport:
    """Each component from two sampled shifted circuits, ``F(theta +- pi/4 e_k)``."""
    gen = as_generator(rng)
    shots = hoeffding_shots(eps, delta, m.M) if shots_per_term is None else int(shots_per_term)
    budget = ShotBudget(shots, 2 * m.M, eps, delta)
    ledger = CopyLedger()
    grad = np.zeros(m.M)
    for k in range(m.M):
        shift = np.zeros(m.M)
        shift[k] = np.pi / 4
        plus = _mean_from_value(_evaluate_at(m, input, m.theta + shift), shots, gen)
        minus = _mean_from_value(_evaluate_at(m, input, m.theta - shift), shots, gen)
        grad[k] = plus - minus
        _charge_runs(ledger, "shift", 2 * shots, m.forward_cost)
    return GradientReport(grad, "paramshift-shots", ledger, eps, {"budget": budget})


def _as_evaluator(f, input) -> tuple[Callable, int]:
    if isinstance(f, LayeredModel):
        return (lambda th: _evaluate_at(f, input, th)), f.forward_cost
    if not callable(f):
        raise TypeError("f must be a model or a callable of the parameter vector")
    return f, 0


def spsa_gradient(f, theta, c: float, shots: int | None, samples: int, rng, input: StateVector | None = None,
                  ledger: CopyLedger | None = None) -> GradientReport:
    """Simultaneous-perturbation estimate averaged over ``samples`` Rademacher directions.

    ``f`` is a :class:`LayeredModel` or a callable returning a value in
    ``[-1, 1]``. With ``shots=None`` evaluations are exact; otherwise each
    evaluation is the mean of ``shots`` two-outcome measurements.
    """
    if c == 0:
        raise ValueError("step size c must be non-zero")
    if samples < 1:
        raise ValueError("need at least one perturbation sample")
    gen = as_generator(rng)
    evaluate, gates_per_run = _as_evaluator(f, input)
    theta = np.asarray(theta, dtype=np.float64)
    ledger = CopyLedger() if ledger is None else ledger
    draws = np.empty((samples, theta.size))
    for s in range(samples):
        delta = gen.choice([-1.0, 1.0], size=theta.size)
        hi, lo = evaluate(theta + c * delta), evaluate(theta - c * delta)
        if shots is not None:
            hi, lo = _mean_from_value(hi, shots, gen), _mean_from_value(lo, shots, gen)
            _charge_runs(ledger, "spsa", 2 * shots, gates_per_run)
        else:
            ledger.charge("spsa", circuit_executions=2, gate_applications=2 * gates_per_run)
        draws[s] = (hi - lo) / (2.0 * c * delta)
    stderr = draws.std(axis=0, ddof=1) / np.sqrt(samples) if samples > 1 else np.full(theta.size, np.inf)
    return GradientReport(draws.mean(axis=0), "spsa", ledger, info={"stderr": stderr, "samples": samples})


@dataclass
class SpsaVarianceTable:
    M: np.ndarray
    variance: np.ndarray
    intercept: float
    slope: float

    def rows(self) -> list:
        return list(zip(self.M.tolist(), self.variance.tolist()))


def spsa_variance_experiment(g: float, c: float, M_list: Sequence[int], trials: int, rng,
                             noise: float = 0.0) -> SpsaVarianceTable:
    """Empirical variance of one SPSA component on ``f(theta) = g * sum(theta)``.

    ``noise`` adds independent Gaussian evaluation noise of that standard
    deviation, which contributes an M-independent ``noise^2 / (2 c^2)``.
    The cross terms ``g * Delta_i / Delta_0`` contribute ``g^2 (M - 1)``.
    """
    if not len(M_list):
        raise ValueError("M_list must be non-empty")
    if trials < 100:
        raise ValueError("need at least 100 trials per M")
    if c == 0:
        raise ValueError("step size c must be non-zero")
    gen = as_generator(rng)
    Ms = np.asarray(M_list, dtype=np.int64)
    variances = np.empty(Ms.size)
    for i, M in enumerate(Ms):
        delta = gen.choice([-1.0, 1.0], size=(trials, int(M)))
        diff = 2.0 * g * c * delta.sum(axis=1)
        if noise:
            diff = diff + noise * (gen.normal(size=trials) - gen.normal(size=trials))
        est = diff / (2.0 * c * delta[:, 0])
        variances[i] = est.var(ddof=1)
    if Ms.size >= 2:
        slope, intercept = np.polyfit(Ms.astype(float), variances, 1)
    else:
        slope, intercept = float("nan"), float(variances[0])
    return SpsaVarianceTable(Ms, variances, float(intercept), float(slope))


def shots_to_precision(variance, eps: float) -> np.ndarray:
    """Perturbation samples so the averaged estimator's standard error is ``eps``."""
    return np.ceil(np.asarray(variance, dtype=np.float64) / eps**2).astype(np.int64)
