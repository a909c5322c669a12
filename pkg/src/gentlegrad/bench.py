"""Experiment driver: configuration, estimator runs, CSV rows, scaling fits and the cost table."""
from __future__ import annotations

import csv
import io
import json
import math
import os
import time
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
from scipy import stats

from .baselines import paramshift_shot_gradient, spsa_gradient
from .ledger import CopyLedger, ResourceCapError
from .markov import load_chain, markov_backprop_estimate, markov_exact_gradient, random_chain
from .models import (
    LayeredModel,
    ModelKind,
    exact_gradient,
    load_model,
    parameter_shift_gradient,
    random_circuit,
    random_model,
)
from .qcore import Circuit, StateVector, expectation, random_state
from .rng import RngStream
from .shadow import MAX_HYPOTHESIS_QUBITS, backprop_gradients, ideal_swap_test_gradient
from .tomo_special import identify_circuit, special_case_gradient

__all__ = [
    "SCHEMA_VERSION",
    "METHODS",
    "ConfigError",
    "InsufficientDataError",
    "ExperimentConfig",
    "ResultRow",
    "run_experiment",
    "write_rows",
    "read_rows",
    "rows_to_csv",
    "emit_scaling_report",
    "cost_model_table",
    "paramshift_crossover",
    "cost_table_csv",
    "report_csv",
]

SCHEMA_VERSION = 1
METHODS = ("exact", "paramshift", "paramshift-shots", "spsa", "shadow-backprop", "pauli-gentle",
           "ideal-gentle", "markov", "identify")
SEED_ENV = "GENTLEGRAD_SEED"

DEFAULT_CONSTANTS = {
    "kappa_R": 8.0,
    "kappa_0": 16.0,
    "eta": None,
    "c": 0.1,
    "kappa_B": 4.0,
    "kappa_S": 8.0,
    "spsa_samples": 100,
    "spsa_shots": 1000,
    "paths": 10000,
    "fixed_depth": 1,
}


class ConfigError(ValueError):
    """Invalid experiment configuration or incompatible method/model pair."""


class InsufficientDataError(ValueError):
    """Too few distinct sizes to fit a scaling exponent."""


@dataclass
class ExperimentConfig:
    method: str
    n: int = 3
    M: int = 8
    epsilon: float = 0.1
    delta: float = 0.05
    seed: int = 0
    repeats: int = 1
    model: str | None = None
    chain: str | None = None
    M_list: list | None = None
    input: str = "random"
    gate_set: list = field(default_factory=lambda: ["H", "S", "CNOT"])
    p: int = 2
    timing: bool = False
    constants: dict = field(default_factory=dict)
    base_dir: Path = field(default=Path("."), repr=False)

    def __post_init__(self):
        if self.method not in METHODS:
            raise ConfigError(f"unknown method {self.method!r}; choose one of {', '.join(METHODS)}")
        if not (0 < self.epsilon < 1 and 0 < self.delta < 1):
            raise ConfigError("epsilon and delta must lie in (0, 1)")
        if self.repeats < 1:
            raise ConfigError("repeats must be at least 1")
        if self.n < 1 or self.M < 1:
            raise ConfigError("n and M must be positive")
        if self.input not in ("random", "zero"):
            raise ConfigError("input must be 'random' or 'zero'")
        unknown = set(self.constants) - set(DEFAULT_CONSTANTS)
        if unknown:
            raise ConfigError(f"unknown constants: {', '.join(sorted(unknown))}")
        self.constants = {**DEFAULT_CONSTANTS, **self.constants}
        if self.M_list is not None and (not self.M_list or any(int(m) < 1 for m in self.M_list)):
            raise ConfigError("M_list must be a non-empty list of positive sizes")

    @classmethod
    def from_dict(cls, doc: dict, base_dir=".") -> "ExperimentConfig":
        names = {f.name for f in fields(cls)} - {"base_dir"}
        unknown = set(doc) - names
        if unknown:
            raise ConfigError(f"unknown config fields: {', '.join(sorted(unknown))}")
        if "method" not in doc:
            raise ConfigError("config needs a method")
        doc = dict(doc)
        if os.environ.get(SEED_ENV):
            try:
                doc["seed"] = int(os.environ[SEED_ENV])
            except ValueError as exc:
                raise ConfigError(f"{SEED_ENV} must be an integer") from exc
        try:
            return cls(**doc, base_dir=Path(base_dir))
        except TypeError as exc:
            raise ConfigError(str(exc)) from exc

    @classmethod
    def load(cls, path) -> "ExperimentConfig":
        path = Path(path)
        try:
            doc = json.loads(path.read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        if not isinstance(doc, dict):
            raise ConfigError("config must be a JSON object")
        return cls.from_dict(doc, path.parent)

    def sizes(self) -> list:
        return [int(m) for m in self.M_list] if self.M_list else [self.M]


@dataclass
class ResultRow:
    method: str
    n: int
    M: int
    epsilon: float
    seed: int
    copies_used: int
    batches_used: int
    gate_applications: int
    destructive_shots: int
    wall_ms: float
    max_abs_error: float
    schema_version: int = SCHEMA_VERSION

    def __post_init__(self):
        for name in ("copies_used", "batches_used", "gate_applications", "destructive_shots"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be non-negative")


CSV_FIELDS = ("schema_version", "method", "n", "M", "epsilon", "seed", "copies_used", "batches_used",
              "gate_applications", "destructive_shots", "wall_ms", "max_abs_error")


# --------------------------------------------------------------------------- running


def _resolve(cfg: ExperimentConfig, rel: str) -> Path:
    p = Path(rel)
    return p if p.is_absolute() else cfg.base_dir / p


def _model_for(cfg: ExperimentConfig, M: int, seed: int) -> LayeredModel:
    if cfg.model:
        try:
            return load_model(_resolve(cfg, cfg.model))
        except Exception as exc:
            raise ConfigError(f"cannot load model {cfg.model}: {exc}") from exc
    kind = ModelKind.QNN if cfg.method == "shadow-backprop" else ModelKind.SIMPLE
    depth = 0 if cfg.method == "ideal-gentle" else int(cfg.constants["fixed_depth"])
    return random_model(cfg.n, M, RngStream(seed, 1), kind, fixed_depth=depth)


def _input_for(cfg: ExperimentConfig, n: int, seed: int) -> StateVector:
    if cfg.input == "zero":
        return StateVector.basis(n, 0)
    return random_state(n, RngStream(seed, 3))


def _check_kind(cfg: ExperimentConfig, m: LayeredModel):
    if cfg.method == "shadow-backprop":
        if m.kind is not ModelKind.QNN:
            raise ConfigError("shadow-backprop needs a QNN model")
        if m.n + 2 > MAX_HYPOTHESIS_QUBITS:
            raise ResourceCapError(f"shadow-backprop needs n + 2 <= {MAX_HYPOTHESIS_QUBITS}")
    if cfg.method in ("ideal-gentle", "pauli-gentle") and m.kind is not ModelKind.SIMPLE:
        raise ConfigError(f"{cfg.method} needs a SimpleVariational model")


def _copies(ledger: CopyLedger) -> int:
    return max(ledger.copies_total, ledger.copies_consumed)


def _run_model_method(cfg, M, seed):
    m = _model_for(cfg, M, seed)
    _check_kind(cfg, m)
    phi = _input_for(cfg, m.n, seed)
    rng = RngStream(seed, 2)
    k = cfg.constants
    if cfg.method == "pauli-gentle":
        V = Circuit(m.register_qubits)
        for layer in m.layers:
            V = V + layer.fixed
        paulis = [layer.generator for layer in m.layers]
        report = special_case_gradient(V, phi, paulis, cfg.epsilon, rng, kappa_B=k["kappa_B"])
        sigma = StateVector(m.n, V.apply_array(phi.amps))
        truth = np.array([2.0 * expectation(sigma, p) for p in paulis])
        return m, report, report.ledger, report.max_abs_error(truth)
    oracle = exact_gradient(m, phi).values
    if cfg.method == "exact":
        report = exact_gradient(m, phi)
        ledger = CopyLedger()
        ledger.absorb(report.ledger)
    elif cfg.method == "paramshift":
        report = parameter_shift_gradient(m, phi)
    elif cfg.method == "paramshift-shots":
        report = paramshift_shot_gradient(m, phi, cfg.epsilon, cfg.delta, rng)
    elif cfg.method == "spsa":
        report = spsa_gradient(m, m.theta, k["c"], k["spsa_shots"], int(k["spsa_samples"]), rng, input=phi)
    elif cfg.method == "shadow-backprop":
        report, _ = backprop_gradients(m, phi, cfg.epsilon, rng, kappa_R=k["kappa_R"], kappa_0=k["kappa_0"],
                                       eta=k["eta"])
    else:
        try:
            report, _ = ideal_swap_test_gradient(m, phi)
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc
    return m, report, report.ledger, report.max_abs_error(oracle)


def _run_markov(cfg, M, seed):
    if cfg.chain:
        try:
            chain = load_chain(_resolve(cfg, cfg.chain))
        except Exception as exc:
            raise ConfigError(f"cannot load chain {cfg.chain}: {exc}") from exc
    else:
        chain = random_chain(cfg.n, M, RngStream(seed, 1))
    ledger = CopyLedger()
    est, _ = markov_backprop_estimate(chain, int(cfg.constants["paths"]), RngStream(seed, 2), ledger)
    exact = markov_exact_gradient(chain)
    return chain.n_bits, chain.N, ledger, float(np.max(np.abs(est - exact)))


def _run_identify(cfg, seed):
    target_circuit = random_circuit(cfg.n, cfg.p, RngStream(seed, 1), tuple(g.upper() for g in cfg.gate_set))
    target = target_circuit.apply(StateVector.basis(cfg.n, 0))
    res = identify_circuit(cfg.gate_set, cfg.p, cfg.n, target, RngStream(seed, 2), eps=cfg.epsilon,
                           delta=cfg.delta, kappa_S=cfg.constants["kappa_S"])
    return res.candidates, res.ledger, 1.0 - res.state.fidelity(target)


def _one_row(cfg: ExperimentConfig, M: int, seed: int) -> ResultRow:
    start = time.perf_counter()
    n = cfg.n
    if cfg.method == "markov":
        n, M, ledger, err = _run_markov(cfg, M, seed)
    elif cfg.method == "identify":
        M, ledger, err = _run_identify(cfg, seed)
    else:
        m, _, ledger, err = _run_model_method(cfg, M, seed)
        n, M = m.n, m.M
    ledger.check_conservation()
    wall = (time.perf_counter() - start) * 1000.0 if cfg.timing else 0.0
    return ResultRow(cfg.method, n, M, cfg.epsilon, seed, _copies(ledger), ledger.batches_used,
                     ledger.gate_applications, ledger.destructive_shots, round(wall, 3), err)


def run_experiment(cfg: ExperimentConfig, out=None) -> list:
    """One row per (size, repeat); row ``r`` uses seed ``cfg.seed + r``.

    Rows are appended to ``out`` (header written when the file is new). Wall
    time is recorded only with ``timing`` enabled so that output bytes are
    reproducible by default.
    """
    rows = []
    for M in cfg.sizes():
        for r in range(cfg.repeats):
            rows.append(_one_row(cfg, M, cfg.seed + r))
    if out is not None:
        write_rows(rows, out, append=True)
    return rows


# --------------------------------------------------------------------------- CSV


def _fmt(value) -> str:
    if isinstance(value, float):
        return f"{value:.10g}"
    return str(value)


def rows_to_csv(rows: Iterable[ResultRow], header: bool = True) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    if header:
        writer.writerow(CSV_FIELDS)
    for row in rows:
        d = asdict(row)
        writer.writerow([_fmt(d[k]) for k in CSV_FIELDS])
    return buf.getvalue()


def write_rows(rows: Sequence[ResultRow], path, append: bool = True) -> None:
    path = Path(path)
    new = not (append and path.exists() and path.stat().st_size > 0)
    with open(path, "a" if append else "w", newline="") as fh:
        fh.write(rows_to_csv(rows, header=new))


def read_rows(path) -> list:
    out = []
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or "schema_version" not in reader.fieldnames:
            raise ConfigError(f"{path} is not a results CSV (missing schema_version)")
        for rec in reader:
            if int(rec["schema_version"]) != SCHEMA_VERSION:
                raise ConfigError(f"unsupported schema_version {rec['schema_version']}")
            out.append(ResultRow(
                method=rec["method"], n=int(rec["n"]), M=int(rec["M"]), epsilon=float(rec["epsilon"]),
                seed=int(rec["seed"]), copies_used=int(rec["copies_used"]), batches_used=int(rec["batches_used"]),
                gate_applications=int(rec["gate_applications"]), destructive_shots=int(rec["destructive_shots"]),
                wall_ms=float(rec["wall_ms"]), max_abs_error=float(rec["max_abs_error"])))
    return out


# --------------------------------------------------------------------------- reports


def _fit(Ms: np.ndarray, ys: np.ndarray, confidence: float) -> dict:
    uniq = np.unique(Ms)
    means = np.array([ys[Ms == m].mean() for m in uniq])
    if np.any(means <= 0):
        return None
    x, y = np.log(uniq.astype(float)), np.log(means)
    fit = stats.linregress(x, y)
    dof = len(uniq) - 2
    half = float(stats.t.ppf(0.5 + confidence / 2, dof) * fit.stderr) if dof > 0 else float("inf")
    return {"exponent": float(fit.slope), "ci_low": float(fit.slope - half), "ci_high": float(fit.slope + half),
            "points": int(len(uniq))}


def emit_scaling_report(rows: Sequence[ResultRow], metrics=("copies_used", "gate_applications"),
                        confidence: float = 0.95) -> list:
    """Log-log exponent of each metric against ``M``, per method, with a t-based confidence interval.

    Metrics that are zero for some size (e.g. copies for exact methods) are skipped.
    """
    by_method: dict = {}
    for row in rows:
        by_method.setdefault(row.method, []).append(row)
    report = []
    for method in sorted(by_method):
        group = by_method[method]
        Ms = np.array([r.M for r in group])
        if len(np.unique(Ms)) < 3:
            raise InsufficientDataError(f"method {method} has fewer than 3 distinct M values")
        for metric in metrics:
            ys = np.array([float(getattr(r, metric)) for r in group])
            fit = _fit(Ms, ys, confidence)
            if fit is not None:
                report.append({"method": method, "metric": metric, **fit})
    return report


def report_csv(report: Sequence[dict]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    cols = ("method", "metric", "exponent", "ci_low", "ci_high", "points")
    writer.writerow(cols)
    for rec in report:
        writer.writerow([_fmt(rec[c]) for c in cols])
    return buf.getvalue()


def cost_model_table(Tq: float, M_list: Sequence[int], polylog_exponent: int = 2) -> list:
    """Rows ``(M, t_paramshift, t_backprop)`` in the units of ``Tq``.

    ``t_paramshift = M^2 Tq`` and ``t_backprop = M log(M)^p Tq`` with the
    natural log clamped at 1 so small ``M`` stays well defined.
    """
    if Tq <= 0:
        raise ValueError("Tq must be positive")
    M_list = list(M_list)
    if not M_list:
        raise ValueError("M_list must be non-empty")
    rows = []
    for M in M_list:
        M = int(M)
        if M < 1:
            raise ValueError("sizes must be positive")
        rows.append((M, M * M * Tq, M * max(math.log(M), 1.0) ** polylog_exponent * Tq))
    return rows


def paramshift_crossover(Tq: float, budget: float) -> int:
    """Smallest ``M`` with ``M^2 Tq > budget``."""
    if Tq <= 0 or budget <= 0:
        raise ValueError("Tq and budget must be positive")
    M = math.isqrt(int(budget / Tq))
    while M * M * Tq <= budget:
        M += 1
    return M


def cost_table_csv(Tq_seconds: float, M_list: Sequence[int], polylog_exponent: int = 2) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(("M", "t_paramshift_s", "t_backprop_s", "t_paramshift_days", "t_backprop_days"))
    for M, tp, tb in cost_model_table(Tq_seconds, M_list, polylog_exponent):
        writer.writerow((M, f"{tp:.6e}", f"{tb:.6e}", f"{tp / 86400:.6e}", f"{tb / 86400:.6e}"))
    return buf.getvalue()
