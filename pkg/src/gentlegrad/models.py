"""Layered circuit models, exact gradients and gradient states.

Two model families share one container:

* ``SimpleVariational``: ``F(theta) = <O>`` on ``|psi(theta)> = prod_k e^{-i theta_k P_k} V_k |phi>``
  on ``n`` qubits (layer 0 acts first, ``V_k`` before its rotation);
* ``QNN``: ``<Z_0>`` after ``e^{i theta_M P_M} U_M ... e^{i theta_1 P_1} U_1`` acting on
  ``|0>|phi>``, where qubit 0 is the output register and the ``n`` data qubits follow.

The adjoint sweep in :func:`exact_gradient` is the oracle every estimator in the
package is checked against. Layer indices ``k`` are 0-based.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from enum import Enum
from importlib import resources
from pathlib import Path
from typing import Sequence

import numpy as np

from .ledger import CopyLedger
from .qcore import (
    Circuit,
    Gate,
    PauliString,
    StateVector,
    _pauli_array,
    _rotation_array,
    controlled_array,
    expectation,
)
from .rng import as_generator

__all__ = [
    "ModelKind",
    "Layer",
    "LayeredModel",
    "GradientReport",
    "evaluate_model",
    "exact_gradient",
    "parameter_shift_gradient",
    "finite_difference_gradient",
    "build_gradient_state",
    "advance_gradient_state",
    "advance_gradient_array",
    "advance_step_circuits",
    "gradient_state_observable",
    "random_pauli",
    "random_circuit",
    "prepare_register",
    "build_reduction_qnn",
    "random_model",
    "model_to_json",
    "model_from_json",
    "load_model",
    "save_model",
    "load_schema",
]


class ModelKind(str, Enum):
    SIMPLE = "SimpleVariational"
    QNN = "QNN"


@dataclass(frozen=True)
class Layer:
    """Fixed circuit followed by a Pauli-generated rotation."""

    fixed: Circuit
    generator: PauliString

    def __post_init__(self):
        if self.fixed.n != self.generator.n:
            raise ValueError("fixed circuit and generator act on different registers")
        if self.generator.is_identity():
            raise ValueError("identity generator carries no parameter dependence")


@dataclass(frozen=True)
class LayeredModel:
    n: int
    layers: tuple
    theta: np.ndarray = field(repr=False)
    observable: PauliString
    kind: ModelKind = ModelKind.SIMPLE

    def __post_init__(self):
        kind = ModelKind(self.kind)
        object.__setattr__(self, "kind", kind)
        object.__setattr__(self, "layers", tuple(self.layers))
        theta = np.array(self.theta, dtype=np.float64).reshape(-1)
        theta.setflags(write=False)
        object.__setattr__(self, "theta", theta)
        if theta.size != len(self.layers):
            raise ValueError(f"{len(self.layers)} layers but {theta.size} angles")
        width = self.register_qubits
        for layer in self.layers:
            if layer.generator.n != width:
                raise ValueError(f"layer acts on {layer.generator.n} qubits, register has {width}")
        if self.observable.n != width:
            raise ValueError("observable width does not match the register")
        if kind is ModelKind.QNN and self.observable != PauliString.single(width, 0, "Z"):
            raise ValueError("a QNN is read out with Z on the output qubit 0")

    @property
    def M(self) -> int:
        return len(self.layers)

    @property
    def register_qubits(self) -> int:
        """Qubits the layers act on: ``n`` for simple models, ``n + 1`` for QNNs."""
        return self.n + 1 if self.kind is ModelKind.QNN else self.n

    @property
    def rotation_sign(self) -> float:
        """``c`` in ``e^{-i c theta P}``: +1 for simple models, -1 for QNN layers."""
        return -1.0 if self.kind is ModelKind.QNN else 1.0

    @property
    def forward_cost(self) -> int:
        """Gate applications of one forward evaluation."""
        return sum(len(layer.fixed) + 1 for layer in self.layers)

    def with_theta(self, theta) -> "LayeredModel":
        return replace(self, theta=np.asarray(theta, dtype=np.float64))

    def layer_gates(self, k: int, theta_k: float | None = None) -> Circuit:
        """Layer ``k`` as one gate list (fixed circuit then rotation)."""
        layer = self.layers[k]
        angle = self.theta[k] if theta_k is None else theta_k
        rot = Gate("ROT", pauli=layer.generator, angle=self.rotation_sign * angle)
        return Circuit(layer.fixed.n, layer.fixed.gates + (rot,))

    def circuit(self) -> Circuit:
        out = Circuit(self.register_qubits)
        for k in range(self.M):
            out = out + self.layer_gates(k)
        return out


@dataclass
class GradientReport:
    values: np.ndarray
    method: str
    ledger: CopyLedger = field(default_factory=CopyLedger)
    epsilon: float = 0.0
    info: dict = field(default_factory=dict)
    target_scale: float = 1.0

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)

    def __len__(self):
        return self.values.size

    def max_abs_error(self, reference) -> float:
        """Infinity-norm distance to ``target_scale * reference``.

        Estimators whose values target a multiple of the gradient (half-derivatives
        read from a gradient state, say) set ``target_scale`` accordingly.
        """
        reference = np.asarray(reference, dtype=np.float64)
        if reference.shape != self.values.shape:
            raise ValueError("reference gradient has the wrong length")
        return float(np.max(np.abs(self.values - self.target_scale * reference), initial=0.0))


# --------------------------------------------------------------------------- evaluation


def prepare_register(m: LayeredModel, input: StateVector | None = None) -> np.ndarray:
    """Initial amplitudes the layers act on (``|0>|phi>`` for a QNN)."""
    if input is None:
        input = StateVector.basis(m.n, 0)
    if input.n != m.n:
        raise ValueError(f"model has {m.n} data qubits, input has {input.n}")
    if m.kind is ModelKind.QNN:
        return np.concatenate([input.amps, np.zeros_like(input.amps)])
    return input.amps.copy()


def _apply_layer(m: LayeredModel, k: int, arr: np.ndarray, theta: np.ndarray) -> np.ndarray:
    layer = m.layers[k]
    arr = layer.fixed.apply_array(arr)
    return _rotation_array(arr, layer.generator, m.rotation_sign * theta[k])


def _unapply_layer(m: LayeredModel, k: int, arr: np.ndarray) -> np.ndarray:
    layer = m.layers[k]
    arr = _rotation_array(arr, layer.generator, -m.rotation_sign * m.theta[k])
    return layer.fixed.inverse().apply_array(arr)


def _forward(m: LayeredModel, input, theta=None) -> np.ndarray:
    theta = m.theta if theta is None else theta
    arr = prepare_register(m, input)
    for k in range(m.M):
        arr = _apply_layer(m, k, arr, theta)
    return arr


def evaluate_model(m: LayeredModel, input: StateVector | None = None, ledger: CopyLedger | None = None) -> float:
    """Exact model value ``F(theta)`` (or ``QNN_theta(|phi>)``)."""
    arr = _forward(m, input)
    if ledger is not None:
        ledger.charge("forward", gate_applications=m.forward_cost, circuit_executions=1)
    return expectation(StateVector(m.register_qubits, arr), m.observable)


def _evaluate_at(m: LayeredModel, input, theta) -> float:
    arr = _forward(m, input, theta)
    return float(np.real(np.vdot(arr, _pauli_array(arr, m.observable))))


def exact_gradient(m: LayeredModel, input: StateVector | None = None) -> GradientReport:
    """All partial derivatives from one forward and one reverse sweep.

    With ``psi_k`` the state after layer ``k`` and ``lam_k`` the observable
    applied to the output and pulled back through the later layers, the
    derivative is ``2 Re <lam_k| (-i c P_k) |psi_k>``.
    """
    ledger = CopyLedger()
    psi = _forward(m, input)
    ledger.charge("forward", gate_applications=m.forward_cost)
    lam = _pauli_array(psi, m.observable)
    ledger.charge("backward", gate_applications=1)
    grad = np.zeros(m.M)
    c = m.rotation_sign
    for k in range(m.M - 1, -1, -1):
        p_psi = _pauli_array(psi, m.layers[k].generator)
        grad[k] = 2.0 * np.real(np.vdot(lam, -1j * c * p_psi))
        ledger.charge("backward", gate_applications=1)
        if k > 0:
            psi = _unapply_layer(m, k, psi)
            lam = _unapply_layer(m, k, lam)
            ledger.charge("backward", gate_applications=2 * (len(m.layers[k].fixed) + 1))
    return GradientReport(grad, "exact", ledger)


def parameter_shift_gradient(m: LayeredModel, input: StateVector | None = None) -> GradientReport:
    """Two-term shift rule ``F(theta + pi/4 e_k) - F(theta - pi/4 e_k)``."""
    for layer in m.layers:
        if layer.generator.sign not in (1, -1):
            raise ValueError("generator is not involutory")
    ledger = CopyLedger()
    grad = np.zeros(m.M)
    for k in range(m.M):
        shift = np.zeros(m.M)
        shift[k] = np.pi / 4
        grad[k] = _evaluate_at(m, input, m.theta + shift) - _evaluate_at(m, input, m.theta - shift)
    ledger.charge("shift", circuit_executions=2 * m.M, gate_applications=2 * m.M * m.forward_cost)
    return GradientReport(grad, "paramshift", ledger)


def finite_difference_gradient(m: LayeredModel, input: StateVector | None = None, h: float = 1e-4) -> np.ndarray:
    """Central differences; a slow independent oracle for tests."""
    grad = np.zeros(m.M)
    for k in range(m.M):
        step = np.zeros(m.M)
        step[k] = h
        grad[k] = (_evaluate_at(m, input, m.theta + step) - _evaluate_at(m, input, m.theta - step)) / (2 * h)
    return grad


# --------------------------------------------------------------------------- gradient states


def _require_qnn(m: LayeredModel):
    if m.kind is not ModelKind.QNN:
        raise ValueError("gradient states are defined for QNN models")


def _check_index(m: LayeredModel, k: int, upper: int):
    if not 0 <= k < upper:
        raise IndexError(f"layer index {k} outside [0, {upper})")


def build_gradient_state(m: LayeredModel, input: StateVector | None, k: int) -> StateVector:
    """``(|0>|Psi_k> + |1>|Phi_k>)/sqrt(2)`` on ``[ancilla][output][data]``.

    ``Psi_k`` runs layers ``0..k`` with angle ``theta_k + pi/2`` on layer ``k``;
    ``Phi_k`` runs the whole circuit, applies ``Z_0`` and undoes layers
    ``M-1..k+1``. The ancilla's X expectation is half the ``k``-th derivative.
    """
    _require_qnn(m)
    _check_index(m, k, m.M)
    start = prepare_register(m, input)
    shifted = m.theta.copy()
    shifted[k] += np.pi / 2
    psi = start
    for j in range(k + 1):
        psi = _apply_layer(m, j, psi, shifted)
    phi = _pauli_array(_forward(m, input), m.observable)
    for j in range(m.M - 1, k, -1):
        phi = _unapply_layer(m, j, phi)
    return StateVector(m.n + 2, np.concatenate([psi, phi]) / np.sqrt(2))


def advance_step_circuits(m: LayeredModel, k: int) -> tuple[Circuit, Circuit]:
    """Branch circuits taking gradient state ``k`` to ``k + 1``.

    Branch 0 applies ``e^{i(theta_{k+1}+pi/2)P_{k+1}} U_{k+1} e^{-i(pi/2)P_k}``;
    branch 1 applies ``e^{i theta_{k+1} P_{k+1}} U_{k+1}``.
    """
    _require_qnn(m)
    _check_index(m, k, m.M - 1)
    undo = Gate("ROT", pauli=m.layers[k].generator, angle=np.pi / 2)
    nxt = m.layers[k + 1]
    c = m.rotation_sign
    branch0 = Circuit(nxt.fixed.n, (undo,) + nxt.fixed.gates
                      + (Gate("ROT", pauli=nxt.generator, angle=c * (m.theta[k + 1] + np.pi / 2)),))
    branch1 = m.layer_gates(k + 1)
    return branch0, branch1


def advance_gradient_array(arr: np.ndarray, m: LayeredModel, k: int, ledger=None, phase="advance", copies=0):
    """Array form of :func:`advance_gradient_state` acting on the leading axis."""
    branch0, branch1 = advance_step_circuits(m, k)
    if ledger is not None:
        ledger.gates(len(branch0) + len(branch1), phase, copies)
    arr = controlled_array(arr, m.n + 2, 0, 0, branch0)
    return controlled_array(arr, m.n + 2, 0, 1, branch1)


def advance_gradient_state(s: StateVector, m: LayeredModel, k: int, ledger: CopyLedger | None = None) -> StateVector:
    """Gradient state ``k + 1`` from gradient state ``k`` with layer-local gates only."""
    if s.n != m.n + 2:
        raise ValueError("state does not live on the gradient-state register")
    return StateVector(s.n, advance_gradient_array(s.amps, m, k, ledger))


def gradient_state_observable(m: LayeredModel) -> PauliString:
    """X on the ancilla of the ``n + 2`` qubit gradient-state register."""
    return PauliString.single(m.n + 2, 0, "X")


# --------------------------------------------------------------------------- constructors


def build_reduction_qnn(observable_circuits: Sequence[Circuit]) -> LayeredModel:
    """QNN whose derivatives at ``theta = 0`` are ``2 <psi| U_k^dag Z_1 U_k |psi>``.

    Generators are all ``Y_0 Z_1``; the first fixed circuit is ``H_0`` followed by
    ``U_1`` on the data register, later ones are ``U_{k-1}^dag`` then ``U_k``.
    """
    circuits = list(observable_circuits)
    if not circuits:
        raise ValueError("need at least one observable circuit")
    n = circuits[0].n
    if any(c.n != n for c in circuits):
        raise ValueError("observable circuits act on different qubit counts")
    width = n + 1
    gen = PauliString.from_label("Y0 Z1", width)
    layers = []
    for k, u in enumerate(circuits):
        if k == 0:
            fixed = Circuit(width, (Gate("H", (0,)),)) + u.shifted(width, 1)
        else:
            fixed = (circuits[k - 1].inverse() + u).shifted(width, 1)
        layers.append(Layer(fixed, gen))
    return LayeredModel(n, layers, np.zeros(len(layers)), PauliString.single(width, 0, "Z"), ModelKind.QNN)


_RANDOM_GATES = ("H", "S", "CNOT", "ROT")


def random_pauli(n: int, rng, allow_identity: bool = False) -> PauliString:
    gen = as_generator(rng)
    while True:
        x, z = int(gen.integers(0, 1 << n)), int(gen.integers(0, 1 << n))
        if allow_identity or x or z:
            return PauliString(n, x, z)


def random_circuit(n: int, depth: int, rng, gate_names=_RANDOM_GATES) -> Circuit:
    gen = as_generator(rng)
    gates = []
    for _ in range(depth):
        while True:
            name = gate_names[int(gen.integers(len(gate_names)))]
            if name not in ("CNOT", "CZ", "SWAP") or n >= 2:
                break
        if name == "ROT":
            gates.append(Gate("ROT", pauli=random_pauli(n, gen), angle=float(gen.uniform(-np.pi, np.pi))))
        elif name in ("CNOT", "CZ", "SWAP"):
            a, b = gen.choice(n, size=2, replace=False)
            gates.append(Gate(name, (int(a), int(b))))
        else:
            gates.append(Gate(name, (int(gen.integers(n)),)))
    return Circuit(n, tuple(gates))


def random_model(n: int, M: int, rng, kind: ModelKind | str = ModelKind.SIMPLE,
                 fixed_depth: int = 1, observable: PauliString | None = None) -> LayeredModel:
    """Random model with ``fixed_depth`` gates in each fixed circuit and random Pauli generators."""
    gen = as_generator(rng)
    kind = ModelKind(kind)
    width = n + 1 if kind is ModelKind.QNN else n
    layers = [Layer(random_circuit(width, fixed_depth, gen), random_pauli(width, gen)) for _ in range(M)]
    theta = gen.uniform(-np.pi, np.pi, size=M)
    if kind is ModelKind.QNN:
        observable = PauliString.single(width, 0, "Z")
    elif observable is None:
        observable = random_pauli(width, gen)
    return LayeredModel(n, layers, theta, observable, kind)


# --------------------------------------------------------------------------- JSON


def load_schema(name: str) -> dict:
    text = resources.files("gentlegrad").joinpath("schemas", f"{name}.schema.json").read_text()
    return json.loads(text)


def model_to_json(m: LayeredModel) -> dict:
    return {
        "n": m.n,
        "kind": m.kind.value,
        "layers": [{"gates": layer.fixed.to_json(), "generator": layer.generator.label} for layer in m.layers],
        "theta": [float(t) for t in m.theta],
        "observable": m.observable.label,
    }


def model_from_json(doc: dict) -> LayeredModel:
    """Build a model from its JSON description, validating against the shipped schema."""
    import jsonschema

    jsonschema.validate(doc, load_schema("model"))
    kind = ModelKind(doc.get("kind", ModelKind.SIMPLE.value))
    n = int(doc["n"])
    width = n + 1 if kind is ModelKind.QNN else n
    layers = [
        Layer(Circuit.from_json(ld.get("gates", []), width), PauliString.from_label(ld["generator"], width))
        for ld in doc["layers"]
    ]
    theta = doc.get("theta", [0.0] * len(layers))
    default_obs = "Z0"
    observable = PauliString.from_label(doc.get("observable", default_obs), width)
    return LayeredModel(n, layers, theta, observable, kind)


def load_model(path) -> LayeredModel:
    return model_from_json(json.loads(Path(path).read_text()))


def save_model(m: LayeredModel, path) -> None:
    Path(path).write_text(json.dumps(model_to_json(m), indent=2) + "\n")
