import csv
import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from gentlegrad.ledger import BatchExhaustedError, CopyLedger, ResourceCapError
from gentlegrad.models import (
    Layer,
    LayeredModel,
    ModelKind,
    advance_gradient_array,
    build_gradient_state,
    exact_gradient,
    gradient_state_observable,
    random_model,
    random_pauli,
)
from gentlegrad.qcore import Circuit, DensityMatrix, Gate, PauliString, StateVector, expectation, random_density, random_state
from gentlegrad.rng import RngStream
from gentlegrad.shadow import (
    OnlineLearner,
    ThresholdSession,
    backprop_gradients,
    batch_allowance,
    batch_size,
    ideal_swap_test_gradient,
    learner_predict,
    mmw_update,
    rotate_learner,
    shadow_tomography,
    threshold_check,
    write_trace_csv,
)


def assert_valid_density(rho: DensityMatrix):
    assert rho.is_valid()
    assert np.allclose(rho.mat, rho.mat.conj().T, atol=1e-10)
    assert abs(np.trace(rho.mat) - 1) < 1e-10


# --------------------------------------------------------------------------- learner


def test_predict_examples():
    l = OnlineLearner(2, 0.1)
    assert learner_predict(l, PauliString.from_label("XZ")) == pytest.approx(0.0, abs=1e-15)
    l.omega = StateVector.basis(2).density()
    assert learner_predict(l, PauliString.single(2, 0, "Z")) == pytest.approx(1.0)
    l.omega = random_density(2, RngStream(1))
    p = PauliString.from_label("YX")
    assert learner_predict(l, p) == pytest.approx(np.trace(p.to_matrix() @ l.omega.mat).real, abs=1e-12)


def test_predict_dimension_mismatch():
    with pytest.raises(ValueError):
        learner_predict(OnlineLearner(2, 0.1), PauliString.from_label("X"))


def test_repeated_update_moves_prediction_to_target():
    l = OnlineLearner(2, 0.1)
    z = PauliString.single(2, 0, "Z")
    preds = [learner_predict(l, z)]
    for _ in range(60):
        mmw_update(l, z, 1.0)
        preds.append(learner_predict(l, z))
        assert_valid_density(l.omega)
    assert np.all(np.diff(preds) > 0)
    assert preds[-1] > 0.99
    assert l.mistakes == 60


def test_update_at_current_prediction_leaves_state():
    l = OnlineLearner(2, 0.2)
    mmw_update(l, PauliString.from_label("XX"), 0.5)
    before = l.omega.mat.copy()
    p = PauliString.from_label("ZY")
    mmw_update(l, p, learner_predict(l, p))
    assert np.allclose(l.omega.mat, before, atol=1e-10)


def test_update_rejects_bad_targets():
    with pytest.raises(ValueError):
        mmw_update(OnlineLearner(1, 0.1), PauliString.from_label("Z"), 1.5)
    with pytest.raises(ValueError):
        mmw_update(OnlineLearner(1, 0.1), np.array([[0, 1], [0, 0]]), 0.0)


def test_mistake_bound_on_adversarial_pauli_stream():
    n, eps = 3, 0.2
    gen = RngStream(3).gen
    target = random_state(n, gen)
    l = OnlineLearner(n, eps / 4)
    for _ in range(3000):
        p = random_pauli(n, gen)
        truth = expectation(target, p)
        if abs(learner_predict(l, p) - truth) > eps:
            mmw_update(l, p, truth)
    assert l.mistakes <= 40 * n / eps**2


@given(st.integers(0, 2**32 - 1))
def test_hypothesis_state_stays_valid(seed):
    gen = RngStream(seed).gen
    l = OnlineLearner(2, 0.3)
    for _ in range(5):
        mmw_update(l, random_pauli(2, gen), float(gen.uniform(-1, 1)))
        assert_valid_density(l.omega)
        rot = Circuit.rotation(random_pauli(2, gen), float(gen.uniform(-3, 3)))
        rotate_learner(l, rot.apply_array)
        assert_valid_density(l.omega)
    assert l.mistakes == 5


def test_learner_qubit_cap():
    with pytest.raises(ResourceCapError):
        OnlineLearner(13, 0.1)


# --------------------------------------------------------------------------- threshold search


def session(eps=0.1, M=16, allowance=10_000):
    return ThresholdSession(batch_size(M, eps), eps, M, allowance)


def test_threshold_passes_on_exact_prediction():
    psi = random_state(2, RngStream(5))
    p = PauliString.from_label("XZ")
    passes = 0
    for seed in range(200):
        t = session()
        passes += threshold_check(t, p, expectation(psi, p), psi, RngStream(seed)).passed
    assert passes >= 198


def test_threshold_flags_far_prediction_with_accurate_refinement():
    psi = random_state(2, RngStream(6))
    p = PauliString.from_label("YY")
    eps = 0.1
    truth = expectation(psi, p)
    good = 0
    for seed in range(100):
        t = session(eps)
        res = threshold_check(t, p, truth + 2 * eps, psi, RngStream(seed))
        good += (not res.passed) and abs(res.b - truth) <= eps / 4
    assert good >= 95


@given(st.floats(-1, 1), st.integers(0, 2**32 - 1))
def test_threshold_contract(a, seed):
    psi = random_state(2, RngStream(seed, 1))
    p = PauliString.from_label("ZX")
    eps = 0.1
    truth = expectation(psi, p)
    res = threshold_check(session(eps), p, a, psi, RngStream(seed, 2))
    # guarantee predicate at the boundary band; hold with overwhelming probability at these batch sizes
    if res.passed:
        assert abs(a - truth) <= eps
    else:
        assert abs(a - truth) > eps / 4


def test_flag_consumes_one_batch_and_exhaustion():
    psi = StateVector.basis(1)
    z = PauliString.from_label("Z")
    t = ThresholdSession(100, 0.2, 4, allowance=2)
    threshold_check(t, z, -1.0, psi, RngStream(0))
    assert t.consumed_batches == 1 and t.ledger.batches_used == 1
    threshold_check(t, z, -1.0, psi, RngStream(1))
    with pytest.raises(BatchExhaustedError) as info:
        threshold_check(t, z, -1.0, psi, RngStream(2))
    assert info.value.ledger is t.ledger
    assert t.ledger.copies_total == 2 * 100


# --------------------------------------------------------------------------- shadow tomography


def test_shadow_single_observable():
    eps = 0.1
    est, ledger = shadow_tomography(StateVector.basis(1), [PauliString.from_label("Z")], eps, RngStream(0))
    assert 1 - eps <= est[0] <= 1 + 1e-12
    assert ledger.copies_total == batch_allowance(1, eps) * batch_size(1, eps)


def test_shadow_random_paulis_n4_m64():
    ok = 0
    for seed in range(100):
        gen = RngStream(seed, 1).gen
        psi = random_state(4, gen)
        obs = [random_pauli(4, gen) for _ in range(64)]
        est, ledger = shadow_tomography(psi, obs, 0.1, RngStream(seed, 2))
        truth = np.array([expectation(psi, p) for p in obs])
        ok += np.max(np.abs(est - truth)) <= 0.1
        assert ledger.copies_consumed <= ledger.copies_total
        # every flag discards its batch; at most one batch is still live at the end
        assert ledger.batches_used - 1 <= ledger.learner_updates <= ledger.batches_used
    assert ok >= 90


def test_shadow_copy_growth_log_squared():
    eps = 0.1
    copies = {}
    for M in (16, 256):
        gen = RngStream(M).gen
        psi = random_state(3, gen)
        _, ledger = shadow_tomography(psi, [random_pauli(3, gen) for _ in range(M)], eps, RngStream(M, 1))
        copies[M] = ledger.copies_total
    assert copies[256] / copies[16] <= (math.log(256) / math.log(16)) ** 2


def test_shadow_rejects_large_norm_observables():
    with pytest.raises(ValueError):
        shadow_tomography(StateVector.basis(1), [2 * np.eye(2)], 0.1, RngStream(0))


def test_shadow_trace_csv(tmp_path):
    trace = []
    psi = random_state(2, RngStream(9))
    shadow_tomography(psi, [random_pauli(2, RngStream(9, k)) for k in range(5)], 0.2, RngStream(10), trace=trace)
    path = tmp_path / "trace.csv"
    write_trace_csv(trace, path)
    rows = list(csv.DictReader(open(path)))
    assert [int(r["k"]) for r in rows] == list(range(5))
    assert set(rows[0]) == {"k", "a_k", "outcome", "b_k", "batches_used", "gate_applications"}


# --------------------------------------------------------------------------- gradient protocol


def test_backprop_zero_gradient_qnn():
    n = 2
    layers = [Layer(Circuit(n + 1), PauliString.single(n + 1, 0, "Z")) for _ in range(6)]
    m = LayeredModel(n, layers, np.linspace(0, 1, 6), PauliString.single(n + 1, 0, "Z"), ModelKind.QNN)
    report, _ = backprop_gradients(m, random_state(n, RngStream(1)), 0.1, RngStream(2))
    assert np.all(np.abs(report.values) <= 0.1)


def test_backprop_soundness_and_ledger():
    m = random_model(3, 16, RngStream(4, 1), "QNN", fixed_depth=2)
    phi = random_state(3, RngStream(4, 2))
    report, ledger = backprop_gradients(m, phi, 0.1, RngStream(4, 3))
    assert report.max_abs_error(exact_gradient(m, phi).values) <= 0.1
    assert ledger.copies_total == report.info["R"] * report.info["m0"]
    assert ledger.copies_consumed <= ledger.copies_total
    assert ledger.learner_updates == report.info["mistakes"]
    assert ledger.learner_updates <= 40 * (m.n + 2) / 0.1**2


def test_backprop_gate_ratio_m64_vs_m16():
    gates = {}
    for M in (16, 64):
        m = random_model(3, M, RngStream(1, 1), "QNN", fixed_depth=2)
        _, ledger = backprop_gradients(m, None, 0.1, RngStream(1, 3))
        gates[M] = ledger.gate_applications
    assert gates[64] / gates[16] <= 6


def test_backprop_rebuild_is_quadratic():
    m = random_model(3, 16, RngStream(2, 1), "QNN", fixed_depth=2)
    _, lazy = backprop_gradients(m, None, 0.1, RngStream(2, 3))
    _, rebuilt = backprop_gradients(m, None, 0.1, RngStream(2, 3), rebuild=True)
    assert rebuilt.gate_applications > 4 * lazy.gate_applications


def test_backprop_rejects_wrong_kind_and_cap():
    with pytest.raises(ValueError):
        backprop_gradients(random_model(2, 3, RngStream(0)), None, 0.1, RngStream(0))
    with pytest.raises(ResourceCapError):
        backprop_gradients(random_model(11, 2, RngStream(0), "QNN"), None, 0.1, RngStream(0))


def test_planted_truth_rotation_tracks_gradient_states():
    m = random_model(2, 6, RngStream(7, 1), "QNN", fixed_depth=2)
    phi = random_state(2, RngStream(7, 2))
    exact = exact_gradient(m, phi).values
    obs = gradient_state_observable(m)
    l = OnlineLearner(m.n + 2, 0.1, omega=build_gradient_state(m, phi, 0).density())
    for k in range(m.M):
        assert learner_predict(l, obs) == pytest.approx(exact[k] / 2, abs=1e-10)
        if k + 1 < m.M:
            rotate_learner(l, lambda arr, k=k: advance_gradient_array(arr, m, k))
            assert np.allclose(l.omega.mat, build_gradient_state(m, phi, k + 1).density().mat, atol=1e-9)


def test_planted_truth_learner_never_flags():
    m = random_model(2, 8, RngStream(8, 1), "QNN", fixed_depth=2)
    phi = random_state(2, RngStream(8, 2))
    l = OnlineLearner(m.n + 2, 0.025, omega=build_gradient_state(m, phi, 0).density())
    report, ledger = backprop_gradients(m, phi, 0.1, RngStream(8, 3), learner=l)
    assert ledger.batches_used <= 1
    assert report.max_abs_error(exact_gradient(m, phi).values) <= 0.1


# --------------------------------------------------------------------------- swap-test baseline


def involutory_model(n, M, seed):
    gen = RngStream(seed).gen
    paulis = [random_pauli(n, gen) for _ in range(M)]
    layers = [Layer(Circuit(n, (Gate("PAULI", pauli=random_pauli(n, gen)),)), p) for p in paulis]
    return LayeredModel(n, layers, gen.uniform(-np.pi, np.pi, M), random_pauli(n, gen))


def test_swap_test_trivial_single_layer():
    m = LayeredModel(1, [Layer(Circuit(1), PauliString.from_label("X"))], [np.pi / 4], PauliString.from_label("Z"))
    report, gates = ideal_swap_test_gradient(m, StateVector.basis(1))
    assert np.allclose(report.values, exact_gradient(m, StateVector.basis(1)).values, atol=1e-15)
    assert gates <= 4 + 2 * m.forward_cost


def test_swap_test_random_involutory_m20():
    m = involutory_model(3, 20, 11)
    phi = random_state(3, RngStream(12))
    report, gates = ideal_swap_test_gradient(m, phi)
    assert np.allclose(report.values, exact_gradient(m, phi).values, atol=1e-10)
    # primitive-gate count: both preparations plus every layer undone on both branches
    assert gates == 4 * m.forward_cost + 2 * m.M - 2 * len(m.layers[0].fixed) - 2
    assert gates == report.ledger.gate_applications


def test_swap_test_single_gate_layers_bound():
    n, M = 3, 40
    gen = RngStream(13).gen
    layers = [Layer(Circuit(n), random_pauli(n, gen)) for _ in range(M)]
    m = LayeredModel(n, layers, gen.uniform(-np.pi, np.pi, M), random_pauli(n, gen))
    phi = random_state(n, gen)
    report, gates = ideal_swap_test_gradient(m, phi)
    assert np.allclose(report.values, exact_gradient(m, phi).values, atol=1e-10)
    assert gates <= 4 * M + 2 * m.forward_cost


def test_swap_test_rejects_non_involution_and_qnn():
    m = LayeredModel(2, [Layer(Circuit(2, (Gate("S", (0,)),)), PauliString.from_label("XY"))], [0.2],
                     PauliString.from_label("ZZ"))
    with pytest.raises(ValueError):
        ideal_swap_test_gradient(m)
    with pytest.raises(ValueError):
        ideal_swap_test_gradient(random_model(2, 2, RngStream(0), "QNN"))
