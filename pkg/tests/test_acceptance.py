"""Acceptance criteria, one test per criterion.

Each test records a short measured summary through ``record_property("detail", ...)``;
``conftest.py`` prints one PASS/FAIL line per criterion at the end of the run.
"""
import math
import time

import numpy as np

from gentlegrad.baselines import paramshift_shot_gradient, shots_to_precision, spsa_variance_experiment
from gentlegrad.bench import ExperimentConfig, cost_model_table, cost_table_csv, run_experiment
from gentlegrad.cli import EXIT_OK, main
from gentlegrad.clifford import KAPPA_S
from gentlegrad.ledger import CopyLedger
from gentlegrad.markov import (
    enumerate_paths,
    markov_backprop_estimate,
    markov_evaluate,
    markov_exact_gradient,
    path_gradient_samples,
    random_chain,
    sample_paths,
)
from gentlegrad.models import (
    Layer,
    LayeredModel,
    build_gradient_state,
    build_reduction_qnn,
    exact_gradient,
    finite_difference_gradient,
    gradient_state_observable,
    parameter_shift_gradient,
    random_circuit,
    random_model,
    random_pauli,
)
from gentlegrad.qcore import Circuit, PauliString, StateVector, bell_outcome_distribution, expectation, random_state
from gentlegrad.rng import RngStream
from gentlegrad.shadow import KAPPA_R, backprop_gradients, ideal_swap_test_gradient
from gentlegrad.tomo_special import bell_character, identify_circuit, special_case_gradient


def loglog_slope(xs, ys):
    return float(np.polyfit(np.log(xs), np.log(ys), 1)[0])


def test_criterion_01_gradient_oracles(record_property):
    """C1 gradient oracle agreement: adjoint, parameter shift, gradient-state readout, finite differences"""
    start = time.perf_counter()
    worst_shift = worst_state = worst_fd = 0.0
    for seed in range(100):
        gen = RngStream(seed, 101).gen
        n, M = int(gen.integers(1, 7)), int(gen.integers(1, 25))
        kind = "QNN" if seed % 2 == 0 else "SimpleVariational"
        m = random_model(n, M, gen, kind, fixed_depth=2)
        phi = random_state(n, gen)
        adj = exact_gradient(m, phi).values
        worst_shift = max(worst_shift, np.max(np.abs(parameter_shift_gradient(m, phi).values - adj)))
        worst_fd = max(worst_fd, np.max(np.abs(finite_difference_gradient(m, phi, h=1e-4) - adj)))
        if kind == "QNN":
            obs = gradient_state_observable(m)
            readout = np.array([2 * expectation(build_gradient_state(m, phi, k), obs) for k in range(M)])
            worst_state = max(worst_state, np.max(np.abs(readout - adj)))
    elapsed = time.perf_counter() - start
    record_property("detail", f"shift {worst_shift:.1e}, state {worst_state:.1e}, fd {worst_fd:.1e}, {elapsed:.1f}s")
    assert worst_shift <= 1e-9
    assert worst_state <= 1e-9
    assert worst_fd <= 1e-6
    assert elapsed < 60


def test_criterion_02_reduction_identity(record_property):
    """C2 reduction identity: derivative at zero equals twice the observable expectation"""
    worst = 0.0
    z1 = PauliString.single(3, 0, "Z")
    for seed in range(20):
        gen = RngStream(seed, 102).gen
        circuits = [random_circuit(3, 8, gen, ("H", "S", "CNOT")) for _ in range(8)]
        psi = random_state(3, gen)
        m = build_reduction_qnn(circuits)
        assert np.all(m.theta == 0)
        grad = exact_gradient(m, psi).values
        want = np.array([2 * expectation(c.apply(psi), z1) for c in circuits])
        worst = max(worst, np.max(np.abs(grad - want)))
    record_property("detail", f"max deviation {worst:.1e}")
    assert worst <= 1e-10


def test_criterion_03_backprop_soundness(record_property):
    """C3 shadow backpropagation soundness at n=3, M=16, eps=0.1"""
    start = time.perf_counter()
    ok, max_updates = 0, 0
    eps, n = 0.1, 3
    for seed in range(100):
        m = random_model(n, 16, RngStream(seed, 103), "QNN", fixed_depth=2)
        phi = random_state(n, RngStream(seed, 104))
        report, ledger = backprop_gradients(m, phi, eps, RngStream(seed, 105))
        ok += report.max_abs_error(exact_gradient(m, phi).values) <= eps
        max_updates = max(max_updates, ledger.learner_updates)
    elapsed = time.perf_counter() - start
    bound = KAPPA_R * (n + 2) / eps**2
    record_property("detail", f"{ok}/100 within eps, max updates {max_updates} <= {bound:.0f}, {elapsed:.1f}s")
    assert ok >= 90
    assert max_updates <= bound
    assert elapsed < 600


def test_criterion_04_backprop_scaling(record_property):
    """C4 backpropagation copy and gate scaling in M at n=3, eps=0.1"""
    copies, gates, rebuilt = {}, {}, {}
    for M in (16, 64, 256):
        m = random_model(3, M, RngStream(M, 106), "QNN", fixed_depth=2)
        _, ledger = backprop_gradients(m, None, 0.1, RngStream(M, 107))
        copies[M], gates[M] = ledger.copies_total, ledger.gate_applications
        if M != 64:
            _, naive = backprop_gradients(m, None, 0.1, RngStream(M, 107), rebuild=True)
            rebuilt[M] = naive.gate_applications
    copy_ratio = copies[256] / copies[16]
    gate_ratio_4x = gates[64] / gates[16]
    per_param = gates[256] / gates[16] / 16
    naive_per_param = rebuilt[256] / rebuilt[16] / 16
    record_property("detail", f"copies x{copy_ratio:.2f}, gates(64/16) x{gate_ratio_4x:.2f}, "
                              f"gates per parameter x{per_param:.2f} vs rebuild x{naive_per_param:.1f}")
    assert copy_ratio <= (math.log(256) / math.log(16)) ** 2 * 1.5
    assert gate_ratio_4x <= 6
    assert per_param <= 6
    assert naive_per_param >= 8 * per_param


def test_criterion_05_paramshift_shot_scaling(record_property):
    """C5 parameter-shift shot baseline gate exponent over M in {8, 16, 32, 64}"""
    Ms = [8, 16, 32, 64]
    gates = []
    for M in Ms:
        m = random_model(3, M, RngStream(M, 108))
        gates.append(paramshift_shot_gradient(m, None, 0.1, 0.05, RngStream(M, 109)).ledger.gate_applications)
    slope = loglog_slope(Ms, gates)
    record_property("detail", f"exponent {slope:.3f}")
    assert 1.7 <= slope <= 2.3


def test_criterion_06_spsa_variance_law(record_property):
    """C6 SPSA variance grows linearly in M, as do shots to precision"""
    table = spsa_variance_experiment(1.0, 0.1, [8, 16, 32, 64], 4000, RngStream(110))
    shots = shots_to_precision(table.variance, 0.1)
    shot_slope = loglog_slope(table.M, shots)
    record_property("detail", f"variance slope {table.slope:.3f}, shots slope {shot_slope:.3f}")
    assert 0.75 <= table.slope <= 1.25
    assert 0.75 <= shot_slope <= 1.25


def test_criterion_07_bell_sampling_scheme(record_property):
    """C7 Bell-sampling gradient scheme for random 3-qubit circuits, 20 Paulis, eps=0.15"""
    ok = 0
    for seed in range(100):
        gen = RngStream(seed, 111).gen
        V = random_circuit(3, 8, gen)
        paulis = [random_pauli(3, gen) for _ in range(20)]
        rho = StateVector.basis(3)
        report = special_case_gradient(V, rho, paulis, 0.15, RngStream(seed, 112))
        sigma = V.apply(rho)
        ok += report.max_abs_error([2 * expectation(sigma, p) for p in paulis]) <= 0.15
    mag = {}
    for M in (16, 64):
        paulis = [random_pauli(3, RngStream(M, i)) for i in range(M)]
        report = special_case_gradient(Circuit(3), StateVector.basis(3), paulis, 0.15, RngStream(M, 113))
        mag[M] = report.ledger.phases["magnitude"]["copies_consumed"]
    ratio = mag[64] / mag[16]
    record_property("detail", f"{ok}/100 within eps, magnitude copies x{ratio:.3f}")
    assert ok >= 90
    assert ratio <= 1.5


def test_criterion_08_bell_estimator_identity(record_property):
    """C8 Bell estimator identity by exhaustive outcome enumeration, n in {1, 2}"""
    worst = 0.0
    for n in (1, 2):
        for seed in range(10):
            s = random_state(n, RngStream(seed, 114 + n))
            dist = bell_outcome_distribution(s, s)
            for x in range(1 << n):
                for z in range(1 << n):
                    p = PauliString(n, x, z)
                    worst = max(worst, abs(float(dist @ bell_character(p)) - expectation(s, p) ** 2))
    record_property("detail", f"max deviation {worst:.1e}")
    assert worst <= 1e-12


def test_criterion_09_markov_backprop(record_property):
    """C9 Markov-chain backpropagation: exact path mean, Monte Carlo, N-independence, cost ratio"""
    worst = 0.0
    for n in (1, 2, 3):
        for N in (1, 3, 5):
            c = random_chain(n, N, RngStream(10 * n + N, 116))
            configs, probs = enumerate_paths(c)
            worst = max(worst, np.max(np.abs(probs @ path_gradient_samples(c, configs) - markov_exact_gradient(c))))
    c = random_chain(4, 8, RngStream(7))
    est, se = markov_backprop_estimate(c, 100_000, RngStream(8))
    z = float(np.max(np.abs(est - markov_exact_gradient(c)) / se))
    # calibration: a 3-SE box over 8 components misses about 2% of the time for a correct estimator
    zs = []
    for s in range(40):
        chain = random_chain(4, 8, RngStream(s, 117))
        e, sd = markov_backprop_estimate(chain, 100_000, RngStream(s, 118))
        zs.append(np.abs(e - markov_exact_gradient(chain)) / sd)
    zs = np.array(zs)
    miss, z2 = float(np.mean(zs.max(axis=1) > 3)), float(np.mean(zs**2))
    first = random_chain(4, 3, RngStream(119)).gates
    var = []
    for N in (8, 32):
        chain = random_chain(4, N, RngStream(120), observable="sign", gates=first)
        configs, _ = sample_paths(chain, 200_000, RngStream(121))
        var.append(path_gradient_samples(chain, configs)[:, 0].var())
    ratios = []
    for N in (4, 16, 64):
        chain = random_chain(3, N, RngStream(N, 122))
        fwd, grad = CopyLedger(), CopyLedger()
        markov_evaluate(chain, fwd)
        markov_exact_gradient(chain, grad)
        ratios.append(grad.gate_applications / fwd.gate_applications)
    record_property("detail", f"path mean {worst:.1e}, max |z| {z:.2f}, variance x{var[1] / var[0]:.2f}, "
                              f"time ratio {max(ratios):.2f}, calibration miss {miss:.3f} mean z^2 {z2:.2f}")
    assert worst <= 1e-10
    assert z <= 3
    assert miss <= 0.1 and 0.8 <= z2 <= 1.2
    assert 0.5 <= var[1] / var[0] <= 2
    assert max(ratios) <= 4


def test_criterion_10_swap_test_baseline(record_property):
    """C10 idealized swap-test baseline: exact gradients within 4M + 2F gates"""
    worst, slack = 0.0, math.inf
    for M in (1, 4, 16, 32, 64):
        gen = RngStream(M, 123).gen
        n = 3
        layers = [Layer(Circuit(n), random_pauli(n, gen)) for _ in range(M)]
        m = LayeredModel(n, layers, gen.uniform(-np.pi, np.pi, M), random_pauli(n, gen))
        phi = random_state(n, gen)
        report, gates = ideal_swap_test_gradient(m, phi)
        worst = max(worst, np.max(np.abs(report.values - exact_gradient(m, phi).values)))
        slack = min(slack, 4 * M + 2 * m.forward_cost - gates)
    record_property("detail", f"max deviation {worst:.1e}, min slack {slack} gates")
    assert worst <= 1e-10
    assert slack >= 0


def test_criterion_11_circuit_identification(record_property):
    """C11 circuit identification by Clifford shadows, n=2, gates {H, S, CNOT}, p <= 3"""
    gate_set = ["H", "S", "CNOT"]
    eps = 0.2
    ok, worst_shots_margin = 0, math.inf
    for seed in range(100):
        p = 1 + seed % 3
        target = random_circuit(2, p, RngStream(seed, 124), tuple(gate_set)).apply(StateVector.basis(2))
        res = identify_circuit(gate_set, p, 2, target, RngStream(seed, 125), eps=eps)
        ok += res.state.fidelity(target) >= 0.99
        worst_shots_margin = min(worst_shots_margin, KAPPA_S * math.log(res.candidates) / eps**2 - res.shots)
    record_property("detail", f"{ok}/100 with fidelity >= 0.99, shot margin {worst_shots_margin:.2f}")
    assert ok >= 90
    assert worst_shots_margin >= 0


def test_criterion_12_cost_model(record_property, capsys):
    """C12 cost model: parameter shift at 10^4 parameters and 1 ms per circuit takes about a day"""
    (_, t_ps, _), = cost_model_table(1e-3, [10_000])
    days = t_ps / 86400
    outputs = []
    for _ in range(2):
        assert main(["cost-table", "--tq-ms", "1", "--m", "10,100,1000,1898,10000"]) == EXIT_OK
        outputs.append(capsys.readouterr().out)
    record_property("detail", f"{days:.3f} days")
    assert 0.9 <= days <= 1.3
    assert outputs[0] == outputs[1] == cost_table_csv(1e-3, [10, 100, 1000, 1898, 10000])


def test_criterion_13_determinism_and_ledgers(tmp_path, record_property):
    """C13 determinism and ledger conservation: identical seeds give identical CSV bytes"""
    import json

    blobs = []
    for method in ("shadow-backprop", "paramshift-shots", "spsa", "markov", "pauli-gentle", "identify"):
        cfg_path = tmp_path / f"{method}.json"
        cfg_path.write_text(json.dumps({"method": method, "n": 2, "M_list": [4, 8], "repeats": 2, "seed": 7,
                                        "epsilon": 0.2, "constants": {"paths": 2000, "spsa_samples": 20}}))
        runs = []
        for i in range(2):
            out = tmp_path / f"{method}-{i}.csv"
            assert main(["run", "--config", str(cfg_path), "--out", str(out)]) == EXIT_OK
            runs.append(out.read_bytes())
        assert runs[0] == runs[1]
        blobs.append(runs[0])
    # every row's ledger is checked for conservation inside run_experiment; recheck one directly
    rows = run_experiment(ExperimentConfig(method="shadow-backprop", n=3, M=8, seed=3))
    m = random_model(3, 8, RngStream(3, 1), "QNN", fixed_depth=1)
    _, ledger = backprop_gradients(m, random_state(3, RngStream(3, 3)), 0.1, RngStream(3, 2))
    ledger.check_conservation()
    assert rows[0].copies_used == max(ledger.copies_total, ledger.copies_consumed)
    assert rows[0].gate_applications == ledger.gate_applications
    record_property("detail", f"{len(blobs)} methods byte-identical, ledgers conserved")
