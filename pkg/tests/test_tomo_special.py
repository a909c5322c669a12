import itertools

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from gentlegrad.ledger import CopyLedger, ResourceCapError
from gentlegrad.models import random_circuit, random_pauli
from gentlegrad.qcore import (
    Circuit,
    Gate,
    PauliString,
    StateVector,
    bell_outcome_distribution,
    expectation,
    random_state,
)
from gentlegrad.rng import RngStream
from gentlegrad.tomo_special import (
    BELL_FACTOR,
    BellEstimate,
    bell_character,
    bell_pairs,
    enumerate_circuit_states,
    identify_circuit,
    pauli_magnitudes_bell,
    pauli_signs_vote,
    sign_vote_shots,
    special_case_gradient,
)

PAULI_2X2 = {
    "I": np.eye(2),
    "X": np.array([[0, 1], [1, 0]]),
    "Y": np.array([[0, -1j], [1j, 0]]),
    "Z": np.diag([1, -1]),
}
BELL_STATES = [np.array(v) / np.sqrt(2) for v in ([1, 0, 0, 1], [1, 0, 0, -1], [0, 1, 1, 0], [0, 1, -1, 0])]


def all_paulis(n):
    return [PauliString(n, x, z) for x in range(1 << n) for z in range(1 << n)]


def state_with_z_mean(value):
    a = np.arccos(value) / 2
    return StateVector.from_amplitudes([np.cos(a), np.sin(a)])


# --------------------------------------------------------------------------- Bell factors and identity


def test_bell_factor_table_matches_brute_force():
    table = [[np.vdot(b, np.kron(P, P) @ b).real for b in BELL_STATES] for P in PAULI_2X2.values()]
    assert np.array_equal(np.rint(table).astype(np.int8), BELL_FACTOR)
    assert np.allclose(table, BELL_FACTOR, atol=1e-15)


@pytest.mark.parametrize("n", [1, 2])
def test_bell_identity_full_enumeration(n):
    for seed in range(5):
        s = random_state(n, RngStream(seed, n))
        dist = bell_outcome_distribution(s, s)
        assert dist.shape == (4**n,)
        assert abs(dist.sum() - 1) <= 1e-12
        for p in all_paulis(n):
            assert abs(float(dist @ bell_character(p)) - expectation(s, p) ** 2) <= 1e-12


def test_bell_character_ignores_sign():
    p = PauliString.from_label("XZ")
    assert np.array_equal(bell_character(p), bell_character(PauliString(2, p.x_mask, p.z_mask, -1)))


def test_bell_estimate_validation():
    with pytest.raises(ValueError):
        BellEstimate(PauliString.from_label("Z"), 0.5, 0)
    assert BellEstimate(PauliString.from_label("Z"), -0.01, 3).magnitude == 0.0


# --------------------------------------------------------------------------- magnitudes


def test_magnitudes_trivial_cases():
    zero = StateVector.basis(1)
    est = pauli_magnitudes_bell(zero, [PauliString.from_label("Z"), PauliString.from_label("X")], 0.1, RngStream(0))
    assert est[0].squared_mean == 1.0
    assert abs(est[1].squared_mean) <= 0.1


def test_magnitudes_random_two_qubit_within_three_sigma():
    sigma = random_state(2, RngStream(11))
    paulis = all_paulis(2)
    pairs = 20_000
    est = pauli_magnitudes_bell(sigma, paulis, 0.1, RngStream(12), pairs=pairs)
    for p, e in zip(paulis, est):
        truth = expectation(sigma, p) ** 2
        sd = np.sqrt(max(1 - truth**2, 1e-12) / pairs)
        assert abs(e.squared_mean - truth) <= 3 * sd + 1e-12


def test_magnitudes_share_one_batch_and_ledger():
    sigma = random_state(3, RngStream(2))
    paulis = [random_pauli(3, RngStream(3, i)) for i in range(10)]
    ledger = CopyLedger()
    est = pauli_magnitudes_bell(lambda: sigma, paulis, 0.2, RngStream(4), ledger=ledger)
    pairs = bell_pairs(10, 0.2)
    assert all(e.samples == pairs for e in est)
    assert ledger.copies_consumed == 2 * pairs
    assert ledger.destructive_shots == pairs


def test_magnitudes_width_mismatch_and_empty():
    with pytest.raises(ValueError):
        pauli_magnitudes_bell(StateVector.basis(2), [PauliString.from_label("Z")], 0.1, RngStream(0))
    assert pauli_magnitudes_bell(StateVector.basis(1), [], 0.1, RngStream(0)) == []


@given(st.integers(1, 10**4), st.floats(0.05, 0.5))
def test_bell_pairs_grow_logarithmically(M, eps):
    pairs = bell_pairs(M, eps)
    assert pairs >= 4 * max(np.log(M), 1) / eps**4 - 1e-6
    assert bell_pairs(4 * M, eps) <= pairs * (1 + np.log(4) / max(np.log(M), 1)) + 1


# --------------------------------------------------------------------------- signs


def test_sign_vote_eigenstate_always_positive():
    for seed in range(20):
        assert pauli_signs_vote(StateVector.basis(1), [PauliString.from_label("Z")], 0.2, RngStream(seed)) == [1]


def test_sign_vote_negative_mean():
    sigma = state_with_z_mean(-0.5)
    votes = [pauli_signs_vote(sigma, [PauliString.from_label("Z")], 0.2, RngStream(seed))[0] for seed in range(200)]
    assert votes.count(-1) >= 198


def test_sign_vote_recovers_every_large_component():
    sigma = random_state(3, RngStream(21))
    cands = [p for p in all_paulis(3) if abs(expectation(sigma, p)) >= 0.1]
    ledger = CopyLedger()
    signs = pauli_signs_vote(sigma, cands, 0.1, RngStream(22), M=64, ledger=ledger)
    assert signs == [1 if expectation(sigma, p) > 0 else -1 for p in cands]
    assert ledger.copies_consumed == len(cands) * sign_vote_shots(64, 0.1)


def test_sign_vote_empty():
    assert pauli_signs_vote(StateVector.basis(1), [], 0.2, RngStream(0)) == []


# --------------------------------------------------------------------------- special-case gradient


def test_special_case_identity_circuit():
    n = 3
    zs = [PauliString.single(n, j, "Z") for j in range(n)]
    others = [PauliString.single(n, 0, "X"), PauliString.single(n, 2, "Y"), PauliString.from_label("XYZ")]
    report = special_case_gradient(Circuit(n), StateVector.basis(n), zs + others, 0.15, RngStream(0))
    assert np.allclose(report.values[:n], 2.0)
    assert np.all(np.abs(report.values[n:]) <= 0.15)
    assert report.ledger.phase_total("copies_consumed") == report.ledger.copies_consumed
    assert set(report.ledger.phases) == {"magnitude", "sign"}


def test_special_case_random_circuits_90_of_100():
    ok = 0
    for seed in range(100):
        gen = RngStream(seed, 0).gen
        V = random_circuit(3, 8, gen)
        paulis = [random_pauli(3, gen) for _ in range(20)]
        rho = StateVector.basis(3)
        report = special_case_gradient(V, rho, paulis, 0.15, RngStream(seed, 1))
        sigma = V.apply(rho)
        truth = np.array([2 * expectation(sigma, p) for p in paulis])
        ok += report.max_abs_error(truth) <= 0.15
    assert ok >= 90


def test_special_case_composition_property():
    gen = RngStream(40).gen
    V = random_circuit(2, 6, gen)
    paulis = all_paulis(2)[1:]
    eps = 0.2
    report = special_case_gradient(V, StateVector.basis(2), paulis, eps, RngStream(41))
    sigma = V.apply(StateVector.basis(2))
    for value, p in zip(report.values, paulis):
        truth = expectation(sigma, p)
        if value == 0:
            assert abs(truth) <= eps / 4 * 1.5
        else:
            assert abs(value - 2 * truth) <= 2 * eps


def test_special_case_magnitude_copies_grow_logarithmically():
    sigma = StateVector.basis(3)
    copies = []
    for M in (16, 64):
        paulis = [random_pauli(3, RngStream(M, i)) for i in range(M)]
        report = special_case_gradient(Circuit(3), sigma, paulis, 0.15, RngStream(M))
        copies.append(report.ledger.phases["magnitude"]["copies_consumed"])
    assert copies[1] / copies[0] <= 1.5


def test_special_case_width_mismatch():
    with pytest.raises(ValueError):
        special_case_gradient(Circuit(2), StateVector.basis(3), [PauliString.from_label("ZZZ")], 0.1, RngStream(0))


# --------------------------------------------------------------------------- circuit identification


def test_enumeration_deduplicates_by_state():
    circuits, states = enumerate_circuit_states(["H"], 2, 1)
    # |0>, |+>; HH returns to |0>
    assert len(states) == 2
    for c, s in zip(circuits, states):
        assert abs(c.apply(StateVector.basis(1)).fidelity(s) - 1) <= 1e-12


def test_enumeration_states_are_distinct():
    _, states = enumerate_circuit_states(["H", "S", "CNOT"], 2, 2)
    for a, b in itertools.combinations(states, 2):
        assert a.fidelity(b) < 1 - 1e-8


def test_enumeration_cap_and_width_limits():
    with pytest.raises(ResourceCapError):
        enumerate_circuit_states(["H", "S", "CNOT"], 5, 3)
    with pytest.raises(ResourceCapError):
        identify_circuit(["H"], 1, 4, StateVector.basis(4), RngStream(0))
    with pytest.raises(ValueError):
        enumerate_circuit_states(["FOO"], 1, 1)


def test_identify_hadamard_on_first_qubit():
    psi = Circuit(2, (Gate("H", (0,)),)).apply(StateVector.basis(2))
    result = identify_circuit(["H", "S", "CNOT"], 2, 2, psi, RngStream(1))
    assert result.circuit.apply(StateVector.basis(2)).fidelity(psi) >= 1 - 1e-10


def test_identify_zero_state_identity_wins():
    result = identify_circuit(["H", "S", "CNOT"], 1, 2, StateVector.basis(2), RngStream(2))
    assert result.state.fidelity(StateVector.basis(2)) >= 1 - 1e-10


def test_identify_bell_state():
    bell = StateVector.from_amplitudes([1, 0, 0, 1], normalize=True)
    result = identify_circuit(["H", "S", "CNOT"], 2, 2, bell, RngStream(3))
    assert result.state.fidelity(bell) >= 0.99
    assert result.ledger.copies_consumed == result.shots


def test_identify_argmax_recovery_random_targets():
    circuits, states = enumerate_circuit_states(["H", "S", "CNOT"], 2, 2)
    eps = 0.2
    for seed in range(10):
        psi = states[int(RngStream(seed).gen.integers(len(states)))]
        result = identify_circuit(["H", "S", "CNOT"], 2, 2, psi, RngStream(seed, 1), eps=eps)
        assert result.state.fidelity(psi) >= 1 - 2 * eps
