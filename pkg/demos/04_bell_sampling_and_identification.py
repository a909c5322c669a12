"""
Two-copy Bell sampling and circuit identification
=================================================

One batch of Bell measurements gives every squared Pauli expectation at once;
Clifford shadows pick out which short circuit prepared an unknown state.
"""
import numpy as np

from gentlegrad import RngStream
from gentlegrad.models import random_circuit, random_pauli
from gentlegrad.qcore import StateVector, expectation
from gentlegrad.tomo_special import identify_circuit, special_case_gradient

gen = RngStream(0).gen
V = random_circuit(3, 8, gen)
paulis = [random_pauli(3, gen) for _ in range(20)]
rho = StateVector.basis(3)
report = special_case_gradient(V, rho, paulis, 0.15, RngStream(1))
truth = np.array([2 * expectation(V.apply(rho), p) for p in paulis])
print("max error:", round(report.max_abs_error(truth), 4))
print("copies by phase:", {k: v["copies_consumed"] for k, v in report.ledger.phases.items()})

bell = StateVector.from_amplitudes([1, 0, 0, 1], normalize=True)
res = identify_circuit(["H", "S", "CNOT"], 3, 2, bell, RngStream(2))
print(f"{res.candidates} candidate states, {res.shots} shadows")
print("recovered circuit:", [(g.name, g.qubits) for g in res.circuit.gates])
print("fidelity with target:", round(res.state.fidelity(bell), 6))
