"""
Shot-based baselines
====================

Parameter shift with Hoeffding-sized shots costs about M^2 gates; SPSA variance
grows linearly in M, so the shots to reach a fixed precision do too.
"""
import numpy as np

from gentlegrad import RngStream, random_model
from gentlegrad.baselines import paramshift_shot_gradient, shots_to_precision, spsa_variance_experiment

Ms = [8, 16, 32, 64]
gates = []
for M in Ms:
    m = random_model(3, M, RngStream(M, 1))
    gates.append(paramshift_shot_gradient(m, None, 0.1, 0.05, RngStream(M, 2)).ledger.gate_applications)
print("parameter-shift gates:", gates)
print("fitted exponent:", round(float(np.polyfit(np.log(Ms), np.log(gates), 1)[0]), 3))

table = spsa_variance_experiment(1.0, 0.1, Ms, 4000, RngStream(3))
print("SPSA variance:", np.round(table.variance, 2), "slope", round(table.slope, 3))
print("shots to eps=0.1:", shots_to_precision(table.variance, 0.1))
