"""
Backpropagation for parameterized Markov chains
===============================================

A single stored trajectory yields a sample for every gate's derivative, and
the per-component variance does not grow with chain length.
"""
import numpy as np

from gentlegrad import RngStream
from gentlegrad.ledger import CopyLedger
from gentlegrad.markov import markov_backprop_estimate, markov_exact_gradient, path_gradient_samples, random_chain, sample_paths

c = random_chain(4, 8, RngStream(7))
est, se = markov_backprop_estimate(c, 100_000, RngStream(8))
exact = markov_exact_gradient(c)
print("z-scores:", np.round((est - exact) / se, 2))

first = random_chain(4, 3, RngStream(9)).gates
for N in (8, 32, 128):
    chain = random_chain(4, N, RngStream(10), observable="sign", gates=first)
    configs, _ = sample_paths(chain, 100_000, RngStream(11))
    print(f"N={N:>3}  variance of first component {path_gradient_samples(chain, configs)[:, 0].var():.3f}")

ledger = CopyLedger()
markov_exact_gradient(c, ledger)
print("exact sweep cost by phase:", {k: v["gate_applications"] for k, v in ledger.phases.items()})
