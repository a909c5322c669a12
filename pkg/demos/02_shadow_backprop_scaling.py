"""
Backpropagation through gradient states
=======================================

Copies grow like log^2 M while gate work stays close to linear in M; rebuilding
every gradient state from scratch is quadratic.
"""
from gentlegrad import RngStream, random_model
from gentlegrad.models import exact_gradient
from gentlegrad.shadow import backprop_gradients

print(f"{'M':>5} {'copies':>9} {'gates':>8} {'rebuild gates':>14} {'max err':>8}")
for M in (16, 64, 256):
    m = random_model(3, M, RngStream(M, 1), "QNN", fixed_depth=2)
    report, ledger = backprop_gradients(m, None, 0.1, RngStream(M, 2))
    _, naive = backprop_gradients(m, None, 0.1, RngStream(M, 2), rebuild=True)
    err = report.max_abs_error(exact_gradient(m).values)
    print(f"{M:>5} {ledger.copies_total:>9} {ledger.gate_applications:>8} {naive.gate_applications:>14} {err:>8.3f}")

# a handful of threshold flags is all the learner ever needs here
print("learner updates at M=256:", ledger.learner_updates, "of", report.info["R"], "batches")
