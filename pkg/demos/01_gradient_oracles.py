"""
Four ways to get an exact gradient
==================================

Adjoint sweep, parameter shift, finite differences and the ancilla readout of
gradient states all agree on a random QNN.
"""
import numpy as np

from gentlegrad import RngStream, random_model
from gentlegrad.models import (
    build_gradient_state,
    exact_gradient,
    finite_difference_gradient,
    gradient_state_observable,
    parameter_shift_gradient,
)
from gentlegrad.qcore import expectation, random_state

m = random_model(3, 10, RngStream(0, 1), "QNN", fixed_depth=2)
phi = random_state(3, RngStream(0, 2))

adjoint = exact_gradient(m, phi)
shift = parameter_shift_gradient(m, phi).values
fd = finite_difference_gradient(m, phi)
obs = gradient_state_observable(m)
readout = np.array([2 * expectation(build_gradient_state(m, phi, k), obs) for k in range(m.M)])

np.set_printoptions(precision=4, suppress=True)
print("adjoint        ", adjoint.values)
print("shift - adjoint", np.max(np.abs(shift - adjoint.values)))
print("fd - adjoint   ", np.max(np.abs(fd - adjoint.values)))
print("state - adjoint", np.max(np.abs(readout - adjoint.values)))

# the adjoint sweep costs a small multiple of one forward pass
print("adjoint gates / forward gates:", adjoint.ledger.gate_applications / m.forward_cost)
