"""Gradient-estimation workbench for parameterized quantum circuits."""
from .baselines import paramshift_shot_gradient, spsa_gradient, spsa_variance_experiment
from .bench import ExperimentConfig, ResultRow, cost_model_table, emit_scaling_report, run_experiment
from .ledger import BatchExhaustedError, CopyLedger, ResourceCapError
from .markov import StochasticChain, markov_backprop_estimate, markov_exact_gradient, reverse_mode_chain
from .models import (
    GradientReport,
    LayeredModel,
    ModelKind,
    build_gradient_state,
    exact_gradient,
    parameter_shift_gradient,
    random_model,
)
from .qcore import Circuit, DensityMatrix, Gate, PauliString, StateVector
from .rng import RngStream
from .shadow import backprop_gradients, ideal_swap_test_gradient, shadow_tomography
from .tomo_special import identify_circuit, special_case_gradient

__version__ = "0.1.0"
