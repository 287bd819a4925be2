"""Robust quantum gate synthesis by minimizing time-averaged perturbation Hamiltonians."""
__version__ = "0.1.0"

from .propagation import (ControlProblem, Trajectory, nominal_fidelity, perturbed_fidelity,
                          propagate_hamiltonians, propagate_nominal, time_averaged_hamiltonian)
from .uncertainty import (VARIANTS, RobustnessAssembly, Uncertainty, measure, robustness_value,
                          sample_perturbation)
from .differentiation import fidelity_and_gradient, fidelity_hessian, robustness_gradient
from .optimizer import DualInfeasible, OptimizerConfig, run_two_stage, solve_dual
from .evaluation import (SweepReport, check_averaging_bounds, filter_function_measure,
                         interaction_unitary, monte_carlo_sweep)
from . import open_systems  # noqa: F401  (registers the open-system variants)

__all__ = [
    "ControlProblem", "Trajectory", "nominal_fidelity", "perturbed_fidelity",
    "propagate_hamiltonians", "propagate_nominal", "time_averaged_hamiltonian",
    "VARIANTS", "RobustnessAssembly", "Uncertainty", "measure", "robustness_value",
    "sample_perturbation", "fidelity_and_gradient", "fidelity_hessian", "robustness_gradient",
    "DualInfeasible", "OptimizerConfig", "run_two_stage", "solve_dual", "SweepReport",
    "check_averaging_bounds", "filter_function_measure", "interaction_unitary",
    "monte_carlo_sweep", "open_systems",
]
