"""Optimal control of coupled reaction-diffusion systems.

Forward IMEX Crank-Nicolson simulation, discrete adjoint gradients and a
box-projected Polak-Ribiere conjugate-gradient optimiser, with the
Nodal-Lefty activator/inhibitor system as the reference model.
"""
__version__ = "0.1.0"

from .grid import (Grid2D, ScalarField, SpeciesState, SolverError, GridMismatchError, laplacian_neumann,
                   helmholtz_solve, HelmholtzSolver, l2_inner, l2_norm, relative_error, set_deterministic)
from .model import (Activator, Inhibitor, RegulatorySpec, InputGainSpec, ModelSpec, DomainError, eval_H,
                    grad_H, eval_f, eval_f_prime, reaction_source, nodal_lefty_preset)
from .forward import (TimeGrid, ControlField, Trajectory, Stepper, step_imex_cn, simulate,
                      make_initial_condition, make_target, make_target_preset, linf_monitor_bound)
from .adjoint import (CostSpec, ReducedProblem, AdjointTrajectory, tangent_step, adjoint_step, tangent_sweep,
                      adjoint_sweep, reduced_cost, reduced_gradient, stationarity_residual, gradcheck,
                      duality_residual)
from .optim import OptimConfig, OptimResult, project_box, pr_beta, line_search_armijo, optimize
