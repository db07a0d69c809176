"""Numerical laboratory for the delayed von Karman plate in a gas flow."""

__version__ = "0.1.0"

from .errors import *  # noqa: F401,F403
from .grid import (Domain, Field, apply_biharmonic, apply_laplacian, extend_by_zero, inner,  # noqa: F401
                   laplacian_sq_norm, read_field, sobolev_norm, solve_biharmonic, write_field)
from .vonkarman import (AiryCache, AiryConfig, LoadSpec, airy, bracket, lipschitz_probe,  # noqa: F401
                        nonlinearity, potential_energy)
from .delay import (DelaySpec, History, compute_tstar, delay_estimates_probe, delay_potential,  # noqa: F401
                    history_push, history_sample, quadrature_error_estimate, read_history,
                    write_history)
from .dynamics import (EnergyLedger, LyapunovParams, ModelParams, PlateState, choose_lyapunov_params,  # noqa: F401
                       dissipativity_report, energy_identity_residual, lyapunov_value, run, step)
from .analysis import (EquilibriumSet, StationaryProblem, distance_to_equilibria, find_equilibria,  # noqa: F401
                       quasistability_fit, solve_stationary, static_delay_operator)
from .possio import (IntervalGrid, PossioField, finite_hilbert, hilbert_symbol_apply,  # noqa: F401
                     invert_finite_hilbert)
