"""Annealed moments of the parabolic Anderson model with moving catalysts."""

__version__ = "0.1.0"

from .lattice import ExtendedReal, KernelSpec, LatticeSpec, green_function, green_star
from .catalysts import (
    CatalystModel,
    CatalystPath,
    CatalystState,
    query,
    sample_initial,
    simulate_path,
    stationarity_check,
)
from .reactant import ModelParams, fk_estimate, integrate_pde
from .moments import (
    MomentSeries,
    annealed_moment,
    annealed_moments,
    closed_form_lambda0,
    exact_moment_small,
    isrw_lambda0_oracle,
    isrw_lambda0_series,
    replica_seed,
)
from .lyapunov import (
    dichotomy_check,
    estimate_lambda,
    intermittency_gap,
    kappa_sweep,
    predicted_regime,
    scaling_constant,
)
from .polaron import (
    RadialProfile,
    functional_value,
    gaussian_profile,
    scale_free_value,
    solve_variational,
    theta_estimate,
)
from .experiments import ExperimentConfig, emit_report, parse_config, run_experiment
