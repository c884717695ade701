"""Coupled drift model, simulator and D.A. baseline for the 1901 CSMA/CA backoff."""

from .baseline import DaSolution, solve_da
from .config import (
    INFINITE,
    ConfigError,
    Preset,
    ProtocolConfig,
    TimingParams,
    alpha_config,
    builtin_config,
    check_cond_numeric,
    check_window_rule,
    family_config,
    load_config,
    satisfies_cond,
)
from .dynamics import drift, integrate_ode, iterate_transient, mean_field_rho, solve_pe_given_n, stability_probe
from .equilibrium import CondViolationError, EquilibriumSolution, phi, scan_fixed_points, solve_equilibrium
from .simulator import acf, fairness_summary, run_simulation
from .stage import stage_curves, stage_oracle, stage_point

__all__ = [name for name in dir() if not name.startswith("_")]
