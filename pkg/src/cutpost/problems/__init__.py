"""Reference problems with analytic or embedded-data ground truth."""

from .diamond import (
    DbConfig,
    db_conditional,
    db_constants,
    db_cut_analytic,
    db_generate,
    db_marginal_posterior,
    db_problem,
    db_suffstats,
)
from .ecological import (
    EcoData,
    build_gamma_pool,
    eco_g,
    eco_log_conditional_alpha,
    eco_log_posterior_gamma,
    eco_phi,
    eco_problem,
    load_eco_data,
)

__all__ = [
    "DbConfig",
    "EcoData",
    "build_gamma_pool",
    "db_conditional",
    "db_constants",
    "db_cut_analytic",
    "db_generate",
    "db_marginal_posterior",
    "db_problem",
    "db_suffstats",
    "eco_g",
    "eco_log_conditional_alpha",
    "eco_log_posterior_gamma",
    "eco_phi",
    "eco_problem",
    "load_eco_data",
]
