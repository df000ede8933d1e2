"""Benchmark cases and the experiment engine behind the ``nlpcm`` CLI."""
from .cases import Case, case_names, get_case
from .experiment import (
    COLUMNS,
    ConvergenceReport,
    ExperimentConfig,
    ReportRow,
    SlopeFit,
    SpatialSetup,
    collocate,
    discrete_l2_error,
    fit_slope,
    make_plan,
    monte_carlo_moments,
    pcm_moments,
    reference_moments,
    run_case,
)

__all__ = [
    "Case",
    "case_names",
    "get_case",
    "COLUMNS",
    "ConvergenceReport",
    "ExperimentConfig",
    "ReportRow",
    "SlopeFit",
    "SpatialSetup",
    "collocate",
    "discrete_l2_error",
    "fit_slope",
    "make_plan",
    "monte_carlo_moments",
    "pcm_moments",
    "reference_moments",
    "run_case",
]
