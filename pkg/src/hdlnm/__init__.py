"""Hierarchical distributed-lag non-linear models for daily count series.

Penalized additive count regression with tensor-product lag terms, REML
smoothing parameter selection, posterior simulation, relative-risk and
attributable-fraction functionals, and posterior predictive diagnostics.
"""

__version__ = "0.1.0"

from .basis import (  # noqa: E402
    EvaluatedBasis,
    cyclic_cubic_basis,
    gp_basis,
    make_basis,
    ridge_basis,
    thinplate_basis,
)
from .diagnostics import (  # noqa: E402
    basis_dim_check,
    compare_models,
    overdispersion_test,
    ppc_acf,
    ppc_quantiles,
    ppc_statistics,
    run_checks,
)
from .estimator import DLNMRegressor  # noqa: E402
from .family import NegativeBinomial, Poisson, make_family  # noqa: E402
from .fit import ConvergenceError, FittedModel, fit, predict  # noqa: E402
from .lagdata import TimeSeriesDataset, build_lag_frame, read_csv  # noqa: E402
from .posterior import functional_interval, posterior_predictive, sample_coefficients  # noqa: E402
from .risk import (  # noqa: E402
    attributable,
    cumulative_risk,
    group_contrast,
    optimum_value,
    rr_surface,
)
from .terms import ModelSpec  # noqa: E402

__all__ = [
    "EvaluatedBasis", "thinplate_basis", "cyclic_cubic_basis", "ridge_basis", "gp_basis",
    "make_basis", "TimeSeriesDataset", "read_csv", "build_lag_frame", "ModelSpec",
    "Poisson", "NegativeBinomial", "make_family", "fit", "predict", "FittedModel",
    "ConvergenceError", "sample_coefficients", "posterior_predictive", "functional_interval",
    "rr_surface", "cumulative_risk", "optimum_value", "attributable", "group_contrast",
    "overdispersion_test", "ppc_statistics", "ppc_quantiles", "ppc_acf", "basis_dim_check",
    "compare_models", "run_checks", "DLNMRegressor",
]
