"""Coordinate ascent variational inference with Wasserstein contraction
diagnostics: model families, CAVI engines, closed-form rates, and an
experiment harness."""

from caviw.engine import (
    FixedPoint,
    RateEstimate,
    Trace,
    cavi_step,
    estimate_rate,
    find_fixed_point,
    run_trace,
    sphere_init,
)
from caviw.linmetric import (
    GaussianMeasure,
    SpdMatrix,
    SymEigen,
    cholesky_solve,
    gaussian_fisher_info,
    gaussian_w2,
    lambda_max,
    normal_cdf,
    pg_mean,
    pg_mean_deriv,
    spd_sqrt,
    sym_eigen,
)
from caviw.targets import (
    GaussianTarget,
    GmmModel,
    LogitModel,
    PriorSpec,
    ProbitModel,
    RngStream,
    load_model,
    save_model,
)

__all__ = [
    "FixedPoint",
    "GaussianMeasure",
    "GaussianTarget",
    "GmmModel",
    "LogitModel",
    "PriorSpec",
    "ProbitModel",
    "RateEstimate",
    "RngStream",
    "SpdMatrix",
    "SymEigen",
    "Trace",
    "cavi_step",
    "cholesky_solve",
    "estimate_rate",
    "find_fixed_point",
    "gaussian_fisher_info",
    "gaussian_w2",
    "lambda_max",
    "load_model",
    "normal_cdf",
    "pg_mean",
    "pg_mean_deriv",
    "run_trace",
    "save_model",
    "spd_sqrt",
    "sphere_init",
    "sym_eigen",
]

__version__ = "0.1.0"
