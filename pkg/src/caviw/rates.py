"""Closed-form theoretical contraction rates, bounds, and high-dimensional
limits for the four model families.

Ball-restricted rates are reported as certified conservative upper bounds
(per-observation interval analysis plus PSD monotonicity); reports carry a
`conservative` flag so callers can distinguish exact values from bounds.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from caviw.engine import FixedPoint
from caviw.linmetric import (
    SpdMatrix,
    lambda_max,
    lambda_min,
    pg_mean,
    pg_mean_deriv,
)
from caviw.targets import GaussianTarget, GmmModel, LogitModel, PriorSpec, ProbitModel

SUP_REFINE_TOL = 1e-10
SUP_GRID_POINTS = 64


@dataclass(frozen=True)
class RateReport:
    """A rate value, how it was computed, and whether it is an upper bound."""

    value: float
    formula: str
    conservative: bool
    details: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.value < 0.0:
            raise ValueError("rates are nonnegative")


def gaussian_rate(target: GaussianTarget) -> RateReport:
    """Squared spectral norm of the block-correlation matrix."""
    a = target.q11.inv_sqrt_mat() @ target.q12 @ target.q22.inv_sqrt_mat()
    value = lambda_max(a.T @ a)
    return RateReport(
        value=value,
        formula="gaussian-block-correlation",
        conservative=False,
        details={"spectral_norm": float(np.sqrt(value))},
    )


def gmm_rate_global(model: GmmModel) -> RateReport:
    """Global mixture rate tau^2/(tau0 + tau n) * lambda_max(sum y y^T)."""
    lam = lambda_max(model.data.T @ model.data)
    value = model.tau**2 / (model.tau0 + model.tau * model.n) * lam
    return RateReport(
        value=value,
        formula="gmm-global",
        conservative=False,
        details={"lambda_max_yyT": lam},
    )


def gmm_rate_local(model: GmmModel, center, eps: float) -> RateReport:
    """Certified upper bound on the mixture rate over the eps-ball at center.

    Per observation, the sech^2 argument ranges over an interval of
    half-width tau * |y_i| * eps; its supremum over the interval is 1 when
    the interval straddles zero, else sech^2 at the endpoint nearest zero.
    Summing the per-term PSD bounds keeps the result a valid upper bound.
    """
    if eps < 0.0:
        raise ValueError("eps must be nonnegative")
    center = np.asarray(center, dtype=float).reshape(-1)
    if center.shape[0] != model.dim:
        raise ValueError("center dimension mismatch")
    half_logodds = 0.5 * np.log(model.weight / (1.0 - model.weight))
    u0 = half_logodds + model.tau * (model.data @ center)
    half_width = model.tau * np.linalg.norm(model.data, axis=1) * eps
    lo, hi = u0 - half_width, u0 + half_width
    nearest = np.where((lo <= 0.0) & (hi >= 0.0), 0.0, np.minimum(np.abs(lo), np.abs(hi)))
    s = 1.0 / np.cosh(nearest) ** 2
    weighted = model.data * s[:, None]
    lam = lambda_max(weighted.T @ model.data)
    value = model.tau**2 / (model.tau0 + model.tau * model.n) * lam
    return RateReport(
        value=value,
        formula="gmm-local-ball",
        conservative=eps > 0.0,
        details={"eps": float(eps), "min_sech2": float(s.min()), "max_sech2": float(s.max())},
    )


def gmm_hessian_at_zero(model: GmmModel) -> np.ndarray:
    """Log-posterior Hessian at the symmetric stationary point."""
    d = model.dim
    return -(model.n * model.tau + model.tau0) * np.eye(d) + model.tau**2 * (
        model.data.T @ model.data
    )


def gmm_lln_limit(beta0, tau: float) -> float:
    """Data-rich limit 1 + tau |beta0|^2 of the global mixture rate."""
    if tau <= 0.0:
        raise ValueError("tau must be positive")
    beta0 = np.asarray(beta0, dtype=float).reshape(-1)
    return 1.0 + tau * float(beta0 @ beta0)


def probit_rate(model: ProbitModel) -> RateReport:
    """Fraction-of-information rate lambda_max((Q0 + X^T X)^{-1} X^T X).

    Evaluated through the symmetric similarity Q^{-1/2} X^T X Q^{-1/2}.
    """
    xtx = model.design.T @ model.design
    q = SpdMatrix(model.prior_precision.mat + xtx)
    half_inv = q.inv_sqrt_mat()
    value = lambda_max(half_inv @ xtx @ half_inv)
    return RateReport(
        value=value,
        formula="probit-information-fraction",
        conservative=False,
        details={"lambda_max_xtx": lambda_max(xtx)},
    )


def probit_rate_closed_form(design, prior: PriorSpec) -> float:
    """Closed-form probit rate for the scaled or g-prior families."""
    design = np.asarray(design, dtype=float)
    p = design.shape[1]
    lam = lambda_max(design.T @ design)
    if prior.kind == "scaled":
        t = (prior.c / p) * lam
        return t / (1.0 + t)
    return lam / ((1.0 + 1.0 / prior.g) * lam + prior.c)


def probit_rate_limit(prior: PriorSpec, a: float) -> float:
    """High-dimensional probit rate limit at aspect ratio a = n/p."""
    if a <= 0.0:
        raise ValueError("aspect ratio must be positive")
    if prior.kind == "scaled":
        edge = prior.c * (1.0 + np.sqrt(a)) ** 2
        return edge / (1.0 + edge)
    return 1.0 / (1.0 + 1.0 / prior.g)


def _sup_abs_deriv_sq(lo: float, hi: float) -> float:
    """Supremum of pg_mean_deriv^2 over [lo, hi].

    64-point grid, then golden-section refinement around the best cell;
    |pg_mean_deriv| vanishes at 0 and is unimodal on (0, inf).
    """
    if hi <= lo:
        return float(pg_mean_deriv(max(lo, 0.0)) ** 2)
    grid = np.linspace(lo, hi, SUP_GRID_POINTS)
    vals = pg_mean_deriv(grid) ** 2
    j = int(np.argmax(vals))
    best = float(vals[j])
    a = grid[max(j - 1, 0)]
    b = grid[min(j + 1, SUP_GRID_POINTS - 1)]
    inv_phi = (np.sqrt(5.0) - 1.0) / 2.0
    x1 = b - inv_phi * (b - a)
    x2 = a + inv_phi * (b - a)
    f1 = float(pg_mean_deriv(x1) ** 2)
    f2 = float(pg_mean_deriv(x2) ** 2)
    while b - a > SUP_REFINE_TOL * (1.0 + abs(hi)):
        if f1 < f2:
            a, x1, f1 = x1, x2, f2
            x2 = a + inv_phi * (b - a)
            f2 = float(pg_mean_deriv(x2) ** 2)
        else:
            b, x2, f2 = x2, x1, f1
            x1 = b - inv_phi * (b - a)
            f1 = float(pg_mean_deriv(x1) ** 2)
    return max(best, f1, f2)


def logit_rate_asymptotic(model: LogitModel, fixed: FixedPoint) -> RateReport:
    """Exact small-ball rate at the logit fixed point."""
    if not fixed.converged:
        raise ValueError("logit_rate_asymptotic requires a converged fixed point")
    star = fixed.state
    c = star.c
    q_star = star.nu.precision
    weights = pg_mean_deriv(c) ** 2 * c**2 / pg_mean(c)
    half_inv = q_star.inv_sqrt_mat()
    x = model.design
    value = lambda_max(half_inv @ (x.T @ (x * weights[:, None])) @ half_inv)
    return RateReport(
        value=value,
        formula="logit-asymptotic",
        conservative=False,
        details={
            "max_weight": float(weights.max()) if weights.size else 0.0,
            # the Fisher/transport chain contracts squared W2 by `value`,
            # so the per-sweep W2 ratio is bounded by its square root
            "w2_ratio_bound": float(np.sqrt(value)),
        },
    )


def logit_rate_local(model: LogitModel, fixed: FixedPoint, eps: float) -> RateReport:
    """Upper bound on the logit rate over the eps-ball at the fixed point.

    Per observation the tilt ranges over J_i = [(c_i - s_i eps)_+, c_i + s_i
    eps] with s_i^2 = x_i^T Q*^{-1} x_i.  The derivative factor is maximized
    on J_i by grid plus golden-section search; the second-moment factor is
    bounded through the precision lower bound at the right endpoints (the
    tilt weight is decreasing) and a norm bound on the implied mean.  At
    eps = 0 the exact asymptotic rate is returned.
    """
    if eps < 0.0:
        raise ValueError("eps must be nonnegative")
    if not fixed.converged:
        raise ValueError("logit_rate_local requires a converged fixed point")
    if eps == 0.0:
        exact = logit_rate_asymptotic(model, fixed)
        return RateReport(
            value=exact.value,
            formula="logit-local-ball",
            conservative=False,
            details=dict(exact.details, eps=0.0),
        )
    # nonzero ball: certified conservative bound
    star = fixed.state
    x = model.design
    q_star = star.nu.precision
    s = np.sqrt(np.einsum("ij,ji->i", x, q_star.solve(x.T)))
    lo = np.maximum(star.c - s * eps, 0.0)
    hi = star.c + s * eps
    sup_dsq = np.array([_sup_abs_deriv_sq(a, b) for a, b in zip(lo, hi)])
    # precision lower bound: the tilt weight decreases, so its minimum over
    # each interval sits at the right endpoint
    w_lo = pg_mean(hi)
    q_lo = SpdMatrix(x.T @ (x * w_lo[:, None]) + model.prior_precision.mat)
    lam_min_qlo = lambda_min(q_lo.mat)
    m_lin = x.T @ (model.response - 0.5) + model.prior_precision.mat @ model.prior_mean
    mean_norm_bound = float(np.linalg.norm(m_lin)) / lam_min_qlo
    quad_bound = np.einsum("ij,ji->i", x, q_lo.solve(x.T))
    row_norms_sq = np.einsum("ij,ij->i", x, x)
    second_moment_bound = quad_bound + row_norms_sq * mean_norm_bound**2
    a_diag = sup_dsq * second_moment_bound / pg_mean(star.c)
    half_inv = q_star.inv_sqrt_mat()
    value = lambda_max(half_inv @ (x.T @ (x * a_diag[:, None])) @ half_inv)
    return RateReport(
        value=value,
        formula="logit-local-ball",
        conservative=True,
        details={
            "eps": float(eps),
            "mean_norm_bound": mean_norm_bound,
            "w2_ratio_bound": float(np.sqrt(value)),
        },
    )


def logit_rate_bound(design, prior: PriorSpec) -> float:
    """Finite-sample closed-form bound on the asymptotic logit rate."""
    design = np.asarray(design, dtype=float)
    p = design.shape[1]
    lam = lambda_max(design.T @ design)
    if prior.kind == "scaled":
        t = (prior.c / p) * lam
        return t / (4.0 + t)
    return lam / ((1.0 + 4.0 / prior.g) * lam + 4.0 * prior.c)


def logit_rate_limit_bound(prior: PriorSpec, a: float) -> float:
    """High-dimensional limit of the logit rate bound at aspect ratio a."""
    if a <= 0.0:
        raise ValueError("aspect ratio must be positive")
    if prior.kind == "scaled":
        edge = prior.c * (1.0 + np.sqrt(a)) ** 2
        return edge / (4.0 + edge)
    return 1.0 / (1.0 + 4.0 / prior.g)
