"""Per-model CAVI sweep operators, fixed-point location, Wasserstein-2
trace recording, and empirical rate estimation.

A sweep is always the latent-block update followed by the parameter-block
update; traces record states after full sweeps.  Trace distances use each
model's designated metric: Euclidean mean distance for the Gaussian and
mixture models (their iterate covariances are constant), the total-precision
metric for probit, and the Bures distance in the fixed-point precision
metric for logit.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import singledispatch

import numpy as np
from scipy.special import expit

from caviw.linmetric import (
    GaussianMeasure,
    SpdMatrix,
    gaussian_w2,
    normal_pdf_over_cdf,
    pg_mean,
    sym_eigen,
)
from caviw.targets import GaussianTarget, GmmModel, LogitModel, ProbitModel, RngStream

DEFAULT_TOL = 1e-12
DEFAULT_MAX_ITER = 100_000
DEFAULT_BURN_IN = 10
RATIO_FLOOR_COEFF = 1e-13  # ratios recorded only while W2 > coeff * (1 + W2_0)


@dataclass(frozen=True)
class GaussianState:
    mu: GaussianMeasure
    nu: GaussianMeasure


@dataclass(frozen=True)
class GmmState:
    r: np.ndarray  # component-allocation probabilities, one per observation
    nu: GaussianMeasure


@dataclass(frozen=True)
class ProbitState:
    z_mean: np.ndarray  # truncated-normal means of the latent utilities
    nu: GaussianMeasure


@dataclass(frozen=True)
class LogitState:
    c: np.ndarray  # nonnegative tilt parameters, one per observation
    nu: GaussianMeasure


@dataclass(frozen=True)
class FixedPoint:
    state: object
    converged: bool
    iterations: int
    final_change: float


@dataclass(frozen=True)
class Trace:
    """Per-sweep records of the distance to the fixed point.

    ratio[k] = w2[k] / w2[k-1], recorded only while the previous distance
    sits above the round-off floor; log_w2 is clamped at the floor.
    """

    iters: np.ndarray
    w2: np.ndarray
    log_w2: np.ndarray
    ratio: np.ndarray  # nan where undefined
    floor: float

    def usable(self) -> np.ndarray:
        return self.w2 > self.floor


@dataclass(frozen=True)
class RateEstimate:
    """Least-squares geometric rate plus worst-case per-step ratio."""

    rate: float
    max_ratio: float
    slope: float
    intercept: float
    r_squared: float
    n_used: int


# ---------------------------------------------------------------------------
# sweep operators


@singledispatch
def cavi_step(model, state):
    raise TypeError(f"no CAVI step registered for {type(model).__name__}")


@cavi_step.register
def gaussian_step(model: GaussianTarget, state: GaussianState) -> GaussianState:
    """One sweep of the two-block Gaussian conditional updates."""
    mu_mean = -model.q11.solve(model.q12 @ state.nu.mean)
    nu_mean = -model.q22.solve(model.q12.T @ mu_mean)
    return GaussianState(
        mu=GaussianMeasure(mu_mean, model.q11),
        nu=GaussianMeasure(nu_mean, model.q22),
    )


@cavi_step.register
def gmm_step(model: GmmModel, state: GmmState) -> GmmState:
    """Allocation-probability update followed by the posterior-mean update.

    The mean uses the tanh identity for 2 r - 1, which stays finite for
    arbitrarily large logits.
    """
    half_logodds = 0.5 * np.log(model.weight / (1.0 - model.weight))
    proj = model.tau * (model.data @ state.nu.mean)
    r = expit(2.0 * (half_logodds + proj))
    signed = np.tanh(half_logodds + proj)  # = 2 r - 1, overflow-safe
    scale = model.tau0 + model.n * model.tau
    mean = (model.tau / scale) * (model.data.T @ signed)
    return GmmState(r=r, nu=GaussianMeasure(mean, state.nu.precision))


@cavi_step.register
def probit_step(model: ProbitModel, state: ProbitState) -> ProbitState:
    """Truncated-normal latent means, then the Gaussian parameter update."""
    a = model.design @ state.nu.mean
    up = a + normal_pdf_over_cdf(a)       # mean of N(a,1) given z > 0
    down = a - normal_pdf_over_cdf(-a)    # mean of N(a,1) given z <= 0
    z = np.where(model.response == 1, up, down)
    rhs = model.prior_precision.mat @ model.prior_mean + model.design.T @ z
    mean = state.nu.precision.solve(rhs)
    return ProbitState(z_mean=z, nu=GaussianMeasure(mean, state.nu.precision))


@cavi_step.register
def logit_step(model: LogitModel, state: LogitState) -> LogitState:
    """Tilt update from the current second moments, then the Gaussian update."""
    x = model.design
    proj = x @ state.nu.mean
    # diag(X Sigma X^T) via the cached precision solve
    quad = np.einsum("ij,ji->i", x, state.nu.precision.solve(x.T))
    c = np.sqrt(np.maximum(proj * proj + quad, 0.0))
    weights = pg_mean(c)
    q_mu = SpdMatrix(x.T @ (x * weights[:, None]) + model.prior_precision.mat)
    rhs = x.T @ (model.response - 0.5) + model.prior_precision.mat @ model.prior_mean
    return LogitState(c=c, nu=GaussianMeasure(q_mu.solve(rhs), q_mu))


# ---------------------------------------------------------------------------
# initial states


@singledispatch
def default_init(model):
    raise TypeError(f"no default initialization for {type(model).__name__}")


@default_init.register
def _(model: GaussianTarget) -> GaussianState:
    zeros_z = GaussianMeasure(np.zeros(model.dim_z), model.q11)
    zeros_b = GaussianMeasure(np.zeros(model.dim_beta), model.q22)
    return GaussianState(mu=zeros_z, nu=zeros_b)


@default_init.register
def _(model: GmmModel) -> GmmState:
    # spectral signal estimate: top eigendirection of the data second-moment
    # matrix, scaled by the implied separation; resolves the +/- ambiguity
    # deterministically via the sign convention of the eigensolver
    eig = sym_eigen(model.data.T @ model.data / model.n)
    gap = max(float(eig.eigenvalues[0]) - 1.0 / model.tau, 0.0)
    mean = np.sqrt(gap) * eig.eigenvectors[:, 0]
    prec = SpdMatrix.identity(model.dim, model.tau0 + model.n * model.tau)
    return GmmState(r=np.full(model.n, 0.5), nu=GaussianMeasure(mean, prec))


@default_init.register
def _(model: ProbitModel) -> ProbitState:
    q = SpdMatrix(model.prior_precision.mat + model.design.T @ model.design)
    nu = GaussianMeasure(model.prior_mean, q)
    return ProbitState(z_mean=np.zeros(model.n), nu=nu)


@default_init.register
def _(model: LogitModel) -> LogitState:
    # half-step at c = 0: precision X^T X / 4 + Q0 and the matching mean
    c = np.zeros(model.n)
    q = SpdMatrix(model.design.T @ model.design / 4.0 + model.prior_precision.mat)
    rhs = model.design.T @ (model.response - 0.5)
    rhs = rhs + model.prior_precision.mat @ model.prior_mean
    return LogitState(c=c, nu=GaussianMeasure(q.solve(rhs), q))


def sphere_init(model, fixed: FixedPoint, radius: float, rng: RngStream):
    """Initial state whose parameter marginal sits at W2 distance `radius`
    from the fixed point, uniformly on the sphere in the designated metric.

    The covariance is kept at the fixed point's, so the W2 displacement is
    exactly the (metric-weighted) mean displacement.
    """
    star = fixed.state
    gen = rng.generator()
    u = gen.standard_normal(star.nu.dim)
    u = u / np.linalg.norm(u)
    if isinstance(model, (ProbitModel, LogitModel)):
        # metric-sphere: mean shift Q^{-1/2} u has unit metric norm
        shift = star.nu.precision.inv_sqrt_mat() @ u
    else:
        shift = u
    mean = star.nu.mean + radius * shift
    nu = GaussianMeasure(mean, star.nu.precision)
    if isinstance(model, GaussianTarget):
        return GaussianState(mu=star.mu, nu=nu)
    if isinstance(model, GmmModel):
        return GmmState(r=star.r, nu=nu)
    if isinstance(model, ProbitModel):
        return ProbitState(z_mean=star.z_mean, nu=nu)
    return LogitState(c=star.c, nu=nu)


def top_direction_init(model: GaussianTarget, scale: float = 1.0) -> GaussianState:
    """Initial state aligned with the top eigendirection of the composed
    parameter-block map, along which the contraction rate is attained."""
    half_inv = model.q22.inv_sqrt_mat()
    a = model.q11.inv_sqrt_mat() @ model.q12 @ half_inv
    eig = sym_eigen(a.T @ a)
    direction = half_inv @ eig.eigenvectors[:, 0]
    direction = direction / np.linalg.norm(direction)
    zeros_z = GaussianMeasure(np.zeros(model.dim_z), model.q11)
    return GaussianState(
        mu=zeros_z, nu=GaussianMeasure(scale * direction, model.q22)
    )


# ---------------------------------------------------------------------------
# fixed points, traces, rates


def find_fixed_point(model, init=None, tol: float = DEFAULT_TOL,
                     max_iter: int = DEFAULT_MAX_ITER) -> FixedPoint:
    """Iterate sweeps until the parameter-marginal W2 change drops below tol.

    Non-convergence within max_iter is reported via the flag, not raised.
    """
    if tol <= 0.0:
        raise ValueError("tol must be positive")
    state = default_init(model) if init is None else init
    identity_metric = None

    def change_between(new, old):
        nonlocal identity_metric
        if isinstance(model, (ProbitModel, LogitModel)):
            metric = new.nu.precision
        else:
            if identity_metric is None:
                identity_metric = SpdMatrix.identity(new.nu.dim)
            metric = identity_metric
        return gaussian_w2(new.nu, old.nu, metric)

    change = np.inf
    for k in range(1, max_iter + 1):
        new = cavi_step(model, state)
        change = change_between(new, state)
        state = new
        if change < tol:
            # polish: keep sweeping while the step size strictly shrinks,
            # so the reported state is machine-accurate rather than only
            # tol-accurate (traces measured against it then decay to the
            # round-off floor instead of plateauing near tol)
            polished = k
            for _ in range(1000):
                if change == 0.0:
                    break
                new = cavi_step(model, state)
                new_change = change_between(new, state)
                if new_change >= change:
                    break
                state = new
                change = new_change
                polished += 1
            return FixedPoint(state=state, converged=True, iterations=polished,
                              final_change=change)
    return FixedPoint(state=state, converged=False, iterations=max_iter,
                      final_change=change)


def trace_metric(model, fixed: FixedPoint) -> SpdMatrix:
    """Designated trace metric for W2(nu_k, nu_star)."""
    if isinstance(model, (ProbitModel, LogitModel)):
        return fixed.state.nu.precision
    return SpdMatrix.identity(fixed.state.nu.dim)


def run_trace(model, init, fixed: FixedPoint, n_sweeps: int) -> Trace:
    """Record W2 distance to the fixed point over n_sweeps full sweeps."""
    if not fixed.converged:
        raise ValueError("run_trace requires a converged fixed point")
    metric = trace_metric(model, fixed)
    star = fixed.state.nu
    w2 = np.empty(n_sweeps + 1)
    state = init
    w2[0] = gaussian_w2(state.nu, star, metric)
    floor = RATIO_FLOOR_COEFF * (1.0 + w2[0])
    for k in range(1, n_sweeps + 1):
        state = cavi_step(model, state)
        w2[k] = gaussian_w2(state.nu, star, metric)
    ratio = np.full(n_sweeps + 1, np.nan)
    prev_above = w2[:-1] > floor
    ratio[1:][prev_above] = w2[1:][prev_above] / w2[:-1][prev_above]
    log_w2 = np.log(np.maximum(w2, floor))
    return Trace(
        iters=np.arange(n_sweeps + 1),
        w2=w2,
        log_w2=log_w2,
        ratio=ratio,
        floor=floor,
    )


def estimate_rate(trace: Trace, burn_in: int = DEFAULT_BURN_IN) -> RateEstimate:
    """Exponentiated least-squares slope of log W2 after burn-in.

    Only records above the ratio floor enter the regression; if the trace
    hit the floor too early to leave burn_in + 5 usable records, raises
    instead of returning a garbage estimate.
    """
    usable = trace.usable()
    n_usable = int(np.count_nonzero(usable))
    if n_usable < burn_in + 5:
        raise ValueError(
            f"only {n_usable} records above the floor; need {burn_in + 5}"
        )
    sel = usable & (trace.iters >= burn_in)
    if int(sel.sum()) < 2:
        raise ValueError("fewer than two usable records after burn-in")
    k = trace.iters[sel].astype(float)
    y = np.log(trace.w2[sel])
    slope, intercept = np.polyfit(k, y, 1)
    fitted = slope * k + intercept
    ss_res = float(np.sum((y - fitted) ** 2))
    ss_tot = float(np.sum((y - y.mean()) ** 2))
    r_squared = 1.0 if ss_tot == 0.0 else 1.0 - ss_res / ss_tot
    ratio_sel = (trace.iters > burn_in) & ~np.isnan(trace.ratio)
    max_ratio = float(np.max(trace.ratio[ratio_sel])) if ratio_sel.any() else np.nan
    return RateEstimate(
        rate=float(np.exp(slope)),
        max_ratio=max_ratio,
        slope=float(slope),
        intercept=float(intercept),
        r_squared=r_squared,
        n_used=int(sel.sum()),
    )
