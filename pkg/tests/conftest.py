"""Shared helpers: random SPD factories and independent numeric oracles."""

import numpy as np

from caviw.linmetric import SpdMatrix


def random_spd(rng, dim, jitter=0.5):
    """Random SPD matrix via Gram construction plus a diagonal shift."""
    g = rng.standard_normal((dim, dim))
    return SpdMatrix(g @ g.T / dim + jitter * np.eye(dim))


def random_correlation(rng, dim):
    """Random PD matrix with unit diagonal."""
    g = rng.standard_normal((dim, 2 * dim))
    c = g @ g.T
    d = 1.0 / np.sqrt(np.diag(c))
    return SpdMatrix(c * np.outer(d, d))


def power_iteration_lambda_max(mat, iters=20000, tol=1e-14):
    """Largest eigenvalue of a symmetric PSD matrix by power iteration.

    Independent of any eigendecomposition routine; deterministic start.
    """
    mat = np.asarray(mat, dtype=float)
    n = mat.shape[0]
    v = np.ones(n) / np.sqrt(n)
    lam = 0.0
    for _ in range(iters):
        w = mat @ v
        norm = np.linalg.norm(w)
        if norm == 0.0:
            return 0.0
        v_new = w / norm
        lam_new = float(v_new @ (mat @ v_new))
        if abs(lam_new - lam) <= tol * max(1.0, abs(lam_new)):
            return lam_new
        v, lam = v_new, lam_new
    return lam


def fisher_info_quadrature_1d(m1, s1, m2, s2, metric):
    """Adaptive quadrature of the relative Fisher information integrand.

    Both measures are 1-D Gaussians N(mi, si^2); `metric` is a positive
    scalar weight whose inverse multiplies the squared score difference.
    """
    from scipy.integrate import quad

    def integrand(x):
        score = (x - m2) / s2**2 - (x - m1) / s1**2
        dens = np.exp(-0.5 * ((x - m1) / s1) ** 2) / (s1 * np.sqrt(2 * np.pi))
        return score**2 / metric * dens

    lo = min(m1 - 12 * s1, m2 - 12 * s2)
    hi = max(m1 + 12 * s1, m2 + 12 * s2)
    val, _ = quad(integrand, lo, hi, points=[m1, m2], limit=200)
    return val


def mills_hazard_series(t, terms=6):
    """Asymptotic expansion of pdf(t)/cdf(-t) for large t > 0.

    Classic tail series 1/m(t) with m(t) ~ (1/t)(1 - 1/t^2 + 3/t^4 - ...).
    Only valid for t well above 6.
    """
    inv_t2 = 1.0 / (t * t)
    coeff = [1.0, -1.0, 3.0, -15.0, 105.0, -945.0]
    acc = 0.0
    for k in range(terms):
        acc += coeff[k] * inv_t2**k
    return t / acc


def pytest_configure(config):
    # single-threaded BLAS: tiny dense problems run faster without thread
    # spin-up, and results stay bit-reproducible
    from threadpoolctl import threadpool_limits

    config._blas_limit = threadpool_limits(limits=1)
