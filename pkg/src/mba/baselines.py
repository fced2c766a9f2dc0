"""Classical comparison methods: REMA, FEMA and the naive means model.

Also provides the frequentist study inputs they need: conditional sum of
squares (CSS) point estimates for MA(2) series and parametric-bootstrap
covariances.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.stats import invgamma, norm

from .abc_ma2 import Ma2Params, in_triangle, simulate_ma2_batch
from .belief import GridPmf
from .errors import DimensionMismatch, DomainError, InputError
from .meta_model import GaussianNiw
from .sampler import McmcConfig, sample_global, sample_vector

__all__ = [
    "StudyEstimate",
    "css_objective",
    "css_estimate",
    "bootstrap_cov",
    "rema_fit",
    "rema_grid_posterior",
    "fema_fit",
    "fema_conjugate",
    "naive_fit",
]


@dataclass(frozen=True, eq=False)
class StudyEstimate:
    theta_hat: np.ndarray
    sigma_hat: np.ndarray

    def __post_init__(self):
        t = np.atleast_1d(np.asarray(self.theta_hat, dtype=float))
        s = np.atleast_2d(np.asarray(self.sigma_hat, dtype=float))
        if s.shape != (t.size, t.size):
            raise DomainError("sigma_hat must be a d x d matrix matching theta_hat")
        try:
            np.linalg.cholesky(s)
        except np.linalg.LinAlgError as exc:
            raise DomainError("sigma_hat must be positive definite") from exc
        object.__setattr__(self, "theta_hat", t)
        object.__setattr__(self, "sigma_hat", s)


# --------------------------------------------------------------------------
# Conditional sum of squares
# --------------------------------------------------------------------------


def css_objective(series, thetas):
    """sum_t e_t^2 with e_t = y_t - theta1 e_{t-1} - theta2 e_{t-2} and zero start."""
    y = np.asarray(series, dtype=float)
    th = np.atleast_2d(np.asarray(thetas, dtype=float))
    a, b = th[:, 0], th[:, 1]
    e1 = np.zeros(th.shape[0])
    e2 = np.zeros(th.shape[0])
    total = np.zeros(th.shape[0])
    with np.errstate(over="ignore", invalid="ignore"):
        for yt in y:
            e = yt - a * e1 - b * e2
            total += e * e
            e2, e1 = e1, e
    return np.where(np.isfinite(total), total, np.inf)


def _triangle_grid(resolution):
    t1 = -2.0 + 4.0 * (np.arange(resolution) + 0.5) / resolution
    t2 = -1.0 + 2.0 * (np.arange(resolution) + 0.5) / resolution
    g1, g2 = np.meshgrid(t1, t2, indexing="ij")
    pts = np.column_stack([g1.ravel(), g2.ravel()])
    return pts[in_triangle(pts[:, 0], pts[:, 1])], np.array([4.0, 2.0]) / resolution


def _local_points(center, h, radius):
    k = np.arange(-radius, radius + 1)
    g1, g2 = np.meshgrid(center[0] + k * h[0], center[1] + k * h[1], indexing="ij")
    pts = np.column_stack([g1.ravel(), g2.ravel()])
    return pts[in_triangle(pts[:, 0], pts[:, 1])]


def css_estimate(series, grid_resolution=200, refine_rounds=5):
    """CSS minimiser over the MA(2) triangle.

    A ``grid_resolution`` x ``grid_resolution`` grid over the bounding box
    (restricted to the triangle) is followed by ``refine_rounds`` rounds
    of local 5 x 5 searches at halved spacing, then a neighbour polish
    that stops once no point of the surrounding 3 x 3 stencil improves.
    """
    y = np.asarray(series, dtype=float)
    if y.size < 3:
        raise DomainError("CSS needs at least 3 observations")
    pts, h = _triangle_grid(int(grid_resolution))
    f = css_objective(y, pts)
    best = pts[np.argmin(f)]
    best_f = f.min()
    for _ in range(int(refine_rounds)):
        h = h / 2.0
        local = _local_points(best, h, 2)
        fl = css_objective(y, local)
        i = np.argmin(fl)
        if fl[i] < best_f:
            best, best_f = local[i], fl[i]
    for _ in range(1000):
        local = _local_points(best, h, 1)
        fl = css_objective(y, local)
        i = np.argmin(fl)
        if not fl[i] < best_f:
            break
        best, best_f = local[i], fl[i]
    return Ma2Params(float(best[0]), float(best[1]))


def bootstrap_cov(theta_hat, n, B=200, rng=None, grid_resolution=200):
    """Parametric bootstrap covariance of the CSS estimator at ``theta_hat``."""
    if int(B) < 4:
        raise DomainError("need at least d + 2 = 4 bootstrap replicates")
    rng = rng if rng is not None else np.random.default_rng(0)
    th = theta_hat.as_array() if isinstance(theta_hat, Ma2Params) else np.asarray(theta_hat)
    series = simulate_ma2_batch(np.tile(th, (int(B), 1)), n, rng)
    est = np.array([css_estimate(s, grid_resolution).as_array() for s in series])
    cov = np.cov(est, rowvar=False)
    try:
        np.linalg.cholesky(cov)
    except np.linalg.LinAlgError:
        cov = cov + 1e-8 * np.eye(2)
    return cov


# --------------------------------------------------------------------------
# Meta-analysis baselines
# --------------------------------------------------------------------------


def _stack(estimates):
    if not estimates:
        raise InputError("need at least one study estimate")
    t = np.stack([e.theta_hat for e in estimates])
    s = np.stack([e.sigma_hat for e in estimates])
    return t, s


def _sum_gauss_loglik(x, mean, covs):
    """sum_j log N(x_j | mean, covs_j) with an explicit slogdet/solve."""
    diff = x - mean
    sign, logdet = np.linalg.slogdet(covs)
    if np.any(sign <= 0):
        return -np.inf
    quad = np.einsum("ji,ji->j", diff, np.linalg.solve(covs, diff[..., None])[..., 0])
    d = x.shape[1]
    return float(-0.5 * np.sum(d * np.log(2 * np.pi) + logdet + quad))


def rema_fit(estimates, spec, cfg=None):
    """Posterior of (mu, Sigma0) under prod_j N(theta_hat_j | mu, Sigma0 + Sigma_hat_j)."""
    if len(estimates) < 2:
        raise InputError("REMA needs at least two studies")
    t, s = _stack(estimates)
    return sample_global(spec, lambda phi: _sum_gauss_loglik(t, phi.mu, phi.sigma0 + s), cfg)


def naive_fit(belief_means, spec, cfg=None):
    """Posterior of (mu, Sigma0) treating each study's posterior mean as exact."""
    t = np.asarray(belief_means, dtype=float)
    if t.size == 0 or t.size % spec.dim:
        raise DimensionMismatch(f"belief means do not form {spec.dim}-vectors")
    t = t.reshape(-1, spec.dim)
    J = t.shape[0]
    return sample_global(
        spec, lambda phi: _sum_gauss_loglik(t, phi.mu, np.broadcast_to(phi.sigma0, (J,) + phi.sigma0.shape)), cfg
    )


def fema_conjugate(estimates, m, V):
    """Closed-form Gaussian posterior of mu when Sigma0 = 0."""
    t, s = _stack(estimates)
    V = np.atleast_2d(V)
    prec_prior = np.linalg.inv(V)
    prec_j = np.linalg.inv(s)
    P = prec_prior + prec_j.sum(axis=0)
    rhs = prec_prior @ np.atleast_1d(m) + np.einsum("jab,jb->a", prec_j, t)
    cov = np.linalg.inv(P)
    return cov @ rhs, cov


def fema_fit(estimates, m, V, cfg=None):
    """Random-walk draws of mu under prod_j N(theta_hat_j | mu, Sigma_hat_j) and a N(m, V) prior.

    Returns draws of shape ``(C, N, d)`` and per-chain acceptance rates.
    """
    t, s = _stack(estimates)
    m = np.atleast_1d(np.asarray(m, dtype=float))
    V = np.atleast_2d(np.asarray(V, dtype=float))
    V_inv = np.linalg.inv(V)
    _, logdet_V = np.linalg.slogdet(V)

    def log_target(mu):
        dm = mu - m
        lp = -0.5 * (dm @ V_inv @ dm + logdet_V + m.size * np.log(2 * np.pi))
        return lp + _sum_gauss_loglik(t, mu, s)

    # start and shape the proposal at the precision-weighted study summary
    centre, shape = fema_conjugate(estimates, m, V)
    return sample_vector(log_target, lambda rng: centre, shape, cfg or McmcConfig())


def rema_grid_posterior(D, s2, spec, phi_grid):
    """REMA grid posterior over (mu, sigma0^2) for scalar summaries ``D_j`` with variances ``s2_j``.

    Built directly from the marginal likelihoods with scipy densities. The
    prior q(mu, sigma0^2) is the 1-d normal / inverse-gamma form of ``spec``.
    """
    if not isinstance(spec, GaussianNiw) or spec.dim != 1:
        raise InputError("REMA grid posterior needs a 1-d GaussianNiw model")
    mu = phi_grid.points[:, 0]
    var = phi_grid.points[:, 1]
    log_mass = (
        norm.logpdf(mu, spec.m[0], np.sqrt(spec.V[0, 0]))
        + invgamma.logpdf(var, 0.5 * spec.nu, scale=0.5 * spec.Psi[0, 0])
        + phi_grid.log_weights
    )
    for d_j, v_j in zip(np.atleast_1d(D), np.atleast_1d(s2)):
        log_mass = log_mass + norm.logpdf(d_j, mu, np.sqrt(var + v_j))
    return GridPmf.from_log_mass(phi_grid.points, log_mass, phi_grid.log_weights)
