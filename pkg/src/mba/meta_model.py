"""The meta-analyst's hierarchical model and expected likelihood terms.

Global parameters may carry leading batch dimensions: a
``BetaBernoulliPhi`` with ``phi`` of shape ``(K,)`` or a ``GaussianPhi``
with ``mu`` of shape ``(K, d)`` and ``sigma0`` of shape ``(K, d, d)``
represents ``K`` parameter values at once, and every function below
returns one value per batch element.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
from scipy.special import betaln, gammaln, logsumexp, xlogy
from scipy.stats import invwishart

from .belief import Dirac, Gaussian, GridPmf, Kde, SoftBernoulli
from .errors import (
    DimensionMismatch,
    DomainError,
    InputError,
    NonFiniteEstimate,
    UnsupportedQuery,
    VariantMismatch,
)

__all__ = [
    "BetaBernoulliPhi",
    "GaussianPhi",
    "BetaBernoulli",
    "GaussianNiw",
    "GaussianGammaMeans",
    "McBudget",
    "DrawCache",
    "DualEstimate",
    "log_prior",
    "log_cond",
    "log_expected_lik",
    "expected_lik",
    "dual_estimator_check",
    "sample_prior",
    "spec_from_dict",
    "spec_to_dict",
]

_LOG_2PI = np.log(2.0 * np.pi)


# --------------------------------------------------------------------------
# Global parameters and model specifications
# --------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class BetaBernoulliPhi:
    phi: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "phi", np.asarray(self.phi, dtype=float))

    @property
    def batch_shape(self):
        return self.phi.shape


@dataclass(frozen=True, eq=False)
class GaussianPhi:
    mu: np.ndarray
    sigma0: np.ndarray

    def __post_init__(self):
        mu = np.atleast_1d(np.asarray(self.mu, dtype=float))
        s = np.asarray(self.sigma0, dtype=float)
        if s.ndim < 2:
            s = s.reshape(mu.shape[:-1] + (1, 1))
        if s.shape[-2:] != (mu.shape[-1], mu.shape[-1]):
            raise DimensionMismatch(f"mu {mu.shape} and sigma0 {s.shape} are inconsistent")
        object.__setattr__(self, "mu", mu)
        object.__setattr__(self, "sigma0", s)

    @property
    def dim(self) -> int:
        return self.mu.shape[-1]

    @property
    def batch_shape(self):
        return np.broadcast_shapes(self.mu.shape[:-1], self.sigma0.shape[:-2])


def _pos_def(name, a):
    try:
        np.linalg.cholesky(a)
    except np.linalg.LinAlgError as exc:
        raise DomainError(f"{name} must be symmetric positive definite") from exc


@dataclass(frozen=True)
class BetaBernoulli:
    """``phi ~ Beta(alpha, beta)``, ``theta_j | phi ~ Bernoulli(phi)``."""

    alpha: float
    beta: float

    def __post_init__(self):
        if not (self.alpha > 0 and self.beta > 0):
            raise DomainError("alpha and beta must be positive")

    dim = 1


@dataclass(frozen=True, eq=False)
class GaussianNiw:
    """``mu ~ N(m, V)``, ``Sigma0 ~ InvWishart(nu, Psi)``, ``theta_j ~ N(mu, Sigma0)``."""

    m: np.ndarray
    V: np.ndarray
    nu: float
    Psi: np.ndarray

    def __post_init__(self):
        m = np.atleast_1d(np.asarray(self.m, dtype=float))
        d = m.size
        V = np.asarray(self.V, dtype=float).reshape(d, d)
        Psi = np.asarray(self.Psi, dtype=float).reshape(d, d)
        _pos_def("V", V)
        _pos_def("Psi", Psi)
        if not self.nu > d - 1:
            raise DomainError(f"nu must exceed d - 1 = {d - 1}")
        object.__setattr__(self, "m", m)
        object.__setattr__(self, "V", V)
        object.__setattr__(self, "Psi", Psi)
        object.__setattr__(self, "nu", float(self.nu))

    @property
    def dim(self) -> int:
        return self.m.size


@dataclass(frozen=True, eq=False)
class GaussianGammaMeans:
    """Independent ``Gamma(a_k, rate=b_k)`` priors on each ``mu_k``; InvWishart on ``Sigma0``."""

    a: np.ndarray
    b: np.ndarray
    nu: float
    Psi: np.ndarray

    def __post_init__(self):
        a = np.atleast_1d(np.asarray(self.a, dtype=float))
        b = np.atleast_1d(np.asarray(self.b, dtype=float))
        d = a.size
        if b.shape != a.shape or np.any(a <= 0) or np.any(b <= 0):
            raise DomainError("a and b must be positive vectors of equal length")
        Psi = np.asarray(self.Psi, dtype=float).reshape(d, d)
        _pos_def("Psi", Psi)
        if not self.nu > d - 1:
            raise DomainError(f"nu must exceed d - 1 = {d - 1}")
        object.__setattr__(self, "a", a)
        object.__setattr__(self, "b", b)
        object.__setattr__(self, "Psi", Psi)
        object.__setattr__(self, "nu", float(self.nu))

    @property
    def dim(self) -> int:
        return self.a.size


_GAUSSIAN_SPECS = (GaussianNiw, GaussianGammaMeans)


@dataclass(frozen=True)
class McBudget:
    """Monte Carlo sample count for integrals without a closed form."""

    n_draws: int = 1000

    def __post_init__(self):
        if int(self.n_draws) < 1:
            raise DomainError("n_draws must be at least 1")


class DrawCache:
    """Per-context store of belief draws, so repeated phi evaluations reuse them."""

    def __init__(self):
        self._store = {}

    def draws(self, belief, n, rng):
        key = (id(belief), int(n))
        hit = self._store.get(key)
        if hit is None:
            if rng is None:
                rng = np.random.default_rng(0)
            hit = (belief, belief.draw(n, rng).values)
            self._store[key] = hit
        return hit[1]


# --------------------------------------------------------------------------
# Density building blocks (batched)
# --------------------------------------------------------------------------


def _safe_cholesky(S):
    """Batched Cholesky; failed elements come back as NaN."""
    try:
        return np.linalg.cholesky(S)
    except np.linalg.LinAlgError:
        flat = S.reshape((-1,) + S.shape[-2:])
        out = np.full(flat.shape, np.nan)
        for i, mat in enumerate(flat):
            try:
                out[i] = np.linalg.cholesky(mat)
            except np.linalg.LinAlgError:
                pass
        return out.reshape(S.shape)


def _mvn_logpdf(x, mean, cov):
    """log N(x | mean, cov) broadcasting over leading dimensions."""
    d = x.shape[-1]
    diff = x - mean
    if d == 1:
        var = cov[..., 0, 0]
        with np.errstate(divide="ignore", invalid="ignore"):
            out = -0.5 * (_LOG_2PI + np.log(var) + diff[..., 0] ** 2 / var)
        return np.where(var > 0, out, -np.inf)
    L = _safe_cholesky(cov)
    shape = np.broadcast_shapes(diff.shape[:-1], L.shape[:-2])
    L = np.broadcast_to(L, shape + (d, d))
    diff = np.broadcast_to(diff, shape + (d,))
    bad = np.isnan(L[..., 0, 0])
    L = np.where(bad[..., None, None], np.eye(d), L)
    z = np.linalg.solve(L, diff[..., None])[..., 0]
    half_logdet = np.log(np.diagonal(L, axis1=-2, axis2=-1)).sum(axis=-1)
    out = -0.5 * (d * _LOG_2PI + np.sum(z * z, axis=-1)) - half_logdet
    return np.where(bad, -np.inf, out)


def _log_multigamma(a, d):
    i = np.arange(1, d + 1)
    return 0.25 * d * (d - 1) * np.log(np.pi) + gammaln(a + (1.0 - i) / 2.0).sum()


def _log_invwishart(S, nu, Psi):
    """Inverse-Wishart log density written out from the textbook formula."""
    d = Psi.shape[-1]
    L = _safe_cholesky(S)
    bad = np.isnan(L[..., 0, 0])
    L = np.where(bad[..., None, None], np.eye(d), L)
    logdet_S = 2.0 * np.log(np.diagonal(L, axis1=-2, axis2=-1)).sum(axis=-1)
    L_psi = np.linalg.cholesky(Psi)
    logdet_psi = 2.0 * np.log(np.diag(L_psi)).sum()
    # tr(Psi S^-1) = ||L^-1 L_psi||_F^2
    W = np.linalg.solve(L, np.broadcast_to(L_psi, L.shape))
    trace = np.sum(W * W, axis=(-2, -1))
    out = (
        0.5 * nu * logdet_psi
        - 0.5 * nu * d * np.log(2.0)
        - _log_multigamma(0.5 * nu, d)
        - 0.5 * (nu + d + 1) * logdet_S
        - 0.5 * trace
    )
    return np.where(bad, -np.inf, out)


def _log_gamma_rate(x, a, b):
    with np.errstate(divide="ignore", invalid="ignore"):
        out = a * np.log(b) - gammaln(a) + xlogy(a - 1.0, x) - b * x
    return np.where(x > 0, out, -np.inf)


def _check_variant(spec, phi):
    if isinstance(spec, BetaBernoulli):
        if not isinstance(phi, BetaBernoulliPhi):
            raise VariantMismatch("BetaBernoulli model needs a BetaBernoulliPhi parameter")
    elif isinstance(spec, _GAUSSIAN_SPECS):
        if not isinstance(phi, GaussianPhi):
            raise VariantMismatch("Gaussian model needs a GaussianPhi parameter")
        if phi.dim != spec.dim:
            raise DimensionMismatch(f"parameter is {phi.dim}-d but the model is {spec.dim}-d")
    else:
        raise VariantMismatch(f"unknown model specification {type(spec).__name__}")


def _scalarize(x):
    return float(x) if np.ndim(x) == 0 else x


# --------------------------------------------------------------------------
# Prior, conditional, expected likelihood
# --------------------------------------------------------------------------


def log_prior(spec, phi):
    """log q(phi); -inf outside the support."""
    _check_variant(spec, phi)
    if isinstance(spec, BetaBernoulli):
        p = phi.phi
        inside = (p >= 0.0) & (p <= 1.0)
        pc = np.clip(p, 0.0, 1.0)
        with np.errstate(divide="ignore"):
            out = xlogy(spec.alpha - 1.0, pc) + xlogy(spec.beta - 1.0, 1.0 - pc)
        out = out - betaln(spec.alpha, spec.beta)
        return _scalarize(np.where(inside, out, -np.inf))
    if isinstance(spec, GaussianNiw):
        lp_mu = _mvn_logpdf(phi.mu, spec.m, spec.V)
    else:
        lp_mu = _log_gamma_rate(phi.mu, spec.a, spec.b).sum(axis=-1)
    return _scalarize(lp_mu + _log_invwishart(phi.sigma0, spec.nu, spec.Psi))


def _theta_points(theta, dim):
    t = np.asarray(theta, dtype=float)
    if t.ndim == 0:
        t = t[None]
    if t.shape[-1] != dim:
        raise DimensionMismatch(f"theta has trailing size {t.shape[-1]}, model is {dim}-d")
    return t


def log_cond(spec, theta, phi):
    """log p(theta | phi).

    ``theta`` has shape ``(..., d)`` and broadcasts against the batch shape
    of ``phi``.
    """
    _check_variant(spec, phi)
    t = _theta_points(theta, spec.dim)
    if isinstance(spec, BetaBernoulli):
        k = t[..., 0]
        if not np.all((k == 0.0) | (k == 1.0)):
            raise DomainError("Bernoulli theta must be 0 or 1")
        p = phi.phi
        with np.errstate(divide="ignore", invalid="ignore"):
            out = xlogy(k, p) + xlogy(1.0 - k, 1.0 - p)
        return _scalarize(out)
    return _scalarize(_mvn_logpdf(t, phi.mu, phi.sigma0))


def _batch_ndim(phi):
    return len(phi.batch_shape)


def _log_cond_stack(spec, pts, phi):
    """log p(x_i | phi) for a stack ``pts`` of shape (n, d); returns (n, *batch)."""
    pts = pts.reshape((pts.shape[0],) + (1,) * _batch_ndim(phi) + (pts.shape[1],))
    return np.asarray(log_cond(spec, pts, phi))


def _mc_log_mean(spec, draws, phi, max_elems=2_000_000):
    n = draws.shape[0]
    batch = int(np.prod(phi.batch_shape)) if phi.batch_shape else 1
    step = max(1, max_elems // max(batch, 1))
    parts = [
        logsumexp(_log_cond_stack(spec, draws[s:s + step], phi), axis=0)
        for s in range(0, n, step)
    ]
    total = parts[0] if len(parts) == 1 else logsumexp(np.stack(parts), axis=0)
    return total - np.log(n)


def log_expected_lik(spec, phi, belief, budget=None, rng=None, cache=None):
    """log of the expected likelihood contribution  E_{theta ~ belief}[p(theta | phi)].

    Closed forms are used for Dirac, soft-Bernoulli, grid and Gaussian
    beliefs (the last under a Gaussian model). KDE beliefs fall back to a
    Monte Carlo mean over ``budget.n_draws`` cached draws; if every term
    underflows the result is -inf and a :class:`NonFiniteEstimate`
    warning is issued.
    """
    _check_variant(spec, phi)
    if belief.dim != spec.dim:
        raise DimensionMismatch(f"belief is {belief.dim}-d but the model is {spec.dim}-d")
    if isinstance(belief, Dirac):
        return log_cond(spec, belief.point, phi)
    if isinstance(belief, SoftBernoulli) and isinstance(spec, BetaBernoulli):
        p, pk = phi.phi, belief.p1
        with np.errstate(divide="ignore"):
            return _scalarize(np.log(p * pk + (1.0 - p) * (1.0 - pk)))
    if isinstance(belief, SoftBernoulli):
        belief = belief.as_grid()
    if isinstance(belief, GridPmf):
        keep = belief.probs > 0
        terms = _log_cond_stack(spec, belief.support[keep], phi)
        lp = belief.log_probs[keep].reshape((-1,) + (1,) * _batch_ndim(phi))
        return _scalarize(logsumexp(terms + lp, axis=0))
    if isinstance(belief, Gaussian):
        if not isinstance(spec, _GAUSSIAN_SPECS):
            raise VariantMismatch("a Gaussian belief needs a Gaussian model")
        return _scalarize(_mvn_logpdf(belief.mean, phi.mu, phi.sigma0 + belief.cov))
    if isinstance(belief, Kde):
        if not isinstance(spec, _GAUSSIAN_SPECS):
            raise VariantMismatch("a KDE belief needs a Gaussian model")
        budget = budget or McBudget()
        cache = cache if cache is not None else DrawCache()
        draws = cache.draws(belief, budget.n_draws, rng)
        out = _mc_log_mean(spec, draws, phi)
        if np.any(np.isneginf(out)):
            warnings.warn(
                "every Monte Carlo likelihood term underflowed", NonFiniteEstimate, stacklevel=2
            )
        return _scalarize(out)
    raise VariantMismatch(f"unsupported belief type {type(belief).__name__}")


def expected_lik(spec, phi, belief, budget=None, rng=None, cache=None):
    return np.exp(log_expected_lik(spec, phi, belief, budget, rng, cache))


@dataclass(frozen=True)
class DualEstimate:
    """Two estimates of the same integral, with their standard errors.

    ``forward`` averages p(theta | phi) over draws from the belief;
    ``reverse`` averages the belief density over draws from p(. | phi).
    """

    forward: float
    reverse: float
    forward_se: float
    reverse_se: float


def sample_cond(spec, phi, n, rng):
    """Draw ``n`` values of theta from p(. | phi) for a single phi."""
    if isinstance(spec, BetaBernoulli):
        return (rng.random(n) < float(phi.phi)).astype(float)[:, None]
    L = np.linalg.cholesky(phi.sigma0)
    return phi.mu + rng.standard_normal((n, spec.dim)) @ L.T


def dual_estimator_check(spec, phi, belief, budget=None, rng=None):
    """Estimate the expected likelihood with the integrand and measure swapped."""
    _check_variant(spec, phi)
    if phi.batch_shape != ():
        raise InputError("dual_estimator_check takes a single parameter value")
    if isinstance(belief, Dirac):
        raise UnsupportedQuery("a Dirac belief has no density to integrate against")
    if isinstance(spec, BetaBernoulli):
        if isinstance(belief, SoftBernoulli):
            belief = belief.as_grid()
        if not isinstance(belief, GridPmf):
            raise VariantMismatch("Bernoulli model needs a discrete belief")
        keep = belief.probs > 0
        fwd = float(np.sum(np.exp(_log_cond_stack(spec, belief.support[keep], phi)) * belief.probs[keep]))
        support = np.array([[0.0], [1.0]])
        p_theta = np.exp(_log_cond_stack(spec, support, phi))
        rev = float(np.sum(belief.density(support) * p_theta))
        return DualEstimate(fwd, rev, 0.0, 0.0)
    budget = budget or McBudget()
    rng = rng if rng is not None else np.random.default_rng(0)
    n = budget.n_draws
    fwd_terms = np.exp(_log_cond_stack(spec, belief.draw(n, rng).values, phi))
    rev_terms = np.asarray(belief.density(sample_cond(spec, phi, n, rng)))
    se = lambda v: float(v.std(ddof=1) / np.sqrt(v.size)) if v.size > 1 else np.inf
    return DualEstimate(float(fwd_terms.mean()), float(rev_terms.mean()), se(fwd_terms), se(rev_terms))


def sample_prior(spec, rng):
    """One draw of phi from q."""
    if isinstance(spec, BetaBernoulli):
        return BetaBernoulliPhi(rng.beta(spec.alpha, spec.beta))
    if isinstance(spec, GaussianNiw):
        mu = rng.multivariate_normal(spec.m, spec.V)
    elif isinstance(spec, GaussianGammaMeans):
        mu = rng.gamma(spec.a, 1.0 / spec.b)
    else:
        raise VariantMismatch(f"unknown model specification {type(spec).__name__}")
    sigma0 = invwishart.rvs(df=spec.nu, scale=spec.Psi, random_state=rng)
    return GaussianPhi(mu, np.atleast_2d(sigma0))


# --------------------------------------------------------------------------
# JSON form
# --------------------------------------------------------------------------

_FAMILIES = {
    "beta_bernoulli": BetaBernoulli,
    "gaussian_niw": GaussianNiw,
    "gaussian_gamma_means": GaussianGammaMeans,
}


def spec_from_dict(obj):
    """Build a model from ``{"family": ..., "params": {...}}``."""
    try:
        family = obj["family"]
        params = obj["params"]
    except (KeyError, TypeError) as exc:
        raise InputError("model spec needs 'family' and 'params' keys") from exc
    cls = _FAMILIES.get(family)
    if cls is None:
        raise InputError(f"unknown model family {family!r}")
    try:
        return cls(**params)
    except TypeError as exc:
        raise InputError(f"bad parameters for {family}: {exc}") from exc


def spec_to_dict(spec):
    if isinstance(spec, BetaBernoulli):
        return {"family": "beta_bernoulli", "params": {"alpha": spec.alpha, "beta": spec.beta}}
    if isinstance(spec, GaussianNiw):
        params = {"m": spec.m.tolist(), "V": spec.V.tolist(), "nu": spec.nu, "Psi": spec.Psi.tolist()}
        return {"family": "gaussian_niw", "params": params}
    params = {"a": spec.a.tolist(), "b": spec.b.tolist(), "nu": spec.nu, "Psi": spec.Psi.tolist()}
    return {"family": "gaussian_gamma_means", "params": params}
