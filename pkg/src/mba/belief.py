"""Observed beliefs: distributions over a study-specific effect.

Every belief exposes ``dim``, ``log_density``, ``density`` and ``draw``.
Points are passed as ``(d,)`` vectors or ``(n, d)`` stacks; a scalar is
accepted for one-dimensional beliefs.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import solve_triangular
from scipy.special import logsumexp

from .errors import (
    DegenerateSamples,
    DimensionMismatch,
    DomainError,
    TooFewSamples,
    UnsupportedQuery,
)

__all__ = [
    "SampleSet",
    "Dirac",
    "SoftBernoulli",
    "Gaussian",
    "GridPmf",
    "Kde",
    "ScottsRule",
    "FixedBandwidth",
    "fit_gaussian",
    "fit_kde",
    "density",
    "log_density",
    "draw",
]

_LOG_2PI = np.log(2.0 * np.pi)


def _frozen(a, dtype=float):
    a = np.array(a, dtype=dtype)
    a.flags.writeable = False
    return a


def _as_points(x, dim):
    """Coerce ``x`` to an ``(n, dim)`` array; report whether it was one point."""
    x = np.asarray(x, dtype=float)
    if x.ndim == 0:
        if dim != 1:
            raise DimensionMismatch(f"scalar query for a {dim}-d belief")
        return x.reshape(1, 1), True
    if x.ndim == 1:
        if x.shape[0] == dim:
            return x.reshape(1, dim), True
        if dim == 1:
            return x.reshape(-1, 1), False
        raise DimensionMismatch(f"point of length {x.shape[0]} for a {dim}-d belief")
    if x.ndim == 2 and x.shape[1] == dim:
        return x, False
    raise DimensionMismatch(f"points of shape {x.shape} for a {dim}-d belief")


def _unwrap(values, single):
    return float(values[0]) if single else values


@dataclass(frozen=True, eq=False)
class SampleSet:
    """``L x d`` matrix of posterior draws from one study."""

    values: np.ndarray

    def __post_init__(self):
        v = np.array(self.values, dtype=float)
        if v.ndim == 1:
            v = v[:, None]
        if v.ndim != 2 or v.shape[0] < 1 or v.shape[1] < 1:
            raise DomainError(f"sample matrix must be L x d with L, d >= 1, got {v.shape}")
        if not np.all(np.isfinite(v)):
            raise DomainError("samples must be finite")
        v.flags.writeable = False
        object.__setattr__(self, "values", v)

    @property
    def dim(self) -> int:
        return self.values.shape[1]

    def __len__(self) -> int:
        return self.values.shape[0]


# --------------------------------------------------------------------------
# Belief families
# --------------------------------------------------------------------------


class _Belief:
    dim: int

    def density(self, x):
        lp = self.log_density(x)
        return np.exp(lp) if isinstance(lp, np.ndarray) else float(np.exp(lp))


@dataclass(frozen=True, eq=False)
class Dirac(_Belief):
    """Point mass. Supports sampling but has no density function."""

    point: np.ndarray

    def __post_init__(self):
        p = np.atleast_1d(np.asarray(self.point, dtype=float))
        if p.ndim != 1 or not np.all(np.isfinite(p)):
            raise DomainError("Dirac point must be a finite vector")
        object.__setattr__(self, "point", _frozen(p))

    @property
    def dim(self) -> int:
        return self.point.shape[0]

    def log_density(self, x):
        raise UnsupportedQuery("a Dirac belief has no density function")

    def density(self, x):
        raise UnsupportedQuery("a Dirac belief has no density function")

    def draw(self, n, rng=None) -> SampleSet:
        return SampleSet(np.tile(self.point, (int(n), 1)))


@dataclass(frozen=True)
class SoftBernoulli(_Belief):
    """Binary belief with ``P(theta = 1) = p1``."""

    p1: float

    def __post_init__(self):
        p1 = float(self.p1)
        if not 0.0 <= p1 <= 1.0:
            raise DomainError(f"p1 must lie in [0, 1], got {p1}")
        object.__setattr__(self, "p1", p1)

    dim = 1

    def log_density(self, x):
        pts, single = _as_points(x, 1)
        t = pts[:, 0]
        with np.errstate(divide="ignore"):
            out = np.where(
                t == 1.0, np.log(self.p1), np.where(t == 0.0, np.log1p(-self.p1), -np.inf)
            )
        return _unwrap(out, single)

    def as_grid(self) -> "GridPmf":
        return GridPmf([[0.0], [1.0]], [1.0 - self.p1, self.p1])

    def draw(self, n, rng) -> SampleSet:
        return SampleSet((rng.random(int(n)) < self.p1).astype(float))


@dataclass(frozen=True, eq=False)
class Gaussian(_Belief):
    """Multivariate normal belief ``N(mean, cov)``."""

    mean: np.ndarray
    cov: np.ndarray
    chol: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        m = np.atleast_1d(np.asarray(self.mean, dtype=float))
        c = np.atleast_2d(np.asarray(self.cov, dtype=float))
        if m.ndim != 1 or c.shape != (m.size, m.size):
            raise DimensionMismatch(f"mean {m.shape} and cov {c.shape} are inconsistent")
        if not np.allclose(c, c.T, rtol=1e-10, atol=1e-14):
            raise DomainError("covariance must be symmetric")
        try:
            L = np.linalg.cholesky(c)
        except np.linalg.LinAlgError as exc:
            raise DomainError("covariance is not positive definite") from exc
        object.__setattr__(self, "mean", _frozen(m))
        object.__setattr__(self, "cov", _frozen(c))
        object.__setattr__(self, "chol", _frozen(L))

    @property
    def dim(self) -> int:
        return self.mean.shape[0]

    def log_density(self, x):
        pts, single = _as_points(x, self.dim)
        z = solve_triangular(self.chol, (pts - self.mean).T, lower=True)
        half_logdet = np.log(np.diag(self.chol)).sum()
        out = -0.5 * (self.dim * _LOG_2PI + np.sum(z * z, axis=0)) - half_logdet
        return _unwrap(out, single)

    def draw(self, n, rng) -> SampleSet:
        z = rng.standard_normal((int(n), self.dim))
        return SampleSet(self.mean + z @ self.chol.T)


@dataclass(frozen=True, eq=False)
class GridPmf(_Belief):
    """Probability table over a finite set of support points.

    ``log_weights`` optionally records quadrature cell weights, so that a
    pmf produced from a continuous grid can be read back as density values
    via :meth:`grid_log_density`.
    """

    support: np.ndarray
    probs: np.ndarray
    log_weights: np.ndarray | None = None
    log_probs: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        s = np.asarray(self.support, dtype=float)
        if s.ndim == 1:
            s = s[:, None]
        p = np.asarray(self.probs, dtype=float)
        if s.ndim != 2 or p.shape != (s.shape[0],) or s.shape[0] < 1:
            raise DimensionMismatch(f"support {s.shape} and probs {p.shape} mismatch")
        if np.any(p < 0) or not np.all(np.isfinite(p)):
            raise DomainError("probabilities must be finite and nonnegative")
        total = p.sum()
        if total <= 0:
            raise DomainError("probabilities sum to zero")
        p = p / total
        with np.errstate(divide="ignore"):
            lp = np.log(p)
        object.__setattr__(self, "support", _frozen(s))
        object.__setattr__(self, "probs", _frozen(p))
        object.__setattr__(self, "log_probs", _frozen(lp))
        if self.log_weights is not None:
            lw = np.asarray(self.log_weights, dtype=float)
            if lw.shape != p.shape:
                raise DimensionMismatch("log_weights must align with support")
            object.__setattr__(self, "log_weights", _frozen(lw))

    @classmethod
    def from_log_mass(cls, support, log_mass, log_weights=None) -> "GridPmf":
        """Normalise unnormalised log masses with a single log-sum-exp."""
        log_mass = np.asarray(log_mass, dtype=float)
        total = logsumexp(log_mass)
        log_p = log_mass - total
        obj = cls(support, np.exp(log_p), log_weights)
        # keep the exact log-space values rather than log(exp(.))
        object.__setattr__(obj, "log_probs", _frozen(log_p))
        return obj

    @property
    def dim(self) -> int:
        return self.support.shape[1]

    def log_density(self, x):
        pts, single = _as_points(x, self.dim)
        match = np.all(pts[:, None, :] == self.support[None, :, :], axis=-1)
        out = np.full(pts.shape[0], -np.inf)
        rows, cols = np.nonzero(match)
        out[rows] = self.log_probs[cols]
        return _unwrap(out, single)

    def grid_log_density(self) -> np.ndarray:
        """Log density values at the support (mass divided by cell weight)."""
        if self.log_weights is None:
            return self.log_probs.copy()
        return self.log_probs - self.log_weights

    def grid_density(self) -> np.ndarray:
        return np.exp(self.grid_log_density())

    def mean(self) -> np.ndarray:
        return self.probs @ self.support

    def draw(self, n, rng) -> SampleSet:
        idx = rng.choice(self.support.shape[0], size=int(n), p=self.probs)
        return SampleSet(self.support[idx])


@dataclass(frozen=True, eq=False)
class Kde(_Belief):
    """Gaussian-kernel density estimate with a diagonal bandwidth.

    ``bandwidth`` holds the per-dimension kernel standard deviations.
    """

    samples: SampleSet
    bandwidth: np.ndarray

    def __post_init__(self):
        h = np.atleast_1d(np.asarray(self.bandwidth, dtype=float))
        if h.shape != (self.samples.dim,):
            raise DimensionMismatch("bandwidth must have one entry per dimension")
        if not np.all(h > 0) or not np.all(np.isfinite(h)):
            raise DomainError("bandwidth entries must be strictly positive")
        object.__setattr__(self, "bandwidth", _frozen(h))

    @property
    def dim(self) -> int:
        return self.samples.dim

    def log_density(self, x, chunk=1024):
        pts, single = _as_points(x, self.dim)
        centers = self.samples.values / self.bandwidth
        L = centers.shape[0]
        const = -0.5 * self.dim * _LOG_2PI - np.log(self.bandwidth).sum() - np.log(L)
        out = np.empty(pts.shape[0])
        scaled = pts / self.bandwidth
        for start in range(0, pts.shape[0], chunk):
            q = scaled[start:start + chunk]
            sq = np.sum((q[:, None, :] - centers[None, :, :]) ** 2, axis=-1)
            out[start:start + chunk] = logsumexp(-0.5 * sq, axis=1) + const
        return _unwrap(out, single)

    def draw(self, n, rng) -> SampleSet:
        n = int(n)
        idx = rng.integers(0, len(self.samples), size=n)
        z = rng.standard_normal((n, self.dim))
        return SampleSet(self.samples.values[idx] + z * self.bandwidth)


# --------------------------------------------------------------------------
# Fitting
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class ScottsRule:
    """``h_k = sigma_k * L ** (-1 / (d + 4))``."""

    def bandwidth(self, s: SampleSet) -> np.ndarray:
        sigma = s.values.std(axis=0, ddof=1)
        return sigma * len(s) ** (-1.0 / (s.dim + 4))


@dataclass(frozen=True, eq=False)
class FixedBandwidth:
    h: np.ndarray

    def __post_init__(self):
        h = np.atleast_1d(np.asarray(self.h, dtype=float))
        if not np.all(h > 0):
            raise DomainError("fixed bandwidth entries must be strictly positive")
        object.__setattr__(self, "h", _frozen(h))

    def bandwidth(self, s: SampleSet) -> np.ndarray:
        if self.h.size == 1 and s.dim > 1:
            return np.full(s.dim, self.h[0])
        return self.h


def _as_sampleset(s) -> SampleSet:
    return s if isinstance(s, SampleSet) else SampleSet(s)


def fit_gaussian(s) -> Gaussian:
    """Gaussian with the sample mean and unbiased sample covariance."""
    s = _as_sampleset(s)
    L, d = s.values.shape
    if L <= d:
        raise TooFewSamples(f"need more than {d} samples to fit a {d}-d Gaussian, got {L}")
    mean = s.values.mean(axis=0)
    cov = np.atleast_2d(np.cov(s.values, rowvar=False, ddof=1))
    try:
        np.linalg.cholesky(cov)
    except np.linalg.LinAlgError as exc:
        raise DegenerateSamples("sample covariance is not positive definite") from exc
    return Gaussian(mean, cov)


def fit_kde(s, rule=None) -> Kde:
    """Gaussian KDE; Scott's rule unless ``rule`` says otherwise."""
    s = _as_sampleset(s)
    if len(s) < 2:
        raise TooFewSamples("need at least 2 samples for a KDE")
    if np.any(s.values.std(axis=0) == 0):
        raise DegenerateSamples("zero sample spread in at least one dimension")
    rule = ScottsRule() if rule is None else rule
    return Kde(s, rule.bandwidth(s))


# Module-level spellings of the belief interface.


def density(b, x):
    return b.density(x)


def log_density(b, x):
    return b.log_density(x)


def draw(b, n, rng=None) -> SampleSet:
    if int(n) < 1:
        raise DomainError("n must be at least 1")
    return b.draw(n, rng)
