"""Exact grid implementations of the global and local belief updates.

Everything here works on finite grids with quadrature weights and keeps
all products in log space, normalising once with log-sum-exp. These
routines are the reference against which the samplers are checked.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import logsumexp
from scipy.stats import beta as beta_dist

from .belief import Dirac, GridPmf
from .errors import (
    AllZeroMass,
    DomainError,
    GridMismatch,
    IndexOutOfRange,
    InputError,
    UnsupportedBelief,
)
from .meta_model import (
    BetaBernoulliPhi,
    DrawCache,
    GaussianPhi,
    log_cond,
    log_expected_lik,
    log_prior,
)

__all__ = [
    "Grid",
    "PhiGrid",
    "Message",
    "trapezoid_log_weights",
    "global_update",
    "local_update",
    "message_leaf_to_root",
    "message_root_to_leaf",
    "combine_at_root",
    "combine_at_leaf",
    "bernoulli_soft_curve",
]


def trapezoid_log_weights(axis):
    axis = np.asarray(axis, dtype=float)
    if axis.ndim != 1 or axis.size < 2:
        raise DomainError("a grid axis needs at least 2 points")
    if np.any(np.diff(axis) <= 0):
        raise DomainError("grid axis must be strictly increasing")
    w = np.zeros_like(axis)
    h = np.diff(axis)
    w[:-1] += 0.5 * h
    w[1:] += 0.5 * h
    return np.log(w)


@dataclass(frozen=True, eq=False)
class Grid:
    """Points ``(K, d)`` with log quadrature weights ``(K,)``.

    ``axes`` is set for tensor grids and lists the per-axis coordinates in
    C order, so that ``values.reshape([len(a) for a in axes])`` recovers the
    tensor layout.
    """

    points: np.ndarray
    log_weights: np.ndarray
    axes: tuple | None = None

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=float)
        if pts.ndim == 1:
            pts = pts[:, None]
        lw = np.asarray(self.log_weights, dtype=float)
        if lw.shape != (pts.shape[0],):
            raise GridMismatch("log_weights must have one entry per grid point")
        if pts.shape[0] < 2:
            raise DomainError("a grid needs at least 2 points")
        object.__setattr__(self, "points", pts)
        object.__setattr__(self, "log_weights", lw)

    def __len__(self):
        return self.points.shape[0]

    @classmethod
    def uniform(cls, lo, hi, n):
        axis = np.linspace(lo, hi, int(n))
        return cls(axis[:, None], trapezoid_log_weights(axis), (axis,))

    @classmethod
    def binary(cls):
        """The two-point support {0, 1} of a Bernoulli effect."""
        return cls.discrete([[0.0], [1.0]])

    @classmethod
    def discrete(cls, points):
        pts = np.asarray(points, dtype=float)
        return cls(pts, np.zeros(pts.shape[0]))

    @classmethod
    def tensor(cls, *axes):
        axes = tuple(np.asarray(a, dtype=float) for a in axes)
        mesh = np.meshgrid(*axes, indexing="ij")
        pts = np.stack([m.ravel() for m in mesh], axis=-1)
        lw = np.zeros([a.size for a in axes])
        for k, a in enumerate(axes):
            shape = [1] * len(axes)
            shape[k] = a.size
            lw = lw + trapezoid_log_weights(a).reshape(shape)
        return cls(pts, lw.ravel(), axes)


@dataclass(frozen=True, eq=False)
class PhiGrid(Grid):
    """A grid over global parameters, convertible to a batched parameter."""

    family: str = "bernoulli"

    @classmethod
    def bernoulli(cls, n=2001):
        g = Grid.uniform(0.0, 1.0, n)
        return cls(g.points, g.log_weights, g.axes, "bernoulli")

    @classmethod
    def bernoulli_discrete(cls, values):
        """Finite parameter set with counting-measure weights."""
        v = np.asarray(values, dtype=float)
        if np.any(np.diff(v) <= 0):
            raise DomainError("parameter values must be strictly increasing")
        return cls(v[:, None], np.zeros(v.size), (v,), "bernoulli")

    @classmethod
    def gaussian_1d(cls, mu_axis, var_axis):
        """Tensor grid over (mu, sigma0^2) for one-dimensional Gaussian models."""
        var_axis = np.asarray(var_axis, dtype=float)
        if np.any(var_axis <= 0):
            raise DomainError("variance axis must be strictly positive")
        g = Grid.tensor(mu_axis, var_axis)
        return cls(g.points, g.log_weights, g.axes, "gaussian1d")

    @property
    def param(self):
        if self.family == "bernoulli":
            return BetaBernoulliPhi(self.points[:, 0])
        return GaussianPhi(self.points[:, :1], self.points[:, 1].reshape(-1, 1, 1))

    @property
    def coord_names(self):
        return ["phi"] if self.family == "bernoulli" else ["mu", "sigma0_sq"]


@dataclass(frozen=True, eq=False)
class Message:
    """Log-space message over grid points, shifted so its maximum is 0."""

    log_values: np.ndarray

    def __post_init__(self):
        lv = np.asarray(self.log_values, dtype=float)
        finite = np.isfinite(lv)
        if not finite.any():
            raise AllZeroMass("message has no finite entry")
        object.__setattr__(self, "log_values", lv - lv[finite].max())

    def __len__(self):
        return self.log_values.size


def _prior_log_density(spec, grid, prior):
    if prior is None:
        return np.asarray(log_prior(spec, grid.param), dtype=float)
    if isinstance(prior, GridPmf):
        if prior.probs.shape[0] != len(grid):
            raise GridMismatch("prior pmf does not align with the grid")
        return prior.grid_log_density()
    lp = np.asarray(prior, dtype=float)
    if lp.shape != (len(grid),):
        raise GridMismatch("prior log density does not align with the grid")
    return lp


def _normalise(support, log_mass, log_weights):
    if np.any(np.isposinf(log_mass)):
        raise DomainError("density is infinite at a grid point; keep the grid off the prior's poles")
    if not np.any(np.isfinite(log_mass)):
        raise AllZeroMass("every grid point has zero posterior mass")
    return GridPmf.from_log_mass(support, log_mass, log_weights)


def global_update(spec, beliefs, grid, budget=None, rng=None, prior=None, cache=None):
    """Grid posterior over phi given observed beliefs.

    ``prior`` overrides q on the grid; pass the output of a previous call
    to update sequentially.
    """
    if len(beliefs) < 1 and prior is None:
        raise InputError("global_update needs at least one belief")
    cache = cache if cache is not None else DrawCache()
    param = grid.param
    log_mass = _prior_log_density(spec, grid, prior) + grid.log_weights
    for b in beliefs:
        log_mass = log_mass + log_expected_lik(spec, param, b, budget, rng, cache)
    return _normalise(grid.points, log_mass, grid.log_weights)


def _predictive_log(spec, theta_points, phi_grid, log_phi_mass):
    """log sum_k p(theta_i | phi_k) mass_k for each theta grid point."""
    pts = theta_points[:, None, :]
    terms = np.asarray(log_cond(spec, pts, phi_grid.param)) + log_phi_mass[None, :]
    return logsumexp(terms, axis=1)


def local_update(spec, beliefs, j_prime, theta_grid, phi_grid, budget=None, rng=None, cache=None):
    """Updated belief over theta_{j'} on ``theta_grid``.

    ``j_prime`` is a 0-based index into ``beliefs``. The result is
    proportional to pi_{j'}(theta) times the predictive of theta under the
    global posterior built from every other belief.
    """
    J = len(beliefs)
    if not 0 <= j_prime < J:
        raise IndexOutOfRange(f"belief index {j_prime} out of range for {J} beliefs")
    target = beliefs[j_prime]
    if isinstance(target, Dirac):
        raise UnsupportedBelief("cannot update a Dirac belief on a grid")
    cache = cache if cache is not None else DrawCache()
    others = [b for i, b in enumerate(beliefs) if i != j_prime]
    param = phi_grid.param
    log_mass = np.asarray(log_prior(spec, param), dtype=float) + phi_grid.log_weights
    for b in others:
        log_mass = log_mass + log_expected_lik(spec, param, b, budget, rng, cache)
    if not np.any(np.isfinite(log_mass)):
        raise AllZeroMass("global posterior from the other beliefs has zero mass")
    log_mass = log_mass - logsumexp(log_mass)
    pred = _predictive_log(spec, theta_grid.points, phi_grid, log_mass)
    with np.errstate(divide="ignore"):
        own = np.asarray(target.log_density(theta_grid.points), dtype=float)
    return _normalise(theta_grid.points, own + pred + theta_grid.log_weights, theta_grid.log_weights)


# --------------------------------------------------------------------------
# Message passing
# --------------------------------------------------------------------------


def message_leaf_to_root(spec, belief, phi_grid, budget=None, rng=None, cache=None):
    lv = log_expected_lik(spec, phi_grid.param, belief, budget, rng, cache)
    return Message(np.asarray(lv, dtype=float))


def _checked(messages, n):
    for m in messages:
        if len(m) != n:
            raise GridMismatch(f"message of length {len(m)} does not match grid of {n} points")
    return messages


def message_root_to_leaf(spec, messages_others, prior_on_grid, theta_grid, phi_grid):
    """Message from phi to one leaf: integrate the edge potential against the rest."""
    n = len(phi_grid)
    prior = np.asarray(prior_on_grid, dtype=float)
    if prior.shape != (n,):
        raise GridMismatch("prior does not align with the phi grid")
    log_mass = prior + phi_grid.log_weights
    for m in _checked(messages_others, n):
        log_mass = log_mass + m.log_values
    return Message(_predictive_log(spec, theta_grid.points, phi_grid, log_mass))


def combine_at_root(prior_on_grid, messages, phi_grid):
    """q*(phi) from the prior and every leaf-to-root message."""
    n = len(phi_grid)
    log_mass = np.asarray(prior_on_grid, dtype=float) + phi_grid.log_weights
    for m in _checked(messages, n):
        log_mass = log_mass + m.log_values
    return _normalise(phi_grid.points, log_mass, phi_grid.log_weights)


def combine_at_leaf(belief, message, theta_grid):
    """Updated leaf belief: its own density times the incoming message."""
    _checked([message], len(theta_grid))
    if isinstance(belief, Dirac):
        raise UnsupportedBelief("cannot update a Dirac belief on a grid")
    own = np.asarray(belief.log_density(theta_grid.points), dtype=float)
    return _normalise(theta_grid.points, own + message.log_values + theta_grid.log_weights,
                      theta_grid.log_weights)


def bernoulli_soft_curve(alpha, beta, soft_probs, phi_grid):
    """Closed-form updated density for phi under soft binary observations."""
    if not (alpha > 0 and beta > 0):
        raise DomainError("alpha and beta must be positive")
    p = np.asarray(soft_probs, dtype=float)
    if np.any((p < 0) | (p > 1)):
        raise DomainError("soft probabilities must lie in [0, 1]")
    phi = phi_grid.points[:, 0]
    with np.errstate(divide="ignore"):
        log_mass = beta_dist.logpdf(phi, alpha, beta) + phi_grid.log_weights
        lik = np.log(phi[:, None] * p[None, :] + (1.0 - phi[:, None]) * (1.0 - p[None, :]))
    return _normalise(phi_grid.points, log_mass + lik.sum(axis=1), phi_grid.log_weights)

