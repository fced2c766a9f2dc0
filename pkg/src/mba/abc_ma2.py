"""Rejection ABC and the MA(2) simulation study.

Simulators and summaries are batched closures: ``simulator(thetas, rng)``
maps a ``(B, p)`` parameter block to ``(B, n)`` series, ``summarize``
maps series to ``(B, k)`` summaries. Proposals are processed in a fixed
order, so results depend only on the seed and the batch size.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .belief import SampleSet
from .errors import BudgetExhausted, DomainError, LagTooLarge

log = logging.getLogger(__name__)

__all__ = [
    "Ma2Params",
    "AbcConfig",
    "AbcResult",
    "in_triangle",
    "simulate_ma2",
    "simulate_ma2_batch",
    "autocov",
    "ma2_summaries",
    "make_ma2_simulator",
    "sample_triangle_prior",
    "abc_rejection",
    "generate_effects",
]


def in_triangle(theta1, theta2):
    """Membership in the MA(2) invertibility triangle (open set)."""
    theta1, theta2 = np.asarray(theta1), np.asarray(theta2)
    return (-(theta2 + 1) < theta1) & (theta1 < theta2 + 1) & (-1 < theta2) & (theta2 < 1)


@dataclass(frozen=True)
class Ma2Params:
    theta1: float
    theta2: float

    def __post_init__(self):
        if not in_triangle(self.theta1, self.theta2):
            raise DomainError(f"({self.theta1}, {self.theta2}) is outside the MA(2) triangle")

    def as_array(self):
        return np.array([self.theta1, self.theta2])


def simulate_ma2_batch(thetas, n, rng):
    """One length-``n`` MA(2) series per row of ``thetas``.

    Two pre-sample innovations are drawn so the first observation already
    carries lagged noise.
    """
    thetas = np.atleast_2d(np.asarray(thetas, dtype=float))
    eps = rng.standard_normal((thetas.shape[0], int(n) + 2))
    return eps[:, 2:] + thetas[:, :1] * eps[:, 1:-1] + thetas[:, 1:2] * eps[:, :-2]


def simulate_ma2(theta, n, rng):
    if int(n) < 1:
        raise DomainError("series length must be at least 1")
    th = theta.as_array() if isinstance(theta, Ma2Params) else np.asarray(theta, dtype=float)
    return simulate_ma2_batch(th[None], n, rng)[0]


def autocov(series, lag):
    """Biased sample autocovariance along the last axis."""
    y = np.asarray(series, dtype=float)
    n = y.shape[-1]
    if not 0 <= lag < n:
        raise LagTooLarge(f"lag {lag} needs a series longer than {lag}, got {n}")
    yc = y - y.mean(axis=-1, keepdims=True)
    return np.sum(yc[..., lag:] * yc[..., :n - lag], axis=-1) / n


def ma2_summaries(series):
    """Lag-1 and lag-2 autocovariances, shape ``(B, 2)``."""
    y = np.atleast_2d(series)
    return np.stack([autocov(y, 1), autocov(y, 2)], axis=-1)


def make_ma2_simulator(n):
    def simulator(thetas, rng):
        return simulate_ma2_batch(thetas, n, rng)

    return simulator


def sample_triangle_prior(rng, size=None):
    """Uniform draws on the triangle by rejection from [-2, 2] x [-1, 1].

    The triangle has area 4 inside a box of area 8, so half the box
    proposals are kept on average.
    """
    n = 1 if size is None else int(size)
    out = np.empty((0, 2))
    while out.shape[0] < n:
        m = max(2 * (n - out.shape[0]), 16)
        box = np.column_stack([rng.uniform(-2, 2, m), rng.uniform(-1, 1, m)])
        out = np.concatenate([out, box[in_triangle(box[:, 0], box[:, 1])]])
    out = out[:n]
    if size is None:
        return Ma2Params(*out[0])
    return out


@dataclass(frozen=True)
class AbcConfig:
    epsilon: float = 0.1
    n_accept: int = 1000
    max_proposals: int = 10_000_000
    summary_weights: tuple | None = None
    batch_size: int = 20_000

    def __post_init__(self):
        if not self.epsilon >= 0:
            raise DomainError("epsilon must be nonnegative")
        if not 1 <= self.n_accept <= self.max_proposals:
            raise DomainError("need 1 <= n_accept <= max_proposals")
        if self.summary_weights is not None and any(w <= 0 for w in self.summary_weights):
            raise DomainError("summary weights must be positive")


@dataclass(frozen=True, eq=False)
class AbcResult:
    samples: SampleSet | None
    distances: np.ndarray
    n_proposals: int
    exhausted: bool = False
    meta: dict = field(default_factory=dict)

    @property
    def n_accepted(self):
        return self.distances.size

    @property
    def acceptance_rate(self):
        return self.n_accepted / self.n_proposals if self.n_proposals else 0.0


def abc_rejection(observed_summaries, simulator, summarize, cfg, rng,
                  prior=sample_triangle_prior, allow_partial=False) -> AbcResult:
    """Accept prior proposals whose summaries lie within ``epsilon`` of the observed ones.

    Raises :class:`BudgetExhausted` (carrying the partial result) if
    ``max_proposals`` runs out first, unless ``allow_partial`` is set.
    Progress is logged at INFO level after every batch.
    """
    s0 = np.asarray(observed_summaries, dtype=float)
    if not np.all(np.isfinite(s0)):
        raise DomainError("observed summaries must be finite")
    w = np.ones_like(s0) if cfg.summary_weights is None else np.asarray(cfg.summary_weights, float)
    accepted, dists = [], []
    n_acc = used = 0
    while n_acc < cfg.n_accept and used < cfg.max_proposals:
        b = min(cfg.batch_size, cfg.max_proposals - used)
        thetas = prior(rng, b)
        s = summarize(simulator(thetas, rng))
        dist = np.sqrt(np.sum(w * (s - s0) ** 2, axis=-1))
        ok = np.flatnonzero(dist <= cfg.epsilon)
        need = cfg.n_accept - n_acc
        if ok.size >= need:
            ok = ok[:need]
            used += int(ok[-1]) + 1
        else:
            used += b
        accepted.append(thetas[ok])
        dists.append(dist[ok])
        n_acc += ok.size
        log.info("abc: accepted %d of %d after %d proposals", n_acc, cfg.n_accept, used)
    dists = np.concatenate(dists) if dists else np.zeros(0)
    samples = SampleSet(np.concatenate(accepted)) if n_acc else None
    result = AbcResult(samples, dists, used, exhausted=n_acc < cfg.n_accept)
    if result.exhausted and not allow_partial:
        raise BudgetExhausted(
            f"accepted {n_acc} of {cfg.n_accept} after {used} proposals", result
        )
    return result


def generate_effects(J, rng):
    """Study effects: theta1 ~ U(0.4, 0.8), theta2 ~ N(theta1 - 0.4, 0.04^2).

    Draws outside the triangle are redrawn.
    """
    if int(J) < 1:
        raise DomainError("J must be at least 1")
    out = []
    while len(out) < J:
        t1 = rng.uniform(0.4, 0.8)
        t2 = rng.normal(-0.4 + t1, 0.04)
        if in_triangle(t1, t2):
            out.append(Ma2Params(float(t1), float(t2)))
    return out
