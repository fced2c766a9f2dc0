"""Joint sampling of (phi, theta_1..theta_J) and importance-resampling refinement.

The joint target uses Gaussian approximations of each study belief:

    q(phi) * prod_j p(theta_j | phi) * pihat_j(theta_j)

and is explored by an adaptive random-walk Metropolis-within-Gibbs
sampler. The phi block lives in an unconstrained space (log-Cholesky
covariance, optionally log means); the theta_j blocks are conditionally
independent given phi and are updated together with independent
accept/reject decisions. Draws are then reweighted towards the
nonparametric beliefs with sampling/importance resampling.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
from scipy.special import logsumexp
from scipy.stats import invwishart

from .belief import Gaussian
from .errors import (
    ChainDivergence,
    DimensionMismatch,
    DomainError,
    InputError,
    NonFiniteStart,
    UnsupportedSpec,
    WeightCollapse,
)
from .meta_model import (
    BetaBernoulli,
    GaussianGammaMeans,
    GaussianNiw,
    GaussianPhi,
    log_cond,
    log_prior,
    sample_prior,
)

__all__ = [
    "McmcConfig",
    "JointDraw",
    "JointSamples",
    "WeightedDraws",
    "sample_joint",
    "sample_global",
    "sample_vector",
    "sir_refine",
    "systematic_resample",
    "split_rhat",
    "effective_sample_size",
    "diagnostics",
]


@dataclass(frozen=True)
class McmcConfig:
    n_warmup: int = 2000
    n_keep: int = 2000
    n_chains: int = 4
    init_jitter: float = 0.1
    adapt_target: float = 0.3
    seed: int = 0
    thin: int = 1
    conjugate: bool = True

    def __post_init__(self):
        for name in ("n_warmup", "n_keep", "n_chains", "thin"):
            if int(getattr(self, name)) < 1:
                raise DomainError(f"{name} must be a positive integer")
        if not self.init_jitter > 0:
            raise DomainError("init_jitter must be positive")
        if not 0 < self.adapt_target < 1:
            raise DomainError("adapt_target must lie in (0, 1)")


def _chain_rng(seed, chain):
    return np.random.default_rng(np.random.SeedSequence(int(seed), spawn_key=(int(chain),)))


# --------------------------------------------------------------------------
# Unconstrained parameterisation of phi
# --------------------------------------------------------------------------


class _PhiTransform:
    """phi <-> u with Sigma0 = L L^T, L lower triangular with log diagonal."""

    def __init__(self, spec):
        self.d = d = spec.dim
        self.log_means = isinstance(spec, GaussianGammaMeans)
        self.rows, self.cols = np.tril_indices(d)
        self.is_diag = self.rows == self.cols
        # d log 2 + sum_i (d - i + 2) log L_ii, i = 1..d
        self.jac_coef = (d - np.arange(1, d + 1) + 2).astype(float)
        self.size = d + self.rows.size

    def pack(self, phi):
        mu = np.log(phi.mu) if self.log_means else phi.mu
        L = np.linalg.cholesky(phi.sigma0)
        tri = L[self.rows, self.cols].copy()
        tri[self.is_diag] = np.log(tri[self.is_diag])
        return np.concatenate([mu, tri])

    def unpack(self, u):
        d = self.d
        mu = u[:d]
        log_jac = 0.0
        if self.log_means:
            log_jac += mu.sum()
            mu = np.exp(mu)
        tri = u[d:]
        log_diag = tri[self.is_diag]
        vals = tri.copy()
        vals[self.is_diag] = np.exp(log_diag)
        L = np.zeros((d, d))
        L[self.rows, self.cols] = vals
        log_jac += d * np.log(2.0) + np.dot(self.jac_coef, log_diag)
        return GaussianPhi(mu, L @ L.T), log_jac


class _AdaptiveProposal:
    """Gaussian random walk for a stack of independent blocks.

    During warmup the log step size follows a Robbins-Monro recursion
    towards the target acceptance rate, and the proposal shape is
    periodically re-estimated from the second half of the warmup history.
    """

    def __init__(self, cov0, target, n_warmup):
        cov0 = np.asarray(cov0, dtype=float)
        self.n_blocks, self.dim = cov0.shape[0], cov0.shape[1]
        self.chol = np.linalg.cholesky(cov0)
        self.base = np.log(2.38 / np.sqrt(self.dim))
        self.log_scale = np.full(self.n_blocks, self.base)
        self.target = target
        self.hist = np.empty((n_warmup, self.n_blocks, self.dim))
        self.reshaped = False

    def propose(self, x, rng):
        z = rng.standard_normal((self.n_blocks, self.dim))
        step = np.einsum("bij,bj->bi", self.chol, z)
        return x + np.exp(self.log_scale)[:, None] * step

    def adapt(self, t, accepted, x):
        self.log_scale += (t + 1.0) ** -0.6 * (accepted.astype(float) - self.target)
        self.hist[t] = x
        if t >= 199 and (t + 1) % 100 == 0:
            window = self.hist[(t + 1) // 2:t + 1]
            centred = window - window.mean(axis=0)
            cov = np.einsum("nbi,nbj->bij", centred, centred) / max(window.shape[0] - 1, 1)
            cov += 1e-12 * np.eye(self.dim)
            try:
                chol = np.linalg.cholesky(cov)
            except np.linalg.LinAlgError:
                return
            if np.all(np.isfinite(chol)):
                self.chol = chol
                if not self.reshaped:
                    self.log_scale[:] = self.base
                    self.reshaped = True


# --------------------------------------------------------------------------
# Samples containers
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class JointDraw:
    phi: GaussianPhi
    thetas: np.ndarray


@dataclass(frozen=True, eq=False)
class JointSamples:
    """Chains of joint draws: ``mu (C, N, d)``, ``sigma0 (C, N, d, d)``, ``thetas (C, N, J, d)``."""

    mu: np.ndarray
    sigma0: np.ndarray
    thetas: np.ndarray
    accept_phi: np.ndarray
    accept_theta: np.ndarray

    @property
    def n_chains(self):
        return self.mu.shape[0]

    @property
    def n_draws(self):
        return self.mu.shape[0] * self.mu.shape[1]

    @property
    def n_studies(self):
        return self.thetas.shape[2]

    def flat(self, name):
        a = getattr(self, name)
        return a.reshape((a.shape[0] * a.shape[1],) + a.shape[2:])

    def __len__(self):
        return self.n_draws

    def __getitem__(self, m):
        mu, s0, th = self.flat("mu"), self.flat("sigma0"), self.flat("thetas")
        return JointDraw(GaussianPhi(mu[m], s0[m]), th[m])

    def columns(self):
        d, J = self.mu.shape[2], self.thetas.shape[2]
        names = [f"mu_{k}" for k in range(d)]
        names += [f"sigma0_{k}{l}" for k in range(d) for l in range(d)]
        names += [f"theta_{j + 1}_{k}" for j in range(J) for k in range(d)]
        return names

    def matrix(self):
        """Flat ``(M, p)`` matrix aligned with :meth:`columns`."""
        M = self.n_draws
        return np.concatenate(
            [self.flat("mu"), self.flat("sigma0").reshape(M, -1), self.flat("thetas").reshape(M, -1)],
            axis=1,
        )


# --------------------------------------------------------------------------
# Chains
# --------------------------------------------------------------------------


def _stack_gaussians(approx, d):
    for b in approx:
        if not isinstance(b, Gaussian):
            raise InputError("approximate beliefs must be Gaussian")
        if b.dim != d:
            raise DimensionMismatch(f"belief is {b.dim}-d but the model is {d}-d")
    if not approx:
        return np.zeros((0, d)), np.zeros((0, d, d)), np.zeros((0, d, d))
    means = np.stack([b.mean for b in approx])
    covs = np.stack([b.cov for b in approx])
    chols = np.stack([b.chol for b in approx])
    return means, covs, chols


def _gauss_logpdf_stack(x, means, chols):
    z = np.linalg.solve(chols, (x - means)[..., None])[..., 0]
    d = x.shape[-1]
    half_logdet = np.log(np.diagonal(chols, axis1=-2, axis2=-1)).sum(axis=-1)
    return -0.5 * (d * np.log(2 * np.pi) + np.sum(z * z, axis=-1)) - half_logdet


def _draw_theta_conditional(phi, prec_own, prec_own_mean, rng):
    """Exact draw of every theta_j from the normalised N(mu, Sigma0) * N(m_j, S_j)."""
    prec0 = np.linalg.inv(phi.sigma0)
    prec = prec0[None] + prec_own
    chol = np.linalg.cholesky(prec)
    mean = np.linalg.solve(prec, (prec0 @ phi.mu + prec_own_mean)[..., None])[..., 0]
    z = rng.standard_normal(mean.shape)
    return mean + np.linalg.solve(np.swapaxes(chol, -1, -2), z[..., None])[..., 0]


def _run_conjugate_chain(spec, approx, cfg, chain):
    """Gibbs sweeps theta | phi, mu | Sigma0, theta, Sigma0 | mu, theta for the NIW model."""
    rng = _chain_rng(cfg.seed, chain)
    d = spec.dim
    means, covs, chols = _stack_gaussians(approx, d)
    J = means.shape[0]
    prec_own = np.linalg.inv(covs)
    prec_own_mean = np.einsum("jab,jb->ja", prec_own, means)
    prec_m = np.linalg.inv(spec.V)
    prec_m_mean = prec_m @ spec.m
    tf = _PhiTransform(spec)
    phi, _ = tf.unpack(tf.pack(sample_prior(spec, rng)) + cfg.init_jitter * rng.standard_normal(tf.size))

    n_keep, thin = cfg.n_keep, cfg.thin
    out_mu = np.empty((n_keep, d))
    out_s0 = np.empty((n_keep, d, d))
    out_th = np.empty((n_keep, J, d))
    for t in range(cfg.n_warmup + n_keep * thin):
        theta = _draw_theta_conditional(phi, prec_own, prec_own_mean, rng)
        prec0 = np.linalg.inv(phi.sigma0)
        prec = prec_m + J * prec0
        chol = np.linalg.cholesky(prec)
        mean = np.linalg.solve(prec, prec_m_mean + prec0 @ theta.sum(axis=0))
        mu = mean + np.linalg.solve(chol.T, rng.standard_normal(d))
        dev = theta - mu
        scatter = spec.Psi + dev.T @ dev
        sigma0 = np.atleast_2d(invwishart.rvs(spec.nu + J, scatter, random_state=rng))
        phi = GaussianPhi(mu, sigma0)
        if t < cfg.n_warmup:
            continue
        k, r = divmod(t - cfg.n_warmup, thin)
        if r == thin - 1:
            out_mu[k] = mu
            out_s0[k] = sigma0
            out_th[k] = theta
    return out_mu, out_s0, out_th, (1.0, np.ones(J))


def _check_spec(spec):
    if isinstance(spec, BetaBernoulli):
        raise UnsupportedSpec("discrete-theta models are handled by the grid updater")
    if not isinstance(spec, (GaussianNiw, GaussianGammaMeans)):
        raise UnsupportedSpec(f"unsupported model {type(spec).__name__}")


def _prior_cov(spec, tf, rng, n=200):
    draws = np.stack([tf.pack(sample_prior(spec, rng)) for _ in range(n)])
    cov = np.atleast_2d(np.cov(draws, rowvar=False))
    return cov + 1e-12 * np.eye(tf.size)


def _run_chain(spec, approx, cfg, chain, extra_log_lik=None):
    rng = _chain_rng(cfg.seed, chain)
    tf = _PhiTransform(spec)
    d = spec.dim
    means, covs, chols = _stack_gaussians(approx, d)
    J = means.shape[0]

    def phi_terms(u, theta):
        phi, lj = tf.unpack(u)
        lp = log_prior(spec, phi)
        if not np.isfinite(lp):
            return phi, -np.inf, np.full(J, -np.inf)
        cond = np.asarray(log_cond(spec, theta, phi)).reshape(J)
        extra = extra_log_lik(phi) if extra_log_lik is not None else 0.0
        return phi, lp + lj + extra, cond

    for _ in range(100):
        u = tf.pack(sample_prior(spec, rng)) + cfg.init_jitter * rng.standard_normal(tf.size)
        theta = means + cfg.init_jitter * rng.standard_normal((J, d))
        phi, lp_phi, cond = phi_terms(u, theta)
        own = _gauss_logpdf_stack(theta, means, chols) if J else np.zeros(0)
        if np.isfinite(lp_phi + cond.sum() + own.sum()):
            break
    else:
        raise NonFiniteStart("initial log density is -inf after 100 jittered attempts")

    prior_cov = _prior_cov(spec, tf, rng)
    phi_prop = _AdaptiveProposal(prior_cov[None], cfg.adapt_target, cfg.n_warmup)
    th_prop = _AdaptiveProposal(covs, cfg.adapt_target, cfg.n_warmup) if J else None
    # joint translation of mu and every theta_j leaves theta_j - mu fixed,
    # which breaks the mu/theta coupling that slows blockwise updates
    shift_prop = (_AdaptiveProposal(prior_cov[None, :d, :d], cfg.adapt_target, cfg.n_warmup)
                  if J and not tf.log_means else None)

    n_keep, thin = cfg.n_keep, cfg.thin
    out_mu = np.empty((n_keep, d))
    out_s0 = np.empty((n_keep, d, d))
    out_th = np.empty((n_keep, J, d))
    acc_phi = 0
    acc_th = np.zeros(J)
    total = cfg.n_warmup + n_keep * thin

    for t in range(total):
        u_new = phi_prop.propose(u[None], rng)[0]
        phi_new, lp_new, cond_new = phi_terms(u_new, theta)
        log_ratio = lp_new + cond_new.sum() - lp_phi - cond.sum()
        ok_phi = np.log(rng.random()) < log_ratio
        if ok_phi:
            u, phi, lp_phi, cond = u_new, phi_new, lp_new, cond_new

        if J:
            th_new = th_prop.propose(theta, rng)
            cond_th = np.asarray(log_cond(spec, th_new, phi)).reshape(J)
            own_new = _gauss_logpdf_stack(th_new, means, chols)
            ok_th = np.log(rng.random(J)) < (cond_th + own_new) - (cond + own)
            theta = np.where(ok_th[:, None], th_new, theta)
            cond = np.where(ok_th, cond_th, cond)
            own = np.where(ok_th, own_new, own)
        else:
            ok_th = np.zeros(0, dtype=bool)

        if shift_prop is not None:
            delta = shift_prop.propose(np.zeros((1, d)), rng)[0]
            u_new = u.copy()
            u_new[:d] += delta
            th_new = theta + delta
            phi_new, lp_new, cond_new = phi_terms(u_new, th_new)
            own_new = _gauss_logpdf_stack(th_new, means, chols)
            log_ratio = (lp_new + cond_new.sum() + own_new.sum()) - (lp_phi + cond.sum() + own.sum())
            ok_shift = np.log(rng.random()) < log_ratio
            if ok_shift:
                u, phi, lp_phi, cond, theta, own = u_new, phi_new, lp_new, cond_new, th_new, own_new

        if t < cfg.n_warmup:
            phi_prop.adapt(t, np.array([ok_phi]), u[None])
            if J:
                th_prop.adapt(t, ok_th, theta)
            if shift_prop is not None:
                shift_prop.adapt(t, np.array([ok_shift]), u[None, :d])
            continue
        acc_phi += ok_phi
        acc_th += ok_th
        k, r = divmod(t - cfg.n_warmup, thin)
        if r == thin - 1:
            out_mu[k] = phi.mu
            out_s0[k] = phi.sigma0
            out_th[k] = theta

    n_post = n_keep * thin
    rates = (acc_phi / n_post, acc_th / n_post)
    if rates[0] < 0.01 or (J and rates[1].mean() < 0.01):
        raise ChainDivergence(
            f"chain {chain}: post-warmup acceptance {rates[0]:.4f} (phi) is below 0.01"
        )
    return out_mu, out_s0, out_th, rates


def _collect(runs):
    return JointSamples(
        mu=np.stack([r[0] for r in runs]),
        sigma0=np.stack([r[1] for r in runs]),
        thetas=np.stack([r[2] for r in runs]),
        accept_phi=np.array([r[3][0] for r in runs]),
        accept_theta=np.stack([r[3][1] for r in runs]),
    )


def sample_joint(spec, approx_beliefs, cfg=None) -> JointSamples:
    """Sample the approximate joint model over (phi, theta_1..theta_J).

    With ``cfg.conjugate`` (default) and an NIW model every block is drawn
    from its exact Gaussian / inverse-Wishart conditional. Otherwise the phi
    block and each theta_j use adaptive random-walk Metropolis, plus a joint
    translation of (mu, theta) when the means are untransformed.
    """
    _check_spec(spec)
    cfg = cfg or McmcConfig()
    approx = list(approx_beliefs)
    run = _run_conjugate_chain if cfg.conjugate and approx and isinstance(spec, GaussianNiw) else _run_chain
    runs = [run(spec, approx, cfg, c) for c in range(cfg.n_chains)]
    return _collect(runs)


def sample_global(spec, log_lik, cfg=None) -> JointSamples:
    """Sample phi from ``q(phi) * exp(log_lik(phi))``; ``thetas`` comes back empty."""
    _check_spec(spec)
    cfg = cfg or McmcConfig()
    runs = [_run_chain(spec, [], cfg, c, extra_log_lik=log_lik) for c in range(cfg.n_chains)]
    return _collect(runs)


def sample_vector(log_target, init, init_cov, cfg=None):
    """Adaptive random-walk Metropolis for an unconstrained vector.

    ``init(rng)`` returns a starting point. Returns draws of shape
    ``(C, N, dim)`` and the per-chain acceptance rates.
    """
    cfg = cfg or McmcConfig()
    init_cov = np.atleast_2d(np.asarray(init_cov, dtype=float))
    chains, rates = [], []
    for c in range(cfg.n_chains):
        rng = _chain_rng(cfg.seed, c)
        for _ in range(100):
            x = np.asarray(init(rng), dtype=float) + cfg.init_jitter * rng.standard_normal(init_cov.shape[0])
            lp = log_target(x)
            if np.isfinite(lp):
                break
        else:
            raise NonFiniteStart("initial log density is -inf after 100 jittered attempts")
        prop = _AdaptiveProposal(init_cov[None], cfg.adapt_target, cfg.n_warmup)
        out = np.empty((cfg.n_keep, x.size))
        acc = 0
        for t in range(cfg.n_warmup + cfg.n_keep * cfg.thin):
            x_new = prop.propose(x[None], rng)[0]
            lp_new = log_target(x_new)
            ok = np.log(rng.random()) < lp_new - lp
            if ok:
                x, lp = x_new, lp_new
            if t < cfg.n_warmup:
                prop.adapt(t, np.array([ok]), x[None])
                continue
            acc += ok
            k, r = divmod(t - cfg.n_warmup, cfg.thin)
            if r == cfg.thin - 1:
                out[k] = x
        rate = acc / (cfg.n_keep * cfg.thin)
        if rate < 0.01:
            raise ChainDivergence(f"chain {c}: post-warmup acceptance {rate:.4f} is below 0.01")
        chains.append(out)
        rates.append(rate)
    return np.stack(chains), np.array(rates)


# --------------------------------------------------------------------------
# Importance resampling
# --------------------------------------------------------------------------


def systematic_resample(weights, rng, size=None):
    """Indices drawn by systematic resampling from normalised ``weights``."""
    w = np.asarray(weights, dtype=float)
    n = w.size if size is None else int(size)
    positions = (rng.random() + np.arange(n)) / n
    idx = np.searchsorted(np.cumsum(w), positions, side="right")
    return np.minimum(idx, w.size - 1)


def _normalise_log_weights(log_w):
    log_w = np.asarray(log_w, dtype=float)
    top = np.max(log_w)
    if not np.isfinite(top):
        raise DomainError("no draw has a finite importance weight")
    raw = np.exp(log_w - top)
    total = raw.sum()
    w = raw / total
    with np.errstate(divide="ignore"):
        log_norm = np.log(w)
    ess = total * total / np.sum(raw * raw)
    return w, log_norm, ess


@dataclass(frozen=True, eq=False)
class WeightedDraws:
    """Importance-weighted joint draws and their resampled counterpart.

    ``weights`` sum to one and ``log_weights`` are their logs; ``indices``
    select the resampled draws from the flattened ``samples``.
    """

    samples: JointSamples
    log_weights: np.ndarray
    ess: float
    indices: np.ndarray
    weights: np.ndarray

    @property
    def mu(self):
        return self.samples.flat("mu")[self.indices]

    @property
    def sigma0(self):
        return self.samples.flat("sigma0")[self.indices]

    @property
    def thetas(self):
        return self.samples.flat("thetas")[self.indices]


def sir_refine(samples, true_beliefs, approx_beliefs, seed=0) -> WeightedDraws:
    """Reweight joint draws by prod_j pi_j / pihat_j and resample systematically."""
    J = samples.n_studies
    if len(true_beliefs) != J or len(approx_beliefs) != J:
        raise InputError("need one true and one approximate belief per study")
    thetas = samples.flat("thetas")
    M = thetas.shape[0]
    log_w = np.zeros(M)
    for j in range(J):
        lp_true = np.asarray(true_beliefs[j].log_density(thetas[:, j]), dtype=float)
        lp_hat = np.asarray(approx_beliefs[j].log_density(thetas[:, j]), dtype=float)
        if np.any(np.isneginf(lp_hat) & np.isfinite(lp_true)):
            raise DomainError(f"approximation {j} vanishes where the belief does not")
        with np.errstate(invalid="ignore"):
            log_w += np.where(np.isneginf(lp_true), -np.inf, lp_true - lp_hat)
    w, log_norm, ess = _normalise_log_weights(log_w)
    if ess < 0.01 * M:
        warnings.warn(f"importance weights collapsed: ESS {ess:.1f} of {M}", WeightCollapse,
                      stacklevel=2)
    rng = np.random.default_rng(seed)
    idx = systematic_resample(w, rng)
    return WeightedDraws(samples, log_norm, float(ess), idx, w)


# --------------------------------------------------------------------------
# Diagnostics
# --------------------------------------------------------------------------


def split_rhat(chains):
    """Split-chain potential scale reduction for draws of shape (C, N, ...)."""
    x = np.asarray(chains, dtype=float)
    if x.ndim < 2 or x.shape[1] < 4:
        raise InputError("split R-hat needs draws of shape (chains, n >= 4, ...)")
    half = x.shape[1] // 2
    parts = np.concatenate([x[:, :half], x[:, -half:]], axis=0)
    n = half
    means = parts.mean(axis=1)
    W = parts.var(axis=1, ddof=1).mean(axis=0)
    B = n * means.var(axis=0, ddof=1)
    var_plus = (n - 1) / n * W + B / n
    with np.errstate(divide="ignore", invalid="ignore"):
        r = np.sqrt(var_plus / W)
    r = np.where(W > 0, r, np.where(B > 0, np.inf, 1.0))
    return float(r) if r.ndim == 0 else r


def effective_sample_size(log_weights):
    """1 / sum w^2 for (possibly unnormalised) log weights."""
    return float(_normalise_log_weights(log_weights)[2])


def diagnostics(samples, weighted=None):
    """Per-component split R-hat, acceptance rates and (optionally) weight ESS."""
    C, N = samples.mu.shape[:2]
    values = np.concatenate(
        [samples.mu, samples.sigma0.reshape(C, N, -1), samples.thetas.reshape(C, N, -1)], axis=2
    )
    rhat = split_rhat(values)
    out = {
        "rhat": dict(zip(samples.columns(), np.atleast_1d(rhat).tolist())),
        "accept_phi": samples.accept_phi.tolist(),
        "accept_theta": samples.accept_theta.tolist(),
        "n_draws": int(samples.n_draws),
    }
    if weighted is not None:
        out["ess"] = float(weighted.ess)
    return out
