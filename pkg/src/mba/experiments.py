"""Reproduction pipelines: soft-belief curves, concentration, and the MA(2) study.

Randomness follows a fixed counter scheme: each purpose (effects, series,
ABC, bootstrap, ...) has its own code, and per-study streams add the
study index to the spawn key. Adding a study therefore leaves the
streams of earlier studies untouched.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np
from scipy.special import logsumexp

from .abc_ma2 import (
    AbcConfig,
    abc_rejection,
    generate_effects,
    ma2_summaries,
    make_ma2_simulator,
    simulate_ma2,
)
from .baselines import StudyEstimate, bootstrap_cov, css_estimate, fema_fit, naive_fit, rema_fit
from .belief import SoftBernoulli, fit_gaussian, fit_kde
from .errors import BudgetExhausted
from .meta_model import BetaBernoulli, GaussianNiw, log_expected_lik, log_prior
from .sampler import McmcConfig, diagnostics, sample_joint, sir_refine
from .updater import PhiGrid, bernoulli_soft_curve, global_update

__all__ = [
    "PURPOSES",
    "child_seed",
    "child_rng",
    "example1_curves",
    "concentration_experiment",
    "logit_slope",
    "ma2_default_spec",
    "Ma2Result",
    "ma2_experiment",
    "TRUE_POPULATION_MEAN",
    "expected_log_lik_table",
    "MA2_MCMC",
]

PURPOSES = {
    "effects": 0,
    "series": 1,
    "abc": 2,
    "bootstrap": 3,
    "mcmc": 4,
    "sir": 5,
    "rema": 6,
    "fema": 7,
    "naive": 8,
    "concentration": 9,
}

TRUE_POPULATION_MEAN = np.array([0.6, 0.2])


def child_seed(master, purpose, *index):
    ss = np.random.SeedSequence(int(master), spawn_key=(PURPOSES[purpose],) + tuple(int(i) for i in index))
    return int(ss.generate_state(1, dtype=np.uint32)[0])


def child_rng(master, purpose, *index):
    ss = np.random.SeedSequence(int(master), spawn_key=(PURPOSES[purpose],) + tuple(int(i) for i in index))
    return np.random.default_rng(ss)


# --------------------------------------------------------------------------
# Soft binary beliefs
# --------------------------------------------------------------------------


def example1_curves(alpha=2.0, beta=2.0, J=10, probs=None, n_grid=2001):
    """Updated Beta-Bernoulli curves for J identical soft beliefs, one per p.

    Returns ``{p: (grid_pmf, closed_form_pmf)}``; the first comes from the
    generic grid update, the second from the soft-observation formula.
    """
    probs = np.round(np.arange(11) / 10, 10) if probs is None else np.asarray(probs, dtype=float)
    spec = BetaBernoulli(alpha, beta)
    grid = PhiGrid.bernoulli(n_grid)
    out = {}
    for p in probs:
        beliefs = [SoftBernoulli(float(p))] * int(J)
        generic = global_update(spec, beliefs, grid)
        closed = bernoulli_soft_curve(alpha, beta, [float(p)] * int(J), grid)
        out[float(p)] = (generic, closed)
    return out


# --------------------------------------------------------------------------
# Concentration on a discrete parameter set
# --------------------------------------------------------------------------


def _channel_beliefs(J, phi0, accuracy, rng):
    """Effects theta_j ~ Bernoulli(phi0) seen through a binary channel.

    The reported signal equals theta_j with probability ``accuracy`` and
    the belief is the channel posterior given the signal under a flat
    prior: SoftBernoulli(accuracy) for signal 1, SoftBernoulli(1 - accuracy)
    for signal 0.
    """
    theta = rng.random(J) < phi0
    flip = rng.random(J) >= accuracy
    signal = theta ^ flip
    return [SoftBernoulli(accuracy if s else 1.0 - accuracy) for s in signal], theta


def logit_slope(Js, log_q, log_rest):
    """Least-squares slope of logit Q*(phi0) against J."""
    x = np.asarray(Js, dtype=float)
    y = np.asarray(log_q) - np.asarray(log_rest)
    return float(np.polyfit(x, y, 1)[0])


def concentration_experiment(seeds=range(10), Js=(0, 1, 2, 5, 10, 20, 50, 100, 200, 500),
                             phi_values=(0.1, 0.3, 0.5, 0.7, 0.9), phi0=0.7, accuracy=0.8,
                             prior=(1.0, 1.0), master_seed=0):
    """Q*(phi0) as J grows, for each seed, by exact discrete computation.

    Beliefs for a seed are generated once for the largest J and the first
    J of them are used for each row, so rows within a seed are nested.
    """
    spec = BetaBernoulli(*prior)
    grid = PhiGrid.bernoulli_discrete(phi_values)
    i0 = int(np.flatnonzero(np.isclose(grid.points[:, 0], phi0))[0])
    rest = np.arange(len(grid)) != i0
    prior_log = np.asarray(log_prior(spec, grid.param), dtype=float) + grid.log_weights
    rows = []
    summary = {}
    for s in seeds:
        beliefs, _ = _channel_beliefs(max(Js), phi0, accuracy, child_rng(master_seed, "concentration", s))
        log_q, log_rest = [], []
        for J in Js:
            if J == 0:
                lp = prior_log - logsumexp(prior_log)
            else:
                lp = global_update(spec, beliefs[:J], grid).log_probs
            log_q.append(lp[i0])
            log_rest.append(logsumexp(lp[rest]))
            rows.append({"seed": int(s), "J": int(J), "q_phi0": float(np.exp(lp[i0]))})
        summary[int(s)] = {
            "q_phi0_final": float(np.exp(log_q[-1])),
            "logit_slope": logit_slope(Js, log_q, log_rest),
        }
    return rows, summary


# --------------------------------------------------------------------------
# MA(2) end to end
# --------------------------------------------------------------------------


def ma2_default_spec():
    return GaussianNiw(
        m=[0.5, 0.0],
        V=[[0.4, 0.05], [0.05, 0.1]],
        nu=4.0,
        Psi=[[0.4, 0.1], [0.1, 0.2]],
    )


@dataclass
class Ma2Result:
    effects: np.ndarray
    series: list
    abc: list
    true_beliefs: list
    approx_beliefs: list
    estimates: list
    mba_samples: object
    mba_weighted: object
    rema: object
    fema_draws: np.ndarray
    naive: object
    metrics: dict = field(default_factory=dict)


def _between(x, a, b, tol=0.0):
    lo, hi = np.minimum(a, b), np.maximum(a, b)
    return bool(np.all((x >= lo - tol) & (x <= hi + tol)))


MA2_MCMC = McmcConfig(n_warmup=4000, n_keep=4000, thin=2)


def ma2_experiment(seed=0, J=12, n=10, abc_cfg=None, mcmc_cfg=None, bootstrap_B=200, spec=None,
                   css_resolution=200) -> Ma2Result:
    """Effects, series, ABC posteriors, MBA and the three baselines for one seed.

    ``metrics["shrinkage"]`` flags studies whose updated mean is closer to
    the global mean than the ABC mean; ``componentwise_between`` is the
    stricter per-coordinate check.
    """
    abc_cfg = abc_cfg or AbcConfig()
    mcmc_cfg = mcmc_cfg or MA2_MCMC
    spec = spec or ma2_default_spec()

    effects = generate_effects(J, child_rng(seed, "effects"))
    simulator = make_ma2_simulator(n)
    series, abc, true_b, approx_b, estimates = [], [], [], [], []
    for j, theta in enumerate(effects):
        y = simulate_ma2(theta, n, child_rng(seed, "series", j))
        s0 = ma2_summaries(y)[0]
        meta = {
            "true_theta": theta.as_array().tolist(),
            "observed_summaries": s0.tolist(),
            "epsilon": abc_cfg.epsilon,
            "seed": child_seed(seed, "abc", j),
        }
        try:
            res = abc_rejection(s0, simulator, ma2_summaries, abc_cfg, child_rng(seed, "abc", j))
        except BudgetExhausted as exc:
            exc.result.meta.update(meta, acceptance_rate=exc.result.acceptance_rate,
                                   n_proposals=exc.result.n_proposals)
            raise BudgetExhausted(f"study {j + 1}: {exc}", exc.result, study=j + 1) from exc
        res.meta.update(meta, acceptance_rate=res.acceptance_rate, n_proposals=res.n_proposals)
        series.append(y)
        abc.append(res)
        true_b.append(fit_kde(res.samples))
        approx_b.append(fit_gaussian(res.samples))
        th_hat = css_estimate(y, css_resolution)
        cov = bootstrap_cov(th_hat, n, bootstrap_B, child_rng(seed, "bootstrap", j), css_resolution)
        estimates.append(StudyEstimate(th_hat.as_array(), cov))

    mba = sample_joint(spec, approx_b, replace(mcmc_cfg, seed=child_seed(seed, "mcmc")))
    weighted = sir_refine(mba, true_b, approx_b, seed=child_seed(seed, "sir"))
    rema = rema_fit(estimates, spec, replace(mcmc_cfg, seed=child_seed(seed, "rema")))
    fema, _ = fema_fit(estimates, spec.m, spec.V, replace(mcmc_cfg, seed=child_seed(seed, "fema")))
    abc_means = np.array([b.samples.values.mean(axis=0) for b in true_b])
    naive = naive_fit(abc_means, spec, replace(mcmc_cfg, seed=child_seed(seed, "naive")))

    eff = np.array([e.as_array() for e in effects])
    mu_post = {
        "mba": weighted.mu,
        "mba_unweighted": mba.flat("mu"),
        "rema": rema.flat("mu"),
        "fema": fema.reshape(-1, fema.shape[-1]),
        "naive": naive.flat("mu"),
    }
    mu_mean = {k: v.mean(axis=0) for k, v in mu_post.items()}
    mu_var = {k: v.var(axis=0, ddof=1) for k, v in mu_post.items()}
    updated_means = weighted.thetas.mean(axis=0)
    between = [_between(updated_means[j], abc_means[j], mu_mean["mba"]) for j in range(J)]
    closer = (np.linalg.norm(updated_means - mu_mean["mba"], axis=1)
              < np.linalg.norm(abc_means - mu_mean["mba"], axis=1))
    metrics = {
        "true_population_mean": TRUE_POPULATION_MEAN.tolist(),
        "mu_posterior_mean": {k: v.tolist() for k, v in mu_mean.items()},
        "mu_posterior_var": {k: v.tolist() for k, v in mu_var.items()},
        "mu_mean_error": {k: float(np.linalg.norm(v - TRUE_POPULATION_MEAN)) for k, v in mu_mean.items()},
        "local_mean_error_before": np.linalg.norm(abc_means - eff, axis=1).tolist(),
        "local_mean_error_after": np.linalg.norm(updated_means - eff, axis=1).tolist(),
        "abc_means": abc_means.tolist(),
        "updated_local_means": updated_means.tolist(),
        "shrinkage": closer.tolist(),
        "n_shrunk": int(closer.sum()),
        "componentwise_between": between,
        "n_componentwise_between": int(sum(between)),
        "fema_var_below_rema": bool(np.all(mu_var["fema"] < mu_var["rema"])),
        "naive_var_le_mba": bool(np.all(mu_var["naive"] <= mu_var["mba"])),
        "mba_error_le_naive": bool(
            np.linalg.norm(mu_mean["mba"] - TRUE_POPULATION_MEAN)
            <= np.linalg.norm(mu_mean["naive"] - TRUE_POPULATION_MEAN)
        ),
        "sir_ess": float(weighted.ess),
        "abc_acceptance_rate": [r.acceptance_rate for r in abc],
        "diagnostics": diagnostics(mba, weighted),
    }
    return Ma2Result(eff, series, abc, true_b, approx_b, estimates, mba, weighted, rema, fema, naive, metrics)


def expected_log_lik_table(phi_values=(0.1, 0.3, 0.5, 0.7, 0.9), phi0=0.7, accuracy=0.8):
    """Per-belief expected log contribution at each phi under the channel model.

    The maximiser is the value that the discrete posterior concentrates on.
    """
    spec = BetaBernoulli(1.0, 1.0)
    grid = PhiGrid.bernoulli_discrete(phi_values)
    hi = np.asarray(log_expected_lik(spec, grid.param, SoftBernoulli(accuracy)))
    lo = np.asarray(log_expected_lik(spec, grid.param, SoftBernoulli(1.0 - accuracy)))
    p_hi = phi0 * accuracy + (1.0 - phi0) * (1.0 - accuracy)
    return p_hi * hi + (1.0 - p_hi) * lo
