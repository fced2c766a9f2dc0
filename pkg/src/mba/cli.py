"""``mba`` command-line interface.

Each subcommand reads an optional JSON config; command-line flags take
precedence over config fields. The master seed comes from ``--seed``,
then the config's ``seed`` field, then the ``MBA_SEED`` environment
variable. Exit codes: 1 for input errors, 2 for numeric failures, 3 when
an ABC proposal budget runs out.
"""
from __future__ import annotations

import argparse
import logging
import os
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import io as mio
from .abc_ma2 import AbcConfig, Ma2Params, abc_rejection, ma2_summaries, make_ma2_simulator, simulate_ma2
from .belief import Dirac, FixedBandwidth, Gaussian, GridPmf, Kde, SoftBernoulli, fit_gaussian, fit_kde
from .errors import (
    BudgetExhausted,
    IndexOutOfRange,
    InputError,
    MbaError,
    NumericError,
    UnsupportedBelief,
    UnsupportedSpec,
)
from .experiments import MA2_MCMC, child_rng, child_seed, concentration_experiment, ma2_experiment
from .meta_model import BetaBernoulli, DrawCache, GaussianNiw, McBudget, spec_from_dict
from .sampler import McmcConfig, diagnostics, sample_joint, sir_refine
from .updater import Grid, PhiGrid, global_update, local_update

EXIT_INPUT, EXIT_NUMERIC, EXIT_BUDGET = 1, 2, 3


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_INPUT, f"mba: error: {message}\n")


# --------------------------------------------------------------------------
# Config plumbing
# --------------------------------------------------------------------------


def _load_config(args):
    if args.config is None:
        return {}
    p = Path(args.config)
    if not p.exists():
        raise InputError(f"config file not found: {args.config}")
    cfg = mio.read_json(p)
    if not isinstance(cfg, dict):
        raise InputError("config must be a JSON object")
    return cfg


def _pick(args, cfg, name, default=None):
    v = getattr(args, name, None)
    if v is not None:
        return v
    return cfg.get(name, default)


def _seed(args, cfg):
    if args.seed is not None:
        return int(args.seed)
    if "seed" in cfg:
        return int(cfg["seed"])
    env = os.environ.get("MBA_SEED")
    if env is not None:
        try:
            return int(env)
        except ValueError as exc:
            raise InputError(f"MBA_SEED must be an integer, got {env!r}") from exc
    raise InputError("a master seed is required: pass --seed, set 'seed' in the config, or set MBA_SEED")


def _spec(args, cfg):
    raw = _pick(args, cfg, "spec")
    if raw is None:
        raise InputError("a model spec is required (--spec or 'spec' in the config)")
    if isinstance(raw, str):
        if not Path(raw).exists():
            raise InputError(f"spec file not found: {raw}")
        raw = mio.read_json(raw)
    return spec_from_dict(raw)


def _mcmc(args, cfg, default=None):
    base = dict((cfg.get("mcmc") or {}))
    for flag in ("n_warmup", "n_keep", "n_chains", "thin"):
        v = getattr(args, flag, None)
        if v is not None:
            base[flag] = v
    start = default or McmcConfig()
    try:
        return replace(start, **base)
    except TypeError as exc:
        raise InputError(f"bad mcmc config: {exc}") from exc


def _abc(args, cfg):
    base = dict((cfg.get("abc") or {}))
    for flag in ("epsilon", "n_accept", "max_proposals"):
        v = getattr(args, flag, None)
        if v is not None:
            base[flag] = v
    if "summary_weights" in base and base["summary_weights"] is not None:
        base["summary_weights"] = tuple(base["summary_weights"])
    try:
        return AbcConfig(**base)
    except TypeError as exc:
        raise InputError(f"bad abc config: {exc}") from exc


def _out_dir(args, cfg):
    out = Path(_pick(args, cfg, "out", "."))
    out.mkdir(parents=True, exist_ok=True)
    return out


def _beliefs(args, cfg):
    paths = _pick(args, cfg, "beliefs") or []
    if not paths:
        raise InputError("no belief inputs given")
    pairs = [mio.load_belief(p) for p in paths]
    return [p[0] for p in pairs], [p[1] for p in pairs]


def _centre_scale(beliefs):
    centres, scales = [], []
    for b in beliefs:
        if isinstance(b, Kde):
            v = b.samples.values[:, 0]
            centres.append(v.mean())
            scales.append(v.std())
        elif isinstance(b, Gaussian):
            centres.append(b.mean[0])
            scales.append(np.sqrt(b.cov[0, 0]))
        elif isinstance(b, Dirac):
            centres.append(b.point[0])
            scales.append(0.0)
        elif isinstance(b, GridPmf):
            m = b.mean()[0]
            centres.append(m)
            scales.append(np.sqrt(b.probs @ (b.support[:, 0] - m) ** 2))
        else:
            raise UnsupportedBelief(f"cannot place a grid for {type(b).__name__}")
    c = np.array(centres)
    R = max(float(np.ptp(c)), float(max(scales)), 1e-3)
    return c, R


def _axis(spec3, lo, hi, n):
    if spec3 is not None:
        lo, hi, n = spec3
    return np.linspace(float(lo), float(hi), int(n))


def _phi_grid(spec, beliefs, cfg):
    g = cfg.get("grid") or {}
    if isinstance(spec, BetaBernoulli):
        return PhiGrid.bernoulli(int(g.get("n", 2001)))
    if isinstance(spec, GaussianNiw) and spec.dim == 1:
        c, R = _centre_scale(beliefs)
        mu = _axis(g.get("mu"), c.min() - 3 * R, c.max() + 3 * R, 401)
        var = _axis(g.get("var"), R * R / 1000.0, 9.0 * R * R, 400)
        return PhiGrid.gaussian_1d(mu, var)
    raise UnsupportedSpec("exact mode needs a Bernoulli or a one-dimensional Gaussian NIW model")


def _theta_grid(spec, beliefs, cfg):
    if isinstance(spec, BetaBernoulli):
        return Grid.binary()
    c, R = _centre_scale(beliefs)
    t = cfg.get("theta_grid")
    lo, hi, n = t if t is not None else (c.min() - 4 * R, c.max() + 4 * R, 801)
    return Grid.uniform(lo, hi, n)


def _budget(cfg):
    return McBudget(int((cfg.get("budget") or {}).get("n_draws", 1000)))


def _approx_for_sampler(true_b, approx_b):
    out = []
    for t, a in zip(true_b, approx_b):
        if a is not None:
            out.append(a)
        elif isinstance(t, Kde):
            out.append(fit_gaussian(t.samples))
        else:
            raise UnsupportedBelief(
                f"the sampler path needs sample or Gaussian beliefs, got {type(t).__name__}"
            )
    return out


def _run_joint(spec, true_b, approx_b, args, cfg, seed):
    approx = _approx_for_sampler(true_b, approx_b)
    mcmc = _mcmc(args, cfg)
    samples = sample_joint(spec, approx, replace(mcmc, seed=child_seed(seed, "mcmc")))
    weighted = sir_refine(samples, true_b, approx, seed=child_seed(seed, "sir"))
    return samples, weighted


# --------------------------------------------------------------------------
# Subcommands
# --------------------------------------------------------------------------


def cmd_update_global(args):
    cfg = _load_config(args)
    seed = _seed(args, cfg)
    spec = _spec(args, cfg)
    out = _out_dir(args, cfg)
    sweep = _pick(args, cfg, "soft_sweep")
    if sweep is not None:
        if not isinstance(spec, BetaBernoulli):
            raise UnsupportedSpec("--soft-sweep needs a beta_bernoulli model")
        grid = _phi_grid(spec, [], cfg)
        for k in range(11):
            p = k / 10
            pmf = global_update(spec, [SoftBernoulli(p)] * int(sweep), grid)
            mio.write_grid_pmf(out / f"curve_p{p:.1f}.csv", pmf, grid.coord_names)
        mio.write_json(out / "sweep.json", {"J": int(sweep), "p": [k / 10 for k in range(11)],
                                           "grid_points": len(grid), "seed": seed})
        return 0
    true_b, approx_b = _beliefs(args, cfg)
    if _pick(args, cfg, "exact", False):
        grid = _phi_grid(spec, true_b, cfg)
        pmf = global_update(spec, true_b, grid, _budget(cfg), np.random.default_rng(seed), cache=DrawCache())
        mio.write_grid_pmf(out / "global_posterior.csv", pmf, grid.coord_names)
        mio.write_json(out / "diagnostics.json", {"mode": "exact", "grid_points": len(grid),
                                                  "n_beliefs": len(true_b), "seed": seed})
        return 0
    samples, weighted = _run_joint(spec, true_b, approx_b, args, cfg, seed)
    mio.write_draws(out / "joint_draws.csv", samples)
    mio.write_draws(out / "global_draws.csv", samples, weighted.indices)
    diag = diagnostics(samples, weighted)
    diag.update({"mode": "sampler", "seed": seed})
    mio.write_json(out / "diagnostics.json", diag)
    return 0


def cmd_update_local(args):
    cfg = _load_config(args)
    seed = _seed(args, cfg)
    spec = _spec(args, cfg)
    out = _out_dir(args, cfg)
    true_b, approx_b = _beliefs(args, cfg)
    j = int(_pick(args, cfg, "j"))
    J = len(true_b)
    if not 1 <= j <= J:
        raise IndexOutOfRange(f"study index {j} out of range 1..{J}")
    if _pick(args, cfg, "exact", False):
        phi_grid = _phi_grid(spec, true_b, cfg)
        theta_grid = _theta_grid(spec, true_b, cfg)
        pmf = local_update(spec, true_b, j - 1, theta_grid, phi_grid, _budget(cfg),
                           np.random.default_rng(seed), DrawCache())
        mio.write_grid_pmf(out / f"local_posterior_{j}.csv", pmf, ["theta_0"])
        mio.write_json(out / "diagnostics.json", {"mode": "exact", "j": j, "grid_points": len(theta_grid),
                                                  "seed": seed})
        return 0
    samples, weighted = _run_joint(spec, true_b, approx_b, args, cfg, seed)
    mio.write_samples(out / f"local_draws_{j}.csv", weighted.thetas[:, j - 1])
    diag = diagnostics(samples, weighted)
    diag.update({"mode": "sampler", "j": j, "seed": seed})
    mio.write_json(out / "diagnostics.json", diag)
    return 0


def _write_study(out, j, result):
    if result.samples is not None:
        mio.write_samples(out / f"study_{j}_posterior.csv", result.samples)
    meta = dict(result.meta)
    meta.update({"n_accepted": result.n_accepted, "n_proposals": result.n_proposals,
                 "acceptance_rate": result.acceptance_rate, "exhausted": result.exhausted})
    mio.write_json(out / f"study_{j}_meta.json", meta)


def cmd_ma2_experiment(args):
    cfg = _load_config(args)
    seed = _seed(args, cfg)
    out = _out_dir(args, cfg)
    abc_cfg = _abc(args, cfg)
    mcmc = _mcmc(args, cfg, MA2_MCMC)
    J = int(_pick(args, cfg, "J", 12))
    n = int(_pick(args, cfg, "n", 10))
    B = int(_pick(args, cfg, "bootstrap_B", 200))
    spec = _spec(args, cfg) if _pick(args, cfg, "spec") is not None else None
    try:
        res = ma2_experiment(seed, J, n, abc_cfg, mcmc, B, spec)
    except BudgetExhausted as exc:
        if exc.result is not None:
            _write_study(out, exc.study, exc.result)
        raise
    for j, r in enumerate(res.abc, start=1):
        _write_study(out, j, r)
        mio.write_csv(out / f"study_{j}_series.csv", ["y"], res.series[j - 1][:, None])
    mio.write_json(out / "estimates.json", [{"theta_hat": e.theta_hat, "sigma_hat": e.sigma_hat}
                                            for e in res.estimates])
    mio.write_json(out / "effects.json", {"theta": res.effects, "population_mean": [0.6, 0.2]})
    mio.write_draws(out / "mba_joint_draws.csv", res.mba_samples)
    mio.write_draws(out / "mba_draws.csv", res.mba_samples, res.mba_weighted.indices)
    mio.write_draws(out / "rema_draws.csv", res.rema)
    mio.write_draws(out / "naive_draws.csv", res.naive)
    C, N, d = res.fema_draws.shape
    chain, it = np.divmod(np.arange(C * N), N)
    mio.write_csv(out / "fema_draws.csv", ["chain", "iter"] + [f"mu_{k}" for k in range(d)],
                  np.column_stack([chain, it, res.fema_draws.reshape(-1, d)]))
    metrics = dict(res.metrics)
    mio.write_json(out / "diagnostics.json", metrics.pop("diagnostics"))
    metrics["seed"] = seed
    mio.write_json(out / "metrics.json", metrics)
    return 0


def cmd_concentration(args):
    cfg = _load_config(args)
    seed = _seed(args, cfg)
    out = _out_dir(args, cfg)
    n_seeds = int(_pick(args, cfg, "n_seeds", 10))
    rows, summary = concentration_experiment(seeds=range(n_seeds), master_seed=seed)
    mio.write_csv(out / "concentration.csv", ["seed", "J", "q_phi0"],
                  [[r["seed"], r["J"], r["q_phi0"]] for r in rows])
    payload = {
        "master_seed": seed,
        "phi0": 0.7,
        "phi_values": [0.1, 0.3, 0.5, 0.7, 0.9],
        "per_seed": {str(k): v for k, v in summary.items()},
        "n_above_0.99": int(sum(v["q_phi0_final"] > 0.99 for v in summary.values())),
    }
    mio.write_json(out / "concentration.json", payload)
    return 0


def cmd_abc_run(args):
    cfg = _load_config(args)
    seed = _seed(args, cfg)
    out = _out_dir(args, cfg)
    abc_cfg = _abc(args, cfg)
    j = int(_pick(args, cfg, "study", 1))
    if j < 1:
        raise IndexOutOfRange("study index must be at least 1")
    series_path = _pick(args, cfg, "series")
    theta = _pick(args, cfg, "theta")
    meta = {}
    if series_path is not None:
        header, data = mio.read_csv(series_path)
        y = data[:, 0]
    elif theta is not None:
        th = Ma2Params(*map(float, theta))
        y = simulate_ma2(th, int(_pick(args, cfg, "n", 10)), child_rng(seed, "series", j - 1))
        meta["true_theta"] = th.as_array().tolist()
    else:
        raise InputError("abc-run needs --series or --theta")
    s0 = ma2_summaries(y)[0]
    meta.update({"observed_summaries": s0.tolist(), "epsilon": abc_cfg.epsilon,
                 "seed": child_seed(seed, "abc", j - 1)})
    try:
        res = abc_rejection(s0, make_ma2_simulator(y.size), ma2_summaries, abc_cfg,
                            child_rng(seed, "abc", j - 1))
    except BudgetExhausted as exc:
        if exc.result is not None:
            exc.result.meta.update(meta)
            _write_study(out, j, exc.result)
        raise
    res.meta.update(meta)
    _write_study(out, j, res)
    return 0


def cmd_fit_belief(args):
    cfg = _load_config(args)
    samples_path = _pick(args, cfg, "samples")
    if samples_path is None:
        raise InputError("fit-belief needs --samples")
    if not Path(samples_path).exists():
        raise InputError(f"input file not found: {samples_path}")
    s = mio.read_samples(samples_path)
    kind = _pick(args, cfg, "kind", "gaussian")
    if kind == "gaussian":
        b = fit_gaussian(s)
    elif kind == "kde":
        h = _pick(args, cfg, "bandwidth")
        b = fit_kde(s, FixedBandwidth(h) if h is not None else None)
    else:
        raise InputError(f"unknown belief kind {kind!r}")
    target = Path(_pick(args, cfg, "out", "belief.json"))
    target.parent.mkdir(parents=True, exist_ok=True)
    mio.write_json(target, mio.belief_to_dict(b))
    return 0


# --------------------------------------------------------------------------
# Entry point
# --------------------------------------------------------------------------


def build_parser():
    p = _Parser(prog="mba", description="Meta-analysis of study posteriors.")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(sp, out=True):
        sp.add_argument("--config", help="JSON config file")
        sp.add_argument("--seed", type=int, help="master seed")
        sp.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
        if out:
            sp.add_argument("--out", help="output directory")

    def mcmc_flags(sp):
        sp.add_argument("--n-warmup", dest="n_warmup", type=int)
        sp.add_argument("--n-keep", dest="n_keep", type=int)
        sp.add_argument("--n-chains", dest="n_chains", type=int)
        sp.add_argument("--thin", type=int)

    def abc_flags(sp):
        sp.add_argument("--epsilon", type=float)
        sp.add_argument("--n-accept", dest="n_accept", type=int)
        sp.add_argument("--max-proposals", dest="max_proposals", type=int)

    def belief_flags(sp):
        sp.add_argument("--spec", help="model spec JSON file")
        sp.add_argument("--beliefs", nargs="*", help="posterior sample CSVs or belief JSONs")
        sp.add_argument("--exact", action="store_true", default=None, help="use the grid updater")
        mcmc_flags(sp)

    g = sub.add_parser("update-global", help="posterior over the global parameter")
    common(g)
    belief_flags(g)
    g.add_argument("--soft-sweep", dest="soft_sweep", type=int, metavar="J",
                   help="curves for J soft binary beliefs at p = 0.0, 0.1, ..., 1.0")
    g.set_defaults(func=cmd_update_global)

    lo = sub.add_parser("update-local", help="updated belief for one study")
    common(lo)
    belief_flags(lo)
    lo.add_argument("--j", type=int, help="1-based study index")
    lo.set_defaults(func=cmd_update_local)

    m = sub.add_parser("ma2-experiment", help="MA(2) simulation study end to end")
    common(m)
    abc_flags(m)
    mcmc_flags(m)
    m.add_argument("--spec", help="model spec JSON file")
    m.add_argument("--J", type=int)
    m.add_argument("--n", type=int, help="series length")
    m.add_argument("--bootstrap-B", dest="bootstrap_B", type=int)
    m.set_defaults(func=cmd_ma2_experiment)

    c = sub.add_parser("concentration", help="Q*(phi0) against J on a discrete parameter set")
    common(c)
    c.add_argument("--n-seeds", dest="n_seeds", type=int)
    c.set_defaults(func=cmd_concentration)

    a = sub.add_parser("abc-run", help="rejection ABC for one MA(2) series")
    common(a)
    abc_flags(a)
    a.add_argument("--series", help="CSV with a single column of observations")
    a.add_argument("--theta", nargs=2, type=float, help="simulate the series at these values")
    a.add_argument("--n", type=int, help="series length when simulating")
    a.add_argument("--study", type=int, help="1-based study index used in file names and seeds")
    a.set_defaults(func=cmd_abc_run)

    f = sub.add_parser("fit-belief", help="fit a Gaussian or KDE belief to posterior samples")
    common(f)
    f.add_argument("--samples", help="SampleSet CSV")
    f.add_argument("--kind", choices=["gaussian", "kde"])
    f.add_argument("--bandwidth", type=float, nargs="+", help="fixed KDE bandwidth per dimension")
    f.set_defaults(func=cmd_fit_belief)
    return p


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logger = logging.getLogger("mba")
    handler = None
    if args.verbose:
        handler = logging.StreamHandler(sys.stderr)
        handler.setFormatter(logging.Formatter("mba: %(message)s"))
        logger.addHandler(handler)
        logger.setLevel(logging.INFO)
    try:
        return args.func(args)
    except BudgetExhausted as exc:
        print(f"mba: budget exhausted: {exc}", file=sys.stderr)
        return EXIT_BUDGET
    except NumericError as exc:
        print(f"mba: numeric error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (MbaError, OSError) as exc:
        print(f"mba: error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    finally:
        if handler is not None:
            logger.removeHandler(handler)
            logger.setLevel(logging.NOTSET)


if __name__ == "__main__":
    sys.exit(main())
