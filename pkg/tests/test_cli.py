import json
import os
import subprocess
import sys
from pathlib import Path

import numpy as np
import pytest
from scipy.special import logsumexp
from scipy.stats import beta as beta_dist

from mba.cli import main
from mba.io import read_csv, read_json

GOLDEN = Path(__file__).parent / "golden"
MEANS = [-1.0, 0.5, 1.2, 0.1, 2.0]
VARS = [0.3, 0.5, 0.2, 1.0, 0.4]
FAST_MCMC = ["--n-warmup", "300", "--n-keep", "200", "--n-chains", "2"]


@pytest.fixture
def work(tmp_path, monkeypatch):
    monkeypatch.chdir(tmp_path)
    monkeypatch.delenv("MBA_SEED", raising=False)
    (tmp_path / "spec.json").write_text(json.dumps(
        {"family": "gaussian_niw", "params": {"m": [0.0], "V": [[4.0]], "nu": 3.0, "Psi": [[1.0]]}}))
    (tmp_path / "bern.json").write_text(json.dumps({"family": "beta_bernoulli", "params": {"alpha": 2, "beta": 2}}))
    for j, (m, v) in enumerate(zip(MEANS, VARS), start=1):
        (tmp_path / f"b{j}.json").write_text(json.dumps({"kind": "gaussian", "mean": [m], "cov": [[v]]}))
    (tmp_path / "const.csv").write_text("theta_0\n" + "1\n" * 10)
    return tmp_path


def beliefs(n=5):
    return [f"b{j}.json" for j in range(1, n + 1)]


def run_error(capsys, argv):
    with pytest.raises(SystemExit) as info:
        main(argv)
    return info.value.code, capsys.readouterr().err


def golden(name):
    return (GOLDEN / name).read_text()


def files(path):
    return {p.name: p.read_bytes() for p in sorted(Path(path).iterdir())}


class TestErrors:
    @pytest.mark.parametrize("argv,code,name", [
        (["update-global", "--spec", "spec.json", "--beliefs", "b1.json"], 1, "missing_seed.txt"),
        (["update-global", "--seed", "1", "--spec", "spec.json", "--beliefs"], 1, "no_beliefs.txt"),
        (["update-local", "--seed", "1", "--spec", "spec.json", "--beliefs", "b1.json", "b2.json",
          "--j", "99", "--exact"], 1, "bad_study_index.txt"),
        (["abc-run", "--seed", "1", "--theta", "0.6", "0.2", "--n", "10", "--epsilon", "0",
          "--max-proposals", "1000", "--n-accept", "5", "--out", "o"], 3, "abc_budget.txt"),
        (["ma2-experiment", "--seed", "1", "--epsilon", "0", "--max-proposals", "1000", "--n-accept", "5",
          "--out", "o2"], 3, "ma2_budget.txt"),
        (["fit-belief", "--seed", "1", "--samples", "const.csv", "--kind", "kde", "--out", "k.json"], 2,
         "degenerate_samples.txt"),
        (["update-global", "--seed", "1", "--config", "nope.json"], 1, "missing_config.txt"),
    ])
    def test_golden_messages(self, work, capsys, argv, code, name):
        assert main(argv) == code
        assert capsys.readouterr().err == golden(name)

    def test_bad_env_seed(self, work, capsys, monkeypatch):
        monkeypatch.setenv("MBA_SEED", "abc")
        assert main(["update-global", "--spec", "spec.json", "--beliefs", "b1.json"]) == 1
        assert capsys.readouterr().err == golden("bad_env_seed.txt")

    def test_usage_errors_exit_one(self, work, capsys):
        code, err = run_error(capsys, ["frobnicate"])
        assert code == 1 and "mba: error: argument command: invalid choice" in err
        code, err = run_error(capsys, ["update-global", "--seed", "x"])
        assert code == 1 and err.endswith("mba: error: argument --seed: invalid int value: 'x'\n")

    def test_budget_writes_partial_study(self, work, capsys):
        main(["abc-run", "--seed", "1", "--theta", "0.6", "0.2", "--n", "10", "--epsilon", "0",
              "--max-proposals", "1000", "--n-accept", "5", "--out", "o"])
        meta = read_json(work / "o" / "study_1_meta.json")
        assert meta["n_proposals"] == 1000 and meta["acceptance_rate"] == 0.0

    def test_verbose_reports_progress(self, work, capsys):
        assert main(["abc-run", "-v", "--seed", "1", "--theta", "0.6", "0.2", "--n", "10", "--epsilon", "0.5",
                     "--n-accept", "20", "--out", "o"]) == 0
        assert "mba: abc: accepted 20 of 20 after" in capsys.readouterr().err

    def test_entry_point(self, work):
        env = {k: v for k, v in os.environ.items() if k != "MBA_SEED"}
        proc = subprocess.run([sys.executable, "-m", "mba.cli", "concentration", "--n-seeds", "1"],
                              capture_output=True, text=True, env=env, cwd=work)
        assert proc.returncode == 1
        assert proc.stderr == golden("missing_seed.txt")


class TestSeedPrecedence:
    def test_flag_config_env(self, work, monkeypatch):
        (work / "cfg.json").write_text(json.dumps({"seed": 7, "n_seeds": 1}))
        monkeypatch.setenv("MBA_SEED", "9")
        main(["concentration", "--config", "cfg.json", "--seed", "5", "--out", "a"])
        main(["concentration", "--config", "cfg.json", "--out", "b"])
        main(["concentration", "--n-seeds", "1", "--out", "c"])
        assert [read_json(work / d / "concentration.json")["master_seed"] for d in "abc"] == [5, 7, 9]

    def test_flags_override_config(self, work):
        (work / "cfg.json").write_text(json.dumps({"seed": 1, "spec": "spec.json", "beliefs": beliefs(2),
                                                   "mcmc": {"n_warmup": 200, "n_keep": 80, "n_chains": 1}}))
        main(["update-global", "--config", "cfg.json", "--n-keep", "50", "--out", "o"])
        _, rows = read_csv(work / "o" / "joint_draws.csv")
        assert rows.shape[0] == 50


class TestUpdateGlobal:
    def test_soft_sweep_curves(self, work):
        assert main(["update-global", "--seed", "0", "--spec", "bern.json", "--soft-sweep", "10", "--out", "s"]) == 0
        names = sorted(p.name for p in (work / "s").glob("curve_p*.csv"))
        assert names == [f"curve_p{k / 10:.1f}.csv" for k in range(11)]
        header, rows = read_csv(work / "s" / "curve_p1.0.csv")
        assert header == ["phi", "density"] and rows.shape == (2001, 2)
        x = rows[:, 0]
        w = np.full(2001, x[1] - x[0])
        w[[0, -1]] /= 2
        lm = beta_dist.logpdf(x, 12, 2) + np.log(w)
        oracle = np.exp(lm - logsumexp(lm)) / w
        np.testing.assert_allclose(rows[:, 1], oracle, rtol=1e-9, atol=1e-9)

    def test_exact_and_sampler_agree(self, work):
        cfg = {"grid": {"mu": [-5, 6, 600], "var": [1e-3, 30, 400]}}
        (work / "cfg.json").write_text(json.dumps(cfg))
        assert main(["update-global", "--seed", "2", "--config", "cfg.json", "--spec", "spec.json", "--exact",
                     "--beliefs", *beliefs(), "--out", "exact"]) == 0
        assert main(["update-global", "--seed", "2", "--spec", "spec.json", "--beliefs", *beliefs(),
                     "--n-warmup", "1000", "--n-keep", "2000", "--thin", "2", "--out", "mcmc"]) == 0
        header, grid = read_csv(work / "exact" / "global_posterior.csv")
        assert header == ["mu", "sigma0_sq", "density"]
        mu_axis = np.unique(grid[:, 0])
        dens = grid[:, 2].reshape(mu_axis.size, -1)
        var_axis = grid[: dens.shape[1], 1]
        marginal = np.trapezoid(dens, var_axis, axis=1)
        cdf = np.concatenate([[0.0], np.cumsum(0.5 * (marginal[1:] + marginal[:-1]) * np.diff(mu_axis))])
        cdf /= cdf[-1]
        h, draws = read_csv(work / "mcmc" / "global_draws.csv")
        x = np.sort(draws[:, h.index("mu_0")])
        ks = np.max(np.abs(np.interp(x, mu_axis, cdf) - np.arange(1, x.size + 1) / x.size))
        assert ks < 0.05
        diag = read_json(work / "mcmc" / "diagnostics.json")
        assert diag["mode"] == "sampler" and diag["rhat"]["mu_0"] < 1.05

    def test_sampler_outputs(self, work):
        main(["update-global", "--seed", "3", "--spec", "spec.json", "--beliefs", *beliefs(3), *FAST_MCMC,
              "--out", "o"])
        h, rows = read_csv(work / "o" / "joint_draws.csv")
        assert h == ["chain", "iter", "mu_0", "sigma0_00", "theta_1_0", "theta_2_0", "theta_3_0"]
        assert rows.shape == (400, 7)
        assert read_csv(work / "o" / "global_draws.csv")[1].shape == (400, 7)

    def test_sample_csv_beliefs(self, work):
        rng = np.random.default_rng(0)
        for j in (1, 2):
            (work / f"s{j}.csv").write_text("theta_0\n" + "\n".join(f"{v:.17g}" for v in rng.normal(j, 0.5, 300)))
        assert main(["update-global", "--seed", "4", "--spec", "spec.json", "--beliefs", "s1.csv", "s2.csv",
                     *FAST_MCMC, "--out", "o"]) == 0
        assert "ess" in read_json(work / "o" / "diagnostics.json")


class TestUpdateLocal:
    def test_exact_single_study(self, work):
        assert main(["update-local", "--seed", "0", "--spec", "spec.json", "--beliefs", "b2.json", "--j", "1",
                     "--exact", "--out", "o"]) == 0
        h, rows = read_csv(work / "o" / "local_posterior_1.csv")
        assert h == ["theta_0", "density"]
        assert np.trapezoid(rows[:, 1], rows[:, 0]) == pytest.approx(1.0, abs=1e-9)

    def test_sampler_draws(self, work):
        assert main(["update-local", "--seed", "0", "--spec", "spec.json", "--beliefs", *beliefs(3), "--j", "2",
                     *FAST_MCMC, "--out", "o"]) == 0
        h, rows = read_csv(work / "o" / "local_draws_2.csv")
        assert h == ["theta_0"] and rows.shape == (400, 1)


class TestOtherCommands:
    def test_concentration_outputs(self, work):
        assert main(["concentration", "--seed", "0", "--out", "o"]) == 0
        h, rows = read_csv(work / "o" / "concentration.csv")
        assert h == ["seed", "J", "q_phi0"] and rows.shape == (100, 3)
        summary = read_json(work / "o" / "concentration.json")
        assert len(summary["per_seed"]) == 10 and summary["n_above_0.99"] >= 9

    def test_abc_run_outputs(self, work):
        assert main(["abc-run", "--seed", "0", "--theta", "0.6", "0.2", "--n", "10", "--epsilon", "0.3",
                     "--n-accept", "100", "--study", "4", "--out", "o"]) == 0
        h, rows = read_csv(work / "o" / "study_4_posterior.csv")
        assert h == ["theta_0", "theta_1"] and rows.shape == (100, 2)
        meta = read_json(work / "o" / "study_4_meta.json")
        assert meta["epsilon"] == 0.3 and meta["true_theta"] == [0.6, 0.2]

    def test_fit_belief_round_trip(self, work):
        (work / "s.csv").write_text("theta_0,theta_1\n" + "\n".join(
            f"{a:.17g},{b:.17g}" for a, b in np.random.default_rng(1).normal(size=(50, 2))))
        assert main(["fit-belief", "--seed", "0", "--samples", "s.csv", "--kind", "gaussian", "--out", "g.json"]) == 0
        g = read_json(work / "g.json")
        assert g["kind"] == "gaussian" and len(g["mean"]) == 2
        assert main(["fit-belief", "--seed", "0", "--samples", "s.csv", "--kind", "kde", "--bandwidth", "0.2",
                     "0.3", "--out", "k.json"]) == 0
        assert read_json(work / "k.json")["bandwidth"] == [0.2, 0.3]


class TestDeterminism:
    @pytest.mark.parametrize("argv", [
        ["concentration", "--n-seeds", "3"],
        ["abc-run", "--theta", "0.5", "0.1", "--n", "10", "--epsilon", "0.3", "--n-accept", "50"],
        ["update-global", "--spec", "spec.json", "--beliefs", "b1.json", "b2.json", *FAST_MCMC],
        ["update-global", "--spec", "spec.json", "--beliefs", "b1.json", "b2.json", "--exact"],
        ["ma2-experiment", "--J", "2", "--epsilon", "0.3", "--n-accept", "50", "--bootstrap-B", "8", *FAST_MCMC],
    ])
    def test_repeat_runs_are_byte_identical(self, work, argv):
        assert main([*argv, "--seed", "11", "--out", "first"]) == 0
        assert main([*argv, "--seed", "11", "--out", "second"]) == 0
        a, b = files(work / "first"), files(work / "second")
        assert a.keys() == b.keys() and a == b

    def test_ma2_outputs(self, work):
        main(["ma2-experiment", "--seed", "1", "--J", "2", "--epsilon", "0.3", "--n-accept", "50",
              "--bootstrap-B", "8", *FAST_MCMC, "--out", "o"])
        expected = {"study_1_posterior.csv", "study_1_meta.json", "study_1_series.csv", "study_2_posterior.csv",
                    "estimates.json", "effects.json", "mba_joint_draws.csv", "mba_draws.csv", "rema_draws.csv",
                    "naive_draws.csv", "fema_draws.csv", "diagnostics.json", "metrics.json"}
        assert expected <= set(files(work / "o"))
        metrics = read_json(work / "o" / "metrics.json")
        assert set(metrics["mu_mean_error"]) >= {"mba", "naive", "rema", "fema"}
