import csv
import json
import os

import numpy as np
import pytest

from comorbid_hmm import cli
from comorbid_hmm.errors import InitializationError
from comorbid_hmm.model import Parameters

TINY = ["--chains", "2", "--warmup", "40", "--samples", "30", "--quiet"]


def run(*argv):
    return cli.main([str(a) for a in argv])


def read_csv(path):
    with open(path, newline="", encoding="utf-8") as fh:
        return list(csv.reader(fh))


@pytest.fixture(scope="module")
def pipeline(tmp_path_factory):
    """simulate -> fit on a tiny budget; shared by the read-only subcommand tests."""
    out = tmp_path_factory.mktemp("run")
    assert run("simulate", "--out", out, "--seed", 3, "--n-patients", 25) == 0
    assert run("fit", "--out", out, "--seed", 3, *TINY) == 0
    return out


class TestSimulate:
    def test_outputs(self, tmp_path):
        assert run("simulate", "--out", tmp_path, "--n-patients", 12) == 0
        rows = read_csv(tmp_path / "panel.csv")
        sim = json.loads((tmp_path / "simulation.json").read_text())
        truth = Parameters.from_json(tmp_path / "truth.json")
        assert truth.n_covariates == len(sim["model_covariates"])
        ids = {r[0] for r in rows[1:]}
        assert len(ids) == 12
        assert not (tmp_path / ".lock").exists()

    def test_deterministic(self, tmp_path):
        for d in ("a", "b"):
            assert run("simulate", "--out", tmp_path / d, "--seed", 9, "--n-patients", 10) == 0
        for name in ("panel.csv", "truth.json", "simulation.json"):
            assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()

    def test_output_root_env(self, tmp_path, monkeypatch):
        monkeypatch.setenv(cli.OUTPUT_ROOT_ENV, str(tmp_path))
        assert run("simulate", "--out", "sub", "--n-patients", 5) == 0
        assert (tmp_path / "sub" / "panel.csv").exists()


class TestConfig:
    def test_precedence(self, tmp_path):
        cfg = tmp_path / "run.json"
        cfg.write_text(json.dumps({"seed": 5, "sampler": {"n_chains": 3, "n_warmup": 10}}))
        args = cli.build_parser().parse_args(["fit", "--config", str(cfg), "--chains", "2"])
        resolved = cli.resolve_config(args)
        assert resolved["sampler"]["n_chains"] == 2  # flag
        assert resolved["sampler"]["n_warmup"] == 10  # config
        assert resolved["sampler"]["n_sampling"] == 1500  # default
        assert resolved["seed"] == 5

    def test_unknown_field_names_path(self, tmp_path, capsys):
        cfg = tmp_path / "run.json"
        cfg.write_text(json.dumps({"sampler": {"n_chain": 3}}))
        assert run("fit", "--config", cfg, "--out", tmp_path) == 2
        assert "sampler.n_chain" in capsys.readouterr().err

    def test_usage_errors(self, tmp_path):
        assert run("frobnicate") == 2
        assert run("fit", "--chains", "many") == 2
        assert run("fit", "--out", tmp_path / "empty") == 2  # no data

    def test_bad_sampler_value(self, tmp_path):
        run("simulate", "--out", tmp_path, "--n-patients", 5)
        assert run("fit", "--out", tmp_path, "--target-accept", "1.5", "--quiet") == 2


class TestExitCodes:
    def test_missing_covariate_before_sampling(self, tmp_path, monkeypatch, capsys):
        run("simulate", "--out", tmp_path, "--n-patients", 5)
        called = []
        monkeypatch.setattr(cli, "fit_model", lambda *a, **k: called.append(1))
        assert run("fit", "--out", tmp_path, "--covariates", "age,bmi", "--quiet") == 2
        assert not called
        assert "bmi" in capsys.readouterr().err

    def test_data_error(self, tmp_path):
        bad = tmp_path / "bad.csv"
        bad.write_text("patient_id,t,y_a,y_b\nP1,1,1.0,2.0\nP1,1,1.0,2.0\n")
        assert run("fit", "--out", tmp_path, "--data", bad, "--quiet") == 3

    def test_numeric_failure(self, tmp_path, monkeypatch):
        run("simulate", "--out", tmp_path, "--n-patients", 5)

        def boom(*a, **k):
            raise InitializationError("no finite start")

        monkeypatch.setattr(cli, "fit_model", boom)
        assert run("fit", "--out", tmp_path, "--quiet") == 4

    def test_strict_non_convergence(self, tmp_path):
        run("simulate", "--out", tmp_path, "--n-patients", 10)
        args = ["fit", "--out", tmp_path, "--chains", 2, "--warmup", 0, "--samples", 2, "--quiet"]
        assert run(*args) == 0
        man = json.loads((tmp_path / "fit" / "manifest.json").read_text())
        assert man["converged"] is False
        assert run(*args, "--strict") == 5


class TestLock:
    def test_held_lock_refuses(self, tmp_path, capsys):
        (tmp_path / ".lock").write_text(str(os.getpid()))
        assert run("simulate", "--out", tmp_path, "--n-patients", 5) == 2
        assert "locked" in capsys.readouterr().err
        assert (tmp_path / ".lock").exists()

    def test_stale_lock_taken_over(self, tmp_path):
        (tmp_path / ".lock").write_text("999999999")
        assert run("simulate", "--out", tmp_path, "--n-patients", 5) == 0
        assert not (tmp_path / ".lock").exists()


class TestPipeline:
    def test_fit_artifacts(self, pipeline):
        fit = pipeline / "fit"
        for name in ("draws.csv", "draws_unconstrained.csv", "sampler_stats.csv", "diagnostics.csv",
                     "manifest.json"):
            assert (fit / name).exists()
        man = json.loads((fit / "manifest.json").read_text())
        assert man["seed"] == 3 and len(man["config_hash"]) == 64
        assert "--warmup" in man["command_line"]
        assert man["data"]["covariates"] == ["age", "time", "treatment_centered", "treatment_centered_lag1"]
        assert (fit / "trace" / "mu_a_1.csv").exists()
        assert read_csv(fit / "diagnostics.csv")[0] == ["parameter", "rhat", "ess_bulk"]

    def test_diagnose(self, pipeline):
        assert run("diagnose", "--out", pipeline) == 0
        summary = json.loads((pipeline / "diagnose" / "summary.json").read_text())
        assert {"converged", "max_rhat", "divergences"} <= set(summary)

    def test_decode_states(self, pipeline):
        assert run("decode", "--out", pipeline) == 0
        rows = read_csv(pipeline / "decode.csv")
        assert rows[0] == ["patient_id", "t", "state_a", "state_b", "global"]
        n_panel = len(read_csv(pipeline / "panel.csv")) - 1
        assert len(rows) - 1 == n_panel
        for r in rows[1:]:
            a, b, g = int(r[2]), int(r[3]), int(r[4])
            assert a in (1, 2) and b in (1, 2) and g == 2 * (a - 1) + b

    def test_ppc_deterministic(self, pipeline):
        assert run("ppc", "--out", pipeline, "--n-rep", 20) == 0
        first = (pipeline / "ppc" / "intervals.csv").read_bytes()
        assert run("ppc", "--out", pipeline, "--n-rep", 20) == 0
        assert (pipeline / "ppc" / "intervals.csv").read_bytes() == first
        cov = json.loads((pipeline / "ppc" / "coverage.json").read_text())
        assert set(cov) == {"a", "b", "all"}

    def test_spillover(self, pipeline):
        assert run("spillover", "--out", pipeline) == 0
        rows = read_csv(pipeline / "spillover.csv")
        assert rows[0] == ["quantity", "5%", "25%", "50%", "75%", "95%"]
        assert [r[0] for r in rows[1:]] == ["xi_z", "xi_zprime", "difference", "quotient"]
        assert len(read_csv(pipeline / "transitions.csv")) == 1 + 16

    def test_manifest_mismatch_refused(self, pipeline, capsys):
        assert run("decode", "--out", pipeline, "--n-a", 3) == 2
        err = capsys.readouterr().err
        assert "model.n_a/n_b" in err
        assert run("decode", "--out", pipeline, "--covariates", "age,time") == 2
        assert "model.covariates" in capsys.readouterr().err

    def test_fit_deterministic(self, pipeline, tmp_path):
        for name in ("panel.csv", "simulation.json"):
            (tmp_path / name).write_bytes((pipeline / name).read_bytes())
        assert run("fit", "--out", tmp_path, "--seed", 3, *TINY) == 0
        assert ((tmp_path / "fit" / "draws.csv").read_bytes()
                == (pipeline / "fit" / "draws.csv").read_bytes())


class TestCompare:
    @pytest.mark.filterwarnings("ignore:only 4 draws:RuntimeWarning")
    def test_dagger_for_under_budgeted_fit(self, tmp_path):
        run("simulate", "--out", tmp_path, "--n-patients", 10)
        assert run("compare", "--out", tmp_path, "--chains", 2, "--warmup", 0, "--samples", 2,
                   "--variants", "2x2,1x2", "--quiet") == 0
        text = (tmp_path / "compare" / "compare.txt").read_text()
        assert "†" in text
        rows = read_csv(tmp_path / "compare" / "compare.csv")
        assert [r[0] for r in rows[1:]] == ["coupled", "simplified_A"]

    def test_rejects_single_state_variant(self, tmp_path):
        run("simulate", "--out", tmp_path, "--n-patients", 5)
        assert run("compare", "--out", tmp_path, "--variants", "1x1", "--quiet") == 3
