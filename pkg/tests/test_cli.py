"""End-to-end command-line coverage, driven in process through main()."""

import json
import os

import numpy as np
import pytest

import ss3.cli as cli
from ss3.cli import main
from ss3.matio import load_matrix, read_json, write_json


@pytest.fixture(scope="module")
def denoise_dir(tmp_path_factory):
    """Noiseless rank-2 replicate data: every estimate is exact."""
    d = str(tmp_path_factory.mktemp("data") / "denoise")
    rc = main([
        "generate", "--model", "denoise", "--dims", "8", "8",
        "--spectrum", "2.0", "1.0", "--n", "8", "--sigma", "0.0",
        "--seed", "5", "--out", d,
    ])
    assert rc == 0
    return d


@pytest.fixture(scope="module")
def completion_dir(tmp_path_factory):
    d = str(tmp_path_factory.mktemp("data") / "completion")
    rc = main([
        "generate", "--model", "completion", "--dims", "10", "8",
        "--spectrum", "2.0", "1.0", "--n", "40", "--sigma", "0.1",
        "--seed", "3", "--out", d,
    ])
    assert rc == 0
    return d


class TestParser:
    def test_help_exits_zero(self, capsys):
        assert main(["--help"]) == 0
        assert "generate" in capsys.readouterr().out

    def test_unknown_flag_exits_two(self, capsys):
        assert main(["generate", "--bogus"]) == 2

    def test_missing_subcommand_exits_two(self):
        assert main([]) == 2


class TestGenerate:
    def test_completion_artifacts(self, completion_dir):
        for name in ("obs.json", "observations.csv", "truth.json", "L_star.csv"):
            assert os.path.exists(os.path.join(completion_dir, name))
        info = read_json(os.path.join(completion_dir, "obs.json"))
        assert info["model"] == "entrywise"
        assert info["meta"] == {
            "model": "completion", "n": 40, "scale": 0.1,
            "seed": 3, "data_seed": 4,
        }

    def test_denoise_meta_records_calibration(self, tmp_path):
        d = str(tmp_path / "dn")
        rc = main([
            "generate", "--model", "denoise", "--dims", "6", "6",
            "--spectrum", "1.0", "--n", "4", "--snr", "2.0",
            "--gamma", "1.5", "--seed", "1", "--out", d,
        ])
        assert rc == 0
        meta = read_json(os.path.join(d, "obs.json"))["meta"]
        assert meta["snr"] == 2.0
        assert meta["gamma"] == 1.5
        assert meta["scale"] > 0.0

    def test_linear_model(self, tmp_path):
        d = str(tmp_path / "lin")
        rc = main([
            "generate", "--model", "linear", "--dims", "5", "5",
            "--spectrum", "1.0", "--n", "30", "--sigma", "0.2",
            "--seed", "2", "--out", d,
        ])
        assert rc == 0
        assert read_json(os.path.join(d, "obs.json"))["model"] == "linear"

    def test_deterministic(self, tmp_path):
        blobs = []
        for sub in ("a", "b"):
            d = str(tmp_path / sub)
            main([
                "generate", "--model", "completion", "--dims", "6", "6",
                "--spectrum", "1.0", "--n", "12", "--sigma", "0.3",
                "--seed", "9", "--out", d,
            ])
            blobs.append((
                open(os.path.join(d, "observations.csv"), "rb").read(),
                open(os.path.join(d, "L_star.csv"), "rb").read(),
            ))
        assert blobs[0] == blobs[1]

    def test_scale_required(self, tmp_path, capsys):
        rc = main([
            "generate", "--model", "completion", "--dims", "5", "5",
            "--spectrum", "1.0", "--n", "10", "--out", str(tmp_path / "x"),
        ])
        assert rc == 2
        assert "--snr or --sigma" in capsys.readouterr().err


class TestEstimate:
    def test_svt_writes_matrix(self, completion_dir, tmp_path):
        out = str(tmp_path / "est.csv")
        rc = main([
            "estimate", "--obs", completion_dir, "--estimator", "svt",
            "--lambda", "0.1", "--max-iters", "150", "--out", out,
        ])
        assert rc == 0
        assert load_matrix(out).shape == (10, 8)

    def test_spectral_on_replicates(self, denoise_dir, tmp_path):
        out = str(tmp_path / "est.csv")
        rc = main([
            "estimate", "--obs", denoise_dir, "--estimator", "spectral",
            "--k", "2", "--out", out,
        ])
        assert rc == 0
        M = load_matrix(out)
        assert np.linalg.matrix_rank(M, tol=1e-8) == 2

    def test_pca_on_wrong_model_exits_two(self, completion_dir, tmp_path, capsys):
        rc = main([
            "estimate", "--obs", completion_dir, "--estimator", "pca",
            "--k", "1", "--out", str(tmp_path / "e.csv"),
        ])
        assert rc == 2
        assert capsys.readouterr().err.startswith("ss3:")


class TestStabilize:
    def test_report_payload(self, denoise_dir, tmp_path):
        out = str(tmp_path / "report.json")
        rc = main([
            "stabilize", "--obs", denoise_dir, "--alpha", "0.7",
            "--bags", "4", "--estimator", "spectral", "--k", "2",
            "--seed", "1", "--out", out,
        ])
        assert rc == 0
        payload = read_json(out)
        assert payload["schema"] == "ss3-report-1"
        assert payload["mode"] == "tangent"
        assert payload["r_selected"] == 2
        assert payload["membership_level"] == 0.7
        assert payload["sigma_min_curve"][0] == [0, 1.0]
        assert payload["diagnostics"]["bags_used"] == 4
        base = str(tmp_path)
        assert payload["selected"]["col_basis"] == "report_col_basis.csv"
        col = load_matrix(os.path.join(base, "report_col_basis.csv"))
        row = load_matrix(os.path.join(base, "report_row_basis.csv"))
        assert col.shape == (8, 2) and row.shape == (8, 2)

    def test_column_mode(self, denoise_dir, tmp_path):
        out = str(tmp_path / "col.json")
        rc = main([
            "stabilize", "--obs", denoise_dir, "--alpha", "0.7",
            "--bags", "4", "--estimator", "spectral", "--k", "2",
            "--mode", "column", "--out", out,
        ])
        assert rc == 0
        payload = read_json(out)
        assert payload["selected"]["row_basis"] is None
        assert os.path.exists(str(tmp_path / "col_col_basis.csv"))

    def test_low_alpha_warns_on_stderr(self, denoise_dir, tmp_path, capsys):
        rc = main([
            "stabilize", "--obs", denoise_dir, "--alpha", "0.4",
            "--bags", "4", "--estimator", "spectral", "--k", "2",
            "--out", str(tmp_path / "r.json"),
        ])
        assert rc == 0
        assert "alpha" in capsys.readouterr().err

    def test_numeric_failure_exits_three(self, denoise_dir, tmp_path,
                                         monkeypatch, capsys):
        def broken(*args, **kwargs):
            raise np.linalg.LinAlgError("synthetic blowup")

        monkeypatch.setattr(cli, "run_pipeline", broken)
        rc = main([
            "stabilize", "--obs", denoise_dir, "--bags", "4",
            "--estimator", "spectral", "--k", "2",
            "--out", str(tmp_path / "r.json"),
        ])
        assert rc == 3
        assert "numeric failure" in capsys.readouterr().err


class TestMetrics:
    def test_perfect_estimate(self, completion_dir, tmp_path, capsys):
        mat = os.path.join(completion_dir, "L_star.csv")
        out = str(tmp_path / "m.json")
        rc = main([
            "metrics", "--estimate", mat, "--truth", mat, "--out", out,
        ])
        assert rc == 0
        payload = json.loads(capsys.readouterr().out)
        assert payload["fd"] == pytest.approx(0.0, abs=1e-9)
        assert payload["dim_truth"] == 32  # rank 2 tangent in 10 x 8
        assert payload["pw"] == pytest.approx(32.0, abs=1e-9)
        assert read_json(out) == payload

    def test_missing_file_exits_two(self, tmp_path):
        rc = main([
            "metrics", "--estimate", str(tmp_path / "no.csv"),
            "--truth", str(tmp_path / "no.csv"),
        ])
        assert rc == 2


class TestBounds:
    def test_data_driven_payload(self, denoise_dir, capsys):
        rc = main([
            "bounds", "--obs", denoise_dir, "--alpha", "0.8",
            "--bags", "4", "--estimator", "spectral", "--k", "2",
        ])
        assert rc == 0
        payload = json.loads(capsys.readouterr().out)
        assert payload["mode"] == "data-driven"
        assert payload["r_selected"] == 2
        # noiseless bags all land on the rank-2 tangent: q is its dimension
        assert payload["q"] == pytest.approx(28.0, abs=1e-9)
        assert payload["kappa_indiv"] == pytest.approx(0.0, abs=1e-9)
        assert payload["dimT_bound"] == pytest.approx(28.0 / 0.8, rel=1e-9)
        assert payload["prop5_penalty"] > 0.0
        assert payload["prop6_total"] > 0.0

    def test_oracle_mode(self, denoise_dir, tmp_path, capsys):
        out = str(tmp_path / "b.json")
        rc = main([
            "bounds", "--obs", denoise_dir, "--truth", denoise_dir,
            "--alpha", "0.8", "--bags", "4", "--estimator", "spectral",
            "--k", "2", "--mc-reps", "3", "--out", out,
        ])
        assert rc == 0
        payload = json.loads(capsys.readouterr().out)
        assert payload["mode"] == "oracle"
        assert payload["F"] <= 1e-10
        assert payload["theorem4_total"] == pytest.approx(
            2 * (1 - 0.8) * 28.0, abs=1e-8
        )
        assert read_json(out)["theorem4_total"] == payload["theorem4_total"]

    def test_odd_observation_count_exits_two(self, tmp_path, capsys):
        d = str(tmp_path / "odd")
        main([
            "generate", "--model", "denoise", "--dims", "6", "6",
            "--spectrum", "1.0", "--n", "7", "--sigma", "0.0",
            "--out", d,
        ])
        rc = main([
            "bounds", "--obs", d, "--bags", "2",
            "--estimator", "spectral", "--k", "1",
        ])
        assert rc == 2
        assert "even" in capsys.readouterr().err

    def test_column_data_driven_exits_two(self, denoise_dir, capsys):
        rc = main([
            "bounds", "--obs", denoise_dir, "--bags", "4", "--mode", "column",
            "--estimator", "spectral", "--k", "2",
        ])
        assert rc == 2
        assert "tangent mode only" in capsys.readouterr().err


class TestExperiment:
    _tiny = [
        "--trials", "1", "--bags", "4", "--dims", "12", "12",
        "--spectrum", "1.0", "0.5", "--snr", "1.0",
        "--option", "m=100", "--option", "cv_folds=2",
        "--option", "lambda_points=3", "--option", "lambda_min_ratio=0.01",
    ]

    def test_preset_run(self, tmp_path, capsys):
        out = str(tmp_path / "exp")
        rc = main(
            ["experiment", "--preset", "table1", "--output", out,
             "--no-figures"] + self._tiny
        )
        assert rc == 0
        summary = read_json(os.path.join(out, "summary.json"))
        assert summary["experiment"] == "table1"
        assert summary["config"]["trials"] == 1
        assert os.path.exists(os.path.join(out, "results.csv"))
        assert "table1" in capsys.readouterr().out

    def test_config_file_run(self, tmp_path):
        out = str(tmp_path / "exp")
        cfg_path = str(tmp_path / "cfg.json")
        write_json(
            {
                "experiment": "table1",
                "trials": 1,
                "B": 4,
                "dims": [12, 12],
                "spectrum": [1.0, 0.5],
                "snr": [1.0],
                "estimator": {"kind": "svt", "max_iters": 80,
                              "conv_tol": 1e-4},
                "options": {"m": 100, "cv_folds": 2, "lambda_points": 3,
                            "lambda_min_ratio": 0.01, "figures": False},
            },
            cfg_path,
        )
        rc = main(["experiment", "--config", cfg_path, "--output", out])
        assert rc == 0
        summary = read_json(os.path.join(out, "summary.json"))
        assert summary["config"]["estimator"]["max_iters"] == 80

    def test_flags_override_config_file(self, tmp_path):
        out = str(tmp_path / "exp")
        cfg_path = str(tmp_path / "cfg.json")
        write_json(
            {
                "experiment": "table1",
                "trials": 5,
                "B": 4,
                "dims": [12, 12],
                "spectrum": [1.0, 0.5],
                "snr": [1.0],
                "estimator": {"kind": "svt", "max_iters": 80,
                              "conv_tol": 1e-4},
                "options": {"m": 100, "cv_folds": 2, "lambda_points": 3,
                            "lambda_min_ratio": 0.01, "figures": False},
            },
            cfg_path,
        )
        rc = main([
            "experiment", "--config", cfg_path, "--output", out,
            "--trials", "1",
        ])
        assert rc == 0
        assert read_json(os.path.join(out, "summary.json"))["config"]["trials"] == 1

    def test_requires_preset_or_config(self, capsys):
        assert main(["experiment"]) == 2
        assert "--preset or --config" in capsys.readouterr().err

    def test_bad_option_syntax_exits_two(self, tmp_path):
        rc = main([
            "experiment", "--preset", "table1", "--output", str(tmp_path),
            "--option", "nonsense",
        ])
        assert rc == 2

    def test_interrupt_exits_130(self, tmp_path, monkeypatch, capsys):
        def interrupted(cfg):
            raise KeyboardInterrupt

        monkeypatch.setattr(cli, "run_experiment", interrupted)
        rc = main(
            ["experiment", "--preset", "table1",
             "--output", str(tmp_path)] + self._tiny
        )
        assert rc == 130
        assert "interrupted" in capsys.readouterr().err
