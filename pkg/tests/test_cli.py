"""End-to-end tests for the command-line interface.

Commands run in-process through ``main(argv)`` so stdout/stderr JSON and
exit codes can be asserted cheaply; one subprocess test covers the
installed entry point.
"""

import json
import subprocess
import sys

import numpy as np
import pandas as pd
import pytest
import yaml
from numpy.testing import assert_allclose

from evcopula.cli import main
from evcopula.sessions import chronological_split, read_preprocessed_csv, subsample, write_csv

FIXTURE = "tests/fixtures/clayton_vine_5000.csv"


def run_cli(argv, capsys):
    rc = main(argv)
    captured = capsys.readouterr()
    payload = captured.err if rc != 0 else captured.out
    return rc, json.loads(payload.strip().splitlines()[-1])


def make_raw_log(path, n=300):
    """Raw charging log with 2 rows that must be dropped."""
    rng = np.random.default_rng(11)
    start = pd.date_range("2024-03-01 06:00", periods=n, freq="47min")
    hours = rng.uniform(0.5, 6.0, size=n)
    end = start + pd.to_timedelta(hours, unit="h")
    kwh = rng.uniform(1.0, 30.0, size=n)
    df = pd.DataFrame(
        {"plug_in": start.astype(str), "plug_out": end.astype(str), "kwh": kwh}
    )
    df.loc[5, "plug_out"] = df.loc[5, "plug_in"]  # zero duration
    df.loc[9, "kwh"] = -4.0  # negative energy
    df.to_csv(path, index=False)
    return n - 2


@pytest.fixture(scope="module")
def prepared(tmp_path_factory):
    """Preprocessed train/valid/test CSVs from the bundled fixture."""
    base = tmp_path_factory.mktemp("splits")
    ds = subsample(read_preprocessed_csv(FIXTURE), 800, seed=0)
    split = chronological_split(ds)
    paths = {}
    for tag, part in (("train", split.train), ("valid", split.valid), ("test", split.test)):
        paths[tag] = base / f"{tag}.csv"
        write_csv(part, paths[tag])
    return paths


class TestPrepare:
    def test_splits_and_manifest(self, tmp_path, capsys):
        raw = tmp_path / "raw.csv"
        kept = make_raw_log(raw)
        out = tmp_path / "prep"
        rc, info = run_cli(
            [
                "prepare",
                "--input", str(raw),
                "--out", str(out),
                "--name", "mylog",
                "--col-start", "plug_in",
                "--col-end", "plug_out",
                "--col-energy", "kwh",
            ],
            capsys,
        )
        assert rc == 0
        assert info["name"] == "mylog"
        assert info["rows"] == kept
        assert info["dropped"] == 2
        sizes = info["sizes"]
        assert sizes["train"] + sizes["valid"] + sizes["test"] == kept
        assert sizes["train"] == int(kept * 0.8)
        # stdout mirrors the manifest file
        manifest = json.loads((out / "manifest.json").read_text())
        assert manifest == info
        train = read_preprocessed_csv(out / "train.csv")
        assert len(train) == sizes["train"]
        assert np.all(train.features()[:, 1] > 0)

    def test_duration_column_variant(self, tmp_path, capsys):
        raw = tmp_path / "raw.csv"
        pd.DataFrame(
            {
                "t0": ["2024-01-01 08:30:00", "2024-01-02 09:00:00", "2024-01-03 10:00:00",
                       "2024-01-04 11:00:00", "2024-01-05 12:00:00", "2024-01-06 13:00:00",
                       "2024-01-07 14:00:00", "2024-01-08 15:00:00", "2024-01-09 16:00:00",
                       "2024-01-10 17:00:00"],
                "hours": [2.5] * 10,
                "kwh": [8.0] * 10,
            }
        ).to_csv(raw, index=False)
        out = tmp_path / "prep"
        rc, info = run_cli(
            [
                "prepare",
                "--input", str(raw),
                "--out", str(out),
                "--col-start", "t0",
                "--col-duration", "hours",
                "--col-energy", "kwh",
            ],
            capsys,
        )
        assert rc == 0
        assert info["sizes"] == {"train": 8, "valid": 1, "test": 1}
        train = read_preprocessed_csv(out / "train.csv")
        assert_allclose(train.features()[0], [2.5, 2.5, 8.0])

    def test_missing_input_fails_with_json_error(self, tmp_path, capsys):
        rc, err = run_cli(
            [
                "prepare",
                "--input", str(tmp_path / "absent.csv"),
                "--out", str(tmp_path / "prep"),
                "--col-start", "a",
                "--col-end", "b",
                "--col-energy", "c",
            ],
            capsys,
        )
        assert rc == 1
        assert err["error"] == "FileNotFoundError"

    def test_wrong_column_name_reports_header(self, tmp_path, capsys):
        raw = tmp_path / "raw.csv"
        make_raw_log(raw, n=50)
        rc, err = run_cli(
            [
                "prepare",
                "--input", str(raw),
                "--out", str(tmp_path / "prep"),
                "--col-start", "nope",
                "--col-end", "plug_out",
                "--col-energy", "kwh",
            ],
            capsys,
        )
        assert rc == 1
        assert err["error"] == "ValueError"
        assert "nope" in err["message"] and "plug_in" in err["message"]


class TestFitSampleEvaluate:
    def test_fit_writes_checkpoint(self, prepared, tmp_path, capsys):
        ckpt = tmp_path / "vine.json"
        rc, info = run_cli(
            [
                "fit",
                "--model", "Vine",
                "--train", str(prepared["train"]),
                "--valid", str(prepared["valid"]),
                "--out", str(ckpt),
            ],
            capsys,
        )
        assert rc == 0
        assert info["model"] == "Vine"
        assert info["n_train"] == 640
        blob = json.loads(ckpt.read_text())
        assert blob["model"] == "Vine"
        assert "marginals" in blob

    def test_sample_deterministic_per_seed(self, prepared, tmp_path, capsys):
        ckpt = tmp_path / "clayton.json"
        rc, _ = run_cli(
            ["fit", "--model", "Clayton", "--train", str(prepared["train"]),
             "--out", str(ckpt)],
            capsys,
        )
        assert rc == 0
        out_a = tmp_path / "a.csv"
        out_b = tmp_path / "b.csv"
        out_c = tmp_path / "c.csv"
        for out, seed in ((out_a, "3"), (out_b, "3"), (out_c, "4")):
            rc, info = run_cli(
                ["sample", "--checkpoint", str(ckpt), "--n", "200",
                 "--seed", seed, "--out", str(out)],
                capsys,
            )
            assert rc == 0
            assert info["rows"] == 200
        assert out_a.read_bytes() == out_b.read_bytes()
        assert out_a.read_bytes() != out_c.read_bytes()
        df = pd.read_csv(out_a)
        assert list(df.columns) == ["arrival_shifted", "duration", "energy"]
        assert len(df) == 200

    def test_evaluate_self_test_identities(self, prepared, tmp_path, capsys):
        report = tmp_path / "report.json"
        rc, rep = run_cli(
            [
                "evaluate",
                "--train", str(prepared["train"]),
                "--test", str(prepared["test"]),
                "--synthetic", str(prepared["test"]),
                "--out", str(report),
            ],
            capsys,
        )
        assert rc == 0
        # synthetic == test: every distribution distance vanishes
        assert rep["tau_diff"] == 0.0
        assert rep["rho1"] == 0.0
        assert rep["mae_lt"] == 0.0 and rep["mae_ut"] == 0.0
        assert rep["mae_load"] == 0.0
        assert 0.99 < rep["rho2"] <= 1.0
        assert np.isfinite(rep["nll"])
        assert json.loads(report.read_text()) == rep

    def test_evaluate_flags_training_set_copy(self, prepared, tmp_path, capsys):
        rc, rep = run_cli(
            [
                "evaluate",
                "--train", str(prepared["train"]),
                "--test", str(prepared["test"]),
                "--synthetic", str(prepared["train"]),
                "--out", str(tmp_path / "copy.json"),
            ],
            capsys,
        )
        assert rc == 0
        # a generator that replays its training data lands at d(t, S) = 0
        assert rep["rho2"] > 100.0

    def test_evaluate_respects_span_override(self, prepared, tmp_path, capsys):
        argv = [
            "evaluate",
            "--train", str(prepared["train"]),
            "--test", str(prepared["test"]),
            "--synthetic", str(prepared["train"]),
            "--out", str(tmp_path / "r1.json"),
        ]
        rc, rep1 = run_cli(argv, capsys)
        assert rc == 0
        argv[-1] = str(tmp_path / "r2.json")
        rc, rep2 = run_cli(argv + ["--spans", "1"], capsys)
        assert rc == 0
        # same profiles divided by a different span
        assert rep2["mae_load"] > rep1["mae_load"]

    def test_config_file_reaches_trainer(self, prepared, tmp_path, capsys):
        hyper = tmp_path / "hyper.yaml"
        hyper.write_text(
            yaml.safe_dump({"gmmnet": {"max_epochs": 6, "eval_every": 3, "m_valid": 128}})
        )
        ckpt = tmp_path / "gmm.json"
        rc, info = run_cli(
            [
                "fit",
                "--model", "GMMNet",
                "--train", str(prepared["train"]),
                "--valid", str(prepared["valid"]),
                "--config", str(hyper),
                "--seed", "2",
                "--out", str(ckpt),
            ],
            capsys,
        )
        assert rc == 0
        assert info["best_epoch"] <= 6
        assert info["stop_reason"]

    def test_codine_without_valid_errors(self, prepared, tmp_path, capsys):
        rc, err = run_cli(
            ["fit", "--model", "CODINE", "--train", str(prepared["train"]),
             "--out", str(tmp_path / "c.json")],
            capsys,
        )
        assert rc == 1
        assert err["error"] == "ValueError"
        assert "validation split" in err["message"]

    def test_unknown_model_rejected_by_parser(self, prepared, tmp_path, capsys):
        with pytest.raises(SystemExit) as exc:
            main(["fit", "--model", "Copulatron", "--train", str(prepared["train"]),
                  "--out", str(tmp_path / "x.json")])
        assert exc.value.code == 2


class TestExperimentCommand:
    @staticmethod
    def write_config(path, out_dir, models=("Clayton", "Gaussian"), seeds=(0, 1)):
        cfg = {
            "datasets": [{"name": "fix", "path": FIXTURE}],
            "models": list(models),
            "seeds": list(seeds),
            "subsample_cap": 500,
            "out_dir": str(out_dir),
        }
        path.write_text(yaml.safe_dump(cfg))

    def test_full_run_emits_table(self, tmp_path, capsys):
        cfg_path = tmp_path / "cfg.yaml"
        self.write_config(cfg_path, tmp_path / "serial")
        rc, info = run_cli(["experiment", "--config", str(cfg_path)], capsys)
        assert rc == 0
        assert info["cells"] == 4
        assert info["failed_cells"] == 0
        assert len(info["files"]) == 7
        rows = pd.read_csv(tmp_path / "serial" / "results.csv", dtype=str)
        assert len(rows) == 2
        assert set(rows["status"]) == {"ok"}

    def test_parallel_matches_serial(self, tmp_path, capsys):
        cfg_path = tmp_path / "cfg.yaml"
        self.write_config(cfg_path, tmp_path / "serial")
        rc, _ = run_cli(["experiment", "--config", str(cfg_path)], capsys)
        assert rc == 0
        rc, _ = run_cli(
            ["experiment", "--config", str(cfg_path), "--out", str(tmp_path / "par"),
             "--workers", "2"],
            capsys,
        )
        assert rc == 0
        assert (tmp_path / "serial" / "results.csv").read_bytes() == (
            tmp_path / "par" / "results.csv"
        ).read_bytes()

    def test_seed_override_shrinks_table(self, tmp_path, capsys):
        cfg_path = tmp_path / "cfg.yaml"
        self.write_config(cfg_path, tmp_path / "one")
        rc, info = run_cli(
            ["experiment", "--config", str(cfg_path), "--seed", "3"], capsys
        )
        assert rc == 0
        assert info["cells"] == 2  # two models, one seed
        loaded = json.loads((tmp_path / "one" / "results.json").read_text())
        assert loaded["config"]["seeds"] == [3]

    def test_missing_config_errors(self, tmp_path, capsys):
        rc, err = run_cli(
            ["experiment", "--config", str(tmp_path / "absent.yaml")], capsys
        )
        assert rc == 1
        assert err["error"] == "FileNotFoundError"


class TestConsoleEntryPoint:
    def test_module_invocation(self, tmp_path):
        raw = tmp_path / "raw.csv"
        make_raw_log(raw, n=60)
        proc = subprocess.run(
            [
                sys.executable, "-m", "evcopula.cli",
                "prepare",
                "--input", str(raw),
                "--out", str(tmp_path / "prep"),
                "--col-start", "plug_in",
                "--col-end", "plug_out",
                "--col-energy", "kwh",
            ],
            capture_output=True,
            text=True,
        )
        assert proc.returncode == 0, proc.stderr
        info = json.loads(proc.stdout.strip().splitlines()[-1])
        assert info["rows"] == 58
