"""Tests for experiment orchestration: seeding, config, model registry,
seed selection, ranking, and report emission."""

import hashlib
import json

import numpy as np
import pandas as pd
import pytest
import yaml
from numpy.testing import assert_allclose, assert_array_equal

from evcopula import harness as hz
from evcopula.sessions import chronological_split, read_preprocessed_csv, subsample

FIXTURE = "tests/fixtures/clayton_vine_5000.csv"


@pytest.fixture(scope="module")
def fixture_ds():
    return read_preprocessed_csv(FIXTURE, name="fix")


@pytest.fixture(scope="module")
def small_split(fixture_ds):
    small = subsample(fixture_ds, 600, seed=1)
    return chronological_split(small)


class TestCellSeed:
    def test_matches_content_hash(self):
        # independent recomputation of the derivation
        digest = hashlib.sha256(b"3|Vine|dundee").digest()
        expected = int.from_bytes(digest[:4], "big")
        assert hz.cell_seed(3, "Vine", "dundee") == expected

    def test_distinct_across_coordinates(self):
        base = hz.cell_seed(0, "Clayton", "a")
        assert hz.cell_seed(1, "Clayton", "a") != base
        assert hz.cell_seed(0, "Frank", "a") != base
        assert hz.cell_seed(0, "Clayton", "b") != base

    def test_uint32_range_and_stability(self):
        s = hz.cell_seed(0, "Clayton", "a")
        assert 0 <= s < 2**32
        assert hz.cell_seed(0, "Clayton", "a") == s


class TestExperimentConfig:
    def make(self, **kw):
        base = dict(datasets=(hz.DatasetSpec("fix", FIXTURE),))
        base.update(kw)
        return hz.ExperimentConfig(**base)

    def test_defaults(self):
        cfg = self.make()
        assert cfg.models == hz.MODEL_NAMES
        assert cfg.seeds == (0, 1, 2, 3, 4)
        assert cfg.subsample_cap == 20_000
        assert cfg.workers == 1

    def test_rejects_unknown_model(self):
        with pytest.raises(ValueError, match="unknown models"):
            self.make(models=("Clayton", "Copulatron"))

    def test_rejects_empty_models_or_seeds(self):
        with pytest.raises(ValueError, match="at least one model"):
            self.make(models=())
        with pytest.raises(ValueError, match="at least one model"):
            self.make(seeds=())

    def test_rejects_empty_or_duplicate_datasets(self):
        with pytest.raises(ValueError, match="at least one dataset"):
            hz.ExperimentConfig(datasets=())
        with pytest.raises(ValueError, match="unique"):
            hz.ExperimentConfig(
                datasets=(hz.DatasetSpec("fix", FIXTURE), hz.DatasetSpec("fix", FIXTURE))
            )

    def test_rejects_bad_cap_and_workers(self):
        with pytest.raises(ValueError, match="subsample_cap"):
            self.make(subsample_cap=0)
        with pytest.raises(ValueError, match="workers"):
            self.make(workers=0)

    def test_from_dict_coerces_lists(self):
        cfg = hz.ExperimentConfig.from_dict(
            {
                "datasets": [{"name": "fix", "path": FIXTURE}],
                "models": ["Clayton", "Vine"],
                "seeds": [0, 1],
            }
        )
        assert cfg.models == ("Clayton", "Vine")
        assert cfg.seeds == (0, 1)
        assert isinstance(cfg.datasets[0], hz.DatasetSpec)

    def test_yaml_round_trip(self, tmp_path):
        cfg = self.make(models=("Clayton",), seeds=(7,), codine={"max_epochs": 5})
        path = tmp_path / "cfg.yaml"
        path.write_text(yaml.safe_dump(cfg.to_dict()))
        again = hz.ExperimentConfig.from_yaml(path)
        assert again.to_dict() == cfg.to_dict()

    def test_yaml_rejects_non_mapping(self, tmp_path):
        path = tmp_path / "cfg.yaml"
        path.write_text("- just\n- a list\n")
        with pytest.raises(ValueError, match="mapping"):
            hz.ExperimentConfig.from_yaml(path)


class TestDatasetSpec:
    def test_load_preprocessed(self, fixture_ds):
        ds = hz.DatasetSpec("fix", FIXTURE).load()
        assert len(ds) == len(fixture_ds)
        assert ds.name == "fix"

    def test_load_raw_with_column_map(self, tmp_path):
        raw = tmp_path / "raw.csv"
        pd.DataFrame(
            {
                "plug_in": ["2024-01-01 08:30:00", "2024-01-01 23:00:00"],
                "plug_out": ["2024-01-01 10:30:00", "2024-01-02 01:30:00"],
                "kwh": [5.0, 7.5],
            }
        ).to_csv(raw, index=False)
        spec = hz.DatasetSpec(
            "raw",
            str(raw),
            columns={"start": "plug_in", "end": "plug_out", "energy": "kwh"},
        )
        ds = spec.load()
        # 08:30 shifts to 2.5 on the 6h-rotated clock; durations from end - start
        assert_allclose(ds.features()[0], [2.5, 2.0, 5.0])
        assert_allclose(ds.features()[1], [17.0, 2.5, 7.5])


class TestFitSample:
    @pytest.mark.parametrize(
        "name", ["Clayton", "Frank", "Gumbel", "Gaussian", "StudentT", "Vine"]
    )
    def test_parametric_fit_and_sample(self, small_split, name):
        train = small_split.train
        fm = hz.fit_model(name, train, small_split.valid, seed=5)
        feats = hz.sample_model(fm, 100, seed=5)
        assert feats.shape == (100, 3)
        # empirical marginal inversion keeps samples inside the training range
        lo, hi = train.features().min(axis=0), train.features().max(axis=0)
        assert np.all(feats >= lo - 1e-12) and np.all(feats <= hi + 1e-12)
        again = hz.sample_model(fm, 100, seed=5)
        assert_array_equal(feats, again)
        other = hz.sample_model(fm, 100, seed=6)
        assert not np.array_equal(feats, other)

    @pytest.mark.parametrize("name", ["Clayton", "StudentT", "Vine"])
    def test_checkpoint_round_trip(self, small_split, name):
        fm = hz.fit_model(name, small_split.train, seed=2)
        blob = json.dumps(fm.to_dict())
        fm2 = hz.FittedModel.from_dict(json.loads(blob))
        assert_array_equal(hz.sample_model(fm, 64, seed=9), hz.sample_model(fm2, 64, seed=9))
        assert fm2.meta["n_train"] == len(small_split.train)

    def test_codine_fit_sample_round_trip(self, small_split):
        cfg = {"max_epochs": 10, "eval_every": 5, "m_valid": 128}
        fm = hz.fit_model(
            "CODINE", small_split.train, small_split.valid, seed=3, codine_cfg=cfg
        )
        assert fm.meta["best_epoch"] >= 1
        feats = hz.sample_model(fm, 120, seed=4)
        assert feats.shape == (120, 3)
        fm2 = hz.FittedModel.from_dict(json.loads(json.dumps(fm.to_dict())))
        assert_array_equal(feats, hz.sample_model(fm2, 120, seed=4))

    def test_gmmnet_fit_sample_valid_sessions(self, small_split):
        cfg = {"max_epochs": 8, "eval_every": 4, "m_valid": 128}
        fm = hz.fit_model(
            "GMMNet", small_split.train, small_split.valid, seed=3, gmmnet_cfg=cfg
        )
        feats = hz.sample_model(fm, 150, seed=4)
        assert feats.shape == (150, 3)
        # repair contract: wrapped arrivals, positive durations, nonneg energy
        assert np.all((feats[:, 0] >= 0.0) & (feats[:, 0] < 24.0))
        assert np.all(feats[:, 1] > 0.0)
        assert np.all(feats[:, 2] >= 0.0)
        assert "redraw_rounds" in fm.meta
        fm2 = hz.FittedModel.from_dict(json.loads(json.dumps(fm.to_dict())))
        assert_array_equal(feats, hz.sample_model(fm2, 150, seed=4))

    def test_unknown_model_rejected(self, small_split):
        with pytest.raises(ValueError, match="unknown model"):
            hz.fit_model("Copulatron", small_split.train)

    def test_neural_models_need_validation_split(self, small_split):
        with pytest.raises(ValueError, match="validation split"):
            hz.fit_model("CODINE", small_split.train)
        with pytest.raises(ValueError, match="validation split"):
            hz.fit_model("GMMNet", small_split.train)

    def test_sample_count_validated(self, small_split):
        fm = hz.fit_model("Clayton", small_split.train)
        with pytest.raises(ValueError, match="n >= 1"):
            hz.sample_model(fm, 0)


class TestSelectBestSeed:
    @staticmethod
    def records(tau_diffs, ok=None):
        ok = ok or [True] * len(tau_diffs)
        return [
            {"seed": i, "ok": o, "metrics": {"tau_diff": t} if o else None}
            for i, (t, o) in enumerate(zip(tau_diffs, ok))
        ]

    def test_lowest_tau_diff_wins_ties_to_lower_seed(self):
        recs = self.records([0.3, 0.2, 0.25, 0.2, 0.4])
        assert hz.select_best_seed(recs) == 1

    def test_failed_seeds_excluded(self):
        recs = self.records([0.3, 0.2, 0.25, 0.2, 0.4], ok=[True, False, True, True, True])
        assert hz.select_best_seed(recs) == 3

    def test_non_finite_tau_diff_excluded(self):
        recs = self.records([0.3, np.inf, 0.25])
        assert hz.select_best_seed(recs) == 2

    def test_all_failed_raises(self):
        recs = self.records([0.3, 0.2], ok=[False, False])
        with pytest.raises(ValueError, match="all seeds failed"):
            hz.select_best_seed(recs)


@pytest.fixture(scope="module")
def small_table():
    cfg = hz.ExperimentConfig(
        datasets=(hz.DatasetSpec("fix small", FIXTURE),),
        models=("Clayton", "Gaussian"),
        seeds=(0, 1),
        subsample_cap=700,
    )
    return cfg, hz.run_experiment(cfg)


class TestRunExperiment:
    def test_one_record_per_cell(self, small_table):
        cfg, table = small_table
        assert len(table.records) == len(cfg.models) * len(cfg.seeds)
        keys = {(r["dataset"], r["model"], r["seed"]) for r in table.records}
        assert keys == {("fix small", m, s) for m in cfg.models for s in cfg.seeds}
        assert all(r["ok"] for r in table.records)

    def test_summary_aggregates_match_records(self, small_table):
        cfg, table = small_table
        for model in cfg.models:
            cell = [r for r in table.records if r["model"] == model]
            entry = table.summary["fix small"][model]
            assert entry["ok_seeds"] == [0, 1]
            for k in hz.METRIC_COLUMNS:
                vals = [r["metrics"][k] for r in cell]
                assert_allclose(entry["mean"][k], np.mean(vals), rtol=1e-12)
                assert_allclose(entry["sd"][k], np.std(vals, ddof=0), rtol=1e-12)

    def test_ranks_form_average_permutation(self, small_table):
        cfg, table = small_table
        k = len(cfg.models)
        for metric in hz.METRIC_COLUMNS:
            rk = [table.ranks["fix small"][m]["per_metric"][metric] for m in cfg.models]
            assert_allclose(sum(rk), k * (k + 1) / 2)
            assert all(1.0 <= r <= k for r in rk)
        for m in cfg.models:
            node = table.ranks["fix small"][m]
            assert_allclose(
                node["avg_rank"],
                np.mean([node["per_metric"][x] for x in hz.METRIC_COLUMNS]),
            )

    def test_best_seed_matches_selection_rule(self, small_table):
        cfg, table = small_table
        for model in cfg.models:
            cell = [r for r in table.records if r["model"] == model]
            assert table.best_seed["fix small"][model] == hz.select_best_seed(cell)

    def test_samples_sized_like_test_split(self, small_table):
        cfg, table = small_table
        # 5000 rows split 80/10/10 chronologically; the cap leaves test at 500
        for model in cfg.models:
            assert table.samples[("fix small", model)].shape == (500, 3)

    def test_profiles_cover_test_and_models(self, small_table):
        cfg, table = small_table
        profs = table.profiles["fix small"]
        assert set(profs) == {"test", *cfg.models}
        for bins in profs.values():
            assert len(bins) == 1440
            assert min(bins) >= 0.0
        assert table.spans["fix small"] > 0

    def test_rerun_is_deterministic(self, small_table):
        cfg, table = small_table
        again = hz.run_experiment(cfg)
        dump = lambda t: json.dumps(t.to_dict(), sort_keys=True)
        assert dump(again) == dump(table)
        for key in table.samples:
            assert_array_equal(table.samples[key], again.samples[key])

    def test_failed_cell_is_flagged_not_fatal(self, small_split, monkeypatch, tmp_path):
        real_fit = hz.fit_model

        def flaky_fit(name, train, valid=None, **kw):
            if name == "Gaussian":
                raise RuntimeError("synthetic failure")
            return real_fit(name, train, valid, **kw)

        monkeypatch.setattr(hz, "fit_model", flaky_fit)
        cfg = hz.ExperimentConfig(
            datasets=(hz.DatasetSpec("fix", FIXTURE),),
            models=("Clayton", "Gaussian"),
            seeds=(0,),
            subsample_cap=400,
        )
        table = hz.run_experiment(cfg)
        bad = [r for r in table.records if r["model"] == "Gaussian"]
        assert all(not r["ok"] for r in bad)
        assert bad[0]["error"] == "RuntimeError: synthetic failure"
        entry = table.summary["fix"]["Gaussian"]
        assert entry["failed"] and entry["mean"] is None
        assert table.best_seed["fix"]["Gaussian"] is None
        # failed model ranks last on every metric
        for metric in hz.METRIC_COLUMNS:
            assert table.ranks["fix"]["Gaussian"]["per_metric"][metric] == 2.0
        # single surviving seed aggregates with zero spread
        ok_entry = table.summary["fix"]["Clayton"]
        assert all(v == 0.0 for v in ok_entry["sd"].values())
        # report still writes, marking the failure
        hz.emit_report(table, tmp_path)
        rows = pd.read_csv(tmp_path / "results.csv", dtype=str)
        failed_row = rows[rows["model"] == "Gaussian"].iloc[0]
        assert failed_row["status"] == "failed"
        assert failed_row["nll"] == "failed"


class TestEmitReport:
    def test_writes_expected_files(self, small_table, tmp_path):
        _, table = small_table
        written = hz.emit_report(table, tmp_path / "out")
        names = sorted(p.name for p in written)
        assert names == [
            "load_fix_small_Clayton.csv",
            "load_fix_small_Gaussian.csv",
            "load_fix_small_test.csv",
            "results.csv",
            "results.json",
            "synthetic_fix_small_Clayton.csv",
            "synthetic_fix_small_Gaussian.csv",
        ]

    def test_results_json_round_trips(self, small_table, tmp_path):
        _, table = small_table
        hz.emit_report(table, tmp_path)
        loaded = json.loads((tmp_path / "results.json").read_text())
        rebuilt = hz.ResultsTable.from_dict(loaded)
        assert rebuilt.to_dict() == table.to_dict()

    def test_results_csv_cell_format(self, small_table, tmp_path):
        _, table = small_table
        hz.emit_report(table, tmp_path)
        rows = pd.read_csv(tmp_path / "results.csv", dtype=str)
        assert list(rows.columns) == [
            "dataset",
            "model",
            *hz.METRIC_COLUMNS,
            "avg_rank",
            "status",
        ]
        cell = rows.iloc[0]["tau_diff"]
        mean_str, sd_str = cell.split(" ± ")
        float(mean_str), float(sd_str)  # both parse
        assert len(mean_str.split(".")[1]) == 4

    def test_same_table_emits_identical_bytes(self, small_table, tmp_path):
        _, table = small_table
        hz.emit_report(table, tmp_path / "a")
        hz.emit_report(table, tmp_path / "b")
        for fname in ("results.json", "results.csv"):
            assert (tmp_path / "a" / fname).read_bytes() == (
                tmp_path / "b" / fname
            ).read_bytes()

    def test_empty_table_rejected(self, tmp_path):
        table = hz.ResultsTable(
            models=(),
            datasets=(),
            records=[],
            summary={},
            ranks={},
            best_seed={},
            spans={},
            config={},
        )
        with pytest.raises(ValueError, match="empty"):
            hz.emit_report(table, tmp_path)

    def test_synthetic_csv_holds_best_seed_sample(self, small_table, tmp_path):
        _, table = small_table
        hz.emit_report(table, tmp_path)
        df = pd.read_csv(tmp_path / "synthetic_fix_small_Clayton.csv")
        assert list(df.columns) == ["arrival_shifted", "duration", "energy"]
        assert_allclose(df.to_numpy(), table.samples[("fix small", "Clayton")])
