import copy
import json

import numpy as np
import pytest

from daiqa.errors import ConfigError, DataError
from daiqa.experiment import (
    ExperimentConfig,
    ensure_scores,
    evaluate_rows,
    load_experiment_config,
    make_splits,
    run_experiment,
    score_batch,
    write_score_csv,
)
from daiqa.manifest import Manifest


class TestMakeSplits:
    def test_reference_groups_stay_together(self, tiny_manifest):
        by_ref = {}
        for rec in tiny_manifest.records:
            by_ref.setdefault(rec.ref_path, set()).add(rec.split)
        for splits in by_ref.values():
            assert len(splits) == 1

    def test_fractions_by_largest_remainder(self, tiny_manifest):
        m = copy.deepcopy(tiny_manifest)
        make_splits(m, fractions=(0.6, 0.2, 0.2), seed=0, force=True)
        groups = {r.ref_path: r.split for r in m.records}
        counts = {s: sum(1 for v in groups.values() if v == s) for s in ("train", "val", "test")}
        # 6 groups at (0.6, 0.2, 0.2) -> floor (3,1,1) + 1 remainder to train
        assert counts == {"train": 4, "val": 1, "test": 1}

    def test_deterministic_given_seed(self, tiny_manifest):
        a = copy.deepcopy(tiny_manifest)
        b = copy.deepcopy(tiny_manifest)
        make_splits(a, seed=5, force=True)
        make_splits(b, seed=5, force=True)
        assert [r.split for r in a.records] == [r.split for r in b.records]
        c = copy.deepcopy(tiny_manifest)
        make_splits(c, seed=6, force=True)
        assert [r.split for r in a.records] != [r.split for r in c.records]

    def test_already_split_needs_force(self, tiny_manifest):
        m = copy.deepcopy(tiny_manifest)
        with pytest.raises(ConfigError, match="force"):
            make_splits(m, seed=0)
        make_splits(m, seed=0, force=True)

    def test_too_few_groups_fatal(self, tiny_manifest):
        m = copy.deepcopy(tiny_manifest)
        ref = m.records[0].ref_path
        m.records = [r for r in m.records if r.ref_path == ref]
        with pytest.raises(DataError, match="at least 3"):
            make_splits(m, seed=0, force=True)

    def test_bad_fractions_rejected(self, tiny_manifest):
        with pytest.raises(ConfigError, match="sum to 1"):
            make_splits(copy.deepcopy(tiny_manifest), fractions=(0.5, 0.2, 0.2), force=True)

    def test_unknown_grouping_rejected(self, tiny_manifest):
        with pytest.raises(ConfigError, match="grouping"):
            make_splits(copy.deepcopy(tiny_manifest), grouping="by_image", force=True)


class TestExperimentConfig:
    def test_defaults(self):
        cfg = ExperimentConfig()
        assert cfg.fractions == (0.6, 0.2, 0.2)
        assert all(cfg.ablations.values())

    def test_hash_stable_and_sensitive(self):
        a = ExperimentConfig(seed=1)
        b = ExperimentConfig(seed=1)
        c = ExperimentConfig(seed=2)
        assert a.config_hash() == b.config_hash()
        assert a.config_hash() != c.config_hash()
        assert len(a.config_hash()) == 16

    def test_invalid_values_rejected(self):
        with pytest.raises(ConfigError, match="repeats"):
            ExperimentConfig(repeats=0)
        with pytest.raises(ConfigError, match="sum to 1"):
            ExperimentConfig(train_frac=0.9, val_frac=0.2, test_frac=0.2)
        with pytest.raises(ConfigError, match="ablation"):
            ExperimentConfig(ablations={"gravity": True})


class TestConfigFile:
    def _write(self, tmp_path, text):
        p = tmp_path / "exp.ini"
        p.write_text(text)
        return p

    def test_full_parse(self, tmp_path):
        cfg = load_experiment_config(
            self._write(
                tmp_path,
                """
[experiment]
seed = 3
repeats = 2
pseudo_oracle = ssim_like

[restore]
iterations = 50
lam_kl = 0.05

[regressor]
iterations = 20

[ablations]
adversarial = false
""",
            )
        )
        assert cfg.seed == 3 and cfg.repeats == 2
        assert cfg.pseudo_oracle == "ssim_like"
        assert cfg.restore == {"iterations": 50, "lam_kl": 0.05}
        assert cfg.regressor == {"iterations": 20}
        assert cfg.ablations["adversarial"] is False
        assert cfg.ablations["perceptual"] is True

    def test_unknown_key_rejected(self, tmp_path):
        with pytest.raises(ConfigError, match="unknown key"):
            load_experiment_config(self._write(tmp_path, "[restore]\nwarp_speed = 9\n"))

    def test_unknown_section_rejected(self, tmp_path):
        with pytest.raises(ConfigError, match="unknown config section"):
            load_experiment_config(self._write(tmp_path, "[telemetry]\nx = 1\n"))

    def test_bad_value_type_rejected(self, tmp_path):
        with pytest.raises(ConfigError, match="bad value"):
            load_experiment_config(self._write(tmp_path, "[restore]\niterations = soon\n"))

    def test_unknown_ablation_rejected(self, tmp_path):
        with pytest.raises(ConfigError, match="ablation"):
            load_experiment_config(self._write(tmp_path, "[ablations]\ngravity = true\n"))

    def test_missing_file_rejected(self, tmp_path):
        with pytest.raises(ConfigError, match="not found"):
            load_experiment_config(tmp_path / "nope.ini")


class TestScoring:
    def test_ensure_scores_fills_only_missing(self, tiny_manifest):
        m = copy.deepcopy(tiny_manifest)
        m.records[0].score = 0.123
        ensure_scores(m)
        assert m.records[0].score == 0.123
        assert all(r.score is not None for r in m.records)
        assert all(0.0 <= r.score <= 1.0 for r in m.records)

    def test_write_score_csv_round_trip(self, tmp_path):
        rows = [
            {"image": "a.png", "score_pred": 0.5, "score_gt": 0.6, "domain_pred": 0,
             "domain_gt": 1},
        ]
        path = tmp_path / "scores.csv"
        write_score_csv(rows, path)
        lines = path.read_text().splitlines()
        assert lines[0] == "image,score_pred,score_gt,domain_pred,domain_gt"
        assert lines[1].startswith("a.png,0.5,0.6,0,1")

    def test_evaluate_rows(self, rng):
        gt = rng.uniform(0, 1, 20)
        rows = [
            {"image": f"{i}.png", "score_pred": g + rng.normal(0, 0.01), "score_gt": g,
             "domain_pred": 0, "domain_gt": i % 2}
            for i, g in enumerate(gt)
        ]
        report = evaluate_rows(rows)
        assert report.srocc > 0.9
        assert report.accuracy == pytest.approx(0.5)


class TestRunExperiment:
    def test_end_to_end_artifacts(self, tiny_manifest, tmp_path, data_root):
        manifest_path = data_root / "tiny" / "manifest.jsonl"
        cfg = ExperimentConfig(
            repeats=1,
            restore={"iterations": 10, "lam_kl": 0.05},
            regressor={"iterations": 10},
        )
        out = tmp_path / "run"
        summary = run_experiment(cfg, manifest_path, out)
        assert summary["completed"] == 1
        assert summary["failures"] == []
        assert summary["config_hash"] == cfg.config_hash()
        rdir = out / "repeat_00"
        for name in ("run.json", "manifest.jsonl", "restore.ckpt", "regressor.ckpt",
                     "scores.csv", "report.json", "restore_log.csv", "regressor_log.csv"):
            assert (rdir / name).exists(), name
        report = json.loads((rdir / "report.json").read_text())
        assert report["config_hash"] == cfg.config_hash()
        assert (out / "summary.json").exists()
        assert summary["srocc"] is not None and np.isfinite(summary["srocc"]["mean"])

    def test_failures_recorded_not_raised(self, tmp_path, data_root):
        cfg = ExperimentConfig(repeats=1, restore={"iterations": 1})
        summary = run_experiment(cfg, data_root / "tiny" / "missing.jsonl", tmp_path / "r")
        assert summary["completed"] == 0
        assert len(summary["failures"]) == 1
        assert "DataError" in summary["failures"][0]["error"]
