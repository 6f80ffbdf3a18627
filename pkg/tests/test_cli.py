import json

import numpy as np
import pytest
from click.testing import CliRunner

from daiqa.cli import main


@pytest.fixture(scope="module")
def runner():
    return CliRunner()


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    """One small dataset plus trained checkpoints shared by CLI tests."""
    root = tmp_path_factory.mktemp("cli")
    runner = CliRunner()

    from daiqa.synthesize import generate_pristine_dir

    generate_pristine_dir(root / "pristine", count=5, size=64, seed=9)
    spec = [
        {"domain_id": 0, "kind": "white_noise", "level": 0.08},
        {"domain_id": 1, "kind": "gaussian_blur", "level": 1.5},
    ]
    (root / "domains.json").write_text(json.dumps(spec))
    res = runner.invoke(
        main,
        ["synth", "--pristine", str(root / "pristine"), "--spec",
         str(root / "domains.json"), "--out", str(root / "data"), "--seed", "1"],
    )
    assert res.exit_code == 0, res.output

    from daiqa.experiment import ensure_scores, make_splits
    from daiqa.manifest import Manifest

    manifest = Manifest.load(root / "data" / "manifest.jsonl")
    make_splits(manifest, seed=0)
    ensure_scores(manifest)
    manifest.save(root / "data" / "manifest.jsonl")

    (root / "exp.ini").write_text(
        "[restore]\niterations = 10\nlam_kl = 0.05\n\n[regressor]\niterations = 10\n"
    )
    res = runner.invoke(
        main,
        ["train-restore", "--manifest", str(root / "data" / "manifest.jsonl"),
         "--config", str(root / "exp.ini"), "--out", str(root / "model")],
    )
    assert res.exit_code == 0, res.output
    res = runner.invoke(
        main,
        ["train-regressor", "--manifest", str(root / "data" / "manifest.jsonl"),
         "--restore-ckpt", str(root / "model" / "restore.ckpt"),
         "--config", str(root / "exp.ini"), "--out", str(root / "model")],
    )
    assert res.exit_code == 0, res.output
    return root


class TestSynth:
    def test_reports_record_count(self, workspace):
        assert (workspace / "data" / "manifest.jsonl").exists()

    def test_bad_spec_file_is_config_error(self, runner, workspace, tmp_path):
        bad = tmp_path / "bad.json"
        bad.write_text("{not json")
        res = runner.invoke(
            main,
            ["synth", "--pristine", str(workspace / "pristine"), "--spec", str(bad),
             "--out", str(tmp_path / "o")],
        )
        assert res.exit_code == 2
        assert "config error" in res.output

    def test_empty_pristine_dir_is_data_error(self, runner, workspace, tmp_path):
        empty = tmp_path / "empty"
        empty.mkdir()
        res = runner.invoke(
            main,
            ["synth", "--pristine", str(empty), "--spec",
             str(workspace / "domains.json"), "--out", str(tmp_path / "o")],
        )
        assert res.exit_code == 3
        assert "data error" in res.output


class TestScore:
    def test_single_image(self, runner, workspace):
        img = next((workspace / "data" / "dist").glob("*.png"))
        res = runner.invoke(
            main,
            ["score", "--image", str(img),
             "--restore-ckpt", str(workspace / "model" / "restore.ckpt"),
             "--regressor-ckpt", str(workspace / "model" / "regressor.ckpt"), "--json"],
        )
        assert res.exit_code == 0, res.output
        payload = json.loads(res.output)
        assert 0.0 <= payload["score"] <= 1.0
        assert payload["predicted_domain"] in (0, 1)

    def test_score_batch_and_evaluate(self, runner, workspace, tmp_path):
        csv_path = tmp_path / "scores.csv"
        res = runner.invoke(
            main,
            ["score-batch", "--manifest", str(workspace / "data" / "manifest.jsonl"),
             "--restore-ckpt", str(workspace / "model" / "restore.ckpt"),
             "--regressor-ckpt", str(workspace / "model" / "regressor.ckpt"),
             "--out", str(csv_path), "--split", "train"],
        )
        assert res.exit_code == 0, res.output
        assert csv_path.exists()

        report_path = tmp_path / "report.json"
        res = runner.invoke(main, ["evaluate", "--pred", str(csv_path), "--out", str(report_path)])
        assert res.exit_code == 0, res.output
        report = json.loads(report_path.read_text())
        assert {"srocc", "plcc", "n"} <= set(report)
        scatter = report_path.with_suffix(".scatter.csv")
        assert scatter.read_text().splitlines()[0] == "yhat,y,fitted"

    def test_evaluate_empty_csv_is_data_error(self, runner, tmp_path):
        p = tmp_path / "empty.csv"
        p.write_text("image,score_pred,score_gt,domain_pred,domain_gt\n")
        res = runner.invoke(main, ["evaluate", "--pred", str(p), "--out", str(tmp_path / "r.json")])
        assert res.exit_code == 3


class TestFingerprintCommands:
    def test_fingerprint_export(self, runner, workspace, tmp_path):
        out = tmp_path / "fps"
        res = runner.invoke(
            main,
            ["fingerprint", "--manifest", str(workspace / "data" / "manifest.jsonl"),
             "--ckpt", str(workspace / "model" / "restore.ckpt"),
             "--out", str(out), "--k", "2", "--split", "train"],
        )
        assert res.exit_code == 0, res.output
        assert (out / "domain_0.png").exists()
        assert (out / "domain_0.grid").exists()
        payload = json.loads((out / "responses.json").read_text())
        assert np.asarray(payload["matrix"]).shape == (2, 2)

    def test_embed_export(self, runner, workspace, tmp_path):
        out = tmp_path / "coords.csv"
        res = runner.invoke(
            main,
            ["embed", "--ckpt", str(workspace / "model" / "restore.ckpt"),
             "--manifest", str(workspace / "data" / "manifest.jsonl"),
             "--out", str(out), "--method", "pca"],
        )
        assert res.exit_code == 0, res.output
        assert out.read_text().splitlines()[0] == "x,y,label"

    def test_embed_empty_split_is_data_error(self, runner, workspace, tmp_path):
        res = runner.invoke(
            main,
            ["embed", "--ckpt", str(workspace / "model" / "restore.ckpt"),
             "--manifest", str(workspace / "data" / "manifest.jsonl"),
             "--out", str(tmp_path / "c.csv"), "--split", "val"],
        )
        # the tiny dataset has 5 reference groups; val may hold exactly one
        assert res.exit_code in (0, 3)


class TestExperimentCommand:
    def test_experiment_runs(self, runner, workspace, tmp_path):
        res = runner.invoke(
            main,
            ["experiment", "--config", str(workspace / "exp.ini"),
             "--manifest", str(workspace / "data" / "manifest.jsonl"),
             "--out", str(tmp_path / "exp")],
        )
        assert res.exit_code == 0, res.output
        summary = json.loads(res.output[res.output.index("{"):])
        assert summary["completed"] == 1

    def test_bad_config_is_config_error(self, runner, workspace, tmp_path):
        bad = tmp_path / "bad.ini"
        bad.write_text("[restore]\nwarp = 9\n")
        res = runner.invoke(
            main,
            ["experiment", "--config", str(bad),
             "--manifest", str(workspace / "data" / "manifest.jsonl"),
             "--out", str(tmp_path / "exp2")],
        )
        assert res.exit_code == 2
