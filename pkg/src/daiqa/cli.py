"""Command-line interface.

Exit codes: 0 success, 2 config error, 3 data error, 4 numerical failure.
Environment: DAIQA_DEVICE selects the compute device, DAIQA_DATA_ROOT the
data root; both are overridable by flags.
"""

from __future__ import annotations

import csv
import functools
import json
import logging
import sys
from pathlib import Path

import click
import numpy as np

from .distortions import DistortionSpec
from .errors import ConfigError, DataError, NumericalFailure
from .experiment import (
    ensure_scores,
    evaluate_rows,
    load_experiment_config,
    make_splits,
    run_experiment,
    score_batch,
    write_score_csv,
)
from .fingerprints import (
    build_fingerprint_set,
    embed_2d,
    export_coords_csv,
    response_matrix,
    save_fingerprint_png,
    write_grid,
)
from .manifest import Manifest
from .metrics import evaluate_scores, logistic_curve
from .quality import QualityRegressor
from .restorer import DomainAwareRestorer
from .synthesize import build_dataset, load_image

log = logging.getLogger(__name__)

device_option = click.option(
    "--device", envvar="DAIQA_DEVICE", default="cpu", show_default=True
)
root_option = click.option(
    "--root", envvar="DAIQA_DATA_ROOT", default=None, help="Data root override."
)


def handle_errors(fn):
    @functools.wraps(fn)
    def wrapper(*args, **kwargs):
        try:
            return fn(*args, **kwargs)
        except ConfigError as e:
            click.echo(f"config error: {e}", err=True)
            sys.exit(2)
        except DataError as e:
            click.echo(f"data error: {e}", err=True)
            sys.exit(3)
        except NumericalFailure as e:
            click.echo(f"numerical failure: {e}", err=True)
            sys.exit(4)

    return wrapper


@click.group()
def main():
    """Domain-aware no-reference image quality assessment lab."""
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(name)s: %(message)s")


@main.command()
@click.option("--pristine", required=True, type=click.Path(exists=True))
@click.option("--spec", "spec_file", required=True, type=click.Path(exists=True))
@click.option("--out", required=True, type=click.Path())
@click.option("--seed", default=0, show_default=True, type=int)
@handle_errors
def synth(pristine, spec_file, out, seed):
    """Synthesize a multi-domain distorted dataset from pristine images."""
    try:
        spec_json = json.loads(Path(spec_file).read_text())
        domains = [
            DistortionSpec(d["domain_id"], d["kind"], d["level"]) for d in spec_json
        ]
    except (json.JSONDecodeError, KeyError, TypeError) as e:
        raise ConfigError(f"bad domain spec file: {e}") from e
    manifest = build_dataset(pristine, domains, out, seed)
    click.echo(f"wrote {len(manifest.records)} records to {out}/manifest.jsonl")


def _restore_params(config):
    cfg = load_experiment_config(config) if config else None
    params = dict(cfg.restore) if cfg else {}
    if cfg:
        params["ablate_perceptual"] = not cfg.ablations["perceptual"]
        params["ablate_adversarial"] = not cfg.ablations["adversarial"]
        params["ablate_domain_cls"] = not cfg.ablations["domain_classification"]
        params["seed"] = cfg.seed
    return cfg, params


@main.command("train-restore")
@click.option("--manifest", "manifest_path", required=True, type=click.Path(exists=True))
@click.option("--config", default=None, type=click.Path(exists=True))
@click.option("--out", required=True, type=click.Path())
@device_option
@root_option
@handle_errors
def train_restore(manifest_path, config, out, device, root):
    """Train the restoration network on a split manifest."""
    out_dir = Path(out)
    out_dir.mkdir(parents=True, exist_ok=True)
    _, params = _restore_params(config)
    params["device"] = device
    restorer = DomainAwareRestorer(**params)
    restorer.fit(
        Manifest.load(manifest_path),
        root=root,
        log_path=out_dir / "restore_log.csv",
        checkpoint_path=out_dir / "restore.ckpt",
    )
    restorer.save(out_dir / "restore.ckpt")
    click.echo(f"checkpoint: {out_dir / 'restore.ckpt'}")


@main.command("train-regressor")
@click.option("--manifest", "manifest_path", required=True, type=click.Path(exists=True))
@click.option("--restore-ckpt", required=True, type=click.Path(exists=True))
@click.option("--config", default=None, type=click.Path(exists=True))
@click.option("--out", required=True, type=click.Path())
@click.option("--pseudo-oracle", default=None, help="Fill missing scores with this oracle.")
@device_option
@root_option
@handle_errors
def train_regressor(manifest_path, restore_ckpt, config, out, pseudo_oracle, device, root):
    """Train the quality regressor on top of a frozen restorer."""
    out_dir = Path(out)
    out_dir.mkdir(parents=True, exist_ok=True)
    cfg = load_experiment_config(config) if config else None
    params = dict(cfg.regressor) if cfg else {}
    if cfg:
        params["ablate_semantic_fusion"] = not cfg.ablations["semantic_fusion"]
        params["seed"] = cfg.seed
    manifest = Manifest.load(manifest_path)
    if pseudo_oracle:
        ensure_scores(manifest, root=root, oracle=pseudo_oracle)
    restorer = DomainAwareRestorer.load(restore_ckpt, device=device)
    regressor = QualityRegressor(restorer=restorer, device=device, **params)
    regressor.fit(
        manifest,
        root=root,
        log_path=out_dir / "regressor_log.csv",
        checkpoint_path=out_dir / "regressor.ckpt",
    )
    regressor.save(out_dir / "regressor.ckpt")
    click.echo(f"checkpoint: {out_dir / 'regressor.ckpt'}")


@main.command()
@click.option("--image", required=True, type=click.Path(exists=True))
@click.option("--restore-ckpt", required=True, type=click.Path(exists=True))
@click.option("--regressor-ckpt", required=True, type=click.Path(exists=True))
@click.option("--json", "as_json", is_flag=True, default=False)
@device_option
@handle_errors
def score(image, restore_ckpt, regressor_ckpt, as_json, device):
    """Predict quality and distortion type for one image."""
    restorer = DomainAwareRestorer.load(restore_ckpt, device=device)
    regressor = QualityRegressor.load(regressor_ckpt, restorer, device=device)
    report = regressor.predict_image(load_image(image))
    if as_json:
        click.echo(json.dumps(report.to_json()))
    else:
        click.echo(
            f"score={report.score:.4f} domain={report.predicted_domain} "
            f"confidence={report.domain_confidence:.3f} patches={report.n_patches}"
        )


@main.command("score-batch")
@click.option("--manifest", "manifest_path", required=True, type=click.Path(exists=True))
@click.option("--restore-ckpt", required=True, type=click.Path(exists=True))
@click.option("--regressor-ckpt", required=True, type=click.Path(exists=True))
@click.option("--out", required=True, type=click.Path())
@click.option("--split", default="test", show_default=True)
@device_option
@root_option
@handle_errors
def score_batch_cmd(manifest_path, restore_ckpt, regressor_ckpt, out, split, device, root):
    """Score every image of one split; emits image,score_pred,score_gt,domain_pred,domain_gt."""
    manifest = Manifest.load(manifest_path)
    restorer = DomainAwareRestorer.load(restore_ckpt, device=device)
    regressor = QualityRegressor.load(regressor_ckpt, restorer, device=device)
    rows = score_batch(regressor, manifest, root=root, split=split)
    write_score_csv(rows, out)
    click.echo(f"wrote {len(rows)} rows to {out}")


@main.command()
@click.option("--pred", "pred_csv", required=True, type=click.Path(exists=True))
@click.option("--out", required=True, type=click.Path())
@handle_errors
def evaluate(pred_csv, out):
    """Evaluate a prediction CSV into an EvalReport plus scatter CSV."""
    with open(pred_csv, newline="") as f:
        rows = [
            {
                "image": r["image"],
                "score_pred": float(r["score_pred"]),
                "score_gt": float(r["score_gt"]),
                "domain_pred": int(r["domain_pred"]),
                "domain_gt": int(r["domain_gt"]),
            }
            for r in csv.DictReader(f)
        ]
    if not rows:
        raise DataError(f"no rows in {pred_csv}")
    report = evaluate_rows(rows)
    Path(out).write_text(json.dumps(report.to_json(), indent=2))
    scatter = Path(out).with_suffix(".scatter.csv")
    yhat = np.array([r["score_pred"] for r in rows])
    y = np.array([r["score_gt"] for r in rows])
    fitted = (
        logistic_curve(yhat, report.logistic_params)
        if report.logistic_params is not None
        else yhat
    )
    with open(scatter, "w") as f:
        f.write("yhat,y,fitted\n")
        for a, b, c in zip(yhat, y, fitted):
            f.write(f"{a:.10g},{b:.10g},{c:.10g}\n")
    click.echo(f"srocc={report.srocc:.4f} plcc={report.plcc:.4f} -> {out}")


@main.command()
@click.option("--manifest", "manifest_path", required=True, type=click.Path(exists=True))
@click.option("--ckpt", required=True, type=click.Path(exists=True))
@click.option("--out", required=True, type=click.Path())
@click.option("--k", default=20, show_default=True, type=int)
@click.option("--split", default=None)
@click.option("--seed", default=0, type=int)
@device_option
@root_option
@handle_errors
def fingerprint(manifest_path, ckpt, out, k, split, seed, device, root):
    """Export per-domain model fingerprints and the response confusion matrix."""
    manifest = Manifest.load(manifest_path)
    restorer = DomainAwareRestorer.load(ckpt, device=device)
    out_dir = Path(out)
    out_dir.mkdir(parents=True, exist_ok=True)
    fps = build_fingerprint_set(manifest, restorer, k, seed=seed, root=root, split=split)
    for did, fp in fps.model_fps.items():
        save_fingerprint_png(fp, out_dir / f"domain_{did}.png")
        write_grid(fp, out_dir / f"domain_{did}.grid")
    result = response_matrix(manifest, fps, restorer, root=root, split=split)
    payload = {
        "domain_ids": result.domain_ids,
        "matrix": result.matrix.tolist(),
        "argmax_accuracy": result.argmax_accuracy,
        "empty_domains": result.empty_domains,
    }
    (out_dir / "responses.json").write_text(json.dumps(payload, indent=2))
    click.echo(f"argmax accuracy {result.argmax_accuracy:.3f} -> {out_dir}")


@main.command()
@click.option("--ckpt", required=True, type=click.Path(exists=True))
@click.option("--manifest", "manifest_path", required=True, type=click.Path(exists=True))
@click.option("--out", required=True, type=click.Path())
@click.option("--method", default="tsne", show_default=True)
@click.option("--split", default=None)
@click.option("--seed", default=0, type=int)
@device_option
@root_option
@handle_errors
def embed(ckpt, manifest_path, out, method, split, seed, device, root):
    """Export a 2-D embedding of degradation latents as x,y,label CSV."""
    manifest = Manifest.load(manifest_path)
    restorer = DomainAwareRestorer.load(ckpt, device=device)
    recs = manifest.subset(split=split)
    if not recs:
        raise DataError("no records in the requested split")
    images = [load_image(manifest.resolve(r, root)[0]) for r in recs]
    # sampled posteriors: a collapsed latent shows up as the prior cloud
    latents = restorer.encode_degradation(images, sample=True, seed=seed)
    coords = embed_2d(latents, [r.domain_id for r in recs], method=method, seed=seed)
    export_coords_csv(coords, out)
    click.echo(f"wrote {len(coords)} coordinates to {out}")


@main.command()
@click.option("--config", required=True, type=click.Path(exists=True))
@click.option("--manifest", "manifest_path", required=True, type=click.Path(exists=True))
@click.option("--out", required=True, type=click.Path())
@root_option
@handle_errors
def experiment(config, manifest_path, out, root):
    """Run the full train/evaluate pipeline with repeated trials."""
    cfg = load_experiment_config(config)
    summary = run_experiment(cfg, manifest_path, out, root=root)
    click.echo(json.dumps(summary, indent=2))


if __name__ == "__main__":
    main()
