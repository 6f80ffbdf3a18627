"""Experiment orchestration: reference-grouped splits, flat config files,
repeated train/evaluate runs with derived seeds, and summary reports."""

from __future__ import annotations

import configparser
import csv
import hashlib
import json
import logging
import math
from dataclasses import dataclass, field, asdict
from pathlib import Path

import numpy as np

from .errors import ConfigError, DataError
from .manifest import Manifest
from .metrics import confusion, evaluate_scores, pseudo_label
from .quality import QualityRegressor
from .restorer import DomainAwareRestorer
from .synthesize import load_image

log = logging.getLogger(__name__)


def make_splits(manifest, fractions=(0.6, 0.2, 0.2), seed=0, grouping="by_reference",
                force=False):
    """Assign train/val/test splits grouped by reference image.

    Grouping by reference keeps pristine content disjoint across splits.
    Deterministic given the seed. Fewer than 3 reference groups is fatal.
    """
    if grouping != "by_reference":
        raise ConfigError(f"unknown grouping {grouping!r}")
    if abs(sum(fractions) - 1.0) > 1e-9:
        raise ConfigError(f"split fractions must sum to 1, got {fractions}")
    if any(r.split is not None for r in manifest.records) and not force:
        raise ConfigError("manifest already split; pass force=True to resplit")
    groups = sorted({r.ref_path for r in manifest.records})
    g = len(groups)
    if g < 3:
        raise DataError(f"need at least 3 reference groups, got {g}")
    rng = np.random.default_rng(seed)
    order = [groups[i] for i in rng.permutation(g)]
    base = [math.floor(f * g) for f in fractions]
    remainder = g - sum(base)
    fracs = [(f * g - b, i) for i, (f, b) in enumerate(zip(fractions, base))]
    for _, i in sorted(fracs, key=lambda t: (-t[0], t[1]))[:remainder]:
        base[i] += 1
    assignment = {}
    cursor = 0
    for split, count in zip(("train", "val", "test"), base):
        for ref in order[cursor : cursor + count]:
            assignment[ref] = split
        cursor += count
    for rec in manifest.records:
        rec.split = assignment[rec.ref_path]
    return manifest


ABLATION_FLAGS = ("perceptual", "adversarial", "semantic_fusion", "domain_classification")


@dataclass
class ExperimentConfig:
    seed: int = 0
    repeats: int = 1
    train_frac: float = 0.6
    val_frac: float = 0.2
    test_frac: float = 0.2
    pseudo_oracle: str = "psnr_mapped"
    restore: dict = field(default_factory=dict)
    regressor: dict = field(default_factory=dict)
    ablations: dict = field(
        default_factory=lambda: {k: True for k in ABLATION_FLAGS}
    )

    def __post_init__(self):
        if self.repeats < 1:
            raise ConfigError("repeats must be >= 1")
        if abs(self.train_frac + self.val_frac + self.test_frac - 1.0) > 1e-9:
            raise ConfigError("split fractions must sum to 1")
        for k in self.ablations:
            if k not in ABLATION_FLAGS:
                raise ConfigError(f"unknown ablation flag {k!r}")

    @property
    def fractions(self):
        return (self.train_frac, self.val_frac, self.test_frac)

    def config_hash(self):
        blob = json.dumps(asdict(self), sort_keys=True, default=str)
        return hashlib.sha256(blob.encode()).hexdigest()[:16]


_EXPERIMENT_KEYS = {
    "seed": int,
    "repeats": int,
    "train_frac": float,
    "val_frac": float,
    "test_frac": float,
    "pseudo_oracle": str,
}

_RESTORE_KEYS = {
    "depth": int,
    "base_channels": int,
    "content_channels": int,
    "degradation_dim": int,
    "lam_kl": float,
    "lam_perceptual": float,
    "gan_mode": str,
    "lr": float,
    "beta1": float,
    "beta2": float,
    "batch_size": int,
    "iterations": int,
    "train_patch_size": int,
    "extractor_seed": int,
}

_REGRESSOR_KEYS = {
    "patch_size": int,
    "test_stride": int,
    "fusion_dim": int,
    "eps": float,
    "lr": float,
    "batch_size": int,
    "iterations": int,
}


def _parse_section(parser, name, schema):
    out = {}
    if not parser.has_section(name):
        return out
    for key, raw in parser.items(name):
        if key not in schema:
            raise ConfigError(f"unknown key {key!r} in section [{name}]")
        try:
            out[key] = schema[key](raw)
        except ValueError as e:
            raise ConfigError(f"bad value for {name}.{key}: {raw!r}") from e
    return out


def load_experiment_config(path):
    """Parse the flat sectioned key-value config file; unknown keys are errors."""
    p = Path(path)
    if not p.exists():
        raise ConfigError(f"config file not found: {p}")
    parser = configparser.ConfigParser()
    try:
        parser.read_string(p.read_text())
    except configparser.Error as e:
        raise ConfigError(f"cannot parse config: {e}") from e
    known = {"experiment", "restore", "regressor", "ablations"}
    for section in parser.sections():
        if section not in known:
            raise ConfigError(f"unknown config section [{section}]")
    exp = _parse_section(parser, "experiment", _EXPERIMENT_KEYS)
    restore = _parse_section(parser, "restore", _RESTORE_KEYS)
    regressor = _parse_section(parser, "regressor", _REGRESSOR_KEYS)
    ablations = {k: True for k in ABLATION_FLAGS}
    if parser.has_section("ablations"):
        for key, raw in parser.items("ablations"):
            if key not in ABLATION_FLAGS:
                raise ConfigError(f"unknown ablation flag {key!r}")
            ablations[key] = parser.getboolean("ablations", key)
    return ExperimentConfig(restore=restore, regressor=regressor, ablations=ablations, **exp)


def ensure_scores(manifest, root=None, oracle="psnr_mapped"):
    """Fill missing record scores with the full-reference pseudo-label oracle."""
    for rec in manifest.records:
        if rec.score is None:
            dist_p, ref_p = manifest.resolve(rec, root)
            rec.score = pseudo_label(load_image(dist_p), load_image(ref_p), oracle=oracle)
    return manifest


def score_batch(regressor, manifest, root=None, split="test"):
    """Per-image predictions: rows of (image, score_pred, score_gt,
    domain_pred, domain_gt)."""
    rows = []
    for rec in manifest.subset(split=split):
        img = load_image(manifest.resolve(rec, root)[0])
        report = regressor.predict_image(img)
        rows.append(
            {
                "image": rec.image_path,
                "score_pred": report.score,
                "score_gt": rec.score,
                "domain_pred": report.predicted_domain,
                "domain_gt": rec.domain_id,
            }
        )
    return rows


def write_score_csv(rows, path):
    with open(path, "w", newline="") as f:
        writer = csv.DictWriter(
            f, fieldnames=["image", "score_pred", "score_gt", "domain_pred", "domain_gt"]
        )
        writer.writeheader()
        for row in rows:
            writer.writerow(row)


def evaluate_rows(rows, n_domains=None):
    y = np.array([r["score_gt"] for r in rows], dtype=np.float64)
    yhat = np.array([r["score_pred"] for r in rows], dtype=np.float64)
    td = np.array([r["domain_gt"] for r in rows], dtype=int)
    pd_ = np.array([r["domain_pred"] for r in rows], dtype=int)
    return evaluate_scores(y, yhat, true_domains=td, pred_domains=pd_, n_domains=n_domains)


def run_experiment(config: ExperimentConfig, manifest_path, out_dir, root=None):
    """Train restore -> train regressor -> evaluate, repeated with derived
    seeds; writes per-repeat artifacts and a mean/std summary.

    A stage failure is recorded with its repeat index and later repeats
    continue.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    chash = config.config_hash()
    reports = []
    failures = []
    for r in range(config.repeats):
        seed_r = config.seed + r
        rdir = out / f"repeat_{r:02d}"
        rdir.mkdir(exist_ok=True)
        (rdir / "run.json").write_text(
            json.dumps({"config_hash": chash, "seed": seed_r}, indent=2)
        )
        try:
            manifest = Manifest.load(manifest_path)
            make_splits(manifest, config.fractions, seed=seed_r, force=True)
            ensure_scores(manifest, root=root, oracle=config.pseudo_oracle)
            manifest.save(rdir / "manifest.jsonl")

            restorer = DomainAwareRestorer(
                seed=seed_r,
                ablate_perceptual=not config.ablations["perceptual"],
                ablate_adversarial=not config.ablations["adversarial"],
                ablate_domain_cls=not config.ablations["domain_classification"],
                **config.restore,
            )
            restorer.fit(
                manifest,
                root=root,
                log_path=rdir / "restore_log.csv",
                checkpoint_path=rdir / "restore.ckpt",
            )
            restorer.save(rdir / "restore.ckpt")

            regressor = QualityRegressor(
                restorer=restorer,
                seed=seed_r,
                ablate_semantic_fusion=not config.ablations["semantic_fusion"],
                **config.regressor,
            )
            regressor.fit(
                manifest,
                root=root,
                log_path=rdir / "regressor_log.csv",
                checkpoint_path=rdir / "regressor.ckpt",
            )
            regressor.save(rdir / "regressor.ckpt")

            rows = score_batch(regressor, manifest, root=root, split="test")
            write_score_csv(rows, rdir / "scores.csv")
            report = evaluate_rows(rows)
            payload = report.to_json()
            payload.update({"config_hash": chash, "seed": seed_r})
            (rdir / "report.json").write_text(json.dumps(payload, indent=2))
            reports.append(report)
        except Exception as e:  # record and continue with later repeats
            log.exception("repeat %d failed", r)
            failures.append({"repeat": r, "error": f"{type(e).__name__}: {e}"})

    def stats(key):
        vals = [getattr(rep, key) for rep in reports if getattr(rep, key) is not None]
        if not vals:
            return None
        return {"mean": float(np.mean(vals)), "std": float(np.std(vals))}

    summary = {
        "config_hash": chash,
        "seed": config.seed,
        "repeats": config.repeats,
        "completed": len(reports),
        "failures": failures,
        "srocc": stats("srocc"),
        "plcc": stats("plcc"),
        "accuracy": stats("accuracy"),
    }
    (out / "summary.json").write_text(json.dumps(summary, indent=2))
    return summary
