"""Dataset manifests: one JSON object per line, header first.

Header line: {"version", "root", "seed", "domains": [{"domain_id", "kind", "level"}]}
Record line: {"image_path", "ref_path", "domain_id", "kind", "level", "score", "split"}

Scores live in [0, 1] with higher = better. MOS in [0, 9] maps by s/9, DMOS in
[0, 100] by 1 - s/100.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

from .distortions import DistortionSpec
from .errors import DataError

FORMAT_VERSION = 1

SPLITS = ("train", "val", "test")


@dataclass
class SampleRecord:
    image_path: str
    ref_path: str
    domain_id: int
    kind: str
    level: float
    score: float | None = None
    split: str | None = None

    def to_json(self):
        return {
            "image_path": self.image_path,
            "ref_path": self.ref_path,
            "domain_id": self.domain_id,
            "kind": self.kind,
            "level": self.level,
            "score": self.score,
            "split": self.split,
        }


@dataclass
class Manifest:
    root: str
    seed: int
    domains: list[DistortionSpec] = field(default_factory=list)
    records: list[SampleRecord] = field(default_factory=list)

    def __post_init__(self):
        ids = [d.domain_id for d in self.domains]
        if len(ids) != len(set(ids)):
            raise DataError("duplicate domain_id in manifest domains")

    @property
    def n_domains(self):
        return len(self.domains)

    def domain_by_id(self, domain_id):
        for d in self.domains:
            if d.domain_id == domain_id:
                return d
        raise DataError(f"domain_id {domain_id} not in manifest")

    def validate(self):
        known = {d.domain_id for d in self.domains}
        for rec in self.records:
            if rec.domain_id not in known:
                raise DataError(f"record {rec.image_path}: unknown domain {rec.domain_id}")
            if rec.split is not None and rec.split not in SPLITS:
                raise DataError(f"record {rec.image_path}: bad split {rec.split!r}")
        return self

    def subset(self, split=None, domain_id=None):
        recs = self.records
        if split is not None:
            recs = [r for r in recs if r.split == split]
        if domain_id is not None:
            recs = [r for r in recs if r.domain_id == domain_id]
        return recs

    def resolve(self, rec: SampleRecord, root=None):
        """Absolute (image_path, ref_path) for a record."""
        base = Path(root if root is not None else self.root)
        return base / rec.image_path, base / rec.ref_path

    def serialize(self) -> str:
        header = {
            "version": FORMAT_VERSION,
            "root": self.root,
            "seed": self.seed,
            "domains": [
                {"domain_id": d.domain_id, "kind": d.kind, "level": d.level}
                for d in self.domains
            ],
        }
        lines = [json.dumps(header, sort_keys=True)]
        lines.extend(json.dumps(r.to_json(), sort_keys=True) for r in self.records)
        return "\n".join(lines) + "\n"

    def save(self, path):
        Path(path).write_text(self.serialize(), encoding="utf-8")

    @classmethod
    def parse(cls, text: str) -> "Manifest":
        lines = [ln for ln in text.splitlines() if ln.strip()]
        if not lines:
            raise DataError("empty manifest")
        try:
            header = json.loads(lines[0])
        except json.JSONDecodeError as e:
            raise DataError(f"bad manifest header: {e}") from e
        if header.get("version") != FORMAT_VERSION:
            raise DataError(f"unsupported manifest version {header.get('version')}")
        domains = [
            DistortionSpec(d["domain_id"], d["kind"], d["level"])
            for d in header["domains"]
        ]
        records = []
        for ln in lines[1:]:
            obj = json.loads(ln)
            records.append(
                SampleRecord(
                    image_path=obj["image_path"],
                    ref_path=obj["ref_path"],
                    domain_id=obj["domain_id"],
                    kind=obj["kind"],
                    level=obj["level"],
                    score=obj.get("score"),
                    split=obj.get("split"),
                )
            )
        m = cls(root=header["root"], seed=header["seed"], domains=domains, records=records)
        return m.validate()

    @classmethod
    def load(cls, path) -> "Manifest":
        p = Path(path)
        if not p.exists():
            raise DataError(f"manifest not found: {p}")
        return cls.parse(p.read_text(encoding="utf-8"))
