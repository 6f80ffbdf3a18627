"""Shared fixtures: a small synthetic dataset and quickly trained estimators.

Session-scoped so the expensive pieces (synthesis, short training runs) happen
once; everything downstream treats them as read-only.
"""

import numpy as np
import pytest

from daiqa.distortions import DistortionSpec
from daiqa.experiment import make_splits
from daiqa.restorer import DomainAwareRestorer
from daiqa.synthesize import build_dataset, generate_pristine_dir


@pytest.fixture(scope="session")
def data_root(tmp_path_factory):
    return tmp_path_factory.mktemp("data")


@pytest.fixture(scope="session")
def pristine_dir(data_root):
    out = data_root / "pristine"
    generate_pristine_dir(out, count=6, size=64, seed=7)
    return out


@pytest.fixture(scope="session")
def tiny_domains():
    return [
        DistortionSpec(0, "white_noise", 0.08),
        DistortionSpec(1, "gaussian_blur", 1.5),
    ]


@pytest.fixture(scope="session")
def tiny_manifest(data_root, pristine_dir, tiny_domains):
    manifest = build_dataset(pristine_dir, tiny_domains, data_root / "tiny", seed=3)
    make_splits(manifest, seed=0)
    manifest.save(data_root / "tiny" / "manifest.jsonl")
    return manifest


@pytest.fixture(scope="session")
def tiny_restorer(tiny_manifest):
    est = DomainAwareRestorer(iterations=30, lam_kl=0.05, seed=0)
    est.fit(tiny_manifest)
    return est


@pytest.fixture()
def rng():
    return np.random.default_rng(0)


@pytest.fixture()
def flat_image():
    return np.full((64, 64, 3), 0.5)


@pytest.fixture()
def textured_image():
    r = np.random.default_rng(42)
    base = r.uniform(0.1, 0.9, (64, 64, 3))
    return base
