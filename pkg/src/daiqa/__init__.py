"""Domain-aware no-reference image quality assessment lab."""

from .distortions import DistortionSpec, apply_distortion
from .errors import ConfigError, DaiqaError, DataError, NumericalFailure
from .manifest import Manifest, SampleRecord
from .metrics import EvalReport, confusion, logistic_fit, plcc, pseudo_label, srocc
from .patches import sample_patches
from .quality import QualityRegressor, QualityReport, aggregate
from .restorer import DomainAwareRestorer, RestorationOutput
from .synthesize import build_dataset, generate_pristine_dir

__version__ = "0.1.0"

__all__ = [
    "DistortionSpec",
    "apply_distortion",
    "Manifest",
    "SampleRecord",
    "sample_patches",
    "build_dataset",
    "generate_pristine_dir",
    "DomainAwareRestorer",
    "RestorationOutput",
    "QualityRegressor",
    "QualityReport",
    "aggregate",
    "plcc",
    "srocc",
    "confusion",
    "logistic_fit",
    "pseudo_label",
    "EvalReport",
    "DaiqaError",
    "ConfigError",
    "DataError",
    "NumericalFailure",
]
