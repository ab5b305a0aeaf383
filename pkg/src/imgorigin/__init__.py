"""Origin attribution for images of small white-box generative models.

Given a model M and an image x, reverse-engineer the input whose output
best matches x, calibrate the resulting reconstruction loss against an
independent reference model, and decide with a one-sided outlier test
whether x is something M can produce. See the README for the full tour.
"""

__version__ = "0.1.0"

from .attribution import (
    EPS_REFERENCE,
    AttributionVerdict,
    OriginAttributor,
    attribute,
    calibrate,
    ensure_distribution,
    estimate_belonging_distribution,
    load_distribution,
    save_distribution,
)
from .datasets import Dataset, DatasetSpec, load_dataset, make_overlapping, save_dataset, synth_dataset
from .exceptions import (
    ConfigMismatchError,
    DegenerateDistributionError,
    GradientUnavailableError,
    ImgOriginError,
    InversionError,
    MissingArtifactError,
    ShapeMismatchError,
    TensorFormatError,
)
from .inversion import (
    InversionConfig,
    InversionResult,
    config_hash,
    exhaustive_invert,
    reverse_engineer,
)
from .metrics import METRICS, distance, distance_gradient, ssim
from .models import (
    ARCHITECTURES,
    GridModel,
    LinearDecoder,
    MlpDecoder,
    ModelInput,
    load_checkpoint,
    sample_inputs,
    save_checkpoint,
    train_decoder,
)
from .scenarios import (
    SCENARIOS,
    ConfusionReport,
    FilterParams,
    Scenario,
    ScenarioResult,
    apply_filter,
    emit_report,
    read_report,
    run_scenario,
)
from .stats import (
    BelongingDistribution,
    GrubbsDecision,
    grubbs_decide,
    grubbs_threshold,
    regularized_incomplete_beta,
    t_cdf,
    t_pdf,
    t_quantile,
)
from .tensorio import Rng, derive_seed, elementwise, matmul, read_tensor, write_tensor

__all__ = [
    "ARCHITECTURES",
    "AttributionVerdict",
    "BelongingDistribution",
    "ConfigMismatchError",
    "ConfusionReport",
    "Dataset",
    "DatasetSpec",
    "DegenerateDistributionError",
    "EPS_REFERENCE",
    "FilterParams",
    "GradientUnavailableError",
    "GridModel",
    "GrubbsDecision",
    "ImgOriginError",
    "InversionConfig",
    "InversionError",
    "InversionResult",
    "LinearDecoder",
    "METRICS",
    "MissingArtifactError",
    "MlpDecoder",
    "ModelInput",
    "OriginAttributor",
    "Rng",
    "SCENARIOS",
    "Scenario",
    "ScenarioResult",
    "ShapeMismatchError",
    "TensorFormatError",
    "apply_filter",
    "attribute",
    "calibrate",
    "config_hash",
    "derive_seed",
    "distance",
    "distance_gradient",
    "elementwise",
    "emit_report",
    "ensure_distribution",
    "estimate_belonging_distribution",
    "exhaustive_invert",
    "grubbs_decide",
    "grubbs_threshold",
    "load_checkpoint",
    "load_dataset",
    "load_distribution",
    "make_overlapping",
    "matmul",
    "read_report",
    "read_tensor",
    "regularized_incomplete_beta",
    "reverse_engineer",
    "run_scenario",
    "sample_inputs",
    "save_checkpoint",
    "save_dataset",
    "save_distribution",
    "ssim",
    "synth_dataset",
    "t_cdf",
    "t_pdf",
    "t_quantile",
    "train_decoder",
    "write_tensor",
]
