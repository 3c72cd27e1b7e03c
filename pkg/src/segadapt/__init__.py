"""Source-free domain adaptation for desk-scale semantic segmentation.

Train a per-pixel segmentation network on a labeled source domain, replace
the source data with a confidence-filtered class-conditional Gaussian
mixture over its embedding space, and adapt to an unlabeled target domain by
minimizing the sliced Wasserstein distance between target embeddings and
surrogate samples.
"""

from .adapt import SwdAdapter
from .config import AdaptConfig, RunConfig, SwdConfig
from .datagen import (
    SHIFT3,
    DomainSpec,
    LabeledDataset,
    generate_domain_pair,
    load_dataset,
    save_dataset,
)
from .distances import exact_wasserstein, sliced_wasserstein, wasserstein_1d
from .errors import (
    CorruptFileError,
    DivergenceError,
    InvalidInputError,
    SamplingStarvationError,
    UnsupportedInstanceError,
    ValidationError,
)
from .gmm import ClassConditionalGmm, ConfidentPool, PseudoDataset, collect_confident_pool
from .metrics import BoundTerms, bound_terms, confusion_matrix, miou, pixel_accuracy
from .network import (
    MlpSegmenter,
    classifier_ce_on_pseudo,
    pixel_cross_entropy,
)
from .numerics import SeedStreams, sample_unit_directions, softmax
from .pipeline import RunReport, run_full
from .tensor_io import load_tensor, save_tensor

__version__ = "0.1.0"

__all__ = [
    "AdaptConfig",
    "BoundTerms",
    "ClassConditionalGmm",
    "ConfidentPool",
    "CorruptFileError",
    "DivergenceError",
    "DomainSpec",
    "InvalidInputError",
    "LabeledDataset",
    "MlpSegmenter",
    "PseudoDataset",
    "RunConfig",
    "RunReport",
    "SHIFT3",
    "SamplingStarvationError",
    "SeedStreams",
    "SwdAdapter",
    "SwdConfig",
    "UnsupportedInstanceError",
    "ValidationError",
    "bound_terms",
    "classifier_ce_on_pseudo",
    "collect_confident_pool",
    "confusion_matrix",
    "exact_wasserstein",
    "generate_domain_pair",
    "load_dataset",
    "load_tensor",
    "miou",
    "pixel_accuracy",
    "pixel_cross_entropy",
    "run_full",
    "save_dataset",
    "save_tensor",
    "sample_unit_directions",
    "sliced_wasserstein",
    "softmax",
    "wasserstein_1d",
]
