"""Run configuration: one flat record covering every pipeline stage.

Defaults follow the method's reference settings: SWD weight 0.5, confidence
threshold 0.95, 100 projections of order 2, and an adaptive-moment optimizer
at learning rate 1e-4. Desk-scale iteration counts replace the full-scale
budgets and were fixed by the repository's seeded reference runs.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field, fields

from .errors import ValidationError


@dataclass
class SwdConfig:
    """Sliced Wasserstein estimator settings."""

    n_projections: int = 100
    order: int = 2

    def __post_init__(self):
        if self.n_projections < 1 or self.order < 1:
            raise ValidationError("n_projections and order must be >= 1")


@dataclass
class AdaptConfig:
    """Hyperparameters of the source-free adaptation stage."""

    swd_weight: float = 0.5
    conf_threshold: float = 0.95
    n_components: int = 3
    swd: SwdConfig = field(default_factory=SwdConfig)
    iterations: int = 2000
    batch_size: int = 6
    pseudo_batch: int | None = None
    label_dist_mode: str = "source"
    learning_rate: float = 1e-4
    checkpoint_every: int = 500
    seed: int = 0

    def __post_init__(self):
        if self.swd_weight < 0:
            raise ValidationError("swd_weight must be >= 0")
        if not 0.0 <= self.conf_threshold < 1.0:
            raise ValidationError("conf_threshold must lie in [0, 1)")
        if self.iterations < 0 or self.batch_size < 1:
            raise ValidationError("iterations must be >= 0 and batch_size >= 1")
        if self.label_dist_mode not in ("source", "oracle", "pseudo"):
            raise ValidationError(
                f"label_dist_mode must be source, oracle, or pseudo, got {self.label_dist_mode!r}"
            )


@dataclass
class RunConfig:
    """Flat configuration for the full pipeline and its CLI.

    Every field has a same-named key in the JSON config file and a CLI flag;
    a flag given explicitly overrides the file.
    """

    seed: int = 0
    out_dir: str = "runs/default"

    # data generation
    layout: str = "blobs"
    n_classes: int = 3
    width: int = 32
    height: int = 32
    n_source: int = 48
    n_target: int = 48
    hue_spread_deg: float = 60.0
    texture_amp: float = 0.05
    noise_sigma: float = 0.18
    shade_amp: float = 0.0
    hue_deg: float = 25.0
    brightness: float = 0.2
    noise_scale: float = 1.5
    warp: float = 0.0
    data_seed: int = 7

    # source training
    hidden1: int = 32
    hidden2: int = 32
    embed_dim: int = 8
    patch_size: int = 3
    learning_rate: float = 1e-4
    train_iterations: int = 2000
    train_batch: int = 4

    # internal distribution
    n_components: int = 3
    conf_threshold: float = 0.95
    gmm_subsample: float = 0.25
    covariance_floor: float = 1e-6
    em_max_iter: int = 200
    em_tol: float = 1e-6
    em_restarts: int = 3

    # adaptation
    swd_weight: float = 0.5
    n_projections: int = 100
    order: int = 2
    adapt_iterations: int = 2000
    adapt_batch: int = 6
    pseudo_batch: int = 0  # 0 means "match the pixels per target batch"
    label_dist_mode: str = "source"
    checkpoint_every: int = 500

    # bound diagnostics
    bound_points: int = 64
    bound_order: int = 1

    def to_json(self) -> dict:
        return asdict(self)

    @classmethod
    def from_json(cls, data: dict) -> "RunConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ValidationError(f"unknown config keys: {sorted(unknown)}")
        return cls(**data)

    def adapt_config(self) -> AdaptConfig:
        return AdaptConfig(
            swd_weight=self.swd_weight,
            conf_threshold=self.conf_threshold,
            n_components=self.n_components,
            swd=SwdConfig(n_projections=self.n_projections, order=self.order),
            iterations=self.adapt_iterations,
            batch_size=self.adapt_batch,
            pseudo_batch=self.pseudo_batch or None,
            label_dist_mode=self.label_dist_mode,
            learning_rate=self.learning_rate,
            checkpoint_every=self.checkpoint_every,
            seed=self.seed,
        )
