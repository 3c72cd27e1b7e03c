"""Staged end-to-end runner: generate, train, fit the surrogate, adapt, evaluate.

Each stage reads its inputs from disk and writes one artifact directory, so
stages can resume independently and the adaptation stage demonstrably runs
with nothing but {checkpoint, mixture, target images, config}. Artifacts are
byte-deterministic for a fixed seed: no timestamps, sorted JSON keys, and
the binary tensor container everywhere.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .adapt import SwdAdapter
from .config import RunConfig
from .datagen import DomainSpec, LabeledDataset, generate_domain_pair, load_dataset, save_dataset
from .errors import ValidationError
from .gmm import ClassConditionalGmm, collect_confident_pool
from .metrics import bound_terms, confusion_matrix, miou, pixel_accuracy, subsample_points
from .network import MlpSegmenter
from .numerics import SeedStreams
from .tensor_io import load_tensor, save_tensor

SOURCE_DIR = "dataset/source"
TARGET_DIR = "dataset/target"
CHECKPOINT_DIR = "checkpoint"
GMM_DIR = "gmm"
ADAPTED_DIR = "adapted"
REPORT_DIR = "report"

N_BOUND_EMBEDDINGS = 512


@dataclass
class RunReport:
    """Everything a finished adaptation run reports, JSON-serializable."""

    seed: int
    config: dict
    ce_curve: list[float] = field(default_factory=list)
    swd_curve: list[float] = field(default_factory=list)
    pre_metrics: dict = field(default_factory=dict)
    post_metrics: dict = field(default_factory=dict)
    bound_pre: dict | None = None
    bound_post: dict | None = None
    schema: int = 1

    def to_json(self) -> dict:
        return asdict(self)

    def save(self, directory: str | Path) -> None:
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        (directory / "run_report.json").write_text(
            json.dumps(self.to_json(), indent=2, sort_keys=True)
        )
        lines = ["iteration,ce_term,swd_term"]
        for i, (ce, swd) in enumerate(zip(self.ce_curve, self.swd_curve)):
            lines.append(f"{i},{ce!r},{swd!r}")
        (directory / "losses.csv").write_text("\n".join(lines) + "\n")

    @classmethod
    def load(cls, directory: str | Path) -> "RunReport":
        data = json.loads((Path(directory) / "run_report.json").read_text())
        return cls(**data)


def _require(path: Path, what: str) -> Path:
    if not path.exists():
        raise ValidationError(f"missing {what}: {path}")
    return path


def _segmenter_from_config(cfg: RunConfig) -> MlpSegmenter:
    return MlpSegmenter(
        n_classes=cfg.n_classes,
        in_channels=3,
        patch_size=cfg.patch_size,
        hidden=(cfg.hidden1, cfg.hidden2),
        embed_dim=cfg.embed_dim,
        learning_rate=cfg.learning_rate,
        iterations=cfg.train_iterations,
        batch_size=cfg.train_batch,
        seed=cfg.seed,
    )


def _domain_spec(cfg: RunConfig) -> DomainSpec:
    return DomainSpec(
        n_classes=cfg.n_classes,
        width=cfg.width,
        height=cfg.height,
        channels=3,
        layout=cfg.layout,
        hue_spread_deg=cfg.hue_spread_deg,
        texture_amp=cfg.texture_amp,
        noise_sigma=cfg.noise_sigma,
        shade_amp=cfg.shade_amp,
        hue_deg=cfg.hue_deg,
        brightness=cfg.brightness,
        noise_scale=cfg.noise_scale,
        warp=cfg.warp,
        seed=cfg.data_seed,
    )


def evaluate_dataset(network, dataset: LabeledDataset) -> dict:
    """mIoU, per-class IoU, and pixel accuracy of a network on a dataset."""
    cm = confusion_matrix(
        dataset.labels, network.predict(dataset.images), dataset.n_classes,
        ignore_value=dataset.ignore_value,
    )
    iou, mean_iou = miou(cm)
    return {
        "miou": mean_iou,
        "per_class_iou": [None if np.isnan(v) else float(v) for v in iou],
        "pixel_accuracy": pixel_accuracy(cm),
        "confusion_matrix": cm.tolist(),
    }


def stage_gen_data(cfg: RunConfig, out_dir: str | Path) -> dict:
    out_dir = Path(out_dir)
    spec = _domain_spec(cfg)
    source, target = generate_domain_pair(spec, cfg.n_source, cfg.n_target)
    save_dataset(source, out_dir / SOURCE_DIR)
    save_dataset(target, out_dir / TARGET_DIR)
    (out_dir / "dataset" / "spec.json").write_text(
        json.dumps(spec.to_json(), indent=2, sort_keys=True)
    )
    return {"n_source": len(source), "n_target": len(target), "n_classes": spec.n_classes}


def stage_train_source(cfg: RunConfig, out_dir: str | Path) -> dict:
    """Train on source, then capture everything the later stages may need.

    The checkpoint directory also stores the final source risk and a seeded
    subsample of source embeddings so bound diagnostics stay possible after
    the source dataset is deleted.
    """
    out_dir = Path(out_dir)
    source = load_dataset(_require(out_dir / SOURCE_DIR, "source dataset"))
    net = _segmenter_from_config(cfg)
    net.fit(source.images, source.labels)
    ckpt = out_dir / CHECKPOINT_DIR
    net.save(ckpt)

    metrics = evaluate_dataset(net, source)
    emb = net.transform(source.images).reshape(-1, net.embed_dim)
    rng = SeedStreams(cfg.seed).generator("bound-subsample")
    save_tensor(ckpt / "source_embeddings.tnsr", subsample_points(emb, N_BOUND_EMBEDDINGS, rng))
    summary = {
        "source_miou": metrics["miou"],
        "source_pixel_accuracy": metrics["pixel_accuracy"],
        "source_risk": 1.0 - metrics["pixel_accuracy"],
        "n_source_pixels": int(np.prod(source.labels.shape)),
        "final_loss": float(net.loss_curve_[-1]) if len(net.loss_curve_) else None,
    }
    (ckpt / "source_summary.json").write_text(json.dumps(summary, indent=2, sort_keys=True))
    lines = ["iteration,ce_term"] + [f"{i},{v!r}" for i, v in enumerate(net.loss_curve_)]
    (ckpt / "train_losses.csv").write_text("\n".join(lines) + "\n")
    return summary


def stage_fit_gmm(cfg: RunConfig, out_dir: str | Path) -> dict:
    out_dir = Path(out_dir)
    source = load_dataset(_require(out_dir / SOURCE_DIR, "source dataset"))
    net = MlpSegmenter.load(_require(out_dir / CHECKPOINT_DIR, "checkpoint"))
    streams = SeedStreams(cfg.seed)
    pool = collect_confident_pool(
        net,
        source.images,
        source.labels,
        conf_threshold=cfg.conf_threshold,
        subsample_rate=cfg.gmm_subsample,
        rng=streams.generator("pool-subsample"),
        ignore_value=source.ignore_value,
    )
    model = ClassConditionalGmm(
        n_components=cfg.n_components,
        max_iter=cfg.em_max_iter,
        tol=cfg.em_tol,
        covariance_floor=cfg.covariance_floor,
        n_init=cfg.em_restarts,
        seed=cfg.seed,
    )
    model.fit_pool(pool)
    model.save(out_dir / GMM_DIR)
    return {
        "pool_counts": [int(c) for c in pool.counts],
        "degenerate": [bool(d) for d in model.degenerate_],
        "conf_threshold": cfg.conf_threshold,
    }


def _bound_sets(net, gmm_model, target_images, cfg: RunConfig, out_dir: Path, streams: SeedStreams):
    """Equal-size embedding subsamples of source, surrogate, and target."""
    n = cfg.bound_points
    source_emb = load_tensor(out_dir / CHECKPOINT_DIR / "source_embeddings.tnsr")
    s = subsample_points(source_emb, n, streams.generator("bound-s"))
    z, _ = gmm_model.draw(n, gmm_model.source_label_dist_, streams.generator("bound-z"))
    t_all = net.transform(target_images).reshape(-1, net.embed_dim)
    t = subsample_points(t_all, n, streams.generator("bound-t"))
    m = min(len(s), len(z), len(t))
    return s[:m], z[:m], t[:m]


def stage_adapt(cfg: RunConfig, out_dir: str | Path, assert_source_free: bool = False) -> dict:
    """Adapt to the target and write the adapted checkpoint plus the run report."""
    out_dir = Path(out_dir)
    if assert_source_free and (out_dir / SOURCE_DIR).exists():
        raise ValidationError(
            f"--assert-source-free: source data still present at {out_dir / SOURCE_DIR}"
        )
    net = MlpSegmenter.load(_require(out_dir / CHECKPOINT_DIR, "checkpoint"))
    gmm_model = ClassConditionalGmm.load(_require(out_dir / GMM_DIR, "fitted GMM"))
    target = load_dataset(_require(out_dir / TARGET_DIR, "target dataset"))

    summary_path = out_dir / CHECKPOINT_DIR / "source_summary.json"
    source_risk = float("nan")
    if summary_path.exists():
        source_risk = json.loads(summary_path.read_text()).get("source_risk", float("nan"))

    streams = SeedStreams(cfg.seed)
    pre_metrics = evaluate_dataset(net, target)
    s, z, t_pre = _bound_sets(net, gmm_model, target.images, cfg, out_dir, streams)
    bound_pre = bound_terms(s, z, t_pre, order=cfg.bound_order, source_risk=source_risk)

    adapter = SwdAdapter(
        network=net,
        gmm=gmm_model,
        swd_weight=cfg.swd_weight,
        conf_threshold=cfg.conf_threshold,
        n_projections=cfg.n_projections,
        order=cfg.order,
        iterations=cfg.adapt_iterations,
        batch_size=cfg.adapt_batch,
        pseudo_batch=cfg.pseudo_batch or None,
        label_dist_mode=cfg.label_dist_mode,
        learning_rate=cfg.learning_rate,
        checkpoint_every=cfg.checkpoint_every,
        checkpoint_dir=str(out_dir / ADAPTED_DIR),
        seed=cfg.seed,
    )
    adapter.fit(target.images, target.labels if cfg.label_dist_mode == "oracle" else None)
    adapted = adapter.network_
    adapted.save(out_dir / ADAPTED_DIR)

    post_metrics = evaluate_dataset(adapted, target)
    t_post = adapted.transform(target.images).reshape(-1, adapted.embed_dim)
    t_post = subsample_points(t_post, cfg.bound_points, streams.generator("bound-t-post"))
    m = min(len(s), len(z), len(t_post))
    bound_post = bound_terms(
        s[:m], z[:m], t_post[:m], order=cfg.bound_order, source_risk=source_risk
    )

    report = RunReport(
        seed=cfg.seed,
        config=cfg.to_json(),
        ce_curve=[float(v) for v in adapter.ce_curve_],
        swd_curve=[float(v) for v in adapter.swd_curve_],
        pre_metrics=pre_metrics,
        post_metrics=post_metrics,
        bound_pre=bound_pre.to_json(),
        bound_post=bound_post.to_json(),
    )
    report.save(out_dir / REPORT_DIR)
    return {
        "pre_miou": pre_metrics["miou"],
        "post_miou": post_metrics["miou"],
        "swd_first": report.swd_curve[0] if report.swd_curve else None,
        "swd_last": report.swd_curve[-1] if report.swd_curve else None,
    }


def stage_evaluate(cfg: RunConfig, out_dir: str | Path, checkpoint: str = ADAPTED_DIR) -> dict:
    out_dir = Path(out_dir)
    net = MlpSegmenter.load(_require(out_dir / checkpoint, f"checkpoint {checkpoint!r}"))
    target = load_dataset(_require(out_dir / TARGET_DIR, "target dataset"))
    metrics = evaluate_dataset(net, target)
    eval_dir = out_dir / "eval"
    eval_dir.mkdir(parents=True, exist_ok=True)
    (eval_dir / f"metrics_{checkpoint.replace('/', '_')}.json").write_text(
        json.dumps(metrics, indent=2, sort_keys=True)
    )
    iou_csv = ["class,iou"] + [
        f"{k},{'' if v is None else repr(v)}" for k, v in enumerate(metrics["per_class_iou"])
    ]
    (eval_dir / f"per_class_iou_{checkpoint.replace('/', '_')}.csv").write_text(
        "\n".join(iou_csv) + "\n"
    )
    return {"miou": metrics["miou"], "pixel_accuracy": metrics["pixel_accuracy"]}


def stage_bound_check(cfg: RunConfig, out_dir: str | Path) -> dict:
    """Exact-oracle bound terms plus embedding dumps for external visualization."""
    out_dir = Path(out_dir)
    gmm_model = ClassConditionalGmm.load(_require(out_dir / GMM_DIR, "fitted GMM"))
    target = load_dataset(_require(out_dir / TARGET_DIR, "target dataset"))
    ckpt_name = ADAPTED_DIR if (out_dir / ADAPTED_DIR).exists() else CHECKPOINT_DIR
    net = MlpSegmenter.load(out_dir / ckpt_name)
    streams = SeedStreams(cfg.seed)
    s, z, t = _bound_sets(net, gmm_model, target.images, cfg, out_dir, streams)
    terms = bound_terms(s, z, t, order=cfg.bound_order)

    bound_dir = out_dir / "bound"
    bound_dir.mkdir(parents=True, exist_ok=True)
    payload = terms.to_json()
    payload["checkpoint"] = ckpt_name
    payload["conf_threshold"] = gmm_model.conf_threshold_
    # reported for reference only; the printed bound does not include it
    if gmm_model.conf_threshold_ is not None:
        payload["one_minus_conf_threshold"] = 1.0 - gmm_model.conf_threshold_
    (bound_dir / "bound_terms.json").write_text(json.dumps(payload, indent=2, sort_keys=True))
    save_tensor(bound_dir / "source_embeddings.tnsr", s)
    save_tensor(bound_dir / "pseudo_embeddings.tnsr", z)
    save_tensor(bound_dir / "target_embeddings.tnsr", t)
    return payload


def run_full(cfg: RunConfig, out_dir: str | Path | None = None) -> RunReport:
    """All stages in order; source artifacts are not consulted past fit-gmm."""
    out_dir = Path(out_dir if out_dir is not None else cfg.out_dir)
    stage_gen_data(cfg, out_dir)
    stage_train_source(cfg, out_dir)
    stage_fit_gmm(cfg, out_dir)
    stage_adapt(cfg, out_dir)
    stage_evaluate(cfg, out_dir)
    stage_bound_check(cfg, out_dir)
    return RunReport.load(out_dir / REPORT_DIR)
