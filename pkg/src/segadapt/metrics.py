"""Segmentation metrics and the numeric distribution-alignment bound terms.

The bound decomposes the source-to-target transport distance through the
surrogate: w_st <= w_sz + w_zt (triangle inequality of the Wasserstein
metric). ``bound_terms`` evaluates all three legs with one estimator, the
exact assignment oracle by default, and asserts the inequality in exact
mode.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .distances import EXACT_MAX_POINTS, exact_wasserstein, sliced_wasserstein
from .errors import InvalidInputError, UnsupportedInstanceError
from .validation import check_point_set

TRIANGLE_TOL = 1e-9


def confusion_matrix(y_true, y_pred, n_classes: int, ignore_value: int = 255) -> np.ndarray:
    """K x K pixel counts, rows ground truth, columns prediction."""
    t = np.asarray(y_true).reshape(-1)
    p = np.asarray(y_pred).reshape(-1)
    if t.shape != p.shape:
        raise InvalidInputError("prediction and ground truth differ in size")
    keep = t != ignore_value
    t, p = t[keep], p[keep]
    if np.any((t < 0) | (t >= n_classes)) or np.any((p < 0) | (p >= n_classes)):
        raise InvalidInputError("labels outside [0, n_classes)")
    cm = np.bincount(t * n_classes + p, minlength=n_classes * n_classes)
    return cm.reshape(n_classes, n_classes).astype(np.int64)


def miou(cm: np.ndarray) -> tuple[np.ndarray, float]:
    """Per-class IoU (NaN where truth and prediction are both empty) and mean.

    IoU_k = TP / (TP + FP + FN); classes with an empty union are excluded
    from the mean.
    """
    cm = np.asarray(cm)
    if cm.ndim != 2 or cm.shape[0] != cm.shape[1]:
        raise InvalidInputError("confusion matrix must be square")
    tp = np.diag(cm).astype(np.float64)
    union = cm.sum(axis=0) + cm.sum(axis=1) - np.diag(cm)
    with np.errstate(invalid="ignore"):
        iou = np.where(union > 0, tp / union, np.nan)
    if np.all(union == 0):
        raise InvalidInputError("confusion matrix is empty; no class was evaluated")
    return iou, float(np.nanmean(iou))


def pixel_accuracy(cm: np.ndarray) -> float:
    cm = np.asarray(cm)
    total = cm.sum()
    if total == 0:
        raise InvalidInputError("confusion matrix is empty")
    return float(np.diag(cm).sum() / total)


@dataclass
class BoundTerms:
    """Observable terms of the target-risk bound, one estimator throughout."""

    w_sz: float
    w_zt: float
    w_st: float
    source_risk: float
    n_s: int
    n_t: int
    estimator: str = "exact"

    @property
    def triangle_slack(self) -> float:
        """w_sz + w_zt - w_st; non-negative (up to tolerance) in exact mode."""
        return self.w_sz + self.w_zt - self.w_st

    def to_json(self) -> dict:
        return {
            "w_sz": self.w_sz,
            "w_zt": self.w_zt,
            "w_st": self.w_st,
            "source_risk": self.source_risk,
            "n_s": self.n_s,
            "n_t": self.n_t,
            "estimator": self.estimator,
            "triangle_slack": self.triangle_slack,
            "sample_term_factor": float(1.0 / np.sqrt(self.n_s) + 1.0 / np.sqrt(self.n_t)),
        }


def subsample_points(points: np.ndarray, n: int, rng: np.random.Generator) -> np.ndarray:
    points = check_point_set(points)
    if points.shape[0] <= n:
        return points
    idx = rng.choice(points.shape[0], size=n, replace=False)
    return points[idx]


def bound_terms(
    source_emb,
    pseudo_emb,
    target_emb,
    order: int = 1,
    mode: str = "exact",
    source_risk: float = float("nan"),
    n_projections: int = 200,
    seed: int = 0,
) -> BoundTerms:
    """All three pairwise transport distances among source, surrogate, target.

    In ``exact`` mode every set must hold at most 64 points (equal counts for
    each pair are enforced by the caller subsampling) and the triangle
    inequality is asserted to 1e-9. ``sliced`` mode scales to any size but is
    never used for assertions.
    """
    s = check_point_set(source_emb, "source_emb")
    z = check_point_set(pseudo_emb, "pseudo_emb")
    t = check_point_set(target_emb, "target_emb")
    if mode == "exact":
        for name, pts in (("source", s), ("pseudo", z), ("target", t)):
            if pts.shape[0] > EXACT_MAX_POINTS:
                raise UnsupportedInstanceError(
                    f"{name} embeddings have {pts.shape[0]} points; exact mode allows "
                    f"{EXACT_MAX_POINTS} (subsample first or use mode='sliced')"
                )
        w_sz = exact_wasserstein(s, z, order)
        w_zt = exact_wasserstein(z, t, order)
        w_st = exact_wasserstein(s, t, order)
        if w_st > w_sz + w_zt + TRIANGLE_TOL:
            raise AssertionError(
                f"triangle inequality violated: {w_st} > {w_sz} + {w_zt} + {TRIANGLE_TOL}"
            )
    elif mode == "sliced":
        w_sz = sliced_wasserstein(s, z, n_projections, order, rng=seed)
        w_zt = sliced_wasserstein(z, t, n_projections, order, rng=seed)
        w_st = sliced_wasserstein(s, t, n_projections, order, rng=seed)
    else:
        raise InvalidInputError(f"unknown estimator mode {mode!r}")
    return BoundTerms(
        w_sz=w_sz,
        w_zt=w_zt,
        w_st=w_st,
        source_risk=float(source_risk),
        n_s=int(s.shape[0]),
        n_t=int(t.shape[0]),
        estimator=mode,
    )
