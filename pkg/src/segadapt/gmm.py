"""Class-conditional Gaussian mixture over the embedding space.

After source training, embeddings of confidently classified pixels are
pooled per class and a small mixture is fitted to each pool by expectation
maximization. The fitted mixture then acts as the source surrogate: labeled
pseudo-samples are drawn from it and confidence-filtered by the classifier,
so the original source data is never needed again.
"""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.exceptions import NotFittedError

from .errors import InvalidInputError, SamplingStarvationError
from .numerics import log_sum_exp
from .tensor_io import load_tensor, save_tensor
from .validation import (
    check_images,
    check_label_maps,
    check_point_set,
    check_probability_vector,
    check_unit_interval,
)


@dataclass
class ConfidentPool:
    """Per-class embeddings that survived the confidence filter.

    ``class_pixel_counts`` records the unfiltered per-class pixel totals, the
    source empirical label distribution needed once source data is gone.
    """

    embeddings: dict[int, np.ndarray]
    n_classes: int
    conf_threshold: float
    dim: int
    class_pixel_counts: np.ndarray | None = None

    def count(self, k: int) -> int:
        return self.embeddings[k].shape[0]

    @property
    def counts(self) -> np.ndarray:
        return np.array([self.count(k) for k in range(self.n_classes)])

    def stacked(self) -> tuple[np.ndarray, np.ndarray]:
        """All pooled embeddings plus their class labels."""
        parts = [self.embeddings[k] for k in range(self.n_classes) if self.count(k)]
        labels = [
            np.full(self.count(k), k, dtype=np.int64)
            for k in range(self.n_classes)
            if self.count(k)
        ]
        if not parts:
            return np.zeros((0, self.dim)), np.zeros(0, dtype=np.int64)
        return np.concatenate(parts, axis=0), np.concatenate(labels)


@dataclass
class PseudoDataset:
    """Labeled embeddings sampled from the mixture and kept by the filter."""

    embeddings: np.ndarray
    labels: np.ndarray
    conf_threshold: float
    n_drawn: int = 0
    drawn_per_class: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))
    kept_per_class: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))

    def __len__(self) -> int:
        return int(self.labels.shape[0])


def collect_confident_pool(
    network,
    images,
    labels,
    conf_threshold: float = 0.95,
    subsample_rate: float = 1.0,
    rng: np.random.Generator | None = None,
    ignore_value: int = 255,
    chunk_images: int = 16,
) -> ConfidentPool:
    """Pool per-pixel embeddings whose true class got > ``conf_threshold`` probability.

    A pixel with ground-truth label k contributes its embedding to pool k iff
    the classifier assigns class k probability strictly above the threshold.
    ``subsample_rate`` < 1 keeps each admitted pixel with that probability.
    """
    check_unit_interval(conf_threshold, "conf_threshold")
    if not 0.0 < subsample_rate <= 1.0:
        raise InvalidInputError(f"subsample_rate must lie in (0, 1], got {subsample_rate}")
    images = check_images(images)
    n_classes = network.n_classes
    labels = check_label_maps(labels, n_classes, ignore_value)
    if rng is None:
        rng = np.random.default_rng(0)

    buckets: dict[int, list[np.ndarray]] = {k: [] for k in range(n_classes)}
    pixel_counts = np.zeros(n_classes, dtype=np.int64)
    dim = network.embed_dim
    for start in range(0, images.shape[0], chunk_images):
        imgs = images[start : start + chunk_images]
        labs = labels[start : start + chunk_images].reshape(-1)
        emb, probs = network.forward(imgs)
        emb = emb.reshape(-1, dim)
        probs = probs.reshape(-1, n_classes)
        valid = labs != ignore_value
        for k in range(n_classes):
            sel = valid & (labs == k)
            pixel_counts[k] += int(sel.sum())
            if not np.any(sel):
                continue
            admitted = probs[sel, k] > conf_threshold
            chosen = emb[sel][admitted]
            if subsample_rate < 1.0 and chosen.shape[0]:
                keep = rng.random(chosen.shape[0]) < subsample_rate
                chosen = chosen[keep]
            if chosen.shape[0]:
                buckets[k].append(chosen)

    pooled = {
        k: (np.concatenate(v, axis=0) if v else np.zeros((0, dim)))
        for k, v in buckets.items()
    }
    return ConfidentPool(
        embeddings=pooled,
        n_classes=n_classes,
        conf_threshold=conf_threshold,
        dim=dim,
        class_pixel_counts=pixel_counts,
    )


def _log_gaussian(x: np.ndarray, mean: np.ndarray, cov: np.ndarray) -> np.ndarray:
    """Log density of N(mean, cov) at the rows of x, via Cholesky."""
    dim = mean.shape[0]
    chol = np.linalg.cholesky(cov)
    diff = x - mean
    solved = np.linalg.solve(chol, diff.T)
    maha = np.sum(solved**2, axis=0)
    log_det = 2.0 * np.sum(np.log(np.diag(chol)))
    return -0.5 * (dim * np.log(2.0 * np.pi) + log_det + maha)


def _floor_covariance(cov: np.ndarray, floor: float) -> np.ndarray:
    """Symmetrize and clamp eigenvalues from below."""
    sym = 0.5 * (cov + cov.T)
    vals, vecs = np.linalg.eigh(sym)
    vals = np.maximum(vals, floor)
    floored = (vecs * vals) @ vecs.T
    return 0.5 * (floored + floored.T)


def _kmeanspp_centers(x: np.ndarray, n_centers: int, rng: np.random.Generator) -> np.ndarray:
    centers = [x[rng.integers(x.shape[0])]]
    for _ in range(1, n_centers):
        d2 = np.min(
            np.sum((x[:, None, :] - np.asarray(centers)[None, :, :]) ** 2, axis=2), axis=1
        )
        total = d2.sum()
        if total <= 0.0:
            centers.append(x[rng.integers(x.shape[0])])
            continue
        centers.append(x[rng.choice(x.shape[0], p=d2 / total)])
    return np.asarray(centers)


def _fit_single_mixture(
    x: np.ndarray,
    n_components: int,
    max_iter: int,
    tol: float,
    floor: float,
    rng: np.random.Generator,
) -> tuple[np.ndarray, np.ndarray, np.ndarray, list[float]]:
    """EM for one mixture; returns (weights, means, covariances, ll_curve)."""
    n, dim = x.shape
    means = _kmeanspp_centers(x, n_components, rng)
    pooled = np.cov(x, rowvar=False, bias=True).reshape(dim, dim)
    pooled = _floor_covariance(pooled, floor)
    covs = np.repeat(pooled[None, :, :], n_components, axis=0)
    weights = np.full(n_components, 1.0 / n_components)

    ll_curve: list[float] = []
    prev_ll = -np.inf
    for _ in range(max_iter):
        log_comp = np.stack(
            [np.log(weights[t]) + _log_gaussian(x, means[t], covs[t]) for t in range(n_components)],
            axis=1,
        )
        log_norm = log_sum_exp(log_comp, axis=1)
        ll = float(np.sum(log_norm))
        ll_curve.append(ll)
        resp = np.exp(log_comp - log_norm[:, None])

        bulk = resp.sum(axis=0)
        for t in range(n_components):
            if bulk[t] < 1e-10:
                # dead component: reseat on a random point with the pooled shape
                means[t] = x[rng.integers(n)]
                covs[t] = pooled
                resp[:, t] = 1.0 / n
                bulk[t] = resp[:, t].sum()
        weights = bulk / bulk.sum()
        means = (resp.T @ x) / bulk[:, None]
        for t in range(n_components):
            diff = x - means[t]
            cov = (resp[:, t][:, None] * diff).T @ diff / bulk[t]
            covs[t] = _floor_covariance(cov, floor)

        if ll - prev_ll < tol and np.isfinite(prev_ll):
            break
        prev_ll = ll
    return weights, means, covs, ll_curve


class ClassConditionalGmm(BaseEstimator):
    """Per-class Gaussian mixture fitted by EM with k-means++ seeding.

    Parameters
    ----------
    n_components : requested components per class; classes whose pool is
        smaller fall back to max(1, pool size) and are flagged degenerate.
    covariance_floor : lower bound applied to covariance eigenvalues.
    n_init : number of seeded restarts per class; the best final
        log-likelihood wins.
    """

    def __init__(
        self,
        n_components: int = 3,
        max_iter: int = 200,
        tol: float = 1e-6,
        covariance_floor: float = 1e-6,
        n_init: int = 3,
        seed: int = 0,
    ):
        self.n_components = n_components
        self.max_iter = max_iter
        self.tol = tol
        self.covariance_floor = covariance_floor
        self.n_init = n_init
        self.seed = seed

    def fit(
        self,
        X,
        y,
        n_classes: int | None = None,
        conf_threshold: float | None = None,
        label_dist=None,
    ):
        """Fit one mixture per class on embeddings X grouped by label y.

        ``label_dist`` overrides the sampling label distribution recorded on
        the model; by default it is the empirical distribution of ``y``.
        """
        if np.asarray(X).shape[0] == 0:
            raise InvalidInputError("every class pool is empty; nothing to fit")
        X = check_point_set(X, "embeddings")
        y = np.asarray(y, dtype=np.int64)
        if y.shape[0] != X.shape[0]:
            raise InvalidInputError("embeddings and labels disagree on sample count")
        if self.n_components < 1:
            raise InvalidInputError("n_components must be >= 1")
        K = int(n_classes) if n_classes is not None else int(y.max()) + 1

        rng = np.random.default_rng(np.random.SeedSequence(entropy=self.seed))
        self.n_classes_ = K
        self.dim_ = X.shape[1]
        self.weights_: list[np.ndarray | None] = []
        self.means_: list[np.ndarray | None] = []
        self.covariances_: list[np.ndarray | None] = []
        self.components_per_class_ = np.zeros(K, dtype=np.int64)
        self.degenerate_ = np.zeros(K, dtype=bool)
        self.log_likelihood_curves_: list[list[float]] = []
        self.conf_threshold_ = conf_threshold

        for k in range(K):
            pool = X[y == k]
            if pool.shape[0] == 0:
                self.degenerate_[k] = True
                self.weights_.append(None)
                self.means_.append(None)
                self.covariances_.append(None)
                self.log_likelihood_curves_.append([])
                warnings.warn(f"class {k} has an empty pool and is excluded from sampling")
                continue
            t_k = min(self.n_components, pool.shape[0])
            if t_k < self.n_components:
                self.degenerate_[k] = True
                warnings.warn(
                    f"class {k} pool has {pool.shape[0]} samples, "
                    f"falling back to {t_k} component(s)"
                )
            best = None
            for _ in range(self.n_init):
                fitted = _fit_single_mixture(
                    pool, t_k, self.max_iter, self.tol, self.covariance_floor, rng
                )
                if best is None or fitted[3][-1] > best[3][-1]:
                    best = fitted
            weights, means, covs, curve = best
            self.weights_.append(weights)
            self.means_.append(means)
            self.covariances_.append(covs)
            self.components_per_class_[k] = t_k
            self.log_likelihood_curves_.append(curve)
        if all(w is None for w in self.weights_):
            raise InvalidInputError("every class pool is empty; nothing to fit")
        if label_dist is not None:
            self.source_label_dist_ = check_probability_vector(label_dist, "label_dist")
        else:
            counts = np.bincount(y, minlength=K).astype(np.float64)
            self.source_label_dist_ = counts / counts.sum()
        return self

    def fit_pool(self, pool: ConfidentPool):
        X, y = pool.stacked()
        dist = None
        if pool.class_pixel_counts is not None and pool.class_pixel_counts.sum() > 0:
            dist = pool.class_pixel_counts / pool.class_pixel_counts.sum()
        return self.fit(
            X, y, n_classes=pool.n_classes, conf_threshold=pool.conf_threshold, label_dist=dist
        )

    def _check_fitted(self):
        if not hasattr(self, "weights_"):
            raise NotFittedError("ClassConditionalGmm is not fitted")

    def sampleable_classes(self) -> np.ndarray:
        self._check_fitted()
        return np.array([k for k in range(self.n_classes_) if self.weights_[k] is not None])

    def log_density(self, k: int, x) -> np.ndarray:
        """Log mixture density of class k at the rows of x (log-sum-exp form)."""
        self._check_fitted()
        if self.weights_[k] is None:
            raise InvalidInputError(f"class {k} is degenerate (empty pool); no density")
        x = check_point_set(x, "x")
        log_comp = np.stack(
            [
                np.log(self.weights_[k][t])
                + _log_gaussian(x, self.means_[k][t], self.covariances_[k][t])
                for t in range(self.weights_[k].shape[0])
            ],
            axis=1,
        )
        return log_sum_exp(log_comp, axis=1)

    def draw(self, n: int, label_dist, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
        """Draw n raw (embedding, class) pairs from the mixture, unfiltered."""
        self._check_fitted()
        label_dist = check_probability_vector(label_dist, "label_dist")
        if label_dist.shape[0] != self.n_classes_:
            raise InvalidInputError("label_dist length must equal the class count")
        usable = np.array([self.weights_[k] is not None for k in range(self.n_classes_)])
        mass = label_dist * usable
        if mass.sum() <= 0.0:
            raise InvalidInputError("label_dist puts no mass on any sampleable class")
        mass = mass / mass.sum()

        classes = rng.choice(self.n_classes_, size=n, p=mass)
        z = np.empty((n, self.dim_))
        for k in np.unique(classes):
            sel = np.where(classes == k)[0]
            comp = rng.choice(self.weights_[k].shape[0], size=sel.shape[0], p=self.weights_[k])
            normals = rng.standard_normal((sel.shape[0], self.dim_))
            for t in np.unique(comp):
                rows = sel[comp == t]
                chol = np.linalg.cholesky(self.covariances_[k][t])
                z[rows] = self.means_[k][t] + normals[comp == t] @ chol.T
        return z, classes.astype(np.int64)

    def sample_labeled(
        self,
        n: int,
        classifier,
        label_dist,
        conf_threshold: float = 0.95,
        rng: np.random.Generator | None = None,
        retry_factor: int = 50,
    ) -> PseudoDataset:
        """Draw a confidence-filtered pseudo-dataset of up to n samples.

        A draw (z, k) is kept iff the classifier's argmax on z equals k with
        probability strictly above ``conf_threshold``. Drawing stops once n
        samples are kept or ``retry_factor * n`` draws are spent; if fewer
        than n/2 were kept by then, a starvation error names the worst class.
        """
        self._check_fitted()
        check_unit_interval(conf_threshold, "conf_threshold")
        if n < 1:
            raise InvalidInputError("n must be >= 1")
        if rng is None:
            rng = np.random.default_rng(0)

        budget = retry_factor * n
        drawn = np.zeros(self.n_classes_, dtype=np.int64)
        kept = np.zeros(self.n_classes_, dtype=np.int64)
        out_z: list[np.ndarray] = []
        out_y: list[np.ndarray] = []
        total_kept = 0
        total_drawn = 0
        while total_kept < n and total_drawn < budget:
            chunk = min(max(n, 512), budget - total_drawn)
            z, y = self.draw(chunk, label_dist, rng)
            probs = classifier(z)
            pred = np.argmax(probs, axis=1)  # ties resolve to the lowest index
            keep = (pred == y) & (probs[np.arange(chunk), y] > conf_threshold)
            np.add.at(drawn, y, 1)
            np.add.at(kept, y[keep], 1)
            out_z.append(z[keep])
            out_y.append(y[keep])
            total_kept += int(keep.sum())
            total_drawn += chunk

        if total_kept < max(1, n // 2) and total_drawn >= budget:
            rates = np.divide(kept, np.maximum(drawn, 1), dtype=np.float64)
            rates[drawn == 0] = np.inf
            worst = int(np.argmin(rates))
            raise SamplingStarvationError(
                f"kept {total_kept}/{n} after {total_drawn} draws; "
                f"worst class {worst} accepted {kept[worst]}/{drawn[worst]}",
                worst_class=worst,
            )
        z = np.concatenate(out_z, axis=0)[:n] if out_z else np.zeros((0, self.dim_))
        y = np.concatenate(out_y)[:n] if out_y else np.zeros(0, dtype=np.int64)
        return PseudoDataset(
            embeddings=z,
            labels=y,
            conf_threshold=conf_threshold,
            n_drawn=total_drawn,
            drawn_per_class=drawn,
            kept_per_class=kept,
        )

    def save(self, directory: str | Path) -> None:
        self._check_fitted()
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        manifest = {
            "schema": 1,
            "kind": "class_gmm",
            "n_classes": int(self.n_classes_),
            "n_components": int(self.n_components),
            "dim": int(self.dim_),
            "covariance_floor": float(self.covariance_floor),
            "conf_threshold": self.conf_threshold_,
            "degenerate": [bool(d) for d in self.degenerate_],
            "components_per_class": [int(c) for c in self.components_per_class_],
            "source_label_dist": (
                None
                if getattr(self, "source_label_dist_", None) is None
                else [float(p) for p in self.source_label_dist_]
            ),
        }
        (directory / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True))
        for k in range(self.n_classes_):
            if self.weights_[k] is None:
                continue
            save_tensor(directory / f"class_{k}_weights.tnsr", self.weights_[k])
            save_tensor(directory / f"class_{k}_means.tnsr", self.means_[k])
            save_tensor(directory / f"class_{k}_covariances.tnsr", self.covariances_[k])

    @classmethod
    def load(cls, directory: str | Path) -> "ClassConditionalGmm":
        directory = Path(directory)
        manifest = json.loads((directory / "manifest.json").read_text())
        model = cls(
            n_components=manifest["n_components"],
            covariance_floor=manifest["covariance_floor"],
        )
        K = manifest["n_classes"]
        model.n_classes_ = K
        model.dim_ = manifest["dim"]
        model.conf_threshold_ = manifest["conf_threshold"]
        dist = manifest.get("source_label_dist")
        model.source_label_dist_ = None if dist is None else np.asarray(dist, dtype=np.float64)
        model.degenerate_ = np.asarray(manifest["degenerate"], dtype=bool)
        model.components_per_class_ = np.asarray(
            manifest["components_per_class"], dtype=np.int64
        )
        model.log_likelihood_curves_ = [[] for _ in range(K)]
        model.weights_, model.means_, model.covariances_ = [], [], []
        for k in range(K):
            if manifest["components_per_class"][k] == 0:
                model.weights_.append(None)
                model.means_.append(None)
                model.covariances_.append(None)
                continue
            model.weights_.append(load_tensor(directory / f"class_{k}_weights.tnsr"))
            model.means_.append(load_tensor(directory / f"class_{k}_means.tnsr"))
            model.covariances_.append(load_tensor(directory / f"class_{k}_covariances.tnsr"))
        return model
