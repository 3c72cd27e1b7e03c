"""Source-free adaptation: align target embeddings with the GMM surrogate.

Each iteration draws a target image batch and a confidence-filtered pseudo
batch from the mixture, then takes one adaptive-moment step on

    loss = classifier_ce(pseudo) + swd_weight * swd(target_emb, pseudo_emb).

Gradients of the transport term reach the encoder and decoder; the cross
entropy term fine-tunes the classifier head only. Pseudo labels are assigned
by the frozen source-trained classifier, matching the pseudo-dataset
generation rule, while the live head keeps being fine-tuned.

The fit signature admits no source data whatsoever: a trained network, a
fitted mixture, target images, and hyperparameters are the entire input.
"""

from __future__ import annotations

import copy

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.exceptions import NotFittedError

from . import autodiff as ad
from .distances import swd_loss
from .errors import DivergenceError, InvalidInputError
from .network import (
    AdamOptimizer,
    PARAM_NAMES,
    embed_pixels,
    patch_features,
    pseudo_ce_loss,
)
from .numerics import SeedStreams, sample_unit_directions, softmax as nd_softmax
from .validation import check_images


class SwdAdapter(BaseEstimator):
    """Adapts a fitted segmenter to unlabeled target images.

    Parameters
    ----------
    network : fitted MlpSegmenter; a deep copy is adapted, the original is
        left untouched.
    gmm : fitted ClassConditionalGmm over the network's embedding space.
    swd_weight : weight of the transport term (0 freezes encoder/decoder).
    label_dist_mode : "source" uses the label distribution recorded on the
        mixture, "oracle" uses held-out target label frequencies passed to
        fit, "pseudo" re-estimates from current batch predictions.
    checkpoint_dir : when set, the network is also saved there every
        ``checkpoint_every`` iterations, so an aborted run leaves the last
        good checkpoint on disk.
    """

    def __init__(
        self,
        network=None,
        gmm=None,
        swd_weight: float = 0.5,
        conf_threshold: float = 0.95,
        n_projections: int = 100,
        order: int = 2,
        iterations: int = 2000,
        batch_size: int = 6,
        pseudo_batch: int | None = None,
        label_dist_mode: str = "source",
        learning_rate: float = 1e-4,
        beta1: float = 0.9,
        beta2: float = 0.999,
        eps: float = 1e-8,
        checkpoint_every: int = 500,
        checkpoint_dir: str | None = None,
        seed: int = 0,
    ):
        self.network = network
        self.gmm = gmm
        self.swd_weight = swd_weight
        self.conf_threshold = conf_threshold
        self.n_projections = n_projections
        self.order = order
        self.iterations = iterations
        self.batch_size = batch_size
        self.pseudo_batch = pseudo_batch
        self.label_dist_mode = label_dist_mode
        self.learning_rate = learning_rate
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.checkpoint_every = checkpoint_every
        self.checkpoint_dir = checkpoint_dir
        self.seed = seed

    def _label_dist(self, y, n_classes: int) -> np.ndarray | None:
        if self.label_dist_mode == "source":
            dist = getattr(self.gmm, "source_label_dist_", None)
            if dist is None:
                raise InvalidInputError(
                    "label_dist_mode='source' needs a mixture fitted with a recorded "
                    "source label distribution"
                )
            return np.asarray(dist)
        if self.label_dist_mode == "oracle":
            if y is None:
                raise InvalidInputError("label_dist_mode='oracle' needs target labels in fit")
            labels = np.asarray(y).reshape(-1)
            labels = labels[labels != 255]
            counts = np.bincount(labels, minlength=n_classes).astype(np.float64)
            return counts / counts.sum()
        if self.label_dist_mode == "pseudo":
            return None  # re-estimated per batch
        raise InvalidInputError(f"unknown label_dist_mode {self.label_dist_mode!r}")

    def fit(self, X, y=None):
        """Run the adaptation loop on target images X (labels only for oracle mode)."""
        if self.network is None or self.gmm is None:
            raise InvalidInputError("SwdAdapter needs a fitted network and mixture")
        if not hasattr(self.network, "params_"):
            raise NotFittedError("network must be fitted before adaptation")
        if getattr(self.gmm, "dim_", None) != self.network.embed_dim:
            raise InvalidInputError(
                "mixture dimension does not match the network embedding dimension"
            )
        if self.gmm.n_classes_ != self.network.n_classes:
            raise InvalidInputError("mixture and network disagree on the class count")
        X = check_images(X, channels=self.network.in_channels)
        if self.swd_weight < 0:
            raise InvalidInputError("swd_weight must be >= 0")

        net = copy.deepcopy(self.network)
        params = net.params_
        frozen_head = {
            "wc": self.network.params_["wc"].copy(),
            "bc": self.network.params_["bc"].copy(),
        }

        def frozen_classifier(z):
            return nd_softmax(np.asarray(z) @ frozen_head["wc"] + frozen_head["bc"], axis=-1)

        streams = SeedStreams(self.seed)
        batch_rng = streams.generator("batch")
        gmm_rng = streams.generator("gmm")
        feats = patch_features(X, net.patch_size).reshape(X.shape[0], -1, net.in_features)
        pixels_per_batch = min(self.batch_size, X.shape[0]) * feats.shape[1]
        pseudo_n = self.pseudo_batch or pixels_per_batch
        label_dist = self._label_dist(y, net.n_classes)

        optimizer = AdamOptimizer(self.learning_rate, self.beta1, self.beta2, self.eps)
        ce_curve, swd_curve = [], []
        last_good = copy.deepcopy(params)
        names = list(PARAM_NAMES)

        for it in range(self.iterations):
            idx = batch_rng.integers(0, X.shape[0], size=min(self.batch_size, X.shape[0]))
            batch = feats[idx].reshape(-1, net.in_features)

            param_vars = {name: ad.Var(params[name]) for name in names}
            emb = embed_pixels(param_vars, ad.Var(batch))

            if label_dist is None:
                pred = np.argmax(
                    nd_softmax(emb.value @ params["wc"] + params["bc"], axis=-1), axis=1
                )
                counts = np.bincount(pred, minlength=net.n_classes).astype(np.float64)
                dist = counts / counts.sum()
            else:
                dist = label_dist
            pseudo = self.gmm.sample_labeled(
                pseudo_n,
                frozen_classifier,
                dist,
                conf_threshold=self.conf_threshold,
                rng=gmm_rng,
            )

            ce = pseudo_ce_loss(
                param_vars["wc"], param_vars["bc"], pseudo.embeddings, pseudo.labels
            )
            directions = sample_unit_directions(
                self.n_projections, net.embed_dim, streams.generator("proj", it)
            )
            swd = swd_loss(emb, ad.Var(pseudo.embeddings), directions, order=self.order)
            total = ad.add(ce, ad.mul(swd, self.swd_weight)) if self.swd_weight > 0 else ce

            ce_val, swd_val = float(ce.value), float(swd.value)
            if not (np.isfinite(ce_val) and np.isfinite(swd_val)):
                net.params_ = last_good
                self.network_ = net
                self.ce_curve_ = np.asarray(ce_curve)
                self.swd_curve_ = np.asarray(swd_curve)
                if self.checkpoint_dir is not None:
                    net.save(self.checkpoint_dir)
                raise DivergenceError(
                    f"adaptation loss became non-finite at iteration {it}; "
                    "last checkpointed parameters restored",
                    iteration=it,
                )
            ce_curve.append(ce_val)
            swd_curve.append(swd_val)

            grads = dict(zip(names, ad.grad(total, [param_vars[n] for n in names])))
            optimizer.step(params, grads)
            if self.checkpoint_every and (it + 1) % self.checkpoint_every == 0:
                last_good = copy.deepcopy(params)
                if self.checkpoint_dir is not None:
                    net.save(self.checkpoint_dir)

        net.params_ = params
        self.network_ = net
        self.ce_curve_ = np.asarray(ce_curve)
        self.swd_curve_ = np.asarray(swd_curve)
        self.label_dist_used_ = None if label_dist is None else np.asarray(label_dist)
        return self

    def _check_fitted(self):
        if not hasattr(self, "network_"):
            raise NotFittedError("SwdAdapter is not fitted")

    def predict(self, X):
        self._check_fitted()
        return self.network_.predict(X)

    def predict_proba(self, X):
        self._check_fitted()
        return self.network_.predict_proba(X)

    def transform(self, X):
        self._check_fitted()
        return self.network_.transform(X)

    def score(self, X, y) -> float:
        self._check_fitted()
        return self.network_.score(X, y)
