"""Desk-scale per-pixel segmentation network and its training losses.

The network is an encoder/decoder/classifier composition applied
independently to every pixel: fixed 3x3 patch features feed a small MLP
(encoder = first hidden layer, decoder = second hidden layer plus an affine
map to the embedding space), and the classifier is a single affine map with
a softmax, the per-pixel equivalent of a 1x1 convolution classifier.
Training minimizes pixel-wise cross entropy with an adaptive-moment
optimizer and is deterministic given the seed.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.exceptions import NotFittedError

from . import autodiff as ad
from .errors import DivergenceError, InvalidInputError
from .numerics import SeedStreams, softmax as nd_softmax
from .tensor_io import load_tensor, save_tensor
from .validation import check_images, check_label_maps

IGNORE_VALUE = 255

PARAM_NAMES = ("w1", "b1", "w2", "b2", "w3", "b3", "wc", "bc")
CLASSIFIER_PARAMS = ("wc", "bc")
ENCODER_DECODER_PARAMS = ("w1", "b1", "w2", "b2", "w3", "b3")


def patch_features(images: np.ndarray, patch_size: int = 3) -> np.ndarray:
    """Per-pixel features: the edge-padded patch around each pixel, flattened.

    (n, w, h, c) -> (n, w, h, patch_size**2 * c).
    """
    if patch_size % 2 != 1 or patch_size < 1:
        raise InvalidInputError(f"patch_size must be odd and >= 1, got {patch_size}")
    pad = patch_size // 2
    n, w, h, _ = images.shape
    padded = np.pad(images, ((0, 0), (pad, pad), (pad, pad), (0, 0)), mode="edge")
    shifts = [
        padded[:, dx : dx + w, dy : dy + h, :]
        for dx in range(patch_size)
        for dy in range(patch_size)
    ]
    return np.concatenate(shifts, axis=3)


def init_params(
    in_features: int,
    hidden: tuple[int, int],
    embed_dim: int,
    n_classes: int,
    rng: np.random.Generator,
) -> dict[str, np.ndarray]:
    """He-style initialization of the per-pixel MLP parameters."""
    h1, h2 = hidden

    def layer(fan_in, fan_out):
        return rng.standard_normal((fan_in, fan_out)) * np.sqrt(2.0 / fan_in)

    return {
        "w1": layer(in_features, h1),
        "b1": np.zeros(h1),
        "w2": layer(h1, h2),
        "b2": np.zeros(h2),
        "w3": layer(h2, embed_dim),
        "b3": np.zeros(embed_dim),
        "wc": np.zeros((embed_dim, n_classes)),
        "bc": np.zeros(n_classes),
    }


def embed_pixels(params: dict, feats: ad.Var) -> ad.Var:
    """Encoder + decoder: flattened pixel features -> embeddings (n_pix, F)."""
    a1 = ad.relu(ad.add(ad.matmul(feats, params["w1"]), params["b1"]))
    a2 = ad.relu(ad.add(ad.matmul(a1, params["w2"]), params["b2"]))
    return ad.add(ad.matmul(a2, params["w3"]), params["b3"])


def classify_embeddings(params: dict, emb: ad.Var) -> ad.Var:
    """Classifier logits from embeddings (affine map; softmax applied by callers)."""
    return ad.add(ad.matmul(emb, params["wc"]), params["bc"])


def _as_param_vars(params: dict, names=PARAM_NAMES) -> dict[str, ad.Var]:
    return {name: ad.Var(params[name]) for name in names}


def pixel_cross_entropy(probs, labels, ignore_value: int = IGNORE_VALUE) -> ad.Var:
    """Mean negative log probability of the true class over non-ignored pixels.

    ``probs`` may be an autodiff Var or a plain array of shape (..., K) with
    labels of the matching leading shape; the log is clamped at 1e-12.
    """
    probs = ad.as_var(probs)
    n_classes = probs.value.shape[-1]
    labels = np.asarray(labels)
    if labels.shape != probs.value.shape[:-1]:
        raise InvalidInputError(
            f"labels shape {labels.shape} does not match probs shape {probs.value.shape}"
        )
    flat_probs = ad.reshape(probs, (-1, n_classes))
    flat_labels = labels.reshape(-1)
    valid = np.where(flat_labels != ignore_value)[0]
    if valid.size == 0:
        raise InvalidInputError("all pixels carry the ignore value; loss undefined")
    picked = ad.pick(flat_probs, valid, flat_labels[valid])
    return ad.mul(ad.mean(ad.clamped_log(picked)), -1.0)


def pseudo_ce_loss(wc: ad.Var, bc: ad.Var, embeddings, labels) -> ad.Var:
    """Cross entropy of an affine+softmax head on constant embeddings."""
    embeddings = np.asarray(embeddings, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    if embeddings.shape[0] == 0:
        raise InvalidInputError("pseudo-dataset is empty")
    logits = ad.add(ad.matmul(ad.Var(embeddings), wc), bc)
    probs = ad.softmax(logits, axis=-1)
    picked = ad.pick(probs, np.arange(labels.shape[0]), labels)
    return ad.mul(ad.mean(ad.clamped_log(picked)), -1.0)


def classifier_ce_on_pseudo(params: dict, embeddings, labels) -> tuple[ad.Var, dict[str, ad.Var]]:
    """Cross entropy of the classifier on pseudo-samples.

    The embeddings enter as constants, so the returned loss has gradients
    with respect to the classifier parameters only. Returns (loss, the
    classifier parameter Vars to differentiate against).
    """
    head = _as_param_vars(params, CLASSIFIER_PARAMS)
    loss = pseudo_ce_loss(head["wc"], head["bc"], embeddings, labels)
    return loss, head


class AdamOptimizer:
    """Adaptive-moment descent over a named parameter dict."""

    def __init__(self, learning_rate=1e-4, beta1=0.9, beta2=0.999, eps=1e-8):
        self.learning_rate = learning_rate
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m: dict[str, np.ndarray] = {}
        self.v: dict[str, np.ndarray] = {}

    def step(self, params: dict[str, np.ndarray], grads: dict[str, np.ndarray]) -> None:
        self.t += 1
        for name, g in grads.items():
            if name not in self.m:
                self.m[name] = np.zeros_like(params[name])
                self.v[name] = np.zeros_like(params[name])
            self.m[name] = self.beta1 * self.m[name] + (1 - self.beta1) * g
            self.v[name] = self.beta2 * self.v[name] + (1 - self.beta2) * g * g
            m_hat = self.m[name] / (1 - self.beta1**self.t)
            v_hat = self.v[name] / (1 - self.beta2**self.t)
            params[name] = params[name] - self.learning_rate * m_hat / (np.sqrt(v_hat) + self.eps)


class MlpSegmenter(BaseEstimator):
    """Per-pixel MLP segmentation network with a fit/predict interface.

    Parameters mirror the training configuration: architecture sizes, the
    adaptive-moment optimizer settings (defaults beta1=0.9, beta2=0.999,
    eps=1e-8, learning rate 1e-4), iteration and batch counts, and the seed
    controlling initialization and batch order.
    """

    def __init__(
        self,
        n_classes: int = 3,
        in_channels: int = 3,
        patch_size: int = 3,
        hidden: tuple[int, int] = (32, 32),
        embed_dim: int = 8,
        learning_rate: float = 1e-4,
        iterations: int = 1500,
        batch_size: int = 4,
        beta1: float = 0.9,
        beta2: float = 0.999,
        eps: float = 1e-8,
        seed: int = 0,
    ):
        self.n_classes = n_classes
        self.in_channels = in_channels
        self.patch_size = patch_size
        self.hidden = hidden
        self.embed_dim = embed_dim
        self.learning_rate = learning_rate
        self.iterations = iterations
        self.batch_size = batch_size
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.seed = seed

    @property
    def in_features(self) -> int:
        return self.patch_size * self.patch_size * self.in_channels

    def _init_if_needed(self):
        if not hasattr(self, "params_"):
            streams = SeedStreams(self.seed)
            self.params_ = init_params(
                self.in_features,
                tuple(self.hidden),
                self.embed_dim,
                self.n_classes,
                streams.generator("init"),
            )

    def fit(self, X, y):
        """Train on labeled source images by pixel-wise cross entropy."""
        X = check_images(X, channels=self.in_channels)
        y = check_label_maps(y, self.n_classes)
        if X.shape[0] == 0:
            raise InvalidInputError("dataset is empty")
        if X.shape[:3] != y.shape:
            raise InvalidInputError("images and label maps disagree on shape")
        self._init_if_needed()
        streams = SeedStreams(self.seed)
        batch_rng = streams.generator("batch")
        feats = patch_features(X, self.patch_size).reshape(X.shape[0], -1, self.in_features)
        labels = y.reshape(X.shape[0], -1)
        optimizer = AdamOptimizer(self.learning_rate, self.beta1, self.beta2, self.eps)

        curve = []
        for it in range(self.iterations):
            idx = batch_rng.integers(0, X.shape[0], size=min(self.batch_size, X.shape[0]))
            batch_feats = feats[idx].reshape(-1, self.in_features)
            batch_labels = labels[idx].reshape(-1)
            loss, grads = self._loss_and_grads(batch_feats, batch_labels)
            if not np.isfinite(loss):
                raise DivergenceError(
                    f"training loss became non-finite at iteration {it}", iteration=it
                )
            optimizer.step(self.params_, grads)
            curve.append(loss)
        self.loss_curve_ = np.asarray(curve)
        return self

    def _loss_and_grads(self, batch_feats, batch_labels):
        param_vars = _as_param_vars(self.params_)
        emb = embed_pixels(param_vars, ad.Var(batch_feats))
        probs = ad.softmax(classify_embeddings(param_vars, emb), axis=-1)
        loss = pixel_cross_entropy(probs, batch_labels)
        names = list(PARAM_NAMES)
        grads = ad.grad(loss, [param_vars[n] for n in names])
        return float(loss.value), dict(zip(names, grads))

    def _check_fitted(self):
        if not hasattr(self, "params_"):
            raise NotFittedError("MlpSegmenter has no parameters; call fit or load")

    def forward(self, X) -> tuple[np.ndarray, np.ndarray]:
        """Embeddings (n, w, h, F) and class probabilities (n, w, h, K)."""
        self._check_fitted()
        X = check_images(X, channels=self.in_channels)
        n, w, h, _ = X.shape
        feats = patch_features(X, self.patch_size).reshape(-1, self.in_features)
        p = self.params_
        a1 = np.maximum(feats @ p["w1"] + p["b1"], 0.0)
        a2 = np.maximum(a1 @ p["w2"] + p["b2"], 0.0)
        emb = a2 @ p["w3"] + p["b3"]
        probs = nd_softmax(emb @ p["wc"] + p["bc"], axis=-1)
        return emb.reshape(n, w, h, self.embed_dim), probs.reshape(n, w, h, self.n_classes)

    def transform(self, X) -> np.ndarray:
        return self.forward(X)[0]

    def predict_proba(self, X) -> np.ndarray:
        return self.forward(X)[1]

    def predict(self, X) -> np.ndarray:
        return np.argmax(self.forward(X)[1], axis=-1).astype(np.int64)

    def classifier_probs(self, Z) -> np.ndarray:
        """Class probabilities for raw embedding vectors (m, F)."""
        self._check_fitted()
        Z = np.asarray(Z, dtype=np.float64)
        return nd_softmax(Z @ self.params_["wc"] + self.params_["bc"], axis=-1)

    def score(self, X, y) -> float:
        """Mean intersection-over-union of predictions against label maps."""
        from .metrics import confusion_matrix, miou

        cm = confusion_matrix(check_label_maps(y, self.n_classes), self.predict(X), self.n_classes)
        return miou(cm)[1]

    def save(self, directory: str | Path) -> None:
        self._check_fitted()
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        manifest = {
            "schema": 1,
            "kind": "checkpoint",
            "arch": {
                "n_classes": self.n_classes,
                "in_channels": self.in_channels,
                "patch_size": self.patch_size,
                "hidden": list(self.hidden),
                "embed_dim": self.embed_dim,
            },
            "train": {
                "learning_rate": self.learning_rate,
                "iterations": self.iterations,
                "batch_size": self.batch_size,
                "beta1": self.beta1,
                "beta2": self.beta2,
                "eps": self.eps,
                "seed": self.seed,
            },
            "params": list(PARAM_NAMES),
        }
        (directory / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True))
        for name in PARAM_NAMES:
            save_tensor(directory / f"param_{name}.tnsr", self.params_[name])

    @classmethod
    def load(cls, directory: str | Path) -> "MlpSegmenter":
        directory = Path(directory)
        manifest = json.loads((directory / "manifest.json").read_text())
        arch, train = manifest["arch"], manifest["train"]
        model = cls(
            n_classes=arch["n_classes"],
            in_channels=arch["in_channels"],
            patch_size=arch["patch_size"],
            hidden=tuple(arch["hidden"]),
            embed_dim=arch["embed_dim"],
            learning_rate=train["learning_rate"],
            iterations=train["iterations"],
            batch_size=train["batch_size"],
            beta1=train["beta1"],
            beta2=train["beta2"],
            eps=train["eps"],
            seed=train["seed"],
        )
        model.params_ = {
            name: load_tensor(directory / f"param_{name}.tnsr") for name in manifest["params"]
        }
        return model
