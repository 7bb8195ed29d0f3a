"""scikit-learn compatible wrappers.

``FusionSegmenter`` is a classifier over stacked channel planes
(``N x C x H x W`` or a list of ``C x H x W``) predicting a per-pixel
foreground mask. ``InstanceExtractor`` is a stateless transformer turning
probability maps or binary masks into instance maps. Both inherit
``get_params``/``set_params`` from :class:`sklearn.base.BaseEstimator`, so
they drop into pipelines and parameter searches.
"""
from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from .core import ValidationError, check_binary_mask
from .fusionnet.network import (
    DEFAULT_DILATIONS,
    DEFAULT_WIDTHS,
    FusionNet,
    default_layers,
    forward,
)
from .fusionnet.optim import TrainConfig, train
from .postprocess import binarize_argmax, instances_from_mask


def check_channel_stack(X, n_channels: int | None = None) -> list[np.ndarray]:
    """Validate a batch of ``C x H x W`` float planes; returns a list of arrays."""
    if isinstance(X, np.ndarray) and X.ndim == 4:
        items = list(X)
    elif isinstance(X, np.ndarray) and X.ndim == 3:
        raise ValidationError("expected a batch of C x H x W stacks; wrap a single sample in a list")
    else:
        items = list(X)
    if not items:
        raise ValidationError("empty batch")
    out = []
    for x in items:
        x = np.asarray(x, dtype=np.float64)
        if x.ndim != 3:
            raise ValidationError(f"each sample must be C x H x W, got {x.shape}")
        if n_channels is not None and x.shape[0] != n_channels:
            raise ValidationError(f"expected {n_channels} channel planes, got {x.shape[0]}")
        if not np.all(np.isfinite(x)):
            raise ValidationError("channel planes must be finite")
        out.append(x)
    return out


class FusionSegmenter(ClassifierMixin, BaseEstimator):
    """Dilated fully-convolutional fusion of channel probability planes.

    Parameters
    ----------
    widths : tuple of int
        Hidden channel counts; the network has ``len(widths) + 1`` layers.
    dilations : tuple of int
        One dilation per layer.
    learning_rate, momentum, weight_decay : float
        SGD hyperparameters.
    max_iter : int
        Number of SGD steps.
    batch_size : int
        Samples per step.
    patch_size : int or None
        Side of the random square patch trained on per sample.
    rigid_augment : bool
        Randomly rotate/flip training patches.
    random_state : int
        Seeds both the initialisation and the training stream.
    """

    def __init__(self, widths=DEFAULT_WIDTHS, dilations=DEFAULT_DILATIONS, learning_rate=1e-3,
                 momentum=0.9, weight_decay=0.002, max_iter=3000, batch_size=4, patch_size=32,
                 rigid_augment=True, random_state=0):
        self.widths = widths
        self.dilations = dilations
        self.learning_rate = learning_rate
        self.momentum = momentum
        self.weight_decay = weight_decay
        self.max_iter = max_iter
        self.batch_size = batch_size
        self.patch_size = patch_size
        self.rigid_augment = rigid_augment
        self.random_state = random_state

    def _train_config(self) -> TrainConfig:
        return TrainConfig(
            learning_rate=self.learning_rate,
            momentum=self.momentum,
            weight_decay=self.weight_decay,
            iterations=self.max_iter,
            batch_size=self.batch_size,
            seed=self.random_state,
            patch_size=self.patch_size,
            rigid_augment=self.rigid_augment,
        )

    def fit(self, X, y):
        X = check_channel_stack(X)
        y = [check_binary_mask(t, "target") for t in y]
        if len(X) != len(y):
            raise ValidationError(f"{len(X)} samples but {len(y)} targets")
        for x, t in zip(X, y):
            if x.shape[1:] != t.shape:
                raise ValidationError(f"sample {x.shape} and target {t.shape} differ in size")
        self.n_features_in_ = X[0].shape[0]
        self.classes_ = np.array([0, 1])
        layers = default_layers(self.n_features_in_, tuple(self.widths), tuple(self.dilations))
        self.net_ = FusionNet(layers, seed=self.random_state)
        self.loss_curve_ = train(self.net_, X, y, self._train_config())
        return self

    @classmethod
    def from_net(cls, net: FusionNet, **params) -> "FusionSegmenter":
        """Wrap an already trained network."""
        est = cls(**params)
        est.net_ = net
        est.n_features_in_ = net.in_channels
        est.classes_ = np.array([0, 1])
        est.loss_curve_ = []
        return est

    def predict_proba(self, X):
        """``(2, H, W)`` class probabilities per sample; an array if sizes agree."""
        check_is_fitted(self, "net_")
        X = check_channel_stack(X, self.n_features_in_)
        out = [forward(self.net_, x) for x in X]
        return np.stack(out) if len({p.shape for p in out}) == 1 else out

    def predict(self, X):
        proba = self.predict_proba(X)
        out = [binarize_argmax(p) for p in proba]
        return np.stack(out) if len({m.shape for m in out}) == 1 else out

    def score(self, X, y, sample_weight=None):
        """Mean per-image pixel accuracy."""
        pred = self.predict(X)
        accs = [float(np.mean(p == check_binary_mask(t, "target"))) for p, t in zip(pred, y)]
        return float(np.average(accs, weights=sample_weight))


class InstanceExtractor(TransformerMixin, BaseEstimator):
    """Probability maps or binary masks in, instance maps out.

    Parameters
    ----------
    connectivity : {4, 8}
    min_area : int
        Instances smaller than this become background.
    fill_holes : bool
    threshold : float
        Foreground cut-off when the input is a single probability plane.
    """

    def __init__(self, connectivity=4, min_area=100, fill_holes=True, threshold=0.5):
        self.connectivity = connectivity
        self.min_area = min_area
        self.fill_holes = fill_holes
        self.threshold = threshold

    def fit(self, X, y=None):
        return self

    def _mask(self, p):
        p = np.asarray(p)
        if p.ndim == 3 and p.shape[0] == 2:
            return binarize_argmax(p)
        if p.ndim == 2:
            if p.dtype.kind == "f" and not np.all(np.isin(p, (0.0, 1.0))):
                return (p > self.threshold).astype(np.uint8)
            return check_binary_mask(p)
        raise ValidationError(f"expected 2 x H x W probabilities or an H x W map, got {p.shape}")

    def transform(self, X):
        return [
            instances_from_mask(self._mask(p), self.connectivity, self.min_area, self.fill_holes)
            for p in X
        ]
