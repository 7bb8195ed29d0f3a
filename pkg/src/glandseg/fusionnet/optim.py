"""SGD with momentum and weight decay, and the fusion-net training loop."""
from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from ..core import ValidationError
from .network import FusionNet, _to_cnhw, _to_target

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 1e-3
    momentum: float = 0.9
    weight_decay: float = 0.002
    iterations: int = 2000
    batch_size: int = 4
    seed: int = 0
    # Square training patch cut from each sample per step; None = whole sample.
    patch_size: int | None = 32
    # Random quarter turns / flips of each patch (the rigid augmentation set).
    rigid_augment: bool = True

    def __post_init__(self):
        if self.learning_rate <= 0 or self.iterations <= 0 or self.batch_size <= 0:
            raise ValidationError("learning_rate, iterations and batch_size must be positive")
        if not 0 <= self.momentum < 1:
            raise ValidationError(f"momentum must lie in [0, 1), got {self.momentum}")
        if self.weight_decay < 0:
            raise ValidationError("weight_decay must be non-negative")
        if self.patch_size is not None and self.patch_size <= 0:
            raise ValidationError("patch_size must be positive")


def sgd_step(params, velocity, grads, cfg: TrainConfig):
    """One momentum update, in place; returns ``(params, velocity)``.

    ``v <- momentum * v + lr * (grad + weight_decay * param)``,
    ``param <- param - v``.
    """
    if not (len(params) == len(velocity) == len(grads)):
        raise ValidationError("params, velocity and grads differ in length")
    for p, v, g in zip(params, velocity, grads):
        if p.shape != v.shape or p.shape != g.shape:
            raise ValidationError(f"shape mismatch in sgd_step: {p.shape}, {v.shape}, {g.shape}")
        v *= cfg.momentum
        v += cfg.learning_rate * (g + cfg.weight_decay * p)
        p -= v
    return params, velocity


def _draw_batch(samples, targets, cfg: TrainConfig, rng: np.random.Generator):
    idx = rng.integers(0, len(samples), size=cfg.batch_size)
    xs, ts = [], []
    for i in idx:
        x, t = samples[i], targets[i]
        h, w = t.shape
        if cfg.patch_size is not None and cfg.patch_size < min(h, w):
            s = cfg.patch_size
            y0 = int(rng.integers(0, h - s + 1))
            x0 = int(rng.integers(0, w - s + 1))
            x = x[:, y0 : y0 + s, x0 : x0 + s]
            t = t[y0 : y0 + s, x0 : x0 + s]
        if cfg.rigid_augment:
            q = int(rng.integers(0, 4))
            x = np.rot90(x, q, axes=(1, 2))
            t = np.rot90(t, q)
            if rng.integers(0, 2):
                x = x[:, :, ::-1]
                t = t[:, ::-1]
        xs.append(x)
        ts.append(t)
    return np.stack(xs), np.stack(ts)


def train(net: FusionNet, samples, targets, cfg: TrainConfig, callback=None):
    """Train ``net`` in place on ``(C, H, W)`` channel stacks and binary targets.

    Every random choice (batch membership, patch offsets, rigid variants)
    comes from one generator seeded with ``cfg.seed``, so a run is
    reproducible from ``(seed, cfg, data)``. Returns the per-step losses.
    """
    samples = [np.asarray(s, dtype=net.dtype) for s in samples]
    targets = [np.asarray(t, dtype=np.int64) for t in targets]
    if not samples or len(samples) != len(targets):
        raise ValidationError("need equally many (non-zero) samples and targets")
    if cfg.patch_size is None and len({t.shape for t in targets}) > 1:
        raise ValidationError("samples differ in size; set patch_size to train on patches")
    rng = np.random.default_rng(cfg.seed)
    params = net.params()
    velocity = [np.zeros_like(p) for p in params]
    losses = []
    for step in range(cfg.iterations):
        xb, tb = _draw_batch(samples, targets, cfg, rng)
        x = _to_cnhw(xb, net)
        loss, grads = net.loss_and_grads(x, _to_target(tb, x))
        sgd_step(params, velocity, grads, cfg)
        losses.append(loss)
        if callback is not None:
            callback(step, loss)
        if step % 250 == 0:
            log.debug("step %d loss %.5f", step, loss)
    return losses
