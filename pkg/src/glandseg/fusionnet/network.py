"""The seven-layer dilated fusion network and its exact gradients."""
from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from ..core import ValidationError
from .layers import conv_backward, conv_forward, im2col, softmax, softmax_xent

DEFAULT_WIDTHS = (32, 32, 64, 64, 64, 32)
DEFAULT_DILATIONS = (1, 1, 2, 2, 4, 1, 1)
N_CLASSES = 2


@dataclass(frozen=True)
class ConvLayerSpec:
    in_channels: int
    out_channels: int
    dilation: int = 1
    activation: str = "relu"

    def __post_init__(self):
        if self.in_channels < 1 or self.out_channels < 1:
            raise ValidationError(f"channel counts must be positive in {self}")
        if self.dilation < 1:
            raise ValidationError(f"dilation must be >= 1 in {self}")
        if self.activation not in ("relu", "none"):
            raise ValidationError(f"activation must be 'relu' or 'none' in {self}")


def default_layers(in_channels: int = 3, widths=DEFAULT_WIDTHS, dilations=DEFAULT_DILATIONS):
    """Layer specs ``in -> widths... -> 2`` with ReLU everywhere but the head."""
    chans = [in_channels, *widths, N_CLASSES]
    if len(dilations) != len(chans) - 1:
        raise ValidationError(f"{len(chans) - 1} layers need as many dilations, got {len(dilations)}")
    last = len(chans) - 2
    return [
        ConvLayerSpec(chans[i], chans[i + 1], int(dilations[i]), "none" if i == last else "relu")
        for i in range(len(chans) - 1)
    ]


class FusionNet:
    """Stack of size-preserving dilated 3x3 convolutions ending in 2 logits.

    Parameters live in ``weights`` (``C_out x C_in x 3 x 3``) and ``biases``;
    activations are carried in ``(C, N, H, W)`` layout.
    """

    def __init__(self, layers, weights=None, biases=None, seed: int = 0, dtype=np.float32):
        layers = list(layers)
        if not layers:
            raise ValidationError("a network needs at least one layer")
        for a, b in zip(layers, layers[1:]):
            if a.out_channels != b.in_channels:
                raise ValidationError(f"layer channels do not chain: {a} -> {b}")
        if layers[-1].out_channels != N_CLASSES:
            raise ValidationError(f"final layer must output {N_CLASSES} channels")
        self.layers = layers
        self.seed = seed
        self.dtype = np.dtype(dtype)
        if weights is None:
            weights, biases = xavier_init(layers, seed, self.dtype)
        self.weights = [np.asarray(w, dtype=self.dtype) for w in weights]
        self.biases = [np.asarray(b, dtype=self.dtype) for b in biases]
        for spec, w, b in zip(layers, self.weights, self.biases):
            if w.shape != (spec.out_channels, spec.in_channels, 3, 3) or b.shape != (spec.out_channels,):
                raise ValidationError(f"parameter shapes {w.shape}, {b.shape} do not fit {spec}")

    @classmethod
    def default(cls, in_channels: int = 3, seed: int = 0, dtype=np.float32):
        return cls(default_layers(in_channels), seed=seed, dtype=dtype)

    @property
    def in_channels(self) -> int:
        return self.layers[0].in_channels

    def params(self) -> list[np.ndarray]:
        """Parameters in manifest order: w0, b0, w1, b1, ..."""
        out = []
        for w, b in zip(self.weights, self.biases):
            out += [w, b]
        return out

    def param_names(self) -> list[str]:
        return [f"layer{i}.{kind}" for i in range(len(self.layers)) for kind in ("weight", "bias")]

    def n_params(self) -> int:
        return sum(p.size for p in self.params())

    def astype(self, dtype) -> "FusionNet":
        return FusionNet(self.layers, [w.copy() for w in self.weights],
                         [b.copy() for b in self.biases], self.seed, dtype)

    def copy(self) -> "FusionNet":
        return self.astype(self.dtype)

    def spec_dict(self) -> list[dict]:
        return [asdict(s) for s in self.layers]

    # -- forward / backward on (C, N, H, W) --------------------------------

    def logits(self, x: np.ndarray, keep: bool = False):
        """Raw class scores; with ``keep`` also return the backward cache."""
        cache = []
        a = x
        for spec, w, b in zip(self.layers, self.weights, self.biases):
            z, cols = conv_forward(a, w, b, spec.dilation)
            out = np.maximum(z, 0) if spec.activation == "relu" else z
            if keep:
                cache.append((a.shape, cols, z))
            a = out
        return (a, cache) if keep else a

    def loss_and_grads(self, x: np.ndarray, target: np.ndarray, loss_scale: float = 1.0):
        """Mean softmax cross entropy over all pixels and its parameter gradients."""
        logits, cache = self.logits(x, keep=True)
        loss, g = softmax_xent(logits, target, axis=0)
        g = g * loss_scale
        grads_w = [None] * len(self.layers)
        grads_b = [None] * len(self.layers)
        for i in range(len(self.layers) - 1, -1, -1):
            spec = self.layers[i]
            x_shape, cols, z = cache[i]
            if spec.activation == "relu":
                g = g * (z > 0)
            g, grads_w[i], grads_b[i] = conv_backward(g, x_shape, cols, self.weights[i], spec.dilation)
        grads = []
        for gw, gb in zip(grads_w, grads_b):
            grads += [gw, gb]
        return loss * loss_scale, grads


def _xavier_limit(spec: ConvLayerSpec) -> float:
    fan_in = spec.in_channels * 9
    fan_out = spec.out_channels * 9
    return float(np.sqrt(6.0 / (fan_in + fan_out)))


def xavier_init(layers, seed: int, dtype=np.float32):
    """Glorot-uniform kernels, zero biases, drawn from one seeded generator."""
    rng = np.random.default_rng(seed)
    weights, biases = [], []
    for spec in layers:
        lim = _xavier_limit(spec)
        w = rng.uniform(-lim, lim, size=(spec.out_channels, spec.in_channels, 3, 3))
        weights.append(w.astype(dtype))
        biases.append(np.zeros(spec.out_channels, dtype=dtype))
    return weights, biases


def _to_cnhw(channels, net: FusionNet) -> np.ndarray:
    x = np.asarray(channels)
    if x.ndim == 3:
        x = x[None]
    if x.ndim != 4 or x.shape[1] != net.in_channels:
        raise ValidationError(
            f"expected {net.in_channels} input planes (C x H x W or N x C x H x W), got {x.shape}"
        )
    return np.ascontiguousarray(x.transpose(1, 0, 2, 3), dtype=net.dtype)


def _to_target(target, x: np.ndarray) -> np.ndarray:
    t = np.asarray(target)
    if t.ndim == 2:
        t = t[None]
    if t.shape != (x.shape[1], x.shape[2], x.shape[3]):
        raise ValidationError(f"target shape {np.shape(target)} does not match input {x.shape}")
    return t.astype(np.int64)


def forward(net: FusionNet, channels) -> np.ndarray:
    """Class probabilities, ``(2, H, W)`` for one sample or ``(N, 2, H, W)``."""
    single = np.ndim(channels) == 3
    x = _to_cnhw(channels, net)
    p = softmax(net.logits(x), axis=0).transpose(1, 0, 2, 3)
    return p[0] if single else p


def backward(net: FusionNet, channels, target, loss_scale: float = 1.0):
    """``(loss, grads)`` with grads ordered like :meth:`FusionNet.params`."""
    x = _to_cnhw(channels, net)
    return net.loss_and_grads(x, _to_target(target, x), loss_scale)


# ---------------------------------------------------------------------------
# Finite-difference verification
# ---------------------------------------------------------------------------


@dataclass
class GradCheckReport:
    max_rel_error: float
    n_checked: int
    n_kink_skipped: int
    worst_param: str

    def __float__(self):
        return self.max_rel_error


def _relu_if(spec, z):
    return np.maximum(z, 0) if spec.activation == "relu" else z


def _loss_difference(net, li, o, delta, pre, base_masks, probs, target):
    """``L(+eps) - L(-eps)`` per sample, plus a flag for ReLU state changes.

    Sample ``b`` moves channel ``o[b]`` of layer ``li``'s pre-activation by
    ``+/-delta[b]``. Away from ReLU kinks the network is linear in that
    move, so the change of every downstream activation is propagated
    directly (difference form) instead of recomputing both perturbed passes
    and subtracting; the final softmax cross entropy difference uses
    ``log1p``/``expm1``. This keeps the central difference free of
    cancellation error on tiny gradients.
    """
    bsz = delta.shape[0]
    spec = net.layers[li]
    kink = np.zeros(bsz, dtype=bool)
    base_o = pre[li][o, 0]  # (B, H, W)
    d_o = delta
    if spec.activation == "relu":
        on = base_masks[li][o, 0]
        kink |= (((base_o + d_o) > 0) != on).any(axis=(1, 2))
        kink |= (((base_o - d_o) > 0) != on).any(axis=(1, 2))
        d_o = d_o * on
    if li == len(net.layers) - 1:
        dz = np.zeros((spec.out_channels, bsz) + delta.shape[1:])
        dz[o, np.arange(bsz)] = d_o
    else:
        nxt = net.layers[li + 1]
        cols = im2col(d_o[None], nxt.dilation).reshape(9, bsz, -1)
        w_sel = net.weights[li + 1].reshape(nxt.out_channels, -1, 9)[:, o, :]  # (C', B, 9)
        dz = np.einsum("cbk,kbp->cbp", w_sel, cols).reshape(nxt.out_channels, bsz, *delta.shape[1:])
        for i in range(li + 1, len(net.layers)):
            spec_i = net.layers[i]
            if i > li + 1:
                dz, _ = conv_forward(da, net.weights[i], np.zeros(spec_i.out_channels), spec_i.dilation)
            if spec_i.activation == "relu":
                on = base_masks[i]
                kink |= (((pre[i] + dz) > 0) != on).any(axis=(0, 2, 3))
                kink |= (((pre[i] - dz) > 0) != on).any(axis=(0, 2, 3))
                da = dz * on
            else:
                da = dz
        dz = da
    # dz: (2, B, H, W) logit change; probs: (2, 1, H, W) unperturbed softmax.
    up = np.log1p(np.sum(probs * np.expm1(dz), axis=0))
    down = np.log1p(np.sum(probs * np.expm1(-dz), axis=0))
    t = np.broadcast_to(target, up.shape)
    d_t = np.take_along_axis(dz, t[None], axis=0)[0]
    return (up - down - 2 * d_t).mean(axis=(1, 2)), kink


def grad_check(net: FusionNet, sample, epsilon: float = 1e-4, batch: int = 256) -> GradCheckReport:
    """Compare :func:`backward` against central differences for every parameter.

    Runs in float64 on a copy of ``net``; ``sample`` is ``(channels, target)``
    for a single image. Each parameter is moved by +/-``epsilon`` and the
    loss change is evaluated through the forward convolutions only, so the
    check shares no code with backpropagation. Parameters whose move flips
    a ReLU anywhere are counted in ``n_kink_skipped`` and left out, since
    the loss is not differentiable across that kink. Relative error is
    ``|a - n| / max(|a|, |n|)`` (0 when both vanish).
    """
    if not epsilon or epsilon <= 0 or not np.isfinite(epsilon):
        raise ValidationError(f"epsilon must be a positive finite number, got {epsilon}")
    net = net.astype(np.float64)
    channels, target = sample
    x = _to_cnhw(channels, net)
    if x.shape[1] != 1:
        raise ValidationError("grad_check takes a single sample")
    t = _to_target(target, x)
    _, grads = net.loss_and_grads(x, t)

    # Unperturbed pass: im2col matrices and pre-activations per layer.
    cols_list, pre = [], []
    a = x
    for spec, w, b in zip(net.layers, net.weights, net.biases):
        z, cols = conv_forward(a, w, b, spec.dilation)
        cols_list.append(cols)
        pre.append(z)
        a = _relu_if(spec, z)
    base_masks = [z > 0 for z in pre]
    probs = softmax(a, axis=0)

    worst, worst_name, checked, skipped = 0.0, "", 0, 0
    names = net.param_names()
    for li, spec in enumerate(net.layers):
        cols = cols_list[li]  # (C_in*9, H*W)
        hw = pre[li].shape[2:]
        for kind, grad in (("weight", grads[2 * li]), ("bias", grads[2 * li + 1])):
            flat = grad.reshape(spec.out_channels, -1)
            n_per = flat.shape[1]
            for s in range(0, flat.size, batch):
                chunk = np.arange(s, min(s + batch, flat.size))
                o, q = np.divmod(chunk, n_per)
                if kind == "weight":
                    delta = epsilon * cols[q].reshape(chunk.size, *hw)
                else:
                    delta = np.full((chunk.size, *hw), epsilon)
                diff, kinks = _loss_difference(net, li, o, delta, pre, base_masks, probs, t[0])
                numeric = diff / (2 * epsilon)
                analytic = flat.reshape(-1)[chunk]
                scale = np.maximum(np.abs(analytic), np.abs(numeric))
                err = np.abs(analytic - numeric)
                rel = np.divide(err, scale, out=np.zeros_like(err), where=scale > 0)
                rel[kinks] = 0.0
                skipped += int(kinks.sum())
                checked += int((~kinks).sum())
                j = int(np.argmax(rel))
                if rel[j] > worst:
                    worst = float(rel[j])
                    worst_name = f"{names[2 * li + (kind == 'bias')]}[{chunk[j]}]"
    return GradCheckReport(worst, checked, skipped, worst_name)
