"""Numeric kernels: dilated 3x3 convolution, softmax/sigmoid and their losses.

Internally activations use a ``(C, N, H, W)`` layout (channel, batch, row,
column) so that the im2col matrix multiplies without transposes. The public
:func:`conv2d_dilated` also accepts a single ``(C, H, W)`` tensor.
"""
from __future__ import annotations

import numpy as np

from ..core import ValidationError

KERNEL = 3


def im2col(x: np.ndarray, dilation: int) -> np.ndarray:
    """Unfold a zero-padded ``(C, N, H, W)`` tensor into ``(C*9, N*H*W)``."""
    c, n, h, w = x.shape
    d = dilation
    xp = np.zeros((c, n, h + 2 * d, w + 2 * d), dtype=x.dtype)
    xp[:, :, d : d + h, d : d + w] = x
    cols = np.empty((c, KERNEL * KERNEL, n, h, w), dtype=x.dtype)
    for i in range(KERNEL):
        for j in range(KERNEL):
            cols[:, i * KERNEL + j] = xp[:, :, i * d : i * d + h, j * d : j * d + w]
    return cols.reshape(c * KERNEL * KERNEL, n * h * w)


def col2im(dcols: np.ndarray, shape, dilation: int) -> np.ndarray:
    """Adjoint of :func:`im2col`: scatter-add columns back onto the input grid."""
    c, n, h, w = shape
    d = dilation
    dcols = dcols.reshape(c, KERNEL * KERNEL, n, h, w)
    dxp = np.zeros((c, n, h + 2 * d, w + 2 * d), dtype=dcols.dtype)
    for i in range(KERNEL):
        for j in range(KERNEL):
            dxp[:, :, i * d : i * d + h, j * d : j * d + w] += dcols[:, i * KERNEL + j]
    return dxp[:, :, d : d + h, d : d + w]


def conv_forward(x: np.ndarray, weight: np.ndarray, bias: np.ndarray, dilation: int):
    """Batched cross-correlation; returns ``(out, cols)`` with ``cols`` cached for backward."""
    c_out = weight.shape[0]
    _, n, h, w = x.shape
    cols = im2col(x, dilation)
    out = weight.reshape(c_out, -1) @ cols
    out += bias[:, None]
    return out.reshape(c_out, n, h, w), cols


def conv_backward(dout: np.ndarray, x_shape, cols: np.ndarray, weight: np.ndarray, dilation: int):
    """Gradients ``(dx, dweight, dbias)`` of :func:`conv_forward`."""
    c_out = weight.shape[0]
    d2 = dout.reshape(c_out, -1)
    dweight = (d2 @ cols.T).reshape(weight.shape)
    dbias = d2.sum(axis=1)
    dx = col2im(weight.reshape(c_out, -1).T @ d2, x_shape, dilation)
    return dx, dweight, dbias


def conv2d_dilated(x, kernel, bias, dilation: int = 1) -> np.ndarray:
    """Dilated 3x3 cross-correlation with size-preserving zero padding.

    ``x`` is ``(C, H, W)`` or batched ``(N, C, H, W)``; ``kernel`` is
    ``(C_out, C, 3, 3)`` and ``bias`` has ``C_out`` entries.
    """
    x = np.asarray(x)
    kernel = np.asarray(kernel)
    bias = np.asarray(bias)
    if dilation < 1:
        raise ValidationError(f"dilation must be >= 1, got {dilation}")
    if kernel.ndim != 4 or kernel.shape[2:] != (KERNEL, KERNEL):
        raise ValidationError(f"kernel must be C_out x C_in x 3 x 3, got {kernel.shape}")
    single = x.ndim == 3
    if single:
        x = x[None]
    if x.ndim != 4 or x.shape[1] != kernel.shape[1]:
        raise ValidationError(f"input {x.shape} does not chain with kernel {kernel.shape}")
    if bias.shape != (kernel.shape[0],):
        raise ValidationError(f"bias must have {kernel.shape[0]} entries, got {bias.shape}")
    dtype = np.result_type(x, kernel, bias)
    out, _ = conv_forward(x.transpose(1, 0, 2, 3).astype(dtype), kernel.astype(dtype),
                          bias.astype(dtype), dilation)
    out = out.transpose(1, 0, 2, 3)
    return out[0] if single else out


def _floating(a) -> np.ndarray:
    a = np.asarray(a)
    return a if a.dtype.kind == "f" else a.astype(np.float64)


def softmax(logits, axis: int = 0) -> np.ndarray:
    """Per-pixel softmax over ``axis`` (the class axis), max-shifted for stability."""
    z = _floating(logits)
    z = z - z.max(axis=axis, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=axis, keepdims=True)


def sigmoid(x) -> np.ndarray:
    """Elementwise logistic function, evaluated without overflow."""
    x = _floating(x)
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def side_fusion(side_maps, alpha) -> np.ndarray:
    """Sigmoid of the alpha-weighted sum of M side-output activation maps."""
    maps = [np.asarray(m, dtype=np.float64) for m in side_maps]
    alpha = np.asarray(alpha, dtype=np.float64).ravel()
    if not maps or len(maps) != alpha.size:
        raise ValidationError(f"{len(maps)} side maps but {alpha.size} fusion weights")
    if len({m.shape for m in maps}) > 1:
        raise ValidationError("side maps differ in shape")
    if not np.all(np.isfinite(alpha)):
        raise ValidationError("fusion weights must be finite")
    return sigmoid(np.tensordot(alpha, np.stack(maps), axes=1))


def softmax_xent(logits, target, axis: int = 0):
    """Mean per-pixel softmax cross entropy and its gradient w.r.t. ``logits``.

    ``logits`` has the class axis at ``axis``; ``target`` holds integer class
    indices with the remaining shape.
    """
    logits = _floating(logits)
    target = np.asarray(target).astype(np.int64)
    k = logits.shape[axis]
    rest = logits.shape[:axis] + logits.shape[axis + 1 :]
    if target.shape != rest:
        raise ValidationError(f"target shape {target.shape} does not match logits {logits.shape}")
    if target.size and (target.min() < 0 or target.max() >= k):
        raise ValidationError(f"target classes must lie in [0, {k})")
    z = np.moveaxis(logits, axis, 0)
    z = z - z.max(axis=0, keepdims=True)
    log_norm = np.log(np.exp(z).sum(axis=0))
    picked = np.take_along_axis(z, target[None], axis=0)[0]
    count = target.size
    loss = float(np.sum(log_norm - picked) / count)
    grad = np.exp(z - log_norm)
    np.put_along_axis(grad, target[None], np.take_along_axis(grad, target[None], axis=0) - 1, axis=0)
    grad /= count
    return loss, np.moveaxis(grad, 0, axis)


def sigmoid_xent(logits, target):
    """Mean elementwise sigmoid cross entropy and its gradient."""
    x = _floating(logits)
    t = np.asarray(target)
    if t.shape != x.shape:
        raise ValidationError(f"target shape {t.shape} does not match logits {x.shape}")
    t = t.astype(x.dtype)
    # log(1 + e^-|x|) + max(x, 0) - x t
    per = np.logaddexp(0, -np.abs(x)) + np.maximum(x, 0) - x * t
    n = x.size
    return float(per.sum() / n), (sigmoid(x) - t) / n
