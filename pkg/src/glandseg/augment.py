"""Preprocessing and the two augmentation strategies.

Strategy I is the eight rigid variants (four quarter turns, with and without
a horizontal flip). Strategy II adds one-parameter radial distortion:
pincushion for ``k1 > 0``, barrel for ``k1 < 0``. Every transform is applied
identically to the image and to all label maps; label maps are always
sampled nearest-neighbour so no fractional IDs appear.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .core import ValidationError, check_image, check_same_shape


@dataclass(frozen=True)
class AugmentConfig:
    strategy: str = "I"
    crop_size: int = 400
    radial_k1: tuple[float, float] = (-0.15, 0.15)
    seed: int = 0

    def __post_init__(self):
        if self.strategy not in ("I", "II"):
            raise ValidationError(f"strategy must be 'I' or 'II', got {self.strategy!r}")
        if self.crop_size <= 0:
            raise ValidationError("crop_size must be positive")
        lo, hi = self.radial_k1
        if lo > hi:
            raise ValidationError("radial_k1 range is empty")
        object.__setattr__(self, "radial_k1", (float(lo), float(hi)))


def zero_mean(images, per_image: bool = False) -> list[np.ndarray]:
    """Subtract per-channel means.

    By default the mean is pooled over every pixel of every image in the
    list; ``per_image=True`` centres each image on its own.
    """
    images = [check_image(im) for im in images]
    if not images:
        raise ValidationError("zero_mean needs at least one image")
    if len({im.shape[2] for im in images}) > 1:
        raise ValidationError("images differ in channel count")
    if per_image:
        return [im - im.mean(axis=(0, 1), keepdims=True) for im in images]
    total = sum(im.sum(axis=(0, 1)) for im in images)
    count = sum(im.shape[0] * im.shape[1] for im in images)
    mean = total / count
    return [im - mean for im in images]


def _check_pair(img, labels):
    img = np.asarray(img)
    labels = [np.asarray(lab) for lab in labels]
    check_same_shape(img, *labels, names=("image",) + tuple(f"label {i}" for i in range(len(labels))))
    return img, labels


def rot_flip(img, labels, quarter_turns: int = 0, hflip: bool = False):
    """Rotate by ``quarter_turns`` x 90 degrees (counter-clockwise), then optionally mirror left-right."""
    img, labels = _check_pair(img, labels)

    def t(a):
        a = np.rot90(a, k=quarter_turns % 4, axes=(0, 1))
        if hflip:
            a = a[:, ::-1]
        return np.ascontiguousarray(a)

    return t(img), [t(lab) for lab in labels]


def _half_diagonal(h: int, w: int) -> float:
    return 0.5 * np.hypot(h - 1, w - 1)


def check_radial_k1(k1: float, r_hat_max: float = 1.0) -> None:
    """Reject ``k1`` for which ``r(1 + k1 r^2)`` stops increasing before ``r_hat_max``."""
    if not np.isfinite(k1) or 1.0 + 3.0 * k1 * r_hat_max**2 <= 0:
        raise ValidationError(f"radial coefficient {k1} makes the distortion non-monotone")


def radial_source_coords(shape, k1: float, center=None):
    """Source ``(y, x)`` for every output pixel of the radial warp."""
    h, w = shape[:2]
    cy, cx = ((h - 1) / 2.0, (w - 1) / 2.0) if center is None else center
    norm = _half_diagonal(h, w)
    far = max(np.hypot(y - cy, x - cx) for y in (0, h - 1) for x in (0, w - 1))
    check_radial_k1(k1, far / norm)
    yy, xx = np.mgrid[0:h, 0:w].astype(np.float64)
    dy, dx = yy - cy, xx - cx
    r_hat2 = (dy * dy + dx * dx) / (norm * norm)
    scale = 1.0 + k1 * r_hat2
    return cy + dy * scale, cx + dx * scale


def elastic_radial(img, labels, k1: float, center=None):
    """Radial lens distortion by inverse mapping.

    Output pixel at radius ``r`` from ``center`` samples the input at
    ``r * (1 + k1 * r_hat**2)`` on the same ray, with ``r_hat`` the radius
    over the image half-diagonal. Images are sampled bilinearly, labels
    nearest-neighbour; samples outside the image read 0.
    """
    img, labels = _check_pair(img, labels)
    if k1 == 0:
        check_radial_k1(k1)
        return img.copy(), [lab.copy() for lab in labels]
    sy, sx = radial_source_coords(img.shape, k1, center)
    coords = np.stack([sy, sx])

    def sample(a, order):
        if a.ndim == 2:
            return ndimage.map_coordinates(a, coords, order=order, mode="constant", cval=0)
        return np.stack(
            [ndimage.map_coordinates(a[..., c], coords, order=order, mode="constant", cval=0)
             for c in range(a.shape[2])],
            axis=-1,
        )

    out_img = sample(img.astype(np.float64), 1)
    out_labels = [sample(lab, 0).astype(lab.dtype) for lab in labels]
    return out_img, out_labels


def random_crop(img, labels, size: int, rng: np.random.Generator):
    """Crop the same ``size`` x ``size`` window from the image and every label."""
    img, labels = _check_pair(img, labels)
    h, w = img.shape[:2]
    if size <= 0 or size > min(h, w):
        raise ValidationError(f"crop size {size} does not fit a {h}x{w} image")
    y0 = int(rng.integers(0, h - size + 1))
    x0 = int(rng.integers(0, w - size + 1))
    win = (slice(y0, y0 + size), slice(x0, x0 + size))
    return img[win].copy(), [lab[win].copy() for lab in labels]


def rigid_variants():
    """The eight (quarter_turns, hflip) combinations of Strategy I."""
    return [(q, f) for f in (False, True) for q in range(4)]


def augment_sample(img, labels, cfg: AugmentConfig, rng: np.random.Generator):
    """Expand one sample into its augmented variants, each randomly cropped.

    Strategy I yields the 8 rigid variants. Strategy II yields those 8 plus
    8 more with a radial distortion of random ``k1`` applied before the
    rigid transform.
    """
    out = []
    plans = [(q, f, 0.0) for q, f in rigid_variants()]
    if cfg.strategy == "II":
        lo, hi = cfg.radial_k1
        plans += [(q, f, float(rng.uniform(lo, hi))) for q, f in rigid_variants()]
    for q, f, k1 in plans:
        a, labs = (img, labels) if k1 == 0 else elastic_radial(img, labels, k1)
        a, labs = rot_flip(a, labs, q, f)
        size = min(cfg.crop_size, *a.shape[:2])
        a, labs = random_crop(a, labs, size, rng)
        out.append({"quarter_turns": q, "hflip": f, "k1": k1, "image": a, "labels": labs})
    return out
