"""Synthetic gland-like images and simulated channel outputs.

Glands are ellipses with a sinusoidally jittered outline, a dark nuclei rim
and an optional pale lumen, packed without overlap and often touching so
that plain foreground thresholding merges neighbours. The channel simulator
turns an instance map into noisy stand-ins for the three channel outputs:
foreground probability, edge probability and the normalised box-count map.

All randomness comes from Philox streams keyed by ``(seed, index, stream)``,
so sample ``i`` is identical no matter how many samples are generated or in
which order.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np
from scipy import ndimage

from .core import BoundingBox, ValidationError, check_instance_map
from .labelgen import derive_boxes, derive_edge_mask, dilate_mask, fill_boxes

_STREAMS = {"layout": 0, "texture": 1, "channels": 2}


class GenerationError(RuntimeError):
    """The requested glands could not be packed into the image."""


@dataclass(frozen=True)
class SynthConfig:
    image_size: int = 64
    instance_count_range: tuple[int, int] = (3, 6)
    axis_range: tuple[float, float] = (5.0, 11.0)
    lumen_probability: float = 0.5
    jitter: float = 0.12
    touch_probability: float = 0.6
    fg_blur: float = 1.0
    fg_noise: float = 0.15
    edge_radius: int = 1
    edge_dropout: float = 0.2
    edge_noise: float = 0.1
    box_jitter: int = 2
    max_retries: int = 200
    seed: int = 0

    def __post_init__(self):
        lo, hi = self.instance_count_range
        if lo < 0 or lo > hi:
            raise ValidationError(f"instance_count_range {self.instance_count_range} is empty")
        alo, ahi = self.axis_range
        if alo <= 0 or alo > ahi:
            raise ValidationError(f"axis_range {self.axis_range} is empty")
        if self.image_size < 8:
            raise ValidationError("image_size must be at least 8")
        for name in ("lumen_probability", "touch_probability", "edge_dropout"):
            if not 0 <= getattr(self, name) <= 1:
                raise ValidationError(f"{name} must lie in [0, 1]")
        for name in ("jitter", "fg_blur", "fg_noise", "edge_noise"):
            if getattr(self, name) < 0:
                raise ValidationError(f"{name} must be non-negative")
        if self.edge_radius < 0 or self.box_jitter < 0 or self.max_retries < 1:
            raise ValidationError("edge_radius, box_jitter must be >= 0 and max_retries >= 1")
        object.__setattr__(self, "instance_count_range", (int(lo), int(hi)))
        object.__setattr__(self, "axis_range", (float(alo), float(ahi)))

    def to_dict(self) -> dict:
        d = asdict(self)
        d["instance_count_range"] = list(self.instance_count_range)
        d["axis_range"] = list(self.axis_range)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "SynthConfig":
        known = set(cls.__dataclass_fields__)
        unknown = set(d) - known
        if unknown:
            raise ValidationError(f"unknown synth config keys: {sorted(unknown)}")
        d = dict(d)
        for k in ("instance_count_range", "axis_range"):
            if k in d:
                d[k] = tuple(d[k])
        return cls(**d)


def sample_rng(seed: int, index: int, stream: str) -> np.random.Generator:
    """Counter-based generator for one (seed, sample index, purpose) triple."""
    ss = np.random.SeedSequence([int(seed), int(index), _STREAMS[stream]])
    return np.random.Generator(np.random.Philox(ss))


@dataclass
class _Gland:
    cy: float
    cx: float
    a: float
    b: float
    theta: float
    harmonics: list = field(default_factory=list)  # (order, amplitude, phase)

    def radius_field(self, yy, xx):
        """Normalised radius: < 1 inside the jittered outline."""
        dy, dx = yy - self.cy, xx - self.cx
        c, s = np.cos(self.theta), np.sin(self.theta)
        u = (c * dx + s * dy) / self.a
        v = (-s * dx + c * dy) / self.b
        phi = np.arctan2(v, u)
        wobble = 1.0 + sum(amp * np.sin(k * phi + ph) for k, amp, ph in self.harmonics)
        return np.hypot(u, v) / wobble


def _random_gland(rng, cfg: SynthConfig, cy: float, cx: float) -> _Gland:
    lo, hi = cfg.axis_range
    a = rng.uniform(lo, hi)
    b = rng.uniform(max(lo, 0.6 * a), a)
    harm = []
    if cfg.jitter > 0:
        for k in (2, 3, 4):
            harm.append((k, rng.uniform(0, cfg.jitter) / (k - 1), rng.uniform(0, 2 * np.pi)))
    return _Gland(cy, cx, a, b, rng.uniform(0, np.pi), harm)


def _layout(cfg: SynthConfig, rng) -> tuple[np.ndarray, list[tuple[_Gland, np.ndarray]]]:
    n = cfg.image_size
    yy, xx = np.mgrid[0:n, 0:n].astype(np.float64)
    lo, hi = cfg.instance_count_range
    count = int(rng.integers(lo, hi + 1))
    z = np.zeros((n, n), dtype=np.int64)
    placed: list[tuple[_Gland, np.ndarray]] = []
    for k in range(1, count + 1):
        for _ in range(cfg.max_retries):
            if placed and rng.random() < cfg.touch_probability:
                anchor, _ = placed[int(rng.integers(len(placed)))]
                ang = rng.uniform(0, 2 * np.pi)
                g = _random_gland(rng, cfg, anchor.cy, anchor.cx)
                # Slide outward until clear of all existing glands: first clear spot touches.
                mask = None
                for step in range(2 * n):
                    g.cy = anchor.cy + step * np.sin(ang)
                    g.cx = anchor.cx + step * np.cos(ang)
                    m = g.radius_field(yy, xx) < 1
                    if not (m & (z != 0)).any():
                        mask = m
                        break
                if mask is None:
                    continue
            else:
                g = _random_gland(rng, cfg, rng.uniform(0, n - 1), rng.uniform(0, n - 1))
                mask = g.radius_field(yy, xx) < 1
                if (mask & (z != 0)).any():
                    continue
            full_area = np.pi * g.a * g.b
            if mask.sum() < 0.5 * full_area or mask.sum() < 4:
                continue
            # Keep instances 4-connected so each ID is a single component.
            lab, nlab = ndimage.label(mask)
            if nlab != 1:
                continue
            z[mask] = k
            placed.append((g, mask))
            break
        else:
            raise GenerationError(
                f"could not place gland {k} of {count} after {cfg.max_retries} attempts"
            )
    return z, placed


def _render(cfg: SynthConfig, z, placed, rng) -> np.ndarray:
    n = cfg.image_size
    yy, xx = np.mgrid[0:n, 0:n].astype(np.float64)
    tex = ndimage.gaussian_filter(rng.normal(0, 1, (n, n)), 3.0)
    tex /= max(np.abs(tex).max(), 1e-12)
    gray = 0.82 + 0.06 * tex
    for g, mask in placed:
        r = g.radius_field(yy, xx)
        gray[mask] = 0.55
        rim = mask & (r > 0.75)
        gray[rim] = 0.3
        if rng.random() < cfg.lumen_probability:
            gray[mask & (r < 0.4)] = 0.92
    gray = gray + rng.normal(0, 0.03, (n, n))
    tint = np.array([0.95, 0.75, 0.9])
    return np.clip(gray[:, :, None] * tint[None, None, :], 0.0, 1.0)


def generate(cfg: SynthConfig, index: int = 0):
    """Return ``(image, instance_map)`` for sample ``index``.

    ``image`` is float (H, W, 3) in [0, 1]; the instance map uses IDs 1..K.
    """
    z, placed = _layout(cfg, sample_rng(cfg.seed, index, "layout"))
    img = _render(cfg, z, placed, sample_rng(cfg.seed, index, "texture"))
    return img, z


def _jitter_boxes(boxes, cfg: SynthConfig, rng, height: int, width: int):
    if cfg.box_jitter == 0:
        return list(boxes)
    j = cfg.box_jitter
    out = []
    for b in boxes:
        d = rng.integers(-j, j + 1, size=4)
        x0 = int(np.clip(b.x_min + d[0], 0, width - 1))
        x1 = int(np.clip(b.x_max + d[1], x0, width - 1))
        y0 = int(np.clip(b.y_min + d[2], 0, height - 1))
        y1 = int(np.clip(b.y_max + d[3], y0, height - 1))
        out.append(BoundingBox(b.id, x0, x1, y0, y1))
    return out


def simulate_channels(z, cfg: SynthConfig, rng: np.random.Generator):
    """Noisy foreground, edge and box-count planes for instance map ``z``.

    Returns three float arrays in [0, 1]: blurred foreground plus Gaussian
    noise; the dilated instance edge mask with dropout and background
    clutter; and the fill count of jittered tight boxes divided by its
    maximum.
    """
    z = check_instance_map(z)
    h, w = z.shape
    fg = (z != 0).astype(np.float64)
    p_s = ndimage.gaussian_filter(fg, cfg.fg_blur) if cfg.fg_blur > 0 else fg.copy()
    if cfg.fg_noise > 0:
        p_s = p_s + rng.normal(0, cfg.fg_noise, z.shape)
    p_s = np.clip(p_s, 0.0, 1.0)

    edges = dilate_mask(derive_edge_mask(z), cfg.edge_radius).astype(np.float64)
    if cfg.edge_dropout > 0:
        edges *= rng.random(z.shape) >= cfg.edge_dropout
    if cfg.edge_noise > 0:
        edges = edges + cfg.edge_noise * rng.random(z.shape)
    p_e = np.clip(edges, 0.0, 1.0)

    counts = fill_boxes(_jitter_boxes(derive_boxes(z), cfg, rng, h, w), h, w)
    p_d = counts / max(int(counts.max()), 1)
    return p_s, p_e, p_d.astype(np.float64)


def stack_channels(p_s, p_e, p_d) -> np.ndarray:
    """Fusion-net input layout: foreground, edge, box-count planes."""
    return np.stack([p_s, p_e, p_d]).astype(np.float64)


def make_sample(cfg: SynthConfig, index: int) -> dict:
    """Image, instance map and stacked channel planes for one index."""
    img, z = generate(cfg, index)
    planes = simulate_channels(z, cfg, sample_rng(cfg.seed, index, "channels"))
    return {"index": index, "image": img, "instances": z, "channels": stack_channels(*planes)}


def make_dataset(cfg: SynthConfig, count: int, start: int = 0) -> list[dict]:
    return [make_sample(cfg, i) for i in range(start, start + count)]
