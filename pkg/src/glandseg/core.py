"""Shared data model, validation helpers and file I/O.

Images and label maps are plain numpy arrays. The ``check_*`` helpers play
the role of sklearn's ``check_array``: they validate, coerce dtype and return
a fresh array, raising :class:`ValidationError` on bad input.

Coordinates follow one convention throughout: ``y`` is the row index, ``x``
the column index, origin top-left.
"""
from __future__ import annotations

import csv
import json
import os
import tempfile
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image

# Refuse anything bigger than this many pixels; nothing is streamed.
MAX_PIXELS = 1 << 26


class ValidationError(ValueError):
    """Input violates a documented precondition."""


class FormatError(ValidationError):
    """A file does not have the expected on-disk layout."""


# ---------------------------------------------------------------------------
# Domain records
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class BoundingBox:
    """Inclusive, axis-aligned box around one instance."""

    id: int
    x_min: int
    x_max: int
    y_min: int
    y_max: int

    def __post_init__(self):
        if self.id <= 0:
            raise ValidationError(f"box id must be positive, got {self.id}")
        if self.x_min < 0 or self.y_min < 0:
            raise ValidationError(f"negative box coordinate in {self}")
        if self.x_min > self.x_max or self.y_min > self.y_max:
            raise ValidationError(f"inverted box {self}")

    @property
    def area(self) -> int:
        return (self.x_max - self.x_min + 1) * (self.y_max - self.y_min + 1)

    def check_within(self, height: int, width: int) -> None:
        if self.x_max >= width or self.y_max >= height:
            raise ValidationError(f"box {self} exceeds {height}x{width} image")


@dataclass(frozen=True)
class MetricConfig:
    iou_threshold: float = 0.5
    detection_overlap_rule: str = "intersection_over_gt"

    def __post_init__(self):
        if not 0.0 < self.iou_threshold <= 1.0:
            raise ValidationError(f"iou_threshold must lie in (0, 1], got {self.iou_threshold}")
        if self.detection_overlap_rule not in ("intersection_over_gt", "iou"):
            raise ValidationError(
                f"unknown detection_overlap_rule {self.detection_overlap_rule!r}"
            )


SCORE_COLUMNS = ("f1_a", "f1_b", "dice_a", "dice_b", "haus_a", "haus_b")


@dataclass(frozen=True)
class ScoreRow:
    method: str
    f1_a: float
    f1_b: float
    dice_a: float
    dice_b: float
    haus_a: float
    haus_b: float

    def __post_init__(self):
        values = self.scores()
        if not all(np.isfinite(values)):
            raise ValidationError(f"non-finite score for {self.method!r}")
        for name in ("f1_a", "f1_b", "dice_a", "dice_b"):
            if not 0.0 <= getattr(self, name) <= 1.0:
                raise ValidationError(f"{name} of {self.method!r} outside [0, 1]")
        for name in ("haus_a", "haus_b"):
            if getattr(self, name) < 0:
                raise ValidationError(f"{name} of {self.method!r} is negative")

    def scores(self) -> tuple[float, ...]:
        return tuple(getattr(self, c) for c in SCORE_COLUMNS)


@dataclass(frozen=True)
class ScoreTable:
    rows: tuple[ScoreRow, ...] = field(default_factory=tuple)

    def __post_init__(self):
        object.__setattr__(self, "rows", tuple(self.rows))

    def __len__(self):
        return len(self.rows)


# ---------------------------------------------------------------------------
# Validation helpers
# ---------------------------------------------------------------------------


def _check_2d(a, name: str) -> np.ndarray:
    a = np.asarray(a)
    if a.ndim != 2:
        raise ValidationError(f"{name} must be 2-D, got shape {a.shape}")
    if a.size > MAX_PIXELS:
        raise ValidationError(f"{name} has {a.size} pixels, limit is {MAX_PIXELS}")
    return a


def check_instance_map(z) -> np.ndarray:
    """Return ``z`` as an int64 instance map (0 = background)."""
    z = _check_2d(z, "instance map")
    if z.dtype.kind == "f":
        if not np.all(np.isfinite(z)) or np.any(z != np.round(z)):
            raise ValidationError("instance map must hold integer IDs")
    elif z.dtype.kind not in "iub":
        raise ValidationError(f"instance map has unsupported dtype {z.dtype}")
    if z.size and z.min() < 0:
        raise ValidationError("instance IDs must be non-negative")
    return z.astype(np.int64)


def check_binary_mask(m, name: str = "mask") -> np.ndarray:
    """Return ``m`` as a uint8 array with values in {0, 1}."""
    m = _check_2d(m, name)
    if m.dtype == bool:
        return m.astype(np.uint8)
    if not np.all(np.isin(m, (0, 1))):
        raise ValidationError(f"{name} must contain only 0 and 1")
    return m.astype(np.uint8)


def check_image(img) -> np.ndarray:
    """Return ``img`` as float64 of shape (H, W, C) with C in {1, 3}."""
    img = np.asarray(img, dtype=np.float64)
    if img.ndim == 2:
        img = img[:, :, None]
    if img.ndim != 3 or img.shape[2] not in (1, 3):
        raise ValidationError(f"image must be HxW, HxWx1 or HxWx3, got {img.shape}")
    if img.shape[0] * img.shape[1] > MAX_PIXELS:
        raise ValidationError("image too large")
    if not np.all(np.isfinite(img)):
        raise ValidationError("image intensities must be finite")
    return img


def check_same_shape(*arrays, names=None) -> None:
    shapes = [np.shape(a)[:2] for a in arrays]
    if len(set(shapes)) > 1:
        label = ", ".join(names) if names else "inputs"
        raise ValidationError(f"dimension mismatch between {label}: {shapes}")


def instance_ids(z) -> np.ndarray:
    """Sorted distinct nonzero IDs present in ``z``."""
    ids = np.unique(np.asarray(z))
    return ids[ids != 0]


def instance_count(z) -> int:
    return int(instance_ids(z).size)


def instance_regions(z) -> dict[int, set[tuple[int, int]]]:
    """Map each nonzero instance ID to its set of ``(y, x)`` pixel coordinates."""
    z = check_instance_map(z)
    regions: dict[int, set[tuple[int, int]]] = {}
    ys, xs = np.nonzero(z)
    for y, x, k in zip(ys.tolist(), xs.tolist(), z[ys, xs].tolist()):
        regions.setdefault(k, set()).add((y, x))
    return regions


def relabel_sequential(z) -> np.ndarray:
    """Renumber the IDs of ``z`` to 1..K preserving their order."""
    z = check_instance_map(z)
    ids, inverse = np.unique(z, return_inverse=True)
    offset = 0 if ids.size and ids[0] == 0 else 1
    return (inverse.reshape(z.shape) + offset).astype(np.int64)


# ---------------------------------------------------------------------------
# File I/O
# ---------------------------------------------------------------------------


def _open_png(path) -> Image.Image:
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"no such file: {path}")
    try:
        im = Image.open(path)
        im.load()
    except OSError as exc:
        raise FormatError(f"{path}: not a readable image ({exc})") from exc
    return im


def atomic_write_bytes(path, data: bytes) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _save_png(arr: np.ndarray, path) -> None:
    import io

    buf = io.BytesIO()
    Image.fromarray(arr).save(buf, format="PNG")
    atomic_write_bytes(path, buf.getvalue())


def load_instance_map(path) -> np.ndarray:
    """Read a 16-bit single-channel PNG of instance IDs."""
    im = _open_png(path)
    if im.mode not in ("I;16", "I;16B", "I;16L"):
        raise FormatError(
            f"{path}: instance map must be 16-bit single-channel, got PIL mode {im.mode!r}"
        )
    return check_instance_map(np.array(im, dtype=np.uint16))


def save_instance_map(z, path) -> None:
    z = check_instance_map(z)
    if z.size and z.max() > 0xFFFF:
        raise ValidationError("instance IDs above 65535 do not fit a 16-bit PNG")
    _save_png(z.astype(np.uint16), path)


def load_mask(path) -> np.ndarray:
    """Read an 8-bit PNG with values 0/255 into a {0, 1} mask."""
    im = _open_png(path)
    if im.mode != "L":
        raise FormatError(f"{path}: mask must be 8-bit grayscale, got PIL mode {im.mode!r}")
    a = np.array(im)
    if not np.all(np.isin(a, (0, 255))):
        raise FormatError(f"{path}: mask values must be 0 or 255")
    return (a == 255).astype(np.uint8)


def save_mask(m, path) -> None:
    m = check_binary_mask(m)
    _save_png((m * 255).astype(np.uint8), path)


def load_count_map(path) -> np.ndarray:
    """Read a 16-bit PNG box-count map."""
    im = _open_png(path)
    if im.mode not in ("I;16", "I;16B", "I;16L"):
        raise FormatError(f"{path}: count map must be 16-bit, got PIL mode {im.mode!r}")
    return np.array(im, dtype=np.uint16).astype(np.int64)


def save_count_map(c, path) -> None:
    c = np.asarray(c)
    if c.size and (c.min() < 0 or c.max() > 0xFFFF):
        raise ValidationError("count map values must fit in 16 bits")
    _save_png(c.astype(np.uint16), path)


def save_probability_map(p, path) -> None:
    """Store a [0, 1] plane as a 16-bit PNG scaled to 0..65535."""
    p = np.asarray(p, dtype=np.float64)
    if p.ndim != 2 or p.size and (p.min() < 0 or p.max() > 1):
        raise ValidationError("probability map must be 2-D with values in [0, 1]")
    _save_png(np.round(p * 65535).astype(np.uint16), path)


def load_probability_map(path) -> np.ndarray:
    im = _open_png(path)
    if im.mode not in ("I;16", "I;16B", "I;16L"):
        raise FormatError(f"{path}: probability map must be 16-bit, got {im.mode!r}")
    return np.array(im, dtype=np.uint16).astype(np.float64) / 65535.0


def load_image(path) -> np.ndarray:
    """Read an 8-bit gray or RGB PNG as float64 (H, W, C) in [0, 1]."""
    im = _open_png(path)
    if im.mode == "L":
        a = np.array(im)[:, :, None]
    elif im.mode == "RGB":
        a = np.array(im)
    elif im.mode == "RGBA":
        a = np.array(im.convert("RGB"))
    else:
        raise FormatError(f"{path}: unsupported image mode {im.mode!r}")
    return a.astype(np.float64) / 255.0


def save_image(img, path) -> None:
    img = check_image(img)
    a = np.clip(np.round(img * 255), 0, 255).astype(np.uint8)
    _save_png(a[:, :, 0] if a.shape[2] == 1 else a, path)


def boxes_to_json(boxes) -> str:
    return json.dumps([asdict(b) for b in boxes], indent=2)


def save_boxes(boxes, path) -> None:
    atomic_write_bytes(path, (boxes_to_json(boxes) + "\n").encode())


def load_boxes(path) -> list[BoundingBox]:
    with open(path) as fh:
        raw = json.load(fh)
    if not isinstance(raw, list):
        raise FormatError(f"{path}: expected a JSON array of boxes")
    keys = {"id", "x_min", "x_max", "y_min", "y_max"}
    boxes = []
    for item in raw:
        if not isinstance(item, dict) or set(item) != keys:
            raise FormatError(f"{path}: box entries need exactly the keys {sorted(keys)}")
        boxes.append(BoundingBox(**{k: int(v) for k, v in item.items()}))
    return boxes


def load_score_table(path) -> ScoreTable:
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        header = tuple(reader.fieldnames or ())
        expected = ("method",) + SCORE_COLUMNS
        if header != expected:
            raise FormatError(f"{path}: header must be {','.join(expected)}, got {header}")
        rows = []
        for rec in reader:
            try:
                rows.append(ScoreRow(rec["method"], *(float(rec[c]) for c in SCORE_COLUMNS)))
            except (TypeError, ValueError) as exc:
                if isinstance(exc, ValidationError):
                    raise
                raise FormatError(f"{path}: bad score row {rec}") from exc
    return ScoreTable(rows)


def save_score_table(table: ScoreTable, path) -> None:
    import io

    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(("method",) + SCORE_COLUMNS)
    for r in table.rows:
        writer.writerow((r.method,) + tuple(repr(v) for v in r.scores()))
    atomic_write_bytes(path, buf.getvalue().encode())
