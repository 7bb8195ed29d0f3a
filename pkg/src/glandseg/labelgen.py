"""Auxiliary supervision labels derived from instance ground truth.

Edges come from the four-neighbour rule on instance IDs, boxes are the tight
extrema of each instance, and :func:`fill_boxes` turns a box list into a
per-pixel count of covering boxes.
"""
from __future__ import annotations

import numpy as np
from scipy import ndimage

from .core import BoundingBox, ValidationError, check_binary_mask, check_instance_map


def _neighbour_views(z: np.ndarray, border: str):
    """Up/down/left/right neighbour arrays aligned with ``z``."""
    if border == "replicate":
        p = np.pad(z, 1, mode="edge")
    elif border == "constant":
        # Out-of-image neighbours count as a distinct label, so borders are edges.
        p = np.pad(z, 1, mode="constant", constant_values=-1)
    else:
        raise ValidationError(f"border must be 'replicate' or 'constant', got {border!r}")
    return p[:-2, 1:-1], p[2:, 1:-1], p[1:-1, :-2], p[1:-1, 2:]


def derive_edge_mask(z, border: str = "replicate") -> np.ndarray:
    """Flag every pixel whose four nearest neighbours do not all share its ID.

    Background (ID 0) is an ID like any other, so both sides of a
    gland/background or gland/gland contact are flagged. With
    ``border="replicate"`` pixels outside the image are treated as equal to
    the centre pixel.
    """
    z = check_instance_map(z)
    edge = np.zeros(z.shape, dtype=bool)
    for nb in _neighbour_views(z, border):
        edge |= nb != z
    return edge.astype(np.uint8)


def instance_separated_mask(z) -> np.ndarray:
    """Foreground with pixels touching a *different* instance removed.

    This is the fusion-network target: gland/background borders are kept,
    gland/gland contacts are cut so connected components recover instances.
    """
    z = check_instance_map(z)
    cut = np.zeros(z.shape, dtype=bool)
    for nb in _neighbour_views(z, "replicate"):
        cut |= (nb != z) & (nb != 0)
    return ((z != 0) & ~cut).astype(np.uint8)


def disk(radius: int) -> np.ndarray:
    """Boolean footprint of offsets with Euclidean norm <= ``radius``."""
    r = int(radius)
    yy, xx = np.mgrid[-r : r + 1, -r : r + 1]
    return yy * yy + xx * xx <= r * r


def dilate_mask(e, radius: int) -> np.ndarray:
    """Disk dilation: a pixel is set iff a set pixel lies within distance ``radius``."""
    if radius < 0:
        raise ValidationError(f"dilation radius must be >= 0, got {radius}")
    e = check_binary_mask(e, "edge mask")
    if radius == 0 or not e.any():
        return e.copy()
    out = ndimage.binary_dilation(e.astype(bool), structure=disk(radius))
    return out.astype(np.uint8)


def derive_boxes(z) -> list[BoundingBox]:
    """Tightest inclusive box around every nonzero instance, ordered by ID."""
    z = check_instance_map(z)
    boxes = []
    ids = np.unique(z)
    ids = ids[ids != 0]
    if not ids.size:
        return boxes
    # find_objects indexes by label value; compact IDs first to bound memory.
    compact = np.searchsorted(ids, z) + 1
    compact[z == 0] = 0
    for k, sl in zip(ids.tolist(), ndimage.find_objects(compact)):
        ys, xs = sl
        boxes.append(BoundingBox(k, xs.start, xs.stop - 1, ys.start, ys.stop - 1))
    return boxes


def fill_boxes(boxes, height: int, width: int) -> np.ndarray:
    """Count, per pixel, how many closed boxes contain it."""
    diff = np.zeros((height + 1, width + 1), dtype=np.int64)
    for b in boxes:
        b.check_within(height, width)
        diff[b.y_min, b.x_min] += 1
        diff[b.y_min, b.x_max + 1] -= 1
        diff[b.y_max + 1, b.x_min] -= 1
        diff[b.y_max + 1, b.x_max + 1] += 1
    return diff.cumsum(axis=0).cumsum(axis=1)[:height, :width]


def derive_all(z, edge_radius: int = 3, border: str = "replicate"):
    """Edge mask (dilated), box list and box-count map for one instance map."""
    z = check_instance_map(z)
    edges = dilate_mask(derive_edge_mask(z, border=border), edge_radius)
    boxes = derive_boxes(z)
    return edges, boxes, fill_boxes(boxes, *z.shape)
