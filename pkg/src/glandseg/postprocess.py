"""Turn fused probability maps into instance maps."""
from __future__ import annotations

import numpy as np
from scipy import ndimage

from .core import ValidationError, check_binary_mask, check_instance_map

_STRUCTURES = {
    4: ndimage.generate_binary_structure(2, 1),
    8: ndimage.generate_binary_structure(2, 2),
}


def binarize_argmax(p) -> np.ndarray:
    """Per-pixel argmax of a ``(2, H, W)`` probability map; ties go to background."""
    p = np.asarray(p, dtype=np.float64)
    if p.ndim != 3 or p.shape[0] != 2:
        raise ValidationError(f"probability map must be 2 x H x W, got {p.shape}")
    return (p[1] > p[0]).astype(np.uint8)


def extract_instances(y, connectivity: int = 4) -> np.ndarray:
    """Label connected foreground components 1..K in row-major discovery order."""
    if connectivity not in _STRUCTURES:
        raise ValidationError(f"connectivity must be 4 or 8, got {connectivity}")
    y = check_binary_mask(y)
    lab, _ = ndimage.label(y, structure=_STRUCTURES[connectivity])
    return lab.astype(np.int64)


def remove_small(z, min_area: int) -> np.ndarray:
    """Set instances with fewer than ``min_area`` pixels to background."""
    if min_area < 0:
        raise ValidationError(f"min_area must be >= 0, got {min_area}")
    z = check_instance_map(z)
    if min_area == 0:
        return z.copy()
    ids, counts = np.unique(z, return_counts=True)
    small = ids[(counts < min_area) & (ids != 0)]
    out = z.copy()
    out[np.isin(z, small)] = 0
    return out


def fill_holes(z) -> np.ndarray:
    """Fill background pockets enclosed by a single instance.

    A background component (4-connected) that does not reach the image
    border is given the ID of the instance surrounding it, provided exactly
    one instance borders it; pockets between two or more instances stay
    background.
    """
    z = check_instance_map(z)
    out = z.copy()
    bg, n = ndimage.label(z == 0, structure=_STRUCTURES[4])
    if n == 0:
        return out
    border = np.unique(np.concatenate([bg[0], bg[-1], bg[:, 0], bg[:, -1]]))
    for k, sl in enumerate(ndimage.find_objects(bg), start=1):
        if k in border:
            continue
        # Pad the slice by one pixel to see the enclosing ring.
        ys = slice(max(sl[0].start - 1, 0), sl[0].stop + 1)
        xs = slice(max(sl[1].start - 1, 0), sl[1].stop + 1)
        hole = bg[ys, xs] == k
        ring = ndimage.binary_dilation(hole, structure=_STRUCTURES[4]) & ~hole
        neighbours = np.unique(z[ys, xs][ring])
        neighbours = neighbours[neighbours != 0]
        if neighbours.size == 1:
            out[ys, xs][hole] = neighbours[0]
    return out


def edge_split(y, edges, connectivity: int = 4) -> np.ndarray:
    """Label ``y`` after cutting along ``edges``, then hand cut pixels back.

    Foreground pixels flagged in ``edges`` are removed before labelling;
    each removed pixel then joins the nearest surviving component
    (Euclidean distance, ties resolved by the distance transform's choice).
    """
    y = check_binary_mask(y)
    edges = check_binary_mask(edges, "edge mask")
    if y.shape != edges.shape:
        raise ValidationError("mask and edge mask differ in shape")
    core = y.astype(bool) & ~edges.astype(bool)
    z = extract_instances(core, connectivity)
    if not z.any():
        return extract_instances(y, connectivity)
    _, (iy, ix) = ndimage.distance_transform_edt(z == 0, return_indices=True)
    cut = y.astype(bool) & ~core
    out = z.copy()
    out[cut] = z[iy[cut], ix[cut]]
    return out


def instances_from_probabilities(p, connectivity: int = 4, min_area: int = 100,
                                 holes: bool = True, edges=None) -> np.ndarray:
    """binarize -> (optional edge split) -> label -> fill holes -> remove small."""
    y = binarize_argmax(p)
    z = edge_split(y, edges, connectivity) if edges is not None else extract_instances(y, connectivity)
    if holes:
        z = fill_holes(z)
    return remove_small(z, min_area)


def instances_from_mask(y, connectivity: int = 4, min_area: int = 100, holes: bool = True) -> np.ndarray:
    """Same chain as :func:`instances_from_probabilities` starting from a binary mask."""
    z = extract_instances(y, connectivity)
    if holes:
        z = fill_holes(z)
    return remove_small(z, min_area)
