"""Evaluation mathematics for instance segmentation.

Pixel error, the instance-recognition cost, detection F1, object-level Dice
and Hausdorff, and challenge-style rank tables. All object metrics take two
instance maps (0 = background) and are invariant under relabelling of the
instance IDs on either side.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage
from scipy.spatial.distance import cdist
from scipy.stats import rankdata

from .core import (
    SCORE_COLUMNS,
    MetricConfig,
    ScoreTable,
    ValidationError,
    check_binary_mask,
    check_instance_map,
    check_same_shape,
)

# Brute-force Hausdorff below this many point pairs, distance transform above.
_BRUTE_FORCE_PAIRS = 250_000


class UndefinedMetricError(ValidationError):
    """The metric has no value for the given input (e.g. empty maps)."""


@dataclass
class MatchResult:
    tp: int
    fp: int
    fn: int
    pairs: list[tuple[int, int]] = field(default_factory=list)


# ---------------------------------------------------------------------------
# Overlap bookkeeping
# ---------------------------------------------------------------------------


@dataclass
class _Overlap:
    gt_ids: np.ndarray
    pred_ids: np.ndarray
    gt_area: np.ndarray
    pred_area: np.ndarray
    inter: np.ndarray  # (n_gt, n_pred) pixel counts


def _overlap(z_gt, z_pred) -> _Overlap:
    z_gt = check_instance_map(z_gt)
    z_pred = check_instance_map(z_pred)
    check_same_shape(z_gt, z_pred, names=("ground truth", "prediction"))
    g_ids, g_inv = np.unique(z_gt.ravel(), return_inverse=True)
    p_ids, p_inv = np.unique(z_pred.ravel(), return_inverse=True)
    table = np.zeros((g_ids.size, p_ids.size), dtype=np.int64)
    np.add.at(table, (g_inv, p_inv), 1)
    g_keep = g_ids != 0
    p_keep = p_ids != 0
    return _Overlap(
        gt_ids=g_ids[g_keep],
        pred_ids=p_ids[p_keep],
        gt_area=table.sum(axis=1)[g_keep],
        pred_area=table.sum(axis=0)[p_keep],
        inter=table[np.ix_(g_keep, p_keep)],
    )


# ---------------------------------------------------------------------------
# Pixel and instance-recognition costs
# ---------------------------------------------------------------------------


def pixel_error(y, y_hat) -> float:
    """Fraction of pixels whose binary labels disagree."""
    y = check_binary_mask(y, "segmentation label")
    y_hat = check_binary_mask(y_hat, "segmentation prediction")
    check_same_shape(y, y_hat, names=("label", "prediction"))
    if y.size == 0:
        raise UndefinedMetricError("pixel error of an empty image")
    return float(np.count_nonzero(y != y_hat)) / y.size


def instance_recognition_cost(z, z_hat, cfg: MetricConfig | None = None) -> float:
    """One minus the fraction of GT instances recovered by a predicted region.

    A predicted region counts when its IoU with a still-unmatched GT
    instance reaches ``cfg.iou_threshold`` (inclusive). Pairs are matched one
    to one, greedily by descending IoU.
    """
    cfg = cfg or MetricConfig()
    ov = _overlap(z, z_hat)
    k = ov.gt_ids.size
    if k == 0:
        raise UndefinedMetricError("instance recognition cost needs at least one GT instance")
    union = ov.gt_area[:, None] + ov.pred_area[None, :] - ov.inter
    gi, pi = np.nonzero((ov.inter > 0) & (ov.inter >= cfg.iou_threshold * union))
    iou = ov.inter[gi, pi] / union[gi, pi]
    order = np.lexsort((ov.gt_ids[gi], ov.pred_ids[pi], -iou))
    used_g, used_p = set(), set()
    for j in order:
        g, p = gi[j], pi[j]
        if g not in used_g and p not in used_p:
            used_g.add(g)
            used_p.add(p)
    return 1.0 - len(used_p) / k


# ---------------------------------------------------------------------------
# Detection F1
# ---------------------------------------------------------------------------


def match_detections(z_gt, z_pred, cfg: MetricConfig | None = None) -> MatchResult:
    """Greedy one-to-one TP/FP/FN bookkeeping.

    Candidate (pred, gt) pairs are visited by descending intersection. The
    first visit of a prediction pairs it with its most-overlapping GT object
    that is still unclaimed; the prediction is a TP if the overlap ratio
    (intersection over GT area, or IoU) exceeds the threshold, otherwise an
    FP. Predictions touching no free GT object are FPs.
    """
    cfg = cfg or MetricConfig()
    ov = _overlap(z_gt, z_pred)
    gi, pi = np.nonzero(ov.inter)
    order = np.lexsort((ov.gt_ids[gi], ov.pred_ids[pi], -ov.inter[gi, pi]))
    decided: set[int] = set()
    claimed: set[int] = set()
    pairs = []
    for j in order:
        g, p = gi[j], pi[j]
        if p in decided or g in claimed:
            continue
        decided.add(p)
        inter = ov.inter[g, p]
        if cfg.detection_overlap_rule == "iou":
            denom = ov.gt_area[g] + ov.pred_area[p] - inter
        else:
            denom = ov.gt_area[g]
        if inter > cfg.iou_threshold * denom:
            claimed.add(g)
            pairs.append((int(ov.pred_ids[p]), int(ov.gt_ids[g])))
    tp = len(pairs)
    return MatchResult(tp=tp, fp=int(ov.pred_ids.size) - tp, fn=int(ov.gt_ids.size) - tp, pairs=pairs)


def f1_from_counts(tp: int, fp: int, fn: int) -> tuple[float, float, float]:
    precision = tp / (tp + fp) if tp + fp else 0.0
    recall = tp / (tp + fn) if tp + fn else 0.0
    f1 = 2 * precision * recall / (precision + recall) if precision + recall else 0.0
    return precision, recall, f1


def detection_f1(z_gt, z_pred, cfg: MetricConfig | None = None):
    """Return ``(precision, recall, f1, MatchResult)`` for one image."""
    m = match_detections(z_gt, z_pred, cfg)
    return (*f1_from_counts(m.tp, m.fp, m.fn), m)


# ---------------------------------------------------------------------------
# Dice and Hausdorff
# ---------------------------------------------------------------------------


def _as_points(s) -> np.ndarray:
    pts = np.asarray(list(s) if isinstance(s, (set, frozenset)) else s, dtype=np.int64)
    return pts.reshape(-1, 2)


def dice(a, b) -> float:
    """Dice overlap of two pixel-coordinate sets; 1 when both are empty."""
    a = {tuple(p) for p in _as_points(a).tolist()}
    b = {tuple(p) for p in _as_points(b).tolist()}
    if not a and not b:
        return 1.0
    return 2.0 * len(a & b) / (len(a) + len(b))


def _directed_edt(src: np.ndarray, dst: np.ndarray) -> float:
    # Exact Euclidean distances on the grid; ``dst`` must be fully inside the array.
    dist = ndimage.distance_transform_edt(~dst)
    return float(dist[src].max())


def _mask_hausdorff(ma: np.ndarray, mb: np.ndarray) -> float:
    """Hausdorff distance between two boolean masks of one image."""
    na, nb = int(ma.sum()), int(mb.sum())
    if na == 0 or nb == 0:
        raise UndefinedMetricError("Hausdorff distance of an empty set")
    if na * nb <= _BRUTE_FORCE_PAIRS:
        return _points_hausdorff(np.argwhere(ma), np.argwhere(mb))
    rows = np.flatnonzero(ma.any(axis=1) | mb.any(axis=1))
    cols = np.flatnonzero(ma.any(axis=0) | mb.any(axis=0))
    crop = (slice(rows[0], rows[-1] + 1), slice(cols[0], cols[-1] + 1))
    a, b = ma[crop], mb[crop]
    return max(_directed_edt(a, b), _directed_edt(b, a))


def _points_hausdorff(pa: np.ndarray, pb: np.ndarray) -> float:
    d = cdist(pa, pb)
    return float(max(d.min(axis=1).max(), d.min(axis=0).max()))


def hausdorff(a, b) -> float:
    """Exact Euclidean Hausdorff distance between two pixel-coordinate sets."""
    pa, pb = _as_points(a), _as_points(b)
    if not len(pa) or not len(pb):
        raise UndefinedMetricError("Hausdorff distance of an empty set")
    if len(pa) * len(pb) <= _BRUTE_FORCE_PAIRS:
        return _points_hausdorff(pa, pb)
    lo = np.minimum(pa.min(axis=0), pb.min(axis=0))
    shape = tuple(np.maximum(pa.max(axis=0), pb.max(axis=0)) - lo + 1)
    ma = np.zeros(shape, dtype=bool)
    mb = np.zeros(shape, dtype=bool)
    ma[tuple((pa - lo).T)] = True
    mb[tuple((pb - lo).T)] = True
    return max(_directed_edt(ma, mb), _directed_edt(mb, ma))


def _best_counterparts(inter: np.ndarray) -> np.ndarray:
    """Column index of the maximal overlap per row; ties go to the smaller ID.

    ``np.argmax`` returns the first maximum and IDs are sorted ascending, so
    the tie rule falls out directly.
    """
    return np.argmax(inter, axis=1)


def object_dice(z_gt, z_pred) -> float:
    """Area-weighted object-level Dice, averaged over both matching directions."""
    ov = _overlap(z_gt, z_pred)
    n_g, n_s = ov.gt_ids.size, ov.pred_ids.size
    if n_g == 0 and n_s == 0:
        raise UndefinedMetricError("object Dice of two empty maps")

    def one_side(inter, own_area, other_area):
        if inter.shape[0] == 0 or inter.shape[1] == 0:
            return 0.0
        best = _best_counterparts(inter)
        hit = inter[np.arange(inter.shape[0]), best]
        d = 2.0 * hit / (own_area + other_area[best])
        return float(np.sum(own_area * d) / own_area.sum())

    s_side = one_side(ov.inter.T, ov.pred_area, ov.gt_area)
    g_side = one_side(ov.inter, ov.gt_area, ov.pred_area)
    return 0.5 * (s_side + g_side)


def object_hausdorff(z_gt, z_pred) -> float:
    """Area-weighted object-level Hausdorff distance.

    Each object is paired with the counterpart it overlaps most; an object
    overlapping nothing is paired with the counterpart at minimal Hausdorff
    distance.
    """
    z_gt = check_instance_map(z_gt)
    z_pred = check_instance_map(z_pred)
    ov = _overlap(z_gt, z_pred)
    if ov.gt_ids.size == 0 or ov.pred_ids.size == 0:
        raise UndefinedMetricError("object Hausdorff needs objects in both maps")

    cache: dict[tuple[int, int], float] = {}

    def h(gi: int, pi: int) -> float:
        key = (gi, pi)
        if key not in cache:
            cache[key] = _mask_hausdorff(z_gt == ov.gt_ids[gi], z_pred == ov.pred_ids[pi])
        return cache[key]

    def nearest(dist_fn, n_other):
        vals = [dist_fn(j) for j in range(n_other)]
        return vals[int(np.argmin(vals))]

    total_s = 0.0
    for pi in range(ov.pred_ids.size):
        col = ov.inter[:, pi]
        if col.max() > 0:
            d = h(int(np.argmax(col)), pi)
        else:
            d = nearest(lambda gi: h(gi, pi), ov.gt_ids.size)
        total_s += ov.pred_area[pi] * d
    total_g = 0.0
    for gi in range(ov.gt_ids.size):
        row = ov.inter[gi]
        if row.max() > 0:
            d = h(gi, int(np.argmax(row)))
        else:
            d = nearest(lambda pi: h(gi, pi), ov.pred_ids.size)
        total_g += ov.gt_area[gi] * d
    return 0.5 * (total_s / ov.pred_area.sum() + total_g / ov.gt_area.sum())


# ---------------------------------------------------------------------------
# Split-level evaluation
# ---------------------------------------------------------------------------


def evaluate_image(z_gt, z_pred, cfg: MetricConfig | None = None) -> dict:
    """Per-image metric record; undefined metrics are reported as ``None``."""
    cfg = cfg or MetricConfig()
    z_gt = check_instance_map(z_gt)
    z_pred = check_instance_map(z_pred)
    precision, recall, f1, m = detection_f1(z_gt, z_pred, cfg)
    rec = {
        "tp": m.tp,
        "fp": m.fp,
        "fn": m.fn,
        "precision": precision,
        "recall": recall,
        "f1": f1,
        "pixel_error": pixel_error(z_gt > 0, z_pred > 0),
    }
    for key, fn in (
        ("object_dice", lambda: object_dice(z_gt, z_pred)),
        ("object_hausdorff", lambda: object_hausdorff(z_gt, z_pred)),
        ("instance_recognition_cost", lambda: instance_recognition_cost(z_gt, z_pred, cfg)),
    ):
        try:
            rec[key] = fn()
        except UndefinedMetricError:
            rec[key] = None
    return rec


def aggregate(records) -> dict:
    """Reduce per-image records: detection counts are pooled before F1,
    object Dice/Hausdorff are averaged with equal image weight over the
    images where they are defined."""
    records = list(records)
    tp = sum(r["tp"] for r in records)
    fp = sum(r["fp"] for r in records)
    fn = sum(r["fn"] for r in records)
    precision, recall, f1 = f1_from_counts(tp, fp, fn)
    out = {
        "n_images": len(records),
        "tp": tp,
        "fp": fp,
        "fn": fn,
        "precision": precision,
        "recall": recall,
        "f1": f1,
    }
    for key in ("object_dice", "object_hausdorff", "instance_recognition_cost", "pixel_error"):
        vals = sorted(r[key] for r in records if r[key] is not None)
        out[key] = float(np.mean(vals)) if vals else None
        out[f"{key}_n"] = len(vals)
    return out


# ---------------------------------------------------------------------------
# Rank tables
# ---------------------------------------------------------------------------

# Columns where a larger score is better.
_HIGHER_IS_BETTER = {"f1_a": True, "f1_b": True, "dice_a": True, "dice_b": True,
                     "haus_a": False, "haus_b": False}


@dataclass(frozen=True)
class RankedRow:
    method: str
    scores: tuple[float, ...]
    ranks: tuple[int, ...]
    rank_sum: int
    weighted_rank_sum: float


@dataclass(frozen=True)
class RankedTable:
    rows: tuple[RankedRow, ...]

    def by_method(self, name: str) -> RankedRow:
        for r in self.rows:
            if r.method == name:
                return r
        raise KeyError(name)


def column_ranks(values, higher_is_better: bool, ties: str = "first") -> np.ndarray:
    """Rank one score column (1 = best).

    ``ties="min"`` is competition ranking (1, 2, 2, 4); ``ties="first"``
    breaks ties by input row order.
    """
    methods = {"min": "min", "first": "ordinal"}
    if ties not in methods:
        raise ValidationError(f"ties must be 'min' or 'first', got {ties!r}")
    v = np.asarray(values, dtype=np.float64)
    return rankdata(-v if higher_is_better else v, method=methods[ties]).astype(int)


def rank_table(scores: ScoreTable, weight_a: float = 0.75, weight_b: float = 0.25,
               ties: str = "first") -> RankedTable:
    """Per-column ranks, rank sum and weighted rank sum for every method."""
    if len(scores) == 0:
        raise ValidationError("rank table needs at least one row")
    matrix = np.array([r.scores() for r in scores.rows], dtype=np.float64)
    ranks = np.column_stack([
        column_ranks(matrix[:, j], _HIGHER_IS_BETTER[c], ties) for j, c in enumerate(SCORE_COLUMNS)
    ])
    part_a = [j for j, c in enumerate(SCORE_COLUMNS) if c.endswith("_a")]
    part_b = [j for j, c in enumerate(SCORE_COLUMNS) if c.endswith("_b")]
    rows = []
    for r, rk in zip(scores.rows, ranks):
        rows.append(RankedRow(
            method=r.method,
            scores=r.scores(),
            ranks=tuple(int(x) for x in rk),
            rank_sum=int(rk.sum()),
            weighted_rank_sum=float(weight_a * rk[part_a].sum() + weight_b * rk[part_b].sum()),
        ))
    return RankedTable(tuple(rows))


def ranked_table_csv(table: RankedTable) -> str:
    import csv
    import io

    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["method", *SCORE_COLUMNS, *(f"rank_{c}" for c in SCORE_COLUMNS), "rs", "wrs"])
    for r in table.rows:
        w.writerow([r.method, *(repr(s) for s in r.scores), *r.ranks, r.rank_sum,
                    f"{r.weighted_rank_sum:g}"])
    return buf.getvalue()
