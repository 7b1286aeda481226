"""Evaluation metrics and the scribble-bias distance analysis.

The four standard saliency/camouflage metrics: mean absolute error,
structure measure (region + object structural similarity, balance 0.5),
mean E-measure (enhanced alignment averaged over 256 thresholds), and
the weighted F-measure with beta^2 = 1. Plus the relative
boundary-distance histogram used to quantify where scribbles (or
high-response pixels) sit inside objects.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np
from scipy.ndimage import (
    binary_erosion,
    convolve,
    distance_transform_edt,
    label as cc_label,
)

from .errors import DimensionError

logger = logging.getLogger(__name__)

_EPS = np.finfo(np.float64).eps


def _check_pair(pred: np.ndarray, gt: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    pred = np.asarray(pred, dtype=np.float64)
    gt = np.asarray(gt)
    if pred.shape != gt.shape:
        raise DimensionError(f"prediction shape {pred.shape} != ground truth shape {gt.shape}")
    if not np.isin(gt, (0, 1)).all() and not np.isin(gt, (False, True)).all():
        raise DimensionError("ground truth must be strictly binary")
    if pred.min() < 0 or pred.max() > 1:
        raise DimensionError("prediction values must lie in [0, 1]")
    return pred, gt.astype(bool)


def minmax_normalize(pred: np.ndarray) -> np.ndarray:
    """Per-image min-max normalization; constant maps are left unchanged."""
    pred = np.asarray(pred, dtype=np.float64)
    lo, hi = pred.min(), pred.max()
    if hi > lo:
        return (pred - lo) / (hi - lo)
    return pred


def mae(pred: np.ndarray, gt: np.ndarray) -> float:
    pred, gt = _check_pair(pred, gt)
    return float(np.abs(pred - gt).mean())


def s_measure(pred: np.ndarray, gt: np.ndarray, alpha: float = 0.5) -> float:
    """Structure measure: alpha * object similarity + (1-alpha) * region similarity."""
    pred, gt = _check_pair(pred, gt)
    y = gt.mean()
    if y == 0:
        return float(1.0 - pred.mean())
    if y == 1:
        return float(pred.mean())
    score = alpha * _s_object(pred, gt) + (1.0 - alpha) * _s_region(pred, gt)
    return float(max(score, 0.0))


def _object_score(values: np.ndarray) -> float:
    x = values.mean()
    sigma_x = values.std()
    return float(2.0 * x / (x * x + 1.0 + sigma_x + _EPS))


def _s_object(pred: np.ndarray, gt: np.ndarray) -> float:
    fg = np.where(gt, pred, 0.0)
    bg = np.where(gt, 0.0, 1.0 - pred)
    u = gt.mean()
    return u * _object_score(fg[gt]) + (1.0 - u) * _object_score(bg[~gt])


def _centroid(gt: np.ndarray) -> tuple[int, int]:
    h, w = gt.shape
    total = gt.sum()
    if total == 0:
        return int(round(h / 2)), int(round(w / 2))
    rows = np.arange(h)
    cols = np.arange(w)
    cy = int(np.round((gt.sum(axis=1) * rows).sum() / total)) + 1
    cx = int(np.round((gt.sum(axis=0) * cols).sum() / total)) + 1
    return cy, cx


def _ssim(pred: np.ndarray, gt: np.ndarray) -> float:
    if pred.size == 0:
        return 0.0
    n = pred.size
    x, y = pred.mean(), gt.mean()
    sigma_x2 = ((pred - x) ** 2).sum() / (n - 1 + _EPS)
    sigma_y2 = ((gt - y) ** 2).sum() / (n - 1 + _EPS)
    sigma_xy = ((pred - x) * (gt - y)).sum() / (n - 1 + _EPS)
    num = 4.0 * x * y * sigma_xy
    den = (x * x + y * y) * (sigma_x2 + sigma_y2)
    if num != 0:
        return float(num / (den + _EPS))
    return 1.0 if den == 0 else 0.0


def _s_region(pred: np.ndarray, gt: np.ndarray) -> float:
    h, w = gt.shape
    cy, cx = _centroid(gt)
    area = h * w
    gtf = gt.astype(np.float64)
    quads_gt = (gtf[:cy, :cx], gtf[:cy, cx:], gtf[cy:, :cx], gtf[cy:, cx:])
    quads_pr = (pred[:cy, :cx], pred[:cy, cx:], pred[cy:, :cx], pred[cy:, cx:])
    w1 = cx * cy / area
    w2 = (w - cx) * cy / area
    w3 = cx * (h - cy) / area
    w4 = 1.0 - w1 - w2 - w3
    weights = (w1, w2, w3, w4)
    return float(sum(wt * _ssim(p, g) for wt, p, g in zip(weights, quads_pr, quads_gt)))


# Thresholds lie in (0, 1] so a binary prediction re-binarizes to itself
# at every threshold (sweep mean == single-threshold value).
_EM_THRESHOLDS = np.linspace(1.0 / 256.0, 1.0, 256)


def e_measure(pred: np.ndarray, gt: np.ndarray) -> float:
    """Mean enhanced-alignment measure over 256 thresholds in (0, 1]."""
    pred, gt = _check_pair(pred, gt)
    pred = minmax_normalize(pred)
    gtf = gt.astype(np.float64)
    n = gt.size
    scores = np.empty(len(_EM_THRESHOLDS))
    for i, t in enumerate(_EM_THRESHOLDS):
        binar = (pred >= t).astype(np.float64)
        if gtf.mean() == 0.0:
            enhanced = 1.0 - binar
        elif gtf.mean() == 1.0:
            enhanced = binar
        else:
            fm = binar - binar.mean()
            gm = gtf - gtf.mean()
            align = 2.0 * gm * fm / (gm * gm + fm * fm + _EPS)
            enhanced = (align + 1.0) ** 2 / 4.0
        scores[i] = enhanced.sum() / n
    return float(scores.mean())


def _matlab_gauss2d(shape: tuple[int, int] = (7, 7), sigma: float = 5.0) -> np.ndarray:
    m, n = [(s - 1) / 2.0 for s in shape]
    y, x = np.ogrid[-m : m + 1, -n : n + 1]
    h = np.exp(-(x * x + y * y) / (2.0 * sigma * sigma))
    h[h < np.finfo(h.dtype).eps * h.max()] = 0
    total = h.sum()
    if total != 0:
        h /= total
    return h


def _lex_offsets(sq: int) -> list[tuple[int, int]]:
    """All integer offsets at squared distance ``sq``, lexicographically sorted."""
    m = math.isqrt(sq)
    offsets = []
    for dr in range(-m, m + 1):
        rem = sq - dr * dr
        dc = math.isqrt(rem)
        if dc * dc == rem:
            offsets.append((dr, -dc))
            if dc:
                offsets.append((dr, dc))
    offsets.sort()
    return offsets


def _inherit_nearest_fg(err: np.ndarray, gt: np.ndarray, dst: np.ndarray) -> np.ndarray:
    """Background errors inherit the error of the nearest foreground pixel.

    Exact-distance ties resolve to the first foreground pixel in
    row-major order, which pins the value independent of any library's
    internal tie-breaking.
    """
    h, w = gt.shape
    sq_map = np.rint(dst**2).astype(np.int64)
    err_t = err.copy()
    cache: dict[int, list[tuple[int, int]]] = {}
    for r, c in np.argwhere(~gt):
        sq = int(sq_map[r, c])
        offsets = cache.get(sq)
        if offsets is None:
            offsets = cache.setdefault(sq, _lex_offsets(sq))
        for dr, dc in offsets:
            rr, cc = r + dr, c + dc
            if 0 <= rr < h and 0 <= cc < w and gt[rr, cc]:
                err_t[r, c] = err[rr, cc]
                break
    return err_t


def weighted_f_measure(pred: np.ndarray, gt: np.ndarray, beta2: float = 1.0) -> float:
    """Weighted F-measure with dependency-aware errors and importance weighting."""
    pred, gt = _check_pair(pred, gt)
    if not gt.any():
        logger.warning("weighted_f_measure: empty ground truth, returning 0")
        return 0.0

    dst = distance_transform_edt(~gt)
    err = np.abs(pred - gt.astype(np.float64))
    err_t = _inherit_nearest_fg(err, gt, dst)
    kernel = _matlab_gauss2d((7, 7), 5.0)
    err_smooth = convolve(err_t, kernel, mode="constant", cval=0.0)
    min_err = np.where(gt & (err_smooth < err), err_smooth, err)
    # Pixels far from the object matter less.
    importance = np.where(gt, 1.0, 2.0 - np.exp(np.log(0.5) / 5.0 * dst))
    ew = min_err * importance

    tpw = gt.sum() - ew[gt].sum()
    fpw = ew[~gt].sum()
    recall = 1.0 - ew[gt].mean()
    precision = tpw / (tpw + fpw + _EPS)
    return float(
        (1.0 + beta2) * precision * recall / (beta2 * precision + recall + _EPS)
    )


@dataclass(frozen=True)
class DistanceHistogram:
    """Histogram of relative boundary distances per pixel source."""

    bin_edges: np.ndarray
    counts: dict[str, np.ndarray]

    def mass_fraction(self, source: str, lo: float, hi: float) -> float:
        """Fraction of the source's mass whose bin midpoint lies in [lo, hi]."""
        counts = self.counts[source]
        total = counts.sum()
        if total == 0:
            return 0.0
        mids = 0.5 * (self.bin_edges[:-1] + self.bin_edges[1:])
        sel = (mids >= lo) & (mids <= hi)
        return float(counts[sel].sum() / total)


def relative_boundary_distances(counted: np.ndarray, gt: np.ndarray) -> np.ndarray:
    """Relative distance of each counted pixel to its nearest object boundary.

    Distances are normalized by the maximum interior distance of the
    component whose boundary is nearest, so values live in [0, 1]
    (1 = object center, 0 = on the boundary). A single-pixel object has
    normalizer 0; its pixels map to 0 by convention.
    """
    counted = np.asarray(counted, dtype=bool)
    gt = np.asarray(gt, dtype=bool)
    if counted.shape != gt.shape:
        raise DimensionError(f"shape mismatch {counted.shape} vs {gt.shape}")
    if not gt.any() or not counted.any():
        return np.zeros(0)

    boundary = gt & ~binary_erosion(gt, border_value=0)
    dist, idx = distance_transform_edt(~boundary, return_indices=True)
    components, n_comp = cc_label(gt)
    # Max interior distance per component (the object inradius).
    normalizer = np.zeros(n_comp + 1)
    for comp in range(1, n_comp + 1):
        normalizer[comp] = dist[components == comp].max()

    rows, cols = np.nonzero(counted)
    nearest_comp = components[idx[0][rows, cols], idx[1][rows, cols]]
    norms = normalizer[nearest_comp]
    rel = np.where(norms > 0, dist[rows, cols] / np.maximum(norms, _EPS), 0.0)
    return np.clip(rel, 0.0, 1.0)


def boundary_distance_histogram(
    counted_maps: Sequence[np.ndarray],
    gt_masks: Sequence[np.ndarray],
    n_bins: int = 20,
    source: str = "scribble",
) -> DistanceHistogram:
    """Histogram relative boundary distances over a corpus of images.

    ``counted_maps`` are boolean maps of the pixels to analyze (scribble
    pixels, mask pixels, or thresholded high-response pixels). Images
    with an empty ground truth are skipped with a log entry.
    """
    edges = np.linspace(0.0, 1.0, n_bins + 1)
    counts = np.zeros(n_bins, dtype=np.int64)
    for i, (counted, gt) in enumerate(zip(counted_maps, gt_masks)):
        if not np.asarray(gt, dtype=bool).any():
            logger.warning("boundary_distance_histogram: sample %d has empty GT, skipped", i)
            continue
        rel = relative_boundary_distances(counted, gt)
        if rel.size:
            hist, _ = np.histogram(rel, bins=edges)
            counts += hist
    return DistanceHistogram(bin_edges=edges, counts={source: counts})


def high_response_mask(prob_map: np.ndarray, percentile: float = 90.0) -> np.ndarray:
    """Pixels whose predicted probability exceeds the per-image percentile."""
    prob_map = np.asarray(prob_map, dtype=np.float64)
    return prob_map > np.percentile(prob_map, percentile)


def evaluate_pairs(pairs: Iterable[tuple[np.ndarray, np.ndarray]]) -> dict[str, float]:
    """Average the four metrics over (prediction, ground truth) pairs."""
    rows = [
        (mae(p, g), s_measure(p, g), e_measure(p, g), weighted_f_measure(p, g))
        for p, g in pairs
    ]
    if not rows:
        raise DimensionError("no evaluation pairs")
    arr = np.asarray(rows)
    return {
        "mae": float(arr[:, 0].mean()),
        "s_measure": float(arr[:, 1].mean()),
        "e_measure": float(arr[:, 2].mean()),
        "weighted_f": float(arr[:, 3].mean()),
    }


def format_metric_table(results: dict[str, dict[str, float]]) -> str:
    """Render {dataset: metrics} as an aligned text table."""
    header = f"{'dataset':<16} {'MAE':>8} {'S':>8} {'E':>8} {'wF':>8}"
    lines = [header, "-" * len(header)]
    for name, m in results.items():
        lines.append(
            f"{name:<16} {m['mae']:>8.4f} {m['s_measure']:>8.4f} "
            f"{m['e_measure']:>8.4f} {m['weighted_f']:>8.4f}"
        )
    return "\n".join(lines)
