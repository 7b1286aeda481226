"""Entropy-driven point prompt sampling from scribbles.

Scribble pixels are scored by the Shannon entropy of their local
intensity histogram, thresholded relative to the per-polarity maximum,
thinned with a minimum-distance greedy pass, and finally spread with
farthest point sampling. The surviving points become positive and
negative point prompts for a promptable segmenter.
"""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import ConfigurationError, DimensionError, EmptyAnnotationError
from .scribbles import BG_SCRIBBLE, FG_SCRIBBLE, GrayImage, ScribbleAnnotation

POSITIVE = "positive"
NEGATIVE = "negative"


@dataclass(frozen=True)
class EntropyMap:
    """Local entropies in bits, defined on scribble pixels (0 elsewhere)."""

    values: np.ndarray
    window_radius: int

    def __post_init__(self):
        if self.window_radius < 1:
            raise ConfigurationError("window_radius must be >= 1")


@dataclass(frozen=True)
class ScoredPoint:
    """A pixel coordinate with its local-entropy score."""

    row: int
    col: int
    entropy: float

    def distance_to(self, other: "ScoredPoint") -> float:
        return float(np.hypot(self.row - other.row, self.col - other.col))


@dataclass(frozen=True)
class PromptPoint:
    row: int
    col: int
    polarity: str
    entropy: float


@dataclass(frozen=True)
class PointPromptSet:
    """Sampled point prompts plus the parameters that produced them."""

    points: tuple[PromptPoint, ...]
    tau: float
    d_min: float
    n_points: int
    image_id: str = ""
    background_missing: bool = False

    def of_polarity(self, polarity: str) -> tuple[PromptPoint, ...]:
        return tuple(p for p in self.points if p.polarity == polarity)

    @property
    def n_positive(self) -> int:
        return len(self.of_polarity(POSITIVE))


def _sort_key(p: ScoredPoint):
    # Descending entropy, lexicographic (row, col) tie-break.
    return (-p.entropy, p.row, p.col)


def compute_local_entropy(
    image: GrayImage, scribbles: ScribbleAnnotation, window_radius: int = 5
) -> EntropyMap:
    """Shannon entropy (bits) of the local intensity histogram.

    For each scribble pixel the histogram is taken over the
    (2r+1) x (2r+1) window clipped to the image bounds; non-scribble
    pixels carry 0.
    """
    if window_radius < 1:
        raise ConfigurationError("window_radius must be >= 1")
    if image.pixels.shape != scribbles.shape:
        raise DimensionError(
            f"image shape {image.pixels.shape} != scribble shape {scribbles.shape}"
        )
    coords = np.argwhere(scribbles.labels != 0)
    if coords.size == 0:
        raise EmptyAnnotationError("annotation has no scribble pixels")

    h, w = image.pixels.shape
    r = window_radius
    values = np.zeros((h, w), dtype=np.float64)
    for row, col in coords:
        window = image.pixels[
            max(0, row - r) : min(h, row + r + 1),
            max(0, col - r) : min(w, col + r + 1),
        ]
        counts = np.bincount(window.ravel(), minlength=256)
        p = counts[counts > 0] / window.size
        values[row, col] = float(-(p * np.log2(p)).sum())
    return EntropyMap(values=values, window_radius=window_radius)


def select_candidates(
    entropy: EntropyMap,
    scribbles: ScribbleAnnotation,
    tau: float,
    polarity_label: int = FG_SCRIBBLE,
) -> list[ScoredPoint]:
    """Scribble pixels of one polarity with entropy >= tau * per-polarity max.

    With an all-zero entropy map the threshold degenerates to 0 and every
    scribble pixel of the polarity is returned.
    """
    if not 0.0 <= tau <= 1.0:
        raise ConfigurationError(f"tau must lie in [0, 1], got {tau}")
    coords = scribbles.pixels_of(polarity_label)
    if coords.size == 0:
        return []
    scores = entropy.values[coords[:, 0], coords[:, 1]]
    threshold = tau * scores.max()
    keep = scores >= threshold
    return [
        ScoredPoint(int(r), int(c), float(s))
        for (r, c), s in zip(coords[keep], scores[keep])
    ]


def spatial_filter(candidates: Sequence[ScoredPoint], d_min: float) -> list[ScoredPoint]:
    """Greedy minimum-distance thinning in descending entropy order.

    A candidate survives iff its Euclidean distance to every already-kept
    point exceeds ``d_min``.
    """
    if d_min < 0:
        raise ConfigurationError("d_min must be >= 0")
    kept: list[ScoredPoint] = []
    for cand in sorted(candidates, key=_sort_key):
        if all(cand.distance_to(k) > d_min for k in kept):
            kept.append(cand)
    return kept


def farthest_point_sample(points: Sequence[ScoredPoint], n: int) -> list[ScoredPoint]:
    """Greedy farthest point sampling seeded at the highest-entropy point.

    Each subsequent pick maximizes its minimum distance to the chosen
    set; ties break on smallest (row, col). If ``n`` >= len(points) the
    full set is returned in pick order.
    """
    if n < 1:
        raise ConfigurationError("n must be >= 1")
    if not points:
        raise ConfigurationError("farthest_point_sample requires a non-empty point set")
    remaining = sorted(points, key=_sort_key)
    chosen = [remaining.pop(0)]
    # Min squared distance of each remaining point to the chosen set.
    dist2 = [_sq_dist(p, chosen[0]) for p in remaining]
    while remaining and len(chosen) < min(n, len(points)):
        best = max(
            range(len(remaining)),
            key=lambda i: (dist2[i], -remaining[i].row, -remaining[i].col),
        )
        picked = remaining.pop(best)
        dist2.pop(best)
        chosen.append(picked)
        dist2 = [min(d, _sq_dist(p, picked)) for d, p in zip(dist2, remaining)]
    return chosen


def _sq_dist(a: ScoredPoint, b: ScoredPoint) -> float:
    return float((a.row - b.row) ** 2 + (a.col - b.col) ** 2)


def sample_prompts(
    image: GrayImage,
    scribbles: ScribbleAnnotation,
    tau: float = 0.5,
    d_min: float = 10.0,
    n_fg: int = 5,
    n_bg: int = 5,
    window_radius: int = 5,
    image_id: str = "",
) -> PointPromptSet:
    """Run the full entropy -> threshold -> thin -> spread chain per polarity."""
    if n_fg < 1:
        raise ConfigurationError("n_fg must be >= 1 (at least one positive prompt)")
    if n_bg < 0:
        raise ConfigurationError("n_bg must be >= 0")
    scribbles.require_foreground()
    entropy = compute_local_entropy(image, scribbles, window_radius)

    def chain(label: int, n: int) -> list[ScoredPoint]:
        if n == 0:
            return []
        cands = select_candidates(entropy, scribbles, tau, polarity_label=label)
        if not cands:
            return []
        cands = spatial_filter(cands, d_min)
        return farthest_point_sample(cands, n)

    fg = chain(FG_SCRIBBLE, n_fg)
    bg = chain(BG_SCRIBBLE, n_bg)
    background_missing = not scribbles.mask(BG_SCRIBBLE).any()
    if background_missing and n_bg > 0:
        warnings.warn(
            f"image {image_id or '<unnamed>'}: no background scribbles; "
            "emitting a positive-only prompt set",
            stacklevel=2,
        )
    points = [PromptPoint(p.row, p.col, POSITIVE, p.entropy) for p in fg]
    points += [PromptPoint(p.row, p.col, NEGATIVE, p.entropy) for p in bg]
    return PointPromptSet(
        points=tuple(points),
        tau=tau,
        d_min=d_min,
        n_points=n_fg + n_bg,
        image_id=image_id,
        background_missing=background_missing,
    )


def save_prompt_sets(path: str | Path, prompt_sets: Iterable[PointPromptSet]) -> None:
    """Write prompt sets as line-delimited JSON, one point per line."""
    with open(path, "w") as f:
        for ps in prompt_sets:
            for p in ps.points:
                rec = {
                    "image_id": ps.image_id,
                    "row": p.row,
                    "col": p.col,
                    "polarity": p.polarity,
                    "entropy": p.entropy,
                }
                f.write(json.dumps(rec, sort_keys=True) + "\n")


def load_prompt_sets(path: str | Path) -> dict[str, list[PromptPoint]]:
    """Read a prompt-set file back into points grouped by image id."""
    grouped: dict[str, list[PromptPoint]] = {}
    with open(path) as f:
        for line in f:
            rec = json.loads(line)
            grouped.setdefault(rec["image_id"], []).append(
                PromptPoint(rec["row"], rec["col"], rec["polarity"], rec["entropy"])
            )
    return grouped
