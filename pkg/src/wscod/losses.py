"""Supervision targets and training losses.

The training target mixes debate-accepted pseudo masks with dilated
scribble evidence. Three loss families supervise the network: a
BCE+IoU segmentation loss on the mixed target, a weighted BCE loss on
scribble-placement prediction, and a focal-style debias loss whose
modulation couples predicted scribble probability with segmentation
confidence so that rarely-scribbled regions receive stronger gradients.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
import torch
from scipy.ndimage import binary_dilation

from .errors import DimensionError
from .scribbles import BG_SCRIBBLE, FG_SCRIBBLE, ScribbleAnnotation

logger = logging.getLogger(__name__)

EPS = 1e-7

POLARITY_NONE = 0
POLARITY_FG = FG_SCRIBBLE
POLARITY_BG = BG_SCRIBBLE


@dataclass(frozen=True)
class LossWeights:
    alpha: float = 2.0
    beta: float = 0.5
    w_n: float = 0.02
    gamma: float = 0.9

    def __post_init__(self):
        if min(self.alpha, self.beta, self.w_n, self.gamma) < 0:
            raise ValueError("loss weights must be non-negative")


@dataclass(frozen=True)
class SupervisionTarget:
    """Mixed training target plus the scribble classification maps.

    ``y_mix`` is the dense segmentation target in [0, 1];
    ``scrib_class`` is 1 exactly where a scribble of either polarity
    sits; ``scrib_polarity`` distinguishes FG/BG/none per pixel.
    """

    y_mix: np.ndarray
    scrib_class: np.ndarray
    scrib_polarity: np.ndarray

    def __post_init__(self):
        if not (self.y_mix.shape == self.scrib_class.shape == self.scrib_polarity.shape):
            raise DimensionError("supervision target maps must share one shape")
        if self.y_mix.min() < 0 or self.y_mix.max() > 1:
            raise DimensionError("y_mix must lie in [0, 1]")
        expect = self.scrib_polarity != POLARITY_NONE
        if not np.array_equal(self.scrib_class.astype(bool), expect):
            raise DimensionError("scrib_class must be 1 exactly where polarity != none")


def disk_footprint(radius: int) -> np.ndarray:
    """Boolean disk structuring element of the given radius."""
    if radius == 0:
        return np.ones((1, 1), dtype=bool)
    y, x = np.ogrid[-radius : radius + 1, -radius : radius + 1]
    return x * x + y * y <= radius * radius


def build_mixed_target(
    pseudo_masks: list[np.ndarray],
    scribbles: ScribbleAnnotation,
    dilation_radius: int = 3,
) -> SupervisionTarget:
    """Union the pseudo masks, then let dilated scribble evidence override.

    Dilated background scribbles force 0, dilated foreground scribbles
    force 1; where the two dilations overlap, foreground wins and the
    conflict is logged. The classification maps come from the undilated
    scribbles.
    """
    if dilation_radius < 0:
        raise ValueError("dilation_radius must be >= 0")
    shape = scribbles.shape
    y_mix = np.zeros(shape, dtype=np.float64)
    for mask in pseudo_masks:
        mask = np.asarray(mask, dtype=bool)
        if mask.shape != shape:
            raise DimensionError(f"pseudo mask shape {mask.shape} != scribble shape {shape}")
        y_mix = np.maximum(y_mix, mask.astype(np.float64))

    footprint = disk_footprint(dilation_radius)
    fg = binary_dilation(scribbles.mask(FG_SCRIBBLE), structure=footprint)
    bg = binary_dilation(scribbles.mask(BG_SCRIBBLE), structure=footprint)
    conflict = int((fg & bg).sum())
    if conflict:
        logger.warning(
            "build_mixed_target: %d pixels in both dilated FG and BG scribbles; FG wins",
            conflict,
        )
    y_mix[bg] = 0.0
    y_mix[fg] = 1.0

    polarity = np.full(shape, POLARITY_NONE, dtype=np.uint8)
    polarity[scribbles.mask(FG_SCRIBBLE)] = POLARITY_FG
    polarity[scribbles.mask(BG_SCRIBBLE)] = POLARITY_BG
    scrib_class = (polarity != POLARITY_NONE).astype(np.float64)
    return SupervisionTarget(y_mix=y_mix, scrib_class=scrib_class, scrib_polarity=polarity)


def _clamp(p: torch.Tensor) -> torch.Tensor:
    return p.clamp(EPS, 1.0 - EPS)


def scribble_loss(p_scrib: torch.Tensor, y: torch.Tensor, w_n: float = 0.02) -> torch.Tensor:
    """Weighted BCE for scribble-placement classification.

    The negative (unlabeled) class is down-weighted by ``w_n`` to
    compensate for the vast number of unlabeled pixels.
    """
    if p_scrib.shape != y.shape:
        raise DimensionError(f"shape mismatch {tuple(p_scrib.shape)} vs {tuple(y.shape)}")
    p = _clamp(p_scrib)
    terms = y * torch.log(p) + w_n * (1.0 - y) * torch.log(1.0 - p)
    return -terms.mean()


def debias_loss(
    p_scrib: torch.Tensor,
    p_seg: torch.Tensor,
    scrib_polarity: torch.Tensor,
    gamma: float = 0.9,
    literal_form: bool = False,
) -> torch.Tensor:
    """Focal-style loss reweighted by predicted scribble probability.

    Evaluated on scribble pixels only. ``q`` is the class-conditioned
    segmentation confidence: p_seg on foreground scribbles, 1 - p_seg on
    background scribbles. The modulation (1 - p_scrib * q)^gamma boosts
    supervision where the model thinks a scribble is unlikely.
    ``literal_form`` keeps q = p_seg on all scribble pixels for
    ablation.
    """
    if not (p_scrib.shape == p_seg.shape == scrib_polarity.shape):
        raise DimensionError("debias_loss inputs must share one shape")
    on_scrib = scrib_polarity != POLARITY_NONE
    n_scrib = int(on_scrib.sum())
    if n_scrib == 0:
        logger.warning("debias_loss: no scribble pixels, returning 0")
        return torch.zeros((), dtype=p_seg.dtype, device=p_seg.device)
    if literal_form:
        q = p_seg
    else:
        q = torch.where(scrib_polarity == POLARITY_BG, 1.0 - p_seg, p_seg)
    q = _clamp(q)
    p_s = _clamp(p_scrib)
    modulation = (1.0 - p_s * q) ** gamma
    terms = torch.where(
        on_scrib, modulation * torch.log(q), torch.zeros_like(q)
    )
    return -terms.sum() / n_scrib


def cod_loss(p_seg: torch.Tensor, y_mix: torch.Tensor, smooth: float = 1.0) -> torch.Tensor:
    """BCE + soft-IoU segmentation loss against the mixed target."""
    if p_seg.shape != y_mix.shape:
        raise DimensionError(f"shape mismatch {tuple(p_seg.shape)} vs {tuple(y_mix.shape)}")
    p = _clamp(p_seg)
    bce = -(y_mix * torch.log(p) + (1.0 - y_mix) * torch.log(1.0 - p)).mean()
    inter = (p_seg * y_mix).sum()
    union = p_seg.sum() + y_mix.sum() - inter
    iou = 1.0 - (inter + smooth) / (union + smooth)
    return bce + iou


def total_loss(
    outputs,
    target: SupervisionTarget | dict[str, torch.Tensor],
    weights: LossWeights = LossWeights(),
    literal_debias: bool = False,
) -> tuple[torch.Tensor, dict[str, float]]:
    """Sum the three losses over the three decoder levels.

    ``outputs`` carries per-level probability maps as ``seg`` and
    ``scrib`` dicts keyed by level. Terms with zero weight are skipped
    entirely and reported as 0 in the breakdown (this is how the
    mask-only supervision ablation shows up). Returns the scalar loss
    and a per-term breakdown for logging.
    """
    seg: dict[int, torch.Tensor] = outputs.seg
    scrib: dict[int, torch.Tensor] = outputs.scrib
    maps = _target_tensors(target, next(iter(seg.values())))
    total = None
    breakdown: dict[str, float] = {}
    for k in sorted(seg):
        term_cod = cod_loss(seg[k], maps["y_mix"])
        breakdown[f"cod_{k}"] = float(term_cod.detach())
        level = term_cod
        if weights.alpha > 0:
            term_scrib = scribble_loss(scrib[k], maps["scrib_class"], weights.w_n)
            level = level + weights.alpha * term_scrib
            breakdown[f"scrib_{k}"] = float(term_scrib.detach())
        else:
            breakdown[f"scrib_{k}"] = 0.0
        if weights.beta > 0:
            term_debias = debias_loss(
                scrib[k], seg[k], maps["scrib_polarity"], weights.gamma,
                literal_form=literal_debias,
            )
            level = level + weights.beta * term_debias
            breakdown[f"debias_{k}"] = float(term_debias.detach())
        else:
            breakdown[f"debias_{k}"] = 0.0
        total = level if total is None else total + level
    breakdown["total"] = float(total.detach())
    return total, breakdown


def _target_tensors(
    target: SupervisionTarget | dict[str, torch.Tensor], like: torch.Tensor
) -> dict[str, torch.Tensor]:
    if isinstance(target, SupervisionTarget):
        kw = {"dtype": like.dtype, "device": like.device}
        maps = {
            "y_mix": torch.as_tensor(target.y_mix, **kw),
            "scrib_class": torch.as_tensor(target.scrib_class, **kw),
            "scrib_polarity": torch.as_tensor(target.scrib_polarity, device=like.device),
        }
        if like.ndim == maps["y_mix"].ndim + 1:
            # single-image target against batched predictions
            maps = {k: v.unsqueeze(0).expand(like.shape[0], *v.shape) for k, v in maps.items()}
        return maps
    return target
