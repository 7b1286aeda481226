"""Scribble annotations and the images they label.

Scribble files are single-channel 8-bit images with the value map
{0: unlabeled, 1: foreground scribble, 2: background scribble}.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image

from .errors import DataError, DimensionError, EmptyAnnotationError

UNLABELED = 0
FG_SCRIBBLE = 1
BG_SCRIBBLE = 2

_VALID_LABELS = (UNLABELED, FG_SCRIBBLE, BG_SCRIBBLE)

# ITU-R BT.601 luma coefficients for RGB -> grayscale.
_LUMA = np.array([0.299, 0.587, 0.114])


@dataclass(frozen=True)
class GrayImage:
    """A single-channel image with integral intensities in [0, 255]."""

    pixels: np.ndarray

    def __post_init__(self):
        px = np.asarray(self.pixels)
        if px.ndim != 2 or px.shape[0] < 1 or px.shape[1] < 1:
            raise DimensionError(f"expected a non-empty 2-D image, got shape {px.shape}")
        if px.min() < 0 or px.max() > 255:
            raise DataError("intensities must lie in [0, 255]")
        object.__setattr__(self, "pixels", px.astype(np.uint8))

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    @property
    def width(self) -> int:
        return self.pixels.shape[1]


@dataclass(frozen=True)
class ScribbleAnnotation:
    """Per-pixel labels in {UNLABELED, FG_SCRIBBLE, BG_SCRIBBLE}."""

    labels: np.ndarray

    def __post_init__(self):
        lab = np.asarray(self.labels)
        if lab.ndim != 2:
            raise DimensionError(f"expected a 2-D label map, got shape {lab.shape}")
        if not np.isin(lab, _VALID_LABELS).all():
            bad = sorted(set(np.unique(lab)) - set(_VALID_LABELS))
            raise DataError(f"scribble labels contain invalid values {bad}")
        object.__setattr__(self, "labels", lab.astype(np.uint8))

    @property
    def shape(self) -> tuple[int, int]:
        return self.labels.shape

    def mask(self, label: int) -> np.ndarray:
        """Boolean mask of pixels carrying ``label``."""
        return self.labels == label

    def pixels_of(self, label: int) -> np.ndarray:
        """(N, 2) array of (row, col) coordinates carrying ``label``."""
        return np.argwhere(self.labels == label)

    def require_foreground(self) -> None:
        if not (self.labels == FG_SCRIBBLE).any():
            raise EmptyAnnotationError("annotation has no foreground scribble pixels")


def to_gray(image: np.ndarray) -> GrayImage:
    """Convert an (H, W) or (H, W, 3) array to a GrayImage.

    Color inputs use the BT.601 luma formula; results are rounded to
    the nearest integer intensity.
    """
    arr = np.asarray(image)
    if arr.ndim == 3:
        if arr.shape[2] != 3:
            raise DimensionError(f"expected 3 channels, got {arr.shape[2]}")
        arr = arr.astype(np.float64) @ _LUMA
    elif arr.ndim != 2:
        raise DimensionError(f"expected a 2-D or 3-channel image, got shape {arr.shape}")
    arr = np.clip(np.rint(arr), 0, 255)
    return GrayImage(arr)


def load_image(path: str | Path) -> np.ndarray:
    """Load an image file as an (H, W, 3) uint8 RGB array."""
    try:
        with Image.open(path) as im:
            return np.asarray(im.convert("RGB"))
    except FileNotFoundError:
        raise
    except OSError as exc:
        raise DataError(f"cannot read image {path}: {exc}") from exc


def load_scribbles(path: str | Path) -> ScribbleAnnotation:
    """Load and validate a scribble file."""
    try:
        with Image.open(path) as im:
            labels = np.asarray(im.convert("L"))
    except FileNotFoundError:
        raise
    except OSError as exc:
        raise DataError(f"cannot read scribble file {path}: {exc}") from exc
    if not np.isin(labels, _VALID_LABELS).all():
        bad = sorted(set(np.unique(labels)) - set(_VALID_LABELS))
        raise DataError(f"scribble file {path} contains invalid values {bad}")
    return ScribbleAnnotation(labels)


def save_scribbles(path: str | Path, annotation: ScribbleAnnotation) -> None:
    Image.fromarray(annotation.labels, mode="L").save(path)


def load_binary_mask(path: str | Path) -> np.ndarray:
    """Load a mask file as a boolean array (any nonzero pixel is True)."""
    try:
        with Image.open(path) as im:
            return np.asarray(im.convert("L")) > 127
    except FileNotFoundError:
        raise
    except OSError as exc:
        raise DataError(f"cannot read mask {path}: {exc}") from exc


def save_binary_mask(path: str | Path, mask: np.ndarray) -> None:
    Image.fromarray((np.asarray(mask, dtype=bool) * 255).astype(np.uint8), mode="L").save(path)
