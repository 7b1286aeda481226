"""Dataset manifests, directory ingestion, and the synthetic fixture corpus."""

from __future__ import annotations

import json
import logging
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image
from scipy.ndimage import binary_dilation, binary_erosion

from .errors import DataError
from .scribbles import BG_SCRIBBLE, FG_SCRIBBLE, ScribbleAnnotation, save_scribbles

logger = logging.getLogger(__name__)

IMAGE_EXTENSIONS = (".png", ".jpg", ".jpeg", ".bmp")


@dataclass
class ManifestRecord:
    image_id: str
    image_path: str
    scribble_path: str = ""
    gt_path: str = ""
    pseudo_path: str = ""
    flags: list[str] = field(default_factory=list)

    @property
    def usable_for_training(self) -> bool:
        return not self.flags and bool(self.scribble_path)

    @property
    def usable_for_eval(self) -> bool:
        return not self.flags and bool(self.gt_path)


@dataclass
class DatasetManifest:
    split: str
    records: list[ManifestRecord]

    def __post_init__(self):
        if not self.records:
            raise DataError(f"dataset split {self.split!r} has no records")

    @property
    def flagged(self) -> list[ManifestRecord]:
        return [r for r in self.records if r.flags]

    def save(self, path: str | Path) -> None:
        payload = {"split": self.split, "records": [asdict(r) for r in self.records]}
        Path(path).write_text(json.dumps(payload, indent=2, sort_keys=True))

    @classmethod
    def load(cls, path: str | Path) -> "DatasetManifest":
        data = json.loads(Path(path).read_text())
        return cls(
            split=data["split"],
            records=[ManifestRecord(**r) for r in data["records"]],
        )


@dataclass(frozen=True)
class DatasetLayout:
    """Relative directory names under the dataset root."""

    images: str = "images"
    scribbles: str = "scribbles"
    gt: str = "gt"
    pseudo: str = ""

    @classmethod
    def from_dict(cls, data: dict) -> "DatasetLayout":
        return cls(**data)


def _find_by_stem(directory: Path, stem: str) -> Path | None:
    for ext in IMAGE_EXTENSIONS:
        candidate = directory / f"{stem}{ext}"
        if candidate.exists():
            return candidate
    return None


def ingest_dataset(
    root: str | Path,
    layout: DatasetLayout = DatasetLayout(),
    split: str = "train",
) -> DatasetManifest:
    """Walk the dataset root and build a validated manifest.

    Images are matched to scribbles/ground truth by filename stem.
    Missing or unreadable companions flag the record rather than
    aborting the walk; an image directory with no readable images is an
    error.
    """
    root = Path(root)
    image_dir = root / layout.images
    if not image_dir.is_dir():
        raise DataError(f"image directory not found: {image_dir}")

    records: list[ManifestRecord] = []
    for image_path in sorted(image_dir.iterdir()):
        if image_path.suffix.lower() not in IMAGE_EXTENSIONS:
            continue
        rec = ManifestRecord(image_id=image_path.stem, image_path=str(image_path))
        try:
            with Image.open(image_path) as im:
                shape = (im.height, im.width)
        except OSError:
            rec.flags.append("corrupt_image")
            records.append(rec)
            continue

        scribble_path = _find_by_stem(root / layout.scribbles, image_path.stem)
        if scribble_path is None:
            rec.flags.append("missing_scribble")
        else:
            rec.scribble_path = str(scribble_path)
            with Image.open(scribble_path) as im:
                if (im.height, im.width) != shape:
                    rec.flags.append("scribble_shape_mismatch")

        gt_path = _find_by_stem(root / layout.gt, image_path.stem)
        if gt_path is not None:
            rec.gt_path = str(gt_path)

        if layout.pseudo:
            pseudo_path = _find_by_stem(root / layout.pseudo, image_path.stem)
            if pseudo_path is not None:
                rec.pseudo_path = str(pseudo_path)

        records.append(rec)

    if not records:
        raise DataError(f"no images found under {image_dir}")
    for rec in records:
        if rec.flags:
            logger.warning("ingest: record %s flagged %s", rec.image_id, rec.flags)
    return DatasetManifest(split=split, records=records)


def _ellipse_mask(size: int, center: tuple[float, float], axes: tuple[float, float]) -> np.ndarray:
    yy, xx = np.mgrid[0:size, 0:size]
    return ((yy - center[0]) / axes[0]) ** 2 + ((xx - center[1]) / axes[1]) ** 2 <= 1.0


def _smooth_noise(rng: np.random.Generator, size: int, cells: int = 8) -> np.ndarray:
    coarse = rng.uniform(0.0, 1.0, size=(cells, cells))
    reps = size // cells
    return np.kron(coarse, np.ones((reps, reps)))


def _stroke(rng: np.random.Generator, allowed: np.ndarray, length: int) -> np.ndarray:
    """A short straight stroke inside the allowed region (random anchor)."""
    stroke = np.zeros_like(allowed)
    coords = np.argwhere(allowed)
    if coords.size == 0:
        return stroke
    r, c = coords[rng.integers(len(coords))]
    horizontal = bool(rng.integers(2))
    size = allowed.shape[0]
    for t in range(-length // 2, length // 2 + 1):
        rr = r if horizontal else min(max(r + t, 0), size - 1)
        cc = min(max(c + t, 0), size - 1) if horizontal else c
        if allowed[rr, cc]:
            stroke[rr, cc] = True
    return stroke


def make_fixture_corpus(
    root: str | Path,
    n_images: int = 8,
    size: int = 64,
    seed: int = 0,
) -> DatasetManifest:
    """Write a synthetic scribble-annotated corpus for offline runs.

    Each image hides a low-contrast ellipse in smooth background noise;
    scribbles are one short foreground stroke near the object center and
    one background stroke well outside the object. Ground-truth masks
    are stored alongside for oracle backends and evaluation.
    """
    root = Path(root)
    for sub in ("images", "scribbles", "gt"):
        (root / sub).mkdir(parents=True, exist_ok=True)

    for i in range(n_images):
        rng = np.random.default_rng(seed * 1000 + i)
        base = _smooth_noise(rng, size)
        center = (
            rng.uniform(size * 0.3, size * 0.7),
            rng.uniform(size * 0.3, size * 0.7),
        )
        axes = (rng.uniform(size * 0.12, size * 0.22), rng.uniform(size * 0.12, size * 0.22))
        gt = _ellipse_mask(size, center, axes)

        texture = base + rng.normal(0.0, 0.03, size=(size, size))
        texture = np.where(gt, texture * 0.85 + 0.12, texture)
        channels = [
            np.clip(texture * 255 * w + rng.normal(0, 4, (size, size)), 0, 255)
            for w in (1.0, 0.95, 0.9)
        ]
        image = np.stack(channels, axis=2).astype(np.uint8)

        interior = binary_erosion(gt, iterations=2)
        near_center = _ellipse_mask(size, center, (max(axes[0] * 0.4, 1.5), max(axes[1] * 0.4, 1.5)))
        fg_region = interior & near_center
        if not fg_region.any():
            fg_region = interior if interior.any() else gt
        fg = _stroke(rng, fg_region, length=max(3, int(min(axes) * 0.8)))
        if not fg.any():
            fg = fg_region & near_center
        bg = _stroke(rng, ~binary_dilation(gt, iterations=6), length=8)

        labels = np.zeros((size, size), dtype=np.uint8)
        labels[bg] = BG_SCRIBBLE
        labels[fg] = FG_SCRIBBLE

        image_id = f"img_{i:04d}"
        Image.fromarray(image).save(root / "images" / f"{image_id}.png")
        save_scribbles(root / "scribbles" / f"{image_id}.png", ScribbleAnnotation(labels))
        Image.fromarray((gt * 255).astype(np.uint8)).save(root / "gt" / f"{image_id}.png")

    return ingest_dataset(root)


def make_overfit_fixture(root: str | Path, size: int = 64) -> DatasetManifest:
    """One synthetic image for optimization sanity checks.

    The object is a horizontal band: its two straight boundaries are
    representable by every side-output scale of the network (bilinear
    logit upsampling traces straight zero-crossings exactly), so a toy
    model can drive the training loss essentially to zero. Blob-shaped
    objects are not representable at the coarsest (1/16) side output
    and bottom out well above zero regardless of optimization.
    """
    root = Path(root)
    for sub in ("images", "scribbles", "gt"):
        (root / sub).mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(42)
    base = _smooth_noise(rng, size)
    gt = np.zeros((size, size), dtype=bool)
    gt[size // 4 : 3 * size // 4, :] = True
    texture = np.where(gt, base * 0.85 + 0.12, base)
    channels = [np.clip(texture * 255 * w, 0, 255) for w in (1.0, 0.95, 0.9)]
    image = np.stack(channels, axis=2).astype(np.uint8)

    labels = np.zeros((size, size), dtype=np.uint8)
    labels[size // 2, size // 2 - 8 : size // 2 + 9] = FG_SCRIBBLE
    labels[size // 10, size // 8 : 3 * size // 8] = BG_SCRIBBLE

    Image.fromarray(image).save(root / "images" / "overfit.png")
    save_scribbles(root / "scribbles" / "overfit.png", ScribbleAnnotation(labels))
    Image.fromarray((gt * 255).astype(np.uint8)).save(root / "gt" / "overfit.png")
    manifest = ingest_dataset(root)
    for rec in manifest.records:
        rec.pseudo_path = rec.gt_path
    return manifest


def resize_image(image: np.ndarray, size: int) -> np.ndarray:
    """Bilinear resize of an RGB image to (size, size)."""
    return np.asarray(Image.fromarray(image).resize((size, size), Image.BILINEAR))


def resize_labels(labels: np.ndarray, size: int) -> np.ndarray:
    """Nearest-neighbor resize for label/mask maps."""
    return np.asarray(Image.fromarray(labels).resize((size, size), Image.NEAREST))
