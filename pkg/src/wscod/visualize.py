"""Inspection outputs: fused feature-map grids and bias histograms."""

from __future__ import annotations

import math
from pathlib import Path

import numpy as np
import torch
from PIL import Image

from .net import FrequencyAwareNet


def _to_grid(feature: np.ndarray, max_channels: int = 16, pad: int = 1) -> np.ndarray:
    """Tile the first channels of a (C, H, W) map into one uint8 image."""
    c = min(feature.shape[0], max_channels)
    cols = int(math.ceil(math.sqrt(c)))
    rows = int(math.ceil(c / cols))
    h, w = feature.shape[1:]
    grid = np.zeros((rows * (h + pad) - pad, cols * (w + pad) - pad), dtype=np.uint8)
    for idx in range(c):
        ch = feature[idx]
        lo, hi = ch.min(), ch.max()
        norm = (ch - lo) / (hi - lo) if hi > lo else np.zeros_like(ch)
        r, col = divmod(idx, cols)
        grid[
            r * (h + pad) : r * (h + pad) + h,
            col * (w + pad) : col * (w + pad) + w,
        ] = (norm * 255).astype(np.uint8)
    return grid


@torch.no_grad()
def dump_feature_grids(
    model: FrequencyAwareNet,
    image_tensor: torch.Tensor,
    out_dir: str | Path,
    image_id: str,
    max_channels: int = 16,
) -> list[Path]:
    """Write one channel-grid PNG per fused level for an input image."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    model.eval()
    fused = model.extract_features(image_tensor.unsqueeze(0))
    paths = []
    for level, feat in sorted(fused.items()):
        grid = _to_grid(feat[0].numpy(), max_channels=max_channels)
        path = out / f"{image_id}_level{level}.png"
        Image.fromarray(grid, mode="L").save(path)
        paths.append(path)
    return paths


def save_histogram_files(
    histogram, out_dir: str | Path, name: str, plot: bool = False
) -> list[Path]:
    """Write bin edges + counts as CSV; optionally render a bar plot."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    csv_path = out / f"{name}.csv"
    lines = ["bin_lo,bin_hi," + ",".join(histogram.counts)]
    edges = histogram.bin_edges
    for i in range(len(edges) - 1):
        row = [f"{edges[i]:.4f}", f"{edges[i + 1]:.4f}"]
        row += [str(int(histogram.counts[src][i])) for src in histogram.counts]
        lines.append(",".join(row))
    csv_path.write_text("\n".join(lines) + "\n")
    written = [csv_path]
    if plot:
        import matplotlib

        matplotlib.use("Agg")
        import matplotlib.pyplot as plt

        mids = 0.5 * (edges[:-1] + edges[1:])
        width = (edges[1] - edges[0]) * 0.8 / max(len(histogram.counts), 1)
        fig, ax = plt.subplots(figsize=(6, 4))
        for k, (src, counts) in enumerate(histogram.counts.items()):
            ax.bar(mids + k * width, counts, width=width, label=src)
        ax.set_xlabel("relative distance to nearest object boundary")
        ax.set_ylabel("pixel count")
        ax.legend()
        png_path = out / f"{name}.png"
        fig.savefig(png_path, dpi=120, bbox_inches="tight")
        plt.close(fig)
        written.append(png_path)
    return written
