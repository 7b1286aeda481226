"""Window-based cross-attention fusion of the two frequency paths.

High-frequency windows query low-frequency windows; the attended
low-frequency values are merged back and skip-added to the
high-frequency map. Fusion runs coarsest scale first, and within a
scale from the deepest encoder stage down, so semantic context is
threaded progressively into increasingly fine detail maps.
"""

from __future__ import annotations

import torch
import torch.nn as nn
import torch.nn.functional as F

from ..errors import ConfigurationError
from .config import FUSION_SCALES, NetworkConfig


def window_partition(x: torch.Tensor, window: int) -> torch.Tensor:
    """(B, C, H, W) -> (B * nWin, window*window, C) token windows."""
    b, c, h, w = x.shape
    if h % window or w % window:
        raise ConfigurationError(f"window {window} must divide extent {h}x{w}")
    x = x.view(b, c, h // window, window, w // window, window)
    x = x.permute(0, 2, 4, 3, 5, 1).contiguous()
    return x.view(-1, window * window, c)


def window_merge(windows: torch.Tensor, window: int, h: int, w: int) -> torch.Tensor:
    """Inverse of :func:`window_partition`."""
    c = windows.shape[-1]
    b = windows.shape[0] // ((h // window) * (w // window))
    x = windows.view(b, h // window, w // window, window, window, c)
    x = x.permute(0, 5, 1, 3, 2, 4).contiguous()
    return x.view(b, c, h, w)


class WindowCrossAttention(nn.Module):
    """Per-window multi-head attention: Q from HF, K/V from LF, skip to HF."""

    def __init__(self, channels: int, window_size: int, n_heads: int):
        super().__init__()
        if channels % n_heads:
            raise ConfigurationError(f"n_heads {n_heads} must divide channels {channels}")
        self.window_size = window_size
        self.n_heads = n_heads
        self.head_dim = channels // n_heads
        self.scale = self.head_dim**-0.5
        self.q = nn.Linear(channels, channels)
        self.k = nn.Linear(channels, channels)
        self.v = nn.Linear(channels, channels)

    def _attend(self, hf: torch.Tensor, lf: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
        b, c, h, w = hf.shape
        hf_win = window_partition(hf, self.window_size)
        lf_win = window_partition(lf, self.window_size)
        n = hf_win.shape[1]

        def heads(t: torch.Tensor) -> torch.Tensor:
            return t.view(-1, n, self.n_heads, self.head_dim).transpose(1, 2)

        q = heads(self.q(hf_win))
        k = heads(self.k(lf_win))
        v = heads(self.v(lf_win))
        attn = torch.softmax((q @ k.transpose(-2, -1)) * self.scale, dim=-1)
        out = (attn @ v).transpose(1, 2).reshape(-1, n, c)
        return window_merge(out, self.window_size, h, w), attn

    def forward(
        self, hf: torch.Tensor, lf: torch.Tensor, return_attention: bool = False
    ):
        if hf.shape[-2:] != lf.shape[-2:]:
            raise ConfigurationError(
                f"HF extent {tuple(hf.shape[-2:])} != LF extent {tuple(lf.shape[-2:])}"
            )
        out, attn = self._attend(hf, lf)
        fused = hf + out
        if return_attention:
            return fused, attn
        return fused


class ProgressiveFusion(nn.Module):
    """Resize/project the low-frequency map per scale and run the fusion loops.

    Scales excluded from ``fusion_levels`` (or all scales, when the
    high-frequency path is disabled) fall back to the projected
    low-frequency features. With ``use_window_fusion`` off, attention is
    replaced by plain addition. Each forward records the (scale, stage)
    fusion call sequence in ``last_trace``.
    """

    def __init__(self, config: NetworkConfig):
        super().__init__()
        self.config = config
        self.project = nn.ModuleDict(
            {
                str(i): nn.Conv2d(config.embed_dim, config.channels_at(i), kernel_size=1)
                for i in FUSION_SCALES
            }
        )
        if config.use_high_freq and config.use_window_fusion:
            self.fuse = nn.ModuleDict(
                {
                    f"{i}{j}": WindowCrossAttention(
                        config.channels_at(i), config.window_size, config.n_heads
                    )
                    for i in FUSION_SCALES
                    for j in range(i, 4)
                }
            )
        else:
            self.fuse = nn.ModuleDict()
        self.last_trace: list[tuple[int, int]] = []

    def project_low_freq(self, lfr: torch.Tensor, i: int) -> torch.Tensor:
        size = self.config.spatial_at(i)
        resized = F.interpolate(lfr, size=(size, size), mode="bilinear", align_corners=False)
        return self.project[str(i)](resized)

    def forward(
        self,
        lfr: torch.Tensor,
        hf_grid: dict[tuple[int, int], torch.Tensor] | None,
    ) -> dict[int, torch.Tensor]:
        cfg = self.config
        self.last_trace = []
        fused: dict[int, torch.Tensor] = {}
        for i in (3, 2, 1):
            level = self.project_low_freq(lfr, i)
            if hf_grid is not None and i in cfg.fusion_levels:
                for j in range(3, i - 1, -1):
                    hf = hf_grid[i, j]
                    if cfg.use_window_fusion:
                        level = self.fuse[f"{i}{j}"](hf, level)
                    else:
                        level = hf + level
                    self.last_trace.append((i, j))
            fused[i] = level
        return fused
