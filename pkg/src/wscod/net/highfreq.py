"""High-frequency detail path: pyramid residuals and the encoder grid.

The image is decomposed into four full-resolution residuals against
progressively downsampled copies of itself; their concatenation is
embedded and pushed through six shape-preserving residual encoders
arranged in three columns of decreasing resolution.
"""

from __future__ import annotations

import torch
import torch.nn as nn
import torch.nn.functional as F

from ..errors import DimensionError
from .config import NetworkConfig

PYRAMID_DEPTH = 4


def laplacian_decompose(
    image: torch.Tensor,
) -> tuple[list[torch.Tensor], torch.Tensor, list[torch.Tensor]]:
    """Residuals of the image against its downsampled copies.

    Level k of the pyramid halves the extent k times (2x2 area
    averaging); residual k is the full-resolution image minus the
    bilinearly re-upsampled level k+1, so image == residual_k +
    upsample(pyramid_{k+1}) holds by construction.

    Returns (residuals HF_0..HF_3, their channel concatenation, and the
    pyramid levels I_0..I_4 for inspection).
    """
    if image.ndim != 4:
        raise DimensionError(f"expected (B, C, H, W), got {tuple(image.shape)}")
    h, w = image.shape[-2:]
    if h % 16 or w % 16:
        raise DimensionError(f"extent {h}x{w} must be divisible by 16")
    pyramid = [image]
    for _ in range(PYRAMID_DEPTH):
        pyramid.append(F.avg_pool2d(pyramid[-1], kernel_size=2))
    residuals = [
        image - F.interpolate(pyramid[k + 1], size=(h, w), mode="bilinear", align_corners=False)
        for k in range(PYRAMID_DEPTH)
    ]
    return residuals, torch.cat(residuals, dim=1), pyramid


class ChannelLayerNorm(nn.Module):
    """LayerNorm over the channel axis of (B, C, H, W) maps."""

    def __init__(self, channels: int):
        super().__init__()
        self.norm = nn.LayerNorm(channels)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.norm(x.permute(0, 2, 3, 1)).permute(0, 3, 1, 2)


class ConvLN(nn.Module):
    def __init__(self, channels: int):
        super().__init__()
        self.conv = nn.Conv2d(channels, channels, kernel_size=3, padding=1)
        self.norm = ChannelLayerNorm(channels)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.norm(self.conv(x))


class ResidualEncoder(nn.Module):
    """y = ReLU(ConvLN(ReLU(ConvLN(x))) + x), shape preserving."""

    def __init__(self, channels: int):
        super().__init__()
        self.inner = ConvLN(channels)
        self.outer = ConvLN(channels)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return F.relu(self.outer(F.relu(self.inner(x))) + x)


class HighFreqEncoder(nn.Module):
    """Embed the residual stack and encode it at three scales.

    The grid entry (i, j) has extent H/2^(i+1) and 2^i * C channels;
    within a column the three/two/one encoder stages preserve shape,
    and stride-2 channel-doubling convolutions bridge the columns.
    """

    def __init__(self, config: NetworkConfig):
        super().__init__()
        c = config.hf_channels
        self.embed = nn.Conv2d(4 * 3, c, kernel_size=2, stride=2)
        self.embed_norm = ChannelLayerNorm(c)
        self.down = nn.ModuleList(
            nn.Conv2d(2**i * c, 2 ** (i + 1) * c, kernel_size=2, stride=2) for i in range(3)
        )
        self.stage_1 = nn.ModuleList(ResidualEncoder(2 * c) for _ in range(3))
        self.stage_2 = nn.ModuleList(ResidualEncoder(4 * c) for _ in range(2))
        self.stage_3 = nn.ModuleList(ResidualEncoder(8 * c) for _ in range(1))

    def embed_composite(self, composite: torch.Tensor) -> torch.Tensor:
        return self.embed_norm(self.embed(composite))

    def forward(self, composite: torch.Tensor) -> dict[tuple[int, int], torch.Tensor]:
        hfe = self.embed_composite(composite)
        grid: dict[tuple[int, int], torch.Tensor] = {}
        x = self.down[0](hfe)
        grid[1, 1] = self.stage_1[0](x)
        grid[1, 2] = self.stage_1[1](grid[1, 1])
        grid[1, 3] = self.stage_1[2](grid[1, 2])
        x = self.down[1](grid[1, 1])
        grid[2, 2] = self.stage_2[0](x)
        grid[2, 3] = self.stage_2[1](grid[2, 2])
        x = self.down[2](grid[2, 2])
        grid[3, 3] = self.stage_3[0](x)
        return grid
