"""Prediction heads: the bottom-up decoder and the scribble predictors."""

from __future__ import annotations

import torch
import torch.nn as nn
import torch.nn.functional as F

from .config import FUSION_SCALES, NetworkConfig


def conv_bn_relu(in_ch: int, out_ch: int) -> nn.Sequential:
    return nn.Sequential(
        nn.Conv2d(in_ch, out_ch, kernel_size=3, padding=1),
        nn.BatchNorm2d(out_ch),
        nn.ReLU(inplace=True),
    )


def _to_full_probability(logits: torch.Tensor, out_size: int) -> torch.Tensor:
    # Upsample logits, sigmoid last: saturated logits keep boundaries sharp
    # at full resolution, where probability-space interpolation would smear
    # them across the whole upsampling factor.
    logits = F.interpolate(
        logits, size=(out_size, out_size), mode="bilinear", align_corners=False
    )
    return torch.sigmoid(logits).squeeze(1)


class ScribblePredictor(nn.Module):
    """Per-level scribble-placement probability head."""

    def __init__(self, config: NetworkConfig):
        super().__init__()
        self.out_size = config.image_size
        self.heads = nn.ModuleDict(
            {
                str(i): nn.Sequential(
                    conv_bn_relu(config.channels_at(i), config.decoder_channels),
                    nn.Conv2d(config.decoder_channels, 1, kernel_size=3, padding=1),
                )
                for i in FUSION_SCALES
            }
        )

    def forward(self, fused: dict[int, torch.Tensor]) -> dict[int, torch.Tensor]:
        return {
            i: _to_full_probability(self.heads[str(i)](fused[i]), self.out_size)
            for i in FUSION_SCALES
        }


class Decoder(nn.Module):
    """Bottom-up decoder over the three fused scales with side outputs.

    Starts at the coarsest scale, upsamples, concatenates the next finer
    fused map, and convolves; each stage emits a sigmoid side output
    upsampled to full resolution.
    """

    def __init__(self, config: NetworkConfig):
        super().__init__()
        self.out_size = config.image_size
        dec = config.decoder_channels
        self.block3 = nn.Sequential(
            conv_bn_relu(config.channels_at(3), dec), conv_bn_relu(dec, dec)
        )
        self.block2 = nn.Sequential(
            conv_bn_relu(dec + config.channels_at(2), dec), conv_bn_relu(dec, dec)
        )
        self.block1 = nn.Sequential(
            conv_bn_relu(dec + config.channels_at(1), dec), conv_bn_relu(dec, dec)
        )
        self.heads = nn.ModuleDict(
            {str(i): nn.Conv2d(dec, 1, kernel_size=3, padding=1) for i in FUSION_SCALES}
        )

    def _side_output(self, x: torch.Tensor, level: int) -> torch.Tensor:
        return _to_full_probability(self.heads[str(level)](x), self.out_size)

    def forward(self, fused: dict[int, torch.Tensor]) -> dict[int, torch.Tensor]:
        out: dict[int, torch.Tensor] = {}
        x = self.block3(fused[3])
        out[3] = self._side_output(x, 3)
        x = F.interpolate(x, scale_factor=2, mode="bilinear", align_corners=False)
        x = self.block2(torch.cat([x, fused[2]], dim=1))
        out[2] = self._side_output(x, 2)
        x = F.interpolate(x, scale_factor=2, mode="bilinear", align_corners=False)
        x = self.block1(torch.cat([x, fused[1]], dim=1))
        out[1] = self._side_output(x, 1)
        return out
