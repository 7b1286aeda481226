"""The full frequency-aware segmentation network."""

from __future__ import annotations

from dataclasses import dataclass

import torch
import torch.nn as nn

from ..errors import DimensionError
from .config import NetworkConfig
from .fusion import ProgressiveFusion
from .heads import Decoder, ScribblePredictor
from .highfreq import HighFreqEncoder, laplacian_decompose
from .lowfreq import LowFreqEncoder


@dataclass
class NetworkOutputs:
    """Per-level probability maps at full resolution, keyed by level 1..3."""

    seg: dict[int, torch.Tensor]
    scrib: dict[int, torch.Tensor]

    def final_prediction(self) -> torch.Tensor:
        """The finest-level segmentation map, used for evaluation."""
        return self.seg[1]


class FrequencyAwareNet(nn.Module):
    """Two-path encoder, progressive fusion, and dual prediction heads.

    A transformer over 16x16 patches supplies global low-frequency
    context; a residual encoder grid over pyramid residuals supplies
    multi-scale high-frequency detail. Window cross-attention threads
    the former into the latter, and the decoder plus scribble heads emit
    three segmentation and three scribble-probability maps.
    """

    def __init__(self, config: NetworkConfig):
        super().__init__()
        self.config = config
        self.low_freq = LowFreqEncoder(config)
        self.high_freq = HighFreqEncoder(config) if config.use_high_freq else None
        self.fusion = ProgressiveFusion(config)
        self.decoder = Decoder(config)
        self.scribble_predictor = ScribblePredictor(config)

    def extract_features(self, image: torch.Tensor) -> dict[int, torch.Tensor]:
        """Fused per-scale features for an input batch."""
        if image.ndim != 4 or image.shape[1] != 3:
            raise DimensionError(f"expected (B, 3, H, W) input, got {tuple(image.shape)}")
        if image.shape[-1] != self.config.image_size or image.shape[-2] != self.config.image_size:
            raise DimensionError(
                f"expected {self.config.image_size}px inputs, got {tuple(image.shape[-2:])}"
            )
        lfr = self.low_freq(image)
        hf_grid = None
        if self.high_freq is not None:
            _, composite, _ = laplacian_decompose(image)
            hf_grid = self.high_freq(composite)
        return self.fusion(lfr, hf_grid)

    def forward(self, image: torch.Tensor) -> NetworkOutputs:
        fused = self.extract_features(image)
        return NetworkOutputs(
            seg=self.decoder(fused),
            scrib=self.scribble_predictor(fused),
        )

    @property
    def fusion_trace(self) -> list[tuple[int, int]]:
        """(scale, stage) sequence of the fusion calls in the last forward."""
        return self.fusion.last_trace

    def parameter_count(self) -> int:
        return sum(p.numel() for p in self.parameters())
