"""Network architecture configuration and the shipped presets."""

from __future__ import annotations

from dataclasses import dataclass

from ..errors import ConfigurationError

FUSION_SCALES = (1, 2, 3)

# (scale i, encoder stage j) keys of the high-frequency feature grid;
# scale i halves the spatial extent i+1 times and carries 2^i * C channels.
HF_GRID_KEYS = ((1, 1), (1, 2), (1, 3), (2, 2), (2, 3), (3, 3))


@dataclass(frozen=True)
class NetworkConfig:
    """Shape and capacity parameters of the segmentation network."""

    image_size: int = 384
    patch_size: int = 16
    embed_dim: int = 768
    hf_channels: int = 32
    n_transformer_layers: int = 12
    window_size: int = 8
    n_heads: int = 4
    decoder_channels: int = 64
    use_high_freq: bool = True
    use_window_fusion: bool = True
    fusion_levels: tuple[int, ...] = FUSION_SCALES

    def __post_init__(self):
        if self.patch_size != 16:
            raise ConfigurationError("patch_size is fixed at 16")
        if self.image_size % 16 != 0:
            raise ConfigurationError(f"image_size {self.image_size} must be divisible by 16")
        if min(self.embed_dim, self.hf_channels, self.decoder_channels) < 1:
            raise ConfigurationError("embed_dim, hf_channels, decoder_channels must be positive")
        if self.n_transformer_layers < 1:
            raise ConfigurationError("need at least one transformer layer")
        for i in FUSION_SCALES:
            if self.spatial_at(i) % self.window_size != 0:
                raise ConfigurationError(
                    f"window_size {self.window_size} must divide the level-{i} "
                    f"extent {self.spatial_at(i)}"
                )
            if self.channels_at(i) % self.n_heads != 0:
                raise ConfigurationError(
                    f"n_heads {self.n_heads} must divide the level-{i} "
                    f"channel count {self.channels_at(i)}"
                )
        levels = tuple(self.fusion_levels)
        if not levels or not set(levels) <= set(FUSION_SCALES):
            raise ConfigurationError("fusion_levels must be a non-empty subset of {1, 2, 3}")
        object.__setattr__(self, "fusion_levels", levels)

    def spatial_at(self, i: int) -> int:
        """Spatial extent of scale-``i`` features: image_size / 2^(i+1)."""
        return self.image_size // 2 ** (i + 1)

    def channels_at(self, i: int) -> int:
        """Channel count of scale-``i`` features: 2^i * hf_channels."""
        return 2**i * self.hf_channels

    @property
    def token_grid(self) -> int:
        return self.image_size // self.patch_size

    @property
    def vit_heads(self) -> int:
        # Standard 64-wide attention heads for the transformer encoder.
        return max(1, self.embed_dim // 64)


def full_config(**overrides) -> NetworkConfig:
    """Full-scale preset (384 px inputs)."""
    return NetworkConfig(**overrides)


def toy_config(**overrides) -> NetworkConfig:
    """Small CPU-friendly preset used by the bundled fixtures."""
    defaults = dict(
        image_size=64,
        embed_dim=64,
        hf_channels=8,
        n_transformer_layers=2,
        window_size=4,
        n_heads=4,
        decoder_channels=16,
    )
    defaults.update(overrides)
    return NetworkConfig(**defaults)


def tiny_config(**overrides) -> NetworkConfig:
    """Minimal preset for fast numerical checks."""
    defaults = dict(
        image_size=32,
        embed_dim=32,
        hf_channels=4,
        n_transformer_layers=1,
        window_size=2,
        n_heads=2,
        decoder_channels=8,
    )
    defaults.update(overrides)
    return NetworkConfig(**defaults)
