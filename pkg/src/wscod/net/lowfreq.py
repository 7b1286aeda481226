"""Low-frequency semantic encoder: a plain ViT over 16x16 patches.

Multi-head self-attention acts as a low-pass filter over the token
grid, so the transformer output serves as the global, low-frequency
representation of the scene.
"""

from __future__ import annotations

import torch
import torch.nn as nn

from ..errors import DimensionError
from .config import NetworkConfig


class SelfAttention(nn.Module):
    def __init__(self, dim: int, n_heads: int):
        super().__init__()
        assert dim % n_heads == 0
        self.n_heads = n_heads
        self.head_dim = dim // n_heads
        self.scale = self.head_dim**-0.5
        self.qkv = nn.Linear(dim, dim * 3)
        self.proj = nn.Linear(dim, dim)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        b, n, c = x.shape
        qkv = self.qkv(x).reshape(b, n, 3, self.n_heads, self.head_dim).permute(2, 0, 3, 1, 4)
        q, k, v = qkv[0], qkv[1], qkv[2]
        attn = (q @ k.transpose(-2, -1)) * self.scale
        attn = attn.softmax(dim=-1)
        x = (attn @ v).transpose(1, 2).reshape(b, n, c)
        return self.proj(x)


class TransformerBlock(nn.Module):
    """Pre-norm transformer encoder block (attention + MLP)."""

    def __init__(self, dim: int, n_heads: int, mlp_ratio: float = 4.0):
        super().__init__()
        self.norm1 = nn.LayerNorm(dim)
        self.attn = SelfAttention(dim, n_heads)
        self.norm2 = nn.LayerNorm(dim)
        hidden = int(dim * mlp_ratio)
        self.mlp = nn.Sequential(nn.Linear(dim, hidden), nn.GELU(), nn.Linear(hidden, dim))

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        x = x + self.attn(self.norm1(x))
        x = x + self.mlp(self.norm2(x))
        return x


class LowFreqEncoder(nn.Module):
    """Patchify, embed, run transformer layers, restore the token grid.

    Output shape is (B, D, H/16, W/16); the channel axis holds the
    embedding dimension.
    """

    def __init__(self, config: NetworkConfig):
        super().__init__()
        self.config = config
        d = config.embed_dim
        self.patch_embed = nn.Conv2d(3, d, kernel_size=config.patch_size, stride=config.patch_size)
        n_tokens = config.token_grid**2
        self.pos_embed = nn.Parameter(torch.zeros(1, n_tokens, d))
        nn.init.trunc_normal_(self.pos_embed, std=0.02)
        self.blocks = nn.ModuleList(
            TransformerBlock(d, config.vit_heads) for _ in range(config.n_transformer_layers)
        )
        self.norm = nn.LayerNorm(d)

    def forward(self, image: torch.Tensor) -> torch.Tensor:
        if image.ndim != 4 or image.shape[1] != 3:
            raise DimensionError(f"expected (B, 3, H, W) input, got {tuple(image.shape)}")
        b, _, h, w = image.shape
        if h != w or h % self.config.patch_size != 0:
            raise DimensionError(f"image extent {h}x{w} must be square and divisible by 16")
        tokens = self.patch_embed(image).flatten(2).transpose(1, 2)  # (B, N, D)
        tokens = tokens + self.pos_embed
        for block in self.blocks:
            tokens = block(tokens)
        tokens = self.norm(tokens)
        grid = h // self.config.patch_size
        return tokens.transpose(1, 2).reshape(b, -1, grid, grid)
