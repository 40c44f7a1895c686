"""Long-distance reference extraction over the deepest encoder feature.

Every pixel of the bottleneck feature map becomes a token; learned positional
embeddings are added and a stack of pre-norm multi-head self-attention +
feed-forward layers (with residuals) produces globally interactive tokens,
which are reshaped back to a feature map and passed through a 3x3
post-convolution.
"""

from __future__ import annotations

from dataclasses import dataclass

import torch
import torch.nn as nn
import torch.nn.functional as F

from .errors import ConfigurationError, ContractViolationError

__all__ = ["TransformerConfig", "SelfAttention", "TransformerLayer",
           "LongDistanceReferenceExtractor"]


@dataclass
class TransformerConfig:
    layers: int = 4
    heads: int = 4
    ff_expansion: int = 4

    def validate(self, embed_dim: int) -> None:
        if self.layers < 1 or self.heads < 1 or self.ff_expansion < 1:
            raise ConfigurationError("transformer layers/heads/expansion must be >= 1")
        if embed_dim % self.heads != 0:
            raise ConfigurationError(
                f"embedding dim {embed_dim} not divisible by {self.heads} heads"
            )


class SelfAttention(nn.Module):
    """Multi-head self-attention that also exposes the attention matrix."""

    def __init__(self, dim: int, heads: int):
        super().__init__()
        self.heads = heads
        self.head_dim = dim // heads
        self.qkv = nn.Linear(dim, 3 * dim)
        self.out = nn.Linear(dim, dim)

    def attention(self, x: torch.Tensor) -> torch.Tensor:
        """Attention weights [B, heads, T, T]; each row sums to 1."""
        b, t, _ = x.shape
        qkv = self.qkv(x).view(b, t, 3, self.heads, self.head_dim).permute(2, 0, 3, 1, 4)
        q, k, _ = qkv[0], qkv[1], qkv[2]
        scores = (q @ k.transpose(-1, -2)) / self.head_dim ** 0.5
        return scores.softmax(dim=-1)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        b, t, _ = x.shape
        qkv = self.qkv(x).view(b, t, 3, self.heads, self.head_dim).permute(2, 0, 3, 1, 4)
        q, k, v = qkv[0], qkv[1], qkv[2]
        scores = (q @ k.transpose(-1, -2)) / self.head_dim ** 0.5
        ctx = scores.softmax(dim=-1) @ v
        ctx = ctx.transpose(1, 2).reshape(b, t, self.heads * self.head_dim)
        return self.out(ctx)


class TransformerLayer(nn.Module):
    """Pre-norm attention + feed-forward block with residual connections."""

    def __init__(self, dim: int, heads: int, ff_expansion: int):
        super().__init__()
        self.norm1 = nn.LayerNorm(dim)
        self.attn = SelfAttention(dim, heads)
        self.norm2 = nn.LayerNorm(dim)
        self.ff = nn.Sequential(
            nn.Linear(dim, ff_expansion * dim),
            nn.GELU(),
            nn.Linear(ff_expansion * dim, dim),
        )

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        x = x + self.attn(self.norm1(x))
        return x + self.ff(self.norm2(x))


class LongDistanceReferenceExtractor(nn.Module):
    def __init__(self, channels: int, tokens: int, cfg: TransformerConfig):
        super().__init__()
        cfg.validate(channels)
        self.tokens = tokens
        self.cfg = cfg
        self.pos = nn.Parameter(torch.randn(1, tokens, channels) * 0.02)
        self.layers = nn.ModuleList(
            TransformerLayer(channels, cfg.heads, cfg.ff_expansion)
            for _ in range(cfg.layers)
        )
        self.post_conv = nn.Conv2d(channels, channels, 3, padding=1)

    def _to_tokens(self, feat: torch.Tensor) -> torch.Tensor:
        b, c, h, w = feat.shape
        if h * w != self.tokens:
            raise ContractViolationError(
                f"feature has {h * w} tokens, positional table holds {self.tokens}"
            )
        return feat.flatten(2).transpose(1, 2)

    def tokens_forward(self, x: torch.Tensor) -> torch.Tensor:
        """Run the transformer stack on already-embedded tokens [B, T, C]."""
        for layer in self.layers:
            x = layer(x)
        return x

    def forward(self, feat: torch.Tensor) -> torch.Tensor:
        b, c, h, w = feat.shape
        x = self._to_tokens(feat) + self.pos
        x = self.tokens_forward(x)
        x = x.transpose(1, 2).view(b, c, h, w)
        return self.post_conv(x)

    def attention_maps(self, feat: torch.Tensor, query_point) -> torch.Tensor:
        """First-layer attention from the query token, per head: [heads, H, W]."""
        if feat.dim() == 3:
            feat = feat.unsqueeze(0)
        b, c, h, w = feat.shape
        y, x_coord = query_point
        if not (0 <= y < h and 0 <= x_coord < w):
            raise ContractViolationError(f"query point {query_point} outside {h}x{w}")
        tokens = self._to_tokens(feat) + self.pos
        first = self.layers[0]
        attn = first.attn.attention(first.norm1(tokens))
        row = attn[0, :, y * w + x_coord, :]
        return row.view(self.cfg.heads, h, w)
