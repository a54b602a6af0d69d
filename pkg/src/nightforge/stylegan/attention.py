"""Linear-complexity attention over feature maps, with a reusable context.

Keys are softmax-normalized over spatial positions and queries over
channels, so ``keys @ values^T`` is a fixed-size (d_k x d_v) context
independent of the number of positions. That context is what gets handed
from an encoder block to its decoder partner.
"""

from __future__ import annotations

import torch
from torch import nn


def efficient_attention(queries: torch.Tensor, keys: torch.Tensor,
                        values: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
    """
    Args:
        queries: (B, H, Dk, N) raw query projections
        keys: (B, H, Dk, N) raw key projections
        values: (B, H, Dv, N)

    Returns:
        output (B, H, Dv, N) and context (B, H, Dk, Dv).
    """
    if keys.shape[-1] != values.shape[-1]:
        raise ValueError("keys and values must cover the same positions")
    k = keys.softmax(dim=-1)
    context = torch.einsum("bhkn,bhvn->bhkv", k, values)
    return attend(queries, context), context


def attend(queries: torch.Tensor, context: torch.Tensor) -> torch.Tensor:
    """Apply a precomputed context to raw queries -> (B, H, Dv, N)."""
    q = queries.softmax(dim=-2)
    return torch.einsum("bhkv,bhkn->bhvn", context, q)


class EfficientAttention(nn.Module):
    """Residual efficient-attention block on a (B, C, H, W) feature map.

    ``forward(x, context=None)`` returns ``(x + attn(x), context_used)``.
    When a context is supplied only the queries are computed from ``x``.
    """

    def __init__(self, channels: int, key_channels: int | None = None,
                 value_channels: int | None = None, heads: int = 1):
        super().__init__()
        key_channels = key_channels or max(channels // 2, heads)
        value_channels = value_channels or channels
        if key_channels % heads or value_channels % heads:
            raise ValueError("channel counts must be divisible by heads")
        self.heads = heads
        self.key_channels = key_channels
        self.value_channels = value_channels
        self.queries = nn.Conv2d(channels, key_channels, 1)
        self.keys = nn.Conv2d(channels, key_channels, 1)
        self.values = nn.Conv2d(channels, value_channels, 1)
        self.reprojection = nn.Conv2d(value_channels, channels, 1)

    def _split(self, t: torch.Tensor) -> torch.Tensor:
        b, c, h, w = t.shape
        return t.reshape(b, self.heads, c // self.heads, h * w)

    def forward(self, x: torch.Tensor, context: torch.Tensor | None = None):
        b, _, h, w = x.shape
        q = self._split(self.queries(x))
        if context is None:
            out, context = efficient_attention(q, self._split(self.keys(x)),
                                               self._split(self.values(x)))
        else:
            expected = (b, self.heads, self.key_channels // self.heads,
                        self.value_channels // self.heads)
            if tuple(context.shape) != expected:
                raise ValueError(f"shared context shape {tuple(context.shape)} != {expected}")
            out = attend(q, context)
        out = out.reshape(b, self.value_channels, h, w)
        return x + self.reprojection(out), context
