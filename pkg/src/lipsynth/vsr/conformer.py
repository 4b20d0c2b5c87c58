"""Conformer encoder: half-step feed-forward, self-attention with learned
relative-position biases, a depthwise-convolution module, feed-forward again.
"""

from __future__ import annotations

import torch
from torch import nn


class RelativePositionBias(nn.Module):
    """Per-head additive attention bias indexed by clipped key-query offset."""

    def __init__(self, heads: int, max_dist: int = 128):
        super().__init__()
        self.max_dist = max_dist
        self.table = nn.Parameter(torch.zeros(heads, 2 * max_dist - 1))

    def forward(self, t: int) -> torch.Tensor:
        idx = torch.arange(t, device=self.table.device)
        rel = idx[None, :] - idx[:, None]  # key minus query
        rel = rel.clamp(-(self.max_dist - 1), self.max_dist - 1) + self.max_dist - 1
        return self.table[:, rel]  # H x T x T


class RelSelfAttention(nn.Module):
    def __init__(self, dim: int, heads: int, max_dist: int, dropout: float):
        super().__init__()
        if dim % heads:
            raise ValueError(f"dim {dim} not divisible by heads {heads}")
        self.heads = heads
        self.head_dim = dim // heads
        self.norm = nn.LayerNorm(dim)
        self.qkv = nn.Linear(dim, 3 * dim)
        self.out = nn.Linear(dim, dim)
        self.bias = RelativePositionBias(heads, max_dist)
        self.drop = nn.Dropout(dropout)

    def forward(self, x: torch.Tensor, pad_mask: torch.Tensor | None) -> torch.Tensor:
        b, t, d = x.shape
        h = self.norm(x)
        q, k, v = self.qkv(h).chunk(3, dim=-1)
        q = q.view(b, t, self.heads, self.head_dim).transpose(1, 2)
        k = k.view(b, t, self.heads, self.head_dim).transpose(1, 2)
        v = v.view(b, t, self.heads, self.head_dim).transpose(1, 2)
        scores = q @ k.transpose(-1, -2) / self.head_dim**0.5  # B, H, T, T
        scores = scores + self.bias(t).unsqueeze(0)
        if pad_mask is not None:
            scores = scores.masked_fill(~pad_mask[:, None, None, :], float("-inf"))
        attn = self.drop(torch.softmax(scores, dim=-1))
        out = (attn @ v).transpose(1, 2).reshape(b, t, d)
        return self.drop(self.out(out))


class ConvModule(nn.Module):
    def __init__(self, dim: int, kernel: int, dropout: float):
        super().__init__()
        if kernel % 2 == 0:
            raise ValueError("depthwise kernel must be odd to preserve length")
        self.norm = nn.LayerNorm(dim)
        self.pw1 = nn.Conv1d(dim, 2 * dim, 1)
        self.dw = nn.Conv1d(dim, dim, kernel, padding=kernel // 2, groups=dim)
        # batch norm sees padded frames zeroed; acceptable at desk batch sizes
        self.bn = nn.BatchNorm1d(dim)
        self.pw2 = nn.Conv1d(dim, dim, 1)
        self.drop = nn.Dropout(dropout)

    def forward(self, x: torch.Tensor, pad_mask: torch.Tensor | None) -> torch.Tensor:
        h = self.norm(x)
        if pad_mask is not None:
            h = h * pad_mask[..., None]
        h = h.transpose(1, 2)  # B, D, T
        h = nn.functional.glu(self.pw1(h), dim=1)
        h = self.dw(h)
        h = nn.functional.silu(self.bn(h))
        h = self.pw2(h)
        return self.drop(h.transpose(1, 2))


class FeedForward(nn.Module):
    def __init__(self, dim: int, ff_dim: int, dropout: float):
        super().__init__()
        self.norm = nn.LayerNorm(dim)
        self.lin1 = nn.Linear(dim, ff_dim)
        self.lin2 = nn.Linear(ff_dim, dim)
        self.drop = nn.Dropout(dropout)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        h = self.drop(nn.functional.silu(self.lin1(self.norm(x))))
        return self.drop(self.lin2(h))


class ConformerBlock(nn.Module):
    def __init__(self, dim: int, ff_dim: int, heads: int, kernel: int, max_dist: int, dropout: float):
        super().__init__()
        self.ff1 = FeedForward(dim, ff_dim, dropout)
        self.attn = RelSelfAttention(dim, heads, max_dist, dropout)
        self.conv = ConvModule(dim, kernel, dropout)
        self.ff2 = FeedForward(dim, ff_dim, dropout)
        self.final_norm = nn.LayerNorm(dim)

    def forward(self, x, pad_mask=None):
        x = x + 0.5 * self.ff1(x)
        x = x + self.attn(x, pad_mask)
        x = x + self.conv(x, pad_mask)
        x = x + 0.5 * self.ff2(x)
        return self.final_norm(x)


class ConformerEncoder(nn.Module):
    """(B, T, D_f) frame features -> (B, T, D); depth 0 is just the projection."""

    def __init__(
        self,
        in_dim: int,
        dim: int,
        depth: int,
        ff_dim: int,
        heads: int,
        kernel: int = 7,
        max_dist: int = 128,
        dropout: float = 0.0,
    ):
        super().__init__()
        self.proj = nn.Linear(in_dim, dim)
        self.blocks = nn.ModuleList(
            ConformerBlock(dim, ff_dim, heads, kernel, max_dist, dropout) for _ in range(depth)
        )

    def forward(self, z_f: torch.Tensor, pad_mask: torch.Tensor | None = None) -> torch.Tensor:
        if not torch.isfinite(z_f).all():
            raise ValueError("non-finite front-end features")
        x = self.proj(z_f)
        for block in self.blocks:
            x = block(x, pad_mask)
        return x
