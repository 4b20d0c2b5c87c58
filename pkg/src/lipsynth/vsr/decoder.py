"""Autoregressive transformer decoder over subword targets.

Pre-norm layers, causal self-attention, cross-attention into encoder
features, absolute sinusoidal positions added to the token embedding.
"""

from __future__ import annotations

import math

import torch
from torch import nn


def sinusoidal_positions(length: int, dim: int, device=None, dtype=torch.float32) -> torch.Tensor:
    pos = torch.arange(length, device=device, dtype=torch.float64)[:, None]
    idx = torch.arange(0, dim, 2, device=device, dtype=torch.float64)
    angle = pos / torch.pow(10000.0, idx / dim)
    enc = torch.zeros(length, dim, device=device, dtype=torch.float64)
    enc[:, 0::2] = torch.sin(angle)
    enc[:, 1::2] = torch.cos(angle[:, : dim // 2])
    return enc.to(dtype)


class CrossAttention(nn.Module):
    def __init__(self, dim: int, heads: int, dropout: float):
        super().__init__()
        self.heads = heads
        self.head_dim = dim // heads
        self.q = nn.Linear(dim, dim)
        self.kv = nn.Linear(dim, 2 * dim)
        self.out = nn.Linear(dim, dim)
        self.drop = nn.Dropout(dropout)

    def forward(self, x, memory, mem_mask=None, causal=False):
        b, t, d = x.shape
        s = memory.shape[1]
        q = self.q(x).view(b, t, self.heads, self.head_dim).transpose(1, 2)
        k, v = self.kv(memory).chunk(2, dim=-1)
        k = k.view(b, s, self.heads, self.head_dim).transpose(1, 2)
        v = v.view(b, s, self.heads, self.head_dim).transpose(1, 2)
        scores = q @ k.transpose(-1, -2) / math.sqrt(self.head_dim)
        if causal:
            causal_mask = torch.ones(t, s, dtype=torch.bool, device=x.device).triu(1)
            scores = scores.masked_fill(causal_mask, float("-inf"))
        if mem_mask is not None:
            scores = scores.masked_fill(~mem_mask[:, None, None, :], float("-inf"))
        attn = self.drop(torch.softmax(scores, dim=-1))
        out = (attn @ v).transpose(1, 2).reshape(b, t, d)
        return self.drop(self.out(out))


class DecoderLayer(nn.Module):
    def __init__(self, dim: int, ff_dim: int, heads: int, dropout: float):
        super().__init__()
        self.norm_self = nn.LayerNorm(dim)
        self.self_attn = CrossAttention(dim, heads, dropout)
        self.norm_cross = nn.LayerNorm(dim)
        self.cross_attn = CrossAttention(dim, heads, dropout)
        self.norm_ff = nn.LayerNorm(dim)
        self.ff = nn.Sequential(nn.Linear(dim, ff_dim), nn.SiLU(), nn.Dropout(dropout), nn.Linear(ff_dim, dim))

    def forward(self, x, memory, mem_mask=None):
        h = self.norm_self(x)
        x = x + self.self_attn(h, h, causal=True)
        x = x + self.cross_attn(self.norm_cross(x), memory, mem_mask=mem_mask)
        return x + self.ff(self.norm_ff(x))


class TransformerDecoder(nn.Module):
    """Token prefix (B, l) + encoder memory -> next-token logits (B, l, V)."""

    def __init__(self, vocab_size: int, dim: int, depth: int, ff_dim: int, heads: int, dropout: float = 0.0):
        super().__init__()
        if dim % heads:
            raise ValueError(f"dim {dim} not divisible by heads {heads}")
        self.vocab_size = vocab_size
        self.embed = nn.Embedding(vocab_size, dim)
        self.scale = math.sqrt(dim)
        self.layers = nn.ModuleList(DecoderLayer(dim, ff_dim, heads, dropout) for _ in range(depth))
        self.final_norm = nn.LayerNorm(dim)
        self.out = nn.Linear(dim, vocab_size)

    def forward(self, prefix: torch.Tensor, memory: torch.Tensor, mem_mask: torch.Tensor | None = None):
        if prefix.dim() != 2:
            raise ValueError(f"prefix must be (B, l), got {tuple(prefix.shape)}")
        if prefix.min() < 0 or prefix.max() >= self.vocab_size:
            raise ValueError(
                f"token id out of range: [{int(prefix.min())}, {int(prefix.max())}] vs vocab {self.vocab_size}"
            )
        x = self.embed(prefix) * self.scale
        x = x + sinusoidal_positions(prefix.shape[1], x.shape[-1], device=x.device, dtype=x.dtype)
        for layer in self.layers:
            x = layer(x, memory, mem_mask=mem_mask)
        return self.out(self.final_norm(x))
