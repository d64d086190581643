"""Transformer building blocks (pre-norm, ReLU feed-forward)."""

from __future__ import annotations

import math

import torch
from torch import nn

NEG_INF = -1e9


def attention(q: torch.Tensor, k: torch.Tensor, v: torch.Tensor,
              key_valid: torch.Tensor | None = None, causal: bool = False) -> torch.Tensor:
    """Scaled dot-product attention over (B, H, L, Dh) tensors.

    ``key_valid`` is (B, Lk) with True for attendable keys. Masked logits get a
    large negative constant instead of -inf so fully masked rows stay finite.
    """
    logits = q @ k.transpose(-1, -2) / math.sqrt(q.shape[-1])
    if key_valid is not None:
        logits = logits.masked_fill(~key_valid[:, None, None, :], NEG_INF)
    if causal:
        lq, lk = logits.shape[-2:]
        future = torch.ones(lq, lk, dtype=torch.bool).triu(1)
        logits = logits.masked_fill(future, NEG_INF)
    return torch.softmax(logits, dim=-1) @ v


class MultiHeadAttention(nn.Module):
    def __init__(self, d: int, heads: int):
        super().__init__()
        if d % heads:
            raise ValueError(f"hidden size {d} is not divisible by {heads} heads")
        self.heads = heads
        self.q = nn.Linear(d, d)
        self.k = nn.Linear(d, d)
        self.v = nn.Linear(d, d)
        self.out = nn.Linear(d, d)

    def _split(self, x: torch.Tensor) -> torch.Tensor:
        b, n, d = x.shape
        return x.view(b, n, self.heads, d // self.heads).transpose(1, 2)

    def forward(self, x, memory=None, key_valid=None, causal=False):
        src = x if memory is None else memory
        h = attention(self._split(self.q(x)), self._split(self.k(src)), self._split(self.v(src)),
                      key_valid, causal)
        b, _, n, dh = h.shape
        return self.out(h.transpose(1, 2).reshape(b, n, self.heads * dh))


class FeedForward(nn.Module):
    def __init__(self, d: int, mult: int = 4):
        super().__init__()
        self.up = nn.Linear(d, mult * d)
        self.down = nn.Linear(mult * d, d)

    def forward(self, x):
        return self.down(torch.relu(self.up(x)))


class EncoderBlock(nn.Module):
    def __init__(self, d: int, heads: int):
        super().__init__()
        self.norm1 = nn.LayerNorm(d)
        self.attn = MultiHeadAttention(d, heads)
        self.norm2 = nn.LayerNorm(d)
        self.ff = FeedForward(d)

    def forward(self, x, valid):
        x = x + self.attn(self.norm1(x), key_valid=valid)
        return x + self.ff(self.norm2(x))


class DecoderBlock(nn.Module):
    def __init__(self, d: int, heads: int):
        super().__init__()
        self.norm1 = nn.LayerNorm(d)
        self.self_attn = MultiHeadAttention(d, heads)
        self.norm2 = nn.LayerNorm(d)
        self.cross_attn = MultiHeadAttention(d, heads)
        self.norm3 = nn.LayerNorm(d)
        self.ff = FeedForward(d)

    def forward(self, x, valid, memory, memory_valid):
        x = x + self.self_attn(self.norm1(x), key_valid=valid, causal=True)
        x = x + self.cross_attn(self.norm2(x), memory=memory, key_valid=memory_valid)
        return x + self.ff(self.norm3(x))
