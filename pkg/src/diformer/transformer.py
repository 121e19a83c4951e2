"""Pre-normalization transformer encoder-decoder with learnable queries."""
from __future__ import annotations

import math
from typing import List, Optional, Tuple

import torch
import torch.nn as nn

from .errors import InvalidInput, ShapeError


def sinusoidal_positions(length: int, dim: int, dtype=torch.float32) -> torch.Tensor:
    """Fixed interleaved sine/cosine table of shape ``(length, dim)``."""
    pos = torch.arange(length, dtype=torch.float64)[:, None]
    freq = torch.exp(-math.log(10000.0) * torch.arange(0, dim, 2, dtype=torch.float64) / dim)
    table = torch.zeros(length, dim, dtype=torch.float64)
    table[:, 0::2] = torch.sin(pos * freq)
    table[:, 1::2] = torch.cos(pos * freq[: dim // 2])
    return table.to(dtype)


class MultiHeadAttention(nn.Module):
    def __init__(self, dim: int, heads: int):
        super().__init__()
        if dim % heads:
            raise ValueError(f"model dim {dim} not divisible by {heads} heads")
        self.heads = heads
        self.q = nn.Linear(dim, dim)
        self.k = nn.Linear(dim, dim)
        self.v = nn.Linear(dim, dim)
        self.out = nn.Linear(dim, dim)

    def forward(self, query, context) -> Tuple[torch.Tensor, torch.Tensor]:
        b, n, d = query.shape
        t = context.shape[1]
        h = self.heads
        q = self.q(query).view(b, n, h, d // h).transpose(1, 2)
        k = self.k(context).view(b, t, h, d // h).transpose(1, 2)
        v = self.v(context).view(b, t, h, d // h).transpose(1, 2)
        weights = torch.softmax(q @ k.transpose(-1, -2) / math.sqrt(d // h), dim=-1)
        out = (weights @ v).transpose(1, 2).reshape(b, n, d)
        return self.out(out), weights


class FeedForward(nn.Sequential):
    def __init__(self, dim: int, hidden: int, dropout: float):
        super().__init__(nn.Linear(dim, hidden), nn.GELU(), nn.Dropout(dropout), nn.Linear(hidden, dim))


class EncoderLayer(nn.Module):
    def __init__(self, dim, heads, ffn_dim, dropout):
        super().__init__()
        self.norm1 = nn.LayerNorm(dim)
        self.attn = MultiHeadAttention(dim, heads)
        self.norm2 = nn.LayerNorm(dim)
        self.ffn = FeedForward(dim, ffn_dim, dropout)
        self.drop = nn.Dropout(dropout)

    def forward(self, x):
        y = self.norm1(x)
        a, w = self.attn(y, y)
        x = x + self.drop(a)
        x = x + self.drop(self.ffn(self.norm2(x)))
        return x, w


class DecoderLayer(nn.Module):
    def __init__(self, dim, heads, ffn_dim, dropout):
        super().__init__()
        self.norm1 = nn.LayerNorm(dim)
        self.self_attn = MultiHeadAttention(dim, heads)
        self.norm2 = nn.LayerNorm(dim)
        self.cross_attn = MultiHeadAttention(dim, heads)
        self.norm3 = nn.LayerNorm(dim)
        self.ffn = FeedForward(dim, ffn_dim, dropout)
        self.drop = nn.Dropout(dropout)

    def forward(self, x, memory):
        y = self.norm1(x)
        a, _ = self.self_attn(y, y)
        x = x + self.drop(a)
        a, w = self.cross_attn(self.norm2(x), memory)
        x = x + self.drop(a)
        x = x + self.drop(self.ffn(self.norm3(x)))
        return x, w


class TransformerCore(nn.Module):
    """Three pre-norm encoder and three pre-norm decoder layers (by default).

    Positional encodings are added to the encoder input only; queries carry none.
    """

    def __init__(self, dim: int = 512, num_queries: int = 22, heads: int = 8, layers: int = 3,
                 ffn_mult: int = 4, dropout: float = 0.0):
        super().__init__()
        self.dim = dim
        self.queries = nn.Parameter(torch.randn(num_queries, dim) * 0.02)
        self.encoder_layers = nn.ModuleList(EncoderLayer(dim, heads, ffn_mult * dim, dropout) for _ in range(layers))
        self.decoder_layers = nn.ModuleList(DecoderLayer(dim, heads, ffn_mult * dim, dropout) for _ in range(layers))
        self.encoder_norm = nn.LayerNorm(dim)
        self.decoder_norm = nn.LayerNorm(dim)
        self.use_positions = True
        self.last_self_attention: List[torch.Tensor] = []
        self.last_cross_attention: List[torch.Tensor] = []

    @property
    def num_queries(self) -> int:
        return self.queries.shape[0]

    def encode(self, x: torch.Tensor) -> torch.Tensor:
        """``x``: ``(B, t_m, d)`` projected temporal features -> memory ``(B, t_m, d)``."""
        if x.shape[1] == 0:
            raise InvalidInput("cannot encode an empty sequence (t_m == 0)")
        if x.shape[-1] != self.dim:
            raise ShapeError(f"expected feature width {self.dim}, got {x.shape[-1]}")
        if self.use_positions:
            x = x + sinusoidal_positions(x.shape[1], self.dim, x.dtype)
        self.last_self_attention = []
        for layer in self.encoder_layers:
            x, w = layer(x)
            self.last_self_attention.append(w)
        return self.encoder_norm(x)

    def decode(self, memory: torch.Tensor, queries: Optional[torch.Tensor] = None) -> torch.Tensor:
        """Decode ``queries`` (default: the learned ones) against ``memory`` -> ``(B, N, d)``."""
        if queries is None:
            queries = self.queries
        if queries.dim() == 2:
            queries = queries.unsqueeze(0).expand(memory.shape[0], -1, -1)
        x = queries
        self.last_cross_attention = []
        for layer in self.decoder_layers:
            x, w = layer(x, memory)
            self.last_cross_attention.append(w)
        return self.decoder_norm(x)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.decode(self.encode(x))
