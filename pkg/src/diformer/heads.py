"""Mask, vocal-activity and speaker heads on top of the decoded slots."""
from __future__ import annotations

from dataclasses import dataclass

import torch
import torch.nn as nn
import torch.nn.functional as F

EMBED_EPS = 1e-8


@dataclass
class PredictionSet:
    """Model output for a batch: ``vad_logits`` (B, N, 2), ``mask_logits`` (B, N, t_m),
    ``embeddings`` (B, N, D) with unit rows."""

    vad_logits: torch.Tensor
    mask_logits: torch.Tensor
    embeddings: torch.Tensor

    @property
    def vad(self) -> torch.Tensor:
        return torch.softmax(self.vad_logits, dim=-1)

    @property
    def masks(self) -> torch.Tensor:
        return torch.sigmoid(self.mask_logits)

    def __getitem__(self, i) -> "PredictionSet":
        return PredictionSet(self.vad_logits[i], self.mask_logits[i], self.embeddings[i])

    def detach(self) -> "PredictionSet":
        return PredictionSet(self.vad_logits.detach(), self.mask_logits.detach(), self.embeddings.detach())


class BiLSTM(nn.Module):
    def __init__(self, dim: int):
        super().__init__()
        self.lstm = nn.LSTM(dim, dim // 2, batch_first=True, bidirectional=True)

    def forward(self, x):
        return self.lstm(x)[0]


class MaskHead(nn.Module):
    """Masks from slot alignment vectors attending over smoothed temporal features.

    Slots go through dropout, a bidirectional LSTM over the slot axis and a
    sigmoid-terminated MLP to give alignment vectors; temporal features go
    through dropout and a bidirectional LSTM over time. Mask logits are their
    inner products.
    """

    def __init__(self, dim: int, mlp_layers: int = 2, dropout: float = 0.1, temporal_lstm: bool = True):
        super().__init__()
        self.slot_dropout = nn.Dropout(dropout)
        self.slot_lstm = BiLSTM(dim)
        mlp = []
        for i in range(mlp_layers):
            mlp.append(nn.Linear(dim, dim))
            if i < mlp_layers - 1:
                mlp.append(nn.GELU())
        self.mlp = nn.Sequential(*mlp)
        self.temporal_dropout = nn.Dropout(dropout)
        self.temporal_lstm = BiLSTM(dim)
        self.use_temporal_lstm = temporal_lstm

    def alignment(self, slots: torch.Tensor) -> torch.Tensor:
        return torch.sigmoid(self.mlp(self.slot_lstm(self.slot_dropout(slots))))

    def temporal(self, features: torch.Tensor) -> torch.Tensor:
        x = self.temporal_dropout(features)
        return self.temporal_lstm(x) if self.use_temporal_lstm else x

    def forward(self, slots: torch.Tensor, features: torch.Tensor) -> torch.Tensor:
        """slots (B, N, d), features (B, t_m, d) -> mask logits (B, N, t_m)."""
        return self.alignment(slots) @ self.temporal(features).transpose(1, 2)


class VadHead(nn.Module):
    """Two-class speech/no-speech logits per slot; class 1 means the slot carries speech."""

    def __init__(self, dim: int):
        super().__init__()
        self.mlp = nn.Sequential(nn.Linear(dim, dim), nn.GELU(), nn.Linear(dim, 2))

    def forward(self, slots):
        return self.mlp(slots)


class SpeakerHead(nn.Module):
    def __init__(self, dim: int, embed_dim: int):
        super().__init__()
        self.proj = nn.Linear(dim, embed_dim)

    def forward(self, slots):
        # A zero row stays zero instead of turning into NaN.
        return F.normalize(self.proj(slots), dim=-1, eps=EMBED_EPS)
