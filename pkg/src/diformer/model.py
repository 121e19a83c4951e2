"""The full diarization network: frozen encoder -> FPN -> transformer -> heads."""
from __future__ import annotations

from typing import Optional

import torch
import torch.nn as nn

from .config import RunConfig
from .encoder import SpeakerEncoder, freeze
from .fpn import FPNFusion
from .heads import MaskHead, PredictionSet, SpeakerHead, VadHead
from .transformer import TransformerCore


class DiFormer(nn.Module):
    def __init__(self, config: RunConfig, encoder: Optional[SpeakerEncoder] = None):
        super().__init__()
        self.config = config
        enc_cfg = config.encoder_config()
        if encoder is None:
            encoder = SpeakerEncoder(enc_cfg)
        elif encoder.config != enc_cfg:
            raise ValueError(f"encoder config {encoder.config} does not match run config {enc_cfg}")
        self.encoder = freeze(encoder)
        c_h, f_h = enc_cfg.high_res_shape
        c_l, _ = enc_cfg.low_res_shape
        d = config.model_dim
        self.fpn = FPNFusion(c_h, c_l)
        self.feature_width = c_h * f_h
        self.input_proj = nn.Linear(self.feature_width, d)
        self.transformer = TransformerCore(
            d, config.num_queries, config.heads, config.layers, config.ffn_mult, config.transformer_dropout
        )
        self.mask_head = MaskHead(d, config.mask_mlp_layers, config.head_dropout, config.temporal_lstm)
        self.vad_head = VadHead(d)
        self.speaker_head = SpeakerHead(d, config.embed_dim)

    def trainable_parameters(self):
        return [p for name, p in self.named_parameters() if not name.startswith("encoder.")]

    def encode(self, spec: torch.Tensor):
        """Frozen multi-scale features for a ``(B, frames, 80)`` spectrogram batch."""
        with torch.no_grad():
            return self.encoder.encode_multiscale(spec)

    def temporal_features(self, x_h, x_l) -> torch.Tensor:
        """FPN output projected to the model width: ``(B, t_m, d)``."""
        return self.input_proj(self.fpn(x_h, x_l))

    def forward_features(self, x_h: torch.Tensor, x_l: torch.Tensor) -> PredictionSet:
        features = self.temporal_features(x_h, x_l)
        slots = self.transformer.decode(self.transformer.encode(features))
        return PredictionSet(
            vad_logits=self.vad_head(slots),
            mask_logits=self.mask_head(slots, features),
            embeddings=self.speaker_head(slots),
        )

    def forward(self, spec: torch.Tensor) -> PredictionSet:
        squeeze = spec.dim() == 2
        if squeeze:
            spec = spec.unsqueeze(0)
        out = self.forward_features(*self.encode(spec))
        return out[0] if squeeze else out
