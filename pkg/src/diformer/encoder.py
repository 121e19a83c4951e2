"""Residual squeeze-and-excitation speaker encoder.

Four residual stages; the first keeps the spectrogram resolution and each of
the last three halves both the mel and time axes. The outputs of the last two
stages are the high-resolution (``x_h``) and low-resolution (``x_l``) taps used
by the feature pyramid.
"""
from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass, field
from typing import List, Optional, Sequence, Tuple

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from . import archive
from .errors import InvalidCorpus
from .features import N_MELS

logger = logging.getLogger(__name__)


@dataclass
class EncoderConfig:
    base_channels: int = 16
    channel_multipliers: Tuple[int, ...] = (1, 1, 2, 4)
    blocks_per_layer: Tuple[int, ...] = (1, 1, 1, 1)
    embed_dim: int = 64
    se_ratio: int = 8
    n_mels: int = N_MELS
    num_layers: int = field(default=4, init=False)

    def __post_init__(self):
        self.channel_multipliers = tuple(self.channel_multipliers)
        self.blocks_per_layer = tuple(self.blocks_per_layer)
        if len(self.channel_multipliers) != 4 or len(self.blocks_per_layer) != 4:
            raise ValueError("the encoder has exactly four layers")

    @classmethod
    def paper(cls) -> "EncoderConfig":
        return cls(base_channels=32, channel_multipliers=(1, 2, 4, 8),
                   blocks_per_layer=(3, 4, 6, 3), embed_dim=256)

    @property
    def channels(self) -> Tuple[int, ...]:
        return tuple(self.base_channels * m for m in self.channel_multipliers)

    @property
    def stride_schedule(self) -> Tuple[Tuple[int, int], ...]:
        """Per-layer (mel, time) strides."""
        return ((1, 1), (2, 2), (2, 2), (2, 2))

    @property
    def high_res_shape(self) -> Tuple[int, int]:
        return self.channels[2], self.n_mels // 4

    @property
    def low_res_shape(self) -> Tuple[int, int]:
        return self.channels[3], self.n_mels // 8

    def to_dict(self):
        d = asdict(self)
        d.pop("num_layers")
        d["channel_multipliers"] = list(self.channel_multipliers)
        d["blocks_per_layer"] = list(self.blocks_per_layer)
        return d

    @classmethod
    def from_dict(cls, d):
        return cls(**{k: v for k, v in d.items() if k != "num_layers"})


class SqueezeExcitation(nn.Module):
    def __init__(self, channels: int, ratio: int):
        super().__init__()
        hidden = max(1, channels // ratio)
        self.fc1 = nn.Linear(channels, hidden)
        self.fc2 = nn.Linear(hidden, channels)

    def forward(self, x):
        s = x.mean(dim=(2, 3))
        s = torch.sigmoid(self.fc2(F.relu(self.fc1(s))))
        return x * s[:, :, None, None]


class SEBasicBlock(nn.Module):
    def __init__(self, in_ch: int, out_ch: int, stride: Tuple[int, int], se_ratio: int):
        super().__init__()
        self.conv1 = nn.Conv2d(in_ch, out_ch, 3, stride=stride, padding=1, bias=False)
        self.bn1 = nn.BatchNorm2d(out_ch)
        self.conv2 = nn.Conv2d(out_ch, out_ch, 3, padding=1, bias=False)
        self.bn2 = nn.BatchNorm2d(out_ch)
        self.se = SqueezeExcitation(out_ch, se_ratio)
        self.shortcut = nn.Identity()
        if stride != (1, 1) or in_ch != out_ch:
            self.shortcut = nn.Sequential(
                nn.Conv2d(in_ch, out_ch, 1, stride=stride, bias=False), nn.BatchNorm2d(out_ch)
            )

    def forward(self, x):
        out = F.relu(self.bn1(self.conv1(x)))
        out = self.se(self.bn2(self.conv2(out)))
        return F.relu(out + self.shortcut(x))


class SpeakerEncoder(nn.Module):
    def __init__(self, config: Optional[EncoderConfig] = None):
        super().__init__()
        self.config = config = config or EncoderConfig()
        ch = config.channels
        self.stem = nn.Sequential(
            nn.Conv2d(1, ch[0], 3, padding=1, bias=False), nn.BatchNorm2d(ch[0]), nn.ReLU()
        )
        layers = []
        in_ch = ch[0]
        for out_ch, n_blocks, stride in zip(ch, config.blocks_per_layer, config.stride_schedule):
            blocks = [SEBasicBlock(in_ch, out_ch, stride, config.se_ratio)]
            blocks += [SEBasicBlock(out_ch, out_ch, (1, 1), config.se_ratio) for _ in range(n_blocks - 1)]
            layers.append(nn.Sequential(*blocks))
            in_ch = out_ch
        self.layers = nn.ModuleList(layers)
        c_l, f_l = config.low_res_shape
        self.projection = nn.Linear(c_l * f_l, config.embed_dim)
        self.frozen = False

    def train(self, mode: bool = True):
        # A frozen encoder stays in eval mode no matter what the parent module does.
        return super().train(mode and not self.frozen)

    @staticmethod
    def _as_batch(spec: torch.Tensor) -> Tuple[torch.Tensor, bool]:
        if spec.dim() == 2:
            return spec.unsqueeze(0), True
        return spec, False

    def _trunk(self, spec: torch.Tensor):
        """spec: (B, T, n_mels). Returns x_h, x_l cropped to the unpadded length."""
        n_frames = spec.shape[1]
        pad = (-n_frames) % 8
        x = spec.transpose(1, 2).unsqueeze(1)  # (B, 1, n_mels, T)
        if pad:
            x = F.pad(x, (0, pad, 0, 0), mode="replicate")
        x = self.stem(x)
        feats = []
        for layer in self.layers:
            x = layer(x)
            feats.append(x)
        t_m = n_frames // 4
        x_h = feats[2][..., :t_m]
        x_l = feats[3][..., :math.ceil(t_m / 2)]
        return x_h, x_l

    def encode_multiscale(self, spec: torch.Tensor):
        """Return ``(x_h, x_l)`` of shapes ``(B, C_h, 20, t_m)`` and ``(B, C_l, 10, ceil(t_m/2))``.

        ``t_m`` is ``frames // 4``. A 2-D input gives unbatched outputs.
        """
        spec, squeeze = self._as_batch(spec)
        x_h, x_l = self._trunk(spec)
        if squeeze:
            return x_h[0], x_l[0]
        return x_h, x_l

    def frame_embeddings(self, spec: torch.Tensor) -> torch.Tensor:
        spec, squeeze = self._as_batch(spec)
        _, x_l = self._trunk(spec)
        b, c, f, t = x_l.shape
        frames = self.projection(x_l.reshape(b, c * f, t).transpose(1, 2))
        frames = F.normalize(frames, dim=-1, eps=1e-8)
        return frames[0] if squeeze else frames

    def encode_utterance(self, spec: torch.Tensor) -> torch.Tensor:
        """Mean-pool the low-resolution tap over time, project, L2-normalize."""
        spec, squeeze = self._as_batch(spec)
        _, x_l = self._trunk(spec)
        b, c, f, _ = x_l.shape
        pooled = x_l.mean(dim=3).reshape(b, c * f)
        emb = F.normalize(self.projection(pooled), dim=-1, eps=1e-8)
        return emb[0] if squeeze else emb

    forward = encode_utterance

    def state_tensors(self):
        return dict(self.state_dict())

    def save(self, path) -> None:
        archive.save(path, "encoder", self.config.to_dict(), self.state_tensors())

    def serialize(self) -> bytes:
        return archive.dumps("encoder", self.config.to_dict(), self.state_tensors())

    @classmethod
    def load(cls, path, expected_config: Optional[EncoderConfig] = None) -> "SpeakerEncoder":
        header, tensors = archive.load(
            path, kind="encoder",
            expected_config=expected_config.to_dict() if expected_config else None,
        )
        enc = cls(EncoderConfig.from_dict(header["config"]))
        enc.load_state_dict(tensors)
        return freeze(enc)


def freeze(encoder: SpeakerEncoder) -> SpeakerEncoder:
    """Put the encoder in eval mode permanently and stop gradients to its parameters."""
    encoder.frozen = True
    encoder.eval()
    for p in encoder.parameters():
        p.requires_grad_(False)
    return encoder


class CosineClassifier(nn.Module):
    """Scaled cosine logits over speaker identities (no margin)."""

    def __init__(self, embed_dim: int, n_classes: int, scale: float = 10.0):
        super().__init__()
        self.weight = nn.Parameter(torch.randn(n_classes, embed_dim) * 0.1)
        self.scale = scale

    def forward(self, emb):
        return self.scale * emb @ F.normalize(self.weight, dim=-1).T


@dataclass
class PretrainResult:
    encoder: SpeakerEncoder
    history: List[dict]
    val_accuracy: Optional[float] = None


def pretrain_encoder(
    specs: torch.Tensor,
    labels: Sequence[int],
    config: Optional[EncoderConfig] = None,
    epochs: int = 10,
    lr: float = 2e-3,
    batch_size: int = 32,
    seed: int = 0,
    val_specs: Optional[torch.Tensor] = None,
    val_labels: Optional[Sequence[int]] = None,
) -> PretrainResult:
    """Train the encoder as a speaker classifier, then discard the head and freeze.

    ``specs`` is a ``(n_clips, frames, n_mels)`` stack of log-mel spectrograms and
    ``labels`` the integer speaker identity of each clip.
    """
    labels_t = torch.as_tensor(np.asarray(labels), dtype=torch.long)
    classes = torch.unique(labels_t)
    if len(classes) < 2:
        raise InvalidCorpus(f"need at least 2 speakers, got {len(classes)}")
    if len(labels_t) != len(specs):
        raise InvalidCorpus("one label per clip is required")
    remap = {int(c): i for i, c in enumerate(classes.tolist())}
    targets = torch.tensor([remap[int(l)] for l in labels_t.tolist()])

    torch.manual_seed(seed)
    encoder = SpeakerEncoder(config)
    head = CosineClassifier(encoder.config.embed_dim, len(classes))
    params = list(encoder.parameters()) + list(head.parameters())
    opt = torch.optim.Adam(params, lr=lr)
    total = epochs * math.ceil(len(specs) / batch_size)
    sched = torch.optim.lr_scheduler.OneCycleLR(opt, max_lr=lr, total_steps=max(total, 1), pct_start=0.15)
    gen = torch.Generator().manual_seed(seed)

    history = []
    for epoch in range(epochs):
        encoder.train()
        order = torch.randperm(len(specs), generator=gen)
        running, correct = 0.0, 0
        for start in range(0, len(specs), batch_size):
            idx = order[start:start + batch_size]
            logits = head(encoder.encode_utterance(specs[idx]))
            loss = F.cross_entropy(logits, targets[idx])
            opt.zero_grad()
            loss.backward()
            opt.step()
            sched.step()
            running += loss.item() * len(idx)
            correct += (logits.argmax(-1) == targets[idx]).sum().item()
        entry = {"epoch": epoch, "loss": running / len(specs), "train_accuracy": correct / len(specs)}
        history.append(entry)
        logger.info("pretrain epoch %d loss %.4f acc %.3f", epoch, entry["loss"], entry["train_accuracy"])

    val_acc = None
    freeze(encoder)
    if val_specs is not None and val_labels is not None:
        val_t = torch.tensor([remap[int(l)] for l in val_labels])
        with torch.no_grad():
            emb = torch.cat([encoder.encode_utterance(val_specs[i:i + 64]) for i in range(0, len(val_specs), 64)])
            val_acc = (head(emb).argmax(-1) == val_t).float().mean().item()
    return PretrainResult(encoder, history, val_acc)
