"""Run configuration and its flat ``key = value`` text format.

A config file holds one assignment per line; ``#`` starts a comment. Values
are parsed as bool (``true``/``false``), int, float, comma-separated int tuple,
or left as strings. Unknown keys are an error. Example::

    profile = desk
    steps = 3000
    lr = 1e-3
    encoder_channel_multipliers = 1, 1, 2, 4
"""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass, fields
from pathlib import Path
from typing import Any, Dict, Tuple

from .encoder import EncoderConfig


@dataclass
class RunConfig:
    profile: str = "paper"
    # model
    num_queries: int = 22
    model_dim: int = 512
    embed_dim: int = 256
    heads: int = 8
    layers: int = 3
    ffn_mult: int = 4
    transformer_dropout: float = 0.0
    head_dropout: float = 0.1
    mask_mlp_layers: int = 2
    temporal_lstm: bool = True
    encoder_base_channels: int = 32
    encoder_channel_multipliers: Tuple[int, ...] = (1, 2, 4, 8)
    encoder_blocks: Tuple[int, ...] = (3, 4, 6, 3)
    se_ratio: int = 8
    # loss
    alpha: float = 1.0
    beta: float = 0.1
    dice: bool = False
    # optimization
    lr: float = 1e-4
    lr_decay: float = 0.1
    decay_intervals: int = 3
    batch_size: int = 4
    steps: int = 3000
    log_every: int = 10
    checkpoint_every: int = 1000
    # inference
    window_seconds: float = 12.0
    hop_seconds: float = 12.0
    mask_threshold: float = 0.5
    vad_threshold: float = 0.5
    stitch_threshold: float = 0.4
    update_representatives: bool = True
    # data synthesis
    num_scenes: int = 100
    scene_seconds: float = 12.0
    num_speakers: int = 2
    overlap_ratio: float = 0.1
    speaker_pool: int = 1000
    # encoder pretraining
    pretrain_speakers: int = 64
    pretrain_clips: int = 16
    pretrain_clip_seconds: float = 1.0
    pretrain_epochs: int = 8
    pretrain_lr: float = 2e-3
    pretrain_batch_size: int = 32
    # misc
    seed: int = 0
    data_dir: str = "data"
    encoder_path: str = "encoder.bin"

    @classmethod
    def paper(cls, **overrides) -> "RunConfig":
        return cls(**overrides)

    @classmethod
    def desk(cls, **overrides) -> "RunConfig":
        base = dict(
            profile="desk", num_queries=8, model_dim=128, embed_dim=64, heads=4,
            encoder_base_channels=16, encoder_channel_multipliers=(1, 1, 2, 4),
            encoder_blocks=(1, 1, 1, 1), window_seconds=4.0, hop_seconds=4.0, scene_seconds=4.0,
        )
        base.update(overrides)
        return cls(**base)

    @classmethod
    def for_profile(cls, profile: str, **overrides) -> "RunConfig":
        if profile == "desk":
            return cls.desk(**overrides)
        if profile == "paper":
            return cls.paper(**overrides)
        raise ValueError(f"unknown profile {profile!r}")

    def encoder_config(self) -> EncoderConfig:
        return EncoderConfig(
            base_channels=self.encoder_base_channels,
            channel_multipliers=tuple(self.encoder_channel_multipliers),
            blocks_per_layer=tuple(self.encoder_blocks),
            embed_dim=self.embed_dim,
            se_ratio=self.se_ratio,
        )

    def to_dict(self) -> Dict[str, Any]:
        d = dataclasses.asdict(self)
        for k, v in d.items():
            if isinstance(v, tuple):
                d[k] = list(v)
        return d

    def model_dict(self) -> Dict[str, Any]:
        keys = ("num_queries", "model_dim", "embed_dim", "heads", "layers", "ffn_mult",
                "transformer_dropout", "head_dropout", "mask_mlp_layers", "temporal_lstm",
                "encoder_base_channels", "encoder_channel_multipliers", "encoder_blocks", "se_ratio")
        d = self.to_dict()
        return {k: d[k] for k in keys}

    @classmethod
    def from_dict(cls, d: Dict[str, Any]) -> "RunConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        cfg = cls.for_profile(d.get("profile", "paper"))
        return dataclasses.replace(cfg, **{k: tuple(v) if isinstance(v, list) else v for k, v in d.items()})

    def dumps(self) -> str:
        lines = []
        for k, v in self.to_dict().items():
            if isinstance(v, list):
                v = ", ".join(str(x) for x in v)
            elif isinstance(v, bool):
                v = "true" if v else "false"
            lines.append(f"{k} = {v}")
        return "\n".join(lines) + "\n"


def _parse_value(raw: str):
    raw = raw.strip()
    low = raw.lower()
    if low in ("true", "false"):
        return low == "true"
    if "," in raw:
        return tuple(int(x) for x in raw.split(",") if x.strip())
    for conv in (int, float):
        try:
            return conv(raw)
        except ValueError:
            pass
    return raw


def parse_config_text(text: str) -> Dict[str, Any]:
    values = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"config line {lineno}: expected 'key = value'")
        key, value = line.split("=", 1)
        values[key.strip()] = _parse_value(value)
    return values


def load_config(path=None, profile: str = "desk", **overrides) -> RunConfig:
    """Profile defaults, then the file (if any), then explicit overrides."""
    values: Dict[str, Any] = {"profile": profile}
    if path is not None:
        values.update(parse_config_text(Path(path).read_text()))
    values.update({k: v for k, v in overrides.items() if v is not None})
    return RunConfig.from_dict(values)
