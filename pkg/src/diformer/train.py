"""Training examples, the optimization loop and checkpoints."""
from __future__ import annotations

import hashlib
import json
import logging
import math
import os
import warnings
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Iterable, List, Optional, Sequence, Tuple

import numpy as np
import torch

from . import archive
from .config import RunConfig
from .errors import ConfigMismatch, InvalidInput
from .features import SAMPLE_RATE, Waveform, compute_logmel
from .loss import GroundTruthSet, SetCriterion
from .model import DiFormer
from .supervision import (
    FRAME_STRIDE,
    SpeechSegment,
    build_gt_embeddings,
    build_masks,
    crop_segments,
    speaker_order,
)

logger = logging.getLogger(__name__)


@dataclass
class TrainingExample:
    x_h: torch.Tensor
    x_l: torch.Tensor
    gt: GroundTruthSet
    name: str = ""


def cache_dir() -> Optional[Path]:
    """Feature cache location from ``DIFORMER_CACHE`` (unset: no caching)."""
    root = os.environ.get("DIFORMER_CACHE")
    return Path(root) if root else None


def window_examples(name: str, audio: Waveform, segments: Sequence[SpeechSegment], encoder,
                    window: float, num_slots: int) -> Tuple[List[TrainingExample], int]:
    """Cut one recording into windows and build the frozen features and targets of each.

    Windows holding more speakers than ``num_slots`` are dropped; the second
    return value counts them.
    """
    samples = np.asarray(audio.samples, dtype=np.float32)
    win = int(round(window * SAMPLE_RATE))
    t_m = win // FRAME_STRIDE
    examples, skipped = [], 0
    for k in range(max(1, math.ceil(len(samples) / win))):
        chunk = samples[k * win:(k + 1) * win]
        valid = len(chunk)
        if valid < FRAME_STRIDE:
            break
        segs = crop_segments(segments, k * window, k * window + valid / SAMPLE_RATE)
        if len(speaker_order(segs)) > num_slots:
            logger.warning("%s window %d: %d speakers exceed %d slots, skipped",
                           name, k, len(speaker_order(segs)), num_slots)
            skipped += 1
            continue
        masks, order = build_masks(segs, t_m)
        emb = build_gt_embeddings(Waveform(chunk), segs, encoder, order)
        padded = np.pad(chunk, (0, win - valid))
        with torch.no_grad():
            x_h, x_l = encoder.encode_multiscale(compute_logmel(padded))
        gt = GroundTruthSet.from_speakers(masks, emb, num_slots)
        examples.append(TrainingExample(x_h, x_l, gt, f"{name}#{k}"))
    return examples, skipped


def _cache_key(name, audio, segments, encoder, window, num_slots) -> str:
    h = hashlib.sha256()
    h.update(np.asarray(audio.samples, dtype=np.float32).tobytes())
    h.update(repr([(s.speaker_id, s.onset, s.duration) for s in segments]).encode())
    h.update(archive.checksum(encoder.state_dict()).encode())
    h.update(f"{window}:{num_slots}".encode())
    return h.hexdigest()[:32]


def prepare_examples(recordings: Iterable[Tuple[str, Waveform, Sequence[SpeechSegment]]], encoder,
                     config: RunConfig, use_cache: bool = True) -> Tuple[List[TrainingExample], int]:
    root = cache_dir() if use_cache else None
    examples: List[TrainingExample] = []
    skipped = 0
    for name, audio, segments in recordings:
        path = None
        if root is not None:
            key = _cache_key(name, audio, segments, encoder, config.window_seconds, config.num_queries)
            path = root / f"{key}.pt"
            if path.exists():
                cached = torch.load(path)
                examples += [TrainingExample(e["x_h"], e["x_l"], GroundTruthSet(**e["gt"]), e["name"])
                             for e in cached["examples"]]
                skipped += cached["skipped"]
                continue
        ex, sk = window_examples(name, audio, segments, encoder, config.window_seconds, config.num_queries)
        examples += ex
        skipped += sk
        if path is not None:
            path.parent.mkdir(parents=True, exist_ok=True)
            torch.save({"examples": [{"x_h": e.x_h, "x_l": e.x_l, "name": e.name,
                                      "gt": {"vad": e.gt.vad, "masks": e.gt.masks,
                                             "embeddings": e.gt.embeddings}} for e in ex],
                        "skipped": sk}, path)
    return examples, skipped


def collate(batch: Sequence[TrainingExample]):
    return (torch.stack([e.x_h for e in batch]), torch.stack([e.x_l for e in batch]),
            [e.gt for e in batch])


# ----------------------------------------------------------------------------
# checkpoints


def save_checkpoint(path, model: DiFormer, optimizer=None, step: int = 0, extra=None) -> None:
    tensors = {f"model.{k}": v for k, v in model.state_dict().items()}
    if optimizer is not None:
        names = {id(p): n for n, p in model.named_parameters()}
        for group in optimizer.param_groups:
            for p in group["params"]:
                state = optimizer.state.get(p)
                if not state:
                    continue
                for key in ("exp_avg", "exp_avg_sq", "step"):
                    tensors[f"optim.{names[id(p)]}.{key}"] = torch.as_tensor(state[key])
    meta = {"step": step}
    meta.update(extra or {})
    archive.save(path, "diformer", model.config.to_dict(), tensors, meta)


def load_checkpoint(path, expected: Optional[RunConfig] = None, optimizer_for: Optional[DiFormer] = None):
    """Load a model (and optionally Adam state) from ``path``.

    ``expected`` rejects checkpoints whose model architecture differs.
    Returns ``(model, header, optimizer_state)``.
    """
    if not Path(path).exists():
        raise FileNotFoundError(f"checkpoint not found: {path}")
    header, tensors = archive.load(path, kind="diformer")
    config = RunConfig.from_dict(header["config"])
    if expected is not None and expected.model_dict() != config.model_dict():
        diff = sorted(k for k, v in expected.model_dict().items() if config.model_dict()[k] != v)
        raise ConfigMismatch(f"{path}: model config mismatch in {diff}")
    model = DiFormer(config)
    model.load_state_dict({k[len("model."):]: v for k, v in tensors.items() if k.startswith("model.")})
    optim_state = {k[len("optim."):]: v for k, v in tensors.items() if k.startswith("optim.")}
    return model, header, optim_state


def _restore_optimizer(optimizer, model, optim_state):
    for name, p in model.named_parameters():
        if f"{name}.exp_avg" in optim_state:
            optimizer.state[p] = {
                "exp_avg": optim_state[f"{name}.exp_avg"].clone(),
                "exp_avg_sq": optim_state[f"{name}.exp_avg_sq"].clone(),
                "step": optim_state[f"{name}.step"].to(torch.float32).clone(),
            }


# ----------------------------------------------------------------------------
# loop


@dataclass
class TrainResult:
    model: DiFormer
    history: List[dict]
    step: int


def train(model: DiFormer, examples: Sequence[TrainingExample], config: RunConfig,
          out_dir=None, resume_from=None, steps: Optional[int] = None,
          on_log: Optional[Callable[[dict], None]] = None) -> TrainResult:
    """Adam with step decay; every step's batch and dropout draw depend only on (seed, step).

    That makes a resumed run retrace the uninterrupted one.
    """
    if not examples:
        raise InvalidInput("no training examples")
    total_steps = config.steps if steps is None else steps
    out = Path(out_dir) if out_dir is not None else None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        (out / "config.txt").write_text(config.dumps())

    params = model.trainable_parameters()
    optimizer = torch.optim.Adam(params, lr=config.lr)
    decay_every = max(1, config.steps // max(1, config.decay_intervals))
    scheduler = torch.optim.lr_scheduler.StepLR(optimizer, step_size=decay_every, gamma=config.lr_decay)
    start = 0
    if resume_from is not None:
        loaded, header, optim_state = load_checkpoint(resume_from, expected=config)
        model.load_state_dict(loaded.state_dict())
        _restore_optimizer(optimizer, model, optim_state)
        start = int(header["extra"]["step"])
        with warnings.catch_warnings():
            # fast-forwarding the schedule before any optimizer step is intended here
            warnings.simplefilter("ignore", UserWarning)
            for _ in range(start):
                scheduler.step()

    criterion = SetCriterion(config.alpha, config.beta, config.dice)
    history: List[dict] = []
    log_file = open(out / "metrics.jsonl", "a" if resume_from else "w") if out is not None else None
    batch_size = min(config.batch_size, len(examples))
    try:
        for step in range(start, total_steps):
            model.train()
            torch.manual_seed(config.seed * 1_000_003 + step)
            idx = torch.randperm(len(examples))[:batch_size].tolist()
            x_h, x_l, gts = collate([examples[i] for i in idx])
            pred = model.forward_features(x_h, x_l)
            loss = criterion(pred, gts)
            optimizer.zero_grad()
            loss.total.backward()
            optimizer.step()
            scheduler.step()
            done = step + 1
            if done % config.log_every == 0 or done == total_steps:
                entry = {"step": done, "lr": optimizer.param_groups[0]["lr"], **loss.as_floats()}
                history.append(entry)
                if log_file is not None:
                    log_file.write(json.dumps(entry) + "\n")
                    log_file.flush()
                if on_log is not None:
                    on_log(entry)
                logger.info("step %d loss %.4f (vad %.4f mask %.4f emb %.4f)", done, entry["total"],
                            entry["vad"], entry["mask"], entry["embedding"])
            if out is not None and (done % config.checkpoint_every == 0 or done == total_steps):
                save_checkpoint(out / f"checkpoint_{done:07d}.bin", model, optimizer, done)
                save_checkpoint(out / "last.bin", model, optimizer, done)
    finally:
        if log_file is not None:
            log_file.close()
    model.eval()
    return TrainResult(model, history, total_steps)
