"""Windowed inference over long recordings and greedy cross-window speaker stitching."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, List, Optional, Sequence

import numpy as np
import torch

from .errors import InvalidAudio
from .features import SAMPLE_RATE, Waveform, compute_logmel
from .supervision import FRAME_SECONDS, FRAME_STRIDE, SpeechSegment


@dataclass
class ActiveSlot:
    mask: np.ndarray  # binary, one entry per frame of the window
    embedding: np.ndarray
    vad_prob: float = 1.0
    slot: int = -1


@dataclass
class WindowPrediction:
    window_start: float
    slots: List[ActiveSlot]
    frame_seconds: float = FRAME_SECONDS
    mask_probs: Optional[np.ndarray] = None  # full (N, t_m) soft masks, for plotting
    vad_probs: Optional[np.ndarray] = None


def window_count(n_samples: int, window: float, hop: float, sample_rate: int = SAMPLE_RATE) -> int:
    win = int(round(window * sample_rate))
    step = int(round(hop * sample_rate))
    if n_samples <= win:
        return 1
    return 1 + math.ceil((n_samples - win) / step)


@torch.no_grad()
def predict_window(model, chunk: np.ndarray, valid_frames: int, mask_threshold: float = 0.5,
                   vad_threshold: float = 0.5) -> WindowPrediction:
    out = model(compute_logmel(chunk))
    masks = out.masks.numpy()
    vad = out.vad[:, 1].numpy()
    emb = out.embeddings.numpy()
    binary = masks > mask_threshold
    binary[:, valid_frames:] = False
    slots = [
        ActiveSlot(binary[i].astype(np.uint8), emb[i].astype(np.float64), float(vad[i]), i)
        for i in range(len(vad))
        if vad[i] > vad_threshold
    ]
    return WindowPrediction(0.0, slots, mask_probs=masks, vad_probs=vad)


def run_windows(audio: Waveform, model, window: float = 12.0, hop: Optional[float] = None,
                mask_threshold: float = 0.5, vad_threshold: float = 0.5) -> List[WindowPrediction]:
    """Split ``audio`` into windows (last one zero-padded) and predict each.

    Frames of the padded tail are forced inactive; only slots whose speech
    probability exceeds ``vad_threshold`` are kept.
    """
    hop = window if hop is None else hop
    samples = np.asarray(audio.samples, dtype=np.float32)
    if len(samples) < FRAME_STRIDE:
        raise InvalidAudio(f"audio shorter than one frame ({FRAME_STRIDE} samples)")
    win = int(round(window * SAMPLE_RATE))
    step = int(round(hop * SAMPLE_RATE))
    was_training = model.training
    model.eval()
    preds = []
    try:
        for k in range(window_count(len(samples), window, hop)):
            start = k * step
            chunk = samples[start:start + win]
            valid = math.ceil(len(chunk) / FRAME_STRIDE)
            if len(chunk) < win:
                chunk = np.pad(chunk, (0, win - len(chunk)))
            pred = predict_window(model, chunk, valid, mask_threshold, vad_threshold)
            pred.window_start = start / SAMPLE_RATE
            preds.append(pred)
    finally:
        model.train(was_training)
    return preds


def masks_to_segments(mask: Sequence, frame_seconds: float = FRAME_SECONDS, offset: float = 0.0,
                      speaker: str = "") -> List[SpeechSegment]:
    """Maximal runs of ones become segments starting at ``offset + run_start * frame_seconds``."""
    m = np.asarray(mask).astype(bool).astype(np.int8)
    edges = np.diff(np.concatenate([[0], m, [0]]))
    starts = np.flatnonzero(edges == 1)
    ends = np.flatnonzero(edges == -1)
    return [
        SpeechSegment(speaker, round(offset + s * frame_seconds, 6), round((e - s) * frame_seconds, 6))
        for s, e in zip(starts, ends)
    ]


def merge_touching(segments: Iterable[SpeechSegment], gap: float = 1e-6) -> List[SpeechSegment]:
    """Merge same-speaker segments that touch or overlap (e.g. across a window boundary)."""
    merged: List[SpeechSegment] = []
    last = {}
    for seg in sorted(segments, key=lambda s: (s.onset, s.speaker_id)):
        i = last.get(seg.speaker_id)
        if i is not None and seg.onset <= merged[i].offset + gap:
            prev = merged[i]
            merged[i] = SpeechSegment(prev.speaker_id, prev.onset,
                                      round(max(prev.offset, seg.offset) - prev.onset, 6))
        else:
            last[seg.speaker_id] = len(merged)
            merged.append(seg)
    return merged


@dataclass
class SpeakerRegistry:
    threshold: float = 0.4
    update: bool = True
    ids: List[str] = field(default_factory=list)
    representatives: List[np.ndarray] = field(default_factory=list)
    counts: List[int] = field(default_factory=list)

    def assign(self, embedding: np.ndarray, exclude: Iterable[int] = ()) -> int:
        """Return the registry index for ``embedding``, creating a new identity if nothing is close."""
        e = np.asarray(embedding, dtype=np.float64)
        e = e / max(np.linalg.norm(e), 1e-12)
        exclude = set(exclude)
        best, best_sim = -1, -np.inf
        for i, rep in enumerate(self.representatives):
            if i in exclude:
                continue
            sim = float(rep @ e)
            if sim > best_sim:
                best, best_sim = i, sim
        if best >= 0 and best_sim >= self.threshold:
            if self.update:
                n = self.counts[best]
                mean = self.representatives[best] * n + e
                self.representatives[best] = mean / np.linalg.norm(mean)
                self.counts[best] = n + 1
            return best
        self.ids.append(f"spk{len(self.ids)}")
        self.representatives.append(e)
        self.counts.append(1)
        return len(self.ids) - 1


class Stitcher:
    """Online greedy clustering of active slots into global speaker identities.

    Slots of one window are distinct speakers, so an identity claimed by one
    slot is not offered to the other slots of the same window.
    """

    def __init__(self, threshold: float = 0.4, update_representatives: bool = True):
        self.registry = SpeakerRegistry(threshold, update_representatives)
        self.segments: List[SpeechSegment] = []

    def add(self, pred: WindowPrediction) -> List[int]:
        taken: List[int] = []
        for slot in pred.slots:
            if not np.any(slot.mask):
                continue
            idx = self.registry.assign(slot.embedding, exclude=taken)
            taken.append(idx)
            self.segments += masks_to_segments(
                slot.mask, pred.frame_seconds, pred.window_start, self.registry.ids[idx]
            )
        return taken

    def result(self) -> List[SpeechSegment]:
        return merge_touching(self.segments)


def stitch(preds: Sequence[WindowPrediction], threshold: float = 0.4,
           update_representatives: bool = True) -> List[SpeechSegment]:
    stitcher = Stitcher(threshold, update_representatives)
    for pred in preds:
        stitcher.add(pred)
    return stitcher.result()


def diarize(audio: Waveform, model, window: float = 12.0, hop: Optional[float] = None,
            threshold: float = 0.4, mask_threshold: float = 0.5, vad_threshold: float = 0.5,
            update_representatives: bool = True) -> List[SpeechSegment]:
    preds = run_windows(audio, model, window, hop, mask_threshold, vad_threshold)
    return stitch(preds, threshold, update_representatives)
