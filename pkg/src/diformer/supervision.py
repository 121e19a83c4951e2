"""Procedural multi-speaker scenes and groundtruth targets.

Every synthetic speaker is a parametric voice seeded by its id: a harmonic
source at a speaker-specific pitch, shaped by three formant resonances and a
syllable-rate amplitude modulation. Utterances vary pitch contour and formant
positions around the speaker's means so that clips of one speaker are similar
but never identical.
"""
from __future__ import annotations

import logging
import zlib
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import torch

from .errors import InvalidSpec
from .features import SAMPLE_RATE, Waveform, compute_logmel, normalize_waveform

logger = logging.getLogger(__name__)

FRAME_STRIDE = 640  # samples per mask frame (spectrogram hop 160 x encoder time stride 4)
FRAME_SECONDS = FRAME_STRIDE / SAMPLE_RATE  # 0.04 s


@dataclass(frozen=True)
class SpeechSegment:
    speaker_id: str
    onset: float
    duration: float

    def __post_init__(self):
        if self.duration <= 0:
            raise ValueError(f"segment duration must be positive, got {self.duration}")
        if self.onset < 0:
            raise ValueError(f"segment onset must be non-negative, got {self.onset}")

    @property
    def offset(self) -> float:
        return self.onset + self.duration


# ----------------------------------------------------------------------------
# voices


@dataclass(frozen=True)
class VoiceParams:
    f0: float
    formants: Tuple[float, float, float]
    bandwidths: Tuple[float, float, float]
    formant_gains: Tuple[float, float, float]
    tilt: float  # dB per octave above f0
    am_rate: float
    am_depth: float


def _speaker_rng(speaker_id) -> np.random.Generator:
    return np.random.default_rng(zlib.crc32(str(speaker_id).encode("utf-8")))


def voice_params(speaker_id) -> VoiceParams:
    rng = _speaker_rng(speaker_id)
    f0 = float(np.exp(rng.uniform(np.log(85.0), np.log(260.0))))
    formants = (rng.uniform(300, 850), rng.uniform(900, 2300), rng.uniform(2400, 3600))
    bandwidths = tuple(rng.uniform(50, 130, size=3))
    gains = (1.0, rng.uniform(0.3, 0.9), rng.uniform(0.1, 0.5))
    return VoiceParams(
        f0=f0,
        formants=tuple(float(f) for f in formants),
        bandwidths=tuple(float(b) for b in bandwidths),
        formant_gains=tuple(float(g) for g in gains),
        tilt=float(rng.uniform(-9.0, -3.0)),
        am_rate=float(rng.uniform(3.0, 6.0)),
        am_depth=float(rng.uniform(0.2, 0.45)),
    )


def _smooth_noise(rng, n_samples, n_knots, scale):
    knots = rng.standard_normal(n_knots + 2) * scale
    return np.interp(np.linspace(0, n_knots + 1, n_samples), np.arange(n_knots + 2), knots)


def synthesize_utterance(speaker_id, duration: float, rng: np.random.Generator,
                         sample_rate: int = SAMPLE_RATE) -> np.ndarray:
    """Render one utterance of ``duration`` seconds; the envelope is nonzero on its interior."""
    p = voice_params(speaker_id)
    n = max(1, int(round(duration * sample_rate)))
    t = np.arange(n) / sample_rate
    n_syll = max(1, int(duration * 4))

    f0 = p.f0 * np.exp(_smooth_noise(rng, n, n_syll, 0.06))
    phase = 2 * np.pi * np.cumsum(f0) / sample_rate + rng.uniform(0, 2 * np.pi)
    formants = [f * np.exp(_smooth_noise(rng, n, n_syll, 0.05)) for f in p.formants]

    # Harmonic amplitudes change slowly; evaluate them on a coarse grid and interpolate.
    coarse = np.arange(0, n, 32)
    n_harm = int(7000 // p.f0)
    k = np.arange(1, n_harm + 1)[:, None]
    fk = k * f0[coarse][None, :]
    amp = np.full(fk.shape, 0.02)
    for fc, bw, g in zip(formants, p.bandwidths, p.formant_gains):
        amp += g / (1.0 + ((fk - fc[coarse][None, :]) / bw) ** 2)
    amp *= 10 ** (p.tilt * np.log2(k) / 20.0)
    # Linear interpolation weights from the coarse grid, shared by all harmonics.
    pos = np.arange(n) / 32.0
    lo = np.minimum(pos.astype(np.int64), len(coarse) - 1)
    hi = np.minimum(lo + 1, len(coarse) - 1)
    frac = pos - lo
    base = np.exp(1j * phase)
    zk = np.ones(n, dtype=np.complex128)
    out = np.zeros(n)
    for i in range(n_harm):
        zk *= base  # exp(1j * (i + 1) * phase)
        out += (amp[i, lo] * (1.0 - frac) + amp[i, hi] * frac) * zk.imag

    am_phase = rng.uniform(0, 2 * np.pi)
    envelope = 1.0 - p.am_depth * (0.5 + 0.5 * np.sin(2 * np.pi * p.am_rate * t + am_phase))
    ramp = min(n // 2, int(0.01 * sample_rate))
    if ramp > 0:
        r = np.sin(0.5 * np.pi * (np.arange(1, ramp + 1) / (ramp + 1)))
        envelope[:ramp] *= r
        envelope[-ramp:] *= r[::-1]
    out *= envelope
    peak = np.max(np.abs(out))
    return out / peak if peak > 0 else out


def speaker_clips(speaker_ids: Sequence, clips_per_speaker: int, clip_seconds: float,
                  seed: int = 0) -> Tuple[List[np.ndarray], List[int]]:
    """Independent utterances for encoder pretraining; labels index ``speaker_ids``."""
    rng = np.random.default_rng(seed)
    clips, labels = [], []
    for label, spk in enumerate(speaker_ids):
        for _ in range(clips_per_speaker):
            clips.append(normalize_waveform(synthesize_utterance(spk, clip_seconds, rng)).samples)
            labels.append(label)
    return clips, labels


def clips_to_logmel(clips: Sequence[np.ndarray]) -> torch.Tensor:
    return torch.stack([compute_logmel(c) for c in clips])


# ----------------------------------------------------------------------------
# scenes


@dataclass
class SceneSpec:
    num_speakers: int = 2
    total_duration: float = 4.0
    overlap_ratio: float = 0.0
    mean_pause: float = 0.3
    min_turn: float = 0.6
    max_turn: float = 1.6
    seed: int = 0
    speakers: Optional[Tuple[str, ...]] = None
    speaker_pool: int = 1000

    def __post_init__(self):
        if self.num_speakers < 1:
            raise InvalidSpec("num_speakers must be >= 1")
        if not 0.0 <= self.overlap_ratio < 1.0:
            raise InvalidSpec("overlap_ratio must lie in [0, 1)")
        if self.num_speakers == 1 and self.overlap_ratio > 0:
            raise InvalidSpec("a single speaker cannot overlap with anyone")
        if self.total_duration <= 0:
            raise InvalidSpec("total_duration must be positive")
        if self.speakers is not None and len(self.speakers) != self.num_speakers:
            raise InvalidSpec("len(speakers) must equal num_speakers")


@dataclass
class Scene:
    waveform: Waveform
    segments: List[SpeechSegment]
    tracks: Dict[str, np.ndarray] = field(repr=False)


def _union_length(intervals):
    total, cur_s, cur_e = 0.0, None, None
    for s, e in sorted(intervals):
        if cur_e is None or s > cur_e:
            if cur_e is not None:
                total += cur_e - cur_s
            cur_s, cur_e = s, e
        else:
            cur_e = max(cur_e, e)
    if cur_e is not None:
        total += cur_e - cur_s
    return total


def overlap_stats(segments: Sequence[SpeechSegment]) -> Tuple[float, float]:
    """Return ``(speech, overlapped)`` seconds: union of activity and time with >= 2 speakers."""
    points = sorted({p for s in segments for p in (s.onset, s.offset)})
    speech = overlapped = 0.0
    for a, b in zip(points[:-1], points[1:]):
        mid = 0.5 * (a + b)
        active = {s.speaker_id for s in segments if s.onset <= mid < s.offset}
        if active:
            speech += b - a
        if len(active) > 1:
            overlapped += b - a
    return speech, overlapped


def _plan_turns(spec: SceneSpec, speakers: List[str], rng: np.random.Generator) -> List[SpeechSegment]:
    order = list(rng.permutation(len(speakers)))
    turns: List[Tuple[int, float, float]] = []  # (speaker index, start, end)
    t = float(rng.uniform(0.05, 0.3))
    speech = overlapped = 0.0
    end_limit = spec.total_duration - 0.05
    margin = 2 * FRAME_SECONDS
    while t < end_limit - spec.min_turn * 0.5:
        if len(turns) < len(speakers):
            spk = order[len(turns)]
        elif len(speakers) == 1:
            spk = 0
        else:
            prev = turns[-1][0]
            spk = int(rng.choice([i for i in range(len(speakers)) if i != prev]))
        dur = float(rng.uniform(spec.min_turn, spec.max_turn))
        start, ov = t, 0.0
        if turns and spec.overlap_ratio > 0:
            _, prev_start, prev_end = turns[-1]
            # At most two concurrent talkers: never reach back past the turn before the previous one.
            floor = turns[-2][2] if len(turns) > 1 else 0.0
            max_ov = max(0.0, min(prev_end - max(prev_start, floor) - margin, 0.8 * dur))
            want = (spec.overlap_ratio * (speech + dur) - overlapped) / (1.0 + spec.overlap_ratio)
            ov = float(np.clip(want, 0.0, max_ov))
            if ov >= 0.05:
                start = prev_end - ov
            else:
                ov = 0.0
        speech += dur - ov
        overlapped += ov
        end = min(start + dur, end_limit)
        if end - start < 0.2:
            break
        turns.append((spk, start, end))
        t = end + float(rng.exponential(spec.mean_pause)) + (0.05 if spec.overlap_ratio == 0 else 0.0)
    if len({s for s, _, _ in turns}) < len(speakers):
        raise InvalidSpec(
            f"total_duration {spec.total_duration}s too short for {len(speakers)} speakers"
        )
    return [SpeechSegment(speakers[s], round(a, 4), round(b - a, 4)) for s, a, b in turns]


def render_scene(spec: SceneSpec) -> Scene:
    """Render a scene: mixture waveform, exact segments, and isolated per-speaker tracks."""
    rng = np.random.default_rng(spec.seed)
    if spec.speakers is not None:
        speakers = [str(s) for s in spec.speakers]
    else:
        ids = rng.choice(spec.speaker_pool, size=spec.num_speakers, replace=False)
        speakers = [f"spk{int(i):04d}" for i in ids]
    segments = _plan_turns(spec, speakers, rng)
    n_total = int(round(spec.total_duration * SAMPLE_RATE))
    tracks = {s: np.zeros(n_total) for s in speakers}
    for seg in segments:
        a = int(round(seg.onset * SAMPLE_RATE))
        b = min(n_total, int(round(seg.offset * SAMPLE_RATE)))
        gain = rng.uniform(0.6, 1.0)
        tracks[seg.speaker_id][a:b] += gain * synthesize_utterance(seg.speaker_id, (b - a) / SAMPLE_RATE, rng)[: b - a]
    mix = sum(tracks.values())
    return Scene(normalize_waveform(mix), segments, tracks)


def generate_scene(spec: SceneSpec) -> Tuple[Waveform, List[SpeechSegment]]:
    scene = render_scene(spec)
    return scene.waveform, scene.segments


# ----------------------------------------------------------------------------
# targets


def speaker_order(segments: Sequence[SpeechSegment]) -> List[str]:
    order: List[str] = []
    for seg in segments:
        if seg.speaker_id not in order:
            order.append(seg.speaker_id)
    return order


def build_masks(segments: Sequence[SpeechSegment], t_m: int, frame_stride: int = FRAME_STRIDE,
                sample_rate: int = SAMPLE_RATE) -> Tuple[np.ndarray, List[str]]:
    """Binary ``(M, t_m)`` activity: frame f is on iff the speaker is active anywhere in it.

    Rows follow first-appearance order of speaker ids.
    """
    order = speaker_order(segments)
    masks = np.zeros((len(order), t_m), dtype=np.float32)
    hop = frame_stride / sample_rate
    for seg in segments:
        row = order.index(seg.speaker_id)
        first = int(np.floor(seg.onset / hop + 1e-9))
        last = int(np.ceil(seg.offset / hop - 1e-9))  # exclusive
        masks[row, max(0, first):min(t_m, last)] = 1.0
    return masks, order


def activity_samples(segments: Sequence[SpeechSegment], speaker: str, n_samples: int,
                     sample_rate: int = SAMPLE_RATE) -> np.ndarray:
    active = np.zeros(n_samples, dtype=bool)
    for seg in segments:
        if seg.speaker_id == speaker:
            a = int(round(seg.onset * sample_rate))
            b = int(round(seg.offset * sample_rate))
            active[max(0, a):min(n_samples, b)] = True
    return active


def purified_audio(audio: Waveform, segments: Sequence[SpeechSegment], speaker: str) -> np.ndarray:
    """The recording with every sample where another speaker talks removed.

    Falls back to the speaker's own active region when nothing clean remains.
    """
    samples = np.asarray(audio.samples)
    n = len(samples)
    own = activity_samples(segments, speaker, n)
    others = np.zeros(n, dtype=bool)
    for other in speaker_order(segments):
        if other != speaker:
            others |= activity_samples(segments, other, n)
    if not np.any(own & ~others):
        logger.warning("speaker %s has no clean (non-overlapped) speech; using the full active region", speaker)
        return samples[own]
    return samples[~others]


def build_gt_embeddings(audio: Waveform, segments: Sequence[SpeechSegment], encoder,
                        order: Optional[Sequence[str]] = None) -> torch.Tensor:
    """One unit embedding per speaker (``order`` or first-appearance order) via the frozen encoder."""
    order = list(order) if order is not None else speaker_order(segments)
    embeddings = []
    with torch.no_grad():
        for spk in order:
            clean = purified_audio(audio, segments, spk)
            if len(clean) < 640:
                clean = np.pad(clean, (0, 640 - len(clean)))
            embeddings.append(encoder.encode_utterance(compute_logmel(clean)))
    if not embeddings:
        return torch.zeros(0, encoder.config.embed_dim)
    return torch.stack(embeddings)


def crop_segments(segments: Sequence[SpeechSegment], start: float, end: float) -> List[SpeechSegment]:
    """Segments intersected with ``[start, end)`` and shifted so that ``start`` becomes 0."""
    out = []
    for seg in segments:
        a, b = max(seg.onset, start), min(seg.offset, end)
        if b - a > 1e-9:
            out.append(SpeechSegment(seg.speaker_id, a - start, b - a))
    return out


# ----------------------------------------------------------------------------
# dataset directories


def write_dataset(out_dir, specs: Sequence[SceneSpec], prefix: str = "scene") -> Path:
    """Write ``<prefix>_<i>.wav`` / ``.rttm`` pairs and a ``manifest.tsv``."""
    from .der import RttmSegment, write_rttm
    from .features import write_wav

    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    lines = []
    for i, spec in enumerate(specs):
        name = f"{prefix}_{i:05d}"
        wav, segs = generate_scene(spec)
        write_wav(out / f"{name}.wav", wav)
        (out / f"{name}.rttm").write_text(
            write_rttm([RttmSegment(name, s.onset, s.duration, s.speaker_id) for s in segs])
        )
        lines.append(f"{name}.wav\t{name}.rttm\t{wav.duration:.3f}")
    (out / "manifest.tsv").write_text("".join(line + "\n" for line in lines))
    return out


def read_manifest(dataset_dir) -> List[Tuple[Path, Path, float]]:
    root = Path(dataset_dir)
    entries = []
    for line in (root / "manifest.tsv").read_text().splitlines():
        if not line.strip():
            continue
        wav, rttm, dur = line.split("\t")
        entries.append((root / wav, root / rttm, float(dur)))
    return entries
