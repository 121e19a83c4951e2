"""Waveform normalization, WAV I/O and log-mel spectrogram extraction."""
from __future__ import annotations

import wave
from dataclasses import dataclass
from functools import lru_cache
from pathlib import Path
from typing import Union

import numpy as np
import torch

from .errors import InvalidAudio

SAMPLE_RATE = 16000
N_FFT = 512
WIN_LENGTH = 400  # 25 ms
HOP_LENGTH = 160  # 10 ms
N_MELS = 80
AMIN = 1e-5
TOP_DB = 75.0


@dataclass
class Waveform:
    samples: np.ndarray
    sample_rate: int = SAMPLE_RATE

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=np.float32)
        if self.sample_rate != SAMPLE_RATE:
            raise InvalidAudio(
                f"expected {SAMPLE_RATE} Hz audio, got {self.sample_rate} Hz; "
                f"resample the file to {SAMPLE_RATE} Hz first"
            )

    def __len__(self):
        return len(self.samples)

    @property
    def duration(self) -> float:
        return len(self.samples) / self.sample_rate


def normalize_waveform(raw, sample_rate: int = SAMPLE_RATE) -> Waveform:
    """Scale ``raw`` by its absolute peak so that every sample lies in [-1, 1].

    An all-zero signal is returned unscaled.
    """
    x = np.asarray(raw, dtype=np.float64).reshape(-1)
    if x.size == 0:
        raise InvalidAudio("empty waveform")
    if not np.all(np.isfinite(x)):
        raise InvalidAudio("waveform contains NaN or Inf")
    peak = np.max(np.abs(x))
    if peak > 0:
        x = x / peak
    return Waveform(x.astype(np.float32), sample_rate)


def hz_to_mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f, dtype=np.float64) / 700.0)


def mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m, dtype=np.float64) / 2595.0) - 1.0)


@lru_cache(maxsize=None)
def _mel_filterbank(n_fft: int = N_FFT, n_mels: int = N_MELS, sample_rate: int = SAMPLE_RATE) -> torch.Tensor:
    # HTK mel scale, unnormalized triangles spanning 0 Hz .. Nyquist.
    fft_freqs = np.linspace(0.0, sample_rate / 2, n_fft // 2 + 1)
    mel_points = np.linspace(hz_to_mel(0.0), hz_to_mel(sample_rate / 2), n_mels + 2)
    hz_points = mel_to_hz(mel_points)
    lower, center, upper = hz_points[:-2, None], hz_points[1:-1, None], hz_points[2:, None]
    up = (fft_freqs[None, :] - lower) / (center - lower)
    down = (upper - fft_freqs[None, :]) / (upper - center)
    fb = np.maximum(0.0, np.minimum(up, down))
    return torch.from_numpy(fb.astype(np.float32))  # (n_mels, n_fft // 2 + 1)


def mel_filterbank() -> torch.Tensor:
    return _mel_filterbank().clone()


def compute_logmel(w: Union[Waveform, np.ndarray, torch.Tensor]) -> torch.Tensor:
    """Log-mel spectrogram in dB with shape ``(len(samples) / 160, 80)``.

    The signal is zero-padded to a multiple of the hop, framed with reflection
    centering, and the trailing extra frame is dropped so the frame count is exact.
    Power is floored at ``AMIN`` and the dynamic range clamped to ``TOP_DB``.
    """
    samples = w.samples if isinstance(w, Waveform) else w
    x = torch.as_tensor(np.asarray(samples, dtype=np.float32)).reshape(-1)
    if x.numel() < WIN_LENGTH:
        raise InvalidAudio(f"need at least {WIN_LENGTH} samples, got {x.numel()}")
    remainder = x.numel() % HOP_LENGTH
    if remainder:
        x = torch.nn.functional.pad(x, (0, HOP_LENGTH - remainder))
    n_frames = x.numel() // HOP_LENGTH

    spec = torch.stft(
        x,
        n_fft=N_FFT,
        hop_length=HOP_LENGTH,
        win_length=WIN_LENGTH,
        window=torch.hann_window(WIN_LENGTH),
        center=True,
        pad_mode="reflect",
        return_complex=True,
    )
    power = spec.real.square() + spec.imag.square()
    mel = _mel_filterbank() @ power[:, :n_frames]
    db = 10.0 * torch.log10(torch.clamp(mel, min=AMIN))
    db = torch.maximum(db, db.max() - TOP_DB)
    return db.T.contiguous()


def read_wav(path: Union[str, Path]) -> Waveform:
    """Read a mono 16 kHz PCM WAV (16-bit, 32-bit int or 32-bit float)."""
    path = Path(path)
    with open(path, "rb") as f:
        header = f.read(12)
    if header[:4] != b"RIFF" or header[8:12] != b"WAVE":
        raise InvalidAudio(f"{path}: not a RIFF/WAVE file")
    from scipy.io import wavfile  # handles IEEE float WAVs that the stdlib module rejects

    rate, data = wavfile.read(path)
    if data.ndim != 1:
        raise InvalidAudio(f"{path}: expected mono audio, got {data.shape[1]} channels")
    if rate != SAMPLE_RATE:
        raise InvalidAudio(f"{path}: sample rate {rate} Hz, expected {SAMPLE_RATE} Hz; resample before use")
    if data.dtype == np.int16:
        data = data.astype(np.float32) / 32768.0
    elif data.dtype == np.int32:
        data = data.astype(np.float32) / 2147483648.0
    else:
        data = data.astype(np.float32)
    return Waveform(data, rate)


def write_wav(path: Union[str, Path], w: Waveform) -> None:
    """Write 16-bit PCM; the waveform is expected to lie in [-1, 1]."""
    pcm = np.clip(np.round(np.asarray(w.samples) * 32767.0), -32768, 32767).astype("<i2")
    with wave.open(str(path), "wb") as f:
        f.setnchannels(1)
        f.setsampwidth(2)
        f.setframerate(w.sample_rate)
        f.writeframes(pcm.tobytes())
