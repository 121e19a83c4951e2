"""Mask heatmaps and speaker timeline strips (PNG output only)."""
from __future__ import annotations

from pathlib import Path
from typing import Optional, Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .supervision import FRAME_SECONDS, SpeechSegment  # noqa: E402

DPI = 100


def _width(t_m: int) -> float:
    return 2.0 + t_m / 50.0


def plot_heatmap(masks: np.ndarray, path, frame_seconds: float = FRAME_SECONDS,
                 title: str = "mask probabilities") -> Path:
    """``masks``: (slots, t_m) in [0, 1]."""
    masks = np.atleast_2d(np.asarray(masks, dtype=float))
    n, t_m = masks.shape
    if n == 0:
        masks, n = np.zeros((1, t_m)), 1
    fig, ax = plt.subplots(figsize=(_width(t_m), 1.0 + 0.3 * max(n, 1)), dpi=DPI)
    ax.imshow(masks, aspect="auto", origin="lower", cmap="magma", vmin=0.0, vmax=1.0,
              extent=(0, t_m * frame_seconds, -0.5, n - 0.5), interpolation="nearest")
    ax.set_xlabel("time (s)")
    ax.set_ylabel("slot")
    ax.set_title(title)
    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)
    return Path(path)


def timeline_rows(hyp: Sequence[SpeechSegment], ref: Optional[Sequence[SpeechSegment]] = None):
    """``(label, segments, color)`` per strip, reference strips first."""
    rows = []
    if ref is not None:
        for spk in sorted({s.speaker_id for s in ref}):
            rows.append((f"ref {spk}", [s for s in ref if s.speaker_id == spk], "tab:green"))
    for spk in sorted({s.speaker_id for s in hyp}):
        rows.append((f"hyp {spk}" if ref is not None else spk,
                     [s for s in hyp if s.speaker_id == spk], "tab:blue"))
    return rows


def plot_timeline(hyp: Sequence[SpeechSegment], path, duration: float,
                  ref: Optional[Sequence[SpeechSegment]] = None) -> Path:
    """One strip per speaker; with ``ref`` every reference speaker gets a strip above the hypothesis."""
    rows = timeline_rows(hyp, ref)
    t_m = int(np.ceil(duration / FRAME_SECONDS))
    fig, ax = plt.subplots(figsize=(_width(t_m), 1.0 + 0.35 * max(len(rows), 1)), dpi=DPI)
    for i, (_, segs, color) in enumerate(rows):
        ax.broken_barh([(s.onset, s.duration) for s in segs], (i - 0.4, 0.8), color=color)
    ax.set_yticks(range(len(rows)))
    ax.set_yticklabels([r[0] for r in rows])
    ax.set_ylim(-0.5, max(len(rows), 1) - 0.5)
    ax.set_xlim(0, duration)
    ax.set_xlabel("time (s)")
    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)
    return Path(path)
