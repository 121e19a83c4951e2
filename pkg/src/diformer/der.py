"""RTTM I/O and diarization error rate.

Scoring splits the timeline at every reference/hypothesis/collar boundary into
homogeneous intervals. Boundaries are kept as exact rationals (the binary value
of each float), so interval sums carry no accumulation error.
"""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass
from fractions import Fraction
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np

from .errors import ParseError
from .matching import hungarian


@dataclass(frozen=True)
class RttmSegment:
    file_id: str
    onset: float
    duration: float
    speaker: str

    def __post_init__(self):
        if not self.duration > 0:
            raise ValueError(f"RTTM segment duration must be positive, got {self.duration}")

    @property
    def offset(self) -> float:
        return self.onset + self.duration


def parse_rttm(text: str) -> List[RttmSegment]:
    """Parse ``SPEAKER <file> <chan> <onset> <dur> <NA> <NA> <spk> <NA> <NA>`` lines.

    Other record types and blank lines are skipped.
    """
    segments = []
    for lineno, line in enumerate(text.splitlines(), 1):
        fields = line.split()
        if not fields or fields[0] != "SPEAKER":
            continue
        if len(fields) < 8:
            raise ParseError(f"expected at least 8 fields, got {len(fields)}", lineno)
        try:
            onset, duration = float(fields[3]), float(fields[4])
        except ValueError:
            raise ParseError(f"non-numeric onset/duration {fields[3]!r} {fields[4]!r}", lineno) from None
        if not (math.isfinite(onset) and math.isfinite(duration)) or onset < 0 or duration <= 0:
            raise ParseError(f"invalid onset {onset} / duration {duration}", lineno)
        segments.append(RttmSegment(fields[1], onset, duration, fields[7]))
    return segments


def write_rttm(segments: Iterable[RttmSegment]) -> str:
    return "".join(
        f"SPEAKER {s.file_id} 1 {s.onset:.3f} {s.duration:.3f} <NA> <NA> {s.speaker} <NA> <NA>\n"
        for s in segments
    )


@dataclass
class DerReport:
    missed: float
    false_alarm: float
    confusion: float
    scored_speech: float
    der: float
    file_id: Optional[str] = None
    status: str = "ok"

    @property
    def ok(self) -> bool:
        return self.status == "ok"

    def to_json(self) -> str:
        d = asdict(self)
        if not math.isfinite(d["der"]):
            d["der"] = None
        return json.dumps(d, sort_keys=True)


def _report(missed, fa, conf, scored, file_id=None) -> DerReport:
    if scored <= 0:
        return DerReport(missed, fa, conf, 0.0, float("nan"), file_id,
                         status="error: no scored reference speech")
    return DerReport(missed, fa, conf, scored, 100.0 * (missed + fa + conf) / scored, file_id)


def optimal_mapping(ref_speakers: Sequence[str], hyp_speakers: Sequence[str], overlap) -> Dict[str, str]:
    """One-to-one ref -> hyp mapping maximizing total overlap; zero-overlap pairs are left unmapped."""
    overlap = np.asarray(overlap, dtype=np.float64).reshape(len(ref_speakers), len(hyp_speakers))
    if overlap.size == 0:
        return {}
    row_to_col = hungarian(-overlap)
    return {
        ref_speakers[r]: hyp_speakers[c]
        for r, c in enumerate(row_to_col)
        if c >= 0 and overlap[r, c] > 0
    }


def _as_pairs(segments) -> List[Tuple[str, Fraction, Fraction]]:
    out = []
    for s in segments:
        spk = getattr(s, "speaker", None) or getattr(s, "speaker_id")
        onset = Fraction(s.onset)
        out.append((spk, onset, onset + Fraction(s.duration)))
    return out


def compute_der(ref, hyp, collar: float = 0.0, ignore_overlap: bool = False) -> DerReport:
    """DER of ``hyp`` against ``ref`` for one recording.

    ``collar`` seconds on each side of every reference boundary are not scored;
    with ``ignore_overlap`` the regions where the reference has more than one
    active speaker are not scored either. Speakers are mapped one-to-one to
    maximize scored overlap.
    """
    ref_p, hyp_p = _as_pairs(ref), _as_pairs(hyp)
    file_ids = {getattr(s, "file_id", None) for s in list(ref) + list(hyp)}
    file_id = next(iter(file_ids)) if len(file_ids) == 1 else None

    c = Fraction(collar)
    no_score = []
    if c > 0:
        for _, a, b in ref_p:
            no_score += [(a - c, a + c), (b - c, b + c)]
    points = {p for _, a, b in ref_p + hyp_p for p in (a, b)}
    points |= {p for a, b in no_score for p in (a, b)}
    points = sorted(points)

    ref_spk = sorted({s for s, _, _ in ref_p})
    hyp_spk = sorted({s for s, _, _ in hyp_p})
    ref_idx = {s: i for i, s in enumerate(ref_spk)}
    hyp_idx = {s: i for i, s in enumerate(hyp_spk)}

    intervals = []  # (duration, ref active set, hyp active set)
    for a, b in zip(points[:-1], points[1:]):
        mid = (a + b) / 2
        if any(lo < mid < hi for lo, hi in no_score):
            continue
        r = frozenset(ref_idx[s] for s, lo, hi in ref_p if lo <= mid < hi)
        h = frozenset(hyp_idx[s] for s, lo, hi in hyp_p if lo <= mid < hi)
        if not r and not h:
            continue
        if ignore_overlap and len(r) > 1:
            continue
        intervals.append((b - a, r, h))

    overlap = np.zeros((len(ref_spk), len(hyp_spk)))
    for dur, r, h in intervals:
        for i in r:
            for j in h:
                overlap[i, j] += float(dur)
    mapping = optimal_mapping(ref_spk, hyp_spk, overlap)
    mapped = {ref_idx[k]: hyp_idx[v] for k, v in mapping.items()}

    missed = fa = conf = scored = Fraction(0)
    for dur, r, h in intervals:
        n_ref, n_hyp = len(r), len(h)
        correct = sum(1 for i in r if mapped.get(i) in h)
        scored += dur * n_ref
        missed += dur * max(0, n_ref - n_hyp)
        fa += dur * max(0, n_hyp - n_ref)
        conf += dur * (min(n_ref, n_hyp) - correct)
    return _report(float(missed), float(fa), float(conf), float(scored), file_id)


def aggregate(reports: Sequence[DerReport]) -> DerReport:
    """Pool errors and scored speech over files (files with error status are skipped)."""
    good = [r for r in reports if r.ok]
    return _report(
        sum(r.missed for r in good), sum(r.false_alarm for r in good),
        sum(r.confusion for r in good), sum(r.scored_speech for r in good), "*ALL*",
    )


def format_table(reports: Sequence[DerReport]) -> str:
    header = f"{'file':<24}{'scored(s)':>11}{'miss(s)':>10}{'fa(s)':>10}{'conf(s)':>10}{'DER(%)':>9}"
    lines = [header, "-" * len(header)]
    for r in reports:
        der = f"{r.der:9.2f}" if math.isfinite(r.der) else f"{'n/a':>9}"
        lines.append(f"{str(r.file_id):<24}{r.scored_speech:11.3f}{r.missed:10.3f}"
                     f"{r.false_alarm:10.3f}{r.confusion:10.3f}{der}")
        if not r.ok:
            lines.append(f"  ({r.status})")
    return "\n".join(lines)


def group_by_file(segments: Iterable[RttmSegment]) -> Dict[str, List[RttmSegment]]:
    out: Dict[str, List[RttmSegment]] = {}
    for s in segments:
        out.setdefault(s.file_id, []).append(s)
    return out
