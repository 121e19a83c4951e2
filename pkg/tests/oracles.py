"""Independent reference implementations used only by the tests."""
import itertools
import math

import numpy as np
import torch

from diformer.features import SAMPLE_RATE
from diformer.heads import PredictionSet
from diformer.loss import GroundTruthSet
from diformer.supervision import FRAME_SECONDS, build_masks, crop_segments


def brute_force_assignment(cost):
    """Minimum total cost over all permutations, and the lexicographically first minimizer."""
    cost = np.asarray(cost)
    n = cost.shape[0]
    best, best_perm = math.inf, None
    for perm in itertools.permutations(range(n)):
        total = sum(cost[i, perm[i]] for i in range(n))
        if total < best:
            best, best_perm = total, perm
    return best, np.array(best_perm)


def brute_force_mapping_value(overlap):
    """Maximum total overlap over partial one-to-one mappings (rows ref, columns hyp)."""
    overlap = np.asarray(overlap, dtype=float)
    r, h = overlap.shape
    best = 0.0
    for k in range(min(r, h) + 1):
        for rows in itertools.combinations(range(r), k):
            for cols in itertools.permutations(range(h), k):
                best = max(best, sum(overlap[a, b] for a, b in zip(rows, cols)))
    return best


def frame_der(ref, hyp, collar=0.0, ignore_overlap=False, step=0.001):
    """DER by sampling the midpoint of every ``step`` seconds with brute-force speaker mapping.

    ``ref``/``hyp`` are lists of ``(speaker, onset, offset)``. Returns
    ``(missed, false_alarm, confusion, scored)`` in seconds.
    """
    end = max([b for _, _, b in ref + hyp] + [0.0]) + collar + step
    t = (np.arange(int(math.ceil(end / step))) + 0.5) * step
    ref_spk = sorted({s for s, _, _ in ref})
    hyp_spk = sorted({s for s, _, _ in hyp})
    R = np.zeros((len(ref_spk), len(t)), dtype=bool)
    H = np.zeros((len(hyp_spk), len(t)), dtype=bool)
    for s, a, b in ref:
        R[ref_spk.index(s)] |= (t >= a) & (t < b)
    for s, a, b in hyp:
        H[hyp_spk.index(s)] |= (t >= a) & (t < b)
    scored = np.ones(len(t), dtype=bool)
    if collar > 0:
        for _, a, b in ref:
            for edge in (a, b):
                scored &= ~((t > edge - collar) & (t < edge + collar))
    if ignore_overlap:
        scored &= R.sum(0) <= 1
    R, H = R[:, scored], H[:, scored]
    overlap = (R[:, None, :] & H[None, :, :]).sum(-1) * step
    correct = brute_force_mapping_value(overlap) if len(ref_spk) and len(hyp_spk) else 0.0
    nr, nh = R.sum(0), H.sum(0)
    missed = np.maximum(nr - nh, 0).sum() * step
    fa = np.maximum(nh - nr, 0).sum() * step
    conf = np.minimum(nr, nh).sum() * step - correct
    return missed, fa, conf, nr.sum() * step


def central_difference(fn, tensor, index, h=1e-6):
    """d fn() / d tensor[index] by central differences (``tensor`` is modified in place and restored)."""
    with torch.no_grad():
        orig = tensor[index].item()
        tensor[index] = orig + h
        plus = float(fn())
        tensor[index] = orig - h
        minus = float(fn())
        tensor[index] = orig
    return (plus - minus) / (2 * h)


def relative_errors(analytic, numeric, floor=1e-6):
    """Elementwise relative error over entries where either gradient exceeds ``floor``."""
    analytic = np.asarray(analytic, dtype=float)
    numeric = np.asarray(numeric, dtype=float)
    big = np.maximum(np.abs(analytic), np.abs(numeric))
    sel = big > floor
    return np.abs(analytic - numeric)[sel] / big[sel]


def random_prediction(n, t_m, d, generator, dtype=torch.float32):
    vad = torch.randn(n, 2, generator=generator, dtype=dtype)
    masks = 2 * torch.randn(n, t_m, generator=generator, dtype=dtype)
    emb = torch.nn.functional.normalize(torch.randn(n, d, generator=generator, dtype=dtype), dim=-1)
    return PredictionSet(vad, masks, emb)


def random_groundtruth(m, n, t_m, d, generator):
    masks = (torch.rand(m, t_m, generator=generator) > 0.5).float()
    emb = torch.nn.functional.normalize(torch.randn(m, d, generator=generator), dim=-1)
    return GroundTruthSet.from_speakers(masks.numpy(), emb, n)


class OracleEmbeddingStub(torch.nn.Module):
    """Stands in for a trained model: emits groundtruth masks and noisy speaker prototypes.

    Windows are served in call order, so it must be driven by one
    ``run_windows`` pass over the recording it was built for.
    """

    def __init__(self, segments, window, num_slots=8, dim=64, noise=0.3, seed=0):
        super().__init__()
        self.segments = list(segments)
        self.window = window
        self.num_slots = num_slots
        self.noise = noise
        self.rng = np.random.default_rng(seed)
        speakers = sorted({s.speaker_id for s in self.segments})
        protos = self.rng.standard_normal((len(speakers), dim))
        self.prototypes = {s: p / np.linalg.norm(p) for s, p in zip(speakers, protos)}
        self.calls = 0

    def forward(self, spec):
        t_m = spec.shape[-2] // 4
        start = self.calls * self.window
        self.calls += 1
        segs = crop_segments(self.segments, start, start + t_m * FRAME_SECONDS)
        masks, order = build_masks(segs, t_m)
        n = self.num_slots
        # scatter speakers over slots in a shuffled order, the way a model would
        slots = self.rng.permutation(n)[:len(order)]
        mask_logits = torch.full((n, t_m), -20.0)
        vad_logits = torch.tensor([[5.0, -5.0]]).repeat(n, 1)
        emb = self.rng.standard_normal((n, next(iter(self.prototypes.values())).shape[0]))
        for slot, spk, row in zip(slots, order, masks):
            mask_logits[slot] = torch.as_tensor(np.where(row > 0, 20.0, -20.0))
            vad_logits[slot] = torch.tensor([-5.0, 5.0])
            e = self.prototypes[spk] + self.noise * self.rng.standard_normal(len(self.prototypes[spk])) / np.sqrt(len(self.prototypes[spk]))
            emb[slot] = e
        emb = torch.nn.functional.normalize(torch.as_tensor(emb, dtype=torch.float32), dim=-1)
        return PredictionSet(vad_logits, mask_logits, emb)


def recording_samples(seconds):
    return int(round(seconds * SAMPLE_RATE))
