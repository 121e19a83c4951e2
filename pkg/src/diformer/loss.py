"""Set-matching multitask loss over (vocal activity, mask, speaker vector) triples.

For groundtruth slot j matched to prediction sigma(j)::

    L = sum_j  -log p_sigma(j)(v_j)
             + alpha * [v_j = 1] * L_mask(m_sigma(j), m_j)
             - beta  * [v_j = 1] * <e_sigma(j), e_j>

with L_mask the per-frame binary cross-entropy averaged over time (plus an
optional dice term). The matching cost uses the same three terms but with the
plain probability ``-p_i(v_j)`` for the activity term.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence

import numpy as np
import torch
import torch.nn.functional as F

from .errors import InvalidInput
from .heads import PredictionSet
from .matching import hungarian

logger = logging.getLogger(__name__)

ALPHA = 1.0
BETA = 0.1


@dataclass
class GroundTruthSet:
    """Targets padded to N slots: ``vad`` (N,) in {0, 1}, ``masks`` (N, t_m), ``embeddings`` (N, D).

    Padded rows have ``vad == 0``; their masks and embeddings are ignored.
    """

    vad: torch.Tensor
    masks: torch.Tensor
    embeddings: torch.Tensor

    @classmethod
    def from_speakers(cls, masks, embeddings, num_slots: int) -> "GroundTruthSet":
        masks = torch.as_tensor(np.asarray(masks), dtype=torch.float32)
        embeddings = torch.as_tensor(embeddings, dtype=torch.float32)
        m, t_m = masks.shape
        if m > num_slots:
            raise InvalidInput(f"{m} speakers exceed the {num_slots} prediction slots")
        if embeddings.shape[0] != m:
            raise InvalidInput("one embedding per speaker mask is required")
        d = embeddings.shape[1] if embeddings.dim() == 2 else 0
        vad = torch.zeros(num_slots, dtype=torch.long)
        vad[:m] = 1
        padded_masks = torch.zeros(num_slots, t_m)
        padded_masks[:m] = masks
        padded_emb = torch.zeros(num_slots, d)
        if m:
            padded_emb[:m] = embeddings
        return cls(vad, padded_masks, padded_emb)

    @property
    def num_speakers(self) -> int:
        return int(self.vad.sum())

    def to(self, dtype) -> "GroundTruthSet":
        return GroundTruthSet(self.vad, self.masks.to(dtype), self.embeddings.to(dtype))


def _pairwise_bce(mask_logits: torch.Tensor, targets: torch.Tensor) -> torch.Tensor:
    """Mean BCE-with-logits between every prediction row i and target row j -> (N, M)."""
    t_m = mask_logits.shape[-1]
    return (F.softplus(mask_logits).sum(-1)[:, None] - mask_logits @ targets.T) / t_m


def _pairwise_dice(mask_logits: torch.Tensor, targets: torch.Tensor) -> torch.Tensor:
    probs = torch.sigmoid(mask_logits)
    num = 2 * probs @ targets.T + 1.0
    den = probs.sum(-1)[:, None] + targets.sum(-1)[None, :] + 1.0
    return 1.0 - num / den


def build_cost_matrix(pred: PredictionSet, gt: GroundTruthSet, alpha: float = ALPHA,
                      beta: float = BETA, dice: bool = False) -> np.ndarray:
    """Cost ``C[i, j]`` of assigning prediction slot i to groundtruth slot j, for one sample."""
    with torch.no_grad():
        probs = torch.softmax(pred.vad_logits, dim=-1)  # (N, 2)
        cost = -probs[:, gt.vad]  # (N, N)
        mask_cost = _pairwise_bce(pred.mask_logits, gt.masks.to(pred.mask_logits.dtype))
        if dice:
            mask_cost = mask_cost + _pairwise_dice(pred.mask_logits, gt.masks.to(pred.mask_logits.dtype))
        sim = pred.embeddings @ gt.embeddings.to(pred.embeddings.dtype).T
        real = (gt.vad == 1).to(cost.dtype)[None, :]
        cost = cost + real * (alpha * mask_cost - beta * sim)
    return cost.double().numpy()


def match(pred: PredictionSet, gt: GroundTruthSet, **cost_kwargs) -> np.ndarray:
    """Return ``sigma`` with ``sigma[j]`` the prediction slot assigned to groundtruth slot j."""
    cost = build_cost_matrix(pred, gt, **cost_kwargs)
    return hungarian(cost.T)


@dataclass
class LossBreakdown:
    total: torch.Tensor
    vad: torch.Tensor
    mask: torch.Tensor
    embedding: torch.Tensor

    def as_floats(self) -> Dict[str, float]:
        return {k: float(getattr(self, k).detach()) for k in ("total", "vad", "mask", "embedding")}


def compute_loss(pred: PredictionSet, gt: GroundTruthSet, sigma, alpha: float = ALPHA,
                 beta: float = BETA, dice: bool = False) -> LossBreakdown:
    """Loss for one sample under a fixed assignment ``sigma`` (groundtruth j -> prediction sigma[j]).

    The three returned components are already weighted, so ``total`` is their sum.
    """
    sigma = torch.as_tensor(np.asarray(sigma), dtype=torch.long)
    logits = pred.vad_logits[sigma]
    vad_term = F.cross_entropy(logits, gt.vad, reduction="sum")
    real = gt.vad == 1
    zero = pred.mask_logits.sum() * 0.0
    if real.any():
        idx = sigma[real]
        m_logits = pred.mask_logits[idx]
        m_gt = gt.masks[real].to(m_logits.dtype)
        per_slot = F.binary_cross_entropy_with_logits(m_logits, m_gt, reduction="none").mean(-1)
        if dice:
            probs = torch.sigmoid(m_logits)
            per_slot = per_slot + 1.0 - (2 * (probs * m_gt).sum(-1) + 1.0) / (probs.sum(-1) + m_gt.sum(-1) + 1.0)
        mask_term = alpha * per_slot.sum()
        cos = (pred.embeddings[idx] * gt.embeddings[real].to(pred.embeddings.dtype)).sum(-1)
        embed_term = -beta * cos.sum()
    else:
        mask_term = zero
        embed_term = zero
    return LossBreakdown(vad_term + mask_term + embed_term, vad_term, mask_term, embed_term)


class SetCriterion:
    """Batch wrapper: match each sample, then average the per-sample losses."""

    def __init__(self, alpha: float = ALPHA, beta: float = BETA, dice: bool = False):
        self.alpha = alpha
        self.beta = beta
        self.dice = dice

    def match(self, pred: PredictionSet, gts: Sequence[GroundTruthSet]) -> List[np.ndarray]:
        return [match(pred[b].detach(), gt, alpha=self.alpha, beta=self.beta, dice=self.dice)
                for b, gt in enumerate(gts)]

    def __call__(self, pred: PredictionSet, gts: Sequence[GroundTruthSet],
                 sigmas: Optional[Sequence[np.ndarray]] = None) -> LossBreakdown:
        if sigmas is None:
            sigmas = self.match(pred, gts)
        parts = [compute_loss(pred[b], gt, sigma, self.alpha, self.beta, self.dice)
                 for b, (gt, sigma) in enumerate(zip(gts, sigmas))]
        n = len(parts)
        return LossBreakdown(*(sum(getattr(p, k) for p in parts) / n
                               for k in ("total", "vad", "mask", "embedding")))
