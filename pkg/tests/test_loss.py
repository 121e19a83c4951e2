import math

import numpy as np
import pytest
import torch

from diformer.errors import InvalidInput
from diformer.heads import PredictionSet
from diformer.loss import BETA, GroundTruthSet, SetCriterion, build_cost_matrix, compute_loss, match
from oracles import brute_force_assignment, random_groundtruth, random_prediction


def _scalar_loss(pred, gt, sigma, alpha=1.0, beta=0.1):
    """Eq. 1 evaluated entry by entry with plain Python floats."""
    vad = pred.vad_logits.tolist()
    masks = pred.mask_logits.tolist()
    emb = pred.embeddings.tolist()
    total = 0.0
    for j, label in enumerate(gt.vad.tolist()):
        i = int(sigma[j])
        z = vad[i]
        log_norm = math.log(math.exp(z[0]) + math.exp(z[1]))
        total += log_norm - z[label]
        if label == 1:
            bce = 0.0
            for x, y in zip(masks[i], gt.masks[j].tolist()):
                p = 1 / (1 + math.exp(-x))
                bce -= y * math.log(p) + (1 - y) * math.log(1 - p)
            total += alpha * bce / len(masks[i])
            total -= beta * sum(a * b for a, b in zip(emb[i], gt.embeddings[j].tolist()))
    return total


def test_matches_scalar_reimplementation():
    g = torch.Generator().manual_seed(0)
    for m in range(4):
        pred = random_prediction(3, 4, 5, g, dtype=torch.float64)
        gt = random_groundtruth(m, 3, 4, 5, g).to(torch.float64)
        sigma = match(pred, gt)
        assert compute_loss(pred, gt, sigma).total.item() == pytest.approx(_scalar_loss(pred, gt, sigma), abs=1e-10)


def test_exact_prediction_embedding_term_is_minus_beta():
    e = torch.nn.functional.normalize(torch.randn(1, 6), dim=-1)
    gt = GroundTruthSet.from_speakers(np.array([[1.0, 0.0, 1.0]]), e, 2)
    pred = PredictionSet(torch.tensor([[-50.0, 50.0], [50.0, -50.0]]),
                         torch.tensor([[50.0, -50.0, 50.0], [0.0, 0.0, 0.0]]),
                         torch.cat([e, torch.zeros(1, 6)]))
    parts = compute_loss(pred, gt, match(pred, gt))
    assert parts.embedding.item() == pytest.approx(-BETA, abs=1e-6)
    assert parts.vad.item() == pytest.approx(0.0, abs=1e-6)
    assert parts.mask.item() == pytest.approx(0.0, abs=1e-6)


def test_padding_rows_ignore_masks_and_embeddings():
    g = torch.Generator().manual_seed(1)
    pred = random_prediction(4, 6, 3, g)
    gt = random_groundtruth(0, 4, 6, 3, g)
    sigma = np.arange(4)
    before = compute_loss(pred, gt, sigma)
    pred2 = PredictionSet(pred.vad_logits, torch.randn(4, 6), pred.embeddings.flip(0))
    after = compute_loss(pred2, gt, sigma)
    assert before.total.item() == after.total.item()
    assert before.mask.item() == 0 and before.embedding.item() == 0


def test_perfect_single_speaker_picks_its_slot():
    e = torch.nn.functional.normalize(torch.randn(1, 4), dim=-1)
    gt = GroundTruthSet.from_speakers(np.array([[1.0, 1.0, 0.0, 0.0]]), e, 4)
    vad = torch.tensor([[3.0, -3.0]] * 4)
    vad[2] = torch.tensor([-3.0, 3.0])
    masks = torch.full((4, 4), -5.0)
    masks[2] = torch.tensor([5.0, 5.0, -5.0, -5.0])
    emb = torch.nn.functional.normalize(torch.randn(4, 4), dim=-1)
    emb[2] = e[0]
    cost = build_cost_matrix(PredictionSet(vad, masks, emb), gt)
    assert int(np.argmin(cost[:, 0])) == 2


def test_all_padding_cost_is_vad_only():
    g = torch.Generator().manual_seed(2)
    pred = random_prediction(5, 7, 3, g)
    gt = random_groundtruth(0, 5, 7, 3, g)
    cost = build_cost_matrix(pred, gt)
    expected = -torch.softmax(pred.vad_logits, -1)[:, 0].double().numpy()
    assert np.allclose(cost, expected[:, None].repeat(5, 1))


def test_matching_is_optimal_under_brute_force():
    g = torch.Generator().manual_seed(3)
    for _ in range(30):
        pred = random_prediction(4, 10, 6, g)
        gt = random_groundtruth(int(torch.randint(0, 5, (1,), generator=g)), 4, 10, 6, g)
        cost = build_cost_matrix(pred, gt)
        sigma = match(pred, gt)  # sigma[j] = prediction for gt j
        best, _ = brute_force_assignment(cost.T)
        assert sum(cost[sigma[j], j] for j in range(4)) == pytest.approx(best, abs=1e-9)


def test_too_many_speakers_rejected():
    with pytest.raises(InvalidInput):
        GroundTruthSet.from_speakers(np.ones((3, 5)), torch.randn(3, 2), 2)


def test_embedding_term_lower_bound():
    g = torch.Generator().manual_seed(4)
    for _ in range(20):
        pred = random_prediction(6, 8, 5, g)
        gt = random_groundtruth(4, 6, 8, 5, g)
        parts = compute_loss(pred, gt, match(pred, gt))
        assert parts.embedding.item() >= -BETA * gt.num_speakers - 1e-6


def test_dice_term_adds_nonnegative_cost():
    g = torch.Generator().manual_seed(5)
    pred = random_prediction(4, 8, 3, g)
    gt = random_groundtruth(2, 4, 8, 3, g)
    sigma = match(pred, gt)
    assert compute_loss(pred, gt, sigma, dice=True).mask.item() >= compute_loss(pred, gt, sigma).mask.item()


def test_criterion_averages_over_batch():
    g = torch.Generator().manual_seed(6)
    a = random_prediction(4, 8, 3, g)
    b = random_prediction(4, 8, 3, g)
    gts = [random_groundtruth(1, 4, 8, 3, g), random_groundtruth(3, 4, 8, 3, g)]
    batch = PredictionSet(torch.stack([a.vad_logits, b.vad_logits]), torch.stack([a.mask_logits, b.mask_logits]),
                          torch.stack([a.embeddings, b.embeddings]))
    total = SetCriterion()(batch, gts).total.item()
    expected = (compute_loss(a, gts[0], match(a, gts[0])).total + compute_loss(b, gts[1], match(b, gts[1])).total) / 2
    assert total == pytest.approx(expected.item(), abs=1e-6)
