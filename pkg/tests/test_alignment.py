import math
import random

import torch

from priorrg.modeling.alignment import (Temperature, alignment_loss, global_pool, match_matrix, report_global,
                                        similarity_logits)
from priorrg.numerics.ops import l2_normalize


# - pooling -
def test_global_pool_of_ones():
    pooled = global_pool(torch.ones(1, 3, 4), torch.ones(1, 3, 4))
    assert torch.allclose(pooled, torch.full((1, 4), 0.5))


def test_global_pool_cancellation_stays_finite():
    t = torch.randn(2, 3, 4)
    pooled = global_pool(t, -t)
    assert torch.isfinite(pooled).all()
    assert torch.allclose(pooled, torch.zeros(2, 4), atol=1e-6)


def test_global_pool_matches_formula():
    t, v = torch.randn(2, 3, 4), torch.randn(2, 3, 4)
    mean = torch.cat([t, v], dim=1).double().mean(dim=1)
    expected = mean / mean.norm(dim=-1, keepdim=True)
    assert torch.allclose(global_pool(t, v).double(), expected, atol=1e-6)


def test_report_global_ignores_padding():
    tokens = torch.randn(1, 5, 4)
    mask = torch.tensor([[True, True, True, False, False]])
    expected = tokens[:, :3].mean(dim=1)
    expected = expected / expected.norm(dim=-1, keepdim=True)
    assert torch.allclose(report_global(tokens, mask), expected, atol=1e-6)


# - similarity -
def test_single_candidate_is_certain():
    p_i2r, p_r2i = similarity_logits(torch.randn(1, 4), torch.randn(1, 4), 14.0)
    assert torch.equal(p_i2r, torch.ones(1, 1))
    assert torch.equal(p_r2i, torch.ones(1, 1))


def test_orthonormal_pairs_approach_identity():
    eye = torch.eye(3)
    p_i2r, p_r2i = similarity_logits(eye, eye, 100.0)
    assert torch.allclose(p_i2r, eye, atol=1e-6)
    assert torch.allclose(p_r2i, eye, atol=1e-6)


def test_similarity_matches_hand_softmax():
    v = torch.nn.functional.normalize(torch.randn(3, 4), dim=-1)
    t = torch.nn.functional.normalize(torch.randn(3, 4), dim=-1)
    p_i2r, p_r2i = similarity_logits(v, t, 1 / 0.5)
    for i in range(3):
        logits = [2.0 * float(v[i] @ t[j]) for j in range(3)]
        z = sum(math.exp(x) for x in logits)
        for j in range(3):
            assert abs(p_i2r[i, j].item() - math.exp(logits[j]) / z) < 1e-6
        logits = [2.0 * float(t[i] @ v[j]) for j in range(3)]
        z = sum(math.exp(x) for x in logits)
        for j in range(3):
            assert abs(p_r2i[i, j].item() - math.exp(logits[j]) / z) < 1e-6



def test_logits_ignore_feature_scale():
    v, t = torch.randn(4, 8, dtype=torch.float64), torch.randn(4, 8, dtype=torch.float64)
    base = similarity_logits(l2_normalize(v), l2_normalize(t), 14.0)
    for scale in (0.01, 3.0, 250.0):
        scaled = similarity_logits(l2_normalize(v * scale), l2_normalize(t * scale), 14.0)
        for a, b in zip(base, scaled):
            assert torch.allclose(a, b, atol=1e-12)

# - match matrix -
def test_match_matrix_examples():
    assert torch.allclose(match_matrix(["A", "A", "B"]),
                          torch.tensor([[0.5, 0.5, 0.0], [0.5, 0.5, 0.0], [0.0, 0.0, 1.0]]))
    assert torch.equal(match_matrix(["A", "B", "C"]), torch.eye(3))
    assert torch.allclose(match_matrix(["A"] * 3), torch.full((3, 3), 1 / 3))


def test_match_matrix_rows_sum_to_one():
    keys = [(1, 2), (3,), (1, 2), (4,), (3,)]
    q = match_matrix(keys)
    assert torch.allclose(q.sum(dim=1), torch.ones(5))
    assert torch.equal(q, q.t())


def test_match_matrix_random_batches():
    rng = random.Random(0)
    for _ in range(1000):
        n = rng.randint(1, 8)
        keys = [rng.choice("abc") for _ in range(n)]
        q = match_matrix(keys)
        assert torch.allclose(q.sum(dim=1), torch.ones(n, dtype=q.dtype), atol=1e-6)
        assert torch.equal(q, q.t())
        perm = list(range(n))
        rng.shuffle(perm)
        index = torch.tensor(perm)
        assert torch.equal(match_matrix([keys[i] for i in perm]), q[index][:, index])


# - alignment loss -
def test_single_pair_loss_is_zero():
    one = torch.ones(1, 1)
    assert alignment_loss(one, one, one).item() == 0.0


def test_uniform_predictions_cost_ln2():
    uniform = torch.full((2, 2), 0.5)
    loss = alignment_loss(uniform, uniform, torch.eye(2))
    assert abs(loss.item() - math.log(2)) < 1e-6


def test_loss_matches_scalar_sum():
    p_i2r = torch.softmax(torch.randn(3, 3, dtype=torch.float64), dim=-1)
    p_r2i = torch.softmax(torch.randn(3, 3, dtype=torch.float64), dim=-1)
    q = match_matrix(["x", "y", "x"])
    total = 0.0
    for i in range(3):
        for j in range(3):
            total += q[i, j].item() * (math.log(p_i2r[i, j].item()) + math.log(p_r2i[i, j].item()))
    assert abs(alignment_loss(p_i2r, p_r2i, q).item() - (-total / 6)) < 1e-6


def test_loss_is_non_negative():
    rng = random.Random(0)
    for _ in range(200):
        B = rng.randint(1, 8)
        p_i2r = torch.softmax(torch.randn(B, B) * 3, dim=-1)
        p_r2i = torch.softmax(torch.randn(B, B) * 3, dim=-1)
        q = match_matrix([rng.randint(0, 3) for _ in range(B)])
        assert alignment_loss(p_i2r, p_r2i, q).item() >= 0.0


def test_loss_vanishes_only_when_predictions_hit_the_targets():
    q = match_matrix(["a", "b", "c"])
    assert alignment_loss(q, q, q).item() == 0.0
    near = torch.softmax(torch.eye(3) * 20, dim=-1)
    assert alignment_loss(near, q, q).item() > 0.0


def test_loss_floor_keeps_zero_probabilities_finite():
    p = torch.tensor([[1.0, 0.0], [0.0, 1.0]])
    loss = alignment_loss(p, p, torch.full((2, 2), 0.5))
    assert torch.isfinite(loss)


# - temperature -
def test_temperature_is_clamped():
    temperature = Temperature(14.0)
    assert abs(temperature.inv_tau.item() - 14.0) < 1e-4
    with torch.no_grad():
        temperature.log_inv_tau.fill_(10.0)
    assert temperature.inv_tau.item() == 100.0
    with torch.no_grad():
        temperature.log_inv_tau.fill_(-3.0)
    assert temperature.inv_tau.item() == 1.0
