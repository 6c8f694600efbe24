import math

import pytest
import torch
import torch.nn.functional as F

from coca_cxr.errors import ConfigurationError, ShapeMismatchError
from coca_cxr.model import EmbeddingBatch, caption_targets, captioning_loss, contrastive_loss, total_loss
from coca_cxr.model.vocabulary import BOS_ID, EOS_ID, PAD_ID, POOL_ID


def unit(rows):
    return F.normalize(torch.tensor(rows, dtype=torch.float64), dim=1)


class TestContrastive:
    def test_degenerate_embeddings(self):
        x = unit([[1.0, 0.0], [1.0, 0.0]])
        loss = contrastive_loss(EmbeddingBatch(x, x.clone(), 0.07))
        assert abs(loss.item() - 2 * math.log(2)) < 1e-9

    def test_well_separated(self):
        x = unit([[1.0, 0.0], [0.0, 1.0]])
        loss = contrastive_loss(EmbeddingBatch(x, x.clone(), 0.07)).item()
        expected = 2 * math.log1p(math.exp(-1 / 0.07))
        assert loss == pytest.approx(expected, rel=1e-6)
        assert loss == pytest.approx(1.2e-6, rel=0.1)

    def test_row_permutation_invariance(self):
        torch.manual_seed(0)
        x = F.normalize(torch.randn(5, 4, dtype=torch.float64), dim=1)
        y = F.normalize(torch.randn(5, 4, dtype=torch.float64), dim=1)
        perm = torch.tensor([3, 0, 4, 1, 2])
        a = contrastive_loss(EmbeddingBatch(x, y, 0.1))
        b = contrastive_loss(EmbeddingBatch(x[perm], y[perm], 0.1))
        assert torch.allclose(a, b, atol=1e-12)

    def test_rejects_single_pair(self):
        x = unit([[1.0, 0.0]])
        with pytest.raises(ShapeMismatchError):
            contrastive_loss(EmbeddingBatch(x, x, 0.07))

    def test_rejects_non_positive_temperature(self):
        x = unit([[1.0, 0.0], [0.0, 1.0]])
        with pytest.raises(ConfigurationError):
            contrastive_loss(EmbeddingBatch(x, x, 0.0))

    def test_rejects_non_unit_rows(self):
        x = torch.tensor([[2.0, 0.0], [0.0, 1.0]], dtype=torch.float64)
        with pytest.raises(ShapeMismatchError):
            contrastive_loss(EmbeddingBatch(x, x, 0.07))


    def test_unit_norm_tolerance_follows_dtype(self):
        slightly_long = [[1.0 + 5e-6, 0.0], [0.0, 1.0]]
        x64 = torch.tensor(slightly_long, dtype=torch.float64)
        with pytest.raises(ShapeMismatchError):
            contrastive_loss(EmbeddingBatch(x64, x64, 0.07))
        x32 = torch.tensor(slightly_long, dtype=torch.float32)
        assert torch.isfinite(contrastive_loss(EmbeddingBatch(x32, x32, 0.07)))


class TestCaptioning:
    def test_uniform_logits(self):
        vocab = 37
        logits = torch.zeros(2, 5, vocab, dtype=torch.float64)
        targets = torch.randint(0, vocab, (2, 5))
        loss = captioning_loss(logits, targets, torch.zeros(2, 5, dtype=torch.bool))
        assert abs(loss.item() - math.log(vocab)) < 1e-9

    def test_confident_correct_logits(self):
        logits = torch.full((1, 3, 4), -1e4, dtype=torch.float64)
        targets = torch.tensor([[1, 2, 3]])
        logits[0, torch.arange(3), targets[0]] = 1e4
        loss = captioning_loss(logits, targets, torch.zeros(1, 3, dtype=torch.bool))
        assert loss.item() < 1e-12

    def test_two_token_toy(self):
        logits = torch.tensor([[[math.log(2), 0.0], [0.0, 0.0]]], dtype=torch.float64)
        loss = captioning_loss(logits, torch.tensor([[0, 1]]), torch.zeros(1, 2, dtype=torch.bool))
        expected = (-math.log(2 / 3) - math.log(1 / 2)) / 2
        assert abs(loss.item() - expected) < 1e-12

    def test_padding_is_excluded(self):
        logits = torch.tensor([[[math.log(2), 0.0], [50.0, -50.0]]], dtype=torch.float64)
        pad_mask = torch.tensor([[False, True]])
        loss = captioning_loss(logits, torch.tensor([[0, 1]]), pad_mask)
        assert abs(loss.item() + math.log(2 / 3)) < 1e-12

    def test_all_padding_raises(self):
        with pytest.raises(ShapeMismatchError):
            captioning_loss(torch.zeros(1, 2, 3), torch.zeros(1, 2, dtype=torch.long),
                            torch.ones(1, 2, dtype=torch.bool))


def test_caption_targets_mask_pool_and_pad():
    ids = torch.tensor([[BOS_ID, 7, 8, EOS_ID, POOL_ID, PAD_ID]])
    targets, pad_mask = caption_targets(ids)
    assert targets.tolist() == [[7, 8, EOS_ID, POOL_ID, PAD_ID, PAD_ID]]
    assert pad_mask.tolist() == [[False, False, False, True, True, True]]


class TestTotal:
    def test_lambda_zero(self):
        assert total_loss(torch.tensor(1.5), torch.tensor(9.0), 0.0).item() == 1.5

    def test_arithmetic(self):
        assert total_loss(torch.tensor(1.0), torch.tensor(2.0), 2.0).item() == 5.0

    def test_without_contrastive_term(self):
        assert total_loss(torch.tensor(1.0), torch.tensor(2.0), 2.0, contrastive_weight=0.0).item() == 4.0

    def test_gradient_linearity(self):
        w = torch.randn(3, dtype=torch.float64, requires_grad=True)
        con, cap = (w ** 2).sum(), (w ** 3).sum()
        (g_total,) = torch.autograd.grad(total_loss(con, cap, 2.0), w, retain_graph=True)
        (g_con,) = torch.autograd.grad(con, w, retain_graph=True)
        (g_cap,) = torch.autograd.grad(cap, w)
        assert torch.allclose(g_total, g_con + 2.0 * g_cap)

    def test_negative_lambda(self):
        with pytest.raises(ConfigurationError):
            total_loss(torch.tensor(1.0), torch.tensor(1.0), -1.0)
