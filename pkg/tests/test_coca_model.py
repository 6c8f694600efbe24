import numpy as np
import pytest
import torch

from coca_cxr.errors import ConfigurationError, ShapeMismatchError, VocabularyError
from coca_cxr.model import (
    BOS_ID,
    EOS_ID,
    PAD_ID,
    POOL_ID,
    ModelConfig,
    build_model,
    coca_objective,
    constrained_choice,
    prepare_images,
)
from coca_cxr.report_processor import PROGRESSIONS


def caption(vocab, text, length):
    ids = vocab.encode_caption(text, length) + [POOL_ID]
    return ids + [PAD_ID] * (length - len(ids))


def test_desk_scale_shapes(vocab):
    config = ModelConfig.desk_scale(vocab_size=len(vocab))
    model = build_model(config, seed=0).eval()
    images = torch.rand(2, 48, 48)
    with torch.no_grad():
        grid = model.encode_image(images)
        memory, x = model.encode_pair(images, images.flip(0))
    assert grid.shape == (2, 144, 64)
    assert memory.shape == (2, 48, 64)
    assert x.shape == (2, 64)


def test_two_stream_ablation_shapes(vocab):
    config = ModelConfig.tiny(vocab_size=len(vocab), regional_attention=False)
    model = build_model(config, seed=0).eval()
    with torch.no_grad():
        memory, _ = model.encode_pair(torch.rand(1, 16, 16), torch.rand(1, 16, 16))
    assert model.regional is None
    assert memory.shape == (1, 2 * config.pooled_side ** 2, config.embed_dim)


def test_forward_outputs(tiny_model, vocab, image_pair):
    current, prior = (torch.from_numpy(np.stack([img, img])) for img in image_pair)
    ids = torch.tensor([caption(vocab, "pneumonia worsened.", 10),
                        caption(vocab, "edema improved.", 10)])
    out = tiny_model(current, prior, ids)
    assert out.logits.shape == (2, 10, len(vocab))
    assert torch.allclose(out.x.norm(dim=1), torch.ones(2, dtype=torch.float64))
    assert torch.allclose(out.y.norm(dim=1), torch.ones(2, dtype=torch.float64))
    assert 1e-3 <= float(out.temperature) <= 10


def test_pool_only_text_gives_unit_embedding(tiny_model):
    _, y = tiny_model.encode_text_unimodal(torch.tensor([[BOS_ID, EOS_ID, POOL_ID]]))
    assert torch.allclose(y.norm(dim=1), torch.ones(1, dtype=torch.float64))


def test_text_without_pool_token(tiny_model):
    with pytest.raises(VocabularyError):
        tiny_model.encode_text_unimodal(torch.tensor([[BOS_ID, EOS_ID]]))


def test_out_of_range_token(tiny_model):
    with pytest.raises(VocabularyError):
        tiny_model.encode_text_unimodal(torch.tensor([[BOS_ID, 10_000, POOL_ID]]))


def test_prepare_images_pads_to_square():
    images = prepare_images(torch.ones(1, 8, 16), 16)
    assert images.shape == (1, 16, 16)
    assert images[0, 0].sum() == 0
    assert images[0, 8].sum() == 16


def test_mismatched_pair_batch(tiny_model):
    with pytest.raises(ShapeMismatchError):
        tiny_model.encode_pair(torch.rand(2, 16, 16), torch.rand(3, 16, 16))


def test_constrained_choice_example(vocab):
    logits = torch.zeros(len(vocab))
    for label, value in zip(PROGRESSIONS, (2.0, 1.0, 0.5)):
        logits[vocab.token_id(label)] = value
    logits[vocab.token_id("pneumonia")] = 9.0
    choices = [vocab.token_id(label) for label in PROGRESSIONS]
    assert constrained_choice(logits, choices) == vocab.token_id("worsened")


def test_constrained_decoding_returns_a_choice(tiny_model, vocab, image_pair):
    choices = [vocab.token_id(label) for label in PROGRESSIONS]
    prefix = [BOS_ID] + vocab.encode("pneumonia is")
    ids = tiny_model.generate_text(*image_pair, prefix, 20, mode="constrained", choices=choices)
    assert ids[:-1] == prefix
    assert ids[-1] in choices


def test_prefix_at_max_len_is_unchanged(tiny_model, image_pair):
    prefix = [BOS_ID, 7, 8, 9]
    assert tiny_model.generate_text(*image_pair, prefix, 4) == prefix


def test_prefix_longer_than_max_len(tiny_model, image_pair):
    with pytest.raises(ConfigurationError):
        tiny_model.generate_text(*image_pair, [BOS_ID, 7, 8], 2)


def test_greedy_is_deterministic_and_bounded(tiny_model, image_pair):
    first = tiny_model.generate_text(*image_pair, [BOS_ID], 12)
    second = tiny_model.generate_text(*image_pair, [BOS_ID], 12)
    assert first == second
    assert len(first) <= 12
    assert all(token not in (PAD_ID, POOL_ID) for token in first[1:])


def test_swapping_pair_changes_fusion(tiny_model, image_pair):
    current, prior = image_pair
    with torch.no_grad():
        forward, _ = tiny_model.encode_pair(current, prior)
        swapped, _ = tiny_model.encode_pair(prior, current)
    assert not torch.allclose(forward, swapped)


def test_objective_is_finite_and_differentiable(tiny_model, vocab, image_pair):
    current, prior = (torch.from_numpy(np.stack([img, img[::-1].copy()])) for img in image_pair)
    ids = torch.tensor([caption(vocab, "pneumonia worsened.", 12),
                        caption(vocab, "pleural effusion unchanged.", 12)])
    total, con, cap = coca_objective(tiny_model, current, prior, ids)
    total.backward()
    assert torch.isfinite(total)
    assert total.item() == pytest.approx(con.item() + tiny_model.config.lambda_cap * cap.item())
    assert tiny_model.regional.cross_attn.w_q.weight.grad is not None


def test_temperature_is_clamped(tiny_model):
    with torch.no_grad():
        tiny_model.temperature.fill_(50.0)
    assert float(tiny_model.tau()) == 10.0
