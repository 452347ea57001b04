import numpy as np
import pytest
import torch
from hypothesis import given, settings
from hypothesis import strategies as st

from atbench.backbone import ImageEncoder, TextEncoder
from atbench.decoder import (
    MAX_DEPTH,
    MIN_DEPTH,
    DecoderConfig,
    UnifiedDecoder,
    attention_mask,
    greedy_generate,
    pixel_head,
)
from atbench.model import AtModel, ModelConfig, panoptic_inference
from atbench.tokenization import EOS_ID, Mode, TaskKind, encode, prompt_for


def test_image_encoder_shapes():
    torch.manual_seed(0)
    enc = ImageEncoder(32, 4)
    feats = enc(torch.rand(1, 64, 64, 3))
    assert feats.shapes == [(1, 16, 16, 32), (1, 8, 8, 32), (1, 4, 4, 32)]
    feats = enc(torch.rand(2, 32, 48, 3))
    assert feats.shapes == [(2, 8, 12, 32), (2, 4, 6, 32), (2, 2, 3, 32)]
    with pytest.raises(ValueError):
        enc(torch.rand(1, 30, 30, 3))
    with pytest.raises(ValueError):
        enc(torch.full((1, 16, 16, 3), float("nan")))


@settings(max_examples=10, deadline=None)
@given(st.integers(1, 4), st.integers(1, 4))
def test_image_encoder_shape_property(hm, wm):
    torch.manual_seed(0)
    feats = ImageEncoder(16, 2)(torch.rand(1, 16 * hm, 16 * wm, 3))
    for (b, h, w, d), s in zip(feats.shapes, (4, 8, 16)):
        assert (h, w, d) == (16 * hm // s, 16 * wm // s, 16)
    assert all(torch.isfinite(z).all() for z in feats.levels)


def test_text_encoder_contract(table):
    torch.manual_seed(0)
    enc = TextEncoder(table, 32, 4)
    ids = torch.tensor([[5, 6, 7, 8, 9]])
    a = enc(ids).vectors
    assert a.shape == (1, 5, 32)
    assert torch.equal(a, enc(ids).vectors)
    with pytest.raises(ValueError):
        enc(torch.zeros(1, 65, dtype=torch.long))


def test_prompt_and_label_paths_identical(tiny_model):
    ids = torch.tensor([tiny_model.encode_string("a red square")])
    prompt, _ = tiny_model.encode_prompts(["a red square"])
    label = tiny_model.text_encoder(ids)
    assert torch.equal(prompt.vectors, label.vectors)


def test_class_names(tiny_model):
    names = ["red square", "blue circle", "red square", "ground", "green triangle", "background"]
    enc = tiny_model.encode_string
    out = tiny_model.text_encoder.embed_class_names(names, enc)
    assert out.shape == (6, 16)
    assert torch.equal(out[0], out[2])
    perm = [4, 1, 0, 3, 2, 5]
    out2 = tiny_model.text_encoder.embed_class_names([names[i] for i in perm], enc)
    assert torch.allclose(out2, out[perm], atol=1e-6)
    with pytest.raises(ValueError):
        tiny_model.text_encoder.embed_class_names([], enc)


def test_attention_mask_structure():
    valid = torch.tensor([[True, True, False]])
    allow = attention_mask(2, 3, valid)[0]
    m, n = 2, 3
    assert allow[:m, :m].all() and not allow[:m, m : m + n].any()
    assert allow[m + 1, m] and allow[m + 1, m + 1] and not allow[m + 1, m + 2]
    assert not allow[:, -1].any()  # padded prompt slot
    assert allow[:, m + n].all()


def _decoder(d=16, m=6, layers=7):
    torch.manual_seed(0)
    dec = UnifiedDecoder(DecoderConfig(layers, m, d, 2))
    dec.reset_queries()
    feats = ImageEncoder(d, 2)(torch.rand(2, 32, 32, 3))
    return dec, feats


def test_decoder_layer_outputs_and_shapes():
    dec, feats = _decoder()
    states = dec(feats, None)
    assert len(states) == 7
    assert all(s.latent.shape == (2, 6, 16) and s.textual is None for s in states)
    states = dec(feats, None, textual=torch.randn(2, 4, 16))
    assert all(s.textual.shape == (2, 4, 16) for s in states)
    with pytest.raises(ValueError):
        dec(feats, None, textual=torch.randn(2, 4, 8))


def test_decoder_latent_equivariance():
    dec, feats = _decoder()
    lat = dec.latent.detach().clone()
    swapped = lat.clone()
    swapped[[1, 3]] = lat[[3, 1]]
    a = dec(feats, None, latent=lat)
    b = dec(feats, None, latent=swapped)
    for sa, sb in zip(a, b):
        assert torch.allclose(sa.latent[:, [3, 1]], sb.latent[:, [1, 3]], atol=1e-5)


def test_decoder_causality():
    dec, feats = _decoder()
    g = torch.Generator().manual_seed(1)
    for _ in range(5):
        tq = torch.randn(2, 5, 16, generator=g)
        j = int(torch.randint(0, 5, (1,), generator=g))
        tq2 = tq.clone()
        tq2[:, j] += torch.randn(2, 16, generator=g)
        a = dec(feats, None, textual=tq)[-1].textual
        b = dec(feats, None, textual=tq2)[-1].textual
        assert torch.allclose(a[:, :j], b[:, :j], atol=1e-6)


def test_pixel_head_contract():
    lat = torch.randn(1, 16, 8)
    pix = torch.randn(1, 4, 4, 8)
    concepts = torch.randn(6, 8)
    lat[0, -1] = 0.0
    out = pixel_head(lat, pix, concepts)
    assert out.mask_logits.shape == (1, 15, 4, 4)
    assert out.class_affinity.shape == (1, 15, 6)
    assert torch.allclose(out.depth, torch.full((1, 4, 4), (MIN_DEPTH + MAX_DEPTH) / 2))
    doubled = concepts.clone()
    doubled[2] *= 2
    out2 = pixel_head(lat, pix, doubled)
    assert torch.allclose(out2.class_affinity[..., 2], 2 * out.class_affinity[..., 2])
    huge = pixel_head(torch.randn(1, 16, 8) * 1e4, pix, concepts).depth
    assert (huge > MIN_DEPTH).all() and (huge < MAX_DEPTH).all()


def test_greedy_generate_stopping_and_ties():
    V = 6

    def eos_first(prefix):
        out = torch.zeros(prefix.shape[0], prefix.shape[1], V)
        out[..., EOS_ID] = 1
        return out

    assert [s.ids for s in greedy_generate(eos_first, 2, 5)] == [(EOS_ID,), (EOS_ID,)]

    def never_eos(prefix):
        out = torch.zeros(prefix.shape[0], prefix.shape[1], V)
        out[..., 4] = 1
        out[..., 5] = 1  # tie: lower id wins
        return out

    assert [s.ids for s in greedy_generate(never_eos, 1, 3)] == [(4, 4, 4)]
    with pytest.raises(ValueError):
        greedy_generate(never_eos, 1, 0)


def test_model_pixel_and_token_shapes(tiny_model):
    images = torch.rand(2, 64, 64, 3)
    pix = tiny_model.forward_pixels(TaskKind.PS, images)
    assert len(pix) == 7
    assert pix[-1].mask_logits.shape == (2, 7, 16, 16)
    assert pix[-1].class_affinity.shape == (2, 7, 26)
    tok = tiny_model.forward_tokens(TaskKind.OCR, images, torch.tensor([[2, 5], [2, 6]]))
    assert tok[-1].affinity.shape == (2, 2, 40)


def test_model_generate_deterministic(tiny_model):
    images = torch.rand(2, 64, 64, 3)
    q = ["how many shapes are there?"] * 2
    a = tiny_model.generate(TaskKind.VQA, images, q, max_len=5)
    b = tiny_model.generate(TaskKind.VQA, images, q, max_len=5)
    assert a == b and len(a) == 2


def test_multihead_has_more_parameters(table, task_vocabs):
    prompt = AtModel(ModelConfig(mode="prompt"), table, task_vocabs)
    multi = AtModel(ModelConfig(mode="multihead"), table, task_vocabs)
    assert prompt.parameter_summary()["total"] < multi.parameter_summary()["total"]


def test_model_config_validation():
    with pytest.raises(ValueError):
        ModelConfig(d=30, heads=4).validate()
    with pytest.raises(ValueError):
        ModelConfig(mode="other").validate()


def test_panoptic_inference_from_confident_queries():
    logits = torch.full((3, 4, 4), -20.0)
    logits[0, :, :2] = 20
    logits[1, :, 2:] = 20
    aff = torch.full((3, 26), -20.0)
    aff[0, 5] = 20
    aff[1, 24] = 20
    aff[2, 25] = 20  # no-object
    pm = panoptic_inference(logits, aff)
    classes = {pm.segments[k][0] for k in np.unique(pm.ids) if k}
    assert classes == {5, 24}
    assert (pm.ids > 0).all()
