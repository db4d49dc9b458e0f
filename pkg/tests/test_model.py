import json
import logging
import struct

import numpy as np
import pytest

from conftest import FUSIONS, TOY, random_ids, toy_model
from patcorrect import numerics as nx
from patcorrect.model import (
    CheckpointError,
    LengthError,
    ModelConfig,
    count_parameters,
    fuse_concat,
    fuse_pool,
    load_checkpoint,
    param_shapes,
)
from patcorrect.numerics import Tensor

W = [4, 5, 6]
P = [5, 6, 7, 8, 9]


def ln(x):
    mu = x.mean(axis=-1, keepdims=True)
    return (x - mu) / np.sqrt(x.var(axis=-1, keepdims=True) + nx.LN_EPS)


# -- config -----------------------------------------------------------------


def test_config_invariants():
    with pytest.raises(ValueError, match="divisible"):
        ModelConfig(d_h=10, n_heads=4)
    with pytest.raises(ValueError, match="odd"):
        ModelConfig(conv_kernel=4)
    with pytest.raises(ValueError, match="fusion"):
        ModelConfig(fusion="sum")
    with pytest.raises(ValueError, match="unknown"):
        ModelConfig.from_dict({"d_h": 8, "heads": 2})


def test_full_scale_parameter_count(caplog):
    d, h, k, vt, vp = 512, 2048, 3, 30000, 80
    cfg = ModelConfig.full_scale()
    assert (cfg.d_h, cfg.n_layers_text, cfg.n_layers_phon, cfg.n_layers_dec, cfg.n_heads, cfg.d_mlp) == (512, 6, 6, 6, 8, 2048)
    encoder_layer = 4 * d * d + 2 * d * h + h + d + 4 * d
    fuse_block = 4 * d * d + 2 * d
    conv = k * d * d + d + 2 * d
    mlp = (d * d + d) + (d + 1)
    decoder_layer = 12 * d * d + 6 * d + 2 * d * h + h + d + 2 * d
    expected = (vt + vp) * d + 12 * encoder_layer + 2 * fuse_block + 5 * conv + mlp + 6 * decoder_layer + d * vt + vt
    got = count_parameters(cfg, vt, vp)
    with caplog.at_level(logging.INFO):
        logging.getLogger("patcorrect").info("full-scale parameter count: %d", got)
    assert got == expected


def test_parameter_shapes_follow_config():
    shapes = param_shapes(ModelConfig(**TOY), 12, 10)
    assert shapes["emb.text"] == (12, 8) and shapes["out.w"] == (8, 12)
    assert shapes["tagp.conv.0.w"] == (3, 8, 8) and shapes["tagp.mlp.1.w"] == (8, 1)
    assert "fuse.1.attn.q" in shapes and "fuse.2.attn.q" not in shapes
    assert not any(name.endswith((".q.b", ".k.b", ".v.b")) for name in shapes)


# -- encoders ---------------------------------------------------------------


def test_encode_shapes_and_determinism():
    m = toy_model()
    a = m.encode(W, P)
    b = m.encode(W, P)
    assert a.H_w.shape == (3, 8) and a.H_p.shape == (5, 8)
    assert np.array_equal(a.H_w.data, b.H_w.data) and np.array_equal(a.H_p.data, b.H_p.data)


def test_positions_break_permutation_equivariance():
    m = toy_model()
    h = m.encode(W, P).H_w.data
    h_perm = m.encode(W[::-1], P).H_w.data
    assert not np.allclose(h[::-1], h_perm)


def test_encode_rejects_empty_and_overlong():
    m = toy_model(max_len=6)
    with pytest.raises(ValueError):
        m.encode([], P)
    with pytest.raises(LengthError):
        m.encode(W, P + P)


# -- fusion -----------------------------------------------------------------


def test_fuse_concat():
    rng = np.random.default_rng(0)
    hw, hp = Tensor(rng.normal(size=(2, 4))), Tensor(rng.normal(size=(3, 4)))
    hs = fuse_concat(hw, hp)
    assert hs.shape == (5, 4) and np.array_equal(hs.data[:2], hw.data)
    with pytest.raises(nx.ShapeError):
        fuse_concat(hw, Tensor(np.ones((3, 5))))


def test_fuse_pool_identities():
    rng = np.random.default_rng(1)
    hw = Tensor(rng.normal(size=(2, 4)))
    added = fuse_pool(hw, Tensor(np.zeros((5, 4))), "add").data
    assert np.array_equal(added[:2], hw.data) and not added[2:].any()
    maxed = fuse_pool(hw, Tensor(np.full((5, 4), -1e9)), "max").data
    assert np.array_equal(maxed[:2], hw.data) and not maxed[2:].any()
    hp = Tensor(rng.normal(size=(5, 4)))
    both = fuse_pool(hw, hp, "add").data
    np.testing.assert_array_equal(both, nx.add(hp, nx.pad_rows(hw, 5)).data)


def test_fuse_pool_needs_m_at_least_n():
    with pytest.raises(ValueError, match="n=3, m=2"):
        fuse_pool(Tensor(np.ones((3, 4))), Tensor(np.ones((2, 4))), "add")


def test_fuse_cross_single_phoneme():
    m = toy_model(n_cross_blocks=1)
    probe: list = []
    m.attention_probe = probe
    rng = np.random.default_rng(2)
    hw, hp = Tensor(rng.normal(size=(3, 8))), Tensor(rng.normal(size=(1, 8)))
    out = m.fuse_cross(hw, hp).data
    assert np.array_equal(probe[0], np.ones((2, 3, 1)))
    value = hp.data @ m.params["fuse.0.attn.v"].data @ m.params["fuse.0.attn.o"].data
    np.testing.assert_allclose(out, ln(hw.data + value), atol=1e-12)


def test_fuse_cross_zero_value_projection():
    m = toy_model()
    for b in range(m.cfg.n_cross_blocks):
        m.params[f"fuse.{b}.attn.v"].data[...] = 0.0
    rng = np.random.default_rng(3)
    hw = Tensor(rng.normal(size=(3, 8)))
    out = m.fuse_cross(hw, Tensor(rng.normal(size=(6, 8)))).data
    np.testing.assert_allclose(out, ln(ln(hw.data)), atol=1e-12)


@pytest.mark.parametrize("m_len", [1, 2, 7])
def test_fuse_cross_shape(m_len):
    m = toy_model()
    assert m.fuse_cross(Tensor(np.ones((4, 8))), Tensor(np.ones((m_len, 8)))).shape == (4, 8)


# -- tag predictor ----------------------------------------------------------


@pytest.mark.parametrize("fusion", FUSIONS)
def test_tag_predictor_length(fusion):
    m = toy_model(fusion)
    assert m.predict_tags(m.encode(W, P)).shape == (3, 1)


def test_tag_predictor_zero_input():
    m = toy_model()
    assert not m.tag_predict(Tensor(np.zeros((7, 8))), 3).data.any()


def test_tag_predictor_crops_to_first_rows():
    m = toy_model("concat")
    hs = Tensor(np.random.default_rng(4).normal(size=(8, 8)))
    full = m.tag_predict(hs, 8).data
    np.testing.assert_array_equal(m.tag_predict(hs, 3).data, full[:3])


def test_tag_predictor_gradients():
    m = toy_model("concat")
    hs = Tensor(np.random.default_rng(5).normal(size=(6, 8)))
    params = [t for k, t in m.params.items() if k.startswith("tagp.")]
    f = lambda: nx.mse(m.tag_predict(hs, 3), [1.0, -1.0, 0.0])  # noqa: E731
    assert nx.grad_check(f, params) < 1e-4


# -- decoder ----------------------------------------------------------------


def test_decode_shape_and_single_pass():
    m = toy_model()
    enc = m.encode(W, P)
    before = m.decoder_passes
    logits = m.decode([4, 4, 5, 6, 7], enc)
    assert logits.shape == (5, len(m.text_vocab))
    assert m.decoder_passes - before == 1


def test_decoder_has_no_causal_mask():
    m = toy_model(positional=False)
    enc = m.encode(W, P)
    adj = [4, 5, 6, 7]
    perm = [2, 0, 3, 1]
    out = m.decode(adj, enc).data
    out_perm = m.decode([adj[i] for i in perm], enc).data
    np.testing.assert_allclose(out_perm, out[perm], atol=1e-12)


def test_incremental_decoding_matches_causal_recompute():
    m = toy_model(n_layers_dec=2)
    enc = m.encode(W, P)
    prefix = [2, 5, 9, 4, 6]
    cache = m.start_incremental(enc)
    for t in range(len(prefix)):
        step = m.decode_next(prefix[t], cache).data
        full = m.decode_step(prefix[: t + 1], enc).data
        np.testing.assert_allclose(step, full, atol=1e-12)


@pytest.mark.parametrize("fusion", FUSIONS)
def test_attention_rows_normalised(fusion):
    m = toy_model(fusion)
    m.attention_probe = []
    m.forward(W, P, [4, 5, 5, 6])
    assert len(m.attention_probe) > 0
    for w in m.attention_probe:
        np.testing.assert_allclose(w.sum(axis=-1), 1.0, atol=1e-9)


def test_eval_forward_deterministic_and_dropout_in_training():
    m = toy_model(dropout=0.3)
    a = m.forward(W, P, [4, 5, 6])[1].data
    b = m.forward(W, P, [4, 5, 6])[1].data
    assert np.array_equal(a, b)
    m.training = True
    c = m.forward(W, P, [4, 5, 6])[1].data
    assert not np.array_equal(a, c)


def test_inference_context_is_per_thread():
    import threading

    m = toy_model()
    m.training = True
    seen = {}

    def worker():
        seen["worker"] = m.training

    with m.inference():
        assert m.training is False
        t = threading.Thread(target=worker)
        t.start()
        t.join()
    assert seen["worker"] is True and m.training is True


# -- checkpoints ------------------------------------------------------------


def test_checkpoint_roundtrip_bit_identical(tmp_path):
    m = toy_model("max", seed=3)
    extra = {"adam.m.x": np.arange(6.0).reshape(2, 3)}
    m.save(tmp_path / "m.patc", extra=extra, state={"step": 7})
    ck = load_checkpoint(tmp_path / "m.patc")
    assert ck.model.cfg == m.cfg
    assert ck.model.text_vocab.symbols == m.text_vocab.symbols
    assert ck.state == {"step": 7}
    assert np.array_equal(ck.extra["adam.m.x"], extra["adam.m.x"])
    for k, t in m.params.items():
        assert np.array_equal(ck.model.params[k].data, t.data)
    rng = np.random.default_rng(0)
    w = random_ids(rng, m.text_vocab, 4, 4)
    p = random_ids(rng, m.phon_vocab, 6, 5)
    for a, b in zip(m.forward(w, p, w), ck.model.forward(w, p, w)):
        assert np.array_equal(a.data, b.data)


def test_checkpoint_layout(tmp_path):
    toy_model().save(tmp_path / "m.patc")
    raw = (tmp_path / "m.patc").read_bytes()
    assert raw.startswith(b"PATC1\n")
    (size,) = struct.unpack("<Q", raw[6:14])
    manifest = json.loads(raw[14 : 14 + size])
    assert manifest["dtype"] == "<f8" and set(manifest["vocab_hashes"]) == {"text", "phoneme"}
    assert manifest["params"][0] == {"name": "emb.text", "shape": [8 + 4, 8], "offset": 0}


def test_checkpoint_errors(tmp_path):
    path = tmp_path / "m.patc"
    (tmp_path / "bad.patc").write_bytes(b"NOPE")
    with pytest.raises(CheckpointError):
        load_checkpoint(tmp_path / "bad.patc")
    toy_model().save(path)
    raw = path.read_bytes()
    (tmp_path / "short.patc").write_bytes(raw[:-8])
    with pytest.raises(CheckpointError):
        load_checkpoint(tmp_path / "short.patc")
    (size,) = struct.unpack("<Q", raw[6:14])
    manifest = json.loads(raw[14 : 14 + size])
    manifest["vocab"]["text"][-1] = "tampered"
    blob = json.dumps(manifest).encode()
    (tmp_path / "hash.patc").write_bytes(raw[:6] + struct.pack("<Q", len(blob)) + blob + raw[14 + size :])
    with pytest.raises(CheckpointError, match="hash"):
        load_checkpoint(tmp_path / "hash.patc")
