import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from beamsight.fusion import (BeamPrediction, FusionConfig, beam_head, beam_logits, cross_modal_mha,
                              embed_for_fusion, fuse, init_fusion, init_mlp_head, read_predictions, topk_indices,
                              write_predictions)
from beamsight.model import BeamModel, predict_topk
from beamsight.numerics import Init, cross_entropy, multi_head_attention, scope, tensor
from beamsight.preprocess import PreprocessedSample

from helpers import grad_check, tiny_batch, tiny_model_config

CFG = FusionConfig(d_z=8, n_heads=2, hidden=(6, 5), n_beams=7)


def _softmax(s):
    e = np.exp(s - s.max(axis=-1, keepdims=True))
    return e / e.sum(axis=-1, keepdims=True)


def _ln(x, g, b, eps=1e-5):
    return (x - x.mean(-1, keepdims=True)) / np.sqrt(x.var(-1, keepdims=True) + eps) * g + b


def _fusion_weights(rng, cfg=CFG, d_v=5, d_p=6):
    init = Init(rng)
    init_fusion(init, cfg, d_v, d_p)
    for t in init.params.values():
        t.data += 0.1 * rng.normal(size=t.shape)
    return init.params


def _head_weights(rng, d_in, cfg=CFG):
    init = Init(rng)
    init_mlp_head(init, d_in, cfg.hidden, cfg.n_beams)
    for t in init.params.values():
        t.data += 0.1 * rng.normal(size=t.shape)
    return init.params


def _cross_oracle(q_feat, kv_feat, w, h):
    q, k, v = q_feat @ w["wq"].data, kv_feat @ w["wk"].data, kv_feat @ w["wv"].data
    d = q.shape[-1] // h
    heads = [_softmax(q[..., i * d:(i + 1) * d] @ np.swapaxes(k[..., i * d:(i + 1) * d], -1, -2) / math.sqrt(d))
             @ v[..., i * d:(i + 1) * d] for i in range(h)]
    return np.concatenate(heads, axis=-1) @ w["wo"].data


# -- embedding ------------------------------------------------------------------

def test_embed_identity_and_zero(rng):
    w = _fusion_weights(rng, d_v=8, d_p=8)
    zv, zp = rng.normal(size=(3, 8)), rng.normal(size=(3, 8))
    for side in ("proj_v", "proj_p"):
        w[side + ".w"].data[...] = np.eye(8)
        w[side + ".b"].data[...] = 0.0
    a, b = embed_for_fusion(tensor(zv), tensor(zp), w)
    assert np.array_equal(a.data, zv) and np.array_equal(b.data, zp)
    w["proj_v.w"].data[...] = 0.0
    w["proj_v.b"].data[...] = np.arange(8.0)
    a, _ = embed_for_fusion(tensor(zv), tensor(zp), w)
    assert np.array_equal(a.data, np.tile(np.arange(8.0), (3, 1)))


def test_embed_matches_affine_oracle(rng):
    w = _fusion_weights(rng)
    zv, zp = rng.normal(size=(2, 4, 5)), rng.normal(size=(2, 3, 6))
    a, b = embed_for_fusion(tensor(zv), tensor(zp), w)
    assert np.allclose(a.data, zv @ w["proj_v.w"].data + w["proj_v.b"].data, atol=1e-13)
    assert np.allclose(b.data, zp @ w["proj_p.w"].data + w["proj_p.b"].data, atol=1e-13)
    with pytest.raises(ValueError):
        embed_for_fusion(tensor(rng.normal(size=(2, 6))), tensor(zp), w)


# -- cross attention -------------------------------------------------------------

def test_cross_with_tied_inputs_is_self_attention(rng):
    w = _fusion_weights(rng)
    x = tensor(rng.normal(size=(2, 5, 8)))
    for direction, key in (("p->v", "cross_pv"), ("v->p", "cross_vp")):
        got = cross_modal_mha(x, x, CFG, w, direction).data
        ref = multi_head_attention(x, x, x, CFG.attention, scope(w, key)).data
        assert np.allclose(got, ref, atol=1e-12)


def test_cross_single_token_is_value_projection(rng):
    w = _fusion_weights(rng)
    q, kv = rng.normal(size=(3, 1, 8)), rng.normal(size=(3, 1, 8))
    got = cross_modal_mha(tensor(q), tensor(kv), CFG, w, "p->v").data
    assert np.allclose(got, kv @ w["cross_pv.wv"].data @ w["cross_pv.wo"].data, atol=1e-13)


def test_cross_matches_per_head_oracle(rng):
    w = _fusion_weights(rng)
    zv, zp = rng.normal(size=(2, 4, 8)), rng.normal(size=(2, 6, 8))
    pv = cross_modal_mha(tensor(zv), tensor(zp), CFG, w, "p->v").data
    vp = cross_modal_mha(tensor(zp), tensor(zv), CFG, w, "v->p").data
    assert pv.shape == (2, 4, 8) and vp.shape == (2, 6, 8)
    assert np.allclose(pv, _cross_oracle(zv, zp, scope(w, "cross_pv"), 2), atol=1e-12)
    assert np.allclose(vp, _cross_oracle(zp, zv, scope(w, "cross_vp"), 2), atol=1e-12)


def test_cross_errors(rng):
    w = _fusion_weights(rng)
    with pytest.raises(ValueError):
        cross_modal_mha(tensor(np.zeros((1, 2, 8))), tensor(np.zeros((1, 2, 8))), CFG, w, "sideways")
    with pytest.raises(ValueError):
        cross_modal_mha(tensor(np.zeros((1, 2, 6))), tensor(np.zeros((1, 2, 8))), CFG, w, "p->v")
    with pytest.raises(ValueError):
        FusionConfig(d_z=10, n_heads=4).attention


# -- fuse -------------------------------------------------------------------------

def test_fuse_constant_cross_outputs_give_layer_norm_bias(rng):
    w = _fusion_weights(rng)
    for key in ("cross_pv", "cross_vp"):
        w[key + ".wo"].data[...] = 0.0  # both directions emit the constant 0
    out = fuse(tensor(rng.normal(size=(2, 3, 8))), tensor(rng.normal(size=(2, 4, 8))), CFG, w).data
    assert np.allclose(out, np.tile(w["ln.b"].data, (2, 1)), atol=1e-12)


def test_fuse_swapping_modalities_swaps_halves(rng):
    w = _fusion_weights(rng)
    for part in ("wq", "wk", "wv", "wo"):
        w["cross_vp." + part].data[...] = w["cross_pv." + part].data
    w["ln.g"].data[...] = 1.0
    w["ln.b"].data[...] = 0.0
    a, b = rng.normal(size=(2, 3, 8)), rng.normal(size=(2, 5, 8))
    x = fuse(tensor(a), tensor(b), CFG, w).data
    y = fuse(tensor(b), tensor(a), CFG, w).data
    assert np.allclose(x, np.concatenate([y[:, 8:], y[:, :8]], axis=1), atol=1e-12)


def test_fuse_matches_composition_oracle(rng):
    w = _fusion_weights(rng)
    a, b = rng.normal(size=(2, 3, 8)), rng.normal(size=(2, 5, 8))
    got = fuse(tensor(a), tensor(b), CFG, w).data
    pv = _cross_oracle(a, b, scope(w, "cross_pv"), 2).mean(axis=1)
    vp = _cross_oracle(b, a, scope(w, "cross_vp"), 2).mean(axis=1)
    ref = _ln(np.concatenate([pv, vp], axis=1), w["ln.g"].data, w["ln.b"].data)
    assert got.shape == (2, 16) and np.allclose(got, ref, atol=1e-12)
    vec = fuse(tensor(a[:, 0]), tensor(b[:, 0]), CFG, w).data  # vectors are length-1 sequences
    assert np.allclose(vec, fuse(tensor(a[:, :1]), tensor(b[:, :1]), CFG, w).data, atol=1e-14)


def test_fuse_point_mask_hides_padding_tokens(rng):
    w = _fusion_weights(rng)
    a, b = rng.normal(size=(2, 3, 8)), rng.normal(size=(2, 5, 8))
    valid = np.array([[True, True, False, True, False], [True] * 5])
    got = fuse(tensor(a), tensor(b), CFG, w, valid).data
    b2 = b.copy()
    b2[~valid] = rng.normal(size=((~valid).sum(), 8)) * 50.0
    assert np.allclose(fuse(tensor(a), tensor(b2), CFG, w, valid).data, got, atol=1e-12)
    # dropping the hidden tokens outright gives the same fused vector
    row0 = fuse(tensor(a[:1]), tensor(b[:1, valid[0]]), CFG, w).data
    assert np.allclose(got[:1], row0, atol=1e-12)
    assert np.allclose(fuse(tensor(a), tensor(b), CFG, w, np.ones((2, 5), bool)).data,
                       fuse(tensor(a), tensor(b), CFG, w).data, atol=1e-14)
    with pytest.raises(ValueError):
        fuse(tensor(a), tensor(b), CFG, w, valid[:, :4])


def test_masked_model_ignores_padding_and_has_bounded_init_gradient(rng):
    model = BeamModel(tiny_model_config("proposed", mask_padding=True), seed=3)
    batch = tiny_batch(rng, n=2, n_points=16)
    batch.points[:, 10:] = 0.0  # zero rows are padding
    loss = cross_entropy(model.forward(batch), batch.labels)
    loss.backward()
    # padding-only tokens never reach the output, so nothing flows back through their degenerate LayerNorms
    worst = max(np.abs(p.grad).max() for p in model.params.values() if p.grad is not None)
    assert worst < 1e3
    err = grad_check(lambda: cross_entropy(model.forward(batch), batch.labels), list(model.params.values()),
                     rng=np.random.default_rng(5), budget=60)
    assert err < 1e-3


# -- head -----------------------------------------------------------------------

def test_zero_final_layer_gives_uniform(rng):
    w = _head_weights(rng, 4 + 16)
    w["out.w"].data[...] = 0.0
    w["out.b"].data[...] = 0.0
    pred = beam_head(tensor(rng.normal(size=(3, 4))), tensor(rng.normal(size=(3, 16))), CFG, w)
    assert np.allclose(pred.probs, 1 / 7, atol=1e-15)


def test_uniform_topk_tie_break():
    pred = BeamPrediction(np.full((1, 64), 1 / 64))
    assert list(pred.topk(15)[0]) == list(range(15))
    assert pred.argmax()[0] == 0
    with pytest.raises(ValueError):
        pred.topk(65)
    with pytest.raises(ValueError):
        pred.topk(0)


def test_head_matches_layer_oracle(rng):
    w = _head_weights(rng, 4 + 16)
    zg, zvp = rng.normal(size=(3, 4)), rng.normal(size=(3, 16))
    got = beam_logits(tensor(zg), tensor(zvp), w).data
    d = {k: v.data for k, v in w.items()}
    x = np.concatenate([zg, zvp], axis=1)
    for i in range(2):
        x = np.maximum(_ln(x @ d[f"fc{i}.w"] + d[f"fc{i}.b"], d[f"ln{i}.g"], d[f"ln{i}.b"]), 0.0)
    ref = x @ d["out.w"] + d["out.b"]
    assert np.allclose(got, ref, atol=1e-12)
    assert np.allclose(beam_head(tensor(zg), tensor(zvp), CFG, w).probs, _softmax(ref), atol=1e-14)


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2 ** 31 - 1), st.floats(-50, 50))
def test_topk_shift_invariant_and_prefix_consistent(seed, shift):
    rng = np.random.default_rng(seed)
    logits = rng.normal(size=(3, 12)) * 3
    a, b = BeamPrediction.from_logits(logits), BeamPrediction.from_logits(logits + shift)
    assert np.allclose(a.probs.sum(axis=1), 1.0, atol=1e-9)
    for k in range(1, 13):
        assert np.array_equal(a.topk(k), b.topk(k))
        if k < 12:
            assert np.array_equal(a.topk(k + 1)[:, :k], a.topk(k))


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2 ** 31 - 1), st.floats(0.01, 30))
def test_head_probs_valid_for_any_weights(seed, scale):
    rng = np.random.default_rng(seed)
    w = _head_weights(rng, 20)
    for t in w.values():
        t.data *= scale
    p = beam_head(tensor(rng.normal(size=(2, 4)) * scale), tensor(rng.normal(size=(2, 16))), CFG, w).probs
    assert np.all(np.isfinite(p)) and np.all(p >= 0) and np.allclose(p.sum(axis=1), 1.0, atol=1e-9)


def test_topk_indices_sort_oracle(rng):
    probs = rng.integers(0, 4, size=(20, 9)).astype(float)
    top = topk_indices(probs, 5)
    for row, t in zip(probs, top):
        ref = sorted(range(9), key=lambda i: (-row[i], i))[:5]
        assert list(t) == ref


def test_fusion_and_head_gradients(rng):
    """Every fusion and head weight on a two-sample batch, sequence inputs."""
    for seed in range(3):
        r = np.random.default_rng(seed)
        fw = _fusion_weights(r)
        hw = _head_weights(r, 4 + 16)
        zv, zp, zg = r.normal(size=(2, 3, 5)), r.normal(size=(2, 4, 6)), r.normal(size=(2, 4))
        labels = np.array([1, 5])
        from beamsight.numerics import cross_entropy

        def loss():
            a, b = embed_for_fusion(tensor(zv), tensor(zp), fw)
            return cross_entropy(beam_logits(tensor(zg), fuse(a, b, CFG, fw), hw), labels)

        params = list(fw.values()) + list(hw.values())
        assert grad_check(loss, params, rng=np.random.default_rng(seed), budget=80) < 1e-3


# -- predict_topk / prediction dump ---------------------------------------------

def _sample(batch, i):
    return PreprocessedSample(batch.gps[i], batch.images[i], batch.points[i], int(batch.labels[i]))


def test_predict_topk_full_and_prefix():
    model = BeamModel(tiny_model_config("proposed"), seed=3)
    batch = tiny_batch(np.random.default_rng(0), n=5)
    probs = model.predict_proba(batch)
    for i in range(5):
        s = _sample(batch, i)
        full = predict_topk(model, s, 6)
        assert sorted(full) == list(range(6))
        ref = sorted(range(6), key=lambda b: (-probs[i, b], b))
        assert list(full) == ref
        for k in range(1, 6):
            assert set(predict_topk(model, s, k)) <= set(predict_topk(model, s, k + 1))
        assert np.array_equal(predict_topk(model, s, 3), predict_topk(model, s, 3))
    with pytest.raises(ValueError):
        predict_topk(model, _sample(batch, 0), 7)
    with pytest.raises(ValueError):
        predict_topk(model, _sample(batch, 0), 0)


def test_prediction_csv_roundtrip(tmp_path, rng):
    probs = _softmax(rng.normal(size=(4, 7)))
    labels = np.array([0, 6, 2, 3])
    write_predictions(tmp_path / "p.csv", probs, labels)
    header = (tmp_path / "p.csv").read_text().splitlines()[0].split(",")
    assert header[:2] == ["sample_index", "label"] and len(header) == 9
    p, lab = read_predictions(tmp_path / "p.csv")
    assert np.array_equal(p, probs) and np.array_equal(lab, labels)
