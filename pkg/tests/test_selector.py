import math

import numpy as np
import pytest

from emochat.config import ModelConfig
from emochat.encoders import attention_pool, cell_view, encode_sequence
from emochat.errors import ConfigurationError, ShapeError, ValidationError
from emochat.selector import (
    bernoulli_kl_and_grad,
    ce_loss_and_grad,
    fuse,
    init_selector_params,
    kl_hidden,
    predict_post_emotion,
    prior_forward,
    recognition_forward,
    selector_backward,
    selector_forward,
    selector_loss,
    selector_losses,
)

K = 6


def tiny_cfg(**kw):
    return ModelConfig(vocab_size=32, emb_dim=4, hidden=5, attn_dim=4, emo_dim=4,
                       kl_dim=3, enc_layers=1, **kw).validate()


def make_params(cfg, seed=0, dtype=np.float64, zero=False):
    params = {}
    init_selector_params(params, np.random.default_rng(seed), cfg, dtype)
    if zero:
        for k in params:
            params[k] = np.zeros_like(params[k])
    return params


# ---------------------------------------------------------------------------
# predict_post_emotion
# ---------------------------------------------------------------------------

def test_zero_head_predicts_half_and_log2_loss():
    w, b = np.zeros((5, K)), np.zeros(K)
    label = np.eye(K)[2]
    e_hat, loss = predict_post_emotion(np.ones(5), w, b, label)
    assert np.allclose(e_hat, 0.5)
    assert abs(loss - math.log(2)) < 1e-12


def test_two_positive_labels_double_the_loss():
    w, b = np.zeros((5, K)), np.zeros(K)
    label = np.eye(K)[1] + np.eye(K)[4]
    _, loss = predict_post_emotion(np.zeros(5), w, b, label)
    assert abs(loss - 2 * math.log(2)) < 1e-12


def test_ce_matches_scalar_oracle_both_forms():
    rng = np.random.default_rng(0)
    z = rng.standard_normal((3, K))
    e = (rng.random((3, K)) < 0.4).astype(float)
    e[:, 0] = 1.0  # keep every label non-empty
    for form in ("positive", "full"):
        loss, dz = ce_loss_and_grad(z, e, form)
        for b in range(3):
            expect = 0.0
            for k in range(K):
                p = 1.0 / (1.0 + math.exp(-z[b, k]))
                if form == "positive":
                    expect += -e[b, k] * math.log(p)
                else:
                    expect += -e[b, k] * math.log(p) - (1 - e[b, k]) * math.log(1 - p)
            assert abs(loss[b] - expect) < 1e-10
        # gradient against central differences
        eps = 1e-7
        for idx in [(0, 0), (1, 3), (2, 5)]:
            zp, zm = z.copy(), z.copy()
            zp[idx] += eps
            zm[idx] -= eps
            num = (ce_loss_and_grad(zp, e, form)[0][idx[0]]
                   - ce_loss_and_grad(zm, e, form)[0][idx[0]]) / (2 * eps)
            assert abs(num - dz[idx]) < 1e-7


def test_all_zero_label_rejected():
    with pytest.raises(ConfigurationError):
        ce_loss_and_grad(np.zeros((1, K)), np.zeros((1, K)))


def test_predictions_strictly_inside_unit_interval():
    # pooled states are bounded by 1 (GRU from zero state), heads are small
    rng = np.random.default_rng(1)
    for _ in range(10):
        e_hat, _ = predict_post_emotion(rng.uniform(-1, 1, size=5),
                                        rng.standard_normal((5, K)),
                                        rng.standard_normal(K))
        assert np.all(e_hat > 0) and np.all(e_hat < 1)


# ---------------------------------------------------------------------------
# fuse
# ---------------------------------------------------------------------------

def test_fuse_zero_params_averages_tanh():
    a, b = np.array([0.3, -1.0]), np.array([2.0, 0.1])
    gate, fused = fuse(a, b, np.zeros((4, 2)), np.zeros(2))
    assert np.allclose(gate, 0.5)
    assert np.allclose(fused, 0.5 * (np.tanh(a) + np.tanh(b)))


def test_fuse_identical_inputs_any_gate():
    rng = np.random.default_rng(2)
    a = rng.standard_normal(4)
    _, fused = fuse(a, a.copy(), rng.standard_normal((8, 4)), rng.standard_normal(4))
    assert np.allclose(fused, np.tanh(a), atol=1e-12)


def test_fuse_matches_elementwise_oracle_and_envelope():
    rng = np.random.default_rng(3)
    a, b = rng.standard_normal(4), rng.standard_normal(4)
    w, bias = rng.standard_normal((8, 4)), rng.standard_normal(4)
    gate, fused = fuse(a, b, w, bias)
    cat = np.concatenate([a, b])
    for j in range(4):
        g = 1.0 / (1.0 + math.exp(-(sum(cat[i] * w[i, j] for i in range(8)) + bias[j])))
        expect = g * math.tanh(a[j]) + (1 - g) * math.tanh(b[j])
        assert abs(fused[j] - expect) < 1e-12
        lo = min(math.tanh(a[j]), math.tanh(b[j]))
        hi = max(math.tanh(a[j]), math.tanh(b[j]))
        assert lo - 1e-12 <= fused[j] <= hi + 1e-12


def test_fuse_shape_mismatch():
    with pytest.raises(ShapeError):
        fuse(np.zeros(3), np.zeros(4), np.zeros((7, 3)), np.zeros(3))


# ---------------------------------------------------------------------------
# kl_hidden
# ---------------------------------------------------------------------------

def test_kl_zero_for_identical_states():
    rng = np.random.default_rng(4)
    h = rng.standard_normal(5)
    w, b = rng.standard_normal((5, 3)), rng.standard_normal(3)
    assert abs(kl_hidden(h, h.copy(), w, b)) < 1e-12


def test_kl_one_dim_closed_form():
    # projection scaled so p = sigmoid(1), q = sigmoid(0) = 0.5
    w = np.array([[1.0]])
    b = np.array([0.0])
    p = 1.0 / (1.0 + math.exp(-1.0))
    expect = p * math.log(p / 0.5) + (1 - p) * math.log((1 - p) / 0.5)
    got = kl_hidden(np.array([1.0]), np.array([0.0]), w, b)
    assert abs(got - expect) < 1e-12


def test_kl_nonnegative_and_matches_scalar_oracle():
    rng = np.random.default_rng(5)
    for _ in range(10):
        zp = rng.standard_normal((1, 4)) * 2
        zq = rng.standard_normal((1, 4)) * 2
        loss, dzp, dzq = bernoulli_kl_and_grad(zp, zq)
        assert loss[0] >= 0
        expect = 0.0
        for j in range(4):
            p = 1.0 / (1.0 + math.exp(-zp[0, j]))
            q = 1.0 / (1.0 + math.exp(-zq[0, j]))
            expect += p * math.log(p / q) + (1 - p) * math.log((1 - p) / (1 - q))
        assert abs(loss[0] - expect) < 1e-10
        eps = 1e-7
        for side, grad in ((0, dzp), (1, dzq)):
            arr = [zp, zq][side]
            orig = arr[0, 2]
            arr[0, 2] = orig + eps
            lp = bernoulli_kl_and_grad(zp, zq)[0][0]
            arr[0, 2] = orig - eps
            lm = bernoulli_kl_and_grad(zp, zq)[0][0]
            arr[0, 2] = orig
            assert abs((lp - lm) / (2 * eps) - grad[0, 2]) < 1e-7


# ---------------------------------------------------------------------------
# composite forward ops
# ---------------------------------------------------------------------------

def embed_inputs(rng, T, d):
    return rng.standard_normal((T, d))


def test_prior_forward_zero_params_gives_half():
    cfg = tiny_cfg()
    params = make_params(cfg, zero=True)
    rng = np.random.default_rng(6)
    out = prior_forward(params, cfg, embed_inputs(rng, 3, 4), embed_inputs(rng, 3, 4))
    assert np.allclose(out["e_r"], 0.5)
    assert np.allclose(out["e_p"], 0.5)


def test_prior_forward_deterministic():
    cfg = tiny_cfg()
    params = make_params(cfg, seed=7)
    rng = np.random.default_rng(7)
    x_emo, x_sem = embed_inputs(rng, 4, 4), embed_inputs(rng, 4, 4)
    a = prior_forward(params, cfg, x_emo, x_sem)
    b = prior_forward(params, cfg, x_emo.copy(), x_sem.copy())
    for key in a:
        assert np.array_equal(a[key], b[key])


def test_prior_forward_equals_manual_composition():
    cfg = tiny_cfg()
    params = make_params(cfg, seed=8)
    rng = np.random.default_rng(8)
    x_emo, x_sem = embed_inputs(rng, 4, 4), embed_inputs(rng, 4, 4)
    out = prior_forward(params, cfg, x_emo, x_sem)

    def pool(prefix, x):
        states = encode_sequence([cell_view(params, f"{prefix}.enc", 0)], x)
        pooled, _ = attention_pool(params[f"{prefix}.attn.w"],
                                   params[f"{prefix}.attn.v"], states)
        return pooled

    h_p, h_e = pool("sel.prior", x_emo), pool("sel.inter", x_sem)
    _, h_pe = fuse(h_p, h_e, params["sel.fuse_p.w"], params["sel.fuse_p.b"])
    e_r, _ = predict_post_emotion(h_pe, params["sel.head_r.w"], params["sel.head_r.b"])
    assert np.allclose(out["h_pe"], h_pe, atol=1e-12)
    assert np.allclose(out["e_r"], e_r, atol=1e-12)


def test_recognition_requires_response():
    cfg = tiny_cfg()
    params = make_params(cfg)
    with pytest.raises(ValidationError):
        recognition_forward(params, cfg, np.zeros((2, 4)), None)


def test_recognition_identical_sequences_still_fuse_two_encoders():
    cfg = tiny_cfg()
    params = make_params(cfg, seed=9)
    rng = np.random.default_rng(9)
    x = embed_inputs(rng, 3, 4)
    out = recognition_forward(params, cfg, x, x.copy())
    # recog and inter encoders have different parameters, so pooled states differ
    assert not np.allclose(out["h_r"], out["h_e"])
    _, expect = fuse(out["h_r"], out["h_e"], params["sel.fuse_r.w"],
                     params["sel.fuse_r.b"])
    assert np.allclose(out["h_re"], expect, atol=1e-12)


def test_intermediate_encoder_is_shared():
    cfg = tiny_cfg()
    params = make_params(cfg, seed=10)
    rng = np.random.default_rng(10)
    x_emo, x_sem, r_sem = (embed_inputs(rng, 3, 4) for _ in range(3))
    before_p = prior_forward(params, cfg, x_emo, x_sem)["h_pe"]
    before_r = recognition_forward(params, cfg, x_sem, r_sem)["h_re"]
    params["sel.inter.enc.l0.wz"] = params["sel.inter.enc.l0.wz"] + 0.1
    after_p = prior_forward(params, cfg, x_emo, x_sem)["h_pe"]
    after_r = recognition_forward(params, cfg, x_sem, r_sem)["h_re"]
    assert not np.allclose(before_p, after_p)
    assert not np.allclose(before_r, after_r)


def test_selector_loss_additivity():
    assert selector_loss(0.0, 0.0, 0.0, 0.0) == 0.0
    assert selector_loss(1.5, 0.25, 0.5, 0.0) == 2.25


# ---------------------------------------------------------------------------
# batched path
# ---------------------------------------------------------------------------

def batch_inputs(rng, cfg, Tp=4, Tr=3, B=3, dtype=np.float64):
    x_emo = rng.standard_normal((Tp, B, cfg.emb_dim)).astype(dtype)
    x_sem = rng.standard_normal((Tp, B, cfg.emb_dim)).astype(dtype)
    r_sem = rng.standard_normal((Tr, B, cfg.emb_dim)).astype(dtype)
    post_mask = np.ones((Tp, B), dtype=dtype)
    post_mask[3, 0] = 0
    resp_mask = np.ones((Tr, B), dtype=dtype)
    resp_mask[2, 2] = 0
    return x_emo, x_sem, r_sem, post_mask, resp_mask


def rand_labels(rng, B):
    e = np.zeros((B, K))
    for b in range(B):
        e[b, rng.integers(K)] = 1.0
    return e


def test_batched_forward_matches_single_reference():
    cfg = tiny_cfg()
    params = make_params(cfg, seed=11)
    rng = np.random.default_rng(11)
    x_emo, x_sem, r_sem, post_mask, resp_mask = batch_inputs(rng, cfg)
    cache = selector_forward(params, cfg, x_emo, x_sem, r_sem, post_mask, resp_mask)
    for b in range(x_emo.shape[1]):
        prior = prior_forward(params, cfg, x_emo[:, b], x_sem[:, b], post_mask[:, b])
        recog = recognition_forward(params, cfg, x_sem[:, b], r_sem[:, b],
                                    post_mask[:, b], resp_mask[:, b])
        assert np.allclose(cache.fused["pe"][b], prior["h_pe"], atol=1e-12)
        assert np.allclose(cache.e_hat["r"][b], prior["e_r"], atol=1e-12)
        assert np.allclose(cache.e_hat["rp"][b], recog["e_rp"], atol=1e-12)
        expect_kl = kl_hidden(prior["h_pe"], recog["h_re"],
                              params["sel.kl.w"], params["sel.kl.b"])
        terms, _ = selector_losses(cache, rand_labels(rng, 3), rand_labels(rng, 3), cfg)
        assert abs(terms["L_KL"][b] - expect_kl) < 1e-10


def batch_loss_and_grads(params, cfg, inputs, e_p, e_r):
    x_emo, x_sem, r_sem, post_mask, resp_mask = inputs
    B = x_emo.shape[1]
    cache = selector_forward(params, cfg, x_emo, x_sem, r_sem, post_mask, resp_mask)
    terms, dz = selector_losses(cache, e_p, e_r, cfg)
    loss = float(np.mean(terms["L_p"] + terms["L_r"] + terms["L_rp"] + terms["L_KL"]))
    grads = {}
    scaled = {k: v / B for k, v in dz.items()}
    dxe, dxs, drs = selector_backward(params, cfg, cache, scaled, grads)
    grads["__x_emo__"], grads["__x_sem__"], grads["__r_sem__"] = dxe, dxs, drs
    return loss, grads


# kl_stop_recognition is excluded: its analytic gradient intentionally
# drops the recognition-side KL path, so it cannot match finite differences
@pytest.mark.parametrize("kw", [
    {},
    {"ce_form": "full"},
    {"share_fusion": True},
    {"kl_direction": "recognition_prior"},
])
def test_selector_gradients_match_finite_differences(kw):
    cfg = tiny_cfg(**kw)
    params = make_params(cfg, seed=12)
    rng = np.random.default_rng(12)
    inputs = batch_inputs(rng, cfg)
    e_p, e_r = rand_labels(rng, 3), rand_labels(rng, 3)

    def loss_fn():
        return batch_loss_and_grads(params, cfg, inputs, e_p, e_r)

    base, grads = loss_fn()
    eps = 1e-6
    check = [k for k in params] + ["__x_emo__", "__x_sem__", "__r_sem__"]
    arrays = dict(params)
    arrays["__x_emo__"], arrays["__x_sem__"], arrays["__r_sem__"] = inputs[0], inputs[1], inputs[2]
    for key in check:
        arr = arrays[key]
        if key in grads:
            g = grads[key]
        else:
            continue
        flat = arr.ravel()
        for i in rng.choice(flat.size, size=min(6, flat.size), replace=False):
            orig = flat[i]
            flat[i] = orig + eps
            lp, _ = loss_fn()
            flat[i] = orig - eps
            lm, _ = loss_fn()
            flat[i] = orig
            num = (lp - lm) / (2 * eps)
            assert abs(num - g.ravel()[i]) < 2e-7, (key, i)


def test_stop_gradient_blocks_recognition_kl_path():
    cfg = tiny_cfg(kl_stop_recognition=True)
    params = make_params(cfg, seed=13)
    rng = np.random.default_rng(13)
    inputs = batch_inputs(rng, cfg)
    cache = selector_forward(params, cfg, *inputs)
    e = rand_labels(rng, 3)
    _, dz = selector_losses(cache, e, e, cfg)
    assert np.all(dz["kl_q"] == 0)
    assert np.any(dz["kl_p"] != 0)


def test_share_fusion_reuses_prior_tensors():
    cfg = tiny_cfg(share_fusion=True)
    params = make_params(cfg, seed=14)
    assert "sel.fuse_r.w" not in params
    assert "sel.head_rp.w" not in params
    rng = np.random.default_rng(14)
    out = recognition_forward(params, cfg, embed_inputs(rng, 3, 4),
                              embed_inputs(rng, 3, 4))
    assert out["e_rp"].shape == (K,)
