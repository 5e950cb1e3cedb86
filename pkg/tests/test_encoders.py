import math

import numpy as np
import pytest

from emochat.encoders import (
    GATE_KEYS,
    accumulate,
    attention_pool,
    attention_pool_backward,
    attention_pool_forward,
    cell_view,
    embed_backward,
    embed_forward,
    encode_sequence,
    gru_stack_backward,
    gru_stack_forward,
    gru_step,
    init_attention_pool,
    init_gru_stack,
    masked_softmax,
)
from emochat.errors import ShapeError, ValidationError


def zero_cell(d, h, dtype=np.float64):
    cell = {}
    for key in GATE_KEYS:
        if key.startswith("w"):
            cell[key] = np.zeros((d, h), dtype=dtype)
        elif key.startswith("u"):
            cell[key] = np.zeros((h, h), dtype=dtype)
        else:
            cell[key] = np.zeros(h, dtype=dtype)
    return cell


def rand_cell(rng, d, h):
    cell = zero_cell(d, h)
    for key in cell:
        cell[key] = rng.standard_normal(cell[key].shape) * 0.4
    return cell


def oracle_gru_step(cell, h_prev, x):
    """Scalar-loop re-implementation of the gate formulas."""
    h = len(h_prev)

    def affine(wk, uk, bk, state, j):
        a = cell[bk][j]
        a += sum(x[i] * cell[wk][i, j] for i in range(len(x)))
        a += sum(state[k] * cell[uk][k, j] for k in range(h))
        return a

    z = [1.0 / (1.0 + math.exp(-affine("wz", "uz", "bz", h_prev, j))) for j in range(h)]
    r = [1.0 / (1.0 + math.exp(-affine("wr", "ur", "br", h_prev, j))) for j in range(h)]
    rh = [r[k] * h_prev[k] for k in range(h)]
    n = [math.tanh(affine("wn", "un", "bn", rh, j)) for j in range(h)]
    return np.array([(1.0 - z[j]) * h_prev[j] + z[j] * n[j] for j in range(h)])


# ---------------------------------------------------------------------------
# gru_step
# ---------------------------------------------------------------------------

def test_gru_step_zero_weights_halves_state():
    cell = zero_cell(3, 4)
    v = np.array([1.0, -2.0, 0.5, 3.0])
    out = gru_step(cell, v, np.ones(3))
    assert np.allclose(out, 0.5 * v)


def test_gru_step_zero_everything():
    cell = zero_cell(2, 3)
    out = gru_step(cell, np.zeros(3), np.zeros(2))
    assert np.array_equal(out, np.zeros(3))


def test_gru_step_matches_scalar_oracle():
    rng = np.random.default_rng(0)
    for _ in range(5):
        cell = rand_cell(rng, 4, 4)
        h_prev = rng.standard_normal(4)
        x = rng.standard_normal(4)
        assert np.allclose(gru_step(cell, h_prev, x), oracle_gru_step(cell, h_prev, x),
                           atol=1e-12)


def test_gru_step_shape_error():
    with pytest.raises(ShapeError):
        gru_step(zero_cell(3, 4), np.zeros(4), np.zeros(5))


def test_gru_step_bounded_by_state_and_one():
    rng = np.random.default_rng(1)
    for _ in range(20):
        cell = rand_cell(rng, 3, 5)
        h_prev = rng.standard_normal(5) * 3
        out = gru_step(cell, h_prev, rng.standard_normal(3))
        bound = max(np.max(np.abs(h_prev)), 1.0) + 1e-12
        assert np.all(np.abs(out) <= bound)


# ---------------------------------------------------------------------------
# encode_sequence
# ---------------------------------------------------------------------------

def test_encode_length_one_equals_single_step():
    rng = np.random.default_rng(2)
    cell = rand_cell(rng, 3, 4)
    x = rng.standard_normal((1, 3))
    states = encode_sequence([cell], x)
    assert np.array_equal(states[0], gru_step(cell, np.zeros(4), x[0]))


def test_encode_pad_positions_freeze_state():
    rng = np.random.default_rng(3)
    cell = rand_cell(rng, 3, 4)
    x = rng.standard_normal((5, 3))
    mask = np.array([1.0, 1.0, 0.0, 0.0, 0.0])
    states = encode_sequence([cell], x, mask)
    assert np.array_equal(states[2], states[1])
    assert np.array_equal(states[4], states[1])


def test_encode_equals_chained_steps():
    rng = np.random.default_rng(4)
    cell = rand_cell(rng, 3, 4)
    x = rng.standard_normal((3, 3))
    states = encode_sequence([cell], x)
    h = np.zeros(4)
    for t in range(3):
        h = gru_step(cell, h, x[t])
        assert np.array_equal(states[t], h)


def test_encode_two_layer_feeds_top():
    rng = np.random.default_rng(5)
    stack = [rand_cell(rng, 3, 4), rand_cell(rng, 4, 4)]
    x = rng.standard_normal((4, 3))
    top = encode_sequence(stack, x)
    lower = encode_sequence([stack[0]], x)
    assert np.array_equal(top, encode_sequence([stack[1]], lower))


def test_encode_empty_rejected():
    with pytest.raises(ShapeError):
        encode_sequence([zero_cell(3, 4)], np.zeros((0, 3)))


# ---------------------------------------------------------------------------
# attention pooling
# ---------------------------------------------------------------------------

def test_pool_single_state_identity():
    rng = np.random.default_rng(6)
    w, v = rng.standard_normal((4, 4)), rng.standard_normal(4)
    h = rng.standard_normal((1, 4))
    pooled, weights = attention_pool(w, v, h)
    assert weights.tolist() == [1.0]
    assert np.allclose(pooled, h[0])


def test_pool_identical_states_split_evenly():
    rng = np.random.default_rng(7)
    w, v = rng.standard_normal((4, 4)), rng.standard_normal(4)
    h = np.tile(rng.standard_normal(4), (2, 1))
    _, weights = attention_pool(w, v, h)
    assert np.allclose(weights, [0.5, 0.5])


def test_pool_matches_scalar_softmax_oracle():
    rng = np.random.default_rng(8)
    w, v = rng.standard_normal((4, 3)), rng.standard_normal(3)
    h = rng.standard_normal((4, 4))
    pooled, weights = attention_pool(w, v, h)
    scores = [sum(v[a] * math.tanh(sum(h[t, i] * w[i, a] for i in range(4)))
                  for a in range(3)) for t in range(4)]
    exps = [math.exp(s - max(scores)) for s in scores]
    expect = np.array([e / sum(exps) for e in exps])
    assert np.allclose(weights, expect, atol=1e-12)
    assert np.allclose(pooled, expect @ h, atol=1e-12)


def test_pool_simplex_and_mask_zero():
    rng = np.random.default_rng(9)
    w, v = rng.standard_normal((4, 4)), rng.standard_normal(4)
    h = rng.standard_normal((6, 4))
    mask = np.array([1, 1, 1, 0, 0, 0], dtype=np.float64)
    _, weights = attention_pool(w, v, h, mask)
    assert np.all(weights >= 0)
    assert abs(weights.sum() - 1.0) < 1e-6
    assert np.all(weights[3:] == 0)


def test_pool_score_shift_invariance():
    rng = np.random.default_rng(10)
    scores = rng.standard_normal((5, 2))
    mask = np.ones((5, 2))
    a = masked_softmax(scores, mask)
    b = masked_softmax(scores + 7.3, mask)
    assert np.allclose(a, b, atol=1e-6)


def test_pool_all_masked_rejected():
    w, v = np.zeros((4, 4)), np.zeros(4)
    with pytest.raises(ValidationError):
        attention_pool(w, v, np.zeros((3, 4)), np.zeros(3))


# ---------------------------------------------------------------------------
# batched layers vs reference ops
# ---------------------------------------------------------------------------

def build_stack(rng, prefix, d, h, layers, dtype=np.float64):
    params = {}
    init_gru_stack(params, f"{prefix}.enc", rng, d, h, layers, dtype)
    init_attention_pool(params, f"{prefix}.attn", rng, h, h, dtype)
    return params


def test_batched_stack_matches_reference_fold():
    rng = np.random.default_rng(11)
    params = build_stack(rng, "p", d=3, h=4, layers=2)
    T, B = 5, 3
    x = rng.standard_normal((T, B, 3))
    lengths = [5, 2, 4]
    mask = (np.arange(T)[:, None] < np.array(lengths)[None, :]).astype(np.float64)
    hs, _ = gru_stack_forward(params, "p.enc", 2, x, mask)
    stack = [cell_view(params, "p.enc", i) for i in range(2)]
    for b in range(B):
        ref = encode_sequence(stack, x[:, b], mask[:, b])
        assert np.allclose(hs[:, b], ref, atol=1e-12)


def test_batched_pool_matches_reference():
    rng = np.random.default_rng(12)
    params = build_stack(rng, "p", d=3, h=4, layers=1)
    T, B = 4, 2
    hs = rng.standard_normal((T, B, 4))
    mask = np.ones((T, B))
    mask[3, 1] = 0
    pooled, weights, _ = attention_pool_forward(params, "p.attn", hs, mask)
    for b in range(B):
        ref_pool, ref_w = attention_pool(params["p.attn.w"], params["p.attn.v"],
                                         hs[:, b], mask[:, b])
        assert np.allclose(pooled[b], ref_pool, atol=1e-12)
        assert np.allclose(weights[:, b], ref_w, atol=1e-12)


def fd_check(params, keys, loss_fn, extras=(), eps=1e-6, tol=2e-7, rng=None):
    """Central-difference check of analytic grads for selected tensors."""
    base_loss, grads = loss_fn()
    for key in keys:
        arr = params[key] if key in params else dict(extras)[key]
        g = grads[key]
        flat = arr.ravel()
        idxs = rng.choice(flat.size, size=min(12, flat.size), replace=False)
        for i in idxs:
            orig = flat[i]
            flat[i] = orig + eps
            lp, _ = loss_fn()
            flat[i] = orig - eps
            lm, _ = loss_fn()
            flat[i] = orig
            num = (lp - lm) / (2 * eps)
            assert abs(num - g.ravel()[i]) < tol, (key, i, num, g.ravel()[i])


def test_stack_and_pool_gradients_match_finite_differences():
    rng = np.random.default_rng(13)
    params = build_stack(rng, "p", d=3, h=4, layers=2)
    T, B = 4, 2
    x = rng.standard_normal((T, B, 3))
    mask = np.ones((T, B))
    mask[3, 0] = 0
    probe = rng.standard_normal((B, 4))

    def loss_fn():
        hs, caches = gru_stack_forward(params, "p.enc", 2, x, mask)
        pooled, _, pcache = attention_pool_forward(params, "p.attn", hs, mask)
        loss = float(np.sum(pooled * probe))
        grads = {}
        dhs = attention_pool_backward(params, "p.attn", probe.copy(), pcache, grads)
        dx = gru_stack_backward(params, "p.enc", dhs, caches, grads)
        grads["__x__"] = dx
        return loss, grads

    keys = [k for k in params] + ["__x__"]
    fd_check(params, keys, loss_fn, extras={"__x__": x}, rng=rng)


def test_embed_forward_backward():
    rng = np.random.default_rng(14)
    table = rng.standard_normal((7, 3))
    ids = np.array([[1, 2], [2, 2]])
    out = embed_forward(table, ids)
    assert out.shape == (2, 2, 3)
    assert np.array_equal(out[1, 0], table[2])
    grads = {}
    dout = np.ones((2, 2, 3))
    embed_backward(grads, "emb", table, ids, dout)
    # id 2 appears three times, id 1 once, id 0 never
    assert np.allclose(grads["emb"][2], 3.0)
    assert np.allclose(grads["emb"][1], 1.0)
    assert np.all(grads["emb"][0] == 0)


def test_accumulate_adds_in_place():
    grads = {}
    accumulate(grads, "a", np.ones(3))
    accumulate(grads, "a", np.ones(3))
    assert np.allclose(grads["a"], 2.0)
