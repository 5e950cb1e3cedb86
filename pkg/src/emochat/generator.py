"""Emotion-biased response generator.

A fresh GRU encoder reads the post (semantic embeddings).  The predicted
emotion vector ê is injected softly: V_e = ê @ W_e uses the full
probability vector, never an argmax category.  Each decoder step t:

    s_t  = GRU(s'_{t-1}, [y_{t-1}; V_e])          (top layer; lower layers
                                                   carry their own states)
    u_i  = v · tanh(h_i W_1 + s_t W_2 + V_e W_3)   emotion-biased scores
    c_t  = sum_i softmax(u)_i h_i                  over unmasked i
    s'_t = [s_t; c_t] @ W_4
    logits_t = s'_t @ W_out + b_out

The decoder starts from s'_0 = tanh(h_T @ W_init).  With ``plain=True``
(or e_hat=None) V_e is zero and the W_3 term is skipped entirely; that
code path is the seq2seq-attention baseline used for pre-training, and
with W_3 = 0 the full path reproduces it exactly (the warm-start
compatibility contract).

During training the decoder receives the recognition network's ê_r';
at inference it receives the prior network's ê_r.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .config import ModelConfig
from .corpus import BOS_ID, EOS_ID, NUM_EMOTIONS
from .encoders import (
    _layer_backward,
    _layer_forward,
    accumulate,
    cell_view,
    encode_sequence,
    gru_stack_backward,
    gru_stack_forward,
    gru_step,
    init_gru_stack,
    init_uniform,
    masked_softmax,
    sigmoid,
)
from .errors import ShapeError, ValidationError


# ---------------------------------------------------------------------------
# parameters
# ---------------------------------------------------------------------------

def init_generator_params(params: dict, rng, cfg: ModelConfig, dtype=np.float32):
    h, a, de = cfg.hidden, cfg.attn_dim, cfg.emo_dim
    init_gru_stack(params, "gen.enc", rng, cfg.emb_dim, h, cfg.enc_layers, dtype)
    params["gen.emo.w"] = init_uniform(rng, (NUM_EMOTIONS, de), dtype)
    params["gen.attn.w1"] = init_uniform(rng, (h, a), dtype)
    params["gen.attn.w2"] = init_uniform(rng, (h, a), dtype)
    params["gen.attn.w3"] = init_uniform(rng, (de, a), dtype)
    params["gen.attn.v"] = init_uniform(rng, (a,), dtype)
    init_gru_stack(params, "gen.dec", rng, cfg.emb_dim + de, h, cfg.dec_layers, dtype)
    params["gen.fuse.w"] = init_uniform(rng, (2 * h, h), dtype)
    params["gen.init.w"] = init_uniform(rng, (h, h), dtype)
    params["gen.out.w"] = init_uniform(rng, (h, cfg.vocab_size), dtype)
    params["gen.out.b"] = init_uniform(rng, (cfg.vocab_size,), dtype)


# ---------------------------------------------------------------------------
# reference single-example ops
# ---------------------------------------------------------------------------

def embed_emotion(e_hat: np.ndarray, w_e: np.ndarray) -> np.ndarray:
    """Soft injection: V_e = e_hat @ W_e on the full probability vector."""
    if e_hat.shape[-1] != w_e.shape[0]:
        raise ShapeError(f"emotion vector K={e_hat.shape[-1]} vs W_e rows {w_e.shape[0]}")
    return e_hat @ w_e


def emotion_biased_attention(states: np.ndarray, s_t: np.ndarray, v_e: np.ndarray,
                             w1: np.ndarray, w2: np.ndarray, w3: np.ndarray,
                             v: np.ndarray, mask: np.ndarray | None = None):
    """Attention over (T, h) states; returns (weights, context)."""
    T = states.shape[0]
    if mask is None:
        mask = np.ones(T, dtype=states.dtype)
    scores = np.tanh(states @ w1 + s_t @ w2 + v_e @ w3) @ v
    weights = masked_softmax(scores, mask.astype(scores.dtype))
    return weights, weights @ states


def decoder_step(params: dict, cfg: ModelConfig, s_fused_prev: np.ndarray,
                 lower_states: list[np.ndarray], y_emb: np.ndarray,
                 v_e: np.ndarray, enc_states: np.ndarray,
                 enc_mask: np.ndarray | None = None):
    """One decode step; returns (s_t, s_fused_t, logits, new_lower_states).

    Lower decoder layers carry their own recurrent states; the top layer's
    incoming state is the previous fused state s'_{t-1}.
    """
    x = np.concatenate([y_emb, v_e])
    new_lower = []
    for layer in range(cfg.dec_layers - 1):
        h = gru_step(cell_view(params, "gen.dec", layer), lower_states[layer], x)
        new_lower.append(h)
        x = h
    s_t = gru_step(cell_view(params, "gen.dec", cfg.dec_layers - 1), s_fused_prev, x)
    _, c_t = emotion_biased_attention(
        enc_states, s_t, v_e, params["gen.attn.w1"], params["gen.attn.w2"],
        params["gen.attn.w3"], params["gen.attn.v"], enc_mask)
    s_fused = np.concatenate([s_t, c_t]) @ params["gen.fuse.w"]
    logits = s_fused @ params["gen.out.w"] + params["gen.out.b"]
    return s_t, s_fused, logits, new_lower


def nll_loss(logits: np.ndarray, targets: np.ndarray,
             mask: np.ndarray | None = None) -> float:
    """Mean -log softmax(logits)[target] over unmasked positions."""
    if logits.shape[0] != len(targets):
        raise ShapeError(f"{logits.shape[0]} logit rows vs {len(targets)} targets")
    if mask is None:
        mask = np.ones(len(targets), dtype=logits.dtype)
    shifted = logits - logits.max(axis=-1, keepdims=True)
    log_z = np.log(np.exp(shifted).sum(axis=-1))
    log_p = shifted[np.arange(len(targets)), targets] - log_z
    return float(-(mask * log_p).sum() / mask.sum())


def greedy_decode(params: dict, cfg: ModelConfig, post_ids, e_hat: np.ndarray,
                  max_len: int | None = None) -> list[int]:
    """Argmax decoding (ties take the lowest token id) until EOS or max_len."""
    if max_len is None:
        max_len = cfg.max_len
    if max_len < 1:
        raise ValidationError("max_len must be >= 1")
    table = params["emb.semantic"]
    embedded = table[np.asarray(post_ids, dtype=np.int64)]
    stack = [cell_view(params, "gen.enc", i) for i in range(cfg.enc_layers)]
    enc_states = encode_sequence(stack, embedded)
    s_fused = np.tanh(enc_states[-1] @ params["gen.init.w"])
    v_e = embed_emotion(e_hat.astype(table.dtype), params["gen.emo.w"])
    lower = [np.zeros(cfg.hidden, dtype=table.dtype)
             for _ in range(cfg.dec_layers - 1)]
    token = BOS_ID
    out: list[int] = []
    for _ in range(max_len):
        _, s_fused, logits, lower = decoder_step(
            params, cfg, s_fused, lower, table[token], v_e, enc_states)
        token = int(np.argmax(logits))
        if token == EOS_ID:
            break
        out.append(token)
    return out


# ---------------------------------------------------------------------------
# batched teacher-forced path
# ---------------------------------------------------------------------------

@dataclass
class GeneratorCache:
    plain: bool
    enc_caches: list
    enc_hs: np.ndarray      # (Tp, B, h)
    post_mask: np.ndarray
    h_last: np.ndarray
    s0: np.ndarray          # tanh-bridged initial fused state
    e_hat: np.ndarray | None
    v_e: np.ndarray         # (B, de)
    dec_emb: np.ndarray
    low_caches: list
    top_x: np.ndarray       # top-layer input sequence (Td, B, in_top)
    top: dict               # per-step stacks for the top layer + attention
    s_fused: np.ndarray     # (Td, B, h)


def _attention_scores(params, enc_hs, a1, s_t, a3):
    pre = np.tanh(a1 + s_t @ params["gen.attn.w2"] + a3)
    return pre, pre @ params["gen.attn.v"]


def generator_forward(params: dict, cfg: ModelConfig, x_sem: np.ndarray,
                      post_mask: np.ndarray, dec_emb: np.ndarray,
                      e_hat: np.ndarray | None, plain: bool = False):
    """Teacher-forced forward; returns (logits (Td, B, |V|), cache)."""
    Td, B, _ = dec_emb.shape
    h = cfg.hidden
    dtype = dec_emb.dtype
    enc_hs, enc_caches = gru_stack_forward(params, "gen.enc", cfg.enc_layers,
                                           x_sem, post_mask)
    h_last = enc_hs[-1]
    s0 = np.tanh(h_last @ params["gen.init.w"])

    plain = plain or e_hat is None
    if plain:
        v_e = np.zeros((B, cfg.emo_dim), dtype=dtype)
    else:
        v_e = e_hat @ params["gen.emo.w"]
    x = np.concatenate(
        [dec_emb, np.broadcast_to(v_e, (Td, B, cfg.emo_dim))], axis=2)

    ones = np.ones((Td, B), dtype=dtype)
    low_caches = []
    seq = np.ascontiguousarray(x)
    for layer in range(cfg.dec_layers - 1):
        seq, cache = _layer_forward(params, f"gen.dec.l{layer}", seq, ones)
        low_caches.append(cache)
    top_x = seq

    lp = f"gen.dec.l{cfg.dec_layers - 1}"
    xz = np.matmul(top_x, params[f"{lp}.wz"]) + params[f"{lp}.bz"]
    xr = np.matmul(top_x, params[f"{lp}.wr"]) + params[f"{lp}.br"]
    xn = np.matmul(top_x, params[f"{lp}.wn"]) + params[f"{lp}.bn"]

    a1 = np.matmul(enc_hs, params["gen.attn.w1"])  # (Tp, B, a)
    a3 = np.zeros((B, cfg.attn_dim), dtype=dtype) if plain \
        else v_e @ params["gen.attn.w3"]

    top = {k: np.empty((Td, B, h), dtype=dtype)
           for k in ("s_prev", "z", "r", "n", "s", "c")}
    top["pre"] = np.empty((Td,) + enc_hs.shape[:2] + (cfg.attn_dim,), dtype=dtype)
    top["w"] = np.empty((Td,) + enc_hs.shape[:2], dtype=dtype)
    s_fused = np.empty((Td, B, h), dtype=dtype)

    s_prev = s0
    for t in range(Td):
        z = sigmoid(xz[t] + s_prev @ params[f"{lp}.uz"])
        r = sigmoid(xr[t] + s_prev @ params[f"{lp}.ur"])
        n = np.tanh(xn[t] + (r * s_prev) @ params[f"{lp}.un"])
        s_t = (1.0 - z) * s_prev + z * n
        pre, scores = _attention_scores(params, enc_hs, a1, s_t, a3)
        weights = masked_softmax(scores, post_mask)
        c_t = np.einsum("tb,tbh->bh", weights, enc_hs)
        fused = np.concatenate([s_t, c_t], axis=1) @ params["gen.fuse.w"]
        top["s_prev"][t], top["z"][t], top["r"][t], top["n"][t] = s_prev, z, r, n
        top["s"][t], top["c"][t] = s_t, c_t
        top["pre"][t], top["w"][t] = pre, weights
        s_fused[t] = fused
        s_prev = fused

    logits = np.matmul(s_fused, params["gen.out.w"]) + params["gen.out.b"]
    cache = GeneratorCache(plain=plain, enc_caches=enc_caches, enc_hs=enc_hs,
                           post_mask=post_mask, h_last=h_last, s0=s0,
                           e_hat=e_hat, v_e=v_e, dec_emb=dec_emb,
                           low_caches=low_caches, top_x=top_x, top=top,
                           s_fused=s_fused)
    return logits, cache


def generator_backward(params: dict, cfg: ModelConfig, dlogits: np.ndarray,
                       cache: GeneratorCache, grads: dict):
    """Reverse pass; returns (dx_sem, d_dec_emb, de_hat or None)."""
    Td, B, _ = dlogits.shape
    h = cfg.hidden
    lp = f"gen.dec.l{cfg.dec_layers - 1}"
    top = cache.top
    enc_hs = cache.enc_hs

    flat_fused = cache.s_fused.reshape(-1, h)
    flat_dlog = dlogits.reshape(-1, dlogits.shape[-1])
    accumulate(grads, "gen.out.w", flat_fused.T @ flat_dlog)
    accumulate(grads, "gen.out.b", flat_dlog.sum(axis=0))
    ds_fused_seq = np.matmul(dlogits, params["gen.out.w"].T)

    denc_hs = np.zeros_like(enc_hs)
    da1 = np.zeros(enc_hs.shape[:2] + (cfg.attn_dim,), dtype=enc_hs.dtype)
    da3 = np.zeros((B, cfg.attn_dim), dtype=enc_hs.dtype)
    dtop_x = np.empty_like(cache.top_x)
    w2 = params["gen.attn.w2"]
    v = params["gen.attn.v"]
    carry = np.zeros((B, h), dtype=enc_hs.dtype)
    for t in range(Td - 1, -1, -1):
        ds_fused = ds_fused_seq[t] + carry
        cat = np.concatenate([top["s"][t], top["c"][t]], axis=1)
        accumulate(grads, "gen.fuse.w", cat.T @ ds_fused)
        dcat = ds_fused @ params["gen.fuse.w"].T
        ds_t, dc = dcat[:, :h], dcat[:, h:]

        weights = top["w"][t]
        dweights = np.einsum("bh,tbh->tb", dc, enc_hs)
        denc_hs += weights[:, :, None] * dc[None, :, :]
        dscores = weights * (dweights - np.sum(weights * dweights, axis=0,
                                               keepdims=True))
        pre = top["pre"][t]
        accumulate(grads, "gen.attn.v", np.einsum("tba,tb->a", pre, dscores))
        dpre = dscores[:, :, None] * v[None, None, :] * (1.0 - pre * pre)
        da1 += dpre
        dpre_sum = dpre.sum(axis=0)  # (B, a)
        accumulate(grads, "gen.attn.w2", top["s"][t].T @ dpre_sum)
        ds_t = ds_t + dpre_sum @ w2.T
        if not cache.plain:
            da3 += dpre_sum

        # top GRU cell backward (carried state is the fused state)
        s_prev, z, r, n = (top[k][t] for k in ("s_prev", "z", "r", "n"))
        dz = ds_t * (n - s_prev)
        dn = ds_t * z
        ds_prev = ds_t * (1.0 - z)
        dan = dn * (1.0 - n * n)
        dtmp = dan @ params[f"{lp}.un"].T
        dr = dtmp * s_prev
        ds_prev += dtmp * r
        daz = dz * z * (1.0 - z)
        dar = dr * r * (1.0 - r)
        rh = r * s_prev
        x_t = cache.top_x[t]
        for da, wk, uk, bk, rec in ((daz, "wz", "uz", "bz", s_prev),
                                    (dar, "wr", "ur", "br", s_prev),
                                    (dan, "wn", "un", "bn", rh)):
            accumulate(grads, f"{lp}.{wk}", x_t.T @ da)
            accumulate(grads, f"{lp}.{uk}", rec.T @ da)
            accumulate(grads, f"{lp}.{bk}", da.sum(axis=0))
        dtop_x[t] = (daz @ params[f"{lp}.wz"].T + dar @ params[f"{lp}.wr"].T
                     + dan @ params[f"{lp}.wn"].T)
        ds_prev += daz @ params[f"{lp}.uz"].T + dar @ params[f"{lp}.ur"].T
        carry = ds_prev

    # initial-state bridge: s0 = tanh(h_last @ W_init)
    dpre0 = carry * (1.0 - cache.s0 * cache.s0)
    accumulate(grads, "gen.init.w", cache.h_last.T @ dpre0)
    denc_hs[-1] += dpre0 @ params["gen.init.w"].T

    # shared attention projections of the encoder states
    flat_hs = enc_hs.reshape(-1, h)
    accumulate(grads, "gen.attn.w1", flat_hs.T @ da1.reshape(-1, cfg.attn_dim))
    denc_hs += np.matmul(da1, params["gen.attn.w1"].T)

    dv_e = np.zeros_like(cache.v_e)
    if not cache.plain:
        accumulate(grads, "gen.attn.w3", cache.v_e.T @ da3)
        dv_e += da3 @ params["gen.attn.w3"].T

    # lower decoder layers
    d = dtop_x
    for layer in range(cfg.dec_layers - 2, -1, -1):
        d, _ = _layer_backward(params, f"gen.dec.l{layer}", d, cache.low_caches[layer],
                               grads)
    d_dec_emb = d[:, :, :cfg.emb_dim]
    dv_e += d[:, :, cfg.emb_dim:].sum(axis=0)

    de_hat = None
    if not cache.plain:
        accumulate(grads, "gen.emo.w", cache.e_hat.T @ dv_e)
        de_hat = dv_e @ params["gen.emo.w"].T

    dx_sem = gru_stack_backward(params, "gen.enc", denc_hs, cache.enc_caches, grads)
    return dx_sem, d_dec_emb, de_hat


def nll_from_logits(logits: np.ndarray, targets: np.ndarray, mask: np.ndarray):
    """Masked-mean NLL over (Td, B) targets; returns (loss, dlogits)."""
    shifted = logits - logits.max(axis=-1, keepdims=True)
    expd = np.exp(shifted)
    z = expd.sum(axis=-1)
    log_p = np.take_along_axis(shifted, targets[:, :, None], axis=-1)[:, :, 0] \
        - np.log(z)
    count = mask.sum()
    loss = float(-(mask * log_p).sum() / count)
    dlogits = expd / z[:, :, None]
    np.subtract.at(dlogits.reshape(-1, logits.shape[-1]),
                   (np.arange(targets.size), targets.ravel()), 1.0)
    dlogits *= (mask / count)[:, :, None]
    return loss, dlogits
