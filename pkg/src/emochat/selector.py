"""Target-guided emotion selector.

Two encoder paths predict the response emotion before any text is
generated:

* prior network   — prior encoder (emotional embeddings of the post) +
                    intermediate encoder (semantic embeddings of the post),
                    fused, head W_r.  Available at inference.
* recognition     — recognition encoder (semantic embeddings of the gold
  network           response) + the SAME intermediate encoder, fused,
                    head W_r'.  Training-only teacher.

A shared linear projection maps both fused states to per-dimension
Bernoulli parameters; their KL divergence ties the prior's hidden state
to the recognition network's.  Loss terms:

    L_p   post-emotion prediction from the prior encoder's pooled state
    L_r   response-emotion prediction, prior path
    L_r'  response-emotion prediction, recognition path
    L_KL  Bernoulli KL between the projected fused states
    L_e   = L_p + L_r + L_r' + L_KL        (mean over the batch)

The emotion cross-entropy defaults to the positive-term form
``-sum_k e_k log ê_k`` (``ce_form="positive"``); ``"full"`` switches to
per-class binary cross-entropy.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .config import ModelConfig
from .corpus import NUM_EMOTIONS
from .encoders import (
    accumulate,
    attention_pool,
    attention_pool_backward,
    attention_pool_forward,
    cell_view,
    encode_sequence,
    gru_stack_backward,
    gru_stack_forward,
    init_attention_pool,
    init_gru_stack,
    init_uniform,
    sigmoid,
)
from .errors import ConfigurationError, ShapeError, ValidationError

_softplus = np.logaddexp  # softplus(x) = logaddexp(0, x)


# ---------------------------------------------------------------------------
# parameters
# ---------------------------------------------------------------------------

def init_selector_params(params: dict, rng, cfg: ModelConfig, dtype=np.float32):
    K, h = NUM_EMOTIONS, cfg.hidden
    for name in ("prior", "inter", "recog"):
        init_gru_stack(params, f"sel.{name}.enc", rng, cfg.emb_dim, h,
                       cfg.enc_layers, dtype)
        init_attention_pool(params, f"sel.{name}.attn", rng, h, cfg.attn_dim, dtype)
    sides = ("p",) if cfg.share_fusion else ("p", "r")
    for side in sides:
        params[f"sel.fuse_{side}.w"] = init_uniform(rng, (2 * h, h), dtype)
        params[f"sel.fuse_{side}.b"] = init_uniform(rng, (h,), dtype)
    heads = ("p", "r") if cfg.share_fusion else ("p", "r", "rp")
    for head in heads:
        params[f"sel.head_{head}.w"] = init_uniform(rng, (h, K), dtype)
        params[f"sel.head_{head}.b"] = init_uniform(rng, (K,), dtype)
    params["sel.kl.w"] = init_uniform(rng, (h, cfg.kl_dim), dtype)
    params["sel.kl.b"] = init_uniform(rng, (cfg.kl_dim,), dtype)


def _fusion_key(cfg: ModelConfig, side: str) -> str:
    if side == "r" and cfg.share_fusion:
        side = "p"
    return f"sel.fuse_{side}"


def _head_key(cfg: ModelConfig, head: str) -> str:
    if head == "rp" and cfg.share_fusion:
        head = "r"
    return f"sel.head_{head}"


# ---------------------------------------------------------------------------
# losses (closed-form gradients w.r.t. preactivations)
# ---------------------------------------------------------------------------

def ce_loss_and_grad(z: np.ndarray, e: np.ndarray, form: str = "positive"):
    """Emotion cross-entropy per example.

    Returns (loss (B,), dloss/dz (B, K)).  ``positive`` keeps only the
    positive-label terms -e*log(sigmoid(z)); ``full`` is standard BCE.
    """
    if np.any(e.sum(axis=-1) == 0):
        raise ConfigurationError("emotion labels must have at least one positive")
    p = sigmoid(z)
    if form == "positive":
        loss = (e * _softplus(0.0, -z)).sum(axis=-1)
        dz = -e * (1.0 - p)
    elif form == "full":
        loss = (e * _softplus(0.0, -z) + (1.0 - e) * _softplus(0.0, z)).sum(axis=-1)
        dz = p - e
    else:
        raise ConfigurationError(f"unknown ce_form: {form!r}")
    return loss, dz


def bernoulli_kl_and_grad(zp: np.ndarray, zq: np.ndarray):
    """KL(Bern(sigmoid(zp)) || Bern(sigmoid(zq))), summed over dims.

    Stable in the logits:  p*(sp(-zq) - sp(-zp)) + (1-p)*(sp(zq) - sp(zp)).
    Closed-form gradients: d/dzp = p(1-p)(zp - zq), d/dzq = q - p.
    """
    p = sigmoid(zp)
    q = sigmoid(zq)
    loss = (p * (_softplus(0.0, -zq) - _softplus(0.0, -zp))
            + (1.0 - p) * (_softplus(0.0, zq) - _softplus(0.0, zp))).sum(axis=-1)
    dzp = p * (1.0 - p) * (zp - zq)
    dzq = q - p
    return loss, dzp, dzq


# ---------------------------------------------------------------------------
# reference single-example ops
# ---------------------------------------------------------------------------

def predict_post_emotion(h_tilde: np.ndarray, w: np.ndarray, b: np.ndarray,
                         label: np.ndarray | None = None, form: str = "positive"):
    """ê = sigmoid(h @ w + b); with a label also the CE loss."""
    z = h_tilde @ w + b
    e_hat = sigmoid(z)
    if label is None:
        return e_hat, None
    loss, _ = ce_loss_and_grad(z[None, :], label[None, :], form)
    return e_hat, float(loss[0])


def fuse(h_a: np.ndarray, h_b: np.ndarray, w: np.ndarray, b: np.ndarray):
    """Gated blend: g = sigmoid([h_a; h_b] @ w + b); g*tanh(h_a) + (1-g)*tanh(h_b)."""
    if h_a.shape != h_b.shape:
        raise ShapeError(f"fuse: mismatched inputs {h_a.shape} vs {h_b.shape}")
    gate = sigmoid(np.concatenate([h_a, h_b], axis=-1) @ w + b)
    fused = gate * np.tanh(h_a) + (1.0 - gate) * np.tanh(h_b)
    return gate, fused


def kl_hidden(h_pe: np.ndarray, h_re: np.ndarray, w_kl: np.ndarray,
              b_kl: np.ndarray) -> float:
    """Bernoulli KL between the shared projections of the two fused states."""
    loss, _, _ = bernoulli_kl_and_grad(
        (h_pe @ w_kl + b_kl)[None, :], (h_re @ w_kl + b_kl)[None, :])
    return float(loss[0])


def _encode_pool(params, cfg, prefix, embedded, mask):
    stack = [cell_view(params, f"{prefix}.enc", i) for i in range(cfg.enc_layers)]
    states = encode_sequence(stack, embedded, mask)
    pooled, _ = attention_pool(params[f"{prefix}.attn.w"], params[f"{prefix}.attn.v"],
                               states, mask)
    return pooled


def prior_forward(params: dict, cfg: ModelConfig, post_emotional: np.ndarray,
                  post_semantic: np.ndarray, mask: np.ndarray | None = None) -> dict:
    """Single-example prior network: (h_p, h_e, h_pe, e_p, e_r)."""
    h_p = _encode_pool(params, cfg, "sel.prior", post_emotional, mask)
    h_e = _encode_pool(params, cfg, "sel.inter", post_semantic, mask)
    fk = _fusion_key(cfg, "p")
    _, h_pe = fuse(h_p, h_e, params[f"{fk}.w"], params[f"{fk}.b"])
    e_p, _ = predict_post_emotion(h_p, params["sel.head_p.w"], params["sel.head_p.b"])
    hk = _head_key(cfg, "r")
    e_r, _ = predict_post_emotion(h_pe, params[f"{hk}.w"], params[f"{hk}.b"])
    return {"h_p": h_p, "h_e": h_e, "h_pe": h_pe, "e_p": e_p, "e_r": e_r}


def recognition_forward(params: dict, cfg: ModelConfig, post_semantic: np.ndarray,
                        response_semantic: np.ndarray | None,
                        post_mask: np.ndarray | None = None,
                        response_mask: np.ndarray | None = None) -> dict:
    """Single-example recognition network: (h_r, h_e, h_re, e_rp)."""
    if response_semantic is None:
        raise ValidationError("recognition network requires the gold response")
    h_r = _encode_pool(params, cfg, "sel.recog", response_semantic, response_mask)
    h_e = _encode_pool(params, cfg, "sel.inter", post_semantic, post_mask)
    fk = _fusion_key(cfg, "r")
    _, h_re = fuse(h_r, h_e, params[f"{fk}.w"], params[f"{fk}.b"])
    hk = _head_key(cfg, "rp")
    e_rp, _ = predict_post_emotion(h_re, params[f"{hk}.w"], params[f"{hk}.b"])
    return {"h_r": h_r, "h_e": h_e, "h_re": h_re, "e_rp": e_rp}


def selector_loss(l_p, l_r, l_rp, l_kl) -> float:
    return l_p + l_r + l_rp + l_kl


# ---------------------------------------------------------------------------
# batched forward/backward
# ---------------------------------------------------------------------------

@dataclass
class SelectorCache:
    enc: dict          # per path: GRU stack caches
    pool: dict         # per path: attention pool caches
    pooled: dict       # per path: pooled vectors h_p / h_e / h_r
    fuse: dict         # per side: (gate, tanh_a, tanh_b)
    fused: dict        # h_pe, h_re
    z: dict            # head preactivations z_p, z_r, z_rp
    e_hat: dict        # predictions e_p, e_r, e_rp
    zkl: tuple         # (z from h_pe, z from h_re)


def _fuse_forward(params, key, h_a, h_b):
    w, b = params[f"{key}.w"], params[f"{key}.b"]
    cat = np.concatenate([h_a, h_b], axis=-1)
    gate = sigmoid(cat @ w + b)
    ta, tb = np.tanh(h_a), np.tanh(h_b)
    return gate * ta + (1.0 - gate) * tb, (cat, gate, ta, tb)


def _fuse_backward(params, key, dfused, cache, grads):
    w = params[f"{key}.w"]
    cat, gate, ta, tb = cache
    h = gate.shape[-1]
    dgate = dfused * (ta - tb)
    dzg = dgate * gate * (1.0 - gate)
    accumulate(grads, f"{key}.w", cat.T @ dzg)
    accumulate(grads, f"{key}.b", dzg.sum(axis=0))
    dcat = dzg @ w.T
    da = dfused * gate * (1.0 - ta * ta) + dcat[:, :h]
    db = dfused * (1.0 - gate) * (1.0 - tb * tb) + dcat[:, h:]
    return da, db


def _head_forward(params, key, h):
    return h @ params[f"{key}.w"] + params[f"{key}.b"]


def _head_backward(params, key, h, dz, grads):
    accumulate(grads, f"{key}.w", h.T @ dz)
    accumulate(grads, f"{key}.b", dz.sum(axis=0))
    return dz @ params[f"{key}.w"].T


def selector_forward(params: dict, cfg: ModelConfig, x_emo: np.ndarray,
                     x_sem: np.ndarray, r_sem: np.ndarray, post_mask: np.ndarray,
                     resp_mask: np.ndarray) -> SelectorCache:
    enc, pool, pooled = {}, {}, {}
    for path, x, m in (("prior", x_emo, post_mask), ("inter", x_sem, post_mask),
                       ("recog", r_sem, resp_mask)):
        hs, caches = gru_stack_forward(params, f"sel.{path}.enc", cfg.enc_layers, x, m)
        pooled[path], _, pool[path] = attention_pool_forward(
            params, f"sel.{path}.attn", hs, m)
        enc[path] = caches

    fused, fcache = {}, {}
    fused["pe"], fcache["p"] = _fuse_forward(
        params, _fusion_key(cfg, "p"), pooled["prior"], pooled["inter"])
    fused["re"], fcache["r"] = _fuse_forward(
        params, _fusion_key(cfg, "r"), pooled["recog"], pooled["inter"])

    z = {
        "p": _head_forward(params, "sel.head_p", pooled["prior"]),
        "r": _head_forward(params, _head_key(cfg, "r"), fused["pe"]),
        "rp": _head_forward(params, _head_key(cfg, "rp"), fused["re"]),
    }
    e_hat = {k: sigmoid(v) for k, v in z.items()}
    zkl = (fused["pe"] @ params["sel.kl.w"] + params["sel.kl.b"],
           fused["re"] @ params["sel.kl.w"] + params["sel.kl.b"])
    return SelectorCache(enc=enc, pool=pool, pooled=pooled, fuse=fcache,
                         fused=fused, z=z, e_hat=e_hat, zkl=zkl)


def selector_losses(cache: SelectorCache, e_p: np.ndarray, e_r: np.ndarray,
                    cfg: ModelConfig):
    """Per-pair loss terms and their preactivation gradients.

    Returns (terms, dz) where terms maps L_p/L_r/L_rp/L_KL to (B,) arrays
    and dz maps the matching preactivation gradient arrays (per-pair,
    unscaled by the batch mean).
    """
    terms, dz = {}, {}
    terms["L_p"], dz["p"] = ce_loss_and_grad(cache.z["p"], e_p, cfg.ce_form)
    terms["L_r"], dz["r"] = ce_loss_and_grad(cache.z["r"], e_r, cfg.ce_form)
    terms["L_rp"], dz["rp"] = ce_loss_and_grad(cache.z["rp"], e_r, cfg.ce_form)
    zp, zq = cache.zkl
    if cfg.kl_direction == "recognition_prior":
        loss, dq_side, dp_side = bernoulli_kl_and_grad(zq, zp)
    else:
        loss, dp_side, dq_side = bernoulli_kl_and_grad(zp, zq)
    if cfg.kl_stop_recognition:
        dq_side = np.zeros_like(dq_side)
    terms["L_KL"] = loss
    dz["kl_p"], dz["kl_q"] = dp_side, dq_side
    return terms, dz


def selector_backward(params: dict, cfg: ModelConfig, cache: SelectorCache,
                      dz: dict, grads: dict):
    """Backprop from preactivation grads to the three embedded inputs.

    ``dz`` uses the keys of :func:`selector_losses` (already scaled by
    any batch-mean factor); returns (dx_emo, dx_sem, dr_sem).
    """
    dh_pe = _head_backward(params, _head_key(cfg, "r"), cache.fused["pe"],
                           dz["r"], grads)
    dh_re = _head_backward(params, _head_key(cfg, "rp"), cache.fused["re"],
                           dz["rp"], grads)
    accumulate(grads, "sel.kl.w",
               cache.fused["pe"].T @ dz["kl_p"] + cache.fused["re"].T @ dz["kl_q"])
    accumulate(grads, "sel.kl.b", dz["kl_p"].sum(axis=0) + dz["kl_q"].sum(axis=0))
    dh_pe += dz["kl_p"] @ params["sel.kl.w"].T
    dh_re += dz["kl_q"] @ params["sel.kl.w"].T

    dprior, dinter_1 = _fuse_backward(params, _fusion_key(cfg, "p"), dh_pe,
                                      cache.fuse["p"], grads)
    drecog, dinter_2 = _fuse_backward(params, _fusion_key(cfg, "r"), dh_re,
                                      cache.fuse["r"], grads)
    dprior += _head_backward(params, "sel.head_p", cache.pooled["prior"],
                             dz["p"], grads)
    dpooled = {"prior": dprior, "inter": dinter_1 + dinter_2, "recog": drecog}

    dx = {}
    for path in ("prior", "inter", "recog"):
        dhs = attention_pool_backward(params, f"sel.{path}.attn", dpooled[path],
                                      cache.pool[path], grads)
        dx[path] = gru_stack_backward(params, f"sel.{path}.enc", dhs,
                                      cache.enc[path], grads)
    return dx["prior"], dx["inter"], dx["recog"]
