"""GRU sequence encoding and self-attention pooling.

Two API levels live here:

* Reference ops (``gru_step``, ``encode_sequence``, ``attention_pool``)
  work on single unbatched sequences and are written as literal folds of
  the cell equations.  They are the ground truth the batched path is
  tested against.

* Batched layers (``gru_stack_forward/backward``,
  ``attention_pool_forward/backward``, ``embed_forward/backward``)
  operate on (T, B, ...) arrays, run the recurrence through the kernel
  backend, and implement reverse-mode gradients by hand.

Parameters live in one flat ``{name: ndarray}`` map with dotted names
(``"sel.inter.enc.l0.wz"``).  Matrices right-multiply their inputs:
``y = x @ W + b`` with ``W`` shaped (in_dim, out_dim).

Cell convention (update gate z, reset gate r, candidate n):

    z = sigmoid(x @ wz + h @ uz + bz)
    r = sigmoid(x @ wr + h @ ur + br)
    n = tanh(x @ wn + (r * h) @ un + bn)
    h' = (1 - z) * h + z * n

PAD positions freeze the hidden state and receive pooling weight zero.
"""
from __future__ import annotations

import numpy as np

from . import kernels
from .errors import ShapeError, ValidationError

GATE_KEYS = ("wz", "uz", "bz", "wr", "ur", "br", "wn", "un", "bn")


# ---------------------------------------------------------------------------
# parameter plumbing
# ---------------------------------------------------------------------------

def init_uniform(rng: np.random.Generator, shape, dtype=np.float32, scale=0.08):
    return rng.uniform(-scale, scale, size=shape).astype(dtype)


def accumulate(grads: dict, key: str, delta: np.ndarray):
    if key in grads:
        grads[key] += delta
    else:
        grads[key] = delta.copy() if delta.base is not None else delta


def init_gru_stack(params: dict, prefix: str, rng, in_dim: int, hidden: int,
                   layers: int, dtype=np.float32):
    for layer in range(layers):
        d = in_dim if layer == 0 else hidden
        for key in GATE_KEYS:
            if key.startswith("w"):
                shape = (d, hidden)
            elif key.startswith("u"):
                shape = (hidden, hidden)
            else:
                shape = (hidden,)
            params[f"{prefix}.l{layer}.{key}"] = init_uniform(rng, shape, dtype)


def init_attention_pool(params: dict, prefix: str, rng, hidden: int, attn_dim: int,
                        dtype=np.float32):
    params[f"{prefix}.w"] = init_uniform(rng, (hidden, attn_dim), dtype)
    params[f"{prefix}.v"] = init_uniform(rng, (attn_dim,), dtype)


def cell_view(params: dict, prefix: str, layer: int) -> dict:
    return {key: params[f"{prefix}.l{layer}.{key}"] for key in GATE_KEYS}


# ---------------------------------------------------------------------------
# reference single-sequence ops
# ---------------------------------------------------------------------------

def gru_step(cell: dict, h_prev: np.ndarray, x_t: np.ndarray) -> np.ndarray:
    """One GRU cell update on 1-D vectors."""
    if x_t.shape != (cell["wz"].shape[0],) or h_prev.shape != (cell["uz"].shape[0],):
        raise ShapeError(
            f"gru_step: x {x_t.shape} / h {h_prev.shape} do not match "
            f"cell dims ({cell['wz'].shape[0]}, {cell['uz'].shape[0]})")
    z = _sigmoid(x_t @ cell["wz"] + h_prev @ cell["uz"] + cell["bz"])
    r = _sigmoid(x_t @ cell["wr"] + h_prev @ cell["ur"] + cell["br"])
    n = np.tanh(x_t @ cell["wn"] + (r * h_prev) @ cell["un"] + cell["bn"])
    return (1.0 - z) * h_prev + z * n


def encode_sequence(stack: list[dict], embedded: np.ndarray,
                    mask: np.ndarray | None = None) -> np.ndarray:
    """Literal fold of gru_step over time, layer by layer; top-layer states.

    ``embedded`` is (T, d); ``mask`` (T,) with zeros on PAD positions,
    which copy the previous hidden state unchanged.
    """
    if embedded.ndim != 2 or embedded.shape[0] == 0:
        raise ShapeError("encode_sequence expects a non-empty (T, d) input")
    T = embedded.shape[0]
    if mask is None:
        mask = np.ones(T, dtype=embedded.dtype)
    seq = embedded
    hidden = stack[0]["uz"].shape[0]
    for cell in stack:
        states = np.empty((T, hidden), dtype=embedded.dtype)
        h = np.zeros(hidden, dtype=embedded.dtype)
        for t in range(T):
            h = gru_step(cell, h, seq[t]) if mask[t] else h
            states[t] = h
        seq = states
    return seq


def masked_softmax(scores: np.ndarray, mask: np.ndarray, axis: int = 0) -> np.ndarray:
    """Softmax restricted to unmasked positions (weight exactly 0 elsewhere)."""
    if scores.shape != mask.shape:
        raise ShapeError("scores and mask must share a shape")
    valid = mask > 0
    if not np.all(valid.any(axis=axis)):
        raise ValidationError("softmax over a fully masked axis")
    shifted = np.where(valid, scores, -np.inf)
    shifted = shifted - shifted.max(axis=axis, keepdims=True)
    expd = np.where(valid, np.exp(shifted), 0.0)
    return expd / expd.sum(axis=axis, keepdims=True)


def attention_pool(w: np.ndarray, v: np.ndarray, states: np.ndarray,
                   mask: np.ndarray | None = None):
    """Self-attention pooling of (T, h) states; returns (pooled, weights)."""
    if states.ndim != 2:
        raise ShapeError("attention_pool expects (T, h) states")
    T = states.shape[0]
    if mask is None:
        mask = np.ones(T, dtype=states.dtype)
    scores = np.tanh(states @ w) @ v
    weights = masked_softmax(scores, mask.astype(scores.dtype))
    return weights @ states, weights


def _sigmoid(a):
    out = np.empty_like(a)
    pos = a >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-a[pos]))
    ea = np.exp(a[~pos])
    out[~pos] = ea / (1.0 + ea)
    return out


sigmoid = _sigmoid


# ---------------------------------------------------------------------------
# batched embedding lookup
# ---------------------------------------------------------------------------

def embed_forward(table: np.ndarray, ids: np.ndarray) -> np.ndarray:
    return table[ids]


def embed_backward(grads: dict, key: str, table: np.ndarray, ids: np.ndarray,
                   dout: np.ndarray):
    if key not in grads:
        grads[key] = np.zeros_like(table)
    np.add.at(grads[key], ids.ravel(), dout.reshape(-1, table.shape[1]))


# ---------------------------------------------------------------------------
# batched GRU stack
# ---------------------------------------------------------------------------

def _layer_forward(params, lp: str, x: np.ndarray, mask: np.ndarray, h0=None):
    T, B, _ = x.shape
    hidden = params[f"{lp}.uz"].shape[0]
    if h0 is None:
        h0 = np.zeros((B, hidden), dtype=x.dtype)
    xz = np.matmul(x, params[f"{lp}.wz"]) + params[f"{lp}.bz"]
    xr = np.matmul(x, params[f"{lp}.wr"]) + params[f"{lp}.br"]
    xn = np.matmul(x, params[f"{lp}.wn"]) + params[f"{lp}.bn"]
    hs, zs, rs, ns = kernels.gru_forward(
        xz, xr, xn, params[f"{lp}.uz"], params[f"{lp}.ur"], params[f"{lp}.un"], h0, mask)
    return hs, (x, h0, mask, hs, zs, rs, ns)


def _layer_backward(params, lp: str, dhs: np.ndarray, cache, grads: dict):
    x, h0, mask, hs, zs, rs, ns = cache
    daz, dar, dan, dh0 = kernels.gru_backward(
        dhs, hs, zs, rs, ns,
        params[f"{lp}.uz"], params[f"{lp}.ur"], params[f"{lp}.un"], h0, mask)
    hidden = hs.shape[-1]
    hprev = np.concatenate([h0[None], hs[:-1]], axis=0)
    flat_prev = hprev.reshape(-1, hidden)
    flat_x = x.reshape(-1, x.shape[-1])
    dx = None
    for da, wk, uk, bk, rec_in in (
        (daz, "wz", "uz", "bz", flat_prev),
        (dar, "wr", "ur", "br", flat_prev),
        (dan, "wn", "un", "bn", (rs * hprev).reshape(-1, hidden)),
    ):
        flat_da = da.reshape(-1, hidden)
        accumulate(grads, f"{lp}.{wk}", flat_x.T @ flat_da)
        accumulate(grads, f"{lp}.{uk}", rec_in.T @ flat_da)
        accumulate(grads, f"{lp}.{bk}", flat_da.sum(axis=0))
        contrib = np.matmul(da, params[f"{lp}.{wk}"].T)
        dx = contrib if dx is None else dx + contrib
    return dx, dh0


def gru_stack_forward(params: dict, prefix: str, layers: int, x: np.ndarray,
                      mask: np.ndarray):
    """Stacked GRU over (T, B, d) input from zero initial states."""
    caches = []
    seq = x
    for layer in range(layers):
        seq, cache = _layer_forward(params, f"{prefix}.l{layer}", seq, mask)
        caches.append(cache)
    return seq, caches


def gru_stack_backward(params: dict, prefix: str, dhs: np.ndarray, caches,
                       grads: dict) -> np.ndarray:
    d = dhs
    for layer in range(len(caches) - 1, -1, -1):
        d, _ = _layer_backward(params, f"{prefix}.l{layer}", d, caches[layer], grads)
    return d


# ---------------------------------------------------------------------------
# batched attention pooling
# ---------------------------------------------------------------------------

def attention_pool_forward(params: dict, prefix: str, hs: np.ndarray, mask: np.ndarray):
    """Pool (T, B, h) states into (B, h); returns (pooled, weights, cache)."""
    w, v = params[f"{prefix}.w"], params[f"{prefix}.v"]
    proj = np.tanh(np.matmul(hs, w))  # (T, B, a)
    scores = proj @ v  # (T, B)
    weights = masked_softmax(scores, mask)
    pooled = np.einsum("tb,tbh->bh", weights, hs)
    return pooled, weights, (hs, mask, proj, weights)


def attention_pool_backward(params: dict, prefix: str, dpooled: np.ndarray,
                            cache, grads: dict) -> np.ndarray:
    hs, mask, proj, weights = cache
    w, v = params[f"{prefix}.w"], params[f"{prefix}.v"]
    dhs = weights[:, :, None] * dpooled[None, :, :]
    dweights = np.einsum("bh,tbh->tb", dpooled, hs)
    # softmax backward; masked positions carry weight 0, so they drop out
    dscores = weights * (dweights - np.sum(weights * dweights, axis=0, keepdims=True))
    dproj = dscores[:, :, None] * v[None, None, :]
    accumulate(grads, f"{prefix}.v", np.einsum("tba,tb->a", proj, dscores))
    dpre = dproj * (1.0 - proj * proj)
    accumulate(grads, f"{prefix}.w",
               np.einsum("tbh,tba->ha", hs, dpre))
    dhs += np.matmul(dpre, w.T)
    return dhs
