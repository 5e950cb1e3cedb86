"""Composite loss, SGD loop, pretraining warm start, checkpoints, gradient checks.

The trainable state is one flat dict of named float32 tensors.  The total
objective blends the four selector terms with the decoder NLL:

    L_total = alpha * (L_p + L_r + L_r' + L_KL) + (1 - alpha) * L_NLL

where every term is a batch mean (NLL additionally averages over unmasked
target tokens).  The recognition prediction feeds the decoder during
training, so NLL gradients flow back into the selector through the emotion
embedding; the backward pass here wires that chain explicitly.
"""
from __future__ import annotations

import json
import math
import os
from dataclasses import asdict, dataclass, field

import numpy as np

from .config import ModelConfig, TrainConfig
from .corpus import (
    BOS_ID,
    EOS_ID,
    NUM_EMOTIONS,
    PAD_ID,
    ConversationPair,
    Vocabulary,
    encode_text,
    init_embedding_matrix,
)
from .encoders import embed_backward
from .errors import (
    ConfigurationError,
    DivergenceError,
    IntegrityError,
    ShapeError,
)
from .evaluation import emotion_accuracy
from .generator import (
    generator_backward,
    generator_forward,
    init_generator_params,
    nll_from_logits,
)
from .selector import (
    init_selector_params,
    selector_backward,
    selector_forward,
    selector_losses,
)

METRIC_FIELDS = ("step", "L_total", "L_p", "L_r", "L_r'", "L_KL", "L_NLL",
                 "acc_prior", "acc_recognition")


# ---------------------------------------------------------------------------
# batching
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class EncodedPair:
    post: np.ndarray       # (Tp,) int64, no BOS/EOS
    response: np.ndarray   # (Tr,) int64, no BOS/EOS
    e_p: np.ndarray        # (K,) multi-hot
    e_r: np.ndarray


@dataclass(frozen=True)
class Batch:
    post_ids: np.ndarray   # (Tp, B) int64
    post_mask: np.ndarray  # (Tp, B) float
    resp_ids: np.ndarray   # (Tr, B)
    resp_mask: np.ndarray
    dec_in: np.ndarray     # (Tr+1, B): BOS + response
    dec_tgt: np.ndarray    # (Tr+1, B): response + EOS
    dec_mask: np.ndarray
    e_p: np.ndarray        # (B, K)
    e_r: np.ndarray

    @property
    def size(self) -> int:
        return self.post_ids.shape[1]


def encode_pairs(pairs, vocab: Vocabulary) -> list[EncodedPair]:
    out = []
    for pair in pairs:
        out.append(EncodedPair(
            post=np.asarray(encode_text(pair.post, vocab), dtype=np.int64),
            response=np.asarray(encode_text(pair.response, vocab), dtype=np.int64),
            e_p=pair.post_vector,
            e_r=pair.response_vector,
        ))
    return out


def make_batch(encoded, indices=None, dtype=np.float32,
               max_len: int | None = None) -> Batch:
    """Pad a set of encoded pairs into time-major arrays.

    Padding is always a suffix; decoder inputs are BOS-shifted responses and
    targets append EOS.  Sequences beyond ``max_len`` tokens are truncated.
    """
    if indices is None:
        indices = range(len(encoded))
    chosen = [encoded[i] for i in indices]
    if not chosen:
        raise ShapeError("a batch needs at least one pair")

    def clip(ids):
        return ids[:max_len] if max_len is not None else ids

    posts = [clip(p.post) for p in chosen]
    resps = [clip(p.response) for p in chosen]
    B = len(chosen)
    Tp = max(len(p) for p in posts)
    Tr = max(len(r) for r in resps)

    post_ids = np.full((Tp, B), PAD_ID, dtype=np.int64)
    post_mask = np.zeros((Tp, B), dtype=dtype)
    resp_ids = np.full((Tr, B), PAD_ID, dtype=np.int64)
    resp_mask = np.zeros((Tr, B), dtype=dtype)
    dec_in = np.full((Tr + 1, B), PAD_ID, dtype=np.int64)
    dec_tgt = np.full((Tr + 1, B), PAD_ID, dtype=np.int64)
    dec_mask = np.zeros((Tr + 1, B), dtype=dtype)
    e_p = np.zeros((B, NUM_EMOTIONS), dtype=dtype)
    e_r = np.zeros((B, NUM_EMOTIONS), dtype=dtype)

    for b, (post, resp, pair) in enumerate(zip(posts, resps, chosen)):
        post_ids[:len(post), b] = post
        post_mask[:len(post), b] = 1
        resp_ids[:len(resp), b] = resp
        resp_mask[:len(resp), b] = 1
        dec_in[0, b] = BOS_ID
        dec_in[1:len(resp) + 1, b] = resp
        dec_tgt[:len(resp), b] = resp
        dec_tgt[len(resp), b] = EOS_ID
        dec_mask[:len(resp) + 1, b] = 1
        e_p[b] = pair.e_p
        e_r[b] = pair.e_r
    return Batch(post_ids, post_mask, resp_ids, resp_mask,
                 dec_in, dec_tgt, dec_mask, e_p, e_r)


class _Sampler:
    """Seeded epoch shuffler handing out contiguous index slices."""

    def __init__(self, count: int, batch_size: int, rng: np.random.Generator):
        self.count = count
        self.batch_size = min(batch_size, count)
        self.rng = rng
        self.order = rng.permutation(count)
        self.pos = 0

    def next_indices(self) -> np.ndarray:
        if self.pos + self.batch_size > self.count:
            self.order = self.rng.permutation(self.count)
            self.pos = 0
        idx = self.order[self.pos:self.pos + self.batch_size]
        self.pos += self.batch_size
        return idx


# ---------------------------------------------------------------------------
# parameters
# ---------------------------------------------------------------------------

def _embedding(kind_matrix, vocab_size, dim, rng, dtype):
    if kind_matrix is None:
        return init_embedding_matrix(vocab_size, dim, rng).astype(dtype)
    mat = np.asarray(kind_matrix, dtype=dtype)
    if mat.shape != (vocab_size, dim):
        raise ShapeError(
            f"embedding table is {mat.shape}, expected {(vocab_size, dim)}")
    return mat.copy()


def init_params(cfg: ModelConfig, rng: np.random.Generator, dtype=np.float32,
                semantic=None, emotional=None) -> dict:
    """All trainable tensors; construction order is fixed for determinism."""
    cfg.validate()
    params = {}
    params["emb.semantic"] = _embedding(semantic, cfg.vocab_size, cfg.emb_dim,
                                        rng, dtype)
    params["emb.emotional"] = _embedding(emotional, cfg.vocab_size, cfg.emb_dim,
                                         rng, dtype)
    init_selector_params(params, rng, cfg, dtype)
    init_generator_params(params, rng, cfg, dtype)
    return params


def init_pretrain_params(cfg: ModelConfig, rng: np.random.Generator,
                         dtype=np.float32, semantic=None) -> dict:
    """Plain seq2seq subset: semantic embeddings + generator, emotion
    projection frozen at zero."""
    cfg.validate()
    params = {}
    params["emb.semantic"] = _embedding(semantic, cfg.vocab_size, cfg.emb_dim,
                                        rng, dtype)
    init_generator_params(params, rng, cfg, dtype)
    params["gen.attn.w3"][:] = 0
    return params


# ---------------------------------------------------------------------------
# losses
# ---------------------------------------------------------------------------

def total_loss(params: dict, cfg: ModelConfig, batch: Batch, alpha: float,
               want_grads: bool = True):
    """Blended objective; returns (L_total, components, grads-or-None).

    Components carry batch-mean values under the metric-log key names.
    The decoder consumes the recognition prediction, so its NLL gradient
    reaches the selector through the emotion-head preactivation.
    """
    if not 0.0 <= alpha <= 1.0:
        raise ConfigurationError(f"alpha must lie in [0, 1], got {alpha}")
    B = batch.size
    x_emo = params["emb.emotional"][batch.post_ids]
    x_sem = params["emb.semantic"][batch.post_ids]
    r_sem = params["emb.semantic"][batch.resp_ids]
    dec_emb = params["emb.semantic"][batch.dec_in]

    sel = selector_forward(params, cfg, x_emo, x_sem, r_sem,
                           batch.post_mask, batch.resp_mask)
    terms, dz = selector_losses(sel, batch.e_p, batch.e_r, cfg)
    logits, gen_cache = generator_forward(params, cfg, x_sem, batch.post_mask,
                                          dec_emb, sel.e_hat["rp"])
    l_nll, dlogits = nll_from_logits(logits, batch.dec_tgt, batch.dec_mask)

    comps = {
        "L_p": float(terms["L_p"].mean()),
        "L_r": float(terms["L_r"].mean()),
        "L_r'": float(terms["L_rp"].mean()),
        "L_KL": float(terms["L_KL"].mean()),
        "L_NLL": l_nll,
    }
    l_e = comps["L_p"] + comps["L_r"] + comps["L_r'"] + comps["L_KL"]
    comps["L_e"] = l_e
    l_total = alpha * l_e + (1.0 - alpha) * l_nll
    if not want_grads:
        return l_total, comps, None

    grads: dict = {}
    dlogits *= (1.0 - alpha)
    dx_sem_gen, d_dec_emb, de_hat = generator_backward(params, cfg, dlogits,
                                                       gen_cache, grads)
    scale = alpha / B
    dz_scaled = {k: v * scale for k, v in dz.items()}
    # NLL -> V_e -> recognition prediction; chain through the sigmoid
    e_rp = sel.e_hat["rp"]
    dz_scaled["rp"] = dz_scaled["rp"] + de_hat * e_rp * (1.0 - e_rp)
    dx_emo, dx_sem_sel, dr_sem = selector_backward(params, cfg, sel,
                                                   dz_scaled, grads)

    embed_backward(grads, "emb.emotional", params["emb.emotional"],
                   batch.post_ids, dx_emo)
    embed_backward(grads, "emb.semantic", params["emb.semantic"],
                   batch.post_ids, dx_sem_sel + dx_sem_gen)
    embed_backward(grads, "emb.semantic", params["emb.semantic"],
                   batch.resp_ids, dr_sem)
    embed_backward(grads, "emb.semantic", params["emb.semantic"],
                   batch.dec_in, d_dec_emb)
    return l_total, comps, grads


def pretrain_loss(params: dict, cfg: ModelConfig, batch: Batch,
                  want_grads: bool = True):
    """Plain-attention seq2seq NLL (zero emotion input, W3 path skipped)."""
    x_sem = params["emb.semantic"][batch.post_ids]
    dec_emb = params["emb.semantic"][batch.dec_in]
    logits, cache = generator_forward(params, cfg, x_sem, batch.post_mask,
                                      dec_emb, None, plain=True)
    l_nll, dlogits = nll_from_logits(logits, batch.dec_tgt, batch.dec_mask)
    if not want_grads:
        return l_nll, None
    grads: dict = {}
    dx_sem, d_dec_emb, _ = generator_backward(params, cfg, dlogits, cache, grads)
    embed_backward(grads, "emb.semantic", params["emb.semantic"],
                   batch.post_ids, dx_sem)
    embed_backward(grads, "emb.semantic", params["emb.semantic"],
                   batch.dec_in, d_dec_emb)
    return l_nll, grads


# ---------------------------------------------------------------------------
# optimizer
# ---------------------------------------------------------------------------

def global_grad_norm(grads: dict) -> float:
    total = 0.0
    for g in grads.values():
        total += float(np.sum(np.square(g, dtype=np.float64)))
    return math.sqrt(total)


def sgd_step(params: dict, grads: dict, learning_rate: float,
             clip_norm: float | None = None) -> float:
    """In-place p -= lr * g after global-norm clipping; returns the raw norm.

    Every gradient key must name an existing parameter.  Parameters without
    gradients are left untouched (frozen tensors during pretraining).
    """
    unknown = set(grads) - set(params)
    if unknown:
        raise IntegrityError(f"gradients for unknown tensors: {sorted(unknown)}")
    for name, g in grads.items():
        if g.shape != params[name].shape:
            raise IntegrityError(
                f"{name}: gradient shape {g.shape} != parameter "
                f"shape {params[name].shape}")
    norm = global_grad_norm(grads)
    scale = learning_rate
    if clip_norm is not None and clip_norm > 0 and norm > clip_norm:
        scale *= clip_norm / norm
    for name, g in grads.items():
        params[name] -= (scale * g).astype(params[name].dtype, copy=False)
    return norm


# ---------------------------------------------------------------------------
# checkpoints
# ---------------------------------------------------------------------------

MANIFEST_NAME = "manifest.json"
PAYLOAD_NAME = "tensors.bin"


def save_checkpoint(directory, params: dict, step: int, config: dict | None = None,
                    seed_state=None, vocab_tokens=None) -> str:
    """Write manifest.json + tensors.bin (little-endian float32, manifest order)."""
    os.makedirs(directory, exist_ok=True)
    tensors = {}
    offset = 0
    chunks = []
    for name in sorted(params):
        arr = params[name]
        if arr.dtype != np.float32:
            raise ConfigurationError(
                f"{name}: checkpoints store float32 tensors, got {arr.dtype}")
        raw = np.ascontiguousarray(arr).astype("<f4", copy=False).tobytes()
        tensors[name] = {"shape": list(arr.shape), "dtype": "float32",
                         "offset": offset}
        offset += len(raw)
        chunks.append(raw)
    manifest = {
        "format_version": 1,
        "step": int(step),
        "config": config or {},
        "seed_state": seed_state,
        "vocab": list(vocab_tokens) if vocab_tokens is not None else None,
        "payload_bytes": offset,
        "tensors": tensors,
    }
    with open(os.path.join(directory, MANIFEST_NAME), "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")
    with open(os.path.join(directory, PAYLOAD_NAME), "wb") as fh:
        fh.write(b"".join(chunks))
    return str(directory)


def load_checkpoint(directory):
    """Read a checkpoint; returns (params, manifest)."""
    try:
        with open(os.path.join(directory, MANIFEST_NAME), encoding="utf-8") as fh:
            manifest = json.load(fh)
        with open(os.path.join(directory, PAYLOAD_NAME), "rb") as fh:
            payload = fh.read()
    except FileNotFoundError as exc:
        raise IntegrityError(f"not a checkpoint directory: {directory}") from exc
    if manifest.get("payload_bytes") != len(payload):
        raise IntegrityError(
            f"payload is {len(payload)} bytes, manifest expects "
            f"{manifest.get('payload_bytes')}")
    params = {}
    for name, meta in manifest["tensors"].items():
        if meta["dtype"] != "float32":
            raise IntegrityError(f"{name}: unsupported dtype {meta['dtype']}")
        count = int(np.prod(meta["shape"])) if meta["shape"] else 1
        arr = np.frombuffer(payload, dtype="<f4", count=count,
                            offset=meta["offset"])
        params[name] = arr.reshape(meta["shape"]).copy()
    return params, manifest


def apply_warm_start(params: dict, loaded: dict) -> list[str]:
    """Copy pretrained tensors into a freshly initialized parameter set."""
    copied = []
    for name, arr in loaded.items():
        if name not in params:
            raise IntegrityError(f"warm-start tensor {name} not in this model")
        if params[name].shape != arr.shape:
            raise IntegrityError(
                f"warm-start {name}: shape {arr.shape} != {params[name].shape}")
        params[name] = arr.astype(params[name].dtype, copy=True)
        copied.append(name)
    return copied


# ---------------------------------------------------------------------------
# evaluation hooks used during training
# ---------------------------------------------------------------------------

def collect_emotion_predictions(params: dict, cfg: ModelConfig, encoded,
                                batch_size: int = 64):
    """Prior and recognition predictions plus gold labels over a corpus.

    Returns (prior (N, K), recognition (N, K), gold (N, K)).
    """
    priors, recogs, golds = [], [], []
    for start in range(0, len(encoded), batch_size):
        batch = make_batch(encoded, range(start, min(start + batch_size,
                                                     len(encoded))))
        sel = selector_forward(
            params, cfg,
            params["emb.emotional"][batch.post_ids],
            params["emb.semantic"][batch.post_ids],
            params["emb.semantic"][batch.resp_ids],
            batch.post_mask, batch.resp_mask)
        priors.append(sel.e_hat["r"])
        recogs.append(sel.e_hat["rp"])
        golds.append(batch.e_r)
    return (np.concatenate(priors, axis=0), np.concatenate(recogs, axis=0),
            np.concatenate(golds, axis=0))


def evaluate_selector_accuracy(params: dict, cfg: ModelConfig, encoded,
                               batch_size: int = 64):
    prior, recog, gold = collect_emotion_predictions(params, cfg, encoded,
                                                     batch_size)
    return (emotion_accuracy(prior, gold), emotion_accuracy(recog, gold))


# ---------------------------------------------------------------------------
# training loops
# ---------------------------------------------------------------------------

@dataclass
class TrainResult:
    params: dict
    records: list = field(default_factory=list)
    checkpoints: list = field(default_factory=list)


def _append_jsonl(path, record: dict):
    if path is None:
        return
    with open(path, "a", encoding="utf-8") as fh:
        fh.write(json.dumps(record, sort_keys=True) + "\n")


def _config_snapshot(model_cfg: ModelConfig, train_cfg: TrainConfig,
                     extra: dict | None = None) -> dict:
    snap = {"model": asdict(model_cfg), "train": asdict(train_cfg)}
    if extra:
        snap.update(extra)
    return snap


def pretrain_seq2seq(pairs, vocab: Vocabulary, cfg: ModelConfig,
                     train_cfg: TrainConfig, semantic=None,
                     metrics_path=None) -> TrainResult:
    """NLL-only training of the plain-attention reduction.

    The resulting tensors warm-start the full model; the zeroed emotion
    score projection rides along so the reduction contract survives the
    copy.  Selector tensors are never created here.
    """
    train_cfg.validate()
    steps = train_cfg.pretrain_steps or train_cfg.max_steps
    rng = np.random.default_rng(train_cfg.seed)
    params = init_pretrain_params(cfg, rng, semantic=semantic)
    encoded = encode_pairs(pairs, vocab)
    sampler = _Sampler(len(encoded), train_cfg.batch_size, rng)
    result = TrainResult(params=params)
    for step in range(1, steps + 1):
        batch = make_batch(encoded, sampler.next_indices(), max_len=cfg.max_len)
        loss, grads = pretrain_loss(params, cfg, batch)
        if not math.isfinite(loss):
            raise DivergenceError(f"pretraining step {step}: loss is {loss}")
        sgd_step(params, grads, train_cfg.learning_rate, train_cfg.clip_norm)
        if step == 1 or step == steps or step % train_cfg.log_every == 0:
            record = {"step": step, "L_NLL": loss}
            result.records.append(record)
            _append_jsonl(metrics_path, record)
    return result


def train(pairs, vocab: Vocabulary, cfg: ModelConfig, train_cfg: TrainConfig,
          val_pairs=None, out_dir=None, warm_start=None,
          semantic=None, emotional=None, config_extra=None) -> TrainResult:
    """Full training loop: seeded shuffling, teacher forcing, metrics, checkpoints.

    Logs a step-0 record (losses and validation accuracy before any update),
    then every ``log_every`` steps and at the final step.  Checkpoints land
    under ``out_dir`` every ``checkpoint_every`` steps and at the end.  With
    no validation pairs, accuracy falls back to a 256-pair training slice.
    """
    cfg.validate()
    train_cfg.validate()
    rng = np.random.default_rng(train_cfg.seed)
    params = init_params(cfg, rng, semantic=semantic, emotional=emotional)
    if warm_start is not None:
        apply_warm_start(params, warm_start)

    encoded = encode_pairs(pairs, vocab)
    val_encoded = (encode_pairs(val_pairs, vocab) if val_pairs
                   else encoded[:256])
    sampler = _Sampler(len(encoded), train_cfg.batch_size, rng)
    snapshot = _config_snapshot(cfg, train_cfg, config_extra)

    metrics_path = None
    if out_dir is not None:
        os.makedirs(out_dir, exist_ok=True)
        metrics_path = os.path.join(out_dir, "metrics.jsonl")
        with open(metrics_path, "w", encoding="utf-8") as fh:
            fh.write(json.dumps({"config": snapshot}, sort_keys=True) + "\n")

    result = TrainResult(params=params)

    def log_record(step: int, l_total: float, comps: dict):
        acc_p, acc_r = evaluate_selector_accuracy(params, cfg, val_encoded,
                                                  train_cfg.batch_size)
        record = {"step": step, "L_total": l_total, "L_p": comps["L_p"],
                  "L_r": comps["L_r"], "L_r'": comps["L_r'"],
                  "L_KL": comps["L_KL"], "L_NLL": comps["L_NLL"],
                  "acc_prior": acc_p, "acc_recognition": acc_r}
        result.records.append(record)
        _append_jsonl(metrics_path, record)

    def save(step: int):
        if out_dir is None:
            return
        path = os.path.join(out_dir, f"checkpoint-{step:06d}")
        save_checkpoint(path, params, step, config=snapshot,
                        seed_state=rng.bit_generator.state,
                        vocab_tokens=vocab.tokens)
        result.checkpoints.append(path)

    first_idx = sampler.next_indices()
    first_batch = make_batch(encoded, first_idx, max_len=cfg.max_len)
    l0, comps0, _ = total_loss(params, cfg, first_batch, train_cfg.alpha,
                               want_grads=False)
    log_record(0, l0, comps0)

    batch = first_batch
    for step in range(1, train_cfg.max_steps + 1):
        loss, comps, grads = total_loss(params, cfg, batch, train_cfg.alpha)
        if not math.isfinite(loss):
            raise DivergenceError(f"step {step}: loss is {loss}")
        sgd_step(params, grads, train_cfg.learning_rate, train_cfg.clip_norm)
        if step == train_cfg.max_steps or step % train_cfg.log_every == 0:
            log_record(step, loss, comps)
        if step == train_cfg.max_steps or (
                train_cfg.checkpoint_every > 0
                and step % train_cfg.checkpoint_every == 0):
            save(step)
        if step < train_cfg.max_steps:
            batch = make_batch(encoded, sampler.next_indices(),
                               max_len=cfg.max_len)
    return result


# ---------------------------------------------------------------------------
# gradient checking
# ---------------------------------------------------------------------------

def fd_max_relative_error(loss_fn, params: dict, grads: dict, eps: float = 1e-4,
                          samples_per_tensor: int | None = 4,
                          rng: np.random.Generator | None = None) -> float:
    """Central-difference check of ``grads`` against ``loss_fn(params)``.

    Perturbs ``samples_per_tensor`` entries of every tensor (all entries
    when None) and reports the worst relative error
    |g_a - g_n| / max(|g_a|, |g_n|, 1e-8).  Sampled entries split between
    the largest-magnitude gradients and uniformly random picks.

    Central differences resolve gradients only down to roughly
    machine_eps * |loss| / (2 * eps); against the 1e-8 denominator floor,
    eps below ~1e-3 pushes that cancellation noise above a 1e-4 tolerance
    on near-zero gradient entries even when the analytic gradient is
    exact, so checks at double precision should pass eps=1e-3.
    """
    if rng is None:
        rng = np.random.default_rng(0)
    worst = 0.0
    for name in sorted(params):
        tensor = params[name]
        flat = tensor.reshape(-1)
        g = grads.get(name)
        g_flat = (np.zeros(flat.shape) if g is None else g.reshape(-1))
        size = flat.size
        if samples_per_tensor is None or samples_per_tensor >= size:
            picks = np.arange(size)
        else:
            top = samples_per_tensor // 2
            picks = np.concatenate([
                np.argsort(-np.abs(g_flat))[:top],
                rng.choice(size, size=samples_per_tensor - top, replace=False),
            ])
        for i in picks:
            orig = flat[i]
            flat[i] = orig + eps
            lp = loss_fn(params)
            flat[i] = orig - eps
            lm = loss_fn(params)
            flat[i] = orig
            if not (math.isfinite(lp) and math.isfinite(lm)):
                raise DivergenceError(
                    f"non-finite loss while perturbing {name}[{i}]")
            g_n = (lp - lm) / (2.0 * eps)
            g_a = float(g_flat[i])
            rel = abs(g_a - g_n) / max(abs(g_a), abs(g_n), 1e-8)
            worst = max(worst, rel)
    return worst


def gradient_check(params: dict, cfg: ModelConfig, batch: Batch, alpha: float,
                   eps: float = 1e-4, samples_per_tensor: int | None = 4,
                   rng: np.random.Generator | None = None) -> float:
    """Worst relative error of the analytic L_total gradient, double precision."""
    loss, _, grads = total_loss(params, cfg, batch, alpha)
    if not math.isfinite(loss) or any(
            not np.all(np.isfinite(g)) for g in grads.values()):
        raise DivergenceError("non-finite loss or gradient in check")

    def loss_only(p):
        value, _, _ = total_loss(p, cfg, batch, alpha, want_grads=False)
        return value

    return fd_max_relative_error(loss_only, params, grads, eps,
                                 samples_per_tensor, rng)
