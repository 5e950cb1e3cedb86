"""Command-line surface: data generation, training, evaluation, diagnostics, chat.

Every command reads an optional INI config file (section ``[emochat]``,
flat key=value pairs) which individual flags override; the effective
configuration is echoed into every artifact a command writes.  Exit codes:
0 success, 1 invalid invocation or input, 2 runtime failure.
"""
from __future__ import annotations

import argparse
import configparser
import json
import os
import sys
import time
from dataclasses import asdict

import numpy as np

from .config import PRESETS, ModelConfig, TrainConfig, config_fields, preset
from .corpus import (
    EMOTIONS,
    SyntheticSpec,
    Vocabulary,
    analyze_eip,
    build_vocab_from_pairs,
    decode_ids,
    default_filler,
    default_lexicons,
    eip_to_csv,
    encode_text,
    generate_synthetic_pairs,
    load_embeddings,
    read_corpus,
    shift_transition,
    write_corpus,
)
from .errors import (
    ConfigurationError,
    DivergenceError,
    EmoChatError,
    FormatError,
    IntegrityError,
    MetricError,
    ShapeError,
    ValidationError,
)
from .evaluation import (
    fleiss_kappa,
    human_score_summary,
    metric_report,
    pca_project,
    points_to_csv,
    read_human_scores,
    report_to_json,
)
from .generator import greedy_decode
from .selector import prior_forward
from .training import (
    collect_emotion_predictions,
    encode_pairs,
    load_checkpoint,
    pretrain_seq2seq,
    save_checkpoint,
    train,
)

SECTION = "emochat"

# config-file keys that are command options rather than model/train fields
OPTION_KEYS = frozenset({
    "corpus", "val_corpus", "out", "checkpoint", "warm_start",
    "semantic_embeddings", "emotional_embeddings",
    "hyp", "ref", "human_scores", "mode", "limit",
    "pair_count", "gen_min_len", "gen_max_len", "noise_rate",
    "lexicon_density", "words_per_emotion", "filler_words",
})


class _Parser(argparse.ArgumentParser):
    # argparse normally exits 2 on bad flags; route through the
    # validation-error path instead
    def error(self, message):
        raise ConfigurationError(message)


def _read_config_file(path) -> dict:
    cp = configparser.ConfigParser()
    try:
        with open(path, encoding="utf-8") as fh:
            cp.read_file(fh)
    except configparser.Error as exc:
        raise FormatError(f"cannot parse config file {path}: {exc}") from exc
    if SECTION in cp:
        return dict(cp[SECTION])
    return dict(cp[cp.default_section])


def _coerce(raw, typ, key):
    if typ is bool:
        low = str(raw).strip().lower()
        if low in ("1", "true", "yes", "on"):
            return True
        if low in ("0", "false", "no", "off"):
            return False
        raise ConfigurationError(f"{key}: cannot parse boolean from {raw!r}")
    try:
        return typ(raw)
    except (TypeError, ValueError) as exc:
        raise ConfigurationError(f"{key}: expected {typ.__name__}, got {raw!r}") from exc


class Resolved:
    """Effective configuration: presets <- config file <- --set <- flags."""

    def __init__(self, args):
        file_vals = _read_config_file(args.config) if getattr(args, "config", None) else {}
        for item in getattr(args, "set", None) or []:
            if "=" not in item:
                raise ConfigurationError(f"--set expects key=value, got {item!r}")
            key, value = item.split("=", 1)
            file_vals[key.strip()] = value.strip()
        preset_name = getattr(args, "preset", None) or file_vals.pop("preset", None) or "desk"
        self.preset_name = preset_name
        self.model, self.train = preset(preset_name)
        fields = config_fields()
        self.options: dict = {}
        for key, raw in file_vals.items():
            if key in fields:
                value = _coerce(raw, fields[key], key)
                target = self.model if hasattr(self.model, key) else self.train
                setattr(target, key, value)
            elif key in OPTION_KEYS:
                self.options[key] = raw
            else:
                raise ConfigurationError(f"unknown config key: {key!r}")
        if getattr(args, "seed", None) is not None:
            self.train.seed = args.seed
        self.model.validate()
        self.train.validate()
        self.args = args

    def opt(self, key, default=None):
        """Command option with flag > config file > default precedence."""
        flag = getattr(self.args, key, None)
        if flag is not None:
            return flag
        return self.options.get(key, default)

    def require(self, key, hint):
        value = self.opt(key)
        if value is None:
            raise ConfigurationError(f"missing required {hint} (--{key.replace('_', '-')})")
        return value

    def snapshot(self, command: str) -> dict:
        return {"command": command, "preset": self.preset_name,
                "model": asdict(self.model), "train": asdict(self.train)}

    def write_effective_ini(self, out_dir, command: str, paths: dict):
        """Reproducibility record: preset + every field + input paths."""
        cp = configparser.ConfigParser()
        values = {"preset": self.preset_name}
        values.update({k: str(v) for k, v in asdict(self.model).items()})
        values.update({k: str(v) for k, v in asdict(self.train).items()})
        values.update({k: str(v) for k, v in paths.items() if v is not None})
        cp[SECTION] = values
        path = os.path.join(out_dir, "effective.ini")
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(f"; {command} configuration; rerun with --config {os.path.basename(path)}\n")
            cp.write(fh)
        return path


def _ensure_out_dir(path):
    os.makedirs(path, exist_ok=True)
    return path


def _load_model_checkpoint(path, need_selector: bool):
    params, manifest = load_checkpoint(path)
    tokens = manifest.get("vocab")
    if not tokens:
        raise ConfigurationError("checkpoint carries no vocabulary")
    vocab = Vocabulary(tokens)
    model_section = (manifest.get("config") or {}).get("model")
    if not model_section:
        raise ConfigurationError("checkpoint carries no model configuration")
    cfg = ModelConfig(**model_section).validate()
    if need_selector and "emb.emotional" not in params:
        raise ConfigurationError(
            "checkpoint holds only the plain seq2seq subset; this command "
            "needs a fully trained model")
    return params, manifest, vocab, cfg


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------

def cmd_gen_synthetic(args) -> int:
    res = Resolved(args)
    out = res.require("out", "output corpus path")
    knobs = {
        "pair_count": int(res.opt("pair_count", 1000)),
        "gen_min_len": int(res.opt("gen_min_len", 2)),
        "gen_max_len": int(res.opt("gen_max_len", 6)),
        "noise_rate": float(res.opt("noise_rate", 0.1)),
        "lexicon_density": float(res.opt("lexicon_density", 0.5)),
        "words_per_emotion": int(res.opt("words_per_emotion", 12)),
        "filler_words": int(res.opt("filler_words", 24)),
    }
    spec = SyntheticSpec(
        transition=shift_transition(),
        lexicons=default_lexicons(knobs["words_per_emotion"]),
        filler=default_filler(knobs["filler_words"]),
        pair_count=knobs["pair_count"],
        min_len=knobs["gen_min_len"],
        max_len=knobs["gen_max_len"],
        noise_rate=knobs["noise_rate"],
        lexicon_density=knobs["lexicon_density"],
    )
    pairs = generate_synthetic_pairs(spec, res.train.seed)
    echo = {"command": "gen-synthetic", "seed": res.train.seed, **knobs}
    parent = os.path.dirname(os.path.abspath(out))
    os.makedirs(parent, exist_ok=True)
    write_corpus(out, pairs, header_comment=json.dumps(echo, sort_keys=True))
    print(f"wrote {len(pairs)} pairs to {out}")
    return 0


def _load_embedding_matrices(res, vocab):
    semantic = emotional = None
    rng = np.random.default_rng(res.train.seed)
    sem_path = res.opt("semantic_embeddings")
    if sem_path:
        semantic = load_embeddings(sem_path, vocab, res.model.emb_dim,
                                   "semantic", rng).matrix
    emo_path = res.opt("emotional_embeddings")
    if emo_path:
        emotional = load_embeddings(emo_path, vocab, res.model.emb_dim,
                                    "emotional", rng).matrix
    return semantic, emotional


def cmd_pretrain(args) -> int:
    res = Resolved(args)
    corpus_path = res.require("corpus", "training corpus")
    out = _ensure_out_dir(res.require("out", "output directory"))
    pairs = read_corpus(corpus_path)
    vocab = build_vocab_from_pairs(pairs, res.model.vocab_size)
    semantic, _ = _load_embedding_matrices(res, vocab)
    snapshot = res.snapshot("pretrain")
    metrics_path = os.path.join(out, "metrics.jsonl")
    with open(metrics_path, "w", encoding="utf-8") as fh:
        fh.write(json.dumps({"config": snapshot}, sort_keys=True) + "\n")
    result = pretrain_seq2seq(pairs, vocab, res.model, res.train,
                              semantic=semantic, metrics_path=metrics_path)
    steps = res.train.pretrain_steps or res.train.max_steps
    ckpt = os.path.join(out, "checkpoint-pretrain")
    save_checkpoint(ckpt, result.params, step=steps, config=snapshot,
                    vocab_tokens=vocab.tokens)
    res.write_effective_ini(out, "pretrain", {"corpus": corpus_path})
    print(f"pretrained {steps} steps; final L_NLL "
          f"{result.records[-1]['L_NLL']:.4f}; checkpoint at {ckpt}")
    return 0


def cmd_train(args) -> int:
    res = Resolved(args)
    corpus_path = res.require("corpus", "training corpus")
    out = _ensure_out_dir(res.require("out", "output directory"))
    pairs = read_corpus(corpus_path)
    val_path = res.opt("val_corpus")
    val_pairs = read_corpus(val_path) if val_path else None
    vocab = build_vocab_from_pairs(pairs, res.model.vocab_size)
    semantic, emotional = _load_embedding_matrices(res, vocab)
    warm_path = res.opt("warm_start")
    warm = load_checkpoint(warm_path)[0] if warm_path else None
    result = train(pairs, vocab, res.model, res.train, val_pairs=val_pairs,
                   out_dir=out, warm_start=warm, semantic=semantic,
                   emotional=emotional,
                   config_extra={"command": "train", "preset": res.preset_name})
    res.write_effective_ini(out, "train", {
        "corpus": corpus_path, "val_corpus": val_path, "warm_start": warm_path})
    final = result.records[-1]
    print(f"trained {res.train.max_steps} steps; L_total {final['L_total']:.4f} "
          f"acc_prior {final['acc_prior']:.3f} "
          f"acc_recognition {final['acc_recognition']:.3f}")
    print(f"final checkpoint: {result.checkpoints[-1]}")
    return 0


def _read_token_file(path) -> list[list[str]]:
    rows = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if line:
                rows.append(line.split())
    if not rows:
        raise FormatError(f"{path}: no token rows")
    return rows


def _decode_corpus(params, cfg, vocab, pairs):
    hyps, refs = [], []
    for pair in pairs:
        ids = encode_text(pair.post, vocab)
        x_emo = params["emb.emotional"][ids]
        x_sem = params["emb.semantic"][ids]
        e_r = prior_forward(params, cfg, x_emo, x_sem)["e_r"]
        out_ids = greedy_decode(params, cfg, ids, e_r)
        hyps.append(decode_ids(out_ids, vocab) if out_ids else ["<eos>"])
        refs.append(list(pair.response))
    return hyps, refs


def _rater_matrix(rows, key):
    by_id: dict = {}
    for row in rows:
        by_id.setdefault(row["id"], []).append(row[key])
    counts = {len(v) for v in by_id.values()}
    if len(counts) != 1 or counts == {1}:
        return None  # ragged or single-rater: agreement undefined
    mat = [[votes.count(0), votes.count(1)] for votes in by_id.values()]
    return mat


def cmd_eval(args) -> int:
    res = Resolved(args)
    hyp_path, ref_path = res.opt("hyp"), res.opt("ref")
    ckpt_path = res.opt("checkpoint")
    if hyp_path and ref_path:
        hyps = _read_token_file(hyp_path)
        refs = _read_token_file(ref_path)
    elif ckpt_path:
        corpus_path = res.require("corpus", "evaluation corpus")
        params, _, vocab, cfg = _load_model_checkpoint(ckpt_path,
                                                       need_selector=True)
        res.model = cfg  # echo what actually ran, not the preset default
        pairs = read_corpus(corpus_path)
        hyps, refs = _decode_corpus(params, cfg, vocab, pairs)
    else:
        raise ConfigurationError(
            "eval needs either --hyp and --ref files or --checkpoint "
            "with --corpus")
    report = metric_report(hyps, refs)
    scores_path = res.opt("human_scores")
    if scores_path:
        rows = read_human_scores(scores_path)
        human = human_score_summary(rows)
        for key in ("semantic", "emotion"):
            mat = _rater_matrix(rows, key)
            if mat is not None:
                human[f"kappa_{key}"] = fleiss_kappa(mat)
        report["human"] = human
    report["config"] = res.snapshot("eval")
    text = report_to_json(report)
    out = res.opt("out")
    if out:
        _ensure_out_dir(out)
        with open(os.path.join(out, "report.json"), "w", encoding="utf-8") as fh:
            fh.write(text)
    print(text, end="")
    return 0


def cmd_analyze_eip(args) -> int:
    res = Resolved(args)
    corpus_path = res.require("corpus", "corpus to analyze")
    mode = res.opt("mode", "primary")
    pairs = read_corpus(corpus_path)
    eip = analyze_eip(pairs, mode=mode)
    comment = json.dumps(res.snapshot("analyze-eip") | {"corpus_pairs": len(pairs)},
                         sort_keys=True)
    csv_text = eip_to_csv(eip, mode=mode, header_comment=comment)
    out = res.opt("out")
    if out:
        _ensure_out_dir(out)
        path = os.path.join(out, f"eip-{mode}.csv")
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(csv_text)
        print(f"wrote {path}")
    else:
        print(csv_text, end="")
    return 0


def cmd_project_emotions(args) -> int:
    res = Resolved(args)
    ckpt_path = res.require("checkpoint", "model checkpoint")
    corpus_path = res.require("corpus", "corpus to project")
    limit = int(res.opt("limit", 500))
    params, _, vocab, cfg = _load_model_checkpoint(ckpt_path, need_selector=True)
    res.model = cfg
    pairs = read_corpus(corpus_path)[:limit]
    encoded = encode_pairs(pairs, vocab)
    prior, recog, _ = collect_emotion_predictions(params, cfg, encoded)
    coords = pca_project(np.concatenate([prior, recog], axis=0))
    n = prior.shape[0]
    labels = [f"prior-{i}" for i in range(n)] + [f"posterior-{i}" for i in range(n)]
    distances = np.linalg.norm(coords[:n] - coords[n:], axis=1)
    comment = "# " + json.dumps(res.snapshot("project-emotions")
                                | {"samples": n,
                                   "mean_matched_distance": float(distances.mean())},
                                sort_keys=True) + "\n"
    text = comment + points_to_csv(coords, labels)
    out = res.opt("out")
    if out:
        _ensure_out_dir(out)
        path = os.path.join(out, "projection.csv")
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(text)
        print(f"wrote {path} (mean matched distance {distances.mean():.4f})")
    else:
        print(text, end="")
    return 0


def cmd_chat(args) -> int:
    res = Resolved(args)
    ckpt_path = res.require("checkpoint", "model checkpoint")
    params, manifest, vocab, cfg = _load_model_checkpoint(ckpt_path,
                                                          need_selector=True)
    print(f"loaded checkpoint step {manifest['step']}; "
          "one post per line, empty line exits", file=sys.stderr)
    for line in sys.stdin:
        line = line.strip()
        if not line:
            break
        ids = encode_text(line.split(), vocab)
        started = time.perf_counter()
        x_emo = params["emb.emotional"][ids]
        x_sem = params["emb.semantic"][ids]
        e_r = prior_forward(params, cfg, x_emo, x_sem)["e_r"]
        out_ids = greedy_decode(params, cfg, ids, e_r)
        elapsed_ms = (time.perf_counter() - started) * 1000.0
        probs = " ".join(f"{name}={p:.3f}" for name, p in zip(EMOTIONS, e_r))
        print(f"emotion: {probs}", flush=True)
        print(f"response: {' '.join(decode_ids(out_ids, vocab))}", flush=True)
        print(f"latency_ms: {elapsed_ms:.1f}", flush=True)
    return 0


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    common.add_argument("--config", help="INI config file ([emochat] section)")
    common.add_argument("--preset", choices=sorted(PRESETS),
                        help="configuration preset")
    common.add_argument("--seed", type=int, help="override the training seed")
    common.add_argument("--set", action="append", metavar="KEY=VALUE",
                        help="override any config field or option")
    common.add_argument("--out", help="output path (directory unless noted)")

    parser = _Parser(prog="emochat",
                     description="emotion-aware seq2seq dialogue toolkit")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-synthetic", parents=[common],
                       help="write a synthetic corpus with planted emotion transitions")
    p.add_argument("--pair-count", dest="pair_count", type=int)
    p.add_argument("--noise-rate", dest="noise_rate", type=float)
    p.set_defaults(func=cmd_gen_synthetic)

    p = sub.add_parser("pretrain", parents=[common],
                       help="train the plain seq2seq reduction on NLL only")
    p.add_argument("--corpus")
    p.add_argument("--semantic-embeddings", dest="semantic_embeddings")
    p.set_defaults(func=cmd_pretrain)

    p = sub.add_parser("train", parents=[common], help="train the full model")
    p.add_argument("--corpus")
    p.add_argument("--val-corpus", dest="val_corpus")
    p.add_argument("--warm-start", dest="warm_start",
                   help="seq2seq checkpoint directory to initialize from")
    p.add_argument("--semantic-embeddings", dest="semantic_embeddings")
    p.add_argument("--emotional-embeddings", dest="emotional_embeddings")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", parents=[common],
                       help="automatic metrics from files or a checkpoint")
    p.add_argument("--hyp", help="hypothesis file, one tokenized response per line")
    p.add_argument("--ref", help="reference file matching --hyp")
    p.add_argument("--checkpoint")
    p.add_argument("--corpus")
    p.add_argument("--human-scores", dest="human_scores",
                   help="CSV with columns id,semantic,emotion")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("analyze-eip", parents=[common],
                       help="emotion-interaction-pattern counts as CSV")
    p.add_argument("--corpus")
    p.add_argument("--mode", choices=["primary", "dual"])
    p.set_defaults(func=cmd_analyze_eip)

    p = sub.add_parser("project-emotions", parents=[common],
                       help="2-D PCA of prior vs posterior emotion predictions")
    p.add_argument("--checkpoint")
    p.add_argument("--corpus")
    p.add_argument("--limit", type=int)
    p.set_defaults(func=cmd_project_emotions)

    p = sub.add_parser("chat", parents=[common], help="interactive REPL")
    p.add_argument("--checkpoint")
    p.set_defaults(func=cmd_chat)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return args.func(args)
    except (ConfigurationError, ValidationError, FormatError, ShapeError,
            IntegrityError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (DivergenceError, MetricError) as exc:
        print(f"runtime failure: {exc}", file=sys.stderr)
        return 2
    except EmoChatError as exc:
        print(f"runtime failure: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
