"""Conversation corpus: emotion labels, vocabulary, embeddings, synthetic data.

A corpus is a JSONL file, one conversation pair per line:

    {"post": "w1 w2 ...", "response": "w1 w2 ...",
     "post_emotions": ["Happy"], "response_emotions": ["Like", "Other"]}

Emotion label lists are ordered (first entry is the primary label).
Lines starting with ``#`` are treated as comments and skipped, which is
where generated files carry their provenance/config echo.

Tokenization is whitespace splitting throughout; any language-specific
segmentation is the corpus producer's job.
"""
from __future__ import annotations

import json
from collections import Counter
from dataclasses import dataclass, field
from typing import Iterable, Iterator, Sequence

import numpy as np

from .errors import ConfigurationError, FormatError, ValidationError

EMOTIONS = ("Angry", "Disgust", "Happy", "Like", "Sad", "Other")
NUM_EMOTIONS = len(EMOTIONS)
EMOTION_INDEX = {name: i for i, name in enumerate(EMOTIONS)}

PAD_TOKEN, UNK_TOKEN, BOS_TOKEN, EOS_TOKEN = "<pad>", "<unk>", "<bos>", "<eos>"
RESERVED_TOKENS = (PAD_TOKEN, UNK_TOKEN, BOS_TOKEN, EOS_TOKEN)
PAD_ID, UNK_ID, BOS_ID, EOS_ID = 0, 1, 2, 3


def emotion_vector(names: Sequence[str]) -> np.ndarray:
    """Multi-hot vector over the fixed emotion categories."""
    if not names:
        raise ValidationError("emotion label list must contain at least one category")
    vec = np.zeros(NUM_EMOTIONS, dtype=np.float64)
    for name in names:
        if name not in EMOTION_INDEX:
            raise ValidationError(f"unknown emotion category: {name!r}")
        vec[EMOTION_INDEX[name]] = 1.0
    return vec


def primary_label(names_or_vector) -> int:
    """Primary category index of a label.

    Ordered name lists keep their stated order (first entry is primary).
    A bare multi-hot vector has lost the order, so the convention is the
    lowest category index among the positive components.
    """
    if isinstance(names_or_vector, np.ndarray):
        positives = np.flatnonzero(names_or_vector > 0)
        if positives.size == 0:
            raise ValidationError("label vector has no positive component")
        return int(positives[0])
    names = list(names_or_vector)
    if not names:
        raise ValidationError("empty label list")
    return EMOTION_INDEX[names[0]]


def dual_label(names: Sequence[str]) -> tuple[str, str]:
    """(primary, secondary) pair; single-label utterances pair with Other."""
    names = list(names)
    if not names:
        raise ValidationError("empty label list")
    if len(names) == 1:
        return names[0], "Other"
    return names[0], names[1]


@dataclass(frozen=True)
class ConversationPair:
    """One post/response pair with ordered emotion label names."""

    post: tuple[str, ...]
    response: tuple[str, ...]
    post_emotions: tuple[str, ...]
    response_emotions: tuple[str, ...]

    def __post_init__(self):
        for labels in (self.post_emotions, self.response_emotions):
            emotion_vector(labels)  # validates non-empty, known names
        if not self.post or not self.response:
            raise ValidationError("post and response must be non-empty")

    @property
    def post_vector(self) -> np.ndarray:
        return emotion_vector(self.post_emotions)

    @property
    def response_vector(self) -> np.ndarray:
        return emotion_vector(self.response_emotions)


def pair_from_json(line: str, lineno: int = 0) -> ConversationPair:
    try:
        obj = json.loads(line)
        return ConversationPair(
            post=tuple(obj["post"].split()),
            response=tuple(obj["response"].split()),
            post_emotions=tuple(obj["post_emotions"]),
            response_emotions=tuple(obj["response_emotions"]),
        )
    except (KeyError, TypeError, AttributeError, json.JSONDecodeError) as exc:
        raise FormatError(f"bad corpus record at line {lineno}: {exc}") from exc


def pair_to_json(pair: ConversationPair) -> str:
    return json.dumps(
        {
            "post": " ".join(pair.post),
            "response": " ".join(pair.response),
            "post_emotions": list(pair.post_emotions),
            "response_emotions": list(pair.response_emotions),
        },
        ensure_ascii=False,
    )


def read_corpus(path) -> list[ConversationPair]:
    pairs = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            pairs.append(pair_from_json(line, lineno))
    return pairs


def write_corpus(path, pairs: Iterable[ConversationPair], header_comment: str | None = None):
    with open(path, "w", encoding="utf-8") as fh:
        if header_comment:
            fh.write(f"# {header_comment}\n")
        for pair in pairs:
            fh.write(pair_to_json(pair) + "\n")


# ---------------------------------------------------------------------------
# Vocabulary
# ---------------------------------------------------------------------------

@dataclass
class Vocabulary:
    """Token/id bijection with four fixed reserved ids."""

    tokens: list[str] = field(default_factory=lambda: list(RESERVED_TOKENS))

    def __post_init__(self):
        if tuple(self.tokens[:4]) != RESERVED_TOKENS:
            raise ConfigurationError("reserved tokens must occupy ids 0-3")
        self._index = {tok: i for i, tok in enumerate(self.tokens)}
        if len(self._index) != len(self.tokens):
            raise ConfigurationError("vocabulary tokens must be unique")

    def __len__(self):
        return len(self.tokens)

    def __contains__(self, token: str) -> bool:
        return token in self._index

    def id_of(self, token: str) -> int:
        return self._index.get(token, UNK_ID)

    def token_of(self, idx: int) -> str:
        return self.tokens[idx]


def build_vocab(utterances: Iterable[str | Sequence[str]], max_size: int) -> Vocabulary:
    """Frequency-ranked vocabulary (ties broken lexicographically), capped.

    ``utterances`` may contain raw strings (whitespace-split here) or
    pre-tokenized sequences.
    """
    if max_size < 5:
        raise ConfigurationError("max_size must leave room for at least one token")
    counts = Counter()
    seen_any = False
    for utt in utterances:
        seen_any = True
        tokens = utt.split() if isinstance(utt, str) else utt
        counts.update(tokens)
    if not seen_any:
        raise ConfigurationError("cannot build a vocabulary from an empty corpus")
    ranked = sorted(counts.items(), key=lambda kv: (-kv[1], kv[0]))
    keep = [tok for tok, _ in ranked[: max_size - len(RESERVED_TOKENS)]]
    return Vocabulary(list(RESERVED_TOKENS) + keep)


def build_vocab_from_pairs(pairs: Iterable[ConversationPair], max_size: int) -> Vocabulary:
    def utterances():
        for p in pairs:
            yield p.post
            yield p.response

    return build_vocab(utterances(), max_size)


def encode_text(tokens: Sequence[str], vocab: Vocabulary) -> list[int]:
    """Map surface tokens to ids; out-of-vocabulary tokens become UNK."""
    if len(tokens) == 0:
        raise ValidationError("cannot encode an empty token sequence")
    return [vocab.id_of(t) for t in tokens]


def decode_ids(ids: Sequence[int], vocab: Vocabulary) -> list[str]:
    return [vocab.token_of(i) for i in ids]


# ---------------------------------------------------------------------------
# Embedding tables
# ---------------------------------------------------------------------------

@dataclass
class EmbeddingTable:
    matrix: np.ndarray  # (|V|, d)
    kind: str  # "semantic" | "emotional"


def init_embedding_matrix(vocab_size: int, dim: int, rng: np.random.Generator,
                          dtype=np.float32) -> np.ndarray:
    """Random rows in [-0.1, 0.1]; PAD/BOS/EOS rows are zero, UNK is random."""
    mat = rng.uniform(-0.1, 0.1, size=(vocab_size, dim)).astype(dtype)
    for rid in (PAD_ID, BOS_ID, EOS_ID):
        mat[rid] = 0.0
    return mat


def load_embeddings(path, vocab: Vocabulary, dim: int, kind: str,
                    rng: np.random.Generator, dtype=np.float32) -> EmbeddingTable:
    """Read a text embedding file: header ``<count> <dim>``, then one
    ``<token> <f1> ... <fd>`` row per line.

    Rows for in-vocabulary tokens are copied verbatim; everything else
    follows the random-init rule of :func:`init_embedding_matrix`.
    """
    if kind not in ("semantic", "emotional"):
        raise ConfigurationError(f"unknown embedding kind: {kind!r}")
    mat = init_embedding_matrix(len(vocab), dim, rng, dtype=dtype)
    with open(path, encoding="utf-8") as fh:
        header = fh.readline().split()
        if len(header) != 2:
            raise FormatError("embedding header must be '<count> <dim>'")
        try:
            count, file_dim = int(header[0]), int(header[1])
        except ValueError as exc:
            raise FormatError(f"bad embedding header: {exc}") from exc
        if file_dim != dim:
            raise FormatError(f"embedding dimension mismatch: file has {file_dim}, expected {dim}")
        for lineno, line in enumerate(fh, start=2):
            if not line.strip():
                continue
            parts = line.rstrip("\n").split(" ")
            if len(parts) != dim + 1:
                raise FormatError(f"embedding line {lineno}: expected {dim} values")
            token = parts[0]
            try:
                values = np.array([float(v) for v in parts[1:]], dtype=dtype)
            except ValueError as exc:
                raise FormatError(f"embedding line {lineno}: {exc}") from exc
            if token in vocab:
                rid = vocab.id_of(token)
                if rid not in (PAD_ID, UNK_ID, BOS_ID, EOS_ID):
                    mat[rid] = values
    if count < 0:
        raise FormatError("embedding header count must be non-negative")
    return EmbeddingTable(matrix=mat, kind=kind)


def write_embeddings(path, tokens: Sequence[str], matrix: np.ndarray):
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(f"{len(tokens)} {matrix.shape[1]}\n")
        for tok, row in zip(tokens, matrix):
            fh.write(tok + " " + " ".join(repr(float(v)) for v in row) + "\n")


# ---------------------------------------------------------------------------
# Synthetic corpus with a planted emotion transition
# ---------------------------------------------------------------------------

def default_lexicons(words_per_emotion: int = 12) -> dict[str, tuple[str, ...]]:
    return {
        name: tuple(f"{name.lower()}{i:02d}" for i in range(words_per_emotion))
        for name in EMOTIONS
    }


def default_filler(count: int = 24) -> tuple[str, ...]:
    return tuple(f"chat{i:02d}" for i in range(count))


def shift_transition() -> np.ndarray:
    """Deterministic planted map: category i always answers with i+1 (mod K)."""
    mat = np.zeros((NUM_EMOTIONS, NUM_EMOTIONS))
    for i in range(NUM_EMOTIONS):
        mat[i, (i + 1) % NUM_EMOTIONS] = 1.0
    return mat


@dataclass
class SyntheticSpec:
    """Generator settings for a corpus with a planted emotion transition."""

    transition: np.ndarray  # (K, K); rows are response-emotion distributions
    lexicons: dict[str, tuple[str, ...]] = field(default_factory=default_lexicons)
    filler: tuple[str, ...] = field(default_factory=default_filler)
    pair_count: int = 1000
    min_len: int = 4
    max_len: int = 10
    noise_rate: float = 0.0
    lexicon_density: float = 0.5  # chance a non-anchor slot draws from the emotion lexicon

    def validate(self):
        mat = np.asarray(self.transition, dtype=np.float64)
        if mat.shape != (NUM_EMOTIONS, NUM_EMOTIONS):
            raise ConfigurationError(f"transition matrix must be {NUM_EMOTIONS}x{NUM_EMOTIONS}")
        if np.any(mat < 0) or np.any(np.abs(mat.sum(axis=1) - 1.0) > 1e-9):
            raise ConfigurationError("transition rows must be probability distributions")
        if set(self.lexicons) != set(EMOTIONS):
            raise ConfigurationError("lexicons must cover every emotion category")
        all_words = [w for lex in self.lexicons.values() for w in lex] + list(self.filler)
        if len(all_words) != len(set(all_words)):
            raise ConfigurationError("lexicons (and filler) must be disjoint")
        if not (1 <= self.min_len <= self.max_len):
            raise ConfigurationError("length range must satisfy 1 <= min <= max")
        if not 0.0 <= self.noise_rate <= 1.0:
            raise ConfigurationError("noise_rate must lie in [0, 1]")


def _sample_utterance(emotion: int, spec: SyntheticSpec, rng: np.random.Generator) -> tuple[str, ...]:
    lex = spec.lexicons[EMOTIONS[emotion]]
    length = int(rng.integers(spec.min_len, spec.max_len + 1))
    anchor = int(rng.integers(length))
    tokens = []
    for pos in range(length):
        if pos == anchor or rng.random() < spec.lexicon_density:
            tokens.append(lex[int(rng.integers(len(lex)))])
        else:
            tokens.append(spec.filler[int(rng.integers(len(spec.filler)))])
    return tuple(tokens)


def generate_synthetic_pairs(spec: SyntheticSpec, seed: int) -> list[ConversationPair]:
    """Deterministic synthetic pairs with the planted transition.

    Post emotions are uniform over the categories; the response emotion is
    drawn from the planted transition row, except for a ``noise_rate``
    fraction of pairs whose response emotion is re-drawn uniformly (the
    noisy draw may coincide with the planted one).  Response text always
    matches the response's actual label.
    """
    spec.validate()
    transition = np.asarray(spec.transition, dtype=np.float64)
    rng = np.random.Generator(np.random.PCG64(seed))
    pairs = []
    for _ in range(spec.pair_count):
        post_emo = int(rng.integers(NUM_EMOTIONS))
        resp_emo = int(rng.choice(NUM_EMOTIONS, p=transition[post_emo]))
        if rng.random() < spec.noise_rate:
            resp_emo = int(rng.integers(NUM_EMOTIONS))
        pairs.append(
            ConversationPair(
                post=_sample_utterance(post_emo, spec, rng),
                response=_sample_utterance(resp_emo, spec, rng),
                post_emotions=(EMOTIONS[post_emo],),
                response_emotions=(EMOTIONS[resp_emo],),
            )
        )
    return pairs


def generate_synthetic_corpus(spec: SyntheticSpec, seed: int, path,
                              header_comment: str | None = None) -> list[ConversationPair]:
    pairs = generate_synthetic_pairs(spec, seed)
    write_corpus(path, pairs, header_comment=header_comment)
    return pairs


# ---------------------------------------------------------------------------
# Emotion interaction pattern (EIP) analysis
# ---------------------------------------------------------------------------

def analyze_eip(pairs: Iterable[ConversationPair], mode: str = "primary"):
    """Count (post emotion, response emotion) transitions over a corpus.

    ``primary`` mode returns a KxK integer matrix indexed by primary
    labels; ``dual`` mode returns a dict keyed by
    ``((post_primary, post_secondary), (resp_primary, resp_secondary))``.
    """
    if mode == "primary":
        counts = np.zeros((NUM_EMOTIONS, NUM_EMOTIONS), dtype=np.int64)
        for pair in pairs:
            counts[primary_label(pair.post_emotions), primary_label(pair.response_emotions)] += 1
        return counts
    if mode == "dual":
        counts: Counter = Counter()
        for pair in pairs:
            counts[(dual_label(pair.post_emotions), dual_label(pair.response_emotions))] += 1
        return dict(counts)
    raise ConfigurationError(f"unknown EIP mode: {mode!r}")


def _dual_key_str(key: tuple[str, str]) -> str:
    return f"({key[0]},{key[1]})"


def eip_to_csv(eip, mode: str = "primary", header_comment: str | None = None) -> str:
    """Render an EIP count table as CSV text (rows: post, columns: response)."""
    lines = []
    if header_comment:
        lines.append(f"# {header_comment}")
    if mode == "primary":
        lines.append(",".join([""] + list(EMOTIONS)))
        for i, name in enumerate(EMOTIONS):
            lines.append(",".join([name] + [str(int(c)) for c in eip[i]]))
    elif mode == "dual":
        def key_rank(k):
            return (EMOTION_INDEX[k[0]], EMOTION_INDEX[k[1]])

        post_keys = sorted({k[0] for k in eip}, key=key_rank)
        resp_keys = sorted({k[1] for k in eip}, key=key_rank)
        lines.append(",".join([""] + [_dual_key_str(k) for k in resp_keys]))
        for pk in post_keys:
            row = [str(eip.get((pk, rk), 0)) for rk in resp_keys]
            lines.append(",".join([_dual_key_str(pk)] + row))
    else:
        raise ConfigurationError(f"unknown EIP mode: {mode!r}")
    return "\n".join(lines) + "\n"


def iter_label_indices(pairs: Iterable[ConversationPair]) -> Iterator[tuple[int, int]]:
    for pair in pairs:
        yield primary_label(pair.post_emotions), primary_label(pair.response_emotions)
