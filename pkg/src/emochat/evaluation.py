"""Automatic response metrics, agreement statistics, and PCA projection.

All metrics are pure functions over token sequences / arrays.  Tokens
arrive pre-segmented (whitespace tokenization happens corpus-side).
"""
from __future__ import annotations

import csv
import io
import json
from collections import Counter

import numpy as np

from .errors import FormatError, MetricError, ValidationError


def _ngrams(tokens, n):
    return [tuple(tokens[i:i + n]) for i in range(len(tokens) - n + 1)]


def distinct_n(responses, n: int) -> float:
    """Unique n-grams across the corpus divided by total n-gram count."""
    if n < 1:
        raise ValidationError("n must be >= 1")
    total = 0
    seen = set()
    for resp in responses:
        grams = _ngrams(list(resp), n)
        total += len(grams)
        seen.update(grams)
    if total == 0:
        raise MetricError(f"no {n}-grams in any response; distinct-{n} undefined")
    return len(seen) / total


def bleu_n(hypotheses, references, n: int) -> float:
    """Corpus BLEU with uniform 1/n weights over orders 1..n.

    Clipped n-gram counts, brevity penalty, and add-one smoothing on any
    order whose clipped match count is zero (p_k = 1 / (total_k + 1)).
    An all-empty hypothesis corpus scores 0.
    """
    if len(hypotheses) == 0 or len(hypotheses) != len(references):
        raise MetricError("hypotheses and references must be equal-length, non-empty")
    if n < 1:
        raise ValidationError("n must be >= 1")
    matched = np.zeros(n)
    totals = np.zeros(n)
    hyp_len = ref_len = 0
    for hyp, ref in zip(hypotheses, references):
        hyp, ref = list(hyp), list(ref)
        hyp_len += len(hyp)
        ref_len += len(ref)
        for k in range(1, n + 1):
            hyp_counts = Counter(_ngrams(hyp, k))
            ref_counts = Counter(_ngrams(ref, k))
            totals[k - 1] += sum(hyp_counts.values())
            matched[k - 1] += sum(min(c, ref_counts[g]) for g, c in hyp_counts.items())
    if hyp_len == 0:
        return 0.0
    log_p = 0.0
    for k in range(n):
        if matched[k] > 0:
            p = matched[k] / totals[k]
        else:
            p = 1.0 / (totals[k] + 1.0)
        log_p += np.log(p) / n
    bp = 1.0 if hyp_len > ref_len else np.exp(1.0 - ref_len / hyp_len)
    return float(bp * np.exp(log_p))


def response_quality(semantic: int, emotion: int) -> int:
    """Binary quality: semantic AND emotion."""
    if semantic not in (0, 1) or emotion not in (0, 1):
        raise ValidationError("human scores must be binary")
    return semantic & emotion


def fleiss_kappa(ratings) -> float:
    """Fleiss' kappa over an (items x categories) rater-count matrix."""
    mat = np.asarray(ratings, dtype=np.float64)
    if mat.ndim != 2 or mat.shape[0] < 1:
        raise ValidationError("ratings must be a non-empty 2-D count matrix")
    row_sums = mat.sum(axis=1)
    r = row_sums[0]
    if r < 2 or np.any(row_sums != r):
        raise ValidationError("every item needs the same rater count >= 2")
    n_items = mat.shape[0]
    p_cat = mat.sum(axis=0) / (n_items * r)
    p_bar = float(np.mean((np.sum(mat * mat, axis=1) - r) / (r * (r - 1))))
    p_e = float(np.sum(p_cat * p_cat))
    if p_e >= 1.0:
        # single-category corpus: agreement is perfect by construction
        if p_bar >= 1.0:
            return 1.0
        raise MetricError("chance agreement is 1 but observed agreement is not")
    return (p_bar - p_e) / (1.0 - p_e)


def emotion_accuracy(predictions, golds, mode: str = "argmax") -> float:
    """Fraction of correct emotion predictions.

    ``argmax``: correct when the prediction's argmax category (ties take
    the lowest index) is a positive gold category.  ``exact``: correct
    when thresholding at 0.5 reproduces the gold multi-hot exactly.
    """
    preds = list(predictions)
    gold = list(golds)
    if len(preds) == 0:
        raise MetricError("emotion accuracy over an empty list is undefined")
    if len(preds) != len(gold):
        raise ValidationError("predictions and golds must have equal length")
    hits = 0
    for p, g in zip(preds, gold):
        p = np.asarray(p, dtype=np.float64)
        g = np.asarray(g, dtype=np.float64)
        if mode == "argmax":
            hits += int(g[int(np.argmax(p))] > 0)
        elif mode == "exact":
            hits += int(np.array_equal((p >= 0.5).astype(np.float64), g))
        else:
            raise ValidationError(f"unknown accuracy mode: {mode!r}")
    return hits / len(preds)


def pca_project(vectors, dims: int = 2) -> np.ndarray:
    """Mean-centered projection onto the top principal components.

    Components are ordered by decreasing variance; each component's sign
    is fixed so its first nonzero loading is positive.  Degenerate
    (zero-variance) directions project to exact zeros.
    """
    mat = np.asarray(vectors, dtype=np.float64)
    if mat.ndim != 2 or mat.shape[0] < 2:
        raise ValidationError("pca_project needs >= 2 vectors")
    centered = mat - mat.mean(axis=0)
    if not np.any(centered):
        return np.zeros((mat.shape[0], dims))
    _, svals, vt = np.linalg.svd(centered, full_matrices=False)
    out = np.zeros((mat.shape[0], dims))
    usable = min(dims, vt.shape[0])
    for c in range(usable):
        if svals[c] <= svals[0] * 1e-12:
            break
        load = vt[c]
        nz = np.flatnonzero(np.abs(load) > 1e-12)
        if nz.size and load[nz[0]] < 0:
            load = -load
        out[:, c] = centered @ load
    return out


def read_human_scores(path) -> list:
    """Read annotator rows from a CSV with columns id, semantic, emotion.

    Returns one dict per row with the derived binary ``quality`` field.
    """
    rows = []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        required = {"id", "semantic", "emotion"}
        if reader.fieldnames is None or not required.issubset(reader.fieldnames):
            raise FormatError(f"human-score CSV needs columns {sorted(required)}")
        for lineno, row in enumerate(reader, start=2):
            try:
                semantic = int(row["semantic"])
                emotion = int(row["emotion"])
            except (TypeError, ValueError) as exc:
                raise FormatError(f"line {lineno}: non-integer score") from exc
            quality = response_quality(semantic, emotion)
            rows.append({"id": row["id"], "semantic": semantic,
                         "emotion": emotion, "quality": quality})
    if not rows:
        raise FormatError("human-score CSV has no data rows")
    return rows


def human_score_summary(rows) -> dict:
    n = len(rows)
    return {
        "count": n,
        "semantic": sum(r["semantic"] for r in rows) / n,
        "emotion": sum(r["emotion"] for r in rows) / n,
        "quality": sum(r["quality"] for r in rows) / n,
    }


def metric_report(hypotheses, references) -> dict:
    """Headline automatic metrics plus per-example token counts."""
    report = {
        "count": len(hypotheses),
        "distinct_1": distinct_n(hypotheses, 1),
        "distinct_2": distinct_n(hypotheses, 2) if any(len(h) >= 2 for h in hypotheses) else 0.0,
        "bleu_1": bleu_n(hypotheses, references, 1),
        "bleu_2": bleu_n(hypotheses, references, 2),
        "examples": [
            {"index": i, "hyp_len": len(h), "ref_len": len(r)}
            for i, (h, r) in enumerate(zip(hypotheses, references))
        ],
    }
    return report


def report_to_json(report: dict) -> str:
    return json.dumps(report, indent=2, sort_keys=True) + "\n"


def points_to_csv(coords, labels=None) -> str:
    """Render 2-D projection points as a CSV string (label,x,y)."""
    coords = np.asarray(coords, dtype=np.float64)
    if coords.ndim != 2 or coords.shape[1] != 2:
        raise ValidationError("expected an (N, 2) coordinate array")
    if labels is not None and len(labels) != coords.shape[0]:
        raise ValidationError("labels must match point count")
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["label", "x", "y"])
    for i, (x, y) in enumerate(coords):
        label = labels[i] if labels is not None else str(i)
        writer.writerow([label, repr(float(x)), repr(float(y))])
    return buf.getvalue()
