"""Held-out precision/recall evaluation, AUC and sample dumps."""
import csv
import json
from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class PrPoint:
    recall: float
    precision: float
    threshold: float


def pr_points(confidence, predicted, gold, na_index):
    """PR curve from one scored prediction per sentence.

    A prediction is correct when it equals a non-NA gold label. Thresholds
    sweep the distinct confidences from high to low; predictions with zero
    confidence are never counted as made.
    """
    confidence = np.asarray(confidence, dtype=np.float64)
    predicted = np.asarray(predicted)
    gold = np.asarray(gold)
    if confidence.size == 0:
        raise ValueError("no predictions to evaluate")
    n_pos = int(np.sum(gold != na_index))
    correct = (predicted == gold) & (gold != na_index)
    order = np.argsort(-confidence, kind="stable")
    conf = confidence[order]
    hits = np.cumsum(correct[order])
    points = []
    i = 0
    n = len(conf)
    while i < n:
        c = conf[i]
        if c <= 0:
            break
        j = i
        while j + 1 < n and conf[j + 1] == c:
            j += 1
        tp = int(hits[j])
        recall = tp / n_pos if n_pos else 0.0
        points.append(PrPoint(recall, tp / (j + 1), float(c)))
        i = j + 1
    return points


def held_out_eval(disc, test_encoded, schema):
    """Score every test sentence with its most probable non-NA relation."""
    if not test_encoded:
        raise ValueError("empty test corpus")
    dist, _ = disc.predict(test_encoded)
    non_na = np.array(schema.non_na)
    sub = dist[:, non_na]
    best = sub.argmax(axis=1)
    gold = np.array([e.relation for e in test_encoded])
    return pr_points(sub[np.arange(len(best)), best], non_na[best], gold, schema.na_index)


def auc(points):
    """Trapezoidal area over recall, starting from (0, precision of the first point)."""
    if not points:
        raise ValueError("auc needs at least one PR point")
    r = np.array([0.0] + [p.recall for p in points])
    p = np.array([points[0].precision] + [p.precision for p in points])
    area = float(np.sum((r[1:] - r[:-1]) * (p[1:] + p[:-1]) / 2.0))
    return min(max(area, 0.0), 1.0)


def write_pr_csv(path, points):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["threshold", "recall", "precision"])
        for pt in points:
            w.writerow([repr(pt.threshold), repr(pt.recall), repr(pt.precision)])


def bracketed(sentence):
    toks = list(sentence.tokens)
    toks[sentence.e1p] = f"[E1 {toks[sentence.e1p]}]"
    toks[sentence.e2p] = f"[E2 {toks[sentence.e2p]}]"
    return " ".join(toks)


def dump_samples(gen, vocab, schema, per_relation, out_path, rng, temperature=1.0, jsonl_path=None):
    """Write ``per_relation`` generated sentences under a header per non-NA relation."""
    if per_relation < 1:
        raise ValueError("per_relation must be >= 1")
    from .corpus import save_jsonl

    all_sentences = []
    lines = []
    for r in schema.non_na:
        samples = gen.draw(np.full(per_relation, r), rng, temperature)
        sents = samples.sentences(vocab)
        all_sentences.extend(sents)
        lines.append(f"== {schema.name(r)} ==")
        lines.extend(bracketed(s) for s in sents)
        lines.append("")
    with open(out_path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("\n".join(lines))
    if jsonl_path is not None:
        save_jsonl(jsonl_path, all_sentences, schema)
    return all_sentences


def write_classifications(path, disc, encoded):
    """One JSON object per input sentence with its relation distribution and p_real."""
    dist, p_real = disc.predict(encoded)
    with open(path, "w", newline="\n") as fh:
        for d, p in zip(dist, p_real):
            fh.write(json.dumps({"relation_dist": [float(x) for x in d], "p_real": float(p)}))
            fh.write("\n")
