"""Evaluation metrics: same-different average precision with
speaker-disjoint relevance, a speaker-classification probe, retrieval
precision metrics and EER, keyword-spotting scores, and Spearman word
similarity against the synthetic co-occurrence oracle.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .alignment import dtw_cost
from .corpus import Corpus
from .neuralnet import cosine_distance


class MetricError(Exception):
    pass


@dataclass
class PRCurve:
    thresholds: np.ndarray
    precision: np.ndarray
    recall: np.ndarray
    ap: float


def _pair_distances(items, scorer):
    items = list(items)
    n = len(items)
    if scorer == "cosine":
        z = np.asarray(items, dtype=np.float64)
        norms = np.linalg.norm(z, axis=1)
        if np.any(norms == 0.0):
            raise MetricError("zero-norm embedding")
        z_hat = z / norms[:, None]
        full = 1.0 - z_hat @ z_hat.T
    elif scorer == "dtw":
        full = np.zeros((n, n))
        for i in range(n):
            for j in range(i + 1, n):
                full[i, j] = full[j, i] = dtw_cost(items[i], items[j]).cost
    else:
        raise MetricError(f"unknown scorer {scorer!r}")
    pairs = [(i, j) for i in range(n) for j in range(i + 1, n)]
    return pairs, np.array([full[i, j] for i, j in pairs])


def same_different_ap(items, labels, speakers, scorer="cosine") -> PRCurve:
    """Average precision of same-word retrieval from all segment pairs.

    Every unordered pair is scored and ranked by ascending distance. A pair
    is relevant only when labels match AND speakers differ; same-word pairs
    from one speaker stay in the ranking as non-relevant retrievals. AP is
    the threshold sweep over distinct distances, accumulating precision
    times recall gain.
    """
    labels = list(labels)
    speakers = list(speakers)
    pairs, distances = _pair_distances(items, scorer)
    relevant = np.array(
        [labels[i] == labels[j] and speakers[i] != speakers[j] for i, j in pairs]
    )
    n_rel = int(relevant.sum())
    if n_rel == 0:
        raise MetricError("no same-word different-speaker pair")
    thresholds = np.unique(distances)
    precision = np.empty(len(thresholds))
    recall = np.empty(len(thresholds))
    ap = 0.0
    prev_recall = 0.0
    for t, thr in enumerate(thresholds):
        retrieved = distances <= thr
        hits = int((retrieved & relevant).sum())
        precision[t] = hits / int(retrieved.sum())
        recall[t] = hits / n_rel
        ap += (recall[t] - prev_recall) * precision[t]
        prev_recall = recall[t]
    return PRCurve(thresholds=thresholds, precision=precision, recall=recall, ap=float(ap))


def speaker_probe(embeddings, speakers, seed=0) -> float:
    """Test accuracy of softmax regression predicting the speaker.

    Seeded stratified 80/20 split (at least one test item per speaker),
    weights from zero, L2 1e-4 on the weight matrix, full-batch Adam until
    the gradient sup-norm drops below 1e-6.
    """
    x = np.asarray(embeddings, dtype=np.float64)
    speakers = list(speakers)
    classes = sorted(set(speakers))
    if len(classes) < 2:
        raise MetricError("need at least two speakers")
    index_of = {c: i for i, c in enumerate(classes)}
    y = np.array([index_of[s] for s in speakers])
    rng = np.random.default_rng(seed)
    test_idx = []
    train_idx = []
    for c in range(len(classes)):
        members = np.flatnonzero(y == c)
        if len(members) < 2:
            raise MetricError(f"speaker {classes[c]!r} has a single item")
        members = members[rng.permutation(len(members))]
        n_test = max(1, int(round(0.2 * len(members))))
        test_idx.extend(members[:n_test])
        train_idx.extend(members[n_test:])
    train_idx = np.array(sorted(train_idx))
    test_idx = np.array(sorted(test_idx))

    n_classes = len(classes)
    w = np.zeros((n_classes, x.shape[1]))
    b = np.zeros(n_classes)
    x_tr, y_tr = x[train_idx], y[train_idx]
    onehot = np.zeros((len(y_tr), n_classes))
    onehot[np.arange(len(y_tr)), y_tr] = 1.0
    l2 = 1e-4
    m_w = np.zeros_like(w)
    v_w = np.zeros_like(w)
    m_b = np.zeros_like(b)
    v_b = np.zeros_like(b)
    beta1, beta2, eps, lr = 0.9, 0.999, 1e-8, 0.1
    for step in range(1, 2001):
        logits = x_tr @ w.T + b
        logits -= logits.max(axis=1, keepdims=True)
        expd = np.exp(logits)
        probs = expd / expd.sum(axis=1, keepdims=True)
        d_logits = (probs - onehot) / len(y_tr)
        g_w = d_logits.T @ x_tr + 2.0 * l2 * w
        g_b = d_logits.sum(axis=0)
        if max(np.abs(g_w).max(), np.abs(g_b).max()) < 1e-6:
            break
        m_w = beta1 * m_w + (1 - beta1) * g_w
        v_w = beta2 * v_w + (1 - beta2) * g_w**2
        m_b = beta1 * m_b + (1 - beta1) * g_b
        v_b = beta2 * v_b + (1 - beta2) * g_b**2
        w -= lr * (m_w / (1 - beta1**step)) / (np.sqrt(v_w / (1 - beta2**step)) + eps)
        b -= lr * (m_b / (1 - beta1**step)) / (np.sqrt(v_b / (1 - beta2**step)) + eps)
    pred = np.argmax(x[test_idx] @ w.T + b, axis=1)
    return float(np.mean(pred == y[test_idx]))


def _precision_at_k(result, relevance, k):
    if not relevance:
        raise MetricError("empty relevance set")
    ranking = result.ranking
    if len(ranking) < k:
        raise MetricError(f"ranking holds {len(ranking)} utterances, need {k}")
    top = ranking[:k]
    hits = sum(1 for utt_id, _, _ in top if utt_id in relevance)
    return hits / k


def precision_at_10(result, relevance) -> float:
    """Fraction of the ten top-scoring utterances that contain the query."""
    return _precision_at_k(result, relevance, 10)


def precision_at_n(result, relevance) -> float:
    """Precision over the top N, with N the number of relevant utterances."""
    return _precision_at_k(result, relevance, len(relevance))


def macro_average(per_type_values: dict) -> float:
    """Mean over types of the mean over that type's query tokens."""
    if not per_type_values:
        raise MetricError("nothing to average")
    type_means = []
    for label in sorted(per_type_values):
        values = per_type_values[label]
        if not values:
            raise MetricError(f"type {label!r} has no values")
        type_means.append(sum(values) / len(values))
    return sum(type_means) / len(type_means)


def eer(scores, labels) -> float:
    """Equal error rate of a detect-if-score-below-threshold rule.

    Sweeps the threshold over every distinct score (plus a reject-all
    sentinel) and linearly interpolates between the two sweep points where
    false-acceptance minus false-rejection changes sign.
    """
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray([bool(l) for l in labels])
    n_pos = int(labels.sum())
    n_neg = len(labels) - n_pos
    if n_pos == 0 or n_neg == 0:
        raise MetricError("need both classes for EER")
    prev_fa, prev_fr = 0.0, 1.0
    for thr in np.unique(scores):
        accepted = scores <= thr
        fa = float((accepted & ~labels).sum()) / n_neg
        fr = float((~accepted & labels).sum()) / n_pos
        d_prev, d_here = prev_fa - prev_fr, fa - fr
        if d_prev <= 0 <= d_here:
            if d_here == d_prev:
                return prev_fa
            t = -d_prev / (d_here - d_prev)
            return prev_fa + t * (fa - prev_fa)
        prev_fa, prev_fr = fa, fr
    return prev_fa


def kws_metrics(flags, truth):
    """Precision, recall, F1 of flagged (keyword, utterance) pairs.

    Precision is hits over flagged (0 when nothing is flagged); recall is
    hits over true occurrences and requires a nonempty truth set.
    """
    flags = set(flags)
    truth = set(truth)
    if not truth:
        raise MetricError("empty truth set")
    hits = len(flags & truth)
    precision = hits / len(flags) if flags else 0.0
    recall = hits / len(truth)
    f1 = 0.0 if precision + recall == 0 else 2 * precision * recall / (precision + recall)
    return precision, recall, f1


def _average_ranks(values):
    values = np.asarray(values, dtype=np.float64)
    order = np.argsort(values, kind="stable")
    ranks = np.empty(len(values))
    i = 0
    while i < len(values):
        j = i
        while j + 1 < len(values) and values[order[j + 1]] == values[order[i]]:
            j += 1
        # ranks are 1-based; ties share the average of their rank range
        avg = (i + j) / 2.0 + 1.0
        for k in range(i, j + 1):
            ranks[order[k]] = avg
        i = j + 1
    return ranks


def spearman_rho(x, y) -> float:
    """Pearson correlation of average ranks."""
    x = list(x)
    y = list(y)
    if len(x) != len(y):
        raise MetricError("length mismatch")
    if len(x) < 3:
        raise MetricError("need at least 3 points")
    rx = _average_ranks(x)
    ry = _average_ranks(y)
    rx -= rx.mean()
    ry -= ry.mean()
    denom = np.sqrt((rx**2).sum() * (ry**2).sum())
    if denom == 0.0:
        raise MetricError("zero rank variance")
    return float((rx * ry).sum() / denom)


def word_similarity(embed_fn, corpus: Corpus, reference_pairs, draws=10, seed=0):
    """Correlate embedding similarity with reference word-pair similarity.

    Args:
        embed_fn: maps a segment's frame matrix to an embedding vector.
        corpus: labeled corpus holding tokens of every referenced word.
        reference_pairs: (label_a, label_b, oracle similarity) triples.
        draws: single-token repetitions for the second correlation.
        seed: seed for those draws.

    Returns:
        (rho_avg, rho_single): Spearman correlation using class-mean
        embeddings, and the mean correlation over seeded single-token draws.
    """
    if not reference_pairs:
        raise MetricError("no reference pairs")
    needed = sorted({lab for a, b, _ in reference_pairs for lab in (a, b)})
    tokens = {label: [] for label in needed}
    for seg in corpus.segments:
        if seg.word_label in tokens:
            tokens[seg.word_label].append(seg)
    for label in needed:
        if not tokens[label]:
            raise MetricError(f"word {label!r} has no token in the corpus")
    embeddings = {
        label: np.asarray([embed_fn(seg.features) for seg in segs])
        for label, segs in tokens.items()
    }
    oracle = [sim for _, _, sim in reference_pairs]

    means = {label: embs.mean(axis=0) for label, embs in embeddings.items()}
    avg_sims = [
        1.0 - cosine_distance(means[a], means[b]) for a, b, _ in reference_pairs
    ]
    rho_avg = spearman_rho(avg_sims, oracle)

    rng = np.random.default_rng(seed)
    rhos = []
    for _ in range(draws):
        picks = {
            label: embeddings[label][int(rng.integers(0, len(embeddings[label])))]
            for label in needed
        }
        sims = [1.0 - cosine_distance(picks[a], picks[b]) for a, b, _ in reference_pairs]
        rhos.append(spearman_rho(sims, oracle))
    return rho_avg, float(np.mean(rhos))


def _plain(value):
    """Numpy scalars repr as np.float64(...); report files want bare values."""
    if isinstance(value, np.floating):
        return float(value)
    if isinstance(value, np.integer):
        return int(value)
    return value


def write_report_tsv(path, metrics: dict) -> None:
    from pathlib import Path

    lines = [f"{name}\t{_plain(metrics[name])!r}" for name in sorted(metrics)]
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def write_pr_curve_tsv(path, curve: PRCurve) -> None:
    from pathlib import Path

    lines = ["recall\tprecision"]
    for r, p in zip(curve.recall, curve.precision):
        lines.append(f"{float(r)!r}\t{float(p)!r}")
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")
