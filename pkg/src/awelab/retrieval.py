"""Query-by-example search and keyword spotting over sliding-window
sub-segment embeddings: segmentation, index construction, ranking,
detection thresholds, and the masked-query evaluation view.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .corpus import Corpus


class RetrievalError(Exception):
    pass


@dataclass(frozen=True)
class SegmentationParams:
    min_len: int = 20
    max_len: int = 60
    start_stride: int = 3
    len_stride: int = 5

    def validate(self):
        if not 1 <= self.min_len <= self.max_len:
            raise RetrievalError("need 1 <= min_len <= max_len")
        if self.start_stride < 1 or self.len_stride < 1:
            raise RetrievalError("strides must be >= 1")


@dataclass
class SearchIndex:
    """Per utterance: the candidate spans and their embeddings (row k of the
    matrix embeds spans[k]). Immutable once built."""

    entries: dict  # utt_id -> (list of (start, end), (n_spans, E) array)
    embedder_tag: str
    params: SegmentationParams


@dataclass
class QueryResult:
    """Utterances ranked by ascending score; each row is
    (utterance_id, score, best span)."""

    ranking: list


@dataclass
class KeywordSpec:
    keyword: str
    template_ids: list
    embedding: np.ndarray
    threshold: float | None = None


@dataclass
class Detection:
    keyword: str
    utterance_id: str
    score: float
    flag: bool
    best_span: tuple


def segment_sliding(frames, params: SegmentationParams):
    """Candidate spans of an utterance: starts on the start_stride grid,
    lengths from min_len to max_len on the len_stride grid, clipped to the
    utterance. An utterance shorter than min_len yields its full span."""
    params.validate()
    total = int(np.asarray(frames).shape[0])
    if total == 0:
        raise RetrievalError("empty utterance")
    if total < params.min_len:
        return [(0, total)]
    spans = []
    for start in range(0, total, params.start_stride):
        for length in range(params.min_len, params.max_len + 1, params.len_stride):
            if start + length <= total:
                spans.append((start, start + length))
    return spans


def build_index(embedder, utterances: dict, params: SegmentationParams, embedder_tag="") -> SearchIndex:
    """Embed every candidate span of every utterance.

    Args:
        embedder: maps a frame matrix to an embedding vector.
        utterances: utt_id -> (T, D) frame matrix.
        params: segmentation grid.
    """
    entries = {}
    for utt_id in sorted(utterances):
        frames = np.asarray(utterances[utt_id], dtype=np.float64)
        spans = segment_sliding(frames, params)
        vecs = np.asarray([embedder(frames[s:e]) for s, e in spans])
        entries[utt_id] = (spans, vecs)
    return SearchIndex(entries=entries, embedder_tag=embedder_tag, params=params)


def _utterance_score(query, spans, vecs):
    norms = np.linalg.norm(vecs, axis=1)
    qn = np.linalg.norm(query)
    if qn == 0.0 or np.any(norms == 0.0):
        raise RetrievalError("zero-norm embedding in query or index")
    dists = 1.0 - (vecs @ query) / (norms * qn)
    best = int(np.argmin(dists))
    return float(dists[best]), spans[best]


def qbe_rank(index: SearchIndex, query) -> QueryResult:
    """Rank utterances by their minimum sub-segment cosine distance to the
    query. Ties break on utterance id."""
    if not index.entries:
        raise RetrievalError("empty index")
    query = np.asarray(query, dtype=np.float64)
    rows = []
    for utt_id in sorted(index.entries):
        spans, vecs = index.entries[utt_id]
        score, best_span = _utterance_score(query, spans, vecs)
        rows.append((utt_id, score, best_span))
    rows.sort(key=lambda r: (r[1], r[0]))
    return QueryResult(ranking=rows)


def build_keyword_spec(keyword, template_ids, corpus: Corpus, embedder, threshold=None) -> KeywordSpec:
    """Average the template embeddings into one query vector per keyword."""
    if not template_ids:
        raise RetrievalError(f"keyword {keyword!r} has no templates")
    vecs = [embedder(corpus.segment(seg_id).features) for seg_id in template_ids]
    return KeywordSpec(
        keyword=keyword,
        template_ids=list(template_ids),
        embedding=np.mean(vecs, axis=0),
        threshold=threshold,
    )


def kws_detect(index: SearchIndex, keywords, threshold=None) -> list:
    """Score every (keyword, utterance) pair and flag scores at or below the
    keyword's threshold (falling back to the global one)."""
    if not keywords:
        raise RetrievalError("no keywords")
    detections = []
    for spec in keywords:
        thr = spec.threshold if spec.threshold is not None else threshold
        if thr is None:
            raise RetrievalError(f"no threshold for keyword {spec.keyword!r}")
        result = qbe_rank(index, spec.embedding)
        for utt_id, score, span in result.ranking:
            detections.append(
                Detection(
                    keyword=spec.keyword,
                    utterance_id=utt_id,
                    score=score,
                    flag=score <= thr,
                    best_span=span,
                )
            )
    detections.sort(key=lambda d: (d.keyword, d.score, d.utterance_id))
    return detections


def _best_f1_threshold(scores, labels):
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray([bool(l) for l in labels])
    if labels.all() or not labels.any():
        raise RetrievalError("tuning needs both classes")
    uniq = np.unique(scores)
    candidates = [uniq[0] - 1.0]
    candidates.extend((uniq[:-1] + uniq[1:]) / 2.0)
    candidates.append(uniq[-1] + 1.0)
    n_pos = int(labels.sum())
    best_thr, best_f1 = None, -1.0
    for thr in candidates:
        flagged = scores <= thr
        tp = int((flagged & labels).sum())
        n_flagged = int(flagged.sum())
        precision = tp / n_flagged if n_flagged else 0.0
        recall = tp / n_pos
        f1 = 0.0 if precision + recall == 0 else 2 * precision * recall / (precision + recall)
        if f1 > best_f1:
            best_thr, best_f1 = float(thr), f1
    return best_thr, best_f1


def tune_threshold(scores, labels, mode="global", keywords=None):
    """Pick detection thresholds maximizing F1 on development scores.

    The sweep covers midpoints of adjacent unique scores plus flag-nothing
    and flag-everything sentinels; ties keep the smaller threshold. In
    per_keyword mode, keywords gives each score's keyword and the result is
    a dict keyword -> threshold.
    """
    if mode == "global":
        thr, _ = _best_f1_threshold(scores, labels)
        return thr
    if mode != "per_keyword":
        raise RetrievalError(f"unknown tuning mode {mode!r}")
    if keywords is None:
        raise RetrievalError("per_keyword tuning needs the keyword of each score")
    keywords = list(keywords)
    if len(keywords) != len(scores):
        raise RetrievalError("keywords and scores differ in length")
    out = {}
    for keyword in sorted(set(keywords)):
        idx = [i for i, k in enumerate(keywords) if k == keyword]
        thr, _ = _best_f1_threshold([scores[i] for i in idx], [labels[i] for i in idx])
        out[keyword] = thr
    return out


def mask_query_occurrences(corpus: Corpus, keyword_label) -> Corpus:
    """Evaluation-only view of the corpus with every token of the query's
    word type removed (utterances emptied entirely disappear). Requires a
    labeled corpus; a label with no occurrences returns an identical view."""
    if not any(seg.word_label is not None for seg in corpus.segments):
        raise RetrievalError("cannot mask occurrences on an unlabeled corpus")
    if not keyword_label:
        raise RetrievalError("empty keyword label")
    kept = [seg for seg in corpus.segments if seg.word_label != keyword_label]
    return Corpus.build(kept, split=corpus.split)


def write_detections_tsv(path, detections) -> None:
    from pathlib import Path

    lines = ["keyword\tutterance_id\tscore\tflag\tbest_start\tbest_end"]
    for d in detections:
        lines.append(
            f"{d.keyword}\t{d.utterance_id}\t{d.score!r}\t{int(d.flag)}\t{d.best_span[0]}\t{d.best_span[1]}"
        )
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def read_detections_tsv(path) -> list:
    from pathlib import Path

    lines = Path(path).read_text(encoding="utf-8").splitlines()
    if not lines or lines[0] != "keyword\tutterance_id\tscore\tflag\tbest_start\tbest_end":
        raise RetrievalError("bad detections header")
    out = []
    for line in lines[1:]:
        keyword, utt_id, score, flag, start, end = line.split("\t")
        out.append(
            Detection(
                keyword=keyword,
                utterance_id=utt_id,
                score=float(score),
                flag=bool(int(flag)),
                best_span=(int(start), int(end)),
            )
        )
    return out


def write_topk_tsv(path, detections, k) -> None:
    """Per keyword, the k lowest-scoring utterances, for manual review."""
    from pathlib import Path

    by_keyword = {}
    for d in detections:
        by_keyword.setdefault(d.keyword, []).append(d)
    lines = ["keyword\tutterance_id\tscore\tflag\tbest_start\tbest_end"]
    for keyword in sorted(by_keyword):
        rows = sorted(by_keyword[keyword], key=lambda d: (d.score, d.utterance_id))[:k]
        for d in rows:
            lines.append(
                f"{d.keyword}\t{d.utterance_id}\t{d.score!r}\t{int(d.flag)}\t{d.best_span[0]}\t{d.best_span[1]}"
            )
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")
