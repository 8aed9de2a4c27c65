"""Pair construction for the pair-trained models: ground-truth positive
pairs, discovered (term-discovery style) pairs loaded from file, skip-gram
context pairs, and distinct-member batches for the contrastive loss.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .corpus import Corpus


class PairingError(Exception):
    pass


@dataclass
class PairSet:
    """(anchor_id, positive_id) segment pairs plus their provenance,
    either "ground_truth" or "discovered"."""

    pairs: list
    source: str


@dataclass
class ContextPairSet:
    """(target_id, context_id) pairs within a word window of c positions."""

    pairs: list
    window: int


@dataclass
class ContrastiveBatch:
    """N positive pairs whose 2N members are all distinct; each member's
    negatives are implicitly the other 2(N-1) batch members."""

    positive_pairs: list


def build_positive_pairs(corpus: Corpus, cap_per_corpus=None, seed=0) -> PairSet:
    """Enumerate same-word-label segment pairs.

    All unordered same-label pairs are listed; cap_per_corpus, when given,
    keeps a seeded uniform subsample of that many unordered pairs. Both
    orderings of every kept pair are emitted, so the returned list has twice
    the unordered count.
    """
    by_label = {}
    for seg in corpus.segments:
        if seg.word_label is None:
            raise PairingError(f"segment {seg.id!r} has no word label")
        by_label.setdefault(seg.word_label, []).append(seg.id)
    unordered = []
    for label in sorted(by_label):
        ids = by_label[label]
        for i in range(len(ids)):
            for j in range(i + 1, len(ids)):
                unordered.append((ids[i], ids[j]))
    if not unordered:
        raise PairingError("no pairs: no word type has two or more tokens")
    if cap_per_corpus is not None and cap_per_corpus < len(unordered):
        rng = np.random.default_rng(seed)
        keep = rng.choice(len(unordered), size=cap_per_corpus, replace=False)
        unordered = [unordered[i] for i in sorted(keep)]
    pairs = []
    for a, b in unordered:
        pairs.append((a, b))
        pairs.append((b, a))
    return PairSet(pairs=pairs, source="ground_truth")


def load_discovered_pairs(path, corpus: Corpus) -> PairSet:
    """Read a discovered-pairs file: one `id_a<TAB>id_b` row per line,
    `#` comments and blank lines ignored. Word labels are never consulted."""
    from pathlib import Path

    pairs = []
    for line_no, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), start=1):
        stripped = line.strip()
        if not stripped or stripped.startswith("#"):
            continue
        fields = stripped.split("\t")
        if len(fields) != 2:
            raise PairingError(f"line {line_no}: expected two tab-separated ids")
        a, b = fields
        for seg_id in (a, b):
            try:
                corpus.segment(seg_id)
            except KeyError:
                raise PairingError(f"line {line_no}: unknown segment id {seg_id!r}") from None
        if a == b:
            raise PairingError(f"line {line_no}: pair of a segment with itself")
        pairs.append((a, b))
    return PairSet(pairs=pairs, source="discovered")


def symmetrize_pairs(pair_set: PairSet) -> PairSet:
    """Add the reverse of every pair, deduplicating while preserving order.
    Used to train encoder-decoder models on single-direction pair files."""
    seen = set()
    out = []
    for a, b in pair_set.pairs:
        for pair in ((a, b), (b, a)):
            if pair not in seen:
                seen.add(pair)
                out.append(pair)
    return PairSet(pairs=out, source=pair_set.source)


def pseudo_labels_from_pairs(pair_set: PairSet) -> dict:
    """Union-find over pair members: segments linked by any chain of pairs
    share a pseudo-label. Gives discovered pairs a label structure usable by
    the triplet loss without ever reading word_label."""
    parent = {}

    def find(x):
        root = x
        while parent[root] != root:
            root = parent[root]
        while parent[x] != root:
            parent[x], x = root, parent[x]
        return root

    for a, b in pair_set.pairs:
        parent.setdefault(a, a)
        parent.setdefault(b, b)
        ra, rb = find(a), find(b)
        if ra != rb:
            parent[max(ra, rb)] = min(ra, rb)
    return {seg_id: find(seg_id) for seg_id in parent}


def build_context_pairs(corpus: Corpus, window: int) -> ContextPairSet:
    """Word-context pairs per utterance: for position t, (t, t+j) for all
    -window <= j <= window, j != 0, clipped at utterance edges."""
    if window < 1:
        raise PairingError("window must be >= 1")
    pairs = []
    for utt_id in sorted(corpus.utterances):
        member_ids = corpus.utterances[utt_id]
        n = len(member_ids)
        for t in range(n):
            for j in range(-window, window + 1):
                if j == 0 or not 0 <= t + j < n:
                    continue
                pairs.append((member_ids[t], member_ids[t + j]))
    return ContextPairSet(pairs=pairs, window=window)


def build_contrastive_batches(pair_set: PairSet, batch_pairs: int, seed=0) -> list:
    """Seeded shuffle into batches of exactly batch_pairs positive pairs with
    all 2N member ids distinct.

    Orderings are collapsed first ((a,b) and (b,a) are one pair). Pairs that
    would duplicate a member already in the open batch are deferred and
    retried once the batch rolls over; the final incomplete batch and any
    deferred pairs that never fit are dropped.
    """
    if batch_pairs < 2:
        raise PairingError("batch_pairs must be >= 2")
    if not pair_set.pairs:
        raise PairingError("empty pair set")
    seen = set()
    canonical = []
    for a, b in pair_set.pairs:
        key = (a, b) if a <= b else (b, a)
        if key not in seen:
            seen.add(key)
            canonical.append(key)
    rng = np.random.default_rng(seed)
    order = rng.permutation(len(canonical))
    queue = [canonical[i] for i in order]
    batches = []
    current, used = [], set()
    deferred = []
    idx = 0
    while idx < len(queue) or deferred:
        placed = False
        for di, (a, b) in enumerate(deferred):
            if a not in used and b not in used:
                deferred.pop(di)
                current.append((a, b))
                used.update((a, b))
                placed = True
                break
        if not placed:
            if idx >= len(queue):
                break  # leftovers all collide with the open batch
            a, b = queue[idx]
            idx += 1
            if a in used or b in used:
                deferred.append((a, b))
                continue
            current.append((a, b))
            used.update((a, b))
        if len(current) == batch_pairs:
            batches.append(ContrastiveBatch(positive_pairs=current))
            current, used = [], set()
    if not batches:
        raise PairingError(
            f"cannot form one contrastive batch of {batch_pairs} distinct pairs"
        )
    return batches


def simulate_discovered_pairs(corpus: Corpus, pair_count: int, precision: float, seed=0) -> list:
    """Stand-in for a term-discovery system: same-type pairs with a fraction
    (1 - precision) replaced by random cross-type pairs.

    Returns (anchor_id, positive_id) tuples; write_pairs_file serializes
    them. Labels are consulted here only to manufacture the noise level;
    consumers of the file stay label-blind.
    """
    if not 0.0 < precision <= 1.0:
        raise PairingError("precision must be in (0, 1]")
    rng = np.random.default_rng(seed)
    by_label = {}
    for seg in corpus.segments:
        if seg.word_label is None:
            raise PairingError("cannot simulate discovery on an unlabeled corpus")
        by_label.setdefault(seg.word_label, []).append(seg.id)
    multi = [ids for ids in by_label.values() if len(ids) >= 2]
    if not multi:
        raise PairingError("no word type has two or more tokens")
    all_ids = [seg.id for seg in corpus.segments]
    label_of = {seg.id: seg.word_label for seg in corpus.segments}
    pairs = []
    n_true = int(round(precision * pair_count))
    for k in range(pair_count):
        if k < n_true:
            ids = multi[int(rng.integers(0, len(multi)))]
            i, j = rng.choice(len(ids), size=2, replace=False)
            pairs.append((ids[i], ids[j]))
        else:
            while True:
                a, b = rng.choice(len(all_ids), size=2, replace=False)
                a_id, b_id = all_ids[a], all_ids[b]
                if label_of[a_id] != label_of[b_id]:
                    pairs.append((a_id, b_id))
                    break
    perm = rng.permutation(len(pairs))
    return [pairs[i] for i in perm]


def write_pairs_file(path, pairs) -> None:
    from pathlib import Path

    lines = ["# discovered pairs: anchor_id<TAB>positive_id"]
    lines.extend(f"{a}\t{b}" for a, b in pairs)
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")
