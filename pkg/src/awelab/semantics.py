"""Cluster+skip-gram semantics: k-means over acoustic embeddings, soft
pseudo-word labels, a full-softmax skip-gram in one-hot and soft-label
modes, and the composed semantic embedder.

K-means runs in Euclidean geometry; callers normalize embeddings to unit
length first (see normalize_embeddings) so that Euclidean and cosine
nearest-centroid agree. Soft labels use cosine distance by default; the
alternate sign reading (raw cosine similarity inside the exponent) is kept
behind mode="similarity" for comparison.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .neuralnet import (
    EncoderModel,
    adam_step,
    AdamState,
    encode,
    read_param_file,
    write_param_file,
)

CLUSTER_MAGIC = b"AWEC"
SKIPGRAM_MAGIC = b"AWES"


class SemanticsError(Exception):
    pass


@dataclass
class ClusterModel:
    centroids: np.ndarray  # (K, E)
    sigma: float = 0.01

    def __post_init__(self):
        if self.centroids.ndim != 2 or self.centroids.shape[0] < 2:
            raise SemanticsError("need at least two centroids")
        if not np.all(np.isfinite(self.centroids)):
            raise SemanticsError("centroids must be finite")
        if self.sigma <= 0:
            raise SemanticsError("sigma must be > 0")


@dataclass
class SkipGramModel:
    w1: np.ndarray  # (V, D): rows are the word embeddings
    w2: np.ndarray  # (D, V)
    context_size: int


def normalize_embeddings(z):
    """Length-normalize rows; zero rows are rejected."""
    z = np.asarray(z, dtype=np.float64)
    norms = np.linalg.norm(z, axis=1)
    if np.any(norms == 0.0):
        raise SemanticsError("zero-norm embedding")
    return z / norms[:, None]


def assign_clusters(centroids, embeddings):
    """Nearest centroid per row by squared Euclidean distance."""
    sq = (
        np.sum(embeddings**2, axis=1, keepdims=True)
        - 2.0 * embeddings @ centroids.T
        + np.sum(centroids**2, axis=1)
    )
    return np.argmin(sq, axis=1), sq


def kmeans_fit(embeddings, k, restarts=50, seed=0, sigma=0.01) -> ClusterModel:
    """Lloyd's algorithm with seeded restarts.

    Each restart initializes centroids as a random selection of the input
    embeddings, iterates to an assignment fixed point (or 200 iterations),
    re-seeds any emptied cluster from the point farthest from its centroid,
    and the restart with the lowest within-cluster sum of squared Euclidean
    distances wins.
    """
    z = np.asarray(embeddings, dtype=np.float64)
    if z.ndim != 2:
        raise SemanticsError("embeddings must be a 2-d array")
    n = z.shape[0]
    if n < k:
        raise SemanticsError(f"need at least k={k} embeddings, got {n}")
    if k < 2:
        raise SemanticsError("k must be >= 2")
    rng = np.random.default_rng(seed)
    best_centroids = None
    best_inertia = np.inf
    for _ in range(restarts):
        centroids = z[rng.choice(n, size=k, replace=False)].copy()
        labels = np.full(n, -1)
        for _ in range(200):
            new_labels, sq = assign_clusters(centroids, z)
            point_cost = sq[np.arange(n), new_labels].copy()
            for cluster in range(k):
                members = new_labels == cluster
                if members.any():
                    centroids[cluster] = z[members].mean(axis=0)
                else:
                    farthest = int(np.argmax(point_cost))
                    centroids[cluster] = z[farthest]
                    new_labels[farthest] = cluster
                    point_cost[farthest] = 0.0
            if np.array_equal(new_labels, labels):
                break
            labels = new_labels
        _, sq = assign_clusters(centroids, z)
        inertia = float(sq[np.arange(n), np.argmin(sq, axis=1)].sum())
        if inertia < best_inertia:
            best_inertia = inertia
            best_centroids = centroids.copy()
    return ClusterModel(centroids=best_centroids, sigma=sigma)


def soft_label(model: ClusterModel, z, mode="distance"):
    """Probability vector over clusters: softmax of -d(z, c_k)/sigma^2.

    d is cosine distance under the default mode; mode="similarity" instead
    exponentiates -cos_sim/sigma^2 (the alternate sign reading, which weights
    FAR centroids up and is kept only for comparison runs).
    """
    z = np.asarray(z, dtype=np.float64)
    nz = np.linalg.norm(z)
    if nz == 0.0:
        raise SemanticsError("zero-norm embedding has no soft label")
    c_norms = np.linalg.norm(model.centroids, axis=1)
    if np.any(c_norms == 0.0):
        raise SemanticsError("zero-norm centroid")
    cos_sim = (model.centroids @ z) / (c_norms * nz)
    if mode == "distance":
        logits = -(1.0 - cos_sim) / model.sigma**2
    elif mode == "similarity":
        logits = -cos_sim / model.sigma**2
    else:
        raise SemanticsError(f"unknown soft-label mode {mode!r}")
    logits -= logits.max()
    expd = np.exp(logits)
    return expd / expd.sum()


def cluster_purity(assignments, true_labels) -> float:
    """Sum over clusters of the majority-label count, over n."""
    assignments = list(assignments)
    true_labels = list(true_labels)
    if not assignments:
        raise SemanticsError("empty input")
    if len(assignments) != len(true_labels):
        raise SemanticsError("assignments and labels differ in length")
    counts = {}
    for cluster, label in zip(assignments, true_labels):
        bucket = counts.setdefault(cluster, {})
        bucket[label] = bucket.get(label, 0) + 1
    total = sum(max(bucket.values()) for bucket in counts.values())
    return total / len(assignments)


# ---------------------------------------------------------------------------
# skip-gram


def _as_soft_sequences(sequences, vocab_size):
    """Convert token-id sequences to stacks of one-hot rows; pass soft-label
    sequences through. Returns (list of (len, V) arrays, V)."""
    converted = []
    v_seen = vocab_size
    for seq in sequences:
        arr = np.asarray(seq)
        if arr.ndim == 1 and np.issubdtype(arr.dtype, np.integer):
            if v_seen is None:
                raise SemanticsError("vocab_size required for token-id sequences")
            onehot = np.zeros((len(arr), v_seen))
            if len(arr):
                if arr.min() < 0 or arr.max() >= v_seen:
                    raise SemanticsError("token id out of range")
                onehot[np.arange(len(arr)), arr] = 1.0
            converted.append(onehot)
        elif arr.ndim == 2:
            arr = arr.astype(np.float64)
            if v_seen is None:
                v_seen = arr.shape[1]
            elif arr.shape[1] != v_seen:
                raise SemanticsError("inconsistent soft-label width")
            converted.append(arr)
        else:
            raise SemanticsError("sequence must be token ids or soft-label rows")
    if v_seen is None or v_seen < 2:
        raise SemanticsError("vocabulary must have at least 2 entries")
    return converted, v_seen


def skipgram_loss_and_grads(w1, w2, inputs, targets):
    """Mean softmax cross-entropy of context predictions.

    inputs and targets are (B, V) probability rows (one-hot or soft).
    Returns (loss, dW1, dW2).
    """
    hidden = inputs @ w1
    logits = hidden @ w2
    logits = logits - logits.max(axis=1, keepdims=True)
    expd = np.exp(logits)
    probs = expd / expd.sum(axis=1, keepdims=True)
    batch = inputs.shape[0]
    loss = float(-(targets * np.log(probs)).sum() / batch)
    d_logits = (probs - targets) / batch
    d_w2 = hidden.T @ d_logits
    d_hidden = d_logits @ w2.T
    d_w1 = inputs.T @ d_hidden
    return loss, d_w1, d_w2


def skipgram_train(sequences, context_size, config, vocab_size=None, dim=100) -> SkipGramModel:
    """Train the skip-gram on token-id sequences or soft-label sequences.

    For every position t the model predicts each context position t+j,
    -context_size <= j <= context_size, j != 0, clipped at sequence edges.
    One-hot sequences run through the identical soft path, so soft mode with
    one-hot labels reproduces one-hot mode bitwise.
    """
    if context_size < 1:
        raise SemanticsError("context_size must be >= 1")
    soft_seqs, vocab = _as_soft_sequences(sequences, vocab_size)
    pair_inputs = []
    pair_targets = []
    for rows in soft_seqs:
        n = rows.shape[0]
        for t in range(n):
            for j in range(-context_size, context_size + 1):
                if j == 0 or not 0 <= t + j < n:
                    continue
                pair_inputs.append(rows[t])
                pair_targets.append(rows[t + j])
    if not pair_inputs:
        raise SemanticsError("no context pairs; sequences too short or empty")
    inputs = np.asarray(pair_inputs)
    targets = np.asarray(pair_targets)
    rng = np.random.default_rng(config.seed)
    bound = 1.0 / np.sqrt(dim)
    params = {
        "w1": rng.uniform(-bound, bound, size=(vocab, dim)),
        "w2": rng.uniform(-bound, bound, size=(dim, vocab)),
    }
    state = AdamState()
    n_pairs = inputs.shape[0]
    batch = min(config.batch_size, n_pairs)
    for _ in range(config.epochs):
        order = rng.permutation(n_pairs)
        for start in range(0, n_pairs, batch):
            take = order[start : start + batch]
            _, d_w1, d_w2 = skipgram_loss_and_grads(
                params["w1"], params["w2"], inputs[take], targets[take]
            )
            adam_step(params, {"w1": d_w1, "w2": d_w2}, state, config.learning_rate)
    return SkipGramModel(w1=params["w1"], w2=params["w2"], context_size=context_size)


def semantic_embed(encoder: EncoderModel, clusters: ClusterModel, sg: SkipGramModel, segment):
    """Embed a segment semantically: encode, soft-label, then combine the
    skip-gram input rows weighted by the soft label."""
    z = encode(encoder, segment)
    v = soft_label(clusters, z)
    if v.shape[0] != sg.w1.shape[0]:
        raise SemanticsError("cluster count and skip-gram vocabulary disagree")
    return v @ sg.w1


# ---------------------------------------------------------------------------
# checkpoints


def save_cluster_model(path, model: ClusterModel) -> None:
    k, dim = model.centroids.shape
    write_param_file(
        path,
        (k, dim, 0, 0),
        {"centroids": model.centroids, "sigma": np.array([model.sigma])},
        magic=CLUSTER_MAGIC,
    )


def load_cluster_model(path) -> ClusterModel:
    dims, blocks = read_param_file(path, magic=CLUSTER_MAGIC)
    k, dim = int(dims[0]), int(dims[1])
    centroids = blocks["centroids"].reshape(k, dim)
    return ClusterModel(centroids=centroids, sigma=float(blocks["sigma"][0]))


def save_skipgram(path, model: SkipGramModel) -> None:
    v, dim = model.w1.shape
    write_param_file(
        path,
        (v, dim, model.context_size, 0),
        {"w1": model.w1, "w2": model.w2},
        magic=SKIPGRAM_MAGIC,
    )


def load_skipgram(path) -> SkipGramModel:
    dims, blocks = read_param_file(path, magic=SKIPGRAM_MAGIC)
    v, dim, context_size = int(dims[0]), int(dims[1]), int(dims[2])
    return SkipGramModel(
        w1=blocks["w1"].reshape(v, dim),
        w2=blocks["w2"].reshape(dim, v),
        context_size=context_size,
    )
