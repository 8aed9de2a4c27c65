"""Dynamic time warping between frame sequences.

Frame distance is cosine distance. The DP admits the three classic steps
(advance a, advance b, advance both) and minimizes total path cost with path
length as the tie-breaker, so the reported cost is the per-step average of
the cheapest-then-shortest alignment. No banding: the full lattice is
evaluated.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


class AlignmentError(Exception):
    pass


@dataclass
class AlignmentResult:
    cost: float
    path: list[tuple[int, int]]


def frame_cosine_distances(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Pairwise cosine distances between the frames of two sequences."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[1]:
        raise AlignmentError("inputs must be 2-d with matching feature dims")
    if a.shape[0] == 0 or b.shape[0] == 0:
        raise AlignmentError("empty sequence")
    norm_a = np.linalg.norm(a, axis=1)
    norm_b = np.linalg.norm(b, axis=1)
    if np.any(norm_a == 0) or np.any(norm_b == 0):
        raise AlignmentError("zero-norm frame has no cosine distance")
    return 1.0 - (a @ b.T) / np.outer(norm_a, norm_b)


def dtw_cost(a: np.ndarray, b: np.ndarray) -> AlignmentResult:
    """Average per-step cosine distance along the optimal warping path.

    The DP state is (total cost, path length); comparisons are lexicographic,
    so among equal-cost alignments the shortest path wins. Traceback prefers
    the diagonal step, then advancing the first sequence, then the second,
    which pins a unique path among exact ties.

    Args:
        a, b: frame matrices, shapes (Ta, D) and (Tb, D).

    Returns:
        AlignmentResult with the normalized cost and the warping path.
    """
    dist = frame_cosine_distances(a, b)
    ta, tb = dist.shape
    inf = np.inf
    total = np.full((ta, tb), inf)
    length = np.zeros((ta, tb), dtype=np.int64)
    total[0, 0] = dist[0, 0]
    length[0, 0] = 1
    for i in range(ta):
        for j in range(tb):
            if i == 0 and j == 0:
                continue
            best_t, best_l = inf, 0
            # order here is arbitrary; the traceback below fixes ties
            if i > 0 and j > 0:
                cand_t, cand_l = total[i - 1, j - 1], length[i - 1, j - 1]
                if (cand_t, cand_l) < (best_t, best_l) or best_l == 0:
                    best_t, best_l = cand_t, cand_l
            if i > 0:
                cand_t, cand_l = total[i - 1, j], length[i - 1, j]
                if best_l == 0 or (cand_t, cand_l) < (best_t, best_l):
                    best_t, best_l = cand_t, cand_l
            if j > 0:
                cand_t, cand_l = total[i, j - 1], length[i, j - 1]
                if best_l == 0 or (cand_t, cand_l) < (best_t, best_l):
                    best_t, best_l = cand_t, cand_l
            total[i, j] = best_t + dist[i, j]
            length[i, j] = best_l + 1
    cost = float(total[ta - 1, tb - 1] / length[ta - 1, tb - 1])
    path = [(ta - 1, tb - 1)]
    i, j = ta - 1, tb - 1
    while (i, j) != (0, 0):
        candidates = [
            (pi, pj)
            for pi, pj in ((i - 1, j - 1), (i - 1, j), (i, j - 1))
            if pi >= 0 and pj >= 0
        ]
        best = min(candidates, key=lambda p: (total[p], length[p]))
        # keep the first candidate matching the optimum: diagonal wins ties,
        # then advancing the first sequence
        for pi, pj in candidates:
            if total[pi, pj] == total[best] and length[pi, pj] == length[best]:
                i, j = pi, pj
                break
        path.append((i, j))
    path.reverse()
    return AlignmentResult(cost=cost, path=path)
