"""Curve distance, matching cost, and minimum-cost bipartite assignment."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .. import geometry
from ..autograd import NumericError, Tensor
from ..autograd import tensor as T


@dataclass
class MatchResult:
    pairs: list[tuple[int, int]] = field(default_factory=list)
    cost: float = 0.0

    @property
    def rows(self) -> list[int]:
        return [r for r, _ in self.pairs]

    @property
    def cols(self) -> list[int]:
        return [c for _, c in self.pairs]


def _interp_matrix(n: int) -> np.ndarray:
    return geometry.bernstein_matrix(geometry.uniform_params(n))


def curve_distance(pred, gt, n_interp: int = 26) -> float:
    """Half mean L1 gap of control points plus half mean L1 gap of ``n_interp`` uniform samples."""
    p, g = geometry.as_curve(pred), geometry.as_curve(gt)
    s = _interp_matrix(n_interp)
    ctrl = np.abs(p - g).sum(-1).mean()
    samp = np.abs(s @ p - s @ g).sum(-1).mean()
    return 0.5 * ctrl + 0.5 * samp


def curve_distance_matrix(pred: np.ndarray, gt: np.ndarray, n_interp: int = 26) -> np.ndarray:
    """``[K,6,2]`` x ``[G,6,2]`` -> ``[K,G]`` pairwise curve distances."""
    s = _interp_matrix(n_interp)
    ctrl = np.abs(pred[:, None] - gt[None]).sum(-1).mean(-1)
    ps, gs = s @ pred, s @ gt
    samp = np.abs(ps[:, None] - gs[None]).sum(-1).mean(-1)
    return 0.5 * ctrl + 0.5 * samp


def curve_distance_tensor(pred: Tensor, gt: np.ndarray, n_interp: int = 26) -> Tensor:
    """Differentiable per-pair distances for ``pred[P,6,2]`` against fixed ``gt[P,6,2]``."""
    s = _interp_matrix(n_interp)
    ctrl = T.mean(T.tsum(T.tabs(pred - gt), axis=-1), axis=-1)
    samp = T.mean(T.tsum(T.tabs(T.matmul(s, pred) - s @ gt), axis=-1), axis=-1)
    return 0.5 * ctrl + 0.5 * samp


def matching_cost(curves: np.ndarray, scores: np.ndarray, gt: np.ndarray,
                  w_cls: float = 1.0, w_curve: float = 1.0, n_interp: int = 26) -> np.ndarray:
    """``[K,G]`` cost: ``-w_cls * score_k + w_curve * curve_distance(k, g)``."""
    k = curves.shape[0]
    if gt.shape[0] == 0:
        return np.zeros((k, 0))
    return -w_cls * scores[:, None] + w_curve * curve_distance_matrix(curves, gt, n_interp)


def _assignment(cost: np.ndarray) -> tuple[np.ndarray, float]:
    """Shortest-augmenting-path Hungarian method for ``n <= m``; returns col per row."""
    n, m = cost.shape
    u = np.zeros(n + 1)
    v = np.zeros(m + 1)
    p = np.zeros(m + 1, dtype=np.int64)  # p[j]: row (1-based) assigned to column j
    way = np.zeros(m + 1, dtype=np.int64)
    for i in range(1, n + 1):
        p[0] = i
        j0 = 0
        minv = np.full(m + 1, np.inf)
        used = np.zeros(m + 1, dtype=bool)
        while True:
            used[j0] = True
            i0 = p[j0]
            free = ~used[1:]
            cur = cost[i0 - 1] - u[i0] - v[1:]
            better = free & (cur < minv[1:])
            minv[1:][better] = cur[better]
            way[1:][better] = j0
            cand = np.where(free, minv[1:], np.inf)
            j1 = int(np.argmin(cand)) + 1
            delta = cand[j1 - 1]
            u[p[used]] += delta
            v[used] -= delta
            minv[~used] -= delta
            j0 = j1
            if p[j0] == 0:
                break
        while True:
            j1 = way[j0]
            p[j0] = p[j1]
            j0 = j1
            if j0 == 0:
                break
    col_of = np.full(n, -1, dtype=np.int64)
    for j in range(1, m + 1):
        if p[j]:
            col_of[p[j] - 1] = j - 1
    return col_of, float(cost[np.arange(n), col_of].sum())


def optimal_cost(cost: np.ndarray) -> float:
    if cost.size == 0:
        return 0.0
    if cost.shape[0] > cost.shape[1]:
        cost = cost.T
    return _assignment(cost)[1]


def hungarian(cost) -> MatchResult:
    """Minimum-cost injective assignment of min(rows, cols) pairs.

    Among optimal assignments the lexicographically smallest sorted pair list is
    returned, found by greedily fixing pairs in order while the optimum survives.
    """
    cost = np.asarray(cost, dtype=np.float64)
    if cost.ndim != 2:
        raise ValueError(f"cost must be a matrix, got shape {cost.shape}")
    if np.isnan(cost).any():
        raise NumericError("hungarian", "NaN in cost matrix")
    rows, cols = cost.shape
    if rows == 0 or cols == 0:
        return MatchResult()
    best = optimal_cost(cost)
    tol = 1e-9 * max(1.0, abs(best))
    avail = list(range(cols))
    pairs: list[tuple[int, int]] = []
    acc = 0.0
    for i in range(rows):
        remaining = min(rows, cols) - len(pairs)
        if remaining == 0:
            break
        later = list(range(i + 1, rows))
        chosen = None
        for j in avail:
            rest = [c for c in avail if c != j]
            if min(len(later), len(rest)) != remaining - 1:
                continue
            total = acc + cost[i, j] + optimal_cost(cost[np.ix_(later, rest)])
            if abs(total - best) <= tol:
                chosen = j
                break
        if chosen is not None:
            pairs.append((i, chosen))
            acc += cost[i, chosen]
            avail.remove(chosen)
    return MatchResult(pairs, float(sum(cost[r, c] for r, c in pairs)))
