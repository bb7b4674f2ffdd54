"""Bipartite matching between predicted object tokens and ground-truth nodes."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .graph import Box


@dataclass
class PredictionSet:
    """Model output for one sample.

    ``rel_prob`` maps each unordered token pair ``(i, j)``, ``i < j``, to the
    probability that the two tokens are connected.
    """

    boxes: list[Box]
    cls_prob: list[float]
    rel_prob: dict[tuple[int, int], float] = field(default_factory=dict)

    def __post_init__(self):
        n = len(self.boxes)
        if len(self.cls_prob) != n:
            raise ValueError(f"{len(self.cls_prob)} class probabilities for {n} boxes")
        if any(not 0.0 <= p <= 1.0 for p in self.cls_prob):
            raise ValueError("class probabilities must lie in [0, 1]")
        if any(not 0.0 <= p <= 1.0 for p in self.rel_prob.values()):
            raise ValueError("relation probabilities must lie in [0, 1]")

    @property
    def dims(self) -> int:
        return self.boxes[0].dims if self.boxes else 0

    def complete(self) -> bool:
        n = len(self.boxes)
        return len(self.rel_prob) == n * (n - 1) // 2 and all(
            (i, j) in self.rel_prob for i in range(n) for j in range(i + 1, n))

    def to_json(self) -> dict:
        return {"dims": self.dims,
                "centers": [list(b.center) for b in self.boxes],
                "extents": [list(b.extent) for b in self.boxes],
                "cls_prob": list(self.cls_prob),
                "rel_prob": [[i, j, p] for (i, j), p in sorted(self.rel_prob.items())]}

    @classmethod
    def from_json(cls, obj: dict) -> "PredictionSet":
        boxes = [Box(tuple(map(float, c)), tuple(map(float, e)))
                 for c, e in zip(obj["centers"], obj["extents"])]
        rel = {(int(i), int(j)): float(p) for i, j, p in obj.get("rel_prob", [])}
        rel = {(min(k), max(k)): p for k, p in rel.items()}
        return cls(boxes, [float(p) for p in obj["cls_prob"]], rel)


@dataclass
class Matching:
    pairs: list[tuple[int, int]]
    unmatched: list[int]
    cost: float = 0.0

    def to_json(self) -> dict:
        return {"pairs": [list(p) for p in self.pairs], "unmatched": self.unmatched,
                "cost": self.cost}


def box_iou(a: Box, b: Box) -> float:
    inter = 1.0
    for alo, ahi, blo, bhi in zip(a.lo, a.hi, b.lo, b.hi):
        inter *= max(0.0, min(ahi, bhi) - max(alo, blo))
    union = a.volume() + b.volume() - inter
    return inter / union if union > 0 else 0.0


def box_giou(a: Box, b: Box) -> float:
    inter = 1.0
    hull = 1.0
    for alo, ahi, blo, bhi in zip(a.lo, a.hi, b.lo, b.hi):
        inter *= max(0.0, min(ahi, bhi) - max(alo, blo))
        hull *= max(ahi, bhi) - min(alo, blo)
    union = a.volume() + b.volume() - inter
    return inter / union - (hull - union) / hull


def match_cost(pred_box: Box, cls_prob: float, gt_box: Box, lambda_reg: float = 5.0,
               lambda_giou: float = 2.0, lambda_cls: float = 3.0) -> float:
    """Pairwise matching cost; probabilities enter as ``1 - p`` (not log p)."""
    if pred_box.dims != gt_box.dims:
        raise ValueError("prediction and ground truth differ in dimensionality")
    l1 = sum(abs(p - g) for p, g in zip(pred_box.center + pred_box.extent,
                                         gt_box.center + gt_box.extent))
    return lambda_reg * l1 + lambda_giou * (1.0 - box_giou(pred_box, gt_box)) \
        + lambda_cls * (1.0 - cls_prob)


def cost_matrix(preds: PredictionSet, gt_boxes: Sequence[Box], **weights) -> np.ndarray:
    C = np.zeros((len(preds.boxes), len(gt_boxes)))
    for i, (b, p) in enumerate(zip(preds.boxes, preds.cls_prob)):
        for j, g in enumerate(gt_boxes):
            C[i, j] = match_cost(b, p, g, **weights)
    return C


def cost_matrix_arrays(pred_center: np.ndarray, pred_extent: np.ndarray, cls_prob: np.ndarray,
                       gt_center: np.ndarray, gt_extent: np.ndarray, lambda_reg: float = 5.0,
                       lambda_giou: float = 2.0, lambda_cls: float = 3.0) -> np.ndarray:
    """Vectorized :func:`cost_matrix` over ``(n, d)`` and ``(m, d)`` center/extent arrays."""
    pc, pe = np.asarray(pred_center, float)[:, None], np.asarray(pred_extent, float)[:, None]
    gc, ge = np.asarray(gt_center, float)[None], np.asarray(gt_extent, float)[None]
    l1 = np.abs(pc - gc).sum(-1) + np.abs(pe - ge).sum(-1)
    a_lo, a_hi, b_lo, b_hi = pc - pe, pc + pe, gc - ge, gc + ge
    inter = np.prod(np.clip(np.minimum(a_hi, b_hi) - np.maximum(a_lo, b_lo), 0, None), -1)
    hull = np.prod(np.maximum(a_hi, b_hi) - np.minimum(a_lo, b_lo), -1)
    union = np.prod(2 * pe, -1) + np.prod(2 * ge, -1) - inter
    giou = inter / union - (hull - union) / hull
    return lambda_reg * l1 + lambda_giou * (1 - giou) \
        + lambda_cls * (1 - np.asarray(cls_prob, float))[:, None]


def _solve_square(C: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Shortest augmenting path assignment on a square matrix.

    Returns ``(col_of_row, u, v)`` with dual potentials such that
    ``C[i, j] - u[i] - v[j] >= 0`` everywhere and ``== 0`` on the assignment.
    """
    n = C.shape[0]
    INF = np.inf
    u = np.zeros(n + 1)
    v = np.zeros(n + 1)
    p = np.zeros(n + 1, dtype=int)  # p[j]: row (1-based) assigned to column j; column 0 is virtual
    way = np.zeros(n + 1, dtype=int)
    for i in range(1, n + 1):
        p[0] = i
        j0 = 0
        minv = np.full(n + 1, INF)
        used = np.zeros(n + 1, dtype=bool)
        while True:
            used[j0] = True
            i0 = p[j0]
            free = ~used
            free[0] = False
            cur = C[i0 - 1] - u[i0] - v[1:]
            cur_full = np.concatenate(([INF], cur))
            better = free & (cur_full < minv)
            minv[better] = cur_full[better]
            way[better] = j0
            cand = np.where(free, minv, INF)
            j1 = int(np.argmin(cand))
            delta = cand[j1]
            u[p[used]] += delta
            v[used] -= delta
            minv[free] -= delta
            j0 = j1
            if p[j0] == 0:
                break
        while j0:
            j1 = way[j0]
            p[j0] = p[j1]
            j0 = j1
    col_of_row = np.zeros(n, dtype=int)
    for j in range(1, n + 1):
        col_of_row[p[j] - 1] = j - 1
    return col_of_row, u[1:], v[1:]


def _lexicographic_optimum(tight: np.ndarray, col_of_row: np.ndarray) -> np.ndarray:
    """Smallest column sequence among perfect matchings of the tight-edge graph.

    Every optimal assignment uses only tight edges, so repeatedly fixing each
    row to its smallest feasible tight column (checked with an alternating
    path search) yields the lexicographically smallest optimum.
    """
    n = tight.shape[0]
    col_of_row = col_of_row.copy()
    row_of_col = np.empty(n, dtype=int)
    row_of_col[col_of_row] = np.arange(n)
    fixed = np.zeros(n, dtype=bool)
    for i in range(n):
        for j in np.flatnonzero(tight[i]):
            if j >= col_of_row[i]:
                break
            if fixed[row_of_col[j]]:
                continue
            # Give column j to row i; its owner r must reach column col_of_row[i]
            # through an alternating path over unfixed rows.
            r, target = row_of_col[j], col_of_row[i]
            prev = {r: None}
            queue = [r]
            found = None
            while queue and found is None:
                nxt = []
                for row in queue:
                    for c in np.flatnonzero(tight[row]):
                        if c == target:
                            found = (row, c)
                            break
                        owner = row_of_col[c]
                        if c == j or owner in prev or fixed[owner] or owner == i:
                            continue
                        prev[owner] = (row, c)
                        nxt.append(owner)
                    if found is not None:
                        break
                queue = nxt
            if found is None:
                continue
            row, c = found
            while True:
                col_of_row[row] = c
                row_of_col[c] = row
                step = prev[row]
                if step is None:
                    break
                # predecessor takes the column this row owned before
                row, c = step
            col_of_row[i] = j
            row_of_col[j] = i
            break
        fixed[i] = True
    return col_of_row


def hungarian(cost: np.ndarray | Sequence[Sequence[float]]) -> Matching:
    """Minimum-cost assignment of ``min(n, m)`` rows to distinct columns.

    Ties between optimal assignments resolve to the lexicographically smallest
    list of ``(row, col)`` pairs.  Rectangular inputs are padded to square
    with a constant sentinel; padded pairs are reported as unmatched rows.
    """
    C = np.asarray(cost, dtype=float)
    if C.ndim != 2:
        if C.size == 0:
            return Matching([], [])
        raise ValueError("cost must be a 2-D matrix")
    if np.isnan(C).any():
        raise ValueError("cost matrix contains NaN")
    if not np.isfinite(C).all():
        raise ValueError("cost matrix contains infinite entries")
    n, m = C.shape
    if n == 0 or m == 0:
        return Matching([], list(range(n)))
    size = max(n, m)
    scale = float(np.abs(C).max())
    sentinel = (scale + 1.0) * (min(n, m) + 1)
    square = np.full((size, size), sentinel)
    square[:n, :m] = C
    col_of_row, u, v = _solve_square(square)
    tol = 1e-9 * max(1.0, sentinel)
    tight = (square - u[:, None] - v[None, :]) <= tol
    col_of_row = _lexicographic_optimum(tight, col_of_row)
    pairs = [(i, int(col_of_row[i])) for i in range(n) if col_of_row[i] < m]
    unmatched = [i for i in range(n) if col_of_row[i] >= m]
    total = float(sum(C[i, j] for i, j in pairs))
    return Matching(pairs, unmatched, total)


def match(preds: PredictionSet, gt_boxes: Sequence[Box], **weights) -> Matching:
    return hungarian(cost_matrix(preds, gt_boxes, **weights))
