"""Graph evaluation: street mover distance, TOPO precision/recall, node/edge mAP/mAR."""

from __future__ import annotations

import heapq
import math
from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np

from .graph import Box, SpatialGraph
from .matcher import box_iou, hungarian

COCO_THRESHOLDS = tuple(round(0.5 + 0.05 * k, 2) for k in range(10))
DEFAULT_NODE_BOX_HALF = 0.03125
DEFAULT_EDGE_MIN_EXTENT = 0.0625


@dataclass
class MetricConfig:
    node_box_half: float = DEFAULT_NODE_BOX_HALF
    edge_min_extent: float = DEFAULT_EDGE_MIN_EXTENT
    iou_mode: str = "range"          # "range" = 0.50:0.05:0.95, "pair" = {0.5, 0.95}
    smd_points: int = 100
    smd_seed: int = 0
    topo_seed_interval: float = 0.25
    topo_match_radius: float = 0.025
    topo_hole_spacing: float = 0.05
    topo_crawl_radius: float = 0.3

    def thresholds(self) -> tuple[float, ...]:
        if self.iou_mode == "range":
            return COCO_THRESHOLDS
        if self.iou_mode == "pair":
            return (0.5, 0.95)
        raise ValueError(f"unknown iou_mode {self.iou_mode!r}")


@dataclass
class MetricReport:
    node_map: float
    node_mar: float
    edge_map: float
    edge_mar: float
    smd: float
    topo_precision: float | None
    topo_recall: float | None
    per_threshold: dict = field(default_factory=dict)
    config: dict = field(default_factory=dict)

    FIELDS = ("node_map", "node_mar", "edge_map", "edge_mar", "smd",
              "topo_precision", "topo_recall")

    def row(self) -> list:
        return [getattr(self, f) for f in self.FIELDS]

    def to_json(self) -> dict:
        out = asdict(self)
        if self.topo_precision is None:
            out.pop("topo_precision")
            out.pop("topo_recall")
        return out


# ---------------------------------------------------------------- sampling

def _edge_lengths(g: SpatialGraph) -> np.ndarray:
    seg = g.segments()
    return np.linalg.norm(seg[:, 1] - seg[:, 0], axis=1)


def sample_along(g: SpatialGraph, n_points: int, rng_seed: int = 0) -> np.ndarray:
    """Stratified arc-length sampling: one uniform draw in each of ``n`` equal strata."""
    rng = np.random.default_rng(rng_seed)
    u = rng.random(n_points)
    if not g.edges:
        xyz = g.coords()
        return xyz[np.arange(n_points) % len(xyz)] if len(xyz) else np.zeros((0, g.dims))
    seg = g.segments()
    lengths = _edge_lengths(g)
    total = lengths.sum()
    if total == 0:
        return seg[np.arange(n_points) % len(seg), 0]
    s = (np.arange(n_points) + u) / n_points * total
    cum = np.concatenate(([0.0], np.cumsum(lengths)))
    k = np.clip(np.searchsorted(cum, s, side="right") - 1, 0, len(seg) - 1)
    # zero-length edges can't be landed on except via clipping; skip them forward
    t = np.where(lengths[k] > 0, (s - cum[k]) / np.where(lengths[k] > 0, lengths[k], 1), 0.0)
    t = np.clip(t, 0.0, 1.0)
    return seg[k, 0] + t[:, None] * (seg[k, 1] - seg[k, 0])


def smd(pred: SpatialGraph, gt: SpatialGraph, n_points: int = 100, rng_seed: int = 0) -> float:
    """Mean squared-distance optimal transport cost between sampled point sets."""
    if pred.dims != gt.dims:
        raise ValueError("graphs differ in dimensionality")
    empty_p, empty_g = pred.num_nodes == 0, gt.num_nodes == 0
    if empty_p and empty_g:
        return 0.0
    if empty_p or empty_g:
        return 1.0 * gt.dims
    a = sample_along(pred, n_points, rng_seed)
    b = sample_along(gt, n_points, rng_seed)
    cost = ((a[:, None, :] - b[None, :, :]) ** 2).sum(-1)
    m = hungarian(cost)
    return m.cost / n_points


# ---------------------------------------------------------------- TOPO

def _project_onto_graph(g: SpatialGraph, x: np.ndarray) -> tuple[int, float, float]:
    """Closest point on any edge: ``(edge index, param t, distance)``."""
    seg = g.segments()
    a, b = seg[:, 0], seg[:, 1]
    d = b - a
    dd = (d * d).sum(1)
    t = np.where(dd > 0, ((x - a) * d).sum(1) / np.where(dd > 0, dd, 1), 0.0)
    t = np.clip(t, 0.0, 1.0)
    p = a + t[:, None] * d
    dist = np.linalg.norm(p - x, axis=1)
    k = int(np.argmin(dist))
    return k, float(t[k]), float(dist[k])


def _crawl_points(g: SpatialGraph, edge: int, t: float, radius: float, spacing: float) -> np.ndarray:
    """Points at graph distance ``0, spacing, 2*spacing, ... <= radius`` from a start point."""
    xyz = g.coords()
    lengths = _edge_lengths(g)
    a, b = g.edges[edge]
    adj: list[list[tuple[int, float]]] = [[] for _ in range(g.num_nodes)]
    for (u, v), w in zip(g.edges, lengths):
        adj[u].append((v, w))
        adj[v].append((u, w))
    dist = np.full(g.num_nodes, np.inf)
    dist[a] = t * lengths[edge]
    dist[b] = min(dist[b], (1 - t) * lengths[edge])
    heap = [(dist[a], a), (dist[b], b)]
    heapq.heapify(heap)
    while heap:
        d, u = heapq.heappop(heap)
        if d > dist[u] or d > radius:
            continue
        for v, w in adj[u]:
            if d + w < dist[v]:
                dist[v] = d + w
                heapq.heappush(heap, (d + w, v))
    start = xyz[a] + t * (xyz[b] - xyz[a])
    pts = [start]
    levels = np.arange(1, int(math.floor(radius / spacing + 1e-9)) + 1) * spacing
    for k, (u, v) in enumerate(g.edges):
        L = lengths[k]
        if L == 0:
            continue
        if k == edge:
            # the start point splits this edge into two branches
            ends = [(t * L, -1.0, u), ((1 - t) * L, 1.0, v)]
            for span, sign, _ in ends:
                for lv in levels[levels <= span + 1e-12]:
                    pts.append(start + sign * lv / L * (xyz[v] - xyz[u]))
            continue
        du, dv = dist[u], dist[v]
        for lv in levels:
            for d0, p, q, from_u in ((du, u, v, True), (dv, v, u, False)):
                s = lv - d0
                if s < -1e-12 or s > L + 1e-12:
                    continue
                other = (dv if from_u else du) + L - s
                if lv > other + 1e-12:
                    continue
                pts.append(xyz[p] + (s / L) * (xyz[q] - xyz[p]))
    arr = np.asarray(pts)
    _, keep = np.unique(np.round(arr, 9), axis=0, return_index=True)
    return arr[np.sort(keep)]


def _seed_points(g: SpatialGraph, interval: float) -> list[tuple[int, float]]:
    seeds = []
    for k, L in enumerate(_edge_lengths(g)):
        n = max(1, int(round(L / interval)))
        seeds.extend((k, (i + 0.5) / n) for i in range(n))
    return seeds


def _greedy_match(a: np.ndarray, b: np.ndarray, radius: float) -> int:
    if len(a) == 0 or len(b) == 0:
        return 0
    d = np.linalg.norm(a[:, None, :] - b[None, :, :], axis=-1)
    ii, jj = np.nonzero(d <= radius)
    order = np.lexsort((jj, ii, d[ii, jj]))
    used_a, used_b = set(), set()
    count = 0
    for k in order:
        i, j = ii[k], jj[k]
        if i in used_a or j in used_b:
            continue
        used_a.add(i)
        used_b.add(j)
        count += 1
    return count


def topo(pred: SpatialGraph, gt: SpatialGraph, seed_interval: float = 0.25,
         match_radius: float = 0.025, hole_spacing: float = 0.05,
         crawl_radius: float = 0.3) -> tuple[float, float]:
    """TOPO precision and recall for 2D graphs.

    Seeds are placed along every ground-truth edge; predicted edges farther
    than ``match_radius`` from the ground truth get seeds of their own so
    that spurious predicted structure lowers precision.  Around each seed
    both graphs are crawled up to ``crawl_radius``, holes (ground truth) and
    marbles (prediction) are dropped every ``hole_spacing``, and the two are
    matched greedily one-to-one within ``match_radius``.
    """
    if pred.dims != 2 or gt.dims != 2:
        raise ValueError("TOPO is only defined for 2D graphs (unsupported dimension)")
    seeds = [gt_seed for gt_seed in _seed_points(gt, seed_interval)] if gt.edges else []
    locs = []
    if gt.edges:
        gseg = gt.segments()
        for k, t in seeds:
            locs.append(gseg[k, 0] + t * (gseg[k, 1] - gseg[k, 0]))
    if pred.edges:
        pseg = pred.segments()
        for k, t in _seed_points(pred, seed_interval):
            x = pseg[k, 0] + t * (pseg[k, 1] - pseg[k, 0])
            if not gt.edges or _project_onto_graph(gt, x)[2] > match_radius:
                locs.append(x)
    matched = marbles = holes = 0
    for x in locs:
        h = np.zeros((0, 2))
        m = np.zeros((0, 2))
        if gt.edges:
            k, t, d = _project_onto_graph(gt, x)
            if d <= match_radius:
                h = _crawl_points(gt, k, t, crawl_radius, hole_spacing)
        if pred.edges:
            k, t, d = _project_onto_graph(pred, x)
            if d <= match_radius:
                m = _crawl_points(pred, k, t, crawl_radius, hole_spacing)
        matched += _greedy_match(m, h, match_radius)
        marbles += len(m)
        holes += len(h)
    precision = matched / marbles if marbles else (1.0 if holes == 0 else 0.0)
    recall = matched / holes if holes else (1.0 if marbles == 0 else 0.0)
    return precision, recall


# ---------------------------------------------------------------- detection

def node_boxes(g: SpatialGraph, node_box_half: float = DEFAULT_NODE_BOX_HALF) -> list[Box]:
    if node_box_half <= 0:
        raise ValueError("node_box_half must be positive")
    return [Box(tuple(v), (node_box_half,) * g.dims).clip_unit() for v in g.nodes]


def edge_boxes(g: SpatialGraph, min_extent: float = DEFAULT_EDGE_MIN_EXTENT) -> list[Box]:
    if min_extent <= 0:
        raise ValueError("min_extent must be positive")
    out = []
    for a, b in g.edges:
        pa, pb = g.nodes[a], g.nodes[b]
        lo, hi = [], []
        for x, y in zip(pa, pb):
            l, h = min(x, y), max(x, y)
            if h - l < min_extent:
                c = (l + h) / 2
                l, h = c - min_extent / 2, c + min_extent / 2
            lo.append(l)
            hi.append(h)
        out.append(Box.from_bounds(lo, hi).clip_unit())
    return out


def _average_precision(recall: np.ndarray, precision: np.ndarray) -> float:
    """All-point interpolated area under the precision/recall curve."""
    mrec = np.concatenate(([0.0], recall, [1.0]))
    mpre = np.concatenate(([0.0], precision, [0.0]))
    for i in range(len(mpre) - 2, -1, -1):
        mpre[i] = max(mpre[i], mpre[i + 1])
    idx = np.nonzero(mrec[1:] != mrec[:-1])[0]
    return float(np.sum((mrec[idx + 1] - mrec[idx]) * mpre[idx + 1]))


def ap_ar_at(samples: Sequence[tuple[Sequence[Box], Sequence[float], Sequence[Box]]],
             threshold: float) -> tuple[float, float]:
    """AP and AR at one IoU threshold, predictions pooled over samples."""
    entries = []
    n_gt = 0
    for s, (boxes, scores, gts) in enumerate(samples):
        n_gt += len(gts)
        for k, sc in enumerate(scores):
            entries.append((-float(sc), s, k))
    if n_gt == 0 or not entries:
        return 0.0, 0.0
    entries.sort()
    ious = [np.array([[box_iou(p, g) for g in gts] for p in boxes]).reshape(len(boxes), len(gts))
            for boxes, _, gts in samples]
    taken = [np.zeros(len(gts), dtype=bool) for _, _, gts in samples]
    tp = np.zeros(len(entries))
    for r, (_, s, k) in enumerate(entries):
        row = ious[s][k] if ious[s].size else np.zeros(0)
        if row.size == 0:
            continue
        cand = np.where(taken[s] | (row < threshold), -1.0, row)
        j = int(np.argmax(cand))
        if cand[j] >= threshold:
            taken[s][j] = True
            tp[r] = 1
    ctp = np.cumsum(tp)
    recall = ctp / n_gt
    precision = ctp / np.arange(1, len(entries) + 1)
    return _average_precision(recall, precision), float(recall[-1])


def map_mar(samples: Sequence[tuple[Sequence[Box], Sequence[float], Sequence[Box]]],
            thresholds: Sequence[float] = COCO_THRESHOLDS) -> tuple[float, float, dict]:
    """Mean AP and AR over IoU thresholds.

    ``samples`` holds one ``(pred_boxes, scores, gt_boxes)`` triple per image.
    """
    per = {}
    for t in thresholds:
        per[f"{t:.2f}"] = ap_ar_at(samples, t)
    aps = [v[0] for v in per.values()]
    ars = [v[1] for v in per.values()]
    return float(np.mean(aps)), float(np.mean(ars)), {k: {"ap": a, "ar": r} for k, (a, r) in per.items()}


@dataclass
class ScoredGraph:
    """A predicted graph plus per-node and per-edge confidence scores."""

    graph: SpatialGraph
    node_scores: list[float] | None = None
    edge_scores: list[float] | None = None

    def scores(self) -> tuple[list[float], list[float]]:
        ns = self.node_scores if self.node_scores is not None else [1.0] * self.graph.num_nodes
        es = self.edge_scores if self.edge_scores is not None else [1.0] * self.graph.num_edges
        return ns, es


def evaluate_graphs(preds: Sequence[ScoredGraph | SpatialGraph], gts: Sequence[SpatialGraph],
                    cfg: MetricConfig | None = None) -> tuple[MetricReport, list[dict]]:
    """Dataset-level report plus one row of per-sample scores."""
    cfg = cfg or MetricConfig()
    if len(preds) != len(gts):
        raise ValueError(f"{len(preds)} predictions for {len(gts)} ground-truth graphs")
    preds = [p if isinstance(p, ScoredGraph) else ScoredGraph(p) for p in preds]
    thr = cfg.thresholds()
    node_samples, edge_samples, rows = [], [], []
    smds, tp_list, tr_list = [], [], []
    dims = gts[0].dims if gts else 2
    for idx, (p, g) in enumerate(zip(preds, gts)):
        ns, es = p.scores()
        nb = (node_boxes(p.graph, cfg.node_box_half), ns, node_boxes(g, cfg.node_box_half))
        eb = (edge_boxes(p.graph, cfg.edge_min_extent), es, edge_boxes(g, cfg.edge_min_extent))
        node_samples.append(nb)
        edge_samples.append(eb)
        s = smd(p.graph, g, cfg.smd_points, cfg.smd_seed)
        smds.append(s)
        row = {"sample": idx, "smd": s}
        nm, nr, _ = map_mar([nb], thr)
        em, er, _ = map_mar([eb], thr)
        row.update(node_map=nm, node_mar=nr, edge_map=em, edge_mar=er)
        if dims == 2:
            tp, tr = topo(p.graph, g, cfg.topo_seed_interval, cfg.topo_match_radius,
                          cfg.topo_hole_spacing, cfg.topo_crawl_radius)
            tp_list.append(tp)
            tr_list.append(tr)
            row.update(topo_precision=tp, topo_recall=tr)
        rows.append(row)
    node_map, node_mar, node_per = map_mar(node_samples, thr)
    edge_map, edge_mar, edge_per = map_mar(edge_samples, thr)
    report = MetricReport(
        node_map=node_map, node_mar=node_mar, edge_map=edge_map, edge_mar=edge_mar,
        smd=float(np.mean(smds)) if smds else 0.0,
        topo_precision=float(np.mean(tp_list)) if dims == 2 and tp_list else None,
        topo_recall=float(np.mean(tr_list)) if dims == 2 and tr_list else None,
        per_threshold={"node": node_per, "edge": edge_per},
        config=asdict(cfg))
    return report, rows
