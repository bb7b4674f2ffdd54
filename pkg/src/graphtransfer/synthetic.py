"""Seeded synthetic image/graph pairs: road-like grids and vessel-like trees.

Nodes sit on a coarse lattice (one candidate per cell, jittered around the
cell center).  GRID graphs use axis moves only, so every node has degree at
most ``2 * dims``.  TREE graphs grow by branching random walks that may also
move diagonally; two diagonals of the same lattice square never both appear,
so edges do not cross.  Edges are rendered as anti-aliased bright strokes on
a noisy dark background, with a small blob at every node; TREE strokes are
drawn as gently bent curves.
"""

from __future__ import annotations

import enum
import itertools
from dataclasses import dataclass

import numpy as np

from .data import Domain, ImagePatch, Sample
from .graph import SpatialGraph, canonicalize


class Style(str, enum.Enum):
    GRID = "grid"
    TREE = "tree"


@dataclass(frozen=True)
class RenderParams:
    line_width: float = 1.5      # stroke width in pixels
    brightness: float = 0.9
    background: float = 0.1
    noise: float = 0.05
    bend: float = 0.0            # curve bulge as a fraction of edge length
    node_radius: float = 2.0     # radius of the blob marking each node, in pixels

    @classmethod
    def for_style(cls, style: Style) -> "RenderParams":
        if style is Style.TREE:
            return cls(line_width=1.0, brightness=0.75, background=0.12, noise=0.07, bend=0.12,
                       node_radius=1.75)
        return cls()


@dataclass(frozen=True)
class SynthConfig:
    size: int = 64               # pixels per axis
    cells: int = 4               # lattice cells per axis
    jitter: float = 0.15         # node offset as a fraction of the cell width
    min_nodes: int = 6
    max_nodes: int | None = None  # default: every lattice cell
    extra_edge_prob: float = 0.25
    render: RenderParams | None = None


def _moves(dims: int, diagonal: bool) -> list[tuple[int, ...]]:
    out = []
    for step in itertools.product((-1, 0, 1), repeat=dims):
        nz = sum(s != 0 for s in step)
        if nz == 0 or (not diagonal and nz > 1):
            continue
        out.append(step)
    return out


def _grow_lattice_graph(rng: np.random.Generator, dims: int, cells: int, n_target: int,
                        diagonal: bool, extra_prob: float) -> tuple[list[tuple[int, ...]], list[tuple[int, int]]]:
    """Random connected subgraph of the lattice: a spanning tree plus optional loops."""
    moves = _moves(dims, diagonal)
    start = tuple(int(x) for x in rng.integers(0, cells, dims))
    cells_used = [start]
    where = {start: 0}
    edges: list[tuple[int, int]] = []
    mids: set[tuple[int, ...]] = set()

    def free_mid(a, b) -> bool:
        # two lattice diagonals cross exactly when they share a midpoint
        return tuple(x + y for x, y in zip(a, b)) not in mids

    def add_edge(ia, ib):
        a, b = cells_used[ia], cells_used[ib]
        mids.add(tuple(x + y for x, y in zip(a, b)))
        edges.append((min(ia, ib), max(ia, ib)))

    frontier = [0]
    while len(cells_used) < n_target and frontier:
        k = int(rng.integers(len(frontier)))
        src = cells_used[frontier[k]]
        options = []
        for mv in moves:
            dst = tuple(s + m for s, m in zip(src, mv))
            if all(0 <= x < cells for x in dst) and dst not in where and free_mid(src, dst):
                options.append(dst)
        if not options:
            frontier.pop(k)
            continue
        dst = options[int(rng.integers(len(options)))]
        where[dst] = len(cells_used)
        cells_used.append(dst)
        add_edge(where[src], where[dst])
        frontier.append(where[dst])
    if extra_prob > 0:
        present = set(edges)
        axis = _moves(dims, False)
        for i, c in enumerate(cells_used):
            for mv in axis:
                if any(m < 0 for m in mv):
                    continue
                d = tuple(s + m for s, m in zip(c, mv))
                j = where.get(d)
                if j is None or (min(i, j), max(i, j)) in present or not free_mid(c, d):
                    continue
                if rng.random() < extra_prob:
                    add_edge(i, j)
                    present.add((min(i, j), max(i, j)))
    return cells_used, edges


def _segment_distance(points: np.ndarray, a: np.ndarray, b: np.ndarray) -> np.ndarray:
    d = b - a
    dd = float(d @ d)
    if dd == 0:
        return np.linalg.norm(points - a, axis=-1)
    t = np.clip((points - a) @ d / dd, 0.0, 1.0)
    return np.linalg.norm(points - a - t[..., None] * d, axis=-1)


def _stroke_path(a: np.ndarray, b: np.ndarray, bend: float, sign: float, pieces: int = 6) -> np.ndarray:
    """Polyline approximating a quadratic curve from ``a`` to ``b``."""
    if bend == 0:
        return np.stack([a, b])
    d = b - a
    normal = np.zeros_like(d)
    # bend within the plane of the first two axes the edge spans
    normal[0], normal[1] = -d[1], d[0]
    if not normal.any():
        normal[0], normal[2 if len(d) > 2 else 1] = -d[-1], d[0]
    ctrl = (a + b) / 2 + sign * bend * normal
    t = np.linspace(0.0, 1.0, pieces + 1)[:, None]
    return (1 - t) ** 2 * a + 2 * (1 - t) * t * ctrl + t ** 2 * b


def render(graph: SpatialGraph, shape: tuple[int, ...], params: RenderParams,
           rng: np.random.Generator) -> np.ndarray:
    """Draw ``graph`` into an array of ``shape``; coordinates are pixel-center based."""
    grids = np.meshgrid(*[np.arange(n) + 0.5 for n in shape], indexing="ij")
    pix = np.stack(grids, axis=-1).reshape(-1, len(shape))
    scale = np.asarray(shape, dtype=float)
    ink = np.zeros(len(pix))
    half = params.line_width / 2
    xyz = graph.coords() * scale
    for a, b in graph.edges:
        sign = 1.0 if rng.random() < 0.5 else -1.0
        path = _stroke_path(xyz[a], xyz[b], params.bend, sign)
        lo = path.min(0) - half - 1
        hi = path.max(0) + half + 1
        near = np.all((pix >= lo) & (pix <= hi), axis=1)
        if not near.any():
            continue
        sub = pix[near]
        dist = np.full(len(sub), np.inf)
        for p, q in zip(path[:-1], path[1:]):
            dist = np.minimum(dist, _segment_distance(sub, p, q))
        # linear coverage falloff over one pixel gives the anti-aliased edge
        ink[near] = np.maximum(ink[near], np.clip(half + 0.5 - dist, 0.0, 1.0))
    for v in xyz:
        d = np.linalg.norm(pix - v, axis=1)
        ink = np.maximum(ink, np.clip(max(params.node_radius, half) + 0.5 - d, 0.0, 1.0))
    img = params.background + rng.normal(0.0, params.noise, len(pix))
    img = img * (1 - ink) + params.brightness * ink
    return np.clip(img, 0.0, 1.0).reshape(shape).astype(np.float32)


def make_graph(rng: np.random.Generator, dims: int, style: Style, cfg: SynthConfig) -> SpatialGraph:
    n_cells = cfg.cells ** dims
    hi = cfg.max_nodes or n_cells
    n_target = int(rng.integers(min(cfg.min_nodes, hi), hi + 1))
    diagonal = style is Style.TREE
    extra = cfg.extra_edge_prob if style is Style.GRID else 0.0
    cells, edges = _grow_lattice_graph(rng, dims, cfg.cells, n_target, diagonal, extra)
    width = 1.0 / cfg.cells
    nodes = []
    for c in cells:
        jit = rng.uniform(-cfg.jitter, cfg.jitter, dims) * width
        nodes.append(tuple(float(x) for x in (np.asarray(c) + 0.5) * width + jit))
    return canonicalize(SpatialGraph(dims, tuple(nodes), tuple(edges)))


def gen_synthetic(seed: int, n_samples: int, dims: int = 2, style: Style | str = Style.GRID,
                  cfg: SynthConfig | None = None, domain: Domain = Domain.TARGET) -> list[Sample]:
    """Deterministic list of synthetic samples for a given seed."""
    if dims not in (2, 3):
        raise ValueError(f"dims must be 2 or 3, got {dims}")
    style = Style(style)
    cfg = cfg or SynthConfig()
    params = cfg.render or RenderParams.for_style(style)
    rng = np.random.default_rng(seed)
    out = []
    for _ in range(n_samples):
        g = make_graph(rng, dims, style, cfg)
        img = render(g, (cfg.size,) * dims, params, rng)
        out.append(Sample(ImagePatch(img), g, Domain(domain), {"style": style.value}))
    return out

