"""Spatial graph data model shared by every other module.

Node coordinates are normalized to ``[0, 1]`` per dimension and coordinate
``k`` always refers to array axis ``k`` of the matching image.  Edges are
undirected and stored once as ``(i, j)`` with ``i < j``.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np


@dataclass(frozen=True)
class SpatialGraph:
    dims: int
    nodes: tuple[tuple[float, ...], ...] = ()
    edges: tuple[tuple[int, int], ...] = ()

    @classmethod
    def from_lists(cls, dims: int, nodes: Sequence[Sequence[float]],
                   edges: Sequence[Sequence[int]] = ()) -> "SpatialGraph":
        return cls(int(dims),
                   tuple(tuple(float(c) for c in v) for v in nodes),
                   tuple((int(e[0]), int(e[1])) for e in edges))

    @property
    def num_nodes(self) -> int:
        return len(self.nodes)

    @property
    def num_edges(self) -> int:
        return len(self.edges)

    def coords(self) -> np.ndarray:
        """Node coordinates as a ``(n, dims)`` float array."""
        if not self.nodes:
            return np.zeros((0, self.dims))
        return np.asarray(self.nodes, dtype=float)

    def segments(self) -> np.ndarray:
        """Edge endpoint coordinates as a ``(m, 2, dims)`` array."""
        if not self.edges:
            return np.zeros((0, 2, self.dims))
        xyz = self.coords()
        idx = np.asarray(self.edges, dtype=int)
        return np.stack([xyz[idx[:, 0]], xyz[idx[:, 1]]], axis=1)

    def to_json(self) -> dict:
        g = canonicalize(self)
        return {"dims": g.dims,
                "nodes": [list(v) for v in g.nodes],
                "edges": [list(e) for e in g.edges]}

    @classmethod
    def from_json(cls, obj: dict) -> "SpatialGraph":
        try:
            return cls.from_lists(obj["dims"], obj["nodes"], obj["edges"])
        except (KeyError, TypeError, IndexError) as exc:
            raise ValueError(f"malformed graph JSON: {exc!r}") from exc


@dataclass(frozen=True)
class Box:
    """Axis-aligned box stored as center plus per-dimension half-widths."""

    center: tuple[float, ...]
    extent: tuple[float, ...]

    @property
    def dims(self) -> int:
        return len(self.center)

    @property
    def lo(self) -> tuple[float, ...]:
        return tuple(c - e for c, e in zip(self.center, self.extent))

    @property
    def hi(self) -> tuple[float, ...]:
        return tuple(c + e for c, e in zip(self.center, self.extent))

    @classmethod
    def from_bounds(cls, lo: Sequence[float], hi: Sequence[float]) -> "Box":
        return cls(tuple((a + b) / 2 for a, b in zip(lo, hi)),
                   tuple((b - a) / 2 for a, b in zip(lo, hi)))

    def clip_unit(self) -> "Box":
        lo = [min(max(v, 0.0), 1.0) for v in self.lo]
        hi = [min(max(v, 0.0), 1.0) for v in self.hi]
        return Box.from_bounds(lo, hi)

    def volume(self) -> float:
        return float(np.prod([2 * e for e in self.extent]))


def validate(g: SpatialGraph) -> list[str]:
    """Return a list of invariant violations; empty means the graph is valid.

    Coincident nodes are reported with a ``warning:`` prefix since they are
    legal but usually unintended.
    """
    problems = []
    if g.dims not in (2, 3):
        problems.append(f"dims: must be 2 or 3, got {g.dims}")
    n = len(g.nodes)
    for i, v in enumerate(g.nodes):
        if len(v) != g.dims:
            problems.append(f"nodes[{i}]: length {len(v)} != dims {g.dims}")
        if any(not (0.0 <= c <= 1.0) for c in v):
            problems.append(f"nodes[{i}]: coordinate out of [0,1]")
    seen = set()
    for k, (i, j) in enumerate(g.edges):
        if i == j:
            problems.append(f"edges[{k}]: self-loop at node {i}")
            continue
        if not (0 <= i < n and 0 <= j < n):
            problems.append(f"edges[{k}]: index out of range ({i}, {j})")
            continue
        if i > j:
            problems.append(f"edges[{k}]: not canonical (i > j)")
        key = (min(i, j), max(i, j))
        if key in seen:
            problems.append(f"edges[{k}]: duplicate edge {key}")
        seen.add(key)
    positions = {}
    for i, v in enumerate(g.nodes):
        if v in positions:
            problems.append(f"warning: nodes[{i}]: coincides with nodes[{positions[v]}]")
        else:
            positions[v] = i
    return problems


def is_valid(g: SpatialGraph) -> bool:
    return not [p for p in validate(g) if not p.startswith("warning:")]


def canonicalize(g: SpatialGraph) -> SpatialGraph:
    n = len(g.nodes)
    out = set()
    for i, j in g.edges:
        if not (0 <= i < n and 0 <= j < n):
            raise IndexError(f"edge ({i}, {j}) references a node outside 0..{n - 1}")
        if i == j:
            raise ValueError(f"edge ({i}, {j}) is a self-loop")
        out.add((min(i, j), max(i, j)))
    return SpatialGraph(g.dims, g.nodes, tuple(sorted(out)))


def adjacency_degree(g: SpatialGraph, i: int) -> int:
    if not 0 <= i < len(g.nodes):
        raise IndexError(f"node index {i} out of range for {len(g.nodes)} nodes")
    return sum((a == i) + (b == i) for a, b in g.edges)


def degrees(g: SpatialGraph) -> np.ndarray:
    deg = np.zeros(len(g.nodes), dtype=int)
    for a, b in g.edges:
        deg[a] += 1
        deg[b] += 1
    return deg


def neighbors(g: SpatialGraph) -> list[list[int]]:
    adj: list[list[int]] = [[] for _ in g.nodes]
    for a, b in g.edges:
        adj[a].append(b)
        adj[b].append(a)
    return adj


def read_graph(path: str | Path) -> SpatialGraph:
    with open(path, encoding="utf-8") as fh:
        return SpatialGraph.from_json(json.load(fh))


def write_graph(g: SpatialGraph, path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(g.to_json(), fh, indent=2)
        fh.write("\n")
