"""Image tensors, samples on disk, patch extraction and redundant-node pruning."""

from __future__ import annotations

import enum
import json
import math
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .graph import SpatialGraph, canonicalize, read_graph, write_graph

GTN_MAGIC = b"GTN1"
DEFAULT_PRUNE_ANGLE = 160.0


class Domain(str, enum.Enum):
    SOURCE = "source"
    TARGET = "target"

    @property
    def label(self) -> int:
        """Binary domain label used by the adversarial losses (source = 1)."""
        return 1 if self is Domain.SOURCE else 0


@dataclass(eq=False)
class ImagePatch:
    """Dense scalar image or volume, intensities in ``[0, 1]``.

    Array axis ``k`` corresponds to graph coordinate ``k``; pixel ``i`` along
    an axis of size ``n`` has its center at normalized position ``(i + 0.5) / n``.
    """

    data: np.ndarray

    def __post_init__(self):
        self.data = np.ascontiguousarray(self.data, dtype=np.float32)
        if self.data.ndim not in (2, 3):
            raise ValueError(f"image must be 2D or 3D, got {self.data.ndim} dims")
        if min(self.data.shape) < 1:
            raise ValueError(f"image shape {self.data.shape} has an empty axis")
        if not np.isfinite(self.data).all():
            raise ValueError("image contains non-finite values")
        if self.data.min() < 0 or self.data.max() > 1:
            raise ValueError("image intensities must lie in [0, 1]")

    @property
    def dims(self) -> int:
        return self.data.ndim

    @property
    def shape(self) -> tuple[int, ...]:
        return tuple(self.data.shape)

    def __eq__(self, other) -> bool:
        return isinstance(other, ImagePatch) and self.shape == other.shape \
            and np.array_equal(self.data, other.data)


@dataclass(eq=False)
class Sample:
    image: ImagePatch
    graph: SpatialGraph
    domain: Domain = Domain.TARGET
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.domain = Domain(self.domain)
        if self.image.dims != self.graph.dims:
            raise ValueError(f"image is {self.image.dims}D but graph is {self.graph.dims}D")

    def __eq__(self, other) -> bool:
        return isinstance(other, Sample) and self.image == other.image \
            and self.graph == other.graph and self.domain == other.domain \
            and self.meta == other.meta


# ---------------------------------------------------------------- .gtn tensors

def encode_gtn(arr: np.ndarray) -> bytes:
    arr = np.asarray(arr)
    header = GTN_MAGIC + struct.pack("<B", arr.ndim) + struct.pack(f"<{arr.ndim}I", *arr.shape)
    return header + np.ascontiguousarray(arr, dtype="<f4").tobytes()


def decode_gtn(raw: bytes) -> np.ndarray:
    if raw[:4] != GTN_MAGIC:
        raise ValueError("not a GTN file (bad magic bytes)")
    if len(raw) < 5:
        raise ValueError("GTN header truncated before the dimension count")
    ndim = raw[4]
    if ndim == 0:
        raise ValueError("GTN header declares zero dimensions")
    end = 5 + 4 * ndim
    if len(raw) < end:
        raise ValueError("GTN header truncated inside the shape")
    shape = struct.unpack(f"<{ndim}I", raw[5:end])
    count = math.prod(shape)
    payload = raw[end:]
    if len(payload) < 4 * count:
        raise ValueError(f"payload shorter than header claims ({len(payload)} < {4 * count} bytes)")
    if len(payload) > 4 * count:
        raise ValueError(f"payload longer than header claims ({len(payload)} > {4 * count} bytes)")
    return np.frombuffer(payload, dtype="<f4").reshape(shape).astype(np.float32)


def write_gtn(arr: np.ndarray, path: str | Path) -> None:
    Path(path).write_bytes(encode_gtn(arr))


def read_gtn(path: str | Path) -> np.ndarray:
    return decode_gtn(Path(path).read_bytes())


# ---------------------------------------------------------------- samples

def write_sample(sample: Sample, path: str | Path) -> None:
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    write_gtn(sample.image.data, path / "image.gtn")
    write_graph(sample.graph, path / "graph.json")
    meta = {"domain": sample.domain.value, **sample.meta}
    (path / "meta.json").write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")


def read_sample(path: str | Path) -> Sample:
    path = Path(path)
    image = ImagePatch(read_gtn(path / "image.gtn"))
    graph = read_graph(path / "graph.json")
    meta_path = path / "meta.json"
    meta = json.loads(meta_path.read_text()) if meta_path.exists() else {}
    domain = meta.pop("domain", Domain.TARGET.value)
    return Sample(image, graph, Domain(domain), meta)


def list_sample_dirs(root: str | Path) -> list[Path]:
    """Sample directories under ``root`` in sorted name order."""
    root = Path(root)
    if (root / "graph.json").exists():
        return [root]
    return sorted(p for p in root.iterdir() if (p / "graph.json").exists())


# ---------------------------------------------------------------- patching

def _clip_segment(a: np.ndarray, b: np.ndarray, lo: np.ndarray, hi: np.ndarray):
    """Liang-Barsky clip of segment ``a -> b`` against the closed box; ``None`` if it misses."""
    t0, t1 = 0.0, 1.0
    d = b - a
    for k in range(len(a)):
        if d[k] == 0:
            if a[k] < lo[k] or a[k] > hi[k]:
                return None
            continue
        ta, tb = (lo[k] - a[k]) / d[k], (hi[k] - a[k]) / d[k]
        if ta > tb:
            ta, tb = tb, ta
        t0, t1 = max(t0, ta), min(t1, tb)
        if t0 > t1:
            return None
    return t0, t1


def _inside(v: np.ndarray, lo: np.ndarray, hi: np.ndarray) -> bool:
    # half-open on the low side so boundary nodes go to the lower-index patch
    return bool(np.all(((v > lo) | ((v == lo) & (lo == 0))) & (v <= hi)))


def _grid_starts(size: int, patch: int, stride: int) -> list[int]:
    return list(range(0, size - patch + 1, stride))


def crop_graph(g: SpatialGraph, lo: Sequence[float], hi: Sequence[float]) -> SpatialGraph:
    """Subgraph inside the window ``[lo, hi]``, re-expressed in the window's unit frame.

    Edges leaving the window are clipped at the boundary and end in a newly
    inserted node; inserted nodes that coincide are merged.
    """
    lo = np.asarray(lo, dtype=float)
    hi = np.asarray(hi, dtype=float)
    xyz = g.coords()
    keep = [i for i in range(g.num_nodes) if _inside(xyz[i], lo, hi)]
    index = {i: k for k, i in enumerate(keep)}
    points = [xyz[i] for i in keep]
    boundary: dict[tuple, int] = {}

    def node_at(p: np.ndarray) -> int:
        key = tuple(np.round(p, 12))
        if key not in boundary:
            boundary[key] = len(points)
            points.append(p)
        return boundary[key]

    edges = []
    for a, b in g.edges:
        if a in index and b in index:
            edges.append((index[a], index[b]))
            continue
        hit = _clip_segment(xyz[a], xyz[b], lo, hi)
        if hit is None:
            continue
        t0, t1 = hit
        pa = xyz[a] + t0 * (xyz[b] - xyz[a])
        pb = xyz[a] + t1 * (xyz[b] - xyz[a])
        if np.allclose(pa, pb, rtol=0, atol=1e-12):
            continue
        # a segment running along a shared low face belongs to the neighbouring patch
        on_low = (np.abs(pa - lo) < 1e-12) & (np.abs(pb - lo) < 1e-12) & (lo > 0)
        if on_low.any():
            continue
        ia = index[a] if a in index else node_at(pa)
        ib = index[b] if b in index else node_at(pb)
        if ia != ib:
            edges.append((ia, ib))
    span = hi - lo
    nodes = [tuple(float(x) for x in np.clip((p - lo) / span, 0.0, 1.0)) for p in points]
    return canonicalize(SpatialGraph(g.dims, tuple(nodes), tuple(edges)))


def extract_patches(image: ImagePatch, graph: SpatialGraph, patch_size: Sequence[int] | int,
                    stride: Sequence[int] | int, domain: Domain = Domain.TARGET) -> list[Sample]:
    """Crop overlapping patches on a regular grid, row-major over grid positions.

    ``graph`` is in the normalized frame of the whole ``image``.
    """
    shape = image.shape
    d = image.dims
    if graph.dims != d:
        raise ValueError("image and graph dimensionality differ")
    patch = (patch_size,) * d if isinstance(patch_size, int) else tuple(patch_size)
    step = (stride,) * d if isinstance(stride, int) else tuple(stride)
    if len(patch) != d or len(step) != d:
        raise ValueError(f"patch_size and stride need {d} components")
    if any(s < 1 for s in step):
        raise ValueError("stride must be at least 1 in every dimension")
    if any(p < 1 or p > n for p, n in zip(patch, shape)):
        raise ValueError(f"patch {patch} does not fit in image of shape {shape}")
    grids = [_grid_starts(n, p, s) for n, p, s in zip(shape, patch, step)]
    out = []
    for start in np.ndindex(*[len(gs) for gs in grids]):
        begin = [grids[k][start[k]] for k in range(d)]
        window = tuple(slice(b, b + p) for b, p in zip(begin, patch))
        lo = [b / n for b, n in zip(begin, shape)]
        hi = [(b + p) / n for b, p, n in zip(begin, patch, shape)]
        sub = crop_graph(graph, lo, hi)
        out.append(Sample(ImagePatch(image.data[window].copy()), sub, domain,
                          {"origin": begin}))
    return out


# ---------------------------------------------------------------- pruning

def _interior_angle(p: np.ndarray, a: np.ndarray, b: np.ndarray) -> float | None:
    u, v = a - p, b - p
    nu, nv = np.linalg.norm(u), np.linalg.norm(v)
    if nu == 0 or nv == 0:
        return None
    c = float(np.clip(np.dot(u, v) / (nu * nv), -1.0, 1.0))
    return math.degrees(math.acos(c))


def prune_redundant_nodes(g: SpatialGraph, curvature_threshold_deg: float = DEFAULT_PRUNE_ANGLE) -> SpatialGraph:
    """Remove nearly straight degree-2 nodes until none are left.

    A degree-2 node is redundant when the interior angle between its two
    edges exceeds ``curvature_threshold_deg`` (180 degrees is a straight
    line).  Its neighbours are joined directly.  Sharp corners are kept.
    """
    xyz = g.coords()
    adj = [set() for _ in range(g.num_nodes)]
    for a, b in g.edges:
        adj[a].add(b)
        adj[b].add(a)
    alive = [True] * g.num_nodes
    changed = True
    while changed:
        changed = False
        for i in range(g.num_nodes):
            if not alive[i] or len(adj[i]) != 2:
                continue
            a, b = sorted(adj[i])
            ang = _interior_angle(xyz[i], xyz[a], xyz[b])
            if ang is None or ang <= curvature_threshold_deg:
                continue
            alive[i] = False
            adj[a].discard(i)
            adj[b].discard(i)
            adj[a].add(b)
            adj[b].add(a)
            adj[i] = set()
            changed = True
    survivors = [i for i in range(g.num_nodes) if alive[i]]
    index = {i: k for k, i in enumerate(survivors)}
    edges = {(index[a], index[b]) for a in survivors for b in adj[a] if a < b}
    return SpatialGraph(g.dims, tuple(g.nodes[i] for i in survivors), tuple(sorted(edges)))
