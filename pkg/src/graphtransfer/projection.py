"""Lift a 2D image/graph sample into a 3D volume: resize, embed at mid-depth, rotate."""

from __future__ import annotations

from typing import Sequence

import numpy as np
from scipy import ndimage

from .data import Domain, ImagePatch, Sample
from .graph import SpatialGraph

CENTER = np.array([0.5, 0.5, 0.5])


def _interp_matrix(n_out: int, n_in: int) -> np.ndarray:
    """Linear interpolation weights mapping ``n_in`` pixel centers onto ``n_out``."""
    x = (np.arange(n_out) + 0.5) * n_in / n_out - 0.5
    x = np.clip(x, 0.0, n_in - 1)
    i0 = np.floor(x).astype(int)
    i1 = np.minimum(i0 + 1, n_in - 1)
    w = x - i0
    M = np.zeros((n_out, n_in))
    M[np.arange(n_out), i0] += 1 - w
    M[np.arange(n_out), i1] += w
    return M


def resize2d(img: ImagePatch, target: Sequence[int]) -> ImagePatch:
    """Bilinear resampling at pixel centers; the graph needs no change."""
    if img.dims != 2:
        raise ValueError("resize2d expects a 2D image")
    h, w = (int(t) for t in target)
    if h < 1 or w < 1:
        raise ValueError(f"target size must be positive, got {tuple(target)}")
    if (h, w) == img.shape:
        return ImagePatch(img.data.copy())
    A = _interp_matrix(h, img.shape[0])
    B = _interp_matrix(w, img.shape[1])
    out = A @ img.data.astype(float) @ B.T
    return ImagePatch(np.clip(out, 0.0, 1.0))


def mid_slice_index(depth: int) -> int:
    """Slice whose normalized center is nearest 0.5 (upper one on even depths)."""
    return depth // 2


def embed_slice(img: ImagePatch, depth: int) -> ImagePatch:
    if img.dims != 2:
        raise ValueError("embed_slice expects a 2D image")
    if depth < 1:
        raise ValueError("depth must be at least 1")
    vol = np.zeros(img.shape + (depth,), dtype=np.float32)
    vol[:, :, mid_slice_index(depth)] = img.data
    return ImagePatch(vol)


def lift_graph(g: SpatialGraph, z: float = 0.5) -> SpatialGraph:
    if g.dims != 2:
        raise ValueError("lift_graph expects a 2D graph")
    return SpatialGraph(3, tuple(v + (z,) for v in g.nodes), g.edges)


def random_rotation(rng_seed: int) -> np.ndarray:
    """Uniform rotation from a normalized Gaussian quaternion."""
    q = np.random.default_rng(rng_seed).standard_normal(4)
    return quaternion_to_matrix(q / np.linalg.norm(q))


def quaternion_to_matrix(q: np.ndarray) -> np.ndarray:
    w, x, y, z = q
    return np.array([
        [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
        [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
        [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
    ])


def axis_rotation(axis: int, quarter_turns: int) -> np.ndarray:
    """Exact rotation by ``90 * quarter_turns`` degrees about a coordinate axis."""
    c, s = [(1, 0), (0, 1), (-1, 0), (0, -1)][quarter_turns % 4]
    i, j = [(1, 2), (2, 0), (0, 1)][axis]
    R = np.eye(3)
    R[i, i], R[i, j], R[j, i], R[j, j] = c, -s, s, c
    return R


def rotate_graph(g: SpatialGraph, R: np.ndarray, tol: float = 1e-12) -> tuple[SpatialGraph, float]:
    """Rotate about the cube center; drop nodes that leave ``[0, 1]^3`` with their edges.

    Returns the rotated graph and the fraction of nodes dropped.
    """
    if g.num_nodes == 0:
        return g, 0.0
    v = g.coords()
    # v + (R - I)(v - c) equals R(v - c) + c but leaves v untouched when R = I
    xyz = v + (v - CENTER) @ (R - np.eye(3)).T
    keep = np.all((xyz >= -tol) & (xyz <= 1 + tol), axis=1)
    xyz = np.clip(xyz, 0.0, 1.0)
    index = {int(i): k for k, i in enumerate(np.flatnonzero(keep))}
    nodes = tuple(tuple(float(c) for c in xyz[i]) for i in index)
    edges = tuple((index[a], index[b]) for a, b in g.edges if a in index and b in index)
    return SpatialGraph(3, nodes, edges), float(1 - keep.mean())


def rotate_volume(vol: ImagePatch, R: np.ndarray) -> ImagePatch:
    """Trilinear inverse-mapped resampling about the center, zero outside."""
    if vol.dims != 3:
        raise ValueError("rotate_volume expects a 3D volume")
    shape = np.asarray(vol.shape, dtype=float)
    idx = np.indices(vol.shape).reshape(3, -1).T.astype(float)
    out_pts = (idx + 0.5) / shape
    src = (out_pts - CENTER) @ R + CENTER       # R^T applied to row vectors
    src_idx = src * shape - 0.5
    # snap round-off so pure voxel permutations stay exact
    snapped = np.round(src_idx)
    src_idx = np.where(np.abs(src_idx - snapped) < 1e-9, snapped, src_idx)
    vals = ndimage.map_coordinates(vol.data.astype(float), src_idx.T, order=1,
                                   mode="constant", cval=0.0)
    return ImagePatch(np.clip(vals.reshape(vol.shape), 0.0, 1.0))


def rotate_sample(vol: ImagePatch, graph: SpatialGraph, R: np.ndarray,
                  domain: Domain = Domain.SOURCE) -> Sample:
    R = np.asarray(R, dtype=float)
    g, dropped = rotate_graph(graph, R)
    return Sample(rotate_volume(vol, R), g, domain, {"dropped_fraction": dropped})


def project(sample: Sample, target_shape: Sequence[int], rng_seed: int = 0,
            rotation: np.ndarray | None = None) -> Sample:
    """2D sample to 3D: resize, embed at ``z = 0.5``, rotate about the center.

    ``rotation`` overrides the seeded random rotation (used by tests).
    """
    if sample.image.dims != 2:
        raise ValueError("project expects a 2D sample")
    h, w, d = (int(t) for t in target_shape)
    small = resize2d(sample.image, (h, w))
    vol = embed_slice(small, d)
    g3 = lift_graph(sample.graph)
    R = random_rotation(rng_seed) if rotation is None else np.asarray(rotation, dtype=float)
    out = rotate_sample(vol, g3, R, Domain.SOURCE)
    out.meta["rotation"] = [[float(x) for x in row] for row in R]
    return out


def project2d(sample: Sample, target_shape: Sequence[int]) -> Sample:
    """Same-dimension transfer: only the resize step applies."""
    return Sample(resize2d(sample.image, target_shape), sample.graph, Domain.SOURCE,
                  dict(sample.meta))
