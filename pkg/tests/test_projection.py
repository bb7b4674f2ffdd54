import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from graphtransfer.data import Domain, ImagePatch, Sample
from graphtransfer.graph import SpatialGraph, is_valid
from graphtransfer.projection import (axis_rotation, embed_slice, lift_graph, mid_slice_index,
                                      project, project2d, random_rotation, resize2d,
                                      rotate_graph, rotate_sample, rotate_volume)
from graphtransfer.synthetic import gen_synthetic


def smooth_image(n):
    y, x = np.meshgrid((np.arange(n) + 0.5) / n, (np.arange(n) + 0.5) / n, indexing="ij")
    return ImagePatch(0.5 + 0.3 * np.sin(2 * np.pi * x) * np.cos(2 * np.pi * y))


def test_resize_constant_and_identity():
    c = ImagePatch(np.full((128, 128), 0.37, np.float32))
    out = resize2d(c, (64, 64))
    assert out.shape == (64, 64) and np.allclose(out.data, np.float32(0.37))
    img = smooth_image(32)
    assert resize2d(img, (32, 32)) == img
    with pytest.raises(ValueError):
        resize2d(img, (0, 4))


def supersampled_mean(n_out, n_in=128, factor=8):
    """Reference: evaluate the continuous image on a dense grid."""
    fine = n_out * factor
    y, x = np.meshgrid((np.arange(fine) + 0.5) / fine, (np.arange(fine) + 0.5) / fine, indexing="ij")
    return float(np.mean(0.5 + 0.3 * np.sin(2 * np.pi * x) * np.cos(2 * np.pi * y)))


@pytest.mark.parametrize("n_out", [64, 48, 100])
def test_resize_preserves_mean_of_smooth_image(n_out):
    out = resize2d(smooth_image(128), (n_out, n_out))
    assert abs(float(out.data.mean()) - supersampled_mean(n_out)) < 1e-3


def test_embed_slice_and_lift():
    img = smooth_image(16)
    vol = embed_slice(img, 9)
    assert vol.shape == (16, 16, 9) and mid_slice_index(9) == 4
    assert np.array_equal(vol.data[:, :, 4], img.data)
    assert vol.data.sum(dtype=np.float64) == pytest.approx(img.data.sum(dtype=np.float64))
    g = SpatialGraph.from_lists(2, [(0.25, 0.75), (0.5, 0.5)], [(0, 1)])
    g3 = lift_graph(g)
    assert g3.nodes[0] == (0.25, 0.75, 0.5) and g3.edges == g.edges


@pytest.mark.parametrize("depth", range(1, 12))
def test_mid_slice_is_nearest_half(depth):
    centers = (np.arange(depth) + 0.5) / depth
    dist = np.abs(centers - 0.5)
    # on even depths the two middle slices tie; either is acceptable
    assert dist[mid_slice_index(depth)] <= dist.min() + 1e-12


def test_random_rotations_are_proper():
    for seed in range(1000):
        R = random_rotation(seed)
        assert np.abs(R.T @ R - np.eye(3)).max() < 1e-9
        assert abs(np.linalg.det(R) - 1) < 1e-9
    assert np.array_equal(random_rotation(5), random_rotation(5))


def test_rotation_is_roughly_uniform():
    # the rotated z-axis of a uniform rotation is uniform on the sphere: E[z] = 0, E[z^2] = 1/3
    z = np.array([random_rotation(s)[2, 2] for s in range(4000)])
    assert abs(z.mean()) < 0.03 and abs((z ** 2).mean() - 1 / 3) < 0.03


def test_quarter_turn_about_z():
    g = SpatialGraph.from_lists(3, [(0.25, 0.75, 0.5)])
    out, dropped = rotate_graph(g, axis_rotation(2, 1))
    assert np.allclose(out.nodes[0], (0.25, 0.25, 0.5), atol=1e-15) and dropped == 0.0


def test_identity_rotation_is_exact():
    vol = ImagePatch(np.random.default_rng(0).random((8, 8, 8)))
    g = SpatialGraph.from_lists(3, [(0.1, 0.2, 0.3), (0.9, 0.5, 0.5)], [(0, 1)])
    out = rotate_sample(vol, g, np.eye(3))
    assert out.graph == g and out.image == vol and out.domain is Domain.SOURCE


@pytest.mark.parametrize("axis, turns", list(itertools.product(range(3), range(1, 4))))
def test_axis_rotations_permute_voxels(axis, turns):
    data = np.random.default_rng(axis * 3 + turns).random((6, 6, 6)).astype(np.float32)
    out = rotate_volume(ImagePatch(data), axis_rotation(axis, turns))
    assert out.data.sum(dtype=np.float64) == data.sum(dtype=np.float64)
    assert np.array_equal(np.sort(out.data, axis=None), np.sort(data, axis=None))


@settings(max_examples=100)
@given(st.integers(0, 2**31 - 1))
def test_rotation_is_isometry_and_keeps_topology(seed):
    rng = np.random.default_rng(seed)
    pts = rng.uniform(0, 1, (8, 3))
    edges = [(i, j) for i in range(8) for j in range(i + 1, 8) if rng.random() < 0.3]
    g = SpatialGraph.from_lists(3, pts, edges)
    R = random_rotation(seed)
    moved = (pts - 0.5) @ R.T + 0.5
    d0 = np.linalg.norm(pts[:, None] - pts[None], axis=-1)
    d1 = np.linalg.norm(moved[:, None] - moved[None], axis=-1)
    assert np.abs(d0 - d1).max() < 1e-9
    out, dropped = rotate_graph(g, R)
    keep = [i for i in range(8) if np.all((moved[i] >= -1e-12) & (moved[i] <= 1 + 1e-12))]
    assert out.num_nodes == len(keep) and dropped == pytest.approx(1 - len(keep) / 8)
    index = {i: k for k, i in enumerate(keep)}
    assert set(out.edges) == {(index[a], index[b]) for a, b in edges if a in index and b in index}
    xyz = out.coords()
    if len(keep) > 1:
        ref = d0[np.ix_(keep, keep)]
        got = np.linalg.norm(xyz[:, None] - xyz[None], axis=-1)
        assert np.abs(ref - got).max() < 1e-9
    assert is_valid(out)


def test_project_pipeline():
    src = gen_synthetic(2, 1, style="grid")[0]
    a = project(src, (16, 16, 16), rng_seed=3)
    b = project(src, (16, 16, 16), rng_seed=3)
    assert a == b and a.domain is Domain.SOURCE
    assert a.image.shape == (16, 16, 16) and is_valid(a.graph)
    assert all(0 <= c <= 1 for v in a.graph.nodes for c in v)
    assert 0 <= a.meta["dropped_fraction"] <= 1
    with pytest.raises(ValueError):
        project(a, (8, 8, 8))


def test_project_identity_rotation_midslice_equals_resized_input():
    src = gen_synthetic(4, 1, style="tree")[0]
    out = project(src, (32, 32, 10), rotation=np.eye(3))
    assert np.array_equal(out.image.data[:, :, 5], resize2d(src.image, (32, 32)).data)
    assert out.graph == lift_graph(src.graph)


def test_project2d_only_resizes():
    src = gen_synthetic(4, 1)[0]
    out = project2d(src, (32, 32))
    assert out.graph == src.graph and out.image.shape == (32, 32) and out.domain is Domain.SOURCE
