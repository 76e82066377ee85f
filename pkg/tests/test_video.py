import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from vidalign.errors import InputError
from vidalign.video import (
    FeatureVolume,
    JointFusion,
    ProjectedVolume,
    ProjectionHead,
    fuse_joint,
    nearest_time_indices,
    pool,
    project,
)
from vidalign.tensor import Tensor


def head(branch, c_in, C, seed=0):
    return ProjectionHead(branch, c_in, C, np.random.default_rng(seed))


def test_project_identity_and_constant():
    rng = np.random.default_rng(0)
    data = rng.standard_normal((3, 2, 3, 3))
    h = head("fast", 3, 3)
    h.W.data[...] = np.eye(3)
    h.b.data[...] = 0.0
    out = project(FeatureVolume("fast", data), h)
    assert out.space == "motion"
    assert np.array_equal(out.data.data, np.moveaxis(data, 0, -1))
    h.W.data[...] = 0.0
    h.b.data[...] = [1.0, -2.0, 0.5]
    const = project(FeatureVolume("fast", data), h).data.data
    assert np.array_equal(const, np.broadcast_to([1.0, -2.0, 0.5], (2, 3, 3, 3)))


def test_project_accepts_any_resolution():
    h = head("slow", 4, 5)
    for thw in [(2, 3, 3), (4, 5, 7)]:
        out = project(FeatureVolume("slow", np.ones((4,) + thw)), h)
        assert out.thw == thw and out.space == "visual"


def test_project_rejects_channel_and_branch_mismatch():
    with pytest.raises(InputError):
        project(FeatureVolume("slow", np.ones((3, 1, 2, 2))), head("slow", 4, 5))
    with pytest.raises(InputError):
        project(FeatureVolume("fast", np.ones((4, 1, 2, 2))), head("slow", 4, 5))


def test_project_permutation_equivariant():
    rng = np.random.default_rng(1)
    data = rng.standard_normal((4, 2, 3, 2))
    h = head("fast", 4, 3, 1)
    perm = rng.permutation(12)
    shuffled = data.reshape(4, -1)[:, perm].reshape(data.shape)
    a = project(FeatureVolume("fast", data), h).voxels().data
    b = project(FeatureVolume("fast", shuffled), h).voxels().data
    assert np.allclose(b, a[perm], atol=1e-14)


def test_nearest_time_indices():
    assert nearest_time_indices(2, 4).tolist() == [0, 0, 1, 1]
    assert nearest_time_indices(3, 3).tolist() == [0, 1, 2]
    assert nearest_time_indices(4, 2).tolist() == [1, 3]


def fuse_oracle(mot, vis, W, b):
    """Per-voxel loop: resample, concat, affine, sigmoid, mean, normalise."""
    T, H, Wd, _ = mot.shape
    idx = nearest_time_indices(vis.shape[0], T)
    acc = np.zeros(W.shape[1])
    for t in range(T):
        for i in range(H):
            for j in range(Wd):
                x = np.concatenate([mot[t, i, j], vis[idx[t], i, j]])
                acc += 1 / (1 + np.exp(-(x @ W + b)))
    acc /= T * H * Wd
    return acc / np.linalg.norm(acc)


def test_fuse_joint_zero_params():
    fusion = JointFusion(4)
    fusion.W.data[...] = 0.0
    fusion.b.data[...] = 0.0
    mot = ProjectedVolume("motion", Tensor(np.ones((2, 2, 2, 4))))
    vis = ProjectedVolume("visual", Tensor(np.ones((1, 2, 2, 4))))
    assert np.allclose(fuse_joint(mot, vis, fusion).data, np.full(4, 0.5), atol=1e-15)


def test_fuse_joint_matches_voxel_loop():
    rng = np.random.default_rng(2)
    for _ in range(10):
        C = int(rng.integers(1, 5))
        Tf, Ts, H, W = (int(v) for v in rng.integers(1, 4, 4))
        mot = rng.standard_normal((Tf, H, W, C))
        vis = rng.standard_normal((Ts, H, W, C))
        fusion = JointFusion(C, rng)
        got = fuse_joint(ProjectedVolume("motion", Tensor(mot)), ProjectedVolume("visual", Tensor(vis)), fusion)
        ref = fuse_oracle(mot, vis, fusion.W.data, fusion.b.data)
        assert np.allclose(got.data, ref, atol=1e-12)
        assert abs(np.linalg.norm(got.data) - 1) < 1e-6


def test_pool_examples():
    u = np.array([1.0, -2.0, 3.0])
    const = ProjectedVolume("motion", Tensor(np.broadcast_to(u, (2, 3, 4, 3))))
    assert np.allclose(pool(const).vector.data, u, atol=1e-15)
    a, b = np.array([1.0, 2.0]), np.array([3.0, -4.0])
    two = ProjectedVolume("visual", Tensor(np.stack([a, b]).reshape(2, 1, 1, 2)))
    assert np.array_equal(pool(two).vector.data, (a + b) / 2)


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_pool_matches_flat_loop_and_ignores_order(seed):
    rng = np.random.default_rng(seed)
    data = rng.standard_normal((2, 3, 2, 4))
    flat = data.reshape(-1, 4)
    ref = np.zeros(4)
    for row in flat:
        ref += row
    ref /= len(flat)
    got = pool(ProjectedVolume("motion", Tensor(data))).vector.data
    assert np.allclose(got, ref, atol=1e-12)
    perm = rng.permutation(len(flat)).tolist()
    shuffled = pool(ProjectedVolume("motion", Tensor(flat[perm].reshape(data.shape)))).vector.data
    assert np.allclose(shuffled, got, atol=1e-12)
