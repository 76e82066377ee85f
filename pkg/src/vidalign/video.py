"""Video side: 1x1x1 projection heads, joint fusion and mean pooling.

Volumes arrive channel-first ``[C, T, H, W]`` and are kept channel-last
``[T, H, W, C]`` once projected, so that every 1x1x1 convolution is a plain
affine map over the trailing axis.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .encoders import uniform_init
from .errors import InputError
from .tensor import Tensor, affine, concat, l2_normalize, mean, reshape, sigmoid, take

BRANCH_SPACE = {"fast": "motion", "slow": "visual"}


@dataclass
class FeatureVolume:
    branch: str
    data: np.ndarray
    video_id: str | None = None

    def __post_init__(self):
        if self.branch not in BRANCH_SPACE:
            raise InputError(f"branch must be 'slow' or 'fast', got {self.branch!r}")
        self.data = np.asarray(self.data, dtype=np.float64)
        if self.data.ndim != 4 or min(self.data.shape) < 1:
            raise InputError(f"feature volume must be [C, T, H, W], got shape {self.data.shape}")

    @property
    def channels(self) -> int:
        return self.data.shape[0]

    @property
    def thw(self) -> tuple[int, int, int]:
        return self.data.shape[1:]

    def channel_last(self) -> np.ndarray:
        return np.ascontiguousarray(np.moveaxis(self.data, 0, -1))


@dataclass
class ProjectedVolume:
    space: str
    data: Tensor  # [T, H, W, C]

    @property
    def thw(self) -> tuple[int, int, int]:
        return self.data.shape[:3]

    @property
    def channels(self) -> int:
        return self.data.shape[3]

    def voxels(self) -> Tensor:
        """Flattened ``[T*H*W, C]`` view in row-major (t, h, w) order."""
        return reshape(self.data, (-1, self.channels))


@dataclass
class PooledEmbedding:
    space: str
    vector: Tensor


class ProjectionHead:
    def __init__(self, branch: str, c_in: int, C: int, rng=None):
        rng = rng if rng is not None else np.random.default_rng(0)
        self.branch = branch
        self.space = BRANCH_SPACE[branch]
        self.c_in, self.C = c_in, C
        self.W = uniform_init(rng, (c_in, C), c_in, f"head.{branch}.W")
        self.b = uniform_init(rng, (C,), c_in, f"head.{branch}.b")

    def parameters(self) -> dict[str, Tensor]:
        return {self.W.name: self.W, self.b.name: self.b}


class JointFusion:
    def __init__(self, C: int, rng=None):
        rng = rng if rng is not None else np.random.default_rng(0)
        self.C = C
        self.W = uniform_init(rng, (2 * C, C), 2 * C, "fusion.W")
        self.b = uniform_init(rng, (C,), 2 * C, "fusion.b")

    def parameters(self) -> dict[str, Tensor]:
        return {"fusion.W": self.W, "fusion.b": self.b}


def project(fv: FeatureVolume, head: ProjectionHead) -> ProjectedVolume:
    if fv.branch != head.branch:
        raise InputError(f"{fv.branch} volume passed to the {head.branch} head")
    if fv.channels != head.c_in:
        raise InputError(f"{fv.branch} volume has {fv.channels} channels, head expects {head.c_in}")
    # rowwise: voxel order must not change any voxel's bits
    return ProjectedVolume(head.space, affine(fv.channel_last(), head.W, head.b, rowwise=True))


def nearest_time_indices(src_len: int, dst_len: int) -> np.ndarray:
    """Nearest source frame for each of ``dst_len`` frames, centre-aligned."""
    idx = np.floor((np.arange(dst_len) + 0.5) * src_len / dst_len).astype(np.int64)
    return np.minimum(idx, src_len - 1)


def resample_time(v: ProjectedVolume, frames: int) -> ProjectedVolume:
    if v.thw[0] == frames:
        return v
    return ProjectedVolume(v.space, take(v.data, nearest_time_indices(v.thw[0], frames), axis=0))


def fuse_joint(v_mot: ProjectedVolume, v_vis: ProjectedVolume, fusion: JointFusion) -> Tensor:
    """Joint video embedding ``[C]``.

    The visual volume is resampled to the motion frame count, the two are
    concatenated per voxel, mapped through ``sigmoid(. W + b)``, averaged over
    all voxels and L2-normalised.
    """
    v_vis = resample_time(v_vis, v_mot.thw[0])
    if v_vis.thw != v_mot.thw:
        raise RuntimeError(f"cannot fuse volumes of shape {v_mot.thw} and {v_vis.thw}")
    both = concat([v_mot.data, v_vis.data], axis=-1)
    per_voxel = sigmoid(affine(both, fusion.W, fusion.b))
    return l2_normalize(mean(per_voxel, axis=(0, 1, 2)), axis=-1)


def pool(v: ProjectedVolume) -> PooledEmbedding:
    """Mean voxel vector over the volume's own T*H*W positions (not re-normalised)."""
    return PooledEmbedding(v.space, mean(v.data, axis=(0, 1, 2)))
