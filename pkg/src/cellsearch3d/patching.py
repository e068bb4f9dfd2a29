"""Auto-fitting patch placement, extraction and overlap-averaged stitching.

On every axis the brain cube is covered by the fewest patches of the given
length, spaced evenly and centered so the overhang on both sides differs by
at most one voxel.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .data.normalize import BrainCube
from .data.volume import VolumeCase


@dataclass(frozen=True)
class AxisPlan:
    patch: int   # l_p
    count: int   # n_p
    first: int   # start of the first patch, volume coordinates (may be negative)
    step: int

    @property
    def overlap(self) -> int:
        return self.patch - self.step if self.count > 1 else 0

    def starts(self) -> list[int]:
        return [self.first + i * self.step for i in range(self.count)]


def plan_axis(cube_start: int, cube_len: int, patch: int) -> AxisPlan:
    if patch < 1 or cube_len < 1:
        raise ValueError("patch and brain-cube lengths must be >= 1")
    if cube_len <= patch:
        return AxisPlan(patch, 1, cube_start - (patch - cube_len) // 2, patch)
    n = -(-cube_len // patch)
    overlap = (n * patch - cube_len) // (n - 1)
    spare = n * patch - overlap * (n - 1) - cube_len
    return AxisPlan(patch, n, cube_start - spare // 2, patch - overlap)


@dataclass(frozen=True)
class PatchGrid:
    axes: tuple[AxisPlan, AxisPlan, AxisPlan]
    cube: BrainCube
    volume: tuple[int, int, int]

    @property
    def patch_shape(self) -> tuple[int, int, int]:
        return tuple(a.patch for a in self.axes)

    @property
    def counts(self) -> tuple[int, int, int]:
        return tuple(a.count for a in self.axes)

    def __len__(self) -> int:
        return int(np.prod(self.counts))

    def indices(self) -> Iterable[tuple[int, int, int]]:
        return itertools.product(*(range(a.count) for a in self.axes))

    def origin(self, index: Sequence[int]) -> tuple[int, int, int]:
        if len(index) != 3 or any(not 0 <= i < a.count for i, a in zip(index, self.axes)):
            raise IndexError(f"patch index {tuple(index)} outside grid {self.counts}")
        return tuple(a.first + i * a.step for i, a in zip(index, self.axes))


def plan_patches(cube: BrainCube, patch_shape: Sequence[int], volume_extents: Sequence[int]) -> PatchGrid:
    axes = tuple(plan_axis(s, n, p) for s, n, p in zip(cube.start, cube.length, patch_shape))
    return PatchGrid(axes, cube, tuple(int(v) for v in volume_extents))


def _overlap(origin, shape, volume):
    """Source (volume) and destination (patch) slices of the in-bounds part."""
    src, dst = [], []
    for o, p, v in zip(origin, shape, volume):
        lo, hi = max(o, 0), min(o + p, v)
        if hi <= lo:
            return None
        src.append(slice(lo, hi))
        dst.append(slice(lo - o, hi - o))
    return tuple(src), tuple(dst)


def extract_patch(source, grid: PatchGrid, index: Sequence[int]) -> np.ndarray:
    """Channel-first patch; voxels outside the volume read as zero.

    ``source`` may be a VolumeCase (its image is used), a channel-first array,
    or a plain 3D array (returned without a channel axis).
    """
    vol = source.image if isinstance(source, VolumeCase) else np.asarray(source)
    squeeze = vol.ndim == 3
    if squeeze:
        vol = vol[None]
    origin = grid.origin(index)
    shape = grid.patch_shape
    out = np.zeros((vol.shape[0],) + shape, dtype=vol.dtype)
    ov = _overlap(origin, shape, vol.shape[1:])
    if ov is not None:
        src, dst = ov
        out[(slice(None),) + dst] = vol[(slice(None),) + src]
    return out[0] if squeeze else out


def extract_all(source, grid: PatchGrid) -> list[tuple[tuple[int, int, int], np.ndarray]]:
    return [(idx, extract_patch(source, grid, idx)) for idx in grid.indices()]


def stitch(patches, grid: PatchGrid, volume_extents: Sequence[int] | None = None) -> np.ndarray:
    """Average overlapping patch values voxel by voxel; uncovered voxels are 0."""
    volume = tuple(volume_extents) if volume_extents is not None else grid.volume
    seen = set()
    total = count = None
    for index, patch in patches:
        index = tuple(int(i) for i in index)
        if index in seen:
            raise ValueError(f"duplicate patch index {index}")
        seen.add(index)
        patch = np.asarray(patch, dtype=np.float64)
        if patch.ndim == 3:
            patch = patch[None]
        if patch.shape[1:] != grid.patch_shape:
            raise ValueError(f"patch shape {patch.shape[1:]} differs from grid {grid.patch_shape}")
        if total is None:
            total = np.zeros((patch.shape[0],) + volume)
            count = np.zeros(volume)
        ov = _overlap(grid.origin(index), grid.patch_shape, volume)
        if ov is None:
            continue
        src, dst = ov
        total[(slice(None),) + src] += patch[(slice(None),) + dst]
        count[src] += 1
    missing = set(grid.indices()) - seen
    if missing:
        raise ValueError(f"missing patches for indices {sorted(missing)}")
    covered = count > 0
    total[:, covered] /= count[covered]
    return total


def coverage_count(grid: PatchGrid) -> np.ndarray:
    count = np.zeros(grid.volume, dtype=np.int64)
    for idx in grid.indices():
        ov = _overlap(grid.origin(idx), grid.patch_shape, grid.volume)
        if ov is not None:
            count[ov[0]] += 1
    return count
