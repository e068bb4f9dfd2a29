"""Synthetic multimodal phantoms with nested tumor subregions.

A phantom is an ellipsoidal "brain" of positive intensity on a zero
background, with three nested ellipsoids inside it:
enhancing (label 4) inside core (label 1 + 4) inside whole tumor (1 + 2 + 4).
Each modality brightens the subregions by a different offset pattern, so
the label of a voxel can be read off its intensities across modalities.
"""

from __future__ import annotations

from typing import Sequence

import numpy as np

from .volume import VolumeCase

BRAIN_FRAC = (0.36, 0.44)    # brain semi-axis / extent
WT_FRAC = (0.50, 0.60)       # whole tumor / brain
TC_FRAC = (0.65, 0.75)       # core / whole tumor
ET_FRAC = (0.55, 0.65)       # enhancing / core
MIN_ET_SEMI_AXIS = 1.5       # voxels
OFFSETS = (0.5, 1.0, 1.5)    # edema, core, enhancing brightening before rotation
NOISE_STD = 0.05
MODALITY_NAMES = ("t1", "t1gd", "t2", "flair")


def min_phantom_extent() -> int:
    smallest = BRAIN_FRAC[0] * WT_FRAC[0] * TC_FRAC[0] * ET_FRAC[0]
    return int(np.ceil(MIN_ET_SEMI_AXIS / smallest))


def _ellipsoid(grid, center, semi):
    return sum(((g - c) / s) ** 2 for g, c, s in zip(grid, center, semi)) <= 1.0


def synth_phantom(seed: int, dims: Sequence[int] = (48, 48, 48), m: int = 4,
                  case_id: str | None = None) -> VolumeCase:
    dims = tuple(int(d) for d in dims)
    if len(dims) != 3:
        raise ValueError("dims must have three extents")
    if min(dims) < min_phantom_extent():
        raise ValueError(
            f"dims {dims} too small to nest three subregions; need every extent >= {min_phantom_extent()}"
        )
    if m < 1:
        raise ValueError("need at least one modality")
    rng = np.random.default_rng(seed)
    grid = np.meshgrid(*(np.arange(d, dtype=np.float64) for d in dims), indexing="ij")
    mid = np.array([(d - 1) / 2 for d in dims])
    d = np.array(dims, dtype=np.float64)

    brain_c = mid + rng.uniform(-0.03, 0.03, 3) * d
    brain_r = rng.uniform(*BRAIN_FRAC, 3) * d
    wt_r = brain_r * rng.uniform(*WT_FRAC, 3)
    tc_r = wt_r * rng.uniform(*TC_FRAC, 3)
    et_r = tc_r * rng.uniform(*ET_FRAC, 3)
    # keep the tumor center where the whole tumor still fits in the brain
    slack = np.maximum(brain_r - wt_r - 1.0, 0.0)
    wt_c = brain_c + rng.uniform(-0.3, 0.3, 3) * slack
    tc_c = wt_c + rng.uniform(-0.3, 0.3, 3) * (wt_r - tc_r)
    et_c = tc_c + rng.uniform(-0.3, 0.3, 3) * (tc_r - et_r)

    brain = _ellipsoid(grid, brain_c, brain_r)
    wt = _ellipsoid(grid, wt_c, wt_r) & brain
    tc = _ellipsoid(grid, tc_c, tc_r) & wt
    et = _ellipsoid(grid, et_c, et_r) & tc

    label = np.zeros(dims, dtype=np.uint8)
    label[wt] = 2
    label[tc] = 1
    label[et] = 4
    regions = (wt & ~tc, tc & ~et, et)

    image = np.zeros((m,) + dims)
    for c in range(m):
        vol = 1.0 + NOISE_STD * rng.standard_normal(dims)
        offsets = np.roll(OFFSETS, c)
        for region, off in zip(regions, offsets):
            vol[region] += off
        vol = np.maximum(vol, 0.05)
        image[c][brain] = vol[brain]
    # stored as f32 on disk; round now so a write/read round trip is exact
    image = image.astype(np.float32).astype(np.float64)
    names = [MODALITY_NAMES[c] if c < len(MODALITY_NAMES) else f"mod{c}" for c in range(m)]
    return VolumeCase(image, label, names, case_id or f"phantom{seed:04d}")
