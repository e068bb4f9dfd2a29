"""Brain-wise normalization and brain-cube detection.

Only nonzero voxels count as brain. Each modality is z-scored with
statistics pooled over a training set and then min-max scaled into
``[xi*lam, xi*(1+lam)]`` so brain stays separated from the zero background.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass
from typing import Sequence

import numpy as np

from .volume import VolumeCase


@dataclass
class NormStats:
    mean: list[float]
    std: list[float]
    zmin: list[float]
    zmax: list[float]

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "NormStats":
        return cls(**{k: [float(v) for v in d[k]] for k in ("mean", "std", "zmin", "zmax")})


@dataclass(frozen=True)
class BrainCube:
    start: tuple[int, int, int]
    length: tuple[int, int, int]

    @property
    def stop(self) -> tuple[int, int, int]:
        return tuple(s + n for s, n in zip(self.start, self.length))


def compute_norm_stats(cases: Sequence[VolumeCase]) -> NormStats:
    if not cases:
        raise ValueError("need at least one case to compute normalization statistics")
    m = cases[0].modalities
    mean, std, zmin, zmax = [], [], [], []
    for c in range(m):
        vals = np.concatenate([case.image[c][case.image[c] != 0.0] for case in cases])
        if vals.size == 0:
            raise ValueError(f"modality {c} has no nonzero voxels in the pool")
        mu, sigma = float(vals.mean()), float(vals.std())
        if not sigma > 0:
            raise ValueError(f"modality {c} has zero variance over brain voxels")
        z = (vals - mu) / sigma
        lo, hi = float(z.min()), float(z.max())
        mean.append(mu)
        std.append(sigma)
        zmin.append(lo)
        zmax.append(hi)
    return NormStats(mean, std, zmin, zmax)


def normalize(case: VolumeCase, stats: NormStats, xi: float = 100.0, lam: float = 0.1) -> VolumeCase:
    if case.modalities != len(stats.mean):
        raise ValueError(f"case has {case.modalities} modalities, stats cover {len(stats.mean)}")
    out = np.zeros_like(case.image)
    for c in range(case.modalities):
        a = case.image[c]
        brain = a != 0.0
        z = (a[brain] - stats.mean[c]) / stats.std[c]
        # unseen extremes are clamped into the training range
        z = np.clip(z, stats.zmin[c], stats.zmax[c])
        ratio = (z - stats.zmin[c]) / (stats.zmax[c] - stats.zmin[c])
        out[c][brain] = xi * ratio + xi * lam
    return VolumeCase(out, case.label, list(case.modality_names), case.case_id)


def detect_brain_cube(case_or_image) -> BrainCube:
    image = case_or_image.image if isinstance(case_or_image, VolumeCase) else np.asarray(case_or_image)
    mask = np.any(image != 0.0, axis=0)
    if not mask.any():
        raise ValueError("image has no nonzero voxel; brain cube undefined")
    start, length = [], []
    for axis in range(3):
        other = tuple(a for a in range(3) if a != axis)
        idx = np.flatnonzero(mask.any(axis=other))
        start.append(int(idx[0]))
        length.append(int(idx[-1] - idx[0] + 1))
    return BrainCube(tuple(start), tuple(length))
