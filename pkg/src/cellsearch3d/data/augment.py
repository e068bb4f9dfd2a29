"""On-the-fly spatial augmentation applied identically to image and label."""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np
from scipy import ndimage

from .volume import VolumeCase


@dataclass
class AugmentConfig:
    flip: bool = False
    rotate: bool = False
    distort: bool = False
    distort_alpha: float = 2.0   # displacement magnitude in voxels
    distort_sigma: float = 4.0   # smoothing of the displacement field

    def to_dict(self) -> dict:
        return asdict(self)

    @property
    def enabled(self) -> bool:
        return self.flip or self.rotate or self.distort


@dataclass
class AugmentPlan:
    flips: tuple[bool, bool, bool]
    quarter_turns: int
    displacement: np.ndarray | None  # (3, *dims) after rotation, or None


def sample_plan(dims, seed: int, cfg: AugmentConfig) -> AugmentPlan:
    rng = np.random.default_rng(seed)
    flips = tuple(bool(f) for f in rng.random(3) < 0.5) if cfg.flip else (False, False, False)
    turns = int(rng.integers(4)) if cfg.rotate else 0
    disp = None
    if cfg.distort:
        rdims = (dims[1], dims[0], dims[2]) if turns % 2 else tuple(dims)
        disp = np.stack([
            ndimage.gaussian_filter(rng.uniform(-1, 1, rdims), cfg.distort_sigma, mode="constant")
            for _ in range(3)
        ])
        peak = np.abs(disp).max()
        if peak > 0:
            disp *= cfg.distort_alpha / peak
    return AugmentPlan(flips, turns, disp)


def apply_plan(vol: np.ndarray, plan: AugmentPlan, order: int) -> np.ndarray:
    """Transform a 3D array, or a channel-first stack of them."""
    if vol.ndim == 4:
        return np.stack([apply_plan(v, plan, order) for v in vol])
    out = vol
    for axis, f in enumerate(plan.flips):
        if f:
            out = np.flip(out, axis=axis)
    if plan.quarter_turns:
        out = np.rot90(out, plan.quarter_turns, axes=(0, 1))
    if plan.displacement is not None:
        grid = np.meshgrid(*(np.arange(n, dtype=np.float64) for n in out.shape), indexing="ij")
        coords = [g + d for g, d in zip(grid, plan.displacement)]
        out = ndimage.map_coordinates(out.astype(np.float64), coords, order=order, mode="constant", cval=0.0)
    return np.ascontiguousarray(out)


def augment(case: VolumeCase, seed: int, cfg: AugmentConfig) -> VolumeCase:
    if case.label is None:
        raise ValueError("augmentation needs a labelled case")
    if not cfg.enabled:
        return case
    plan = sample_plan(case.dims, seed, cfg)
    image = apply_plan(case.image, plan, order=1)
    label = apply_plan(case.label, plan, order=0).astype(np.uint8)
    return VolumeCase(image, label, list(case.modality_names), case.case_id)
