"""Patch-wise prediction over a whole volume."""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from .autodiff import Tensor
from .data.normalize import NormStats, detect_brain_cube, normalize
from .data.volume import VolumeCase
from .metrics import prediction_to_label
from .network import Backbone
from .patching import extract_patch, plan_patches, stitch


def predict_confidence(forward: Callable[[np.ndarray], np.ndarray], image: np.ndarray,
                       patch_shape: Sequence[int]) -> np.ndarray:
    """Run ``forward`` on every auto-fitted patch and average the overlaps."""
    dims = image.shape[1:]
    grid = plan_patches(detect_brain_cube(image), patch_shape, dims)
    outputs = [(idx, forward(extract_patch(image, grid, idx))) for idx in grid.indices()]
    return stitch(outputs, grid, dims)


def network_forward(net: Backbone) -> Callable[[np.ndarray], np.ndarray]:
    def forward(patch):
        # no tape is active here, so nothing is recorded
        return net(Tensor(patch)).data

    return forward


def predict_case(net: Backbone, case: VolumeCase, stats: NormStats, patch: int,
                 xi: float = 100.0, lam: float = 0.1, threshold: float = 0.5,
                 nested: bool = False) -> tuple[np.ndarray, np.ndarray]:
    """Normalize, predict confidences patch by patch, and encode labels."""
    if case.modalities != net.cfg.modalities:
        raise ValueError(f"case {case.case_id} has {case.modalities} modalities, network expects {net.cfg.modalities}")
    norm = normalize(case, stats, xi, lam)
    conf = predict_confidence(network_forward(net), norm.image, (patch,) * 3)
    return prediction_to_label(conf, threshold, nested), conf
