"""Subregion encoding and the segmentation metric battery (Dice, sensitivity,
specificity, 95th-percentile Hausdorff distance)."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
from scipy import ndimage

from .data.volume import check_label_values

REGIONS = ("ET", "TC", "WT")
METRIC_NAMES = ("dice", "sensitivity", "specificity", "hausdorff95")
UNDEFINED = math.nan


@dataclass
class SubregionMasks:
    et: np.ndarray
    tc: np.ndarray
    wt: np.ndarray

    def stack(self) -> np.ndarray:
        """(3, ...) float target in channel order ET, TC, WT."""
        return np.stack([self.et, self.tc, self.wt]).astype(np.float64)

    def __getitem__(self, region: str) -> np.ndarray:
        return getattr(self, region.lower())


def label_to_subregions(label) -> SubregionMasks:
    label = np.asarray(label)
    check_label_values(label)
    return SubregionMasks(label == 4, (label == 1) | (label == 4), label > 0)


def prediction_to_label(confidence, threshold: float = 0.5, nested: bool = False) -> np.ndarray:
    """Binarize ET/TC/WT confidences and encode them back into {0, 1, 2, 4}.

    With ``nested`` the masks are first clamped so ET is inside TC inside WT.
    """
    conf = np.asarray(confidence)
    if conf.shape[0] != 3:
        raise ValueError(f"expected 3 confidence channels, got {conf.shape[0]}")
    et, tc, wt = (conf[i] > threshold for i in range(3))
    if nested:
        tc = tc & wt
        et = et & tc
    label = np.zeros(conf.shape[1:], dtype=np.uint8)
    label[wt] = 2
    label[tc] = 1
    label[et] = 4
    return label


def _pair(t, p):
    t = np.asarray(t, dtype=bool)
    p = np.asarray(p, dtype=bool)
    if t.shape != p.shape:
        raise ValueError(f"mask shapes differ: {t.shape} vs {p.shape}")
    return t, p


def dice_score(truth, pred) -> float:
    t, p = _pair(truth, pred)
    denom = int(t.sum()) + int(p.sum())
    if denom == 0:
        return 1.0
    return 2.0 * int((t & p).sum()) / denom


def sensitivity(truth, pred) -> float:
    """True-positive rate; NaN when the truth mask is empty."""
    t, p = _pair(truth, pred)
    n = int(t.sum())
    return int((t & p).sum()) / n if n else UNDEFINED


def specificity(truth, pred) -> float:
    """True-negative rate; NaN when the truth mask covers everything."""
    t, p = _pair(truth, pred)
    n = int((~t).sum())
    return int((~t & ~p).sum()) / n if n else UNDEFINED


_SIX = ndimage.generate_binary_structure(3, 1)


def surface(mask) -> np.ndarray:
    """Mask voxels with a 6-neighbour outside the mask or beyond the volume edge."""
    m = np.asarray(mask, dtype=bool)
    return m & ~ndimage.binary_erosion(m, structure=_SIX, border_value=0)


def nearest_rank(values: np.ndarray, q: float = 0.95) -> float:
    v = np.sort(np.asarray(values, dtype=np.float64))
    k = max(int(math.ceil(q * v.size)), 1)
    return float(v[k - 1])


def empty_penalty(shape: Sequence[int]) -> float:
    return float(math.sqrt(sum(n * n for n in shape)))


def _directed(src_surface, dst_surface) -> np.ndarray:
    dist = ndimage.distance_transform_edt(~dst_surface)
    return dist[src_surface]


def hausdorff95(truth, pred) -> float:
    t, p = _pair(truth, pred)
    te, pe = not t.any(), not p.any()
    if te and pe:
        return 0.0
    if te or pe:
        return empty_penalty(t.shape)
    st, sp = surface(t), surface(p)
    return max(nearest_rank(_directed(st, sp)), nearest_rank(_directed(sp, st)))


@dataclass
class RegionMetrics:
    dice: float
    sensitivity: float
    specificity: float
    hausdorff95: float

    def as_tuple(self) -> tuple[float, float, float, float]:
        return (self.dice, self.sensitivity, self.specificity, self.hausdorff95)


MetricsRecord = dict  # region name -> RegionMetrics


def evaluate_masks(truth: SubregionMasks, pred: SubregionMasks) -> MetricsRecord:
    out = {}
    for r in REGIONS:
        t, p = truth[r], pred[r]
        out[r] = RegionMetrics(dice_score(t, p), sensitivity(t, p), specificity(t, p), hausdorff95(t, p))
    return out


def evaluate_case(pred_label, truth_label) -> MetricsRecord:
    pred_label, truth_label = np.asarray(pred_label), np.asarray(truth_label)
    if pred_label.shape != truth_label.shape:
        raise ValueError(f"prediction {pred_label.shape} and truth {truth_label.shape} differ")
    return evaluate_masks(label_to_subregions(truth_label), label_to_subregions(pred_label))


def write_metrics_csv(path, records: Iterable[tuple[str, MetricsRecord]]) -> Path:
    """Per-case rows, then one ``mean`` row per region (undefined values skipped)."""
    records = list(records)
    path = Path(path)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(("case_id", "region") + METRIC_NAMES)
        for case_id, rec in records:
            for r in REGIONS:
                w.writerow((case_id, r) + tuple(_fmt(v) for v in rec[r].as_tuple()))
        for r in REGIONS:
            cols = np.array([rec[r].as_tuple() for _, rec in records], dtype=np.float64).reshape(-1, 4)
            means = [_nanmean(cols[:, j]) for j in range(4)]
            w.writerow(("mean", r) + tuple(_fmt(v) for v in means))
    return path


def _nanmean(col) -> float:
    col = col[~np.isnan(col)]
    return float(col.mean()) if col.size else UNDEFINED


def _fmt(v: float) -> str:
    return "nan" if math.isnan(v) else repr(float(v))


def read_metrics_csv(path) -> list[dict]:
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))
