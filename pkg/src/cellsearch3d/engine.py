"""Alternating architecture search, retraining, and data splitting."""

from __future__ import annotations

import logging
from collections import Counter
from dataclasses import asdict, dataclass, field
from typing import Callable, Sequence

import numpy as np

from .autodiff import HYBRID, KERNEL, Tape, Tensor, ops
from .data.augment import AugmentConfig, augment
from .data.normalize import detect_brain_cube
from .data.volume import VolumeCase
from .metrics import label_to_subregions
from .network import Backbone, BackboneConfig, CellGenotype, canonical_json, genotype_hash
from .optim import Adam
from .patching import PatchGrid, extract_patch, plan_patches

log = logging.getLogger(__name__)


class NumericError(FloatingPointError):
    """A loss became NaN or infinite."""


@dataclass
class SearchConfig:
    epochs: int = 60              # N_E
    count_threshold: int = 20     # N_C
    hybrid_fraction: float = 0.2
    hybrid_lr: float = 3e-3
    kernel_lr: float = 1e-3
    betas: tuple[float, float] = (0.9, 0.999)
    adam_eps: float = 1e-8
    patch: int = 32
    dice_eps: float = 1e-6
    seed: int = 0

    def __post_init__(self):
        if not 0 < self.hybrid_fraction < 1:
            raise ValueError("hybrid_fraction must lie in (0, 1)")
        if self.count_threshold < 1 or self.epochs < 1:
            raise ValueError("epochs and count_threshold must be >= 1")
        self.betas = tuple(self.betas)


@dataclass
class TrainConfig:
    epochs: int = 100
    lr: float = 3e-3
    betas: tuple[float, float] = (0.9, 0.999)
    adam_eps: float = 1e-8
    patch: int = 64
    dice_eps: float = 1e-6
    seed: int = 0
    augment: AugmentConfig = field(default_factory=AugmentConfig)


# --- data splits ----------------------------------------------------------------

def split_search_data(cases: Sequence, hybrid_fraction: float = 0.2, seed: int = 0):
    """Disjoint (hybrid_set, kernel_set); at least one case lands in each."""
    n = len(cases)
    if n < 2:
        raise ValueError("architecture search needs at least 2 cases")
    n_h = int(np.floor(hybrid_fraction * n + 0.5))
    n_h = min(max(n_h, 1), n - 1)
    order = np.random.default_rng(seed).permutation(n)
    hyb = sorted(order[:n_h].tolist())
    ker = sorted(order[n_h:].tolist())
    return [cases[i] for i in hyb], [cases[i] for i in ker]


def kfold_split(n_cases: int, k: int = 5, seed: int = 0) -> list[tuple[list[int], list[int]]]:
    if n_cases < k:
        raise ValueError(f"cannot split {n_cases} cases into {k} folds")
    order = np.random.default_rng(seed).permutation(n_cases)
    folds = np.array_split(order, k)
    out = []
    for i, val in enumerate(folds):
        train = np.concatenate([f for j, f in enumerate(folds) if j != i])
        out.append((sorted(train.tolist()), sorted(val.tolist())))
    return out


# --- patch sampling ----------------------------------------------------------------

@dataclass
class PatchSource:
    """A normalized labelled case with its patch grid and stacked ET/TC/WT targets."""

    case: VolumeCase
    grid: PatchGrid
    target: np.ndarray

    @classmethod
    def from_case(cls, case: VolumeCase, patch: int) -> "PatchSource":
        if case.label is None:
            raise ValueError(f"case {case.case_id} has no label")
        grid = plan_patches(detect_brain_cube(case), (patch,) * 3, case.dims)
        return cls(case, grid, label_to_subregions(case.label).stack())

    def sample(self, rng: np.random.Generator):
        indices = list(self.grid.indices())
        idx = indices[int(rng.integers(len(indices)))]
        return extract_patch(self.case.image, self.grid, idx), extract_patch(self.target, self.grid, idx)


def _step(net: Backbone, image, target, eps: float, optimizer) -> float:
    net.zero_grad()
    with Tape() as tape:
        loss = ops.dice_loss(net(Tensor(image)), target, eps)
    value = float(loss.data)
    if not np.isfinite(value):
        raise NumericError(f"loss became {value}")
    tape.backward(loss)
    optimizer.step()
    return value


# --- search -----------------------------------------------------------------------

@dataclass
class SearchResult:
    genotype: tuple[CellGenotype, CellGenotype]
    history: list[dict]
    counter: Counter
    network: Backbone
    stopped_early: bool


def search(cases: Sequence[VolumeCase], scfg: SearchConfig, bcfg: BackboneConfig,
           monitor: Callable[[int, str, Backbone], None] | None = None,
           network: Backbone | None = None) -> SearchResult:
    """Alternate hybrid and kernel updates, counting the derived cell pair each epoch.

    Stops as soon as one genotype pair has been derived ``count_threshold``
    times; otherwise returns the most frequent one after ``epochs`` epochs
    (earliest first seen wins a tie). ``monitor(epoch, phase, net)`` is called
    around the update phases with phase in {"hybrid_start", "hybrid_end", "kernel_end"}.
    """
    ss = np.random.SeedSequence(scfg.seed)
    split_seed, init_seed, patch_seed = (int(s.generate_state(1)[0]) for s in ss.spawn(3))
    hybrid_set, kernel_set = split_search_data(list(cases), scfg.hybrid_fraction, split_seed)
    hybrid_src = [PatchSource.from_case(c, scfg.patch) for c in hybrid_set]
    kernel_src = [PatchSource.from_case(c, scfg.patch) for c in kernel_set]
    net = network or Backbone(bcfg, search_mode=True, seed=init_seed)
    rng = np.random.default_rng(patch_seed)
    hybrid_opt = Adam(net.parameters(HYBRID), scfg.hybrid_lr, scfg.betas, scfg.adam_eps)
    kernel_opt = Adam(net.parameters(KERNEL), scfg.kernel_lr, scfg.betas, scfg.adam_eps)

    counter: Counter = Counter()
    genotypes: dict[str, tuple[CellGenotype, CellGenotype]] = {}
    history: list[dict] = []
    best = None
    for epoch in range(1, scfg.epochs + 1):
        geno = net.derive_genotype()
        key = canonical_json(*geno)
        genotypes.setdefault(key, geno)
        counter[key] += 1
        entry = {"epoch": epoch, "hybrid_loss": None, "kernel_loss": None,
                 "genotype_hash": genotype_hash(*geno)}
        history.append(entry)
        if counter[key] >= scfg.count_threshold:
            best = geno
            log.info("epoch %d: genotype %s reached %d counts", epoch, entry["genotype_hash"], counter[key])
            break
        if monitor:
            monitor(epoch, "hybrid_start", net)
        entry["hybrid_loss"] = float(np.mean([
            _step(net, *src.sample(rng), scfg.dice_eps, hybrid_opt) for src in hybrid_src
        ]))
        if monitor:
            monitor(epoch, "hybrid_end", net)
        entry["kernel_loss"] = float(np.mean([
            _step(net, *src.sample(rng), scfg.dice_eps, kernel_opt) for src in kernel_src
        ]))
        if monitor:
            monitor(epoch, "kernel_end", net)
        log.info("epoch %d: hybrid %.4f kernel %.4f genotype %s", epoch, entry["hybrid_loss"],
                 entry["kernel_loss"], entry["genotype_hash"])
    stopped = best is not None
    if best is None:
        best = genotypes[most_common(counter)]
    return SearchResult(best, history, counter, net, stopped)


def most_common(counter: Counter) -> str:
    """Highest count; among equals, the key inserted first."""
    top = max(counter.values())
    return next(k for k, v in counter.items() if v == top)


# --- retraining -------------------------------------------------------------------

@dataclass
class TrainResult:
    network: Backbone
    history: list[dict]


def train(cases: Sequence[VolumeCase], genotypes: tuple[CellGenotype, CellGenotype],
          tcfg: TrainConfig, bcfg: BackboneConfig, network: Backbone | None = None,
          on_epoch: Callable[[dict], None] | None = None) -> TrainResult:
    """Retrain a derived network, one random patch per case per epoch (batch size 1)."""
    ss = np.random.SeedSequence(tcfg.seed)
    init_seed, patch_seed = (int(s.generate_state(1)[0]) for s in ss.spawn(2))
    net = network or Backbone(bcfg, search_mode=False, genotypes=genotypes, seed=init_seed)
    opt = Adam(net.parameters(), tcfg.lr, tcfg.betas, tcfg.adam_eps)
    rng = np.random.default_rng(patch_seed)
    sources = [PatchSource.from_case(c, tcfg.patch) for c in cases]
    history = []
    for epoch in range(1, tcfg.epochs + 1):
        losses = []
        for i in rng.permutation(len(sources)):
            src = sources[i]
            if tcfg.augment.enabled:
                src = PatchSource.from_case(augment(src.case, int(rng.integers(2**31)), tcfg.augment), tcfg.patch)
            losses.append(_step(net, *src.sample(rng), tcfg.dice_eps, opt))
        entry = {"epoch": epoch, "loss": float(np.mean(losses))}
        history.append(entry)
        if on_epoch:
            on_epoch(entry)
        log.debug("train epoch %d loss %.4f", epoch, entry["loss"])
    return TrainResult(net, history)


def config_dict(cfg) -> dict:
    return asdict(cfg)
