"""Hybrid modules and the downward/upward cells built from them."""

from __future__ import annotations

import copy
from typing import Sequence

import numpy as np

from ..autodiff import HYBRID, Parameter, ops
from .block import Block, ConvGN
from .candidates import build_op
from .catalog import CATALOG, DC, DHM, NHM, UC, UHM, edge_kind, edge_layout, source_names
from .genotype import CellGenotype, GenotypeError

_SCALE = {DHM: 0.5, UHM: 2.0, NHM: 1.0}


class HybridModule(Block):
    """Softmax-weighted mixture of every candidate of one family."""

    def __init__(self, hm_kind: str, channels: int, rng: np.random.Generator,
                 alphas: Parameter | None = None, init_alpha: float = 0.0):
        if hm_kind not in CATALOG:
            raise ValueError(f"unknown hybrid module kind {hm_kind!r}")
        self.hm_kind = hm_kind
        self.channels = channels
        names = CATALOG[hm_kind]
        if alphas is None:
            alphas = Parameter(np.full(len(names), float(init_alpha)), HYBRID)
        if alphas.shape != (len(names),) or alphas.kind != HYBRID:
            raise ValueError(f"{hm_kind} needs a hybrid alpha vector of length {len(names)}")
        self.alphas = alphas
        self.op_names = names
        self.ops = [build_op(n, channels, rng) for n in names]

    def weights(self) -> np.ndarray:
        a = self.alphas.data
        w = np.exp(a - a.max())
        return w / w.sum()

    def forward(self, x):
        if x.shape[0] != self.channels:
            raise ValueError(f"{self.hm_kind} expects {self.channels} channels, got {x.shape[0]}")
        w = ops.softmax(self.alphas)
        return ops.weighted_sum(w, [op(x) for op in self.ops])


def expected_spatial(hm_kind: str, spatial):
    return tuple(int(n * _SCALE[hm_kind]) for n in spatial)


class Cell(Block):
    """Three (or ``nodes``) nodes over two preprocessed inputs; output is their concatenation.

    In search mode every possible edge carries a hybrid module and a node
    sums all of its edges. In derived mode only the two edges named by the
    genotype exist, each with a single concrete op.
    """

    def __init__(self, kind: str, in0: int, in1: int, width: int, rng: np.random.Generator,
                 nodes: int = 3, search_mode: bool = True,
                 alphas: Sequence[Parameter] | None = None,
                 genotype: CellGenotype | None = None):
        if kind not in (DC, UC):
            raise ValueError(f"unknown cell kind {kind!r}")
        self.kind, self.width, self.n_nodes, self.search_mode = kind, width, nodes, search_mode
        self.pre0 = ConvGN(in0, width, 1, rng, stride=2 if kind == DC else 1)
        self.pre1 = ConvGN(in1, width, 1, rng, stride=1)
        self.edges: list[list[tuple[str, Block]]] = [[] for _ in range(nodes)]
        if search_mode:
            layout = edge_layout(kind, nodes)
            if alphas is not None and len(alphas) != len(layout):
                raise ValueError(f"{kind} cell needs {len(layout)} alpha vectors, got {len(alphas)}")
            for i, (node, src, family) in enumerate(layout):
                hm = HybridModule(family, width, rng, alphas[i] if alphas is not None else None)
                self.edges[node - 1].append((src, hm))
        else:
            if genotype is None:
                raise GenotypeError("derived-mode cell needs a genotype")
            if genotype.kind != kind:
                raise GenotypeError(f"genotype is for a {genotype.kind} cell, not {kind}")
            if len(genotype.nodes) != nodes:
                raise GenotypeError(f"genotype has {len(genotype.nodes)} nodes, cell has {nodes}")
            for k, node in enumerate(genotype.nodes, start=1):
                for src, op in node:
                    family = edge_kind(kind, src)
                    if op not in CATALOG[family]:
                        raise GenotypeError(f"op {op!r} is not a {family} candidate")
                    self.edges[k - 1].append((src, build_op(op, width, rng)))

    @property
    def out_channels(self) -> int:
        return self.n_nodes * self.width

    def hybrid_modules(self) -> list[HybridModule]:
        return [m for node in self.edges for _, m in node if isinstance(m, HybridModule)]

    def to_derived(self, genotype: CellGenotype) -> "Cell":
        """A derived-mode cell that reuses this search cell's preprocessing and chosen ops."""
        if not self.search_mode:
            raise ValueError("only a search-mode cell can be derived")
        if genotype.kind != self.kind or len(genotype.nodes) != self.n_nodes:
            raise GenotypeError(f"genotype does not fit a {self.n_nodes}-node {self.kind} cell")
        derived = copy.copy(self)
        derived.search_mode = False
        derived.edges = []
        for node, chosen in zip(self.edges, genotype.nodes):
            modules = dict(node)
            derived.edges.append([
                (src, modules[src].ops[modules[src].op_names.index(op)]) for src, op in chosen
            ])
        return derived

    def forward(self, x0, x1):
        s0, s1 = self.pre0(x0), self.pre1(x1)
        if self.kind == DC and s0.shape[1:] != s1.shape[1:]:
            raise ValueError(f"DC inputs must differ by a factor 2: {x0.shape[1:]} vs {x1.shape[1:]}")
        if self.kind == UC and s0.shape[1:] != tuple(2 * n for n in s1.shape[1:]):
            raise ValueError(f"UC skip input must be twice the deep input: {x0.shape[1:]} vs {x1.shape[1:]}")
        states = {"X0": s0, "X1": s1}
        outs = []
        for k, node in enumerate(self.edges, start=1):
            terms = [op(states[src]) for src, op in node]
            h = terms[0] if len(terms) == 1 else ops.add_n(terms)
            states[f"node{k}"] = h
            outs.append(h)
        return ops.concat(outs)


__all__ = ["HybridModule", "Cell", "source_names", "expected_spatial"]
