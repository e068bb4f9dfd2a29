"""Discrete cell structures: derivation from architecture weights, validation and JSON I/O."""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .catalog import CATALOG, CELL_KINDS, DC, UC, edge_kind, edge_layout, source_names, source_rank

GENOTYPE_VERSION = 1


class GenotypeError(ValueError):
    pass


@dataclass(frozen=True)
class CellGenotype:
    kind: str
    nodes: tuple[tuple[tuple[str, str], ...], ...]  # per node: ((source, op), (source, op))

    def __post_init__(self):
        nodes = tuple(
            tuple(sorted((tuple(e) for e in node), key=lambda e: source_rank(e[0])))
            for node in self.nodes
        )
        object.__setattr__(self, "nodes", nodes)
        self.validate()

    def validate(self) -> None:
        if self.kind not in CELL_KINDS:
            raise GenotypeError(f"unknown cell kind {self.kind!r}")
        if not self.nodes:
            raise GenotypeError("genotype has no nodes")
        for k, node in enumerate(self.nodes, start=1):
            if len(node) != 2:
                raise GenotypeError(f"node {k} must keep exactly two edges, has {len(node)}")
            allowed = source_names(k)
            sources = [src for src, _ in node]
            if len(set(sources)) != 2:
                raise GenotypeError(f"node {k} repeats a source: {sources}")
            for src, op in node:
                if src not in allowed:
                    raise GenotypeError(f"node {k} cannot read from {src!r}")
                family = edge_kind(self.kind, src)
                if op not in CATALOG[family]:
                    raise GenotypeError(
                        f"{self.kind} node {k}: op {op!r} on edge from {src} is not a {family} candidate"
                    )

    def to_list(self) -> list:
        return [[[src, op] for src, op in node] for node in self.nodes]

    @classmethod
    def from_list(cls, kind: str, nodes) -> "CellGenotype":
        try:
            return cls(kind, tuple(tuple((str(s), str(o)) for s, o in node) for node in nodes))
        except (TypeError, ValueError) as exc:
            if isinstance(exc, GenotypeError):
                raise
            raise GenotypeError(f"malformed {kind} genotype: {exc}") from None


def derive_cell_genotype(kind: str, alphas: Sequence[np.ndarray], nodes: int) -> CellGenotype:
    """Keep the strongest op on every edge, then the two strongest edges per node.

    Strength is the softmax weight. Ties go to the earlier catalog op, then
    to the earlier source (X0 < X1 < node1 < ...).
    """
    layout = edge_layout(kind, nodes)
    if len(alphas) != len(layout):
        raise GenotypeError(f"{kind} cell has {len(layout)} edges but {len(alphas)} alpha vectors")
    per_node: dict[int, list] = {}
    for (node, src, family), a in zip(layout, alphas):
        a = np.asarray(a, dtype=np.float64)
        w = np.exp(a - a.max())
        w /= w.sum()
        best = int(np.argmax(w))  # first maximum wins
        per_node.setdefault(node, []).append((-w[best], source_rank(src), src, CATALOG[family][best]))
    chosen = []
    for node in range(1, nodes + 1):
        ranked = sorted(per_node[node], key=lambda e: (e[0], e[1]))
        chosen.append(tuple((src, op) for _, _, src, op in ranked[:2]))
    return CellGenotype(kind, tuple(chosen))


def canonical_json(dc: CellGenotype, uc: CellGenotype) -> str:
    return json.dumps({"version": GENOTYPE_VERSION, "dc": dc.to_list(), "uc": uc.to_list()},
                      sort_keys=True, separators=(",", ":"))


def genotype_hash(dc: CellGenotype, uc: CellGenotype) -> str:
    return hashlib.sha256(canonical_json(dc, uc).encode()).hexdigest()[:16]


def genotype_from_dict(doc: dict) -> tuple[CellGenotype, CellGenotype]:
    if not isinstance(doc, dict) or doc.get("version") != GENOTYPE_VERSION:
        raise GenotypeError(f"genotype document must have version {GENOTYPE_VERSION}")
    if set(doc) != {"version", DC, UC}:
        raise GenotypeError(f"genotype keys must be version/dc/uc, got {sorted(doc)}")
    return CellGenotype.from_list(DC, doc[DC]), CellGenotype.from_list(UC, doc[UC])


def save_genotype(path, dc: CellGenotype, uc: CellGenotype) -> Path:
    path = Path(path)
    doc = {"version": GENOTYPE_VERSION, "dc": dc.to_list(), "uc": uc.to_list()}
    path.write_text(json.dumps(doc, indent=2) + "\n")
    return path


def load_genotype(path) -> tuple[CellGenotype, CellGenotype]:
    try:
        doc = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise GenotypeError(f"{path}: not valid JSON ({exc})") from None
    return genotype_from_dict(doc)
