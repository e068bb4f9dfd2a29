"""U-shaped segmentation network assembled from downward and upward cells."""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from ..autodiff import HYBRID, Parameter, ops
from .block import Block, Conv, ConvGN
from .catalog import CATALOG, DC, UC, edge_layout
from .cells import Cell
from .genotype import CellGenotype, derive_cell_genotype


@dataclass
class BackboneConfig:
    modalities: int = 4
    nodes: int = 3
    zoom: int = 2
    depth: int = 2
    label_channels: int = 3

    def __post_init__(self):
        for name in ("modalities", "nodes", "zoom", "depth", "label_channels"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")

    @property
    def stem_width(self) -> int:
        return self.modalities * self.nodes

    def node_width(self, level: int) -> int:
        return self.modalities * self.zoom ** level

    def to_dict(self) -> dict:
        return asdict(self)

    @property
    def divisor(self) -> int:
        return 2 ** (self.depth + 1)


class Backbone(Block):
    """Stem (P0 full resolution, P1 half), ``depth`` downward cells, ``depth + 1`` upward cells.

    Encoder features by level: 0 = P0, 1 = P1, i + 1 = DC_i. DC_i reads
    levels i - 1 (X0) and i (X1). Decoding from the deepest level, the upward
    cell producing level k reads the encoder feature at level k (X0) and
    the previous decoder output (X1); the last one lands on P0's resolution
    so the sigmoid head predicts at full patch size. Architecture weights are
    shared by all cells of the same kind.
    """

    def __init__(self, cfg: BackboneConfig, search_mode: bool = True,
                 genotypes: tuple[CellGenotype, CellGenotype] | None = None, seed: int = 0):
        self.cfg = cfg
        self.search_mode = search_mode
        rng = np.random.default_rng(seed)
        m, n = cfg.modalities, cfg.nodes
        if search_mode:
            self.alphas = {
                kind: [Parameter(np.zeros(len(CATALOG[fam])), HYBRID) for _, _, fam in edge_layout(kind, n)]
                for kind in (DC, UC)
            }
            dc_geno = uc_geno = None
        else:
            if genotypes is None:
                raise ValueError("derived network needs a (dc, uc) genotype pair")
            self.alphas = {DC: None, UC: None}
            dc_geno, uc_geno = genotypes
        self.genotypes = None if search_mode else (dc_geno, uc_geno)

        self.p0 = ConvGN(m, cfg.stem_width, 3, rng, stride=1)
        self.p1 = ConvGN(m, cfg.stem_width, 3, rng, stride=2)
        widths = [cfg.stem_width, cfg.stem_width]
        self.down = []
        for i in range(1, cfg.depth + 1):
            cell = Cell(DC, widths[i - 1], widths[i], cfg.node_width(i), rng, n, search_mode,
                        self.alphas[DC], dc_geno)
            self.down.append(cell)
            widths.append(cell.out_channels)
        self.up = []
        deep = widths[-1]
        for k in range(cfg.depth, -1, -1):
            cell = Cell(UC, widths[k], deep, cfg.node_width(k), rng, n, search_mode,
                        self.alphas[UC], uc_geno)
            self.up.append(cell)
            deep = cell.out_channels
        self.head = Conv(deep, cfg.label_channels, 1, rng, bias=True)

    def check_input(self, shape) -> None:
        if len(shape) != 4 or shape[0] != self.cfg.modalities:
            raise ValueError(f"expected input ({self.cfg.modalities}, X, Y, Z), got {tuple(shape)}")
        if any(s % self.cfg.divisor for s in shape[1:]):
            raise ValueError(f"patch extents {tuple(shape[1:])} must be divisible by {self.cfg.divisor}")

    def forward(self, x):
        self.check_input(x.shape)
        feats = [self.p0(x), self.p1(x)]
        for i, cell in enumerate(self.down, start=1):
            feats.append(cell(feats[i - 1], feats[i]))
        h = feats[-1]
        for k, cell in zip(range(self.cfg.depth, -1, -1), self.up):
            h = cell(feats[k], h)
        return ops.sigmoid(self.head(h))

    def cells(self, kind: str) -> list[Cell]:
        return self.down if kind == DC else self.up

    def derive_genotype(self) -> tuple[CellGenotype, CellGenotype]:
        if not self.search_mode:
            raise ValueError("only a search-mode network carries architecture weights")
        return tuple(
            derive_cell_genotype(kind, [a.data for a in self.alphas[kind]], self.cfg.nodes)
            for kind in (DC, UC)
        )


def build_backbone(cfg: BackboneConfig, search_mode: bool = True, genotypes=None, seed: int = 0) -> Backbone:
    return Backbone(cfg, search_mode, genotypes, seed)


def derive_genotype(net: Backbone) -> tuple[CellGenotype, CellGenotype]:
    return net.derive_genotype()
