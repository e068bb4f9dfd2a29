from .backbone import Backbone, BackboneConfig, build_backbone, derive_genotype
from .catalog import CATALOG, DC, DHM, NHM, UC, UHM, edge_layout
from .cells import Cell, HybridModule
from .genotype import (
    CellGenotype, GenotypeError, canonical_json, derive_cell_genotype, genotype_hash,
    load_genotype, save_genotype,
)

__all__ = [
    "Backbone", "BackboneConfig", "build_backbone", "derive_genotype", "CATALOG", "DC", "DHM",
    "NHM", "UC", "UHM", "edge_layout", "Cell", "HybridModule", "CellGenotype", "GenotypeError",
    "canonical_json", "derive_cell_genotype", "genotype_hash", "load_genotype", "save_genotype",
]
