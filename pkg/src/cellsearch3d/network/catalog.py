"""Candidate operation names and the edge layout of downward/upward cells."""

from __future__ import annotations

DHM = "DHM"
UHM = "UHM"
NHM = "NHM"

CATALOG: dict[str, tuple[str, ...]] = {
    DHM: ("d_conv", "d_dil_conv", "d_dep_conv", "d_se_conv", "max_pool", "avg_pool"),
    UHM: ("u_conv", "u_dil_conv", "u_dep_conv", "u_se_conv"),
    NHM: ("conv", "dil_conv", "dep_conv", "se_conv", "identity"),
}

DC = "dc"
UC = "uc"
CELL_KINDS = (DC, UC)


def source_names(node: int) -> list[str]:
    """Inputs available to 1-based ``node``: the two cell inputs and every earlier node."""
    return ["X0", "X1"] + [f"node{j}" for j in range(1, node)]


def source_rank(source: str) -> int:
    if source == "X0":
        return 0
    if source == "X1":
        return 1
    if source.startswith("node") and source[4:].isdigit():
        return 1 + int(source[4:])
    raise ValueError(f"unknown edge source {source!r}")


def edge_kind(cell_kind: str, source: str) -> str:
    """Which hybrid-module family sits on an edge.

    Downward cells shrink both inputs straight away, so edges leaving X0/X1
    are downward modules. Upward cells only enlarge the deep input X1; the
    skip input X0 is already at the output resolution.
    """
    if cell_kind == DC:
        return DHM if source in ("X0", "X1") else NHM
    if cell_kind == UC:
        return UHM if source == "X1" else NHM
    raise ValueError(f"unknown cell kind {cell_kind!r}")


def edge_layout(cell_kind: str, nodes: int) -> list[tuple[int, str, str]]:
    """(node, source, module family) for every edge of a search-mode cell, in order."""
    return [
        (k, src, edge_kind(cell_kind, src))
        for k in range(1, nodes + 1)
        for src in source_names(k)
    ]
