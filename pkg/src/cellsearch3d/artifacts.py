"""Single-file network container: a JSON manifest line followed by raw float64 payloads."""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .data.normalize import NormStats
from .network import Backbone, BackboneConfig
from .network.genotype import genotype_from_dict

MODEL_VERSION = 1
MAGIC = "cellsearch3d-network"
_F64 = np.dtype("<f8")


class ArtifactError(ValueError):
    pass


def save_network(path, net: Backbone, kind: str = "model", norm_stats: NormStats | None = None,
                 extra: dict | None = None) -> Path:
    path = Path(path)
    table, chunks, offset = [], [], 0
    for name, p in net.named_parameters():
        arr = np.ascontiguousarray(p.data, dtype=_F64)
        table.append({"name": name, "shape": list(arr.shape), "kind": p.kind, "offset": offset})
        offset += arr.nbytes
        chunks.append(arr.tobytes())
    genotype = None
    if not net.search_mode:
        genotype = {"version": 1, "dc": net.genotypes[0].to_list(), "uc": net.genotypes[1].to_list()}
    manifest = {
        "format": MAGIC,
        "version": MODEL_VERSION,
        "kind": kind,
        "search_mode": net.search_mode,
        "backbone": net.cfg.to_dict(),
        "genotype": genotype,
        "norm_stats": norm_stats.to_dict() if norm_stats else None,
        "extra": extra or {},
        "parameters": table,
        "payload_bytes": offset,
    }
    with open(path, "wb") as fh:
        fh.write(json.dumps(manifest, sort_keys=True).encode("utf-8") + b"\n")
        for c in chunks:
            fh.write(c)
    return path


def read_manifest(path) -> dict:
    with open(path, "rb") as fh:
        return _parse(fh.readline(), path)


def _parse(line, path) -> dict:
    try:
        manifest = json.loads(line.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError):
        raise ArtifactError(f"{path}: not a network artifact") from None
    if not isinstance(manifest, dict) or manifest.get("format") != MAGIC:
        raise ArtifactError(f"{path}: not a network artifact")
    if manifest.get("version") != MODEL_VERSION:
        raise ArtifactError(f"{path}: unsupported artifact version {manifest.get('version')}")
    return manifest


def load_network(path) -> tuple[Backbone, dict]:
    with open(path, "rb") as fh:
        manifest = _parse(fh.readline(), path)
        payload = fh.read()
    if len(payload) != manifest["payload_bytes"]:
        raise ArtifactError(f"{path}: payload truncated ({len(payload)} of {manifest['payload_bytes']} bytes)")
    cfg = BackboneConfig(**manifest["backbone"])
    genotypes = genotype_from_dict(manifest["genotype"]) if manifest["genotype"] else None
    net = Backbone(cfg, manifest["search_mode"], genotypes)
    params = dict(net.named_parameters())
    names = [e["name"] for e in manifest["parameters"]]
    if set(names) != set(params):
        raise ArtifactError(f"{path}: parameter table does not match the network layout")
    for e in manifest["parameters"]:
        p = params[e["name"]]
        if tuple(e["shape"]) != p.shape:
            raise ArtifactError(f"{path}: {e['name']} has shape {e['shape']}, expected {p.shape}")
        n = int(np.prod(e["shape"])) * _F64.itemsize
        p.data[...] = np.frombuffer(payload, dtype=_F64, count=n // 8, offset=e["offset"]).reshape(p.shape)
    return net, manifest


def manifest_norm_stats(manifest: dict) -> NormStats | None:
    d = manifest.get("norm_stats")
    return NormStats.from_dict(d) if d else None
