"""Multimodal volume cases and the ``.vvol`` container format.

A ``.vvol`` file is one line of UTF-8 JSON (the header) followed by a raw
little-endian, row-major payload with the channel axis slowest. Images are
stored as f32, label volumes as u8.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

VVOL_VERSION = 1
LABEL_VALUES = (0, 1, 2, 4)
_DTYPES = {"f32": np.dtype("<f4"), "u8": np.dtype("u1")}
_KIND_DTYPE = {"image": "f32", "label": "u8"}


class VolumeFormatError(ValueError):
    """Malformed or inconsistent ``.vvol`` content."""


@dataclass
class VolumeCase:
    image: np.ndarray  # (m, Ds, Dc, Da) float64
    label: np.ndarray | None = None  # (Ds, Dc, Da) uint8, values in {0, 1, 2, 4}
    modality_names: list[str] = field(default_factory=list)
    case_id: str = "case"

    def __post_init__(self):
        self.image = np.asarray(self.image, dtype=np.float64)
        if self.image.ndim != 4:
            raise ValueError(f"image must be (m, Ds, Dc, Da), got {self.image.shape}")
        if not self.modality_names:
            self.modality_names = [f"mod{i}" for i in range(self.image.shape[0])]
        if len(self.modality_names) != self.image.shape[0]:
            raise ValueError("one modality name per image channel is required")
        if self.label is not None:
            self.label = np.asarray(self.label, dtype=np.uint8)
            if self.label.shape != self.image.shape[1:]:
                raise ValueError(f"label {self.label.shape} does not match image {self.image.shape[1:]}")
            check_label_values(self.label)

    @property
    def dims(self) -> tuple[int, int, int]:
        return self.image.shape[1:]

    @property
    def modalities(self) -> int:
        return self.image.shape[0]


def check_label_values(label: np.ndarray) -> None:
    bad = np.setdiff1d(np.unique(label), LABEL_VALUES)
    if bad.size:
        raise VolumeFormatError(f"label values outside {{0,1,2,4}}: {bad.tolist()}")


def write_volume(path, data: np.ndarray, kind: str, case_id: str,
                 modalities: list[str] | None = None) -> Path:
    path = Path(path)
    if kind not in _KIND_DTYPE:
        raise ValueError(f"unknown volume kind {kind!r}")
    arr = np.asarray(data)
    if kind == "label":
        check_label_values(arr)
        arr = arr[None]
    if arr.ndim != 4:
        raise ValueError(f"expected channel-first 3D volume, got {arr.shape}")
    dtype = _KIND_DTYPE[kind]
    header = {
        "version": VVOL_VERSION,
        "dims": [int(n) for n in arr.shape[1:]],
        "channels": int(arr.shape[0]),
        "dtype": dtype,
        "kind": kind,
        "modalities": list(modalities or []),
        "case_id": case_id,
    }
    payload = np.ascontiguousarray(arr, dtype=_DTYPES[dtype]).tobytes()
    with open(path, "wb") as fh:
        fh.write(json.dumps(header).encode("utf-8") + b"\n")
        fh.write(payload)
    return path


def read_header(path) -> dict:
    with open(path, "rb") as fh:
        return _parse_header(fh.readline(), path)


def _parse_header(line: bytes, path) -> dict:
    try:
        header = json.loads(line.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise VolumeFormatError(f"{path}: malformed header ({exc})") from None
    required = {"version", "dims", "channels", "dtype", "kind", "modalities", "case_id"}
    if not isinstance(header, dict) or not required <= header.keys():
        raise VolumeFormatError(f"{path}: header must contain {sorted(required)}")
    if header["version"] != VVOL_VERSION:
        raise VolumeFormatError(f"{path}: unsupported version {header['version']}")
    if header["dtype"] not in _DTYPES:
        raise VolumeFormatError(f"{path}: unknown dtype {header['dtype']!r}")
    if header["kind"] not in _KIND_DTYPE:
        raise VolumeFormatError(f"{path}: unknown kind {header['kind']!r}")
    dims = header["dims"]
    if len(dims) != 3 or any(not isinstance(n, int) or n < 1 for n in dims):
        raise VolumeFormatError(f"{path}: dims must be three positive integers, got {dims}")
    if not isinstance(header["channels"], int) or header["channels"] < 1:
        raise VolumeFormatError(f"{path}: channels must be a positive integer")
    return header


def read_volume(path) -> tuple[dict, np.ndarray]:
    with open(path, "rb") as fh:
        header = _parse_header(fh.readline(), path)
        payload = fh.read()
    dtype = _DTYPES[header["dtype"]]
    shape = (header["channels"], *header["dims"])
    expected = int(np.prod(shape)) * dtype.itemsize
    if len(payload) != expected:
        raise VolumeFormatError(
            f"{path}: payload has {len(payload)} bytes, header dims imply {expected}"
        )
    data = np.frombuffer(payload, dtype=dtype).reshape(shape)
    if header["kind"] == "label":
        check_label_values(data)
    return header, data


def case_paths(directory, case_id: str) -> tuple[Path, Path]:
    directory = Path(directory)
    return directory / f"{case_id}_image.vvol", directory / f"{case_id}_label.vvol"


def write_case(case: VolumeCase, directory) -> list[Path]:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    img_path, lab_path = case_paths(directory, case.case_id)
    written = [write_volume(img_path, case.image, "image", case.case_id, case.modality_names)]
    if case.label is not None:
        written.append(write_volume(lab_path, case.label, "label", case.case_id))
    return written


def read_case(image_path, label_path=None) -> VolumeCase:
    header, image = read_volume(image_path)
    if header["kind"] != "image":
        raise VolumeFormatError(f"{image_path}: expected an image volume, found {header['kind']}")
    label = None
    if label_path is not None:
        lh, lab = read_volume(label_path)
        if lh["kind"] != "label":
            raise VolumeFormatError(f"{label_path}: expected a label volume, found {lh['kind']}")
        if lh["dims"] != header["dims"]:
            raise VolumeFormatError(f"{label_path}: dims {lh['dims']} differ from image {header['dims']}")
        label = lab[0]
    return VolumeCase(image.astype(np.float64), label, list(header["modalities"]), header["case_id"])


def read_label(path) -> tuple[str, np.ndarray]:
    header, data = read_volume(path)
    if header["kind"] != "label":
        raise VolumeFormatError(f"{path}: expected a label volume, found {header['kind']}")
    return header["case_id"], data[0]


def load_directory(directory) -> list[VolumeCase]:
    """Every ``*_image.vvol`` in ``directory`` with its label file when present, sorted by id."""
    directory = Path(directory)
    if not directory.is_dir():
        raise FileNotFoundError(f"data directory {directory} does not exist")
    cases = []
    for img in sorted(directory.glob("*_image.vvol")):
        lab = img.with_name(img.name[: -len("_image.vvol")] + "_label.vvol")
        cases.append(read_case(img, lab if lab.exists() else None))
    return cases
