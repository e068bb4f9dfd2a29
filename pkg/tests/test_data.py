import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from cellsearch3d.data import (
    AugmentConfig, VolumeCase, VolumeFormatError, augment, compute_norm_stats, detect_brain_cube,
    load_directory, normalize, read_case, read_volume, synth_phantom, write_case, write_volume,
)
from cellsearch3d.data.augment import apply_plan, sample_plan
from cellsearch3d.data.normalize import NormStats
from cellsearch3d.data.synth import min_phantom_extent
from cellsearch3d.data.volume import read_header
from cellsearch3d.metrics import label_to_subregions

from oracles import bbox_scan


@pytest.fixture(scope="module")
def phantoms():
    return [synth_phantom(s, (32, 30, 28)) for s in range(3)]


# --- container -----------------------------------------------------------------------

def test_case_round_trip_is_bitwise(tmp_path, phantoms):
    case = phantoms[0]
    img_path, lab_path = write_case(case, tmp_path)
    back = read_case(img_path, lab_path)
    assert np.array_equal(back.image, case.image)
    assert np.array_equal(back.label, case.label)
    assert back.modality_names == case.modality_names
    assert back.case_id == case.case_id


def test_header_layout(tmp_path):
    img = np.arange(2 * 3 * 4 * 5, dtype=np.float32).reshape(2, 3, 4, 5)
    path = write_volume(tmp_path / "a.vvol", img, "image", "a", ["x", "y"])
    raw = path.read_bytes()
    line, payload = raw.split(b"\n", 1)
    header = json.loads(line)
    assert header == {"version": 1, "dims": [3, 4, 5], "channels": 2, "dtype": "f32",
                      "kind": "image", "modalities": ["x", "y"], "case_id": "a"}
    # little-endian, row-major, channel slowest
    assert np.array_equal(np.frombuffer(payload, "<f4"), img.ravel())


def _rewrite_header(path, **changes):
    line, payload = path.read_bytes().split(b"\n", 1)
    header = json.loads(line)
    header.update(changes)
    path.write_bytes(json.dumps(header).encode() + b"\n" + payload)


def test_inconsistent_dims_rejected(tmp_path):
    path = write_volume(tmp_path / "a.vvol", np.zeros((1, 4, 4, 4)), "image", "a")
    _rewrite_header(path, dims=[4, 4, 5])
    with pytest.raises(VolumeFormatError, match="payload"):
        read_volume(path)


def test_truncated_payload_rejected(tmp_path):
    path = write_volume(tmp_path / "a.vvol", np.zeros((1, 4, 4, 4)), "image", "a")
    path.write_bytes(path.read_bytes()[:-3])
    with pytest.raises(VolumeFormatError):
        read_volume(path)


def test_unknown_dtype_and_bad_header(tmp_path):
    path = write_volume(tmp_path / "a.vvol", np.zeros((1, 2, 2, 2)), "image", "a")
    _rewrite_header(path, dtype="f16")
    with pytest.raises(VolumeFormatError, match="dtype"):
        read_volume(path)
    (tmp_path / "b.vvol").write_bytes(b"not json\n\x00\x00")
    with pytest.raises(VolumeFormatError):
        read_header(tmp_path / "b.vvol")


def test_illegal_label_values(tmp_path):
    with pytest.raises(VolumeFormatError):
        write_volume(tmp_path / "l.vvol", np.full((2, 2, 2), 3, np.uint8), "label", "l")
    path = write_volume(tmp_path / "l.vvol", np.zeros((2, 2, 2), np.uint8), "label", "l")
    raw = bytearray(path.read_bytes())
    raw[-1] = 3
    path.write_bytes(bytes(raw))
    with pytest.raises(VolumeFormatError):
        read_volume(path)
    with pytest.raises(ValueError):
        VolumeCase(np.zeros((1, 2, 2, 2)), np.full((2, 2, 2), 5))


def test_load_directory(tmp_path, phantoms):
    for c in phantoms:
        write_case(c, tmp_path)
    write_volume(tmp_path / "extra_image.vvol", phantoms[0].image, "image", "extra")
    cases = load_directory(tmp_path)
    assert [c.case_id for c in cases] == ["extra", "phantom0000", "phantom0001", "phantom0002"]
    assert cases[0].label is None and cases[1].label is not None
    with pytest.raises(FileNotFoundError):
        load_directory(tmp_path / "missing")


# --- normalization ---------------------------------------------------------------------

def _case(values, shape=(1, 2, 2, 2)):
    img = np.zeros(shape)
    img.ravel()[: len(values)] = values
    return VolumeCase(img)


def test_stats_hand_example():
    stats = compute_norm_stats([_case([2.0, 4.0])])
    assert (stats.mean, stats.std, stats.zmin, stats.zmax) == ([3.0], [1.0], [-1.0], [1.0])


def test_stats_pooling_idempotent_on_duplicates(phantoms):
    a = compute_norm_stats(phantoms)
    b = compute_norm_stats(phantoms + phantoms)
    for key in ("mean", "std", "zmin", "zmax"):
        np.testing.assert_allclose(getattr(a, key), getattr(b, key), rtol=1e-12)


def test_stats_errors():
    with pytest.raises(ValueError, match="variance"):
        compute_norm_stats([_case([5.0, 5.0, 5.0])])
    with pytest.raises(ValueError, match="nonzero"):
        compute_norm_stats([VolumeCase(np.zeros((1, 2, 2, 2)))])


def test_normalize_extremes_and_background():
    case = _case([2.0, 4.0, 3.0])
    stats = compute_norm_stats([case])
    out = normalize(case, stats, 100.0, 0.1).image.ravel()
    assert out[0] == 10.0 and out[1] == 110.0
    assert out[2] == pytest.approx(60.0, abs=1e-12)
    assert np.all(out[3:] == 0.0)


def test_normalize_clamps_unseen_extremes():
    stats = NormStats([3.0], [1.0], [-1.0], [1.0])
    out = normalize(_case([-50.0, 50.0]), stats).image.ravel()
    assert out[0] == 10.0 and out[1] == 110.0


def test_normalize_keeps_support_and_range(phantoms):
    stats = compute_norm_stats(phantoms)
    for case in phantoms:
        out = normalize(case, stats).image
        assert np.array_equal(out != 0, case.image != 0)
        nz = out[out != 0]
        assert nz.min() >= 10.0 and nz.max() <= 110.0


def test_norm_stats_dict_round_trip(phantoms):
    stats = compute_norm_stats(phantoms)
    assert NormStats.from_dict(json.loads(json.dumps(stats.to_dict()))) == stats


# --- brain cube --------------------------------------------------------------------------

def test_brain_cube_single_voxel_and_full():
    img = np.zeros((2, 6, 7, 8))
    img[1, 2, 3, 4] = 1.0
    cube = detect_brain_cube(img)
    assert cube.start == (2, 3, 4) and cube.length == (1, 1, 1)
    cube = detect_brain_cube(np.ones((1, 6, 7, 8)))
    assert cube.start == (0, 0, 0) and cube.length == (6, 7, 8)
    with pytest.raises(ValueError):
        detect_brain_cube(np.zeros((1, 3, 3, 3)))


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**32 - 1), st.floats(0.001, 0.3))
def test_brain_cube_matches_scan(seed, density):
    rng = np.random.default_rng(seed)
    img = np.where(rng.random((2, 9, 7, 8)) < density, rng.random((2, 9, 7, 8)) + 0.1, 0.0)
    nonzero = (img != 0).any(axis=0)
    if not nonzero.any():
        img[0, 3, 3, 3] = 1.0
        nonzero[3, 3, 3] = True
    cube = detect_brain_cube(img)
    assert list(zip(cube.start, cube.length)) == bbox_scan(nonzero)


# --- phantoms ------------------------------------------------------------------------------

def test_phantom_determinism_and_labels(phantoms):
    again = synth_phantom(0, (32, 30, 28))
    assert np.array_equal(again.image, phantoms[0].image)
    assert np.array_equal(again.label, phantoms[0].label)
    for case in phantoms:
        assert set(np.unique(case.label)) <= {0, 1, 2, 4}
        assert set(np.unique(case.label)) == {0, 1, 2, 4}


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 10**6))
def test_phantom_nesting(seed):
    case = synth_phantom(seed, (24, 26, 28), m=2)
    masks = label_to_subregions(case.label)
    assert not (masks.et & ~masks.tc).any()
    assert not (masks.tc & ~masks.wt).any()
    assert masks.et.any()
    # labels only inside the brain
    assert not ((case.label > 0) & ~(case.image != 0).any(axis=0)).any()


def test_phantom_too_small():
    assert min_phantom_extent() > 16
    with pytest.raises(ValueError):
        synth_phantom(0, (16, 16, 16))


def test_phantom_modalities_highlight_different_regions():
    case = synth_phantom(3, (32, 32, 32))
    masks = label_to_subregions(case.label)
    regions = [masks.wt & ~masks.tc, masks.tc & ~masks.et, masks.et]
    brightest = [int(np.argmax([case.image[c][r].mean() for r in regions])) for c in range(3)]
    assert len(set(brightest)) == 3


# --- augmentation ---------------------------------------------------------------------------

def test_augment_disabled_is_identity(phantoms):
    assert augment(phantoms[0], 5, AugmentConfig()) is phantoms[0]


def test_double_flip_is_identity(phantoms):
    case = phantoms[1]
    plan = sample_plan(case.dims, 0, AugmentConfig())
    plan.flips = (False, True, False)
    twice = apply_plan(apply_plan(case.image, plan, 1), plan, 1)
    assert np.array_equal(twice, case.image)


@pytest.mark.parametrize("seed", range(4))
def test_flip_and_rotate_preserve_counts(phantoms, seed):
    case = phantoms[2]
    out = augment(case, seed, AugmentConfig(flip=True, rotate=True))
    assert np.count_nonzero(out.image) == np.count_nonzero(case.image)
    for v in (1, 2, 4):
        assert np.count_nonzero(out.label == v) == np.count_nonzero(case.label == v)
    assert sorted(out.image.ravel()) == sorted(case.image.ravel())


@pytest.mark.parametrize("cfg", [AugmentConfig(flip=True, rotate=True),
                                 AugmentConfig(flip=True, distort=True, distort_alpha=3.0)])
def test_augment_commutes_with_subregions(phantoms, cfg):
    case = phantoms[0]
    out = augment(case, 11, cfg)
    plan = sample_plan(case.dims, 11, cfg)
    converted_first = label_to_subregions(case.label).stack()
    transformed = np.stack([apply_plan(m.astype(np.uint8), plan, 0) for m in converted_first]).astype(bool)
    assert np.array_equal(label_to_subregions(out.label).stack().astype(bool), transformed)


def test_distortion_is_smooth_and_bounded(phantoms):
    cfg = AugmentConfig(distort=True, distort_alpha=2.0)
    plan = sample_plan(phantoms[0].dims, 3, cfg)
    assert np.abs(plan.displacement).max() == pytest.approx(2.0)
    out = augment(phantoms[0], 3, cfg)
    assert set(np.unique(out.label)) <= {0, 1, 2, 4}
    assert out.image.shape == phantoms[0].image.shape
