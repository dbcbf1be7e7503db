import json
import os

import numpy as np
import pytest

from spectralsnake.hsidata import (
    DataError,
    HsiCube,
    PatchSpec,
    SplitSpec,
    extract_patches,
    load_cube,
    normalize,
    pad_edges,
    stratified_split,
    write_container,
)

# Published per-class labeled-pixel counts for the Indian Pines ground truth.
INDIAN_PINES_COUNTS = [46, 1428, 830, 237, 483, 730, 28, 478, 20, 972,
                       2455, 593, 205, 1265, 386, 93]


def small_cube(h=9, w=8, b=4, classes=2, seed=0):
    rng = np.random.default_rng(seed)
    labels = np.zeros((h, w), dtype=np.int64)
    labels[1:4, 1:4] = 1
    labels[5:8, 4:7] = 2
    return HsiCube(
        reflectance=rng.random((h, w, b)).astype(np.float32),
        labels=labels,
        class_names=[f"c{i}" for i in range(1, classes + 1)],
    )


class TestContainerIO:
    def test_roundtrip(self, tmp_path, rng):
        cube = small_cube()
        write_container(tmp_path / "c", cube)
        back = load_cube(tmp_path / "c")
        assert back.height == 9 and back.width == 8 and back.bands == 4
        assert np.allclose(back.reflectance, cube.reflectance)
        assert np.array_equal(back.labels, cube.labels)
        assert back.class_names == cube.class_names

    def test_toy_container_shape(self, toy_container):
        cube = load_cube(toy_container)
        assert (cube.height, cube.width, cube.bands, cube.num_classes) == (28, 28, 16, 3)
        assert (cube.labels > 0).sum() == 180

    def test_truncated_cube_rejected(self, tmp_path):
        cube = small_cube()
        write_container(tmp_path / "c", cube)
        path = tmp_path / "c" / "cube.f32"
        path.write_bytes(path.read_bytes()[:-8])
        with pytest.raises(DataError, match="bytes"):
            load_cube(tmp_path / "c")

    def test_truncated_labels_rejected(self, tmp_path):
        cube = small_cube()
        write_container(tmp_path / "c", cube)
        path = tmp_path / "c" / "labels.u16"
        path.write_bytes(path.read_bytes() + b"\x00\x00")
        with pytest.raises(DataError, match="labels.u16"):
            load_cube(tmp_path / "c")

    def test_unknown_version_rejected(self, tmp_path):
        cube = small_cube()
        write_container(tmp_path / "c", cube)
        hpath = tmp_path / "c" / "header.json"
        header = json.loads(hpath.read_text())
        header["version"] = 9
        hpath.write_text(json.dumps(header))
        with pytest.raises(DataError, match="version"):
            load_cube(tmp_path / "c")

    def test_non_finite_rejected(self, tmp_path):
        cube = small_cube()
        cube.reflectance[0, 0, 0] = np.nan
        write_container(tmp_path / "c", cube)
        with pytest.raises(DataError, match="non-finite"):
            load_cube(tmp_path / "c")

    def test_label_beyond_classes_rejected(self, tmp_path):
        cube = small_cube()
        cube.labels[0, 0] = 7
        write_container(tmp_path / "c", cube)
        with pytest.raises(DataError, match="class count"):
            load_cube(tmp_path / "c")


class TestNormalize:
    def test_constant_band_maps_to_zero(self):
        cube = small_cube()
        cube.reflectance[:, :, 2] = 5.0
        out = normalize(cube)
        assert np.abs(out.reflectance[:, :, 2]).max() == 0.0

    def test_band_statistics(self, rng):
        cube = HsiCube(
            reflectance=(rng.random((20, 20, 6)) * 7 + 3).astype(np.float32),
            labels=np.zeros((20, 20), dtype=np.int64),
            class_names=[],
        )
        out = normalize(cube).reflectance.astype(np.float64)
        assert np.abs(out.mean(axis=(0, 1))).max() < 1e-4
        assert np.abs(out.std(axis=(0, 1)) - 1).max() < 1e-4

    def test_idempotent(self, rng):
        cube = HsiCube(
            reflectance=(rng.random((10, 11, 5)) * 3 - 1).astype(np.float32),
            labels=np.zeros((10, 11), dtype=np.int64),
            class_names=[],
        )
        once = normalize(cube)
        twice = normalize(once)
        assert np.abs(once.reflectance - twice.reflectance).max() < 1e-4

    def test_labels_untouched(self):
        cube = small_cube()
        out = normalize(cube)
        assert out.labels is cube.labels


class TestPadEdges:
    def test_sizes_match_margin(self):
        cube = HsiCube(
            reflectance=np.zeros((145, 145, 3), dtype=np.float32),
            labels=np.zeros((145, 145), dtype=np.int64),
            class_names=[],
        )
        out = pad_edges(cube, 5)
        assert out.reflectance.shape == (155, 155, 3)
        assert out.labels.shape == (155, 155)

    def test_zero_margin_identity(self):
        cube = small_cube()
        assert pad_edges(cube, 0) is cube

    def test_corner_replication(self):
        cube = small_cube()
        out = pad_edges(cube, 3)
        assert np.array_equal(out.reflectance[0, 0], cube.reflectance[0, 0])
        assert np.array_equal(out.reflectance[-1, -1], cube.reflectance[-1, -1])
        assert out.labels[0, 0] == 0

    def test_composition(self):
        cube = small_cube()
        a = pad_edges(pad_edges(cube, 2), 3)
        b = pad_edges(cube, 5)
        assert np.array_equal(a.reflectance, b.reflectance)
        assert np.array_equal(a.labels, b.labels)


class TestExtractPatches:
    def test_one_patch_per_labeled_pixel(self):
        cube = small_cube()
        spec = PatchSpec(3, 3, cube.bands)
        padded = pad_edges(cube, spec.margin)
        patches = extract_patches(padded, spec)
        assert len(patches) == int((cube.labels > 0).sum())

    def test_indian_pines_histogram_patch_count(self):
        # synthetic raster carrying the published class histogram
        h = w = 145
        labels = np.zeros(h * w, dtype=np.int64)
        pos = 0
        for cls, count in enumerate(INDIAN_PINES_COUNTS, start=1):
            labels[pos : pos + count] = cls
            pos += count
        rng = np.random.default_rng(0)
        labels = labels[rng.permutation(h * w)].reshape(h, w)
        cube = HsiCube(
            reflectance=np.zeros((h, w, 2), dtype=np.float32),
            labels=labels,
            class_names=[f"c{i}" for i in range(1, 17)],
        )
        spec = PatchSpec(11, 11, 2)
        patches = extract_patches(pad_edges(cube, spec.margin), spec)
        assert len(patches) == 10249

    def test_all_ones_cube(self):
        cube = small_cube()
        cube.reflectance[:] = 1.0
        spec = PatchSpec(3, 3, cube.bands)
        patches = extract_patches(pad_edges(cube, spec.margin), spec)
        for patch, _, _ in patches:
            assert np.all(patch == 1.0)

    def test_border_center_uses_replicated_values(self):
        # 3x3 toy raster whose only label sits at the original corner
        reflectance = np.arange(9, dtype=np.float32).reshape(3, 3, 1)
        labels = np.zeros((3, 3), dtype=np.int64)
        labels[0, 0] = 1
        cube = HsiCube(reflectance=reflectance, labels=labels, class_names=["a"])
        spec = PatchSpec(3, 3, 1)
        patches = extract_patches(pad_edges(cube, 1), spec)
        patch, label, center = patches[0]
        assert label == 1 and center == (1, 1)
        # replicated row/col: [[0,0,1],[0,0,1],[3,3,4]]
        assert patch[0].tolist() == [[0, 0, 1], [0, 0, 1], [3, 3, 4]]

    def test_center_value_property(self, rng):
        cube = small_cube(seed=4)
        spec = PatchSpec(5, 5, cube.bands)
        padded = pad_edges(cube, spec.margin)
        patches = extract_patches(padded, spec)
        for patch, _, (r, c) in patches:
            assert np.array_equal(patch[:, 2, 2], padded.reflectance[r, c])

    def test_insufficient_padding_rejected(self):
        cube = small_cube()
        cube.labels[0, 0] = 1
        with pytest.raises(DataError, match="pad"):
            extract_patches(cube, PatchSpec(5, 5, cube.bands))

    def test_band_mismatch_rejected(self):
        cube = small_cube()
        with pytest.raises(DataError, match="bands"):
            extract_patches(pad_edges(cube, 2), PatchSpec(3, 3, cube.bands + 1))

    def test_even_patch_rejected(self):
        with pytest.raises(DataError, match="odd"):
            PatchSpec(4, 4, 3)


class TestStratifiedSplit:
    def counts_for(self, n, spec=None):
        labels = np.ones(n, dtype=np.int64)
        tr, va, te = stratified_split(labels, spec or SplitSpec())
        return len(tr), len(va), len(te)

    def test_exact_ratios(self):
        assert self.counts_for(100) == (60, 10, 30)
        assert self.counts_for(10) == (6, 1, 3)

    def test_largest_remainder_seven(self):
        assert self.counts_for(7) == (4, 1, 2)

    def test_partition_properties(self, rng):
        for seed in range(5):
            labels = rng.integers(1, 5, size=200)
            tr, va, te = stratified_split(labels, SplitSpec(seed=seed))
            all_idx = np.concatenate([tr, va, te])
            assert len(all_idx) == 200
            assert len(np.unique(all_idx)) == 200

    def test_deterministic(self, rng):
        labels = rng.integers(1, 4, size=120)
        a = stratified_split(labels, SplitSpec(seed=9))
        b = stratified_split(labels, SplitSpec(seed=9))
        for x, y in zip(a, b):
            assert np.array_equal(x, y)
        c = stratified_split(labels, SplitSpec(seed=10))
        assert any(not np.array_equal(x, y) for x, y in zip(a, c))

    def test_per_class_ratios(self, rng):
        labels = np.repeat([1, 2, 3], [100, 10, 7])
        tr, va, te = stratified_split(labels, SplitSpec())
        for cls, want in ((1, (60, 10, 30)), (2, (6, 1, 3)), (3, (4, 1, 2))):
            got = tuple(int((labels[idx] == cls).sum()) for idx in (tr, va, te))
            assert got == want

    def test_missing_class_rejected(self):
        labels = np.array([1, 1, 3, 3])
        with pytest.raises(DataError, match="class 2"):
            stratified_split(labels, SplitSpec(), num_classes=3)

    def test_split_parse(self):
        spec = SplitSpec.parse("6:1:3", seed=4)
        assert (spec.train, spec.val, spec.test, spec.seed) == (6, 1, 3, 4)
        with pytest.raises(DataError, match="6:1:3"):
            SplitSpec.parse("60/10/30")
