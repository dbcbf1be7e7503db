import json
import os
import urllib.request

import numpy as np
import pytest
import scipy.io

from hsifetch import (
    RECIPES,
    ChecksumError,
    DownloadError,
    convert,
    fetch,
    fetch_file,
    sha256_of,
)
from hsifetch.convert import ConvertError
from hsifetch.recipes import DatasetRecipe, FileSpec


def synth_labels(recipe, seed=0):
    h, w = recipe.raw_shape[:2]
    flat = np.zeros(h * w, dtype=np.uint8)
    pos = 0
    for cls, count in enumerate(recipe.class_counts, start=1):
        flat[pos : pos + count] = cls
        pos += count
    rng = np.random.default_rng(seed)
    return flat[rng.permutation(h * w)].reshape(h, w)


def synth_mats(recipe, directory):
    """Write MAT files shaped like the real distribution (zero reflectance)."""
    os.makedirs(directory, exist_ok=True)
    cube_path = os.path.join(directory, recipe.cube.filename)
    gt_path = os.path.join(directory, recipe.labels.filename)
    scipy.io.savemat(
        cube_path,
        {recipe.cube.mat_var: np.zeros(recipe.raw_shape, dtype=np.float32)},
        do_compression=True,
    )
    scipy.io.savemat(
        gt_path, {recipe.labels.mat_var: synth_labels(recipe)}, do_compression=True
    )
    return cube_path, gt_path


def file_recipe(tmp_path, name="toyset"):
    """A tiny recipe whose sources are local file:// URLs."""
    src = tmp_path / "srv"
    src.mkdir(exist_ok=True)
    cube = np.random.default_rng(1).random((6, 5, 4)).astype(np.float32)
    labels = np.zeros((6, 5), dtype=np.uint8)
    labels[0, :3] = 1
    labels[1, :2] = 2
    scipy.io.savemat(src / "cube.mat", {"cube": cube})
    scipy.io.savemat(src / "gt.mat", {"gt": labels})
    return DatasetRecipe(
        name=name,
        cube=FileSpec("cube.mat", [f"file://{src / 'cube.mat'}"], "cube"),
        labels=FileSpec("gt.mat", [f"file://{src / 'gt.mat'}"], "gt"),
        raw_shape=(6, 5, 4),
        classes=2,
        class_names=["a", "b"],
        class_counts=[3, 2],
    )


class TestFetch:
    def test_fresh_fetch_records_checksum(self, tmp_path):
        recipe = file_recipe(tmp_path)
        cube, gt = fetch(recipe, str(tmp_path / "cache"))
        assert os.path.isfile(cube) and os.path.isfile(gt)
        records = json.loads((tmp_path / "cache" / recipe.name / "checksums.json").read_text())
        assert records["cube.mat"] == sha256_of(cube)

    def test_cached_file_skips_network(self, tmp_path, monkeypatch):
        recipe = file_recipe(tmp_path)
        fetch(recipe, str(tmp_path / "cache"))

        def explode(*a, **k):
            raise AssertionError("network touched despite cache")

        monkeypatch.setattr(urllib.request, "urlopen", explode)
        fetch(recipe, str(tmp_path / "cache"))

    def test_corrupted_cache_aborts(self, tmp_path):
        recipe = file_recipe(tmp_path)
        cube, _ = fetch(recipe, str(tmp_path / "cache"))
        with open(cube, "ab") as f:
            f.write(b"junk")
        with pytest.raises(ChecksumError, match="sha256"):
            fetch(recipe, str(tmp_path / "cache"))

    def test_pinned_checksum_mismatch_aborts(self, tmp_path):
        recipe = file_recipe(tmp_path)
        recipe.cube.sha256 = "0" * 64
        with pytest.raises(ChecksumError):
            fetch_file(recipe.cube, str(tmp_path / "cache" / recipe.name))

    def test_unreachable_sources_fail_distinctly(self, tmp_path):
        spec = FileSpec("x.mat", [f"file://{tmp_path}/missing.mat"], "x")
        with pytest.raises(DownloadError, match="all sources failed"):
            fetch_file(spec, str(tmp_path / "cache" / "z"))


class TestConvert:
    @pytest.mark.parametrize("name,expect", [
        ("indian_pines", (145, 145, 200, 16)),
        ("pavia_university", (610, 340, 103, 9)),
        ("ksc", (512, 614, 176, 13)),
    ])
    def test_roundtrip_loads_in_primary(self, tmp_path, name, expect):
        from spectralsnake.hsidata import load_cube

        recipe = RECIPES[name]
        cube_path, gt_path = synth_mats(recipe, str(tmp_path / "cache"))
        out = str(tmp_path / "container")
        convert(cube_path, gt_path, recipe, out)
        cube = load_cube(out)
        assert (cube.height, cube.width, cube.bands, cube.num_classes) == expect
        assert cube.class_names == list(recipe.class_names)
        hist = [int((cube.labels == c).sum()) for c in range(1, cube.num_classes + 1)]
        assert hist == list(recipe.class_counts)

    def test_idempotent_byte_identical(self, tmp_path):
        recipe = RECIPES["indian_pines"]
        cube_path, gt_path = synth_mats(recipe, str(tmp_path / "cache"))
        a, b = str(tmp_path / "a"), str(tmp_path / "b")
        convert(cube_path, gt_path, recipe, a)
        convert(cube_path, gt_path, recipe, b)
        for fn in ("header.json", "cube.f32", "labels.u16"):
            assert open(os.path.join(a, fn), "rb").read() == open(os.path.join(b, fn), "rb").read()

    def test_wrong_variable_name_lists_available(self, tmp_path):
        recipe = RECIPES["indian_pines"]
        path = tmp_path / "bad.mat"
        scipy.io.savemat(path, {"something_else": np.zeros((2, 2))})
        with pytest.raises(ConvertError, match="something_else"):
            convert(str(path), str(path), recipe, str(tmp_path / "out"))

    def test_wrong_shape_rejected(self, tmp_path):
        recipe = RECIPES["indian_pines"]
        cube_path = str(tmp_path / "cube.mat")
        gt_path = str(tmp_path / "gt.mat")
        scipy.io.savemat(cube_path, {recipe.cube.mat_var: np.zeros((10, 10, 5), np.float32)})
        scipy.io.savemat(gt_path, {recipe.labels.mat_var: synth_labels(recipe)})
        with pytest.raises(ConvertError, match="shape"):
            convert(cube_path, gt_path, recipe, str(tmp_path / "out"))

    def test_histogram_mismatch_rejected(self, tmp_path):
        recipe = RECIPES["indian_pines"]
        cube_path, gt_path = synth_mats(recipe, str(tmp_path / "cache"))
        labels = synth_labels(recipe)
        labels[labels == 9] = 10  # destroy two class counts
        scipy.io.savemat(gt_path, {recipe.labels.mat_var: labels}, do_compression=True)
        with pytest.raises(ConvertError, match="histogram"):
            convert(cube_path, gt_path, recipe, str(tmp_path / "out"))


class TestCli:
    def test_end_to_end_with_local_sources(self, tmp_path, monkeypatch):
        # real datasets need a network; drive the CLI through a toy recipe
        import hsifetch.cli as cli

        recipe = file_recipe(tmp_path)
        monkeypatch.setattr(cli, "RECIPES", {"toyset": recipe})
        code = cli.main(["--dataset", "toyset", "--out", str(tmp_path / "out"),
                         "--cache", str(tmp_path / "cache")])
        assert code == 0
        assert (tmp_path / "out" / "header.json").exists()

    def test_download_failure_exit_code(self, tmp_path, monkeypatch):
        import hsifetch.cli as cli

        recipe = file_recipe(tmp_path)
        recipe.cube.urls = [f"file://{tmp_path}/nothing.mat"]
        monkeypatch.setattr(cli, "RECIPES", {"toyset": recipe})
        code = cli.main(["--dataset", "toyset", "--out", str(tmp_path / "out"),
                         "--cache", str(tmp_path / "cache2")])
        assert code == 3

    def test_checksum_failure_exit_code(self, tmp_path, monkeypatch):
        import hsifetch.cli as cli

        recipe = file_recipe(tmp_path)
        recipe.cube.sha256 = "0" * 64
        monkeypatch.setattr(cli, "RECIPES", {"toyset": recipe})
        code = cli.main(["--dataset", "toyset", "--out", str(tmp_path / "out"),
                         "--cache", str(tmp_path / "cache3")])
        assert code == 4
