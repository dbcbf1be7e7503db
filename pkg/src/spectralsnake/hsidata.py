"""Hyperspectral cube ingestion and the patch pipeline.

Canonical container layout (one directory):
  header.json  {"version": 1, "height", "width", "bands", "classes",
                "class_names", "dtype": "f32le", "layout": "band-seq"}
  cube.f32     little-endian float32, band-sequential: [band][row][col]
  labels.u16   little-endian uint16, row-major [row][col]; 0 = unlabeled
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass

import numpy as np


class DataError(ValueError):
    pass


@dataclass
class HsiCube:
    reflectance: np.ndarray  # [H, W, B] float32
    labels: np.ndarray  # [H, W] int, 0 = unlabeled
    class_names: list
    band_wavelengths: list = None

    @property
    def height(self):
        return self.reflectance.shape[0]

    @property
    def width(self):
        return self.reflectance.shape[1]

    @property
    def bands(self):
        return self.reflectance.shape[2]

    @property
    def num_classes(self):
        return len(self.class_names)


@dataclass
class PatchSpec:
    """Neighboring pixel block extents: M x N spatial, L bands (full spectrum)."""

    m: int
    n: int
    l: int

    def __post_init__(self):
        if self.m % 2 == 0 or self.n % 2 == 0:
            raise DataError(f"patch extents must be odd, got {self.m}x{self.n}")

    @property
    def margin(self):
        return (max(self.m, self.n) - 1) // 2


@dataclass
class SplitSpec:
    train: int = 6
    val: int = 1
    test: int = 3
    seed: int = 0

    def __post_init__(self):
        if min(self.train, self.val, self.test) < 0 or self.train <= 0:
            raise DataError(f"split ratios must be positive, got {self.train}:{self.val}:{self.test}")

    @staticmethod
    def parse(text, seed=0):
        parts = text.split(":")
        if len(parts) != 3:
            raise DataError(f"split must look like 6:1:3, got {text!r}")
        return SplitSpec(int(parts[0]), int(parts[1]), int(parts[2]), seed=seed)


REQUIRED_HEADER_KEYS = {"version", "height", "width", "bands", "classes", "class_names", "dtype", "layout"}


def write_container(path, cube: HsiCube):
    """Emit the canonical container for a cube (used for synthetic data)."""
    os.makedirs(path, exist_ok=True)
    header = {
        "version": 1,
        "height": cube.height,
        "width": cube.width,
        "bands": cube.bands,
        "classes": cube.num_classes,
        "class_names": list(cube.class_names),
        "dtype": "f32le",
        "layout": "band-seq",
    }
    with open(os.path.join(path, "header.json"), "w") as f:
        json.dump(header, f, sort_keys=True, indent=1)
    band_seq = np.ascontiguousarray(np.moveaxis(cube.reflectance.astype("<f4"), 2, 0))
    with open(os.path.join(path, "cube.f32"), "wb") as f:
        f.write(band_seq.tobytes())
    with open(os.path.join(path, "labels.u16"), "wb") as f:
        f.write(cube.labels.astype("<u2").tobytes())


def load_cube(path) -> HsiCube:
    """Read a container directory, validating header and payload sizes."""
    hpath = os.path.join(path, "header.json")
    if not os.path.isfile(hpath):
        raise DataError(f"missing header.json under {path}")
    with open(hpath) as f:
        header = json.load(f)
    missing = REQUIRED_HEADER_KEYS - set(header)
    if missing:
        raise DataError(f"header.json missing keys: {sorted(missing)}")
    if header["version"] != 1:
        raise DataError(f"unknown container version {header['version']}")
    if header["dtype"] != "f32le" or header["layout"] != "band-seq":
        raise DataError(
            f"unsupported encoding {header['dtype']}/{header['layout']} (need f32le/band-seq)"
        )
    h, w, b, c = header["height"], header["width"], header["bands"], header["classes"]
    if len(header["class_names"]) != c:
        raise DataError(f"{len(header['class_names'])} class names for {c} classes")

    cube_path = os.path.join(path, "cube.f32")
    lab_path = os.path.join(path, "labels.u16")
    expect_cube = h * w * b * 4
    expect_lab = h * w * 2
    got_cube = os.path.getsize(cube_path)
    got_lab = os.path.getsize(lab_path)
    if got_cube != expect_cube:
        raise DataError(f"cube.f32 holds {got_cube} bytes, header implies {expect_cube}")
    if got_lab != expect_lab:
        raise DataError(f"labels.u16 holds {got_lab} bytes, header implies {expect_lab}")

    band_seq = np.fromfile(cube_path, dtype="<f4").reshape(b, h, w)
    reflectance = np.ascontiguousarray(np.moveaxis(band_seq, 0, 2))
    if not np.isfinite(reflectance).all():
        bad = int((~np.isfinite(reflectance)).sum())
        raise DataError(f"cube.f32 contains {bad} non-finite values")
    labels = np.fromfile(lab_path, dtype="<u2").reshape(h, w).astype(np.int64)
    if labels.max(initial=0) > c:
        raise DataError(f"label {labels.max()} exceeds declared class count {c}")
    return HsiCube(reflectance=reflectance, labels=labels, class_names=list(header["class_names"]))


def normalize(cube: HsiCube) -> HsiCube:
    """Per-band z-score over all pixels; constant bands map to zero."""
    r = cube.reflectance.astype(np.float64)
    mean = r.mean(axis=(0, 1))
    std = r.std(axis=(0, 1))
    std = np.where(std < 1e-12, 1.0, std)
    out = ((r - mean) / std).astype(np.float32)
    return HsiCube(
        reflectance=out,
        labels=cube.labels,
        class_names=cube.class_names,
        band_wavelengths=cube.band_wavelengths,
    )


def pad_edges(cube: HsiCube, margin: int) -> HsiCube:
    """Grow both spatial extents by 2*margin with edge replication; labels pad with 0."""
    if margin < 0:
        raise DataError(f"margin must be >= 0, got {margin}")
    if margin == 0:
        return cube
    r = np.pad(cube.reflectance, ((margin, margin), (margin, margin), (0, 0)), mode="edge")
    lab = np.pad(cube.labels, margin, mode="constant", constant_values=0)
    return HsiCube(
        reflectance=r,
        labels=lab,
        class_names=cube.class_names,
        band_wavelengths=cube.band_wavelengths,
    )


class PatchSet:
    """Lazy view over the patches of a padded cube: one per labeled pixel,
    centered on it, labeled by the center pixel. Indexable like a list of
    (patch [L, M, N] float32, label, (row, col)) tuples."""

    def __init__(self, cube: HsiCube, spec: PatchSpec, centers, labels):
        self.cube = cube
        self.spec = spec
        self.centers = centers  # [P, 2] (row, col) in the padded frame
        self.labels = labels  # [P] in 1..C

    def __len__(self):
        return len(self.labels)

    def patch(self, i):
        r, c = self.centers[i]
        hm, hn = (self.spec.m - 1) // 2, (self.spec.n - 1) // 2
        block = self.cube.reflectance[r - hm : r + hm + 1, c - hn : c + hn + 1, :]
        return np.ascontiguousarray(np.moveaxis(block, 2, 0))  # [L, M, N]

    def __getitem__(self, i):
        return self.patch(i), int(self.labels[i]), (int(self.centers[i][0]), int(self.centers[i][1]))

    def __iter__(self):
        for i in range(len(self)):
            yield self[i]

    def gather(self, indices):
        """Stack patches [B, L, M, N] for a batch of indices."""
        out = np.empty((len(indices), self.spec.l, self.spec.m, self.spec.n), dtype=np.float32)
        for j, i in enumerate(indices):
            out[j] = self.patch(i)
        return out


def extract_patches(cube: HsiCube, spec: PatchSpec) -> PatchSet:
    """One patch per labeled pixel of an already padded cube."""
    if spec.l != cube.bands:
        raise DataError(f"patch spectral extent {spec.l} != cube bands {cube.bands}")
    rows, cols = np.nonzero(cube.labels)
    hm, hn = (spec.m - 1) // 2, (spec.n - 1) // 2
    if len(rows):
        if rows.min() < hm or cols.min() < hn or rows.max() >= cube.height - hm or cols.max() >= cube.width - hn:
            raise DataError(
                f"labeled pixels reach within {min(rows.min(), cols.min())} of the border; "
                f"pad the cube with margin >= {max(hm, hn)} first"
            )
    centers = np.stack([rows, cols], axis=1)
    labels = cube.labels[rows, cols].astype(np.int64)
    return PatchSet(cube, spec, centers, labels)


def stratified_split(labels, spec: SplitSpec, num_classes=None):
    """Per-class 6:1:3-style partition with largest-remainder rounding.

    Returns (train_idx, val_idx, test_idx): disjoint, exhaustive over all
    samples, deterministic under spec.seed. When num_classes is given, every
    class in 1..num_classes must be present.
    """
    labels = np.asarray(labels)
    rng = np.random.default_rng(spec.seed)
    classes = np.unique(labels)
    if num_classes is not None:
        absent = sorted(set(range(1, num_classes + 1)) - set(classes.tolist()))
        if absent:
            raise DataError(f"class {absent[0]} has no samples")
    ratios = np.array([spec.train, spec.val, spec.test], dtype=np.float64)
    ratios /= ratios.sum()
    parts = ([], [], [])
    for cls in classes:
        idx = np.nonzero(labels == cls)[0]
        if len(idx) == 0:
            raise DataError(f"class {cls} has no samples")
        idx = idx[rng.permutation(len(idx))]
        n = len(idx)
        quota = ratios * n
        counts = np.floor(quota).astype(int)
        rem = quota - counts
        short = n - counts.sum()
        # ties go to the earlier split (train, then val, then test)
        for j in np.argsort(-rem, kind="stable")[:short]:
            counts[j] += 1
        a, b = counts[0], counts[0] + counts[1]
        parts[0].append(idx[:a])
        parts[1].append(idx[a:b])
        parts[2].append(idx[b:])
    return tuple(np.sort(np.concatenate(p)) if p else np.array([], dtype=int) for p in parts)
