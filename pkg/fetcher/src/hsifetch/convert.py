"""MAT-to-container conversion.

The emitted layout is the spectralsnake container contract: header.json with
{version, height, width, bands, classes, class_names, dtype: "f32le",
layout: "band-seq"}, cube.f32 as little-endian float32 in [band][row][col]
order, labels.u16 as little-endian uint16 row-major. Writing is
deterministic, so re-running over the same cache is byte-identical.
"""

from __future__ import annotations

import json
import os

import numpy as np
import scipy.io


class ConvertError(RuntimeError):
    pass


def _load_var(path, var):
    mat = scipy.io.loadmat(path)
    if var in mat:
        return mat[var]
    available = sorted(k for k in mat if not k.startswith("__"))
    for k in available:  # tolerate case drift across mirrors
        if k.lower() == var.lower():
            return mat[k]
    raise ConvertError(f"{os.path.basename(path)}: variable {var!r} not found; has {available}")


def convert(cube_path, labels_path, recipe, out_dir):
    """Validate the MAT payloads against the recipe and emit a container."""
    cube = np.asarray(_load_var(cube_path, recipe.cube.mat_var))
    labels = np.asarray(_load_var(labels_path, recipe.labels.mat_var))
    if cube.shape != recipe.raw_shape:
        raise ConvertError(
            f"{recipe.name}: cube shape {cube.shape} != expected {recipe.raw_shape}"
        )
    h, w, bands = recipe.raw_shape
    if bands != recipe.bands_to_keep:
        raise ConvertError(
            f"{recipe.name}: {bands} bands present, recipe keeps {recipe.bands_to_keep}"
        )
    if labels.shape != (h, w):
        raise ConvertError(
            f"{recipe.name}: label raster {labels.shape} != expected {(h, w)}"
        )
    labels = labels.astype(np.int64)
    if labels.min() < 0 or labels.max() != recipe.classes:
        raise ConvertError(
            f"{recipe.name}: labels span {labels.min()}..{labels.max()}, "
            f"expected 0..{recipe.classes}"
        )
    hist = [int((labels == c).sum()) for c in range(1, recipe.classes + 1)]
    if hist != list(recipe.class_counts):
        raise ConvertError(
            f"{recipe.name}: label histogram {hist} does not match the published "
            f"counts {list(recipe.class_counts)}"
        )
    cube = cube.astype(np.float32)
    if not np.isfinite(cube).all():
        raise ConvertError(f"{recipe.name}: cube contains non-finite values")

    os.makedirs(out_dir, exist_ok=True)
    header = {
        "version": 1,
        "height": h,
        "width": w,
        "bands": bands,
        "classes": recipe.classes,
        "class_names": list(recipe.class_names),
        "dtype": "f32le",
        "layout": "band-seq",
    }
    with open(os.path.join(out_dir, "header.json"), "w") as f:
        json.dump(header, f, sort_keys=True, indent=1)
    band_seq = np.ascontiguousarray(np.moveaxis(cube, 2, 0)).astype("<f4")
    with open(os.path.join(out_dir, "cube.f32"), "wb") as f:
        f.write(band_seq.tobytes())
    with open(os.path.join(out_dir, "labels.u16"), "wb") as f:
        f.write(labels.astype("<u2").tobytes())
    return out_dir
