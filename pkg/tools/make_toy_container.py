#!/usr/bin/env python3
"""Generate the small synthetic container checked in under tests/data.

Three classes with distinct smooth spectra over 16 bands, laid out as a
vertical strip, a sinuous curve, and two blobs on a 28x28 raster; everything
else stays unlabeled. Deterministic by construction.
"""

import os
import sys

import numpy as np

sys.path.insert(0, os.path.join(os.path.dirname(__file__), "..", "src"))

from spectralsnake.hsidata import HsiCube, write_container  # noqa: E402

H = W = 28
BANDS = 16
CLASSES = ["strip", "curve", "blob"]


def signature(kind, bands):
    t = np.linspace(0.0, 1.0, bands)
    if kind == 0:
        return 0.8 * np.exp(-((t - 0.25) ** 2) / 0.02)
    if kind == 1:
        return 0.7 * np.exp(-((t - 0.6) ** 2) / 0.015) + 0.2 * t
    return 0.5 + 0.4 * np.sin(3.5 * np.pi * t)


def main(out_dir):
    rng = np.random.default_rng(20240501)
    labels = np.zeros((H, W), dtype=np.int64)
    labels[4:24, 4:8] = 1
    for x in range(3, 25):
        y = int(round(14 + 6 * np.sin((x - 3) / 4.0)))
        labels[np.clip(y - 1, 0, H - 1) : np.clip(y + 2, 0, H), x] = 2
    yy, xx = np.mgrid[0:H, 0:W]
    for cy, cx in ((7, 20), (22, 17)):
        labels[(yy - cy) ** 2 + (xx - cx) ** 2 <= 9] = 3

    base = 0.3 + 0.1 * np.sin(np.linspace(0, 2 * np.pi, BANDS))
    cube = np.tile(base, (H, W, 1)).astype(np.float64)
    for cls in (1, 2, 3):
        mask = labels == cls
        cube[mask] = signature(cls - 1, BANDS)
    cube += rng.normal(0.0, 0.03, size=cube.shape)
    cube = cube.astype(np.float32)

    write_container(out_dir, HsiCube(reflectance=cube, labels=labels, class_names=CLASSES))
    counts = [int((labels == c).sum()) for c in (1, 2, 3)]
    print(f"wrote {out_dir}: {H}x{W}x{BANDS}, class counts {counts}, labeled {sum(counts)}")


if __name__ == "__main__":
    main(sys.argv[1] if len(sys.argv) > 1 else os.path.join(
        os.path.dirname(__file__), "..", "tests", "data", "toy_container"))
