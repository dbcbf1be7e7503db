import os

import numpy as np
import pytest

DATA_DIR = os.path.join(os.path.dirname(__file__), "data")
TOY_CONTAINER = os.path.join(DATA_DIR, "toy_container")


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def toy_container():
    return TOY_CONTAINER


def make_separable_cube(height=16, width=16, bands=8, noise=0.02, seed=0):
    """Two-class toy: constant spectra 0.9 vs 0.1 plus small noise.

    The left half of the raster is class 1, the right half class 2, with a
    one-pixel unlabeled gutter between them.
    """
    from spectralsnake.hsidata import HsiCube

    rng = np.random.default_rng(seed)
    labels = np.zeros((height, width), dtype=np.int64)
    half = width // 2
    labels[:, : half - 1] = 1
    labels[:, half + 1 :] = 2
    cube = np.where(
        (labels == 1)[..., None], 0.9, np.where((labels == 2)[..., None], 0.1, 0.5)
    ).astype(np.float64)
    cube = cube + rng.normal(0.0, noise, size=(height, width, bands))
    return HsiCube(
        reflectance=cube.astype(np.float32),
        labels=labels,
        class_names=["bright", "dark"],
    )


TINY_NETWORK = {
    "stage_blocks": (1, 1),
    "k0": 4,
    "groups": 2,
    "compression": 4,
    "snake_length": 5,
    "stem_channels": 8,
    "stem_kernel": (5, 3, 3),
    "stem_stride": (2, 1, 1),
}
