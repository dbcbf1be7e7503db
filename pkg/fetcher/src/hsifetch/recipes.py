"""Dataset recipes: sources, expected shapes, and published label histograms.

The "corrected" MAT distributions already have the water-absorption bands
removed, so each recipe asserts the final band count rather than a band
index list. Checksums are recorded on first successful download (and can be
pinned via the sha256 fields when known).
"""

from __future__ import annotations

from dataclasses import dataclass, field


@dataclass
class FileSpec:
    filename: str
    urls: list
    mat_var: str
    sha256: str = None  # None: record on first fetch, verify thereafter


@dataclass
class DatasetRecipe:
    name: str
    cube: FileSpec
    labels: FileSpec
    raw_shape: tuple  # (H, W, B) of the cube MAT variable
    classes: int
    class_names: list
    class_counts: list  # labeled pixels per class, from the ground-truth raster
    bands_to_keep: int = field(init=False)

    def __post_init__(self):
        self.bands_to_keep = self.raw_shape[2]
        if len(self.class_names) != self.classes or len(self.class_counts) != self.classes:
            raise ValueError(f"recipe {self.name}: class metadata sizes disagree")


def _ehu(path):
    return [
        f"https://www.ehu.eus/ccwintco/uploads/{path}",
        f"http://www.ehu.eus/ccwintco/uploads/{path}",
    ]


RECIPES = {
    "indian_pines": DatasetRecipe(
        name="indian_pines",
        cube=FileSpec("Indian_pines_corrected.mat", _ehu("6/67/Indian_pines_corrected.mat"),
                      "indian_pines_corrected"),
        labels=FileSpec("Indian_pines_gt.mat", _ehu("c/c4/Indian_pines_gt.mat"),
                        "indian_pines_gt"),
        raw_shape=(145, 145, 200),
        classes=16,
        class_names=[
            "Alfalfa", "Corn-notill", "Corn-mintill", "Corn", "Grass-pasture",
            "Grass-trees", "Grass-pasture-mowed", "Hay-windrowed", "Oats",
            "Soybean-notill", "Soybean-mintill", "Soybean-clean", "Wheat",
            "Woods", "Buildings-Grass-Trees-Drives", "Stone-Steel-Towers",
        ],
        class_counts=[46, 1428, 830, 237, 483, 730, 28, 478, 20, 972,
                      2455, 593, 205, 1265, 386, 93],
    ),
    "pavia_university": DatasetRecipe(
        name="pavia_university",
        cube=FileSpec("PaviaU.mat", _ehu("e/ee/PaviaU.mat"), "paviaU"),
        labels=FileSpec("PaviaU_gt.mat", _ehu("5/50/PaviaU_gt.mat"), "paviaU_gt"),
        raw_shape=(610, 340, 103),
        classes=9,
        class_names=[
            "Asphalt", "Meadows", "Gravel", "Trees", "Painted metal sheets",
            "Bare Soil", "Bitumen", "Self-Blocking Bricks", "Shadows",
        ],
        class_counts=[6631, 18649, 2099, 3064, 1345, 5029, 1330, 3682, 947],
    ),
    "ksc": DatasetRecipe(
        name="ksc",
        cube=FileSpec("KSC.mat", _ehu("2/26/KSC.mat"), "KSC"),
        labels=FileSpec("KSC_gt.mat", _ehu("a/a6/KSC_gt.mat"), "KSC_gt"),
        raw_shape=(512, 614, 176),
        classes=13,
        class_names=[
            "Scrub", "Willow swamp", "Cabbage palm hammock",
            "Cabbage palm/oak hammock", "Slash pine", "Oak/broadleaf hammock",
            "Hardwood swamp", "Graminoid marsh", "Spartina marsh",
            "Cattail marsh", "Salt marsh", "Mud flats", "Water",
        ],
        class_counts=[761, 243, 256, 252, 161, 229, 105, 431, 520, 404, 419, 503, 927],
    ),
}
