"""
Organ Atlas
-----------
Canonical positions and lesion extents of the ten annotated chest
structures, the condition-to-organ affinities and the fixed background
anatomy template. Coordinates are normalized image coordinates (x to the
right, y down) in radiograph convention: the patient's left is on the
image right.
"""

from functools import lru_cache

import numpy as np
from scipy.ndimage import gaussian_filter

SIGMA_BOUNDS = (0.03, 0.25)


class OrganAtlas:
    def __init__(self):
        """Initialize the organ table and condition affinities."""
        left = {
            "left lung": {"center": (0.70, 0.50), "sigma": (0.12, 0.22)},                # whole field
            "left lower lung zone": {"center": (0.70, 0.66), "sigma": (0.07, 0.14)},
            "left apical zone": {"center": (0.68, 0.22), "sigma": (0.04, 0.08)},
            "left hilar structures": {"center": (0.60, 0.45), "sigma": (0.04, 0.08)},
            "left costophrenic angle": {"center": (0.82, 0.80), "sigma": (0.03, 0.06)},  # smallest
        }
        self.organs = dict(left)
        for name, entry in left.items():
            cx, cy = entry["center"]
            self.organs[name.replace("left", "right", 1)] = {"center": (1.0 - cx, cy),
                                                             "sigma": entry["sigma"]}

        # Where each condition is allowed to appear
        self.condition_organs = {
            "pneumonia": ("left lower lung zone", "right lower lung zone", "left lung", "right lung"),
            "pleural effusion": ("left costophrenic angle", "right costophrenic angle",
                                 "left lower lung zone", "right lower lung zone"),
            "edema": ("left lung", "right lung", "left hilar structures", "right hilar structures"),
            "consolidation": ("left lower lung zone", "right lower lung zone",
                              "left apical zone", "right apical zone"),
            "pneumothorax": ("left apical zone", "right apical zone", "left lung", "right lung"),
        }

    def center(self, organ):
        return self.organs[organ]["center"]

    def sigma_range(self, organ):
        lo, hi = self.organs[organ]["sigma"]
        return max(lo, SIGMA_BOUNDS[0]), min(hi, SIGMA_BOUNDS[1])

    def organs_for(self, condition):
        return self.condition_organs[condition]


ATLAS = OrganAtlas()


@lru_cache(maxsize=8)
def anatomy_template(side):
    """Smooth fixed chest background in [0, 1]: dark lung fields, bright mediastinum and diaphragm."""
    coords = (np.arange(side) + 0.5) / side
    x, y = np.meshgrid(coords, coords)
    image = np.full((side, side), 0.30)
    for cx in (0.30, 0.70):
        lung = ((x - cx) / 0.17) ** 2 + ((y - 0.50) / 0.34) ** 2 <= 1.0
        image[lung] = 0.08
    image[np.abs(x - 0.5) < 0.06] = 0.45   # mediastinum and spine
    image[y > 0.86] = 0.50                 # below the diaphragm
    template = gaussian_filter(image, sigma=side * 0.04, mode="nearest")
    template.setflags(write=False)
    return template
