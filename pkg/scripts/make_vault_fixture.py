"""Regenerate the guide curves of the bundled vault fixture.

The vault is a synthetic stand-in: two corbelled walls facing each other
across an open crown, each lofted between two congruent guide curves. The
far guide is shifted sideways so the walls run obliquely to the layer grid.
"""
import csv
from pathlib import Path

import numpy as np

OUT = Path(__file__).resolve().parents[1] / "src" / "lamina" / "fixtures" / "vault_guides.csv"

HALF_SPAN = 1.6   # m, wall base distance from the centreline
LEAN = 0.25       # m, inward lean at the crown
HEIGHT = 1.2      # m
DEPTH = 3.6       # m, distance between the two guides of a wall
SKEW = 0.6        # m, sideways shift of the far guide
POINTS = 13


def wall_guide(side, x0, y):
    z = np.linspace(0.0, HEIGHT, POINTS)
    x = x0 + side * (HALF_SPAN - LEAN * (z / HEIGHT) ** 2)
    return np.c_[x, np.full(POINTS, y), z]


def main():
    with open(OUT, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["surface", "guide", "x", "y", "z"])
        for s, side in enumerate((-1, 1)):
            for g, (x0, y) in enumerate(((0.0, 0.0), (SKEW, DEPTH))):
                for p in wall_guide(side, x0, y):
                    w.writerow([s, g, *(f"{v * 1000:.4f}" for v in p)])
    print(f"wrote {OUT}")


if __name__ == "__main__":
    main()
