"""Synthetic layer stacks for experiments and tests."""
from __future__ import annotations

import math

import numpy as np

from .geometry import Plane, unit
from .inventory import Inventory, InventoryBin
from .layout import MANUAL_CUT_THRESHOLD, TWO_BY_FOUR, Element, Layer


def straight_element(eid: str, layer: int, position: int, start, end, section=TWO_BY_FOUR,
                     manual_threshold: float = MANUAL_CUT_THRESHOLD) -> Element:
    a = np.asarray(start, dtype=float)
    b = np.asarray(end, dtype=float)
    x = unit(b - a)
    z = np.array([0.0, 0.0, 1.0])
    y = np.cross(z, x)
    mode = "robotic" if np.linalg.norm(b - a) >= manual_threshold else "manual"
    return Element(eid, 0, layer, position, (a, b), tuple(section), np.vstack([(a + b) / 2, x, y, z]),
                   (Plane(a, -x), Plane(b, x)), mode)


def row_stack(lengths, per_layer: int, section=TWO_BY_FOUR, row_pitch: float = 0.2) -> list[Layer]:
    """Elements in rows starting at x = 0, one row per position, layers
    stacked at the section depth so each row supports the one above it."""
    depth = section[1]
    layers = []
    n_layers = math.ceil(len(lengths) / per_layer)
    for i in range(n_layers):
        z = i * depth
        elems = []
        for j, L in enumerate(lengths[i * per_layer:(i + 1) * per_layer]):
            y = j * row_pitch
            elems.append(straight_element(f"E{i:03d}-{j:03d}", i, j, (0.0, y, z), (float(L), y, z), section))
        layers.append(Layer(i, Plane([0, 0, z], [0, 0, 1]), elems))
    return layers


def proportion_fixture(n_elements: int = 1000, n_short: int = 89, per_layer: int = 10, seed: int = 0,
                       short_range=(0.15, 0.34), long_range=(0.36, 1.5)) -> list[Layer]:
    """Stack with an exact count of elements shorter than the manual-cut threshold."""
    rng = np.random.default_rng(seed)
    lengths = np.concatenate([rng.uniform(*short_range, n_short), rng.uniform(*long_range, n_elements - n_short)])
    rng.shuffle(lengths)
    return row_stack(np.round(lengths, 4), per_layer)


def default_inventory() -> Inventory:
    bins = [InventoryBin(f"R{lo}-{lo + 100}", lo / 1000, (lo + 100) / 1000, 15)
            for lo in range(400, 1600, 100)]
    bins.append(InventoryBin("N2438", 2.438, 2.438, math.inf, "new"))
    return Inventory(bins)
