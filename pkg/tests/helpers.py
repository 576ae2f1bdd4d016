"""Small builders for hand-made elements and layers."""
import numpy as np

from lamina.geometry import Plane, unit
from lamina.layout import TWO_BY_FOUR, Element, Layer

DEPTH = TWO_BY_FOUR[1]


def make_element(eid, layer, start, end, section=TWO_BY_FOUR, position=0):
    z = layer * section[1]
    a = np.array([start[0], start[1], z], dtype=float)
    b = np.array([end[0], end[1], z], dtype=float)
    x = unit(b - a)
    zn = np.array([0.0, 0.0, 1.0])
    y = np.cross(zn, x)
    pose = np.vstack([(a + b) / 2, x, y, zn])
    return Element(eid, layer, layer, position, (a, b), tuple(section), pose,
                   (Plane(a, -x), Plane(b, x)), "robotic" if np.linalg.norm(b - a) >= 0.35 else "manual")


def make_layer(index, elements, depth=DEPTH):
    return Layer(index, Plane([0, 0, index * depth], [0, 0, 1]), list(elements))


def stacked_wall(n_layers, n_pos=4, seg=0.5, ext=0.0889, section=TWO_BY_FOUR):
    """Straight checkerboard wall along x: layer i keeps positions with even i + j."""
    layers = []
    total = n_pos * seg
    for i in range(n_layers):
        elems = []
        for j in range(n_pos):
            if (i + j) % 2:
                continue
            s = max(0.0, j * seg - ext)
            e = min(total, (j + 1) * seg + ext)
            elems.append(make_element(f"E{i:03d}-{j:03d}", i, (s, 0), (e, 0), section, position=j))
        layers.append(make_layer(i, elems, section[1]))
    return layers
