"""Side-grain lap overlaps between adjacent layers and their nail layout."""
from __future__ import annotations

import csv
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np
from scipy.spatial import cKDTree

from .geometry import Plane, clip_halfplane, convex_clip, dedupe_ring, polygon_area
from .layout import Layer

MIN_OVERLAP_AREA = 1e-4
# edge distance for a 6d common nail, roughly ten shank diameters
NAIL_OFFSET = 0.019
NAIL_CLEARANCE = 0.01
SIMPLIFY_TOL = 1e-3


class OverlapError(ValueError):
    pass


@dataclass
class OverlapPolygon:
    layer_pair: tuple[int, int]
    element_pair: tuple[str, str]  # (lower layer element, upper layer element)
    polygon: np.ndarray  # CCW, interface-plane coordinates
    interface_plane: Plane

    @property
    def id(self) -> str:
        return f"O{self.layer_pair[1]:03d}:{self.element_pair[0]}:{self.element_pair[1]}"

    @property
    def area(self) -> float:
        return polygon_area(self.polygon)

    def centroid(self) -> np.ndarray:
        return self.polygon.mean(axis=0)


@dataclass
class NailPlacement:
    position: np.ndarray
    direction: np.ndarray
    overlap_id: str
    layer: int

    @property
    def parity(self) -> int:
        return self.layer % 2


@dataclass
class NailSchedule:
    overlaps: list[OverlapPolygon] = field(default_factory=list)
    nails: list[NailPlacement] = field(default_factory=list)
    skipped: list[str] = field(default_factory=list)  # overlap ids too small after offset

    def quad_overlaps(self, tol: float = SIMPLIFY_TOL) -> list[OverlapPolygon]:
        return [o for o in self.overlaps if len(simplify_convex(o.polygon, tol)) == 4]


def _footprint_2d(element, plane: Plane) -> np.ndarray:
    poly = plane.to_2d(element.footprint())
    return poly if polygon_area(poly) > 0 else poly[::-1]


def find_overlaps(layer_a: Layer, layer_b: Layer, min_area: float = MIN_OVERLAP_AREA) -> list[OverlapPolygon]:
    """Convex overlap regions of element footprints in two adjacent layers.

    Argument order does not matter: polygons are always clipped lower-onto-
    upper and reported with the lower layer first.
    """
    if abs(layer_a.index - layer_b.index) != 1:
        raise OverlapError(f"layers {layer_a.index} and {layer_b.index} are not adjacent")
    lower, upper = sorted((layer_a, layer_b), key=lambda L: L.index)
    n = lower.plane.normal
    if abs(abs(float(n @ upper.plane.normal)) - 1.0) > 1e-9:
        raise OverlapError("adjacent layers must be parallel")
    interface = Plane(0.5 * (lower.plane.origin + upper.plane.origin), n)
    feet_lo = [(e, _footprint_2d(e, interface)) for e in lower.elements]
    feet_up = [(e, _footprint_2d(e, interface)) for e in upper.elements]
    out = []
    for ea, pa in feet_lo:
        amin, amax = pa.min(axis=0), pa.max(axis=0)
        for eb, pb in feet_up:
            if np.any(pb.max(axis=0) < amin) or np.any(pb.min(axis=0) > amax):
                continue
            poly = convex_clip(pa, pb)
            if len(poly) and polygon_area(poly) >= min_area:
                out.append(OverlapPolygon((lower.index, upper.index), (ea.id, eb.id), poly, interface))
    out.sort(key=lambda o: (o.layer_pair, o.element_pair))
    return out


def offset_inward(poly, d: float) -> np.ndarray:
    """Move every edge of a convex CCW polygon inward by ``d``.

    Returns an empty (0, 2) array when the polygon is too small.
    """
    if d <= 0:
        raise ValueError("offset must be positive")
    p = poly.polygon if isinstance(poly, OverlapPolygon) else np.asarray(poly, dtype=float)
    p = dedupe_ring(p)
    if polygon_area(p) < 0:
        p = p[::-1]
    out = p
    for k in range(len(p)):
        out = clip_halfplane(out, p[k], p[(k + 1) % len(p)], shift=d)
        if len(out) == 0:
            break
    out = dedupe_ring(out, tol=1e-12)
    if len(out) < 3 or polygon_area(out) <= 1e-14:
        return np.zeros((0, 2))
    return out


def simplify_convex(poly, tol: float = SIMPLIFY_TOL) -> np.ndarray:
    """Drop vertices lying within ``tol`` of the chord through their neighbours.

    On a convex polygon this only ever shrinks the region.
    """
    p = [np.asarray(v, dtype=float) for v in dedupe_ring(poly, tol=1e-9)]
    while len(p) > 3:
        dists = []
        for k in range(len(p)):
            a, v, b = p[k - 1], p[k], p[(k + 1) % len(p)]
            ab = b - a
            nab = np.linalg.norm(ab)
            dists.append(abs(ab[0] * (v[1] - a[1]) - ab[1] * (v[0] - a[0])) / nab if nab > 0 else 0.0)
        k = int(np.argmin(dists))
        if dists[k] >= tol:
            break
        p.pop(k)
    return np.asarray(p).reshape(-1, 2)


def sort_ccw(poly, reference_2d) -> np.ndarray:
    """Vertices in CCW order starting at the one closest to ``reference_2d``."""
    p = np.asarray(poly, dtype=float)
    c = p.mean(axis=0)
    ang = np.arctan2(p[:, 1] - c[1], p[:, 0] - c[0])
    p = p[np.argsort(ang, kind="stable")]
    start = int(np.argmin(np.linalg.norm(p - np.asarray(reference_2d), axis=1)))
    return np.roll(p, -start, axis=0)


def nail_mask(n_vertices: int, layer_index: int) -> np.ndarray:
    """Alternating vertex mask, starting with 1 on even layers and inverted on odd ones."""
    return ((np.arange(n_vertices) + layer_index) % 2 == 0).astype(int)


def nail_positions(offset_poly, layer_index: int, reference_point, plane: Plane,
                   overlap_id: str = "") -> list[NailPlacement]:
    p = np.asarray(offset_poly, dtype=float)
    if len(p) < 3:
        raise ValueError("degenerate polygon: need at least 3 vertices")
    ref2 = plane.to_2d(reference_point)[0]
    ordered = sort_ccw(p, ref2)
    mask = nail_mask(len(ordered), layer_index)
    pts3 = plane.from_2d(ordered[mask == 1])
    return [NailPlacement(q, plane.normal.copy(), overlap_id, layer_index) for q in pts3]


def place_nails(layers: Sequence[Layer], offset: float = NAIL_OFFSET, reference_point=None,
                min_area: float = MIN_OVERLAP_AREA, simplify_tol: float = SIMPLIFY_TOL) -> NailSchedule:
    """Overlaps and nails for every adjacent layer pair.

    Nail parity follows the upper layer of each interface. The reference
    point defaults to the minimum corner of the assembly bounding box.
    """
    layers = sorted(layers, key=lambda L: L.index)
    if reference_point is None:
        corners = [e.corners() for L in layers for e in L.elements]
        reference_point = np.vstack(corners).min(axis=0) if corners else np.zeros(3)
    sched = NailSchedule()
    for lo, up in zip(layers, layers[1:]):
        if up.index - lo.index != 1:
            continue
        for ov in find_overlaps(lo, up, min_area):
            sched.overlaps.append(ov)
            inner = offset_inward(ov, offset)
            if simplify_tol > 0 and len(inner):
                inner = simplify_convex(inner, simplify_tol)
            if len(inner) < 3:
                sched.skipped.append(ov.id)
                continue
            sched.nails += nail_positions(inner, up.index, reference_point, ov.interface_plane, ov.id)
    return sched


@dataclass
class ClearanceReport:
    violations: list[tuple[int, int, float]]  # (nail index, nail index, distance)
    checked_pairs: int

    @property
    def ok(self) -> bool:
        return not self.violations


def check_nail_clearance(nails: Sequence[NailPlacement], min_clearance: float = NAIL_CLEARANCE) -> ClearanceReport:
    """Flag nails on adjacent interfaces whose shanks pass closer than ``min_clearance``.

    Nails are parallel to the stacking axis and longer than one layer, so
    shanks on neighbouring interfaces overlap in height; their separation
    is the in-plane distance between positions.
    """
    by_layer: dict[int, list[int]] = {}
    for k, n in enumerate(nails):
        by_layer.setdefault(n.layer, []).append(k)
    violations = []
    checked = 0
    for layer in sorted(by_layer):
        if layer + 1 not in by_layer:
            continue
        a_idx, b_idx = by_layer[layer], by_layer[layer + 1]
        normal = nails[a_idx[0]].direction
        proj = np.eye(3) - np.outer(normal, normal)
        pa = np.array([nails[k].position for k in a_idx]) @ proj
        pb = np.array([nails[k].position for k in b_idx]) @ proj
        checked += len(a_idx) * len(b_idx)
        tree = cKDTree(pb)
        for ia, hits in enumerate(tree.query_ball_point(pa, min_clearance)):
            for ib in sorted(hits):
                dist = float(np.linalg.norm(pa[ia] - pb[ib]))
                if dist < min_clearance:
                    violations.append((a_idx[ia], b_idx[ib], dist))
    return ClearanceReport(violations, checked)


def write_nails_csv(nails: Iterable[NailPlacement], path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["overlap_id", "layer", "x", "y", "z", "nx", "ny", "nz"])
        for n in nails:
            w.writerow([n.overlap_id, n.layer, *(repr(float(v)) for v in n.position),
                        *(repr(float(v)) for v in n.direction)])


def write_overlaps_csv(overlaps: Iterable[OverlapPolygon], path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["overlap_id", "layer_lower", "layer_upper", "element_lower", "element_upper", "area_m2", "n_vertices", "polygon"])
        for o in overlaps:
            poly = " ".join(f"{x!r}:{y!r}" for x, y in o.polygon.tolist())
            w.writerow([o.id, o.layer_pair[0], o.layer_pair[1], *o.element_pair, repr(o.area), len(o.polygon), poly])
