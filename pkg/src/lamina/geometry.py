"""
Minimal geometry kernel: triangle meshes, planes, planar contours,
convex polygon clipping and stack-aligned oriented bounding boxes.

All lengths are meters. Points are numpy float arrays.
"""
from __future__ import annotations

import csv
import logging
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
from scipy.spatial import ConvexHull, QhullError, cKDTree

log = logging.getLogger(__name__)

WELD_TOL = 1e-7
ON_PLANE_TOL = 1e-12
UNIT_TOL = 1e-9


class GeometryError(ValueError):
    pass


class GeometryWarning(UserWarning):
    pass


def unit(v) -> np.ndarray:
    v = np.asarray(v, dtype=float)
    n = np.linalg.norm(v)
    if n == 0 or not np.isfinite(n):
        raise GeometryError("cannot normalize zero or non-finite vector")
    return v / n


def plane_basis(normal) -> tuple[np.ndarray, np.ndarray]:
    """Right-handed in-plane basis (u, v) with u x v = normal.

    Depends only on the normal, so parallel planes share 2D coordinates.
    """
    n = unit(normal)
    ref = np.array([0.0, 0.0, 1.0]) if abs(n[2]) < 0.9 else np.array([1.0, 0.0, 0.0])
    u = unit(ref - (ref @ n) * n)
    v = np.cross(n, u)
    return u, v


@dataclass(frozen=True)
class Plane:
    origin: np.ndarray
    normal: np.ndarray

    def __post_init__(self):
        origin = np.asarray(self.origin, dtype=float)
        normal = np.asarray(self.normal, dtype=float)
        if not np.all(np.isfinite(origin)) or not np.all(np.isfinite(normal)):
            raise GeometryError("plane components must be finite")
        if abs(np.linalg.norm(normal) - 1.0) > UNIT_TOL:
            raise GeometryError(f"plane normal must be unit length, got |n|={np.linalg.norm(normal)}")
        object.__setattr__(self, "origin", origin)
        object.__setattr__(self, "normal", normal)

    def signed_distance(self, points) -> np.ndarray:
        return (np.asarray(points, dtype=float) - self.origin) @ self.normal

    def to_2d(self, points) -> np.ndarray:
        u, v = plane_basis(self.normal)
        p = np.atleast_2d(np.asarray(points, dtype=float))
        return np.column_stack([p @ u, p @ v])

    def from_2d(self, uv) -> np.ndarray:
        u, v = plane_basis(self.normal)
        uv = np.atleast_2d(np.asarray(uv, dtype=float))
        offset = float(self.origin @ self.normal)
        return uv[:, :1] * u + uv[:, 1:2] * v + offset * self.normal


@dataclass
class TriMesh:
    vertices: np.ndarray
    faces: np.ndarray

    def __post_init__(self):
        self.vertices = np.asarray(self.vertices, dtype=float).reshape(-1, 3)
        faces = np.asarray(self.faces, dtype=np.int64).reshape(-1, 3)
        if not np.all(np.isfinite(self.vertices)):
            raise GeometryError("mesh vertices must be finite")
        if faces.size and (faces.min() < 0 or faces.max() >= len(self.vertices)):
            raise GeometryError("face index out of range")
        if faces.size:
            tri = self.vertices[faces]
            area2 = np.linalg.norm(np.cross(tri[:, 1] - tri[:, 0], tri[:, 2] - tri[:, 0]), axis=1)
            faces = faces[area2 > 1e-18]
        self.faces = faces

    @property
    def area(self) -> float:
        tri = self.vertices[self.faces]
        return 0.5 * float(np.linalg.norm(np.cross(tri[:, 1] - tri[:, 0], tri[:, 2] - tri[:, 0]), axis=1).sum())

    def is_empty(self) -> bool:
        return len(self.faces) == 0


@dataclass
class ContourCurve:
    """Planar polyline parameterized by arc-length fraction.

    Closed contours store the first point again at the end, so
    ``cumulative_lengths[-1]`` is the perimeter.
    """

    plane: Plane
    points: np.ndarray
    closed: bool = False
    layer: int = 0
    cumulative_lengths: np.ndarray = field(init=False)

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=float).reshape(-1, 3)
        if self.closed and len(pts) > 1 and np.linalg.norm(pts[0] - pts[-1]) > WELD_TOL:
            pts = np.vstack([pts, pts[:1]])
        if len(pts) < 2:
            raise GeometryError("contour needs at least 2 points")
        steps = np.linalg.norm(np.diff(pts, axis=0), axis=1)
        if np.any(steps <= 0):
            raise GeometryError("contour has coincident consecutive points")
        self.points = pts
        self.cumulative_lengths = np.concatenate([[0.0], np.cumsum(steps)])

    @property
    def length(self) -> float:
        return float(self.cumulative_lengths[-1])

    def evaluate(self, t) -> np.ndarray:
        """Point(s) at arc-length fraction t in [0, 1]."""
        t = np.clip(np.asarray(t, dtype=float), 0.0, 1.0)
        s = t * self.length
        out = np.column_stack([np.interp(s, self.cumulative_lengths, self.points[:, k]) for k in range(3)])
        return out[0] if out.shape[0] == 1 and np.ndim(t) == 0 else out

    def tangent(self, t: float) -> np.ndarray:
        s = float(np.clip(t, 0.0, 1.0)) * self.length
        k = int(np.searchsorted(self.cumulative_lengths, s, side="right")) - 1
        k = min(max(k, 0), len(self.points) - 2)
        return unit(self.points[k + 1] - self.points[k])


@dataclass
class Obb:
    center: np.ndarray
    axes: np.ndarray  # rows are box axes; axes[2] is the stacking axis
    half_extents: np.ndarray

    @property
    def extents(self) -> np.ndarray:
        return 2.0 * self.half_extents

    @property
    def volume(self) -> float:
        return float(np.prod(self.extents))

    def contains(self, points, tol: float = 1e-9) -> bool:
        local = (np.atleast_2d(points) - self.center) @ self.axes.T
        return bool(np.all(np.abs(local) <= self.half_extents + tol))

    def corners(self) -> np.ndarray:
        signs = np.array([[sx, sy, sz] for sx in (-1, 1) for sy in (-1, 1) for sz in (-1, 1)], dtype=float)
        return self.center + (signs * self.half_extents) @ self.axes


# ---------------------------------------------------------------------------
# loft


def _as_polyline(guide) -> np.ndarray:
    if isinstance(guide, ContourCurve):
        return guide.points
    pts = np.asarray(guide, dtype=float).reshape(-1, 3)
    return pts


def resample_polyline(points: np.ndarray, count: int) -> np.ndarray:
    """``count`` points at equal arc-length spacing along a polyline."""
    steps = np.linalg.norm(np.diff(points, axis=0), axis=1)
    cum = np.concatenate([[0.0], np.cumsum(steps)])
    s = np.linspace(0.0, cum[-1], count)
    return np.column_stack([np.interp(s, cum, points[:, k]) for k in range(3)])


def loft_mesh(guides: Sequence, samples_u: int, samples_v: int) -> TriMesh:
    """Ruled loft through an ordered list of guide polylines.

    Each guide is resampled to ``samples_u`` points by arc length; rows
    between guides are linear blends, giving a ``samples_v`` x ``samples_u``
    vertex grid whose first and last rows are the outer guides.
    """
    if len(guides) < 2:
        raise GeometryError("insufficient guides: need at least 2")
    if samples_u < 2 or samples_v < 2:
        raise GeometryError("samples_u and samples_v must be >= 2")
    polys = []
    for g in guides:
        pts = _as_polyline(g)
        if len(pts) < 2:
            raise GeometryError("each guide needs at least 2 points")
        if np.any(np.linalg.norm(np.diff(pts, axis=0), axis=1) <= 0):
            raise GeometryError("guide has coincident consecutive points")
        polys.append(resample_polyline(pts, samples_u))
    stack = np.stack(polys)  # (G, U, 3)

    g = np.linspace(0.0, len(polys) - 1, samples_v)
    lo = np.minimum(np.floor(g).astype(int), len(polys) - 2)
    w = (g - lo)[:, None, None]
    grid = (1 - w) * stack[lo] + w * stack[lo + 1]  # (V, U, 3)

    vertices = grid.reshape(-1, 3)
    idx = np.arange(samples_v * samples_u).reshape(samples_v, samples_u)
    a, b = idx[:-1, :-1].ravel(), idx[:-1, 1:].ravel()
    c, d = idx[1:, :-1].ravel(), idx[1:, 1:].ravel()
    faces = np.concatenate([np.column_stack([a, b, d]), np.column_stack([a, d, c])])
    return TriMesh(vertices, faces)


# ---------------------------------------------------------------------------
# slicing


def _plane_segments(mesh: TriMesh, plane: Plane) -> np.ndarray:
    """Raw plane-triangle intersection segments, shape (m, 2, 3)."""
    dist = plane.signed_distance(mesh.vertices)
    dist[np.abs(dist) < ON_PLANE_TOL] = 0.0
    d = dist[mesh.faces]
    tri = mesh.vertices[mesh.faces]
    candidates = np.nonzero((d.min(axis=1) <= 0) & (d.max(axis=1) >= 0) & np.any(d != 0, axis=1))[0]
    segs = []
    for f in candidates:
        df, pf = d[f], tri[f]
        pts = []
        for k in range(3):
            if df[k] == 0:
                pts.append(pf[k])
        for k in range(3):
            a, b = k, (k + 1) % 3
            if df[a] * df[b] < 0:
                w = df[a] / (df[a] - df[b])
                pts.append(pf[a] + w * (pf[b] - pf[a]))
        if len(pts) == 2 and np.linalg.norm(pts[0] - pts[1]) > WELD_TOL:
            segs.append(pts)
    if not segs:
        return np.zeros((0, 2, 3))
    return np.asarray(segs)


def _weld(points: np.ndarray, tol: float) -> np.ndarray:
    """Map each point to a representative index; points within tol merge."""
    parent = np.arange(len(points))

    def find(i):
        while parent[i] != i:
            parent[i] = parent[parent[i]]
            i = parent[i]
        return i

    for i, j in sorted(cKDTree(points).query_pairs(tol)):
        ri, rj = find(i), find(j)
        if ri != rj:
            parent[max(ri, rj)] = min(ri, rj)
    roots = np.array([find(i) for i in range(len(points))])
    _, labels = np.unique(roots, return_inverse=True)
    return labels


def chain_segments(segments: np.ndarray, tol: float = WELD_TOL):
    """Chain segments into maximal polylines.

    Returns ``(chains, junctions)`` where each chain is ``(points, closed)``
    and ``junctions`` counts nodes with three or more incident segments,
    at which chains are split.
    """
    if len(segments) == 0:
        return [], 0
    flat = segments.reshape(-1, 3)
    labels = _weld(flat, tol)
    node_pos = np.zeros((labels.max() + 1, 3))
    node_pos[labels] = flat
    edges = []
    seen = set()
    for a, b in labels.reshape(-1, 2):
        if a == b:
            continue
        key = (min(a, b), max(a, b))
        if key in seen:
            continue
        seen.add(key)
        edges.append(key)
    adj: dict[int, list[int]] = {}
    for e, (a, b) in enumerate(edges):
        adj.setdefault(a, []).append(e)
        adj.setdefault(b, []).append(e)
    degree = {n: len(es) for n, es in adj.items()}
    junctions = sum(1 for d in degree.values() if d >= 3)
    used = np.zeros(len(edges), dtype=bool)

    def walk(start, first_edge):
        nodes = [start]
        e, cur = first_edge, start
        while True:
            used[e] = True
            a, b = edges[e]
            cur = b if a == cur else a
            nodes.append(cur)
            if degree[cur] != 2:
                break
            nxt = [x for x in adj[cur] if not used[x]]
            if not nxt:
                break
            e = nxt[0]
        return nodes

    chains = []
    for n in sorted(adj):
        if degree[n] != 2:
            for e in adj[n]:
                if not used[e]:
                    nodes = walk(n, e)
                    chains.append((node_pos[nodes], False))
    for n in sorted(adj):
        for e in adj[n]:
            if not used[e]:
                nodes = walk(n, e)
                closed = nodes[0] == nodes[-1]
                pts = node_pos[nodes[:-1]] if closed else node_pos[nodes]
                chains.append((pts, closed))
    return chains, junctions


def _orient_chain(points: np.ndarray, closed: bool, normal: np.ndarray) -> np.ndarray:
    """Deterministic orientation shared by all parallel planes."""
    u, v = plane_basis(normal)
    uv = np.column_stack([points @ u, points @ v])
    if closed:
        x, y = uv[:, 0], uv[:, 1]
        signed = 0.5 * np.sum(x * np.roll(y, -1) - np.roll(x, -1) * y)
        if signed < 0:
            points, uv = points[::-1], uv[::-1]
        start = int(np.lexsort((uv[:, 1], uv[:, 0]))[0])
        return np.roll(points, -start, axis=0)
    first, last = tuple(np.round(uv[0], 9)), tuple(np.round(uv[-1], 9))
    return points[::-1] if last < first else points


def slice_positions(lo: float, hi: float, spacing: float, offset: float) -> np.ndarray:
    """Plane positions ``lo + offset + k * spacing`` that fall inside [lo, hi]."""
    k_max = int(np.floor((hi - lo - offset) / spacing + 1e-9))
    if k_max < 0:
        return np.zeros(0)
    return lo + offset + spacing * np.arange(k_max + 1)


def slice_contours(mesh: TriMesh, axis, spacing: float, offset: float) -> list[ContourCurve]:
    """Intersect a mesh with equally spaced planes normal to ``axis``.

    Plane positions are measured along ``axis`` from the mesh's minimum
    projection, starting at ``offset``. Each returned contour carries the
    index of its plane in ``layer``. Contours come back ordered by plane,
    then by chain order within the plane.
    """
    axis = np.asarray(axis, dtype=float)
    if abs(np.linalg.norm(axis) - 1.0) > UNIT_TOL:
        raise GeometryError("slicing axis must be a unit vector")
    if spacing <= 0:
        raise GeometryError("spacing must be positive")
    if mesh.is_empty():
        raise GeometryError("mesh is empty")
    proj = mesh.vertices @ axis
    positions = slice_positions(proj.min(), proj.max(), spacing, offset)
    contours: list[ContourCurve] = []
    for k, pos in enumerate(positions):
        plane = Plane(pos * axis, axis)
        chains, junctions = chain_segments(_plane_segments(mesh, plane))
        if junctions:
            warnings.warn(f"plane {k}: {junctions} ambiguous junction(s) split into separate contours", GeometryWarning)
        for pts, closed in chains:
            pts = _orient_chain(pts, closed, axis)
            try:
                contours.append(ContourCurve(plane, pts, closed=closed, layer=k))
            except GeometryError:
                log.debug("dropping degenerate chain on plane %d", k)
    if not contours:
        warnings.warn("slicing produced no contours", GeometryWarning)
    return contours


# ---------------------------------------------------------------------------
# 2D polygons


def polygon_area(poly) -> float:
    """Signed area (positive for CCW)."""
    p = np.asarray(poly, dtype=float)
    if len(p) < 3:
        return 0.0
    x, y = p[:, 0], p[:, 1]
    return 0.5 * float(np.sum(x * np.roll(y, -1) - np.roll(x, -1) * y))


def is_convex(poly, tol: float = 1e-12) -> bool:
    p = np.asarray(poly, dtype=float)
    if len(p) < 3:
        return False
    e = np.roll(p, -1, axis=0) - p
    cross = e[:, 0] * np.roll(e[:, 1], -1) - e[:, 1] * np.roll(e[:, 0], -1)
    scale = max(float(np.abs(p).max()), 1.0) ** 2
    return bool(np.all(cross >= -tol * scale) or np.all(cross <= tol * scale))


def dedupe_ring(poly, tol: float = 1e-12) -> np.ndarray:
    p = np.asarray(poly, dtype=float).reshape(-1, 2)
    if len(p) == 0:
        return p
    keep = [p[0]]
    for q in p[1:]:
        if np.linalg.norm(q - keep[-1]) > tol:
            keep.append(q)
    while len(keep) > 1 and np.linalg.norm(keep[0] - keep[-1]) <= tol:
        keep.pop()
    return np.asarray(keep)


def clip_halfplane(poly: np.ndarray, a: np.ndarray, b: np.ndarray, shift: float = 0.0) -> np.ndarray:
    """Keep the part of ``poly`` left of the directed line a->b moved left by ``shift``."""
    if len(poly) == 0:
        return poly
    d = b - a
    n = np.array([-d[1], d[0]]) / np.linalg.norm(d)
    side = (poly - a) @ n - shift
    out = []
    for k in range(len(poly)):
        p, q = poly[k], poly[(k + 1) % len(poly)]
        sp, sq = side[k], side[(k + 1) % len(poly)]
        if sp >= 0:
            out.append(p)
        if (sp >= 0) != (sq >= 0):
            w = sp / (sp - sq)
            out.append(p + w * (q - p))
    return np.asarray(out).reshape(-1, 2)


def _ccw(poly, name: str) -> np.ndarray:
    p = dedupe_ring(poly)
    if len(p) < 3 or not is_convex(p):
        raise GeometryError(f"{name} polygon must be convex with at least 3 vertices")
    if polygon_area(p) < 0:
        p = p[::-1]
    return p


def convex_clip(subject, clip, area_tol: float = 1e-18) -> np.ndarray:
    """Intersection of two convex polygons (Sutherland-Hodgman).

    Clockwise inputs are reoriented; non-convex inputs raise. Returns a CCW
    vertex array, or an empty (0, 2) array when the overlap has no area.
    """
    out = _ccw(subject, "subject")
    c = _ccw(clip, "clip")
    for k in range(len(c)):
        out = clip_halfplane(out, c[k], c[(k + 1) % len(c)])
        if len(out) == 0:
            break
    out = dedupe_ring(out)
    if len(out) < 3 or polygon_area(out) <= area_tol:
        return np.zeros((0, 2))
    return out


def point_in_convex(poly, pt, tol: float = 1e-9) -> bool:
    p = np.asarray(poly, dtype=float)
    e = np.roll(p, -1, axis=0) - p
    r = np.asarray(pt, dtype=float) - p
    cross = e[:, 0] * r[:, 1] - e[:, 1] * r[:, 0]
    lens = np.linalg.norm(e, axis=1)
    return bool(np.all(cross / lens >= -tol))


# ---------------------------------------------------------------------------
# oriented bounding box


def _hull_2d(pts: np.ndarray) -> np.ndarray:
    uniq = np.unique(np.round(pts, 12), axis=0)
    if len(uniq) < 3:
        return uniq
    try:
        return uniq[ConvexHull(uniq).vertices]
    except QhullError:
        # collinear: keep the two extreme points
        d = uniq - uniq[0]
        direction = d[np.argmax(np.linalg.norm(d, axis=1))]
        s = d @ direction
        return uniq[[np.argmin(s), np.argmax(s)]]


def min_area_rect(pts2d) -> tuple[float, np.ndarray, np.ndarray, np.ndarray]:
    """Minimum-area enclosing rectangle of 2D points.

    One side of the optimum is flush with a hull edge, so only hull-edge
    directions are tried. Returns (area, center, axis_u, half_extents).
    """
    hull = _hull_2d(np.asarray(pts2d, dtype=float))
    if len(hull) == 1:
        return 0.0, hull[0].copy(), np.array([1.0, 0.0]), np.zeros(2)
    edges = np.roll(hull, -1, axis=0) - hull
    lens = np.linalg.norm(edges, axis=1)
    dirs = edges[lens > 0] / lens[lens > 0, None]
    perp = np.column_stack([-dirs[:, 1], dirs[:, 0]])
    pu = hull @ dirs.T  # (n, E)
    pv = hull @ perp.T
    w = pu.max(axis=0) - pu.min(axis=0)
    h = pv.max(axis=0) - pv.min(axis=0)
    area = w * h
    best = int(np.argmin(area))
    u, v = dirs[best], perp[best]
    cu = 0.5 * (pu[:, best].max() + pu[:, best].min())
    cv = 0.5 * (pv[:, best].max() + pv[:, best].min())
    return float(area[best]), cu * u + cv * v, u, np.array([w[best], h[best]]) / 2


def min_obb(points, stack_axis) -> Obb:
    """Smallest box with one axis along ``stack_axis`` enclosing ``points``."""
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    if pts.size == 0:
        raise GeometryError("min_obb needs at least one point")
    n = unit(stack_axis)
    u, v = plane_basis(n)
    uv = np.column_stack([pts @ u, pts @ v])
    _, c2, a2, half2 = min_area_rect(uv)
    ax_u = a2[0] * u + a2[1] * v
    ax_v = np.cross(n, ax_u)
    s = pts @ n
    center = c2[0] * u + c2[1] * v + 0.5 * (s.max() + s.min()) * n
    half = np.array([half2[0], half2[1], 0.5 * (s.max() - s.min())])
    return Obb(center, np.vstack([ax_u, ax_v, n]), half)


# ---------------------------------------------------------------------------
# file formats


def write_obj(mesh: TriMesh, path) -> None:
    lines = [f"v {x!r} {y!r} {z!r}" for x, y, z in mesh.vertices.tolist()]
    lines += [f"f {a + 1} {b + 1} {c + 1}" for a, b, c in mesh.faces.tolist()]
    Path(path).write_text("\n".join(lines) + "\n")


def read_obj(path) -> TriMesh:
    verts, faces = [], []
    for line in Path(path).read_text().splitlines():
        parts = line.split()
        if not parts or parts[0].startswith("#"):
            continue
        if parts[0] == "v":
            verts.append([float(x) for x in parts[1:4]])
        elif parts[0] == "f":
            idx = [int(p.split("/")[0]) for p in parts[1:]]
            idx = [i - 1 if i > 0 else len(verts) + i for i in idx]
            for k in range(1, len(idx) - 1):  # fan-triangulate polygons
                faces.append([idx[0], idx[k], idx[k + 1]])
    return TriMesh(np.array(verts), np.array(faces, dtype=np.int64).reshape(-1, 3))


def contours_to_rows(contours: Iterable[ContourCurve]) -> list[tuple]:
    rows = []
    for i, c in enumerate(contours):
        ts = c.cumulative_lengths / c.length
        for t, p in zip(ts, c.points):
            rows.append((i, float(t), float(p[0]), float(p[1]), float(p[2])))
    return rows


def write_contours_csv(contours: Iterable[ContourCurve], path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["contour_index", "t", "x", "y", "z"])
        for r in contours_to_rows(contours):
            w.writerow([r[0]] + [repr(x) for x in r[1:]])
