"""Pickup-station perception on synthetic contours.

Board outlines are sampled in the station frame, jittered, pushed through the
camera homography into image space, then brought back with a homography
estimated from fiducial correspondences. Simplification and shape filters
turn each contour into a four-point board or reject it.
"""
from __future__ import annotations

import csv
import itertools
import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .layout import MANUAL_CUT_THRESHOLD


class PerceptionError(ValueError):
    pass


# -- homography -----------------------------------------------------------------


def apply_homography(H: np.ndarray, pts) -> np.ndarray:
    p = np.atleast_2d(np.asarray(pts, dtype=float))
    h = np.hstack([p, np.ones((len(p), 1))]) @ np.asarray(H, dtype=float).T
    return h[:, :2] / h[:, 2:3]


def _has_collinear_triple(pts: np.ndarray, rel_tol: float = 1e-9) -> bool:
    scale = max(float(np.ptp(pts, axis=0).max()), 1e-300)
    for a, b, c in itertools.combinations(range(len(pts)), 3):
        u, v = pts[b] - pts[a], pts[c] - pts[a]
        if abs(u[0] * v[1] - u[1] * v[0]) <= rel_tol * scale * scale:
            return True
    return False


def _normalizer(pts: np.ndarray) -> np.ndarray:
    c = pts.mean(axis=0)
    d = np.sqrt(((pts - c) ** 2).sum(axis=1)).mean()
    s = math.sqrt(2) / d if d > 0 else 1.0
    return np.array([[s, 0, -s * c[0]], [0, s, -s * c[1]], [0, 0, 1.0]])


def estimate_homography(correspondences) -> tuple[np.ndarray, float]:
    """Normalized DLT for the map image -> station.

    ``correspondences`` is a sequence of (image_pt, station_pt) pairs. Returns
    the matrix scaled to h33 = 1 and the RMS reprojection error in station
    units.
    """
    pairs = [(np.asarray(a, float), np.asarray(b, float)) for a, b in correspondences]
    if len(pairs) < 4:
        raise PerceptionError("need at least 4 correspondences")
    src = np.array([a for a, _ in pairs])
    dst = np.array([b for _, b in pairs])
    if _has_collinear_triple(src) or _has_collinear_triple(dst):
        raise PerceptionError("degenerate configuration: three collinear points")
    Ts, Td = _normalizer(src), _normalizer(dst)
    s = apply_homography(Ts, src)
    d = apply_homography(Td, dst)
    rows = []
    for (x, y), (u, v) in zip(s, d):
        rows.append([-x, -y, -1, 0, 0, 0, u * x, u * y, u])
        rows.append([0, 0, 0, -x, -y, -1, v * x, v * y, v])
    _, sv, vt = np.linalg.svd(np.array(rows))
    if sv[-2] < 1e-12 * sv[0]:
        raise PerceptionError("degenerate configuration: rank deficient system")
    Hn = vt[-1].reshape(3, 3)
    H = np.linalg.inv(Td) @ Hn @ Ts
    if abs(H[2, 2]) < 1e-15:
        raise PerceptionError("degenerate configuration: h33 vanishes")
    H = H / H[2, 2]
    rms = float(np.sqrt(np.mean(np.sum((apply_homography(H, src) - dst) ** 2, axis=1))))
    return H, rms


# -- simplification -------------------------------------------------------------


def _seg_dist(pts: np.ndarray, a: np.ndarray, b: np.ndarray) -> np.ndarray:
    ab = b - a
    L2 = float(ab @ ab)
    if L2 == 0:
        return np.linalg.norm(pts - a, axis=1)
    t = np.clip((pts - a) @ ab / L2, 0.0, 1.0)
    return np.linalg.norm(pts - (a + t[:, None] * ab), axis=1)


def _rdp_mask(P: np.ndarray, epsilon: float) -> np.ndarray:
    keep = np.zeros(len(P), dtype=bool)
    keep[0] = keep[-1] = True
    stack = [(0, len(P) - 1)]
    while stack:
        i, j = stack.pop()
        if j - i < 2:
            continue
        d = _seg_dist(P[i + 1:j], P[i], P[j])
        k = int(np.argmax(d))
        if d[k] >= epsilon:
            m = i + 1 + k
            keep[m] = True
            stack += [(i, m), (m, j)]
    return keep


def simplify_rdp(polyline, epsilon: float) -> np.ndarray:
    """Ramer-Douglas-Peucker on an open polyline. A point is dropped only when
    its distance to the kept segment is strictly below ``epsilon``."""
    P = np.asarray(polyline, dtype=float)
    if len(P) < 2:
        raise PerceptionError("need at least 2 points")
    if epsilon < 0:
        raise PerceptionError("epsilon must be >= 0")
    return P[_rdp_mask(P, epsilon)]


def simplify_closed(ring, epsilon: float) -> np.ndarray:
    """RDP on a closed ring (no repeated end point).

    The ring is split at the point farthest from the centroid and at the point
    farthest from that one. Those split points are arbitrary, so afterwards a
    kept vertex is dropped when every ring point between its neighbours stays
    within epsilon of the merged edge.
    """
    R = np.asarray(ring, dtype=float)
    n = len(R)
    if n < 4:
        return R.copy()
    a = int(np.argmax(np.linalg.norm(R - R.mean(axis=0), axis=1)))
    R = np.roll(R, -a, axis=0)
    b = int(np.argmax(np.linalg.norm(R - R[0], axis=1)))
    first = np.nonzero(_rdp_mask(R[:b + 1], epsilon))[0]
    second = np.nonzero(_rdp_mask(np.vstack([R[b:], R[:1]]), epsilon))[0] + b
    keep = sorted(set(first.tolist()) | set(second[:-1].tolist()))
    changed = True
    while changed and len(keep) > 3:
        changed = False
        for k in range(len(keep)):
            i, m = keep[k - 1], keep[(k + 1) % len(keep)]
            span = np.arange(i + 1, m + (n if m <= i else 0)) % n
            if np.all(_seg_dist(R[span], R[i], R[m]) < epsilon):
                del keep[k]
                changed = True
                break
    return R[keep]


# -- scenes ---------------------------------------------------------------------


@dataclass
class TrueBoard:
    length: float
    width: float
    pose: tuple[float, float, float]  # x, y, theta

    def corners(self) -> np.ndarray:
        x, y, th = self.pose
        c, s = math.cos(th), math.sin(th)
        hl, hw = self.length / 2, self.width / 2
        local = np.array([[-hl, -hw], [hl, -hw], [hl, hw], [-hl, hw]])
        return local @ np.array([[c, s], [-s, c]]) + [x, y]


@dataclass
class Blob:
    center: tuple[float, float]
    radius: float


DEFAULT_FIDUCIALS = ((0.0, 0.0), (2.0, 0.0), (2.0, 1.2), (0.0, 1.2), (0.7, 0.4))


@dataclass
class PickupScene:
    true_boards: list[TrueBoard]
    camera_homography: np.ndarray = field(default_factory=lambda: np.eye(3))
    noise: float = 0.0
    seed: int = 0
    blobs: list[Blob] = field(default_factory=list)
    fiducials: Sequence[tuple[float, float]] = DEFAULT_FIDUCIALS
    point_spacing: float = 0.02

    def __post_init__(self):
        self.camera_homography = np.asarray(self.camera_homography, dtype=float)
        if self.camera_homography.shape != (3, 3) or abs(np.linalg.det(self.camera_homography)) < 1e-12:
            raise PerceptionError("camera homography must be an invertible 3x3 matrix")
        if self.noise < 0:
            raise PerceptionError("noise must be >= 0")

    def correspondences(self) -> list[tuple[np.ndarray, np.ndarray]]:
        st = np.asarray(self.fiducials, dtype=float)
        im = apply_homography(self.camera_homography, st)
        return list(zip(im, st))

    def image_contours(self) -> list[np.ndarray]:
        """Noisy contours in image coordinates: boards first, then blobs."""
        rng = np.random.default_rng(self.seed)
        rings = [_sample_polygon(b.corners(), self.point_spacing) for b in self.true_boards]
        for blob in self.blobs:
            n = max(16, int(2 * math.pi * blob.radius / self.point_spacing))
            a = np.linspace(0, 2 * math.pi, n, endpoint=False)
            rings.append(np.c_[np.cos(a), np.sin(a)] * blob.radius + blob.center)
        out = []
        for r in rings:
            if self.noise > 0:
                r = r + rng.normal(0.0, self.noise, r.shape)
            out.append(apply_homography(self.camera_homography, r))
        return out

    @classmethod
    def from_dict(cls, d: dict) -> "PickupScene":
        return cls(
            [TrueBoard(b["length"], b["width"], tuple(b["pose"])) for b in d.get("true_boards", [])],
            np.asarray(d.get("camera_homography", np.eye(3)), dtype=float),
            float(d.get("noise", 0.0)),
            int(d.get("seed", 0)),
            [Blob(tuple(b["center"]), b["radius"]) for b in d.get("blobs", [])],
        )


def _sample_polygon(corners: np.ndarray, spacing: float) -> np.ndarray:
    pts = []
    for a, b in zip(corners, np.roll(corners, -1, axis=0)):
        n = max(2, int(math.ceil(np.linalg.norm(b - a) / spacing)))
        t = np.arange(n)[:, None] / n
        pts.append(a + t * (b - a))
    return np.vstack(pts)


# -- detection ------------------------------------------------------------------


@dataclass
class Thresholds:
    min_area: float = 0.01
    max_area: float = 0.3
    min_aspect: float = 3.0
    epsilon: float = 0.01
    max_vertices: int = 8


@dataclass
class BoardDetection:
    id: int
    contour4: np.ndarray
    pose: tuple[float, float, float]
    length: float
    width: float

    def to_record(self) -> dict:
        return {"id": self.id, "x": self.pose[0], "y": self.pose[1], "theta": self.pose[2],
                "length": self.length, "width": self.width}


def _intersect(l1, l2) -> np.ndarray:
    (p, d), (q, e) = l1, l2
    A = np.array([d, -e]).T
    t = np.linalg.solve(A, q - p)
    return p + t[0] * d


def _collapse(P: list, k: int) -> list:
    """Replace edge k by the intersection of its neighbouring edges."""
    n = len(P)
    a, b = P[k - 1], P[k]
    c, d = P[(k + 1) % n], P[(k + 2) % n]
    try:
        x = _intersect((a, b - a), (d, c - d))
    except np.linalg.LinAlgError:
        x = (b + c) / 2
    Q = list(P)
    Q[k] = x
    del Q[(k + 1) % n]
    return Q


def reduce_to_quad(poly: np.ndarray) -> np.ndarray:
    """Collapse edges, least area change first, until four vertices remain.

    A noisy corner often survives simplification as two nearby vertices, or
    as a short chamfer; intersecting the neighbouring edges restores it.
    """
    P = [np.asarray(p, dtype=float) for p in poly]
    while len(P) > 4:
        base = _signed_area(np.array(P))
        cands = [_collapse(P, k) for k in range(len(P))]
        P = min(cands, key=lambda Q: abs(_signed_area(np.array(Q)) - base))
    return np.array(P)


def ring_deviation(ring: np.ndarray, quad: np.ndarray) -> float:
    d = np.stack([_seg_dist(ring, quad[k], quad[(k + 1) % len(quad)]) for k in range(len(quad))], axis=1)
    return float(d.min(axis=1).max())


def refine_rectangle(ring: np.ndarray, quad: np.ndarray, exclude: float) -> np.ndarray:
    """Least-squares rectangle through the ring points.

    Points go to the nearest side of ``quad``; those within ``exclude`` of a
    corner are ignored. The long sides share one direction, fitted on both
    sides centred separately, and every side offset is the mean projection of
    its points. Returns corners counter-clockwise.
    """
    d = np.stack([_seg_dist(ring, quad[k], quad[(k + 1) % 4]) for k in range(4)], axis=1)
    side = np.argmin(d, axis=1)
    far = np.min(np.linalg.norm(ring[:, None, :] - quad[None], axis=2), axis=1) >= exclude
    groups = []
    for k in range(4):
        pts = ring[(side == k) & far]
        if len(pts) == 0:
            pts = ring[side == k]
        if len(pts) == 0:
            pts = quad[[k, (k + 1) % 4]]
        groups.append(pts)
    lens = np.linalg.norm(np.roll(quad, -1, axis=0) - quad, axis=1)
    lo = 0 if lens[0] + lens[2] >= lens[1] + lens[3] else 1
    long_sides = [groups[lo], groups[lo + 2]]
    centred = np.vstack([g - g.mean(axis=0) for g in long_sides])
    if len(centred) >= 2 and np.ptp(centred, axis=0).any():
        u = np.linalg.svd(centred)[2][0]
    else:
        u = quad[lo + 1] - quad[lo]
        u = u / np.linalg.norm(u)
    n = np.array([-u[1], u[0]])
    a0, a1 = sorted(float(np.mean(g @ n)) for g in long_sides)
    b0, b1 = sorted(float(np.mean(g @ u)) for g in (groups[1 - lo], groups[3 - lo]))
    rect = np.array([b0 * u + a0 * n, b1 * u + a0 * n, b1 * u + a1 * n, b0 * u + a1 * n])
    return rect if _signed_area(rect) > 0 else rect[::-1]


def measure_quad(quad: np.ndarray) -> tuple[tuple[float, float, float], float, float]:
    """Pose and dimensions from the midlines joining opposite edge midpoints."""
    mids = (quad + np.roll(quad, -1, axis=0)) / 2
    m1 = mids[2] - mids[0]
    m2 = mids[3] - mids[1]
    l1, l2 = float(np.linalg.norm(m1)), float(np.linalg.norm(m2))
    major = m1 if l1 >= l2 else m2
    theta = math.atan2(major[1], major[0]) % math.pi
    c = quad.mean(axis=0)
    return (float(c[0]), float(c[1]), theta), max(l1, l2), min(l1, l2)


def _signed_area(p: np.ndarray) -> float:
    x, y = p[:, 0], p[:, 1]
    return 0.5 * float(np.dot(x, np.roll(y, -1)) - np.dot(y, np.roll(x, -1)))


def _convex(p: np.ndarray) -> bool:
    e = np.roll(p, -1, axis=0) - p
    cr = e[:, 0] * np.roll(e[:, 1], -1) - e[:, 1] * np.roll(e[:, 0], -1)
    return bool(np.all(cr > 0) or np.all(cr < 0))


def detect_boards(scene: PickupScene, thresholds: Thresholds | None = None) -> list[BoardDetection]:
    th = thresholds or Thresholds()
    H, _ = estimate_homography(scene.correspondences())
    out = []
    for ring_img in scene.image_contours():
        ring = apply_homography(H, ring_img)
        simple = simplify_closed(ring, th.epsilon)
        if not 4 <= len(simple) <= th.max_vertices:
            continue
        simple = reduce_to_quad(simple)
        if not _convex(simple):
            continue
        quad = refine_rectangle(ring, simple, 2 * th.epsilon)
        if _signed_area(quad) < 0:
            quad = quad[::-1]
        if not _convex(quad) or ring_deviation(ring, quad) > 2 * th.epsilon:
            continue
        area = _signed_area(quad)
        pose, length, width = measure_quad(quad)
        if width <= 0 or length / width < th.min_aspect or not th.min_area <= area <= th.max_area:
            continue
        out.append(BoardDetection(len(out), quad, pose, length, width))
    return out


def write_detections_csv(dets: Sequence[BoardDetection], path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["id", "x", "y", "theta", "length", "width"])
        for d in dets:
            w.writerow([d.id, *(repr(float(v)) for v in (*d.pose, d.length, d.width))])


# -- selection ------------------------------------------------------------------


@dataclass
class Selection:
    detection: BoardDetection
    offcut: float
    skip_cut: bool = False


@dataclass
class NeedMaterial:
    target_length: float
    reason: str = "no detected board satisfies the cutting constraints"


def offcut_of(det: BoardDetection, target: float, kerf: float) -> float:
    return det.length - target - kerf


def select_board(detections: Sequence[BoardDetection], target_length: float, kerf: float = 0.004,
                 min_robotic: float = MANUAL_CUT_THRESHOLD,
                 scorer: Callable[[BoardDetection, float, float], float] = offcut_of,
                 precut_tol: float = 0.005) -> Selection | NeedMaterial:
    """Pick the board with the lowest score.

    Robotic targets need length >= target + kerf. Targets below
    ``min_robotic`` are cut by hand beforehand, so only a board already
    matching the target within ``precut_tol`` qualifies and the cut is skipped.
    """
    if target_length <= 0:
        raise PerceptionError("target length must be positive")
    if target_length < min_robotic:
        cands = [(abs(d.length - target_length), d.id, d) for d in detections
                 if abs(d.length - target_length) <= precut_tol]
        if not cands:
            return NeedMaterial(target_length, "no pre-cut board matches the manual target")
        _, _, d = min(cands, key=lambda t: t[:2])
        return Selection(d, d.length - target_length, skip_cut=True)
    cands = [(scorer(d, target_length, kerf), d.id, d) for d in detections
             if d.length >= target_length + kerf]
    if not cands:
        return NeedMaterial(target_length)
    s, _, d = min(cands, key=lambda t: t[:2])
    return Selection(d, offcut_of(d, target_length, kerf))
