"""Contours to timber elements: subdivision, masking, extension, element generation."""
from __future__ import annotations

import warnings
from dataclasses import dataclass, field, replace
from typing import Iterable, Mapping, Sequence

import numpy as np

from .geometry import ContourCurve, GeometryError, Plane, unit

INCH = 0.0254
NOMINAL_SECTIONS = {
    # nominal name -> (width, depth) in meters, dressed sizes
    "2x4": (3.5 * INCH, 1.5 * INCH),
    "2x6": (5.5 * INCH, 1.5 * INCH),
    "2x3": (2.5 * INCH, 1.5 * INCH),
}
TWO_BY_FOUR = NOMINAL_SECTIONS["2x4"]
MANUAL_CUT_THRESHOLD = 0.350


class LayoutError(ValueError):
    pass


class LayoutWarning(UserWarning):
    pass


@dataclass(frozen=True)
class Uniform:
    target_length: float


@dataclass(frozen=True)
class Table:
    values: tuple


@dataclass
class ParamSequence:
    contour_index: int
    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if v.ndim != 1 or len(v) < 2:
            raise LayoutError("parameter sequence needs at least two values")
        if v[0] != 0.0 or v[-1] != 1.0:
            raise LayoutError("parameter sequence must start at 0 and end at 1")
        if np.any(np.diff(v) <= 0):
            raise LayoutError("parameter sequence must be strictly increasing")
        self.values = v

    @property
    def intervals(self) -> int:
        return len(self.values) - 1


@dataclass
class Segment:
    contour_index: int
    layer: int
    position: int
    start: np.ndarray
    end: np.ndarray
    t_start: float
    t_end: float
    retained: bool = True
    prev_dir: np.ndarray | None = None
    next_dir: np.ndarray | None = None

    @property
    def key(self) -> tuple[int, int]:
        return (self.layer, self.position)

    @property
    def length(self) -> float:
        return float(np.linalg.norm(self.end - self.start))

    @property
    def direction(self) -> np.ndarray:
        return unit(self.end - self.start)


@dataclass
class MaskSpec:
    """Binary retain/cull pattern over (layer, position) cells.

    ``checkerboard`` keeps cells with even ``layer + position`` and then
    applies ``overrides``. ``table`` uses ``overrides`` as the full pattern
    with ``default`` for cells it does not list.
    """

    kind: str = "checkerboard"
    overrides: dict = field(default_factory=dict)
    default: int = 0

    def __post_init__(self):
        if self.kind not in ("checkerboard", "table"):
            raise LayoutError(f"unknown mask kind {self.kind!r}")
        self.overrides = {(int(i), int(j)): int(bool(v)) for (i, j), v in dict(self.overrides).items()}

    def value(self, layer: int, position: int) -> int:
        if (layer, position) in self.overrides:
            return self.overrides[(layer, position)]
        if self.kind == "checkerboard":
            return int((layer + position) % 2 == 0)
        return int(bool(self.default))


@dataclass
class ExtendedSegment:
    segment: Segment
    start: np.ndarray
    end: np.ndarray

    @property
    def length(self) -> float:
        return float(np.linalg.norm(self.end - self.start))


@dataclass
class Element:
    id: str
    contour_index: int
    layer: int
    position: int
    axis: tuple[np.ndarray, np.ndarray]
    cross_section: tuple[float, float]  # (width in plane, depth along stacking axis)
    pose: np.ndarray  # 4x3: origin, x, y, z
    cut_planes: tuple[Plane, Plane]
    cut_mode: str = "robotic"
    source: str = "unassigned"

    @property
    def length(self) -> float:
        return float(np.linalg.norm(self.axis[1] - self.axis[0]))

    @property
    def width(self) -> float:
        return self.cross_section[0]

    @property
    def depth(self) -> float:
        return self.cross_section[1]

    @property
    def volume(self) -> float:
        return self.length * self.width * self.depth

    @property
    def origin(self) -> np.ndarray:
        return self.pose[0]

    def corners(self) -> np.ndarray:
        """The 8 corners of the straight prism (cut planes ignored)."""
        o, x, y, z = self.pose
        hl, hw, hd = self.length / 2, self.width / 2, self.depth / 2
        return np.array([o + a * hl * x + b * hw * y + c * hd * z
                         for a in (-1, 1) for b in (-1, 1) for c in (-1, 1)])

    def footprint(self) -> np.ndarray:
        """Rectangle of the element in its layer plane, 3D, counter-clockwise about z."""
        o, x, y, _ = self.pose
        hl, hw = self.length / 2, self.width / 2
        return np.array([o - hl * x - hw * y, o + hl * x - hw * y, o + hl * x + hw * y, o - hl * x + hw * y])

    def to_record(self) -> dict:
        return {
            "id": self.id,
            "layer": self.layer,
            "contour": self.contour_index,
            "position": self.position,
            "length_m": self.length,
            "width_m": self.width,
            "depth_m": self.depth,
            "pose": [float(x) for x in self.pose.ravel()],
            "cut_planes": [float(x) for p in self.cut_planes for x in (*p.origin, *p.normal)],
            "cut_mode": self.cut_mode,
            "source": self.source,
        }


@dataclass
class Layer:
    index: int
    plane: Plane
    elements: list[Element] = field(default_factory=list)


# ---------------------------------------------------------------------------


def subdivide_contour(contour: ContourCurve, scheme, contour_index: int = 0) -> ParamSequence:
    if isinstance(scheme, Table):
        return ParamSequence(contour_index, np.asarray(scheme.values, dtype=float))
    if not isinstance(scheme, Uniform):
        raise LayoutError(f"unknown subdivision scheme {scheme!r}")
    if scheme.target_length <= 0:
        raise LayoutError("target length must be positive")
    if scheme.target_length > contour.length:
        warnings.warn(
            f"target length {scheme.target_length:.4f} m exceeds contour length {contour.length:.4f} m; using one interval",
            LayoutWarning,
        )
        m = 1
    else:
        m = max(1, int(round(contour.length / scheme.target_length)))
    values = np.linspace(0.0, 1.0, m + 1)
    values[0], values[-1] = 0.0, 1.0
    return ParamSequence(contour_index, values)


def build_segments(contour: ContourCurve, params: ParamSequence) -> list[Segment]:
    pts = contour.evaluate(params.values)
    segs = []
    n = params.intervals
    for j in range(n):
        a, b = pts[j], pts[j + 1]
        if np.linalg.norm(b - a) <= 1e-12:
            raise LayoutError(f"contour {params.contour_index} segment {j} has coincident endpoints")
        segs.append(Segment(params.contour_index, contour.layer, j, a.copy(), b.copy(),
                            float(params.values[j]), float(params.values[j + 1])))
    for j, s in enumerate(segs):
        if j > 0:
            s.prev_dir = segs[j - 1].direction
        elif contour.closed and n > 1:
            s.prev_dir = segs[-1].direction
        if j < n - 1:
            s.next_dir = segs[j + 1].direction
        elif contour.closed and n > 1:
            s.next_dir = segs[0].direction
    return segs


def apply_mask(segments: Sequence[Segment], mask: MaskSpec) -> list[Segment]:
    """Retained subset of ``segments``; every returned copy has ``retained=True``."""
    keys = {s.key for s in segments}
    missing = sorted(k for k in mask.overrides if k not in keys)
    if missing:
        raise LayoutError(f"mask override references nonexistent cells: {missing}")
    return [replace(s, retained=True) for s in segments if mask.value(*s.key)]


def partition_segments(segments: Sequence[Segment], mask: MaskSpec) -> tuple[list[Segment], list[Segment]]:
    kept = apply_mask(segments, mask)
    kept_keys = {(s.contour_index, s.position) for s in kept}
    culled = [replace(s, retained=False) for s in segments if (s.contour_index, s.position) not in kept_keys]
    return kept, culled


def extend_segments(retained: Sequence[Segment], extension: float,
                    contours: Sequence[ContourCurve] | Mapping[int, ContourCurve]) -> list[ExtendedSegment]:
    """Push both ends of each retained segment outward along its own axis.

    Ends sitting on the boundary of an open contour stay put. Raises if
    two retained segments on the same contour would run into each other.
    """
    if extension < 0:
        raise LayoutError("extension must be >= 0")
    out = []
    by_contour: dict[int, list[Segment]] = {}
    for s in retained:
        contour = contours[s.contour_index]
        d = s.direction
        grow_start = contour.closed or s.t_start > 0.0
        grow_end = contour.closed or s.t_end < 1.0
        start = s.start - d * extension if grow_start else s.start.copy()
        end = s.end + d * extension if grow_end else s.end.copy()
        out.append(ExtendedSegment(s, start, end))
        by_contour.setdefault(s.contour_index, []).append(s)

    offenders = []
    for ci, segs in by_contour.items():
        contour = contours[ci]
        segs = sorted(segs, key=lambda s: s.t_start)
        pairs = list(zip(segs, segs[1:]))
        if contour.closed and len(segs) > 1:
            pairs.append((segs[-1], segs[0]))
        for a, b in pairs:
            gap = ((b.t_start - a.t_end) % 1.0 if contour.closed else b.t_start - a.t_end) * contour.length
            if extension > 0 and gap < 2 * extension - 1e-12:
                offenders.append((a.key, b.key))
    if offenders:
        raise LayoutError(f"extension {extension} m makes same-layer segments overlap: {offenders}")
    return out


def _cut_normal(d_self: np.ndarray, d_other: np.ndarray | None, miter: bool) -> np.ndarray:
    if not miter or d_other is None:
        return d_self
    s = d_self + d_other
    if np.linalg.norm(s) < 1e-9:
        return d_self
    return unit(s)


def element_id(contour_index: int, position: int) -> str:
    return f"E{contour_index:03d}-{position:03d}"


def generate_elements(extended: Iterable[ExtendedSegment],
                      contours: Sequence[ContourCurve] | Mapping[int, ContourCurve],
                      cross_section=TWO_BY_FOUR,
                      miter: bool = False,
                      manual_cut_threshold: float = MANUAL_CUT_THRESHOLD,
                      layer_spacing: float | None = None) -> list[Layer]:
    """Build one straight prism per extended segment, grouped into layers.

    Pose rows are (origin, x, y, z) with x along the axis and z the layer
    plane normal. With ``miter`` the cut planes bisect the turn to the
    neighbouring segment on the same contour; otherwise they are square.
    """
    width, depth = (float(x) for x in cross_section)
    if width <= 0 or depth <= 0:
        raise LayoutError("cross-section dimensions must be positive")
    if layer_spacing is not None and abs(depth - layer_spacing) > 1e-9:
        warnings.warn(
            f"cross-section depth {depth:.4f} m differs from slicing spacing {layer_spacing:.4f} m; layers will gap or overlap",
            LayoutWarning,
        )
    layers: dict[int, Layer] = {}
    for ext in extended:
        s = ext.segment
        contour = contours[s.contour_index]
        z = contour.plane.normal
        x = unit(ext.end - ext.start)
        y = np.cross(z, x)
        origin = 0.5 * (ext.start + ext.end)
        length = ext.length
        if length <= 0:
            raise GeometryError(f"element {s.key} has zero length")
        n_start = _cut_normal(x, s.prev_dir, miter)
        n_end = _cut_normal(x, s.next_dir, miter)
        elem = Element(
            id=element_id(s.contour_index, s.position),
            contour_index=s.contour_index,
            layer=s.layer,
            position=s.position,
            axis=(ext.start.copy(), ext.end.copy()),
            cross_section=(width, depth),
            pose=np.vstack([origin, x, y, z]),
            cut_planes=(Plane(ext.start.copy(), -n_start), Plane(ext.end.copy(), n_end)),
            cut_mode="manual" if length < manual_cut_threshold else "robotic",
        )
        layer = layers.get(s.layer)
        if layer is None:
            layer = layers[s.layer] = Layer(s.layer, contour.plane)
        layer.elements.append(elem)
    result = [layers[k] for k in sorted(layers)]
    for layer in result:
        layer.elements.sort(key=lambda e: (e.contour_index, e.position))
    return result


def all_elements(layers: Iterable[Layer]) -> list[Element]:
    return [e for layer in layers for e in layer.elements]


def layout_contours(contours: Sequence[ContourCurve], scheme, mask: MaskSpec, extension: float,
                    cross_section=TWO_BY_FOUR, miter: bool = False,
                    manual_cut_threshold: float = MANUAL_CUT_THRESHOLD,
                    layer_spacing: float | None = None) -> tuple[list[Segment], list[Layer]]:
    """Subdivide, mask, extend and generate in one pass. Returns (all segments, layers)."""
    segments: list[Segment] = []
    for i, c in enumerate(contours):
        segments += build_segments(c, subdivide_contour(c, scheme, i))
    retained = apply_mask(segments, mask)
    extended = extend_segments(retained, extension, contours)
    layers = generate_elements(extended, contours, cross_section, miter, manual_cut_threshold, layer_spacing)
    return segments, layers
