"""Layer-by-layer fabrication of one subassembly with dimensional tolerance.

Each element goes through the loop: pick a board seen by the perception
stack, cut it (unless it was pre-cut by hand), scan its thickness, place it
on the measured support, scan its top and write the measurement back so the
next elements can adapt. Heights are coordinates along the stacking axis.
"""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np

from .geometry import convex_clip, plane_basis
from .inventory import KERF, MIN_USABLE, CutPlan, Inventory, return_offcut
from .layout import MANUAL_CUT_THRESHOLD, Element, Layer
from .perception import (
    NeedMaterial,
    PickupScene,
    Selection,
    Thresholds,
    TrueBoard,
    detect_boards,
    select_board,
)

STREAM_DIMS, STREAM_SCENE, STREAM_STOCK, STREAM_SCAN = 0, 1, 2, 3


class FabricationError(RuntimeError):
    pass


# -- tolerance --------------------------------------------------------------------


@dataclass
class Dist:
    kind: str = "gaussian"  # gaussian | uniform
    mu: float = 0.0
    spread: float = 0.0  # sigma for gaussian, half width for uniform

    def __post_init__(self):
        if self.kind not in ("gaussian", "uniform"):
            raise FabricationError(f"unknown distribution {self.kind!r}")
        if self.spread < 0:
            raise FabricationError("distribution spread must be >= 0")

    def sample(self, rng: np.random.Generator) -> float:
        if self.spread == 0:
            return self.mu
        if self.kind == "uniform":
            return self.mu + float(rng.uniform(-self.spread, self.spread))
        while True:  # truncated to +-3 sigma by rejection
            z = float(rng.standard_normal())
            if abs(z) <= 3.0:
                return self.mu + self.spread * z


@dataclass
class ToleranceModel:
    thickness: Dist = field(default_factory=Dist)
    length: Dist = field(default_factory=Dist)
    sensor_sigma: float = 0.0
    scan_step: float = 0.01

    def __post_init__(self):
        if self.sensor_sigma < 0 or self.scan_step <= 0:
            raise FabricationError("sensor sigma must be >= 0 and scan step > 0")

    @classmethod
    def gaussian(cls, thickness_sigma: float = 0.0005, length_sigma: float = 0.0, sensor_sigma: float = 0.0002,
                 scan_step: float = 0.01) -> "ToleranceModel":
        return cls(Dist("gaussian", 0.0, thickness_sigma), Dist("gaussian", 0.0, length_sigma), sensor_sigma, scan_step)


# -- scanning ---------------------------------------------------------------------


@dataclass
class SurfaceSegment:
    start: float
    end: float
    height: float  # at the segment midpoint
    slope: float = 0.0

    def at(self, s):
        return self.height + self.slope * (np.asarray(s) - 0.5 * (self.start + self.end))


@dataclass
class ScanCloud:
    positions: np.ndarray
    heights: np.ndarray
    sigma: float


def simulate_scan(surface: Sequence[SurfaceSegment], path: tuple[float, float], step: float,
                  sensor_sigma: float = 0.0, seed=0) -> ScanCloud:
    """Sample the surface at regular steps along the path. Positions not
    covered by any segment return nothing."""
    if step <= 0:
        raise FabricationError("scan step must be positive")
    s0, s1 = path
    n = int(math.floor((s1 - s0) / step + 1e-9)) + 1
    s = s0 + step * np.arange(max(n, 0))
    h = np.full(len(s), np.nan)
    for k, seg in enumerate(surface):
        last = k == len(surface) - 1
        m = (s >= seg.start) & ((s <= seg.end) if last else (s < seg.end)) & np.isnan(h)
        h[m] = seg.at(s[m])
    keep = ~np.isnan(h)
    s, h = s[keep], h[keep]
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    if sensor_sigma > 0:
        h = h + rng.normal(0.0, sensor_sigma, len(h))
    return ScanCloud(s, h, sensor_sigma)


@dataclass
class ProfileSegment:
    start: float
    end: float
    height: float  # mean of the fitted line over the cluster
    slope: float
    n_points: int
    merged: bool = False


def reconstruct_profile(cloud: ScanCloud, jump_threshold: float = 0.01) -> list[ProfileSegment]:
    """Cluster by height jumps, then least-squares line per cluster. A cluster
    with fewer than two points is merged into its neighbour and flagged."""
    s, h = np.asarray(cloud.positions, float), np.asarray(cloud.heights, float)
    if len(s) < 2:
        raise FabricationError("need at least 2 scan points")
    cuts = np.nonzero(np.abs(np.diff(h)) > jump_threshold)[0] + 1
    bounds = [0, *cuts.tolist(), len(s)]
    groups = [[a, b, False] for a, b in zip(bounds, bounds[1:])]
    k = 0
    while k < len(groups) and len(groups) > 1:
        a, b, _ = groups[k]
        if b - a >= 2:
            k += 1
            continue
        if k > 0:
            groups[k - 1][1] = b
            groups[k - 1][2] = True
            del groups[k]
        else:
            groups[1][0] = a
            groups[1][2] = True
            del groups[0]
    out = []
    for a, b, merged in groups:
        ss, hh = s[a:b], h[a:b]
        if np.ptp(ss) > 0:
            slope, icpt = np.polyfit(ss, hh, 1)
        else:
            slope, icpt = 0.0, float(hh.mean())
        out.append(ProfileSegment(float(ss[0]), float(ss[-1]), float(slope * ss.mean() + icpt), float(slope),
                                  b - a, merged))
    return out


def profile_height(segments: Sequence[ProfileSegment]) -> float:
    """Extent-weighted mean height of a reconstructed profile."""
    w = np.array([max(g.end - g.start, 0.0) + 1e-12 for g in segments])
    return float(np.dot(w, [g.height for g in segments]) / w.sum())


# -- as-built state ---------------------------------------------------------------


@dataclass
class AsBuiltElement:
    element_id: str
    layer: int
    footprint: np.ndarray  # 2D, in the stack plane basis
    bottom: float
    thickness: float
    length: float
    measured_top: float
    profile: list[ProfileSegment] = field(default_factory=list)

    @property
    def top(self) -> float:
        return self.bottom + self.thickness


@dataclass
class AsBuiltState:
    axis: np.ndarray
    records: list[AsBuiltElement] = field(default_factory=list)

    def __post_init__(self):
        self.axis = np.asarray(self.axis, dtype=float)
        self._u, self._v = plane_basis(self.axis)

    def to_2d(self, pts) -> np.ndarray:
        p = np.asarray(pts, dtype=float)
        return np.c_[p @ self._u, p @ self._v]

    def height(self, p) -> float:
        return float(np.asarray(p, dtype=float) @ self.axis)

    def layer_records(self, layer: int) -> list[AsBuiltElement]:
        return [r for r in self.records if r.layer == layer]

    def layer_profile(self, layer: int) -> list[tuple[str, list[ProfileSegment]]]:
        return [(r.element_id, r.profile) for r in self.layer_records(layer)]

    def support(self, footprint2d: np.ndarray, layer: int) -> tuple[float, float] | None:
        """(measured, true) support height under a footprint: overlap-area
        weighted tops of the layer below. None when nothing lies underneath."""
        w, meas, true = [], [], []
        for r in self.layer_records(layer - 1):
            ov = convex_clip(footprint2d, r.footprint)
            if len(ov) < 3:
                continue
            x, y = ov[:, 0], ov[:, 1]
            a = 0.5 * abs(float(np.dot(x, np.roll(y, -1)) - np.dot(y, np.roll(x, -1))))
            if a > 1e-9:
                w.append(a)
                meas.append(r.measured_top)
                true.append(r.top)
        if not w:
            return None
        w = np.asarray(w)
        return float(np.dot(w, meas) / w.sum()), float(np.dot(w, true) / w.sum())


def design_center(element: Element, axis: np.ndarray) -> float:
    return float(element.origin @ axis)


def plan_placement(element: Element, as_built: AsBuiltState, mode: str,
                   measured_thickness: float) -> tuple[float, float, float]:
    """Target centre height along the stack axis.

    Returns (target centre, measured support, true support). ``naive`` keeps
    the design height; ``adaptive`` puts the element on the measured support.
    The first layer, or an element with nothing underneath, rests on its
    design bottom.
    """
    if mode not in ("naive", "adaptive"):
        raise FabricationError(f"unknown placement mode {mode!r}")
    zc = design_center(element, as_built.axis)
    nominal_bottom = zc - element.depth / 2
    sup = as_built.support(as_built.to_2d(element.footprint()), element.layer)
    meas, true = sup if sup is not None else (nominal_bottom, nominal_bottom)
    target = zc if mode == "naive" else meas + measured_thickness / 2
    return target, meas, true


# -- fabrication run --------------------------------------------------------------


@dataclass
class PerceptionConfig:
    noise: float = 0.002
    camera_homography: list = field(default_factory=lambda: np.eye(3).tolist())
    thresholds: Thresholds = field(default_factory=lambda: Thresholds(min_area=0.005, min_aspect=1.5))
    precut_tol: float = 0.01
    max_refills: int = 3


@dataclass
class StationBoard:
    uid: int
    length: float
    bin_id: str
    precut_for: str | None = None


@dataclass
class ElementRecord:
    element_id: str
    layer: int
    position: int
    planned_bin: str | None
    stock_bin: str | None
    stock_length: float  # board consumed for this element, 0 when a left-over piece was reused
    skip_cut: bool
    cut_mode: str
    need_material: int
    operator_handoff: bool
    design_length: float
    actual_length: float
    actual_thickness: float
    measured_thickness: float
    design_center: float
    target_center: float
    as_built_center: float
    contact_gap: float
    offcut: float
    offcut_bin: str | None
    waste: float


@dataclass
class FabricationSummary:
    element_count: int = 0
    robotic_cut_count: int = 0
    manual_cut_count: int = 0
    need_material_events: int = 0
    consumed_stock_m: float = 0.0
    element_length_m: float = 0.0
    kerf_m: float = 0.0
    waste_m: float = 0.0
    returned_m: float = 0.0
    final_layer_height_error: float = 0.0
    aborted: bool = False
    abort_reason: str = ""

    @property
    def robotic_fraction(self) -> float:
        return self.robotic_cut_count / self.element_count if self.element_count else 0.0

    @property
    def manual_fraction(self) -> float:
        return self.manual_cut_count / self.element_count if self.element_count else 0.0

    def conservation_residual(self) -> float:
        return self.consumed_stock_m - (self.element_length_m + self.kerf_m + self.waste_m + self.returned_m)


@dataclass
class FabricationLog:
    records: list[ElementRecord]
    summary: FabricationSummary
    as_built: AsBuiltState
    inventory: Inventory
    updated_elements: list[Element]

    def write_jsonl(self, path) -> None:
        with open(path, "w") as fh:
            for r in self.records:
                fh.write(json.dumps(asdict(r), sort_keys=True) + "\n")
            fh.write(json.dumps({"summary": asdict(self.summary)}, sort_keys=True) + "\n")

    def write_summary_csv(self, path) -> None:
        d = asdict(self.summary)
        with open(path, "w") as fh:
            fh.write("key,value\n")
            for k, v in d.items():
                fh.write(f"{k},{v!r}\n")


def fabrication_order(layers: Sequence[Layer]) -> list[Element]:
    return [e for L in sorted(layers, key=lambda L: L.index) for e in sorted(L.elements, key=lambda e: e.position)]


def _rng(seed: int, stream: int, idx: int) -> np.random.Generator:
    return np.random.default_rng([seed, stream, idx])


def _moved(element: Element, dz: float, length: float, thickness: float, axis: np.ndarray) -> Element:
    o, x, y, z = element.pose
    o2 = o + dz * axis
    half = 0.5 * length * x
    return Element(element.id, element.contour_index, element.layer, element.position,
                   (o2 - half, o2 + half), (element.width, thickness), np.array([o2, x, y, z]),
                   element.cut_planes, element.cut_mode, element.source)


class _Station:
    """Boards currently lying on the pickup table."""

    def __init__(self):
        self.boards: list[StationBoard] = []
        self._uid = 0

    def add(self, length: float, bin_id: str, precut_for: str | None = None) -> StationBoard:
        b = StationBoard(self._uid, length, bin_id, precut_for)
        self._uid += 1
        self.boards.append(b)
        return b

    def scene(self, width: float, cfg: PerceptionConfig, rng) -> PickupScene:
        tb = [TrueBoard(b.length, width, (1.0, 0.15 + 0.2 * k, 0.0)) for k, b in enumerate(self.boards)]
        return PickupScene(tb, np.asarray(cfg.camera_homography, dtype=float), cfg.noise,
                           int(rng.integers(2**31)))

    def match(self, det) -> StationBoard:
        k = int(round((det.pose[1] - 0.15) / 0.2))
        return self.boards[min(max(k, 0), len(self.boards) - 1)]


def run_fabrication(layers: Sequence[Layer], inventory: Inventory, tolerance: ToleranceModel,
                    plan: CutPlan | None = None, perception: PerceptionConfig | None = None,
                    mode: str = "adaptive", seed: int = 0, kerf: float = KERF,
                    min_usable: float = MIN_USABLE, manual_threshold: float = MANUAL_CUT_THRESHOLD,
                    jump_threshold: float = 0.01) -> FabricationLog:
    """Fabricate the layers in order and return the log plus the updated model.

    Every element draws from its own random streams keyed by (seed, stream,
    element index), so a run is reproducible and element k never sees
    anything fabricated after it.
    """
    cfg = perception or PerceptionConfig()
    inv = inventory.copy()
    elements = fabrication_order(layers)
    if not elements:
        return FabricationLog([], FabricationSummary(), AsBuiltState(np.array([0, 0, 1.0])), inv, [])
    axis = sorted(layers, key=lambda L: L.index)[0].plane.normal
    state = AsBuiltState(axis)
    station = _Station()
    summary = FabricationSummary(element_count=len(elements))
    records, updated = [], []

    def bins_for(e: Element):
        planned = plan.bin_for(e.id) if plan is not None else None
        order = [inv.get(planned)] if planned is not None else []
        rest = [b for b in inv.bins if b.id != planned and b.feasible(e.length, kerf)]
        rest.sort(key=lambda b: (b.provenance != "reclaimed", b.min_length, b.id))
        return order + rest

    def consume(board_len: float, piece: float) -> tuple[float, float, str | None, float]:
        """Cut ``piece`` from a board; returns (piece, offcut, offcut bin, waste)."""
        off = board_len - piece - kerf
        if off < 0:
            # the cut would overrun the board; the piece is what is left
            piece, off = board_len - kerf, 0.0
        bid, wasted = return_offcut(inv, off, min_usable)
        summary.consumed_stock_m += board_len
        summary.element_length_m += piece
        summary.kerf_m += kerf
        summary.waste_m += wasted
        summary.returned_m += off - wasted
        return piece, off, bid, wasted

    for idx, e in enumerate(elements):
        r_dims = _rng(seed, STREAM_DIMS, idx)
        r_scene = _rng(seed, STREAM_SCENE, idx)
        r_stock = _rng(seed, STREAM_STOCK, idx)
        r_scan = _rng(seed, STREAM_SCAN, idx)
        d_len = tolerance.length.sample(r_dims)
        thickness = e.depth + tolerance.thickness.sample(r_dims)
        manual = e.length < manual_threshold
        planned = plan.bin_for(e.id) if plan is not None else None
        need, handoff = 0, False
        off, off_bin, wasted, stock_len, stock_bin = 0.0, None, 0.0, 0.0, None

        def refill() -> bool:
            nonlocal off, off_bin, wasted, stock_len, stock_bin
            for b in bins_for(e):
                if not b.feasible(e.length, kerf) and b.id != planned:
                    continue
                got = b.draw(r_stock)
                if got is None:
                    continue
                if manual:
                    piece, off, off_bin, wasted = consume(got, e.length + d_len)
                    stock_len, stock_bin = got, b.id
                    station.add(piece, b.id, precut_for=e.id)
                else:
                    station.add(got, b.id)
                return True
            return False

        chosen: StationBoard | None = None
        rejected: set[int] = set()
        while chosen is None:
            # hand-cut pieces only serve manual targets and vice versa
            cands = [b for b in station.boards if b.uid not in rejected and (b.precut_for is not None) == manual]
            sel = NeedMaterial(e.length)
            if cands:
                saved = station.boards
                station.boards = cands
                dets = detect_boards(station.scene(e.width, cfg, r_scene), cfg.thresholds)
                sel = select_board(dets, e.length, kerf, manual_threshold, precut_tol=cfg.precut_tol)
                if isinstance(sel, Selection):
                    pick = station.match(sel.detection)
                station.boards = saved
            if isinstance(sel, Selection):
                ok = abs(pick.length - e.length) <= cfg.precut_tol if manual else pick.length >= e.length + kerf
                if ok:
                    chosen = pick
                else:
                    rejected.add(pick.uid)  # the pickup scan disagrees with the camera
                continue
            need += 1
            if need > cfg.max_refills:
                # the operator hands over a suitable board directly
                fits = [b for b in station.boards if b.uid not in rejected and (b.precut_for is not None) == manual and
                        (abs(b.length - e.length) <= cfg.precut_tol if manual else b.length >= e.length + kerf)]
                if fits:
                    chosen = min(fits, key=lambda b: (b.length, b.uid))
                    handoff = True
                    break
            if not refill():
                summary.aborted = True
                summary.abort_reason = f"inventory exhausted at element {e.id}"
                break
        if chosen is None:
            break
        station.boards.remove(chosen)

        if manual:
            actual_len = chosen.length
            if chosen.precut_for != e.id:
                stock_len, stock_bin = 0.0, chosen.bin_id
            summary.manual_cut_count += 1
        else:
            actual_len, off, off_bin, wasted = consume(chosen.length, e.length + d_len)
            stock_len, stock_bin = chosen.length, chosen.bin_id
            summary.robotic_cut_count += 1
        summary.need_material_events += need

        # pickup scan of the top face gives the thickness
        pickup = simulate_scan([SurfaceSegment(0.0, actual_len, thickness)], (0.0, actual_len),
                               tolerance.scan_step, tolerance.sensor_sigma, r_scan)
        t_meas = profile_height(reconstruct_profile(pickup, jump_threshold)) if len(pickup.positions) >= 2 \
            else float(pickup.heights.mean())

        zc = design_center(e, axis)
        target, _, true_support = plan_placement(e, state, mode, t_meas)
        gap = (target - thickness / 2) - true_support
        bottom = true_support
        center = bottom + thickness / 2

        top_scan = simulate_scan([SurfaceSegment(-actual_len / 2, actual_len / 2, bottom + thickness)],
                                 (-actual_len / 2, actual_len / 2), tolerance.scan_step, tolerance.sensor_sigma, r_scan)
        prof = reconstruct_profile(top_scan, jump_threshold) if len(top_scan.positions) >= 2 else \
            [ProfileSegment(0.0, 0.0, float(top_scan.heights.mean()), 0.0, len(top_scan.positions))]
        state.records.append(AsBuiltElement(e.id, e.layer, state.to_2d(e.footprint()), bottom, thickness,
                                            actual_len, profile_height(prof), prof))
        updated.append(_moved(e, center - zc, actual_len, thickness, axis))
        records.append(ElementRecord(
            e.id, e.layer, e.position, planned, stock_bin, stock_len, manual, "manual" if manual else "robotic",
            need, handoff, e.length, actual_len, thickness, t_meas, zc, target, center, gap,
            off if stock_len > 0 else 0.0, off_bin if stock_len > 0 else None, wasted if stock_len > 0 else 0.0,
        ))

    # uncut boards go back to their bins; hand-cut pieces stay as parts
    for b in station.boards:
        if b.precut_for is None:
            inv.get(b.bin_id).items.append(b.length)
    if records:
        last = max(r.layer for r in records)
        summary.final_layer_height_error = float(np.mean([abs(r.contact_gap) for r in records if r.layer == last]))
    return FabricationLog(records, summary, state, inv, updated)
