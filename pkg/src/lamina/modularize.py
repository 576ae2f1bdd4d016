"""Split the ordered layer stack into liftable, transportable subassemblies.

Two passes: a greedy longest-prefix split by weight, then any candidate
whose box does not fit the envelopes is re-split with the joint
weight-and-box test. Children keep a link to the candidate they came from.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .geometry import Obb, min_obb, plane_basis
from .layout import Element, Layer

W_MAX = 100.0
DENSITY = 500.0


class ModularizeError(ValueError):
    pass


@dataclass
class EnvelopeConfig:
    robot: tuple[float, float, float]
    transport: tuple[float, float, float]
    w_max: float = W_MAX
    density: float = DENSITY

    def __post_init__(self):
        vals = [*self.robot, *self.transport, self.w_max, self.density]
        if len(self.robot) != 3 or len(self.transport) != 3 or any(v <= 0 for v in vals):
            raise ModularizeError("envelope dimensions, w_max and density must be positive")

    @property
    def limit(self) -> np.ndarray:
        """Componentwise min of both envelopes, each sorted largest first."""
        return np.minimum(np.sort(self.robot)[::-1], np.sort(self.transport)[::-1])


@dataclass
class Subassembly:
    id: str
    layer_from: int
    layer_to: int  # inclusive
    weight: float
    obb: Obb
    parent: str | None = None
    layer_indices: list[int] = field(default_factory=list)

    @property
    def n_layers(self) -> int:
        return len(self.layer_indices)


def element_weight(element: Element, density: float) -> float:
    return element.volume * density


def subassembly_weight(layers: Sequence[Layer], density: float = DENSITY) -> float:
    if density <= 0:
        raise ModularizeError("density must be positive")
    return float(sum(element_weight(e, density) for L in layers for e in L.elements))


def stack_obb(layers: Sequence[Layer]) -> Obb:
    pts = [e.corners() for L in layers for e in L.elements]
    axis = layers[0].plane.normal
    if not pts:
        u, v = plane_basis(axis)
        return Obb(layers[0].plane.origin.copy(), np.vstack([u, v, axis]), np.zeros(3))
    return min_obb(np.vstack(pts), axis)


def box_fits(obb: Obb, env: EnvelopeConfig, tol: float = 1e-12) -> bool:
    return bool(np.all(np.sort(obb.extents)[::-1] <= env.limit + tol))


def greedy_contiguous(n: int, feasible: Callable[[int, int], bool]) -> list[tuple[int, int]]:
    """Greedy longest-feasible-prefix partition of 0..n-1 into inclusive ranges.

    ``feasible(p, q)`` must hold for every singleton and be monotone: if
    [p, q] fails then so does [p, q + 1].
    """
    parts = []
    p = 0
    while p < n:
        if not feasible(p, p):
            raise ModularizeError(f"single item {p} is infeasible")
        q = p
        while q + 1 < n and feasible(p, q + 1):
            q += 1
        parts.append((p, q))
        p = q + 1
    return parts


def partition_by_weight(weights: Sequence[float], w_max: float = W_MAX) -> list[tuple[int, int]]:
    w = np.asarray(weights, dtype=float)
    heavy = np.nonzero(w > w_max)[0]
    if len(heavy):
        raise ModularizeError(f"single layer infeasible: layer {int(heavy[0])} weighs {w[heavy[0]]:.3f} kg > {w_max} kg")
    prefix = np.concatenate([[0.0], np.cumsum(w)])
    return greedy_contiguous(len(w), lambda p, q: prefix[q + 1] - prefix[p] <= w_max)


def _make(sid: str, layers: Sequence[Layer], p: int, q: int, density: float, parent=None) -> Subassembly:
    part = layers[p:q + 1]
    return Subassembly(sid, part[0].index, part[-1].index, subassembly_weight(part, density),
                       stack_obb(part), parent, [L.index for L in part])


def greedy_partition(layers: Sequence[Layer], w_max: float = W_MAX, density: float = DENSITY) -> list[Subassembly]:
    """Weight-only candidates, in layer order."""
    weights = [subassembly_weight([L], density) for L in layers]
    ranges = partition_by_weight(weights, w_max)
    return [_make(f"S{k + 1:02d}", layers, p, q, density) for k, (p, q) in enumerate(ranges)]


def enforce_envelopes(candidate: Subassembly, layers: Sequence[Layer], env: EnvelopeConfig) -> list[Subassembly]:
    if box_fits(candidate.obb, env):
        return [candidate]
    by_index = {L.index: L for L in layers}
    part = [by_index[i] for i in candidate.layer_indices]
    for L in part:
        if not box_fits(stack_obb([L]), env):
            raise ModularizeError(
                f"layer {L.index} alone exceeds the envelope {env.limit.tolist()}: extents {np.sort(stack_obb([L]).extents)[::-1].tolist()}"
            )
    weights = np.array([subassembly_weight([L], env.density) for L in part])
    prefix = np.concatenate([[0.0], np.cumsum(weights)])

    def ok(p, q):
        return prefix[q + 1] - prefix[p] <= env.w_max and box_fits(stack_obb(part[p:q + 1]), env)

    ranges = greedy_contiguous(len(part), ok)
    return [_make(f"{candidate.id}.{k + 1}", part, p, q, env.density, parent=candidate.id)
            for k, (p, q) in enumerate(ranges)]


@dataclass
class Modularization:
    candidates: list[Subassembly]
    subassemblies: list[Subassembly]

    @property
    def split_candidates(self) -> list[str]:
        return sorted({s.parent for s in self.subassemblies if s.parent})


def modularize(layers: Sequence[Layer], env: EnvelopeConfig) -> Modularization:
    layers = sorted(layers, key=lambda L: L.index)
    if not layers:
        return Modularization([], [])
    candidates = greedy_partition(layers, env.w_max, env.density)
    final = []
    for c in candidates:
        final += enforce_envelopes(c, layers, env)
    return Modularization(candidates, final)


def write_manifest(subs: Sequence[Subassembly], path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["id", "parent", "layer_from", "layer_to", "weight_kg", "extent_1_m", "extent_2_m", "extent_3_m"])
        for s in subs:
            ext = np.sort(s.obb.extents)[::-1]
            w.writerow([s.id, s.parent or "", s.layer_from, s.layer_to, repr(s.weight), *(repr(float(x)) for x in ext)])
