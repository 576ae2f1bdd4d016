"""Length-binned timber inventory and element-to-stock allocation.

Reclaimed boards are only known by bin (a length range and a count), so an
element is judged feasible against the bin's minimum length, while the
expected offcut is estimated from the bin midpoint. New stock has an exact
nominal length and may be unlimited.
"""
from __future__ import annotations

import copy
import csv
import math
from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence

import numpy as np

KERF = 0.004
MIN_USABLE = 0.350
LEN_TOL = 1e-12


class InventoryError(ValueError):
    pass


@dataclass
class InventoryBin:
    id: str
    min_length: float
    max_length: float
    quantity: float  # boards not yet measured; math.inf for unlimited new stock
    provenance: str = "reclaimed"
    items: list[float] = field(default_factory=list)  # boards with a known length

    def __post_init__(self):
        if self.provenance not in ("reclaimed", "new"):
            raise InventoryError(f"bin {self.id}: unknown provenance {self.provenance!r}")
        if self.quantity < 0:
            raise InventoryError(f"bin {self.id}: negative quantity")
        if self.provenance == "reclaimed" and not self.min_length < self.max_length:
            raise InventoryError(f"bin {self.id}: reclaimed bins need min < max")
        if self.provenance == "new" and self.min_length != self.max_length:
            raise InventoryError(f"bin {self.id}: new stock has a single nominal length")
        if self.min_length <= 0:
            raise InventoryError(f"bin {self.id}: lengths must be positive")

    @property
    def unlimited(self) -> bool:
        return math.isinf(self.quantity)

    @property
    def count(self) -> float:
        return self.quantity + len(self.items)

    @property
    def nominal_length(self) -> float:
        return self.min_length

    @property
    def guaranteed_length(self) -> float:
        return self.min_length

    @property
    def expected_length(self) -> float:
        return 0.5 * (self.min_length + self.max_length)

    def feasible(self, length: float, kerf: float) -> bool:
        return length + kerf <= self.guaranteed_length + LEN_TOL

    def expected_offcut(self, length: float, kerf: float) -> float:
        return self.expected_length - length - kerf

    def contains(self, length: float) -> bool:
        return self.min_length <= length < self.max_length or (self.provenance == "new" and length == self.min_length)

    def draw(self, rng: np.random.Generator) -> float | None:
        """Take one physical board out of the bin. Known items go first;
        an unmeasured reclaimed board has a length uniform in the range."""
        if self.items:
            return self.items.pop(0)
        if self.quantity < 1:
            return None
        if not self.unlimited:
            self.quantity -= 1
        if self.provenance == "new":
            return self.min_length
        return float(rng.uniform(self.min_length, self.max_length))


@dataclass
class Inventory:
    bins: list[InventoryBin]

    def __post_init__(self):
        ids = [b.id for b in self.bins]
        if len(set(ids)) != len(ids):
            raise InventoryError("duplicate bin ids")

    def get(self, bin_id: str) -> InventoryBin:
        for b in self.bins:
            if b.id == bin_id:
                return b
        raise KeyError(bin_id)

    def copy(self) -> "Inventory":
        return copy.deepcopy(self)

    def reclaimed_bin_for(self, length: float) -> InventoryBin | None:
        for b in self.bins:
            if b.provenance == "reclaimed" and b.contains(length):
                return b
        return None

    @classmethod
    def from_csv(cls, path) -> "Inventory":
        bins = []
        with open(path, newline="") as fh:
            for row in csv.DictReader(fh):
                qty = row["qty"].strip().lower()
                bins.append(InventoryBin(
                    row["bin_id"].strip(),
                    float(row["min_mm"]) / 1000.0,
                    float(row["max_mm"]) / 1000.0,
                    math.inf if qty in ("inf", "unlimited") else int(qty),
                    row["provenance"].strip(),
                ))
        return cls(bins)

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["bin_id", "min_mm", "max_mm", "qty", "provenance"])
            for b in self.bins:
                qty = "inf" if b.unlimited else str(int(b.count))
                w.writerow([b.id, f"{b.min_length * 1000:g}", f"{b.max_length * 1000:g}", qty, b.provenance])


@dataclass
class Assignment:
    element_id: str
    element_length: float
    bin_id: str
    provenance: str
    expected_offcut: float


@dataclass
class CutPlan:
    assignments: list[Assignment] = field(default_factory=list)
    unassigned: list[str] = field(default_factory=list)
    kerf: float = KERF

    @property
    def reclaimed_count(self) -> int:
        return sum(a.provenance == "reclaimed" for a in self.assignments)

    @property
    def new_count(self) -> int:
        return sum(a.provenance == "new" for a in self.assignments)

    @property
    def waste_m(self) -> float:
        return float(sum(a.expected_offcut for a in self.assignments))

    def objective(self) -> tuple[int, int, float]:
        """Lexicographic key to minimise: more reclaimed, more assigned, less offcut."""
        return (-self.reclaimed_count, -len(self.assignments), self.waste_m)

    def bin_for(self, element_id: str) -> str | None:
        for a in self.assignments:
            if a.element_id == element_id:
                return a.bin_id
        return None

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["element_id", "length_m", "bin_id", "provenance", "expected_offcut_m"])
            for a in self.assignments:
                w.writerow([a.element_id, repr(a.element_length), a.bin_id, a.provenance, repr(a.expected_offcut)])
            for e in self.unassigned:
                w.writerow([e, "", "", "unassigned", ""])


Scorer = Callable[[float, InventoryBin, float], float]


def offcut_score(length: float, b: InventoryBin, kerf: float) -> float:
    return b.expected_offcut(length, kerf)


def _element_pairs(elements) -> list[tuple[str, float]]:
    out = []
    for e in elements:
        if isinstance(e, tuple):
            eid, length = e
        else:
            eid, length = e.id, e.length
        if length <= 0:
            raise InventoryError(f"element {eid}: length must be positive")
        out.append((str(eid), float(length)))
    return out


def _options(length, bins, kerf, scorer):
    return [(k, scorer(length, b, kerf)) for k, b in enumerate(bins) if b.feasible(length, kerf)]


def _greedy(elems, bins, kerf, scorer):
    caps = [b.count for b in bins]
    choice = {}
    for idx, (eid, length) in elems:
        best = None
        for prov in ("reclaimed", "new"):
            cands = [(s, k) for k, s in _options(length, bins, kerf, scorer)
                     if bins[k].provenance == prov and caps[k] >= 1]
            if cands:
                best = min(cands)[1]
                break
        if best is not None:
            caps[best] -= 1
            choice[idx] = best
    return choice


def _score_of(choice, elems, bins, kerf, scorer):
    lengths = dict(elems)
    r = sum(bins[k].provenance == "reclaimed" for k in choice.values())
    w = sum(scorer(lengths[i], bins[k], kerf) for i, k in sorted(choice.items()))
    return (-r, -len(choice), w)


def _branch_and_bound(elems, bins, kerf, scorer, incumbent):
    opts = {i: sorted(_options(length, bins, kerf, scorer), key=lambda t: (t[1], t[0])) for i, length in elems}
    order = [i for i, _ in elems]
    caps = [b.count for b in bins]
    best = {"key": _score_of(incumbent, elems, bins, kerf, scorer), "choice": dict(incumbent)}
    cur: dict[int, int] = {}
    is_rec = [b.provenance == "reclaimed" for b in bins]

    def bound(depth, r, a, w):
        rr = aa = 0
        ww = 0.0
        for i in order[depth:]:
            live = [(s, k) for k, s in opts[i] if caps[k] >= 1]
            if live:
                aa += 1
                ww += min(s for s, _ in live)
                if any(is_rec[k] for _, k in live):
                    rr += 1
        return (-(r + rr), -(a + aa), w + ww)

    def dfs(depth, r, a, w):
        if depth == len(order):
            key = (-r, -a, w)
            if key < best["key"]:
                best["key"], best["choice"] = key, dict(cur)
            return
        if not bound(depth, r, a, w) < best["key"]:
            return
        i = order[depth]
        for k, s in sorted(opts[i], key=lambda t: (not is_rec[t[0]], t[1], t[0])):
            if caps[k] < 1:
                continue
            caps[k] -= 1
            cur[i] = k
            dfs(depth + 1, r + is_rec[k], a + 1, w + s)
            del cur[i]
            caps[k] += 1
        dfs(depth + 1, r, a, w)

    dfs(0, 0, 0, 0.0)
    return best["choice"]


def allocate(elements, inventory: Inventory, kerf: float = KERF, policy: str = "greedy_best_fit",
             scorer: Scorer = offcut_score) -> CutPlan:
    """Assign each element at most one board.

    ``greedy_best_fit`` takes elements longest first and picks the
    lowest-score reclaimed bin, falling back to new stock. ``exact`` runs a
    branch and bound on the same lexicographic objective and is meant for
    small instances (about a dozen elements).
    """
    if kerf < 0:
        raise InventoryError("kerf must be >= 0")
    pairs = _element_pairs(elements)
    order = sorted(range(len(pairs)), key=lambda i: (-pairs[i][1], i))
    elems = [(i, pairs[i]) for i in order]
    bins = inventory.bins
    choice = _greedy(elems, bins, kerf, scorer)
    if policy == "exact":
        flat = [(i, length) for i, (_, length) in elems]
        choice = _branch_and_bound(flat, bins, kerf, scorer, choice)
    elif policy != "greedy_best_fit":
        raise InventoryError(f"unknown policy {policy!r}")
    plan = CutPlan(kerf=kerf)
    for i, (eid, length) in enumerate(pairs):
        if i in choice:
            b = bins[choice[i]]
            plan.assignments.append(Assignment(eid, length, b.id, b.provenance, b.expected_offcut(length, kerf)))
        else:
            plan.unassigned.append(eid)
    return plan


@dataclass
class OffcutReturn:
    inventory: Inventory
    returned: list[tuple[str, float]]
    waste_m: float


def return_offcut(inventory: Inventory, length: float, min_usable: float = MIN_USABLE) -> tuple[str | None, float]:
    """Put one offcut back into stock in place. Returns (bin id, wasted length)."""
    if length < min_usable:
        return None, max(length, 0.0)
    b = inventory.reclaimed_bin_for(length)
    if b is None:
        lo = math.floor(length * 10 + 1e-9) / 10
        b = InventoryBin(f"R{round(lo * 1000)}-{round((lo + 0.1) * 1000)}", lo, lo + 0.1, 0, "reclaimed")
        inventory.bins.append(b)
    b.items.append(length)
    return b.id, 0.0


def offcut_return(plan: CutPlan, actual_cuts: Iterable[tuple[str, float]], inventory: Inventory,
                  min_usable: float = MIN_USABLE) -> OffcutReturn:
    """Re-bin offcuts from boards actually cut for ``plan``."""
    inv = inventory.copy()
    lengths = {a.element_id: a.element_length for a in plan.assignments}
    returned, waste = [], 0.0
    for eid, stock in actual_cuts:
        if eid not in lengths:
            raise InventoryError(f"element {eid} is not in the plan")
        off = stock - lengths[eid] - plan.kerf
        if off < -LEN_TOL:
            raise InventoryError(f"element {eid}: stock {stock} m too short for {lengths[eid]} m plus kerf")
        bin_id, wasted = return_offcut(inv, off, min_usable)
        waste += wasted
        if bin_id is not None:
            returned.append((bin_id, off))
    return OffcutReturn(inv, returned, waste)


@dataclass
class AllocationReport:
    bin_edges: list[float]
    counts: list[int]
    element_count: int
    reclaimed_count: int
    new_count: int
    unassigned_count: int
    reclaimed_ratio: float
    manual_cut_count: int
    waste_m: float


def length_histogram(lengths: Sequence[float], bin_width: float = 0.1) -> tuple[list[float], list[int]]:
    if not len(lengths):
        return [0.0, bin_width], [0]
    top = max(bin_width, math.ceil(max(lengths) / bin_width - 1e-9) * bin_width)
    n = int(round(top / bin_width))
    edges = [round(k * bin_width, 12) for k in range(n + 1)]
    counts, _ = np.histogram(np.asarray(lengths), bins=np.asarray(edges))
    return edges, [int(c) for c in counts]


def allocation_report(plan: CutPlan, elements, bin_width: float = 0.1,
                      manual_threshold: float = MIN_USABLE) -> AllocationReport:
    pairs = _element_pairs(elements)
    lengths = [length for _, length in pairs]
    edges, counts = length_histogram(lengths, bin_width)
    assigned = plan.reclaimed_count + plan.new_count
    return AllocationReport(
        bin_edges=edges,
        counts=counts,
        element_count=len(pairs),
        reclaimed_count=plan.reclaimed_count,
        new_count=plan.new_count,
        unassigned_count=len(plan.unassigned),
        reclaimed_ratio=plan.reclaimed_count / assigned if assigned else 0.0,
        manual_cut_count=sum(length < manual_threshold for length in lengths),
        waste_m=plan.waste_m,
    )
