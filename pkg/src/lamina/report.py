"""Report bundle built from a run directory: length histogram SVG, subassembly table, summary text."""
from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path
from xml.sax.saxutils import escape

from .inventory import length_histogram


class ReportError(ValueError):
    pass


@dataclass
class ReportData:
    element_lengths: list[float] = field(default_factory=list)
    manual_design: int = 0
    subassemblies: list[dict] = field(default_factory=list)
    overlap_count: int = 0
    quad_overlap_count: int = 0
    nail_count: int = 0
    reclaimed_count: int = 0
    new_count: int = 0
    unassigned_count: int = 0
    planned_offcut_m: float = 0.0
    simulated: bool = False
    fabricated_count: int = 0
    manual_fabricated: int = 0
    fabrication_waste_m: float = 0.0
    need_material_events: int = 0
    warnings: list[str] = field(default_factory=list)

    @property
    def element_count(self) -> int:
        return len(self.element_lengths)

    @property
    def reclaimed_ratio(self) -> float:
        n = self.reclaimed_count + self.new_count
        return self.reclaimed_count / n if n else 0.0

    @property
    def manual_fraction(self) -> float:
        if self.simulated:
            return self.manual_fabricated / self.fabricated_count if self.fabricated_count else 0.0
        return self.manual_design / self.element_count if self.element_count else 0.0

    def summary(self) -> dict:
        return {
            "elements": self.element_count,
            "subassemblies": len(self.subassemblies),
            "overlaps": self.overlap_count,
            "quad_overlaps": self.quad_overlap_count,
            "nails": self.nail_count,
            "reclaimed_boards": self.reclaimed_count,
            "new_boards": self.new_count,
            "unassigned": self.unassigned_count,
            "reclaimed_ratio": round(self.reclaimed_ratio, 6),
            "manual_cut_fraction": round(self.manual_fraction, 6),
            "robotic_fraction": round(1.0 - self.manual_fraction, 6) if self.element_count else 0.0,
            "planned_offcut_m": round(self.planned_offcut_m, 6),
            "offcut_waste_m": round(self.fabrication_waste_m, 6),
            "need_material_events": self.need_material_events,
            "warnings": len(self.warnings),
        }


def _rows(path: Path) -> list[dict]:
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def load_run(out_dir) -> ReportData:
    """Read a run directory and check that ids referenced across files resolve."""
    out = Path(out_dir)
    elements_path = out / "elements.jsonl"
    if not elements_path.is_file():
        raise ReportError(f"{elements_path} not found; run the design stage first")
    data = ReportData()
    ids = []
    for line in elements_path.read_text().splitlines():
        rec = json.loads(line)
        ids.append(rec["id"])
        data.element_lengths.append(rec["length_m"])
        data.manual_design += rec["cut_mode"] == "manual"
    known = set(ids)
    if len(known) != len(ids):
        raise ReportError("duplicate element ids in elements.jsonl")
    layer_ids = [r["element_id"] for r in _rows(out / "layers.csv")]
    if sorted(layer_ids) != sorted(ids):
        raise ReportError("layers.csv and elements.jsonl list different elements")
    layer_of = {r["element_id"]: int(r["layer"]) for r in _rows(out / "layers.csv")}

    if (out / "overlaps.csv").is_file():
        overlaps = _rows(out / "overlaps.csv")
        oids = {o["overlap_id"] for o in overlaps}
        for o in overlaps:
            if o["element_lower"] not in known or o["element_upper"] not in known:
                raise ReportError(f"overlap {o['overlap_id']} references an unknown element")
        nails = _rows(out / "nails.csv")
        bad = [n["overlap_id"] for n in nails if n["overlap_id"] not in oids]
        if bad:
            raise ReportError(f"nail references unknown overlap {bad[0]}")
        data.overlap_count = len(overlaps)
        data.quad_overlap_count = sum(o["n_vertices"] == "4" for o in overlaps)
        data.nail_count = len(nails)

    if (out / "manifest.csv").is_file():
        used = set(layer_of.values())
        for r in _rows(out / "manifest.csv"):
            lo, hi = int(r["layer_from"]), int(r["layer_to"])
            if lo not in used or hi not in used:
                raise ReportError(f"subassembly {r['id']} spans unknown layers")
            data.subassemblies.append(r)

    bins = set()
    if (out / "cut_plan.csv").is_file():
        bins = {r["bin_id"] for r in _rows(out / "inventory.csv")}
        for r in _rows(out / "cut_plan.csv"):
            if r["element_id"] not in known:
                raise ReportError(f"cut plan references unknown element {r['element_id']}")
            if r["provenance"] == "unassigned":
                data.unassigned_count += 1
                continue
            if r["bin_id"] not in bins:
                raise ReportError(f"cut plan references unknown bin {r['bin_id']}")
            data.reclaimed_count += r["provenance"] == "reclaimed"
            data.new_count += r["provenance"] == "new"
            data.planned_offcut_m += float(r["expected_offcut_m"])

    fab_dir = out / "fabrication"
    if (out / "fabrication_summary.csv").is_file():
        data.simulated = True
        bins |= {r["bin_id"] for r in _rows(out / "inventory_after.csv")}
        for r in _rows(out / "fabrication_summary.csv"):
            log = fab_dir / f"{r['subassembly']}.jsonl"
            if not log.is_file():
                raise ReportError(f"missing fabrication log {log.name}")
            for line in log.read_text().splitlines():
                rec = json.loads(line)
                if "summary" in rec:
                    s = rec["summary"]
                    data.fabricated_count += s["element_count"]
                    data.manual_fabricated += s["manual_cut_count"]
                    data.fabrication_waste_m += s["waste_m"]
                    data.need_material_events += s["need_material_events"]
                    continue
                if rec["element_id"] not in known:
                    raise ReportError(f"{log.name} references unknown element {rec['element_id']}")
                for key in ("stock_bin", "offcut_bin"):
                    if rec[key] is not None and rec[key] not in bins:
                        raise ReportError(f"{log.name} references unknown bin {rec[key]}")

    if (out / "warnings.txt").is_file():
        data.warnings = [w for w in (out / "warnings.txt").read_text().splitlines() if w]
    return data


def histogram_svg(lengths, bin_width: float = 0.1, width: int = 480, height: int = 240) -> str:
    """Bar chart of element lengths; a valid, empty chart when there are none."""
    edges, counts = length_histogram(list(lengths), bin_width)
    ml, mr, mt, mb = 40, 10, 20, 30
    pw, ph = width - ml - mr, height - mt - mb
    top = max(counts) if counts and max(counts) > 0 else 1
    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" viewBox="0 0 {width} {height}">',
        f'<title>Element length histogram ({sum(counts)} elements)</title>',
        f'<line x1="{ml}" y1="{mt + ph}" x2="{ml + pw}" y2="{mt + ph}" stroke="black"/>',
        f'<line x1="{ml}" y1="{mt}" x2="{ml}" y2="{mt + ph}" stroke="black"/>',
        f'<text x="{ml + pw / 2:.1f}" y="{height - 5}" font-size="11" text-anchor="middle">length (m)</text>',
        f'<text x="5" y="{mt - 5}" font-size="11">count (max {top if sum(counts) else 0})</text>',
    ]
    bw = pw / len(counts)
    for k, c in enumerate(counts):
        h = ph * c / top
        x = ml + k * bw
        parts.append(f'<rect class="bar" x="{x:.2f}" y="{mt + ph - h:.2f}" width="{bw * 0.9:.2f}" height="{h:.2f}" '
                     f'fill="steelblue" data-count="{c}" data-lo="{edges[k]:g}" data-hi="{edges[k + 1]:g}"/>')
    for k in (0, len(counts)):
        parts.append(f'<text x="{ml + k * bw:.2f}" y="{mt + ph + 12}" font-size="10" text-anchor="middle">'
                     f'{escape(f"{edges[k]:g}")}</text>')
    parts.append("</svg>")
    return "\n".join(parts) + "\n"


def write_report(data: ReportData, report_dir) -> dict[str, Path]:
    d = Path(report_dir)
    d.mkdir(parents=True, exist_ok=True)
    files = {"lengths.svg": d / "lengths.svg", "subassemblies.csv": d / "subassemblies.csv",
             "summary.txt": d / "summary.txt"}
    files["lengths.svg"].write_text(histogram_svg(data.element_lengths))
    with open(files["subassemblies.csv"], "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["id", "parent", "layer_from", "layer_to", "weight_kg", "extent_1_m", "extent_2_m", "extent_3_m"])
        for s in data.subassemblies:
            w.writerow([s["id"], s["parent"], s["layer_from"], s["layer_to"], s["weight_kg"],
                        s["extent_1_m"], s["extent_2_m"], s["extent_3_m"]])
    lines = [f"{k}: {v}" for k, v in data.summary().items()]
    lines += [f"warning: {w}" for w in data.warnings]
    files["summary.txt"].write_text("\n".join(lines) + "\n")
    return files


def report(out_dir) -> ReportData:
    data = load_run(out_dir)
    write_report(data, Path(out_dir) / "report")
    return data
