"""Pipeline configuration: one YAML or JSON document, normalized to SI on load.

Lengths may be plain numbers in the document's declared ``units`` (mm, m or
in) or strings carrying their own suffix such as ``"38.1 mm"``. Masses are
kg and densities kg/m^3 regardless of ``units``.
"""
from __future__ import annotations

import csv
import json
import re
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import yaml

from .layout import NOMINAL_SECTIONS

UNITS = {"m": 1.0, "mm": 0.001, "in": 0.0254}
_QTY = re.compile(r"^\s*([-+]?(?:\d+\.?\d*|\.\d+)(?:[eE][-+]?\d+)?)\s*(mm|m|in)\s*$")


class ConfigError(ValueError):
    """Validation failure tied to a dotted field path."""

    def __init__(self, path: str, message: str):
        self.path = path
        super().__init__(f"{path}: {message}" if path else message)


@dataclass
class GeometrySpec:
    surfaces: list  # each surface is a list of guide polylines, (n, 3) arrays in m
    samples_u: int = 24
    samples_v: int = 8


@dataclass
class SlicingSpec:
    axis: tuple = (0.0, 0.0, 1.0)
    spacing: float = 0.0381
    offset: float = 0.01905


@dataclass
class SubdivisionSpec:
    scheme: str = "uniform"
    target_length: float = 0.6
    values: tuple | None = None  # parameter table for scheme "table"


@dataclass
class MaskConfig:
    kind: str = "checkerboard"
    overrides: list = field(default_factory=list)  # [layer, position, value]
    default: int = 0


@dataclass
class EnvelopeSpec:
    robot: tuple = (4.4, 3.4, 1.2)
    transport: tuple = (12.0, 3.5, 3.0)
    w_max: float = 100.0
    density: float = 500.0


@dataclass
class NailSpec:
    offset: float = 0.019
    clearance: float = 0.01
    reference: str | tuple = "bbox_min"
    min_overlap_area: float = 1e-4


@dataclass
class AllocationSpec:
    inventory: str | None = None  # absolute path after load
    kerf: float = 0.004
    policy: str = "greedy_best_fit"
    min_usable: float = 0.35


@dataclass
class SimulationSpec:
    enabled: bool = False
    mode: str = "adaptive"
    subassemblies: str | list = "all"
    thickness_sigma: float = 0.0005
    length_sigma: float = 0.0
    sensor_sigma: float = 0.0002
    scan_step: float = 0.01
    perception_noise: float = 0.002


@dataclass
class PipelineConfig:
    geometry: GeometrySpec
    slicing: SlicingSpec = field(default_factory=SlicingSpec)
    subdivision: SubdivisionSpec = field(default_factory=SubdivisionSpec)
    mask: MaskConfig = field(default_factory=MaskConfig)
    extension: float = 0.0889
    cross_section: tuple = NOMINAL_SECTIONS["2x4"]
    miter: bool = False
    manual_cut_threshold: float = 0.35
    envelopes: EnvelopeSpec = field(default_factory=EnvelopeSpec)
    nails: NailSpec = field(default_factory=NailSpec)
    allocation: AllocationSpec = field(default_factory=AllocationSpec)
    simulation: SimulationSpec = field(default_factory=SimulationSpec)
    seed: int = 0
    output_dir: str = "out"


# -- field readers -----------------------------------------------------------------


class _Reader:
    def __init__(self, scale: float):
        self.scale = scale

    def section(self, doc, path, allowed):
        if doc is None:
            return {}
        if not isinstance(doc, dict):
            raise ConfigError(path, "expected a mapping")
        for k in doc:
            if k not in allowed:
                raise ConfigError(_join(path, str(k)), "unknown field")
        return doc

    def length(self, value, path, positive=True, allow_zero=False):
        if isinstance(value, bool):
            raise ConfigError(path, "expected a length")
        if isinstance(value, (int, float)):
            out = float(value) * self.scale
        elif isinstance(value, str):
            m = _QTY.match(value)
            if not m:
                raise ConfigError(path, f"cannot parse length {value!r}; use a number or e.g. '38.1 mm'")
            out = float(m.group(1)) * UNITS[m.group(2)]
        else:
            raise ConfigError(path, "expected a length")
        if not np.isfinite(out):
            raise ConfigError(path, "must be finite")
        if positive and (out < 0 or (out == 0 and not allow_zero)):
            raise ConfigError(path, "must be > 0" if not allow_zero else "must be >= 0")
        return out

    def number(self, value, path, positive=True):
        if isinstance(value, bool) or not isinstance(value, (int, float)) or not np.isfinite(value):
            raise ConfigError(path, "expected a number")
        if positive and value <= 0:
            raise ConfigError(path, "must be > 0")
        return float(value)

    def integer(self, value, path, minimum=None):
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(path, "expected an integer")
        if minimum is not None and value < minimum:
            raise ConfigError(path, f"must be >= {minimum}")
        return int(value)

    def boolean(self, value, path):
        if not isinstance(value, bool):
            raise ConfigError(path, "expected true or false")
        return value

    def choice(self, value, path, options):
        if value not in options:
            raise ConfigError(path, f"must be one of {', '.join(options)}")
        return value

    def triple(self, value, path, lengths=True):
        if not isinstance(value, (list, tuple)) or len(value) != 3:
            raise ConfigError(path, "expected three values")
        if lengths:
            return tuple(self.length(v, f"{path}[{i}]") for i, v in enumerate(value))
        return tuple(self.number(v, f"{path}[{i}]", positive=False) for i, v in enumerate(value))


def _join(path, key):
    return f"{path}.{key}" if path else key


# -- guides --------------------------------------------------------------------------


def _read_guides_csv(path: Path, scale: float, where: str) -> list:
    if not path.is_file():
        raise ConfigError(where, f"guide file {path} not found")
    rows: dict = {}
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        need = {"surface", "guide", "x", "y", "z"}
        if not reader.fieldnames or not need <= set(reader.fieldnames):
            raise ConfigError(where, f"guide file needs columns {sorted(need)}")
        for line, row in enumerate(reader, start=2):
            try:
                key = (int(row["surface"]), int(row["guide"]))
                pt = [float(row[c]) * scale for c in "xyz"]
            except ValueError as exc:
                raise ConfigError(where, f"{path.name} line {line}: {exc}") from None
            rows.setdefault(key[0], {}).setdefault(key[1], []).append(pt)
    return [[np.array(rows[s][g]) for g in sorted(rows[s])] for s in sorted(rows)]


def _guides(doc, path, rd: _Reader, base: Path) -> list:
    if isinstance(doc, dict):
        rd.section(doc, path, {"file"})
        if "file" not in doc:
            raise ConfigError(_join(path, "file"), "required")
        return _read_guides_csv(base / str(doc["file"]), rd.scale, _join(path, "file"))
    if not isinstance(doc, list) or not doc:
        raise ConfigError(path, "expected a list of surfaces or {file: ...}")
    surfaces = []
    for i, surf in enumerate(doc):
        sp = f"{path}[{i}]"
        if not isinstance(surf, list) or len(surf) < 2:
            raise ConfigError(sp, "a surface needs at least two guide curves")
        guides = []
        for j, g in enumerate(surf):
            gp = f"{sp}[{j}]"
            if not isinstance(g, list) or len(g) < 2:
                raise ConfigError(gp, "a guide needs at least two points")
            guides.append(np.array([rd.triple(p, f"{gp}[{k}]", lengths=False) for k, p in enumerate(g)]) * rd.scale)
        surfaces.append(guides)
    return surfaces


# -- parse -----------------------------------------------------------------------------

TOP_FIELDS = {"units", "geometry", "slicing", "subdivision", "mask", "extension", "cross_section", "miter",
              "manual_cut_threshold", "envelopes", "nails", "allocation", "simulate", "seed", "output_dir"}


def parse_config(doc: dict, base_dir=".") -> PipelineConfig:
    """Validate a raw document and return a config in SI units.

    Relative guide and inventory paths resolve against ``base_dir``.
    """
    base = Path(base_dir)
    if not isinstance(doc, dict):
        raise ConfigError("", "config must be a mapping")
    if "units" not in doc:
        raise ConfigError("units", "required (mm, m or in)")
    units = doc["units"]
    if units not in UNITS:
        raise ConfigError("units", "must be one of mm, m, in")
    rd = _Reader(UNITS[units])
    rd.section(doc, "", TOP_FIELDS)

    g = rd.section(doc.get("geometry"), "geometry", {"guides", "samples_u", "samples_v"})
    if "guides" not in g:
        raise ConfigError("geometry.guides", "required")
    geometry = GeometrySpec(
        _guides(g["guides"], "geometry.guides", rd, base),
        rd.integer(g.get("samples_u", 24), "geometry.samples_u", 2),
        rd.integer(g.get("samples_v", 8), "geometry.samples_v", 2),
    )

    s = rd.section(doc.get("slicing"), "slicing", {"axis", "spacing", "offset"})
    axis = rd.triple(s.get("axis", [0, 0, 1]), "slicing.axis", lengths=False)
    if not np.linalg.norm(axis) > 0:
        raise ConfigError("slicing.axis", "must be non-zero")
    slicing = SlicingSpec(axis, rd.length(s.get("spacing", "0.0381 m"), "slicing.spacing"),
                          rd.length(s.get("offset", "0.01905 m"), "slicing.offset", positive=False))

    d = rd.section(doc.get("subdivision"), "subdivision", {"scheme", "target_length", "values"})
    scheme = rd.choice(d.get("scheme", "uniform"), "subdivision.scheme", ("uniform", "table"))
    if scheme == "table":
        vals = d.get("values")
        if not isinstance(vals, list) or len(vals) < 2:
            raise ConfigError("subdivision.values", "table scheme needs a list of parameters")
        vals = [rd.number(v, f"subdivision.values[{i}]", positive=False) for i, v in enumerate(vals)]
        if vals[0] != 0 or vals[-1] != 1 or any(b <= a for a, b in zip(vals, vals[1:])):
            raise ConfigError("subdivision.values", "must increase strictly from 0 to 1")
        subdivision = SubdivisionSpec("table", 0.0, tuple(vals))
    else:
        subdivision = SubdivisionSpec("uniform", rd.length(d.get("target_length", "0.6 m"), "subdivision.target_length"))

    mk = rd.section(doc.get("mask"), "mask", {"kind", "overrides", "default"})
    overrides = []
    for i, o in enumerate(mk.get("overrides", []) or []):
        if not isinstance(o, list) or len(o) != 3:
            raise ConfigError(f"mask.overrides[{i}]", "expected [layer, position, value]")
        overrides.append([rd.integer(o[0], f"mask.overrides[{i}][0]", 0), rd.integer(o[1], f"mask.overrides[{i}][1]", 0),
                          rd.choice(o[2], f"mask.overrides[{i}][2]", (0, 1))])
    mask = MaskConfig(rd.choice(mk.get("kind", "checkerboard"), "mask.kind", ("checkerboard", "table")),
                      overrides, rd.choice(mk.get("default", 0), "mask.default", (0, 1)))

    cs = doc.get("cross_section", "2x4")
    if isinstance(cs, str):
        if cs not in NOMINAL_SECTIONS:
            raise ConfigError("cross_section", f"unknown nominal size {cs!r}; known: {', '.join(NOMINAL_SECTIONS)}")
        section = tuple(NOMINAL_SECTIONS[cs])
    elif isinstance(cs, list) and len(cs) == 2:
        section = tuple(rd.length(v, f"cross_section[{i}]") for i, v in enumerate(cs))
    else:
        raise ConfigError("cross_section", "expected a nominal size like '2x4' or [width, depth]")

    e = rd.section(doc.get("envelopes"), "envelopes", {"robot", "transport", "w_max_kg", "density_kg_m3"})
    for k in ("robot", "transport"):
        if k not in e:
            raise ConfigError(f"envelopes.{k}", "required")
    envelopes = EnvelopeSpec(rd.triple(e["robot"], "envelopes.robot"), rd.triple(e["transport"], "envelopes.transport"),
                             rd.number(e.get("w_max_kg", 100.0), "envelopes.w_max_kg"),
                             rd.number(e.get("density_kg_m3", 500.0), "envelopes.density_kg_m3"))

    n = rd.section(doc.get("nails"), "nails", {"offset", "clearance", "reference", "min_overlap_area_m2"})
    ref = n.get("reference", "bbox_min")
    if ref != "bbox_min":
        if not isinstance(ref, list):
            raise ConfigError("nails.reference", "expected 'bbox_min' or a point")
        ref = rd.triple(ref, "nails.reference", lengths=False)
        ref = tuple(v * rd.scale for v in ref)
    nails = NailSpec(rd.length(n.get("offset", "0.019 m"), "nails.offset"),
                     rd.length(n.get("clearance", "0.01 m"), "nails.clearance"), ref,
                     rd.number(n.get("min_overlap_area_m2", 1e-4), "nails.min_overlap_area_m2"))

    a = rd.section(doc.get("allocation"), "allocation", {"inventory", "kerf", "policy", "min_usable"})
    inv = a.get("inventory")
    if inv is not None:
        if not isinstance(inv, str):
            raise ConfigError("allocation.inventory", "expected a file path")
        inv_path = (base / inv).resolve()
        if not inv_path.is_file():
            raise ConfigError("allocation.inventory", f"file {inv_path} not found")
        inv = str(inv_path)
    allocation = AllocationSpec(inv, rd.length(a.get("kerf", "0.004 m"), "allocation.kerf", allow_zero=True),
                                rd.choice(a.get("policy", "greedy_best_fit"), "allocation.policy", ("greedy_best_fit", "exact")),
                                rd.length(a.get("min_usable", "0.35 m"), "allocation.min_usable", allow_zero=True))

    m = rd.section(doc.get("simulate"), "simulate", {"enabled", "mode", "subassemblies", "thickness_sigma",
                                                     "length_sigma", "sensor_sigma", "scan_step", "perception_noise"})
    subs = m.get("subassemblies", "all")
    if subs != "all" and not (isinstance(subs, list) and all(isinstance(x, str) for x in subs)):
        raise ConfigError("simulate.subassemblies", "expected 'all' or a list of subassembly ids")
    simulation = SimulationSpec(
        rd.boolean(m.get("enabled", False), "simulate.enabled"),
        rd.choice(m.get("mode", "adaptive"), "simulate.mode", ("adaptive", "naive")),
        subs if subs == "all" else list(subs),
        rd.length(m.get("thickness_sigma", "0.0005 m"), "simulate.thickness_sigma", allow_zero=True),
        rd.length(m.get("length_sigma", "0 m"), "simulate.length_sigma", allow_zero=True),
        rd.length(m.get("sensor_sigma", "0.0002 m"), "simulate.sensor_sigma", allow_zero=True),
        rd.length(m.get("scan_step", "0.01 m"), "simulate.scan_step"),
        rd.length(m.get("perception_noise", "0.002 m"), "simulate.perception_noise", allow_zero=True),
    )
    if simulation.enabled and allocation.inventory is None:
        raise ConfigError("allocation.inventory", "required when simulate.enabled is true")

    out = doc.get("output_dir", "out")
    if not isinstance(out, str) or not out:
        raise ConfigError("output_dir", "expected a directory path")

    return PipelineConfig(
        geometry=geometry,
        slicing=slicing,
        subdivision=subdivision,
        mask=mask,
        extension=rd.length(doc.get("extension", "0.0889 m"), "extension", allow_zero=True),
        cross_section=section,
        miter=rd.boolean(doc.get("miter", False), "miter"),
        manual_cut_threshold=rd.length(doc.get("manual_cut_threshold", "0.35 m"), "manual_cut_threshold", allow_zero=True),
        envelopes=envelopes,
        nails=nails,
        allocation=allocation,
        simulation=simulation,
        seed=rd.integer(doc.get("seed", 0), "seed", 0),
        output_dir=out,
    )


def load_config(path) -> PipelineConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError("", f"cannot read config {path}: {exc.strerror}") from None
    try:
        doc = json.loads(text) if path.suffix == ".json" else yaml.safe_load(text)
    except (json.JSONDecodeError, yaml.YAMLError) as exc:
        raise ConfigError("", f"cannot parse {path.name}: {exc}") from None
    return parse_config(doc, path.parent)


# -- emit --------------------------------------------------------------------------------


def emit_config(cfg: PipelineConfig) -> dict:
    """Plain document in metres with inline guides; ``parse_config`` reads it back unchanged."""
    f = float
    return {
        "units": "m",
        "geometry": {
            "guides": [[[[f(v) for v in p] for p in g] for g in surf] for surf in cfg.geometry.surfaces],
            "samples_u": cfg.geometry.samples_u,
            "samples_v": cfg.geometry.samples_v,
        },
        "slicing": {"axis": [f(v) for v in cfg.slicing.axis], "spacing": cfg.slicing.spacing, "offset": cfg.slicing.offset},
        "subdivision": ({"scheme": "table", "values": list(cfg.subdivision.values)} if cfg.subdivision.scheme == "table"
                        else {"scheme": "uniform", "target_length": cfg.subdivision.target_length}),
        "mask": {"kind": cfg.mask.kind, "overrides": [list(o) for o in cfg.mask.overrides], "default": cfg.mask.default},
        "extension": cfg.extension,
        "cross_section": [f(v) for v in cfg.cross_section],
        "miter": cfg.miter,
        "manual_cut_threshold": cfg.manual_cut_threshold,
        "envelopes": {"robot": [f(v) for v in cfg.envelopes.robot], "transport": [f(v) for v in cfg.envelopes.transport],
                      "w_max_kg": cfg.envelopes.w_max, "density_kg_m3": cfg.envelopes.density},
        "nails": {"offset": cfg.nails.offset, "clearance": cfg.nails.clearance,
                  "reference": cfg.nails.reference if isinstance(cfg.nails.reference, str) else [f(v) for v in cfg.nails.reference],
                  "min_overlap_area_m2": cfg.nails.min_overlap_area},
        "allocation": {"inventory": cfg.allocation.inventory, "kerf": cfg.allocation.kerf,
                       "policy": cfg.allocation.policy, "min_usable": cfg.allocation.min_usable},
        "simulate": {"enabled": cfg.simulation.enabled, "mode": cfg.simulation.mode,
                     "subassemblies": cfg.simulation.subassemblies, "thickness_sigma": cfg.simulation.thickness_sigma,
                     "length_sigma": cfg.simulation.length_sigma, "sensor_sigma": cfg.simulation.sensor_sigma,
                     "scan_step": cfg.simulation.scan_step, "perception_noise": cfg.simulation.perception_noise},
        "seed": cfg.seed,
        "output_dir": cfg.output_dir,
    }


def dump_config(cfg: PipelineConfig) -> str:
    return yaml.safe_dump(emit_config(cfg), sort_keys=False)


def bundled_fixture(name: str = "vault.yaml") -> Path:
    return Path(__file__).parent / "fixtures" / name
