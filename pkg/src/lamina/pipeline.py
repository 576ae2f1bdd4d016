"""Config-driven orchestration of every stage, with atomic, reproducible outputs."""
from __future__ import annotations

import json
import os
import shutil
import tempfile
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .config import PipelineConfig
from .connections import (
    ClearanceReport,
    NailSchedule,
    check_nail_clearance,
    place_nails,
    write_nails_csv,
    write_overlaps_csv,
)
from .fabsim import FabricationLog, FabricationSummary, PerceptionConfig, ToleranceModel, run_fabrication
from .geometry import TriMesh, loft_mesh, slice_contours, write_contours_csv, write_obj
from .inventory import CutPlan, Inventory, allocate
from .layout import Layer, MaskSpec, Table, Uniform, all_elements, layout_contours
from .modularize import EnvelopeConfig, Modularization, modularize, write_manifest
from .perception import Thresholds

STAGES = ("design", "nails", "modularize", "allocate", "simulate")


class PipelineError(RuntimeError):
    """A stage failed; ``stage`` names it."""

    def __init__(self, stage: str, message: str):
        self.stage = stage
        super().__init__(f"[{stage}] {message}")


@dataclass
class RunArtifacts:
    out_dir: Path
    files: dict[str, Path] = field(default_factory=dict)
    warnings: list[str] = field(default_factory=list)
    mesh: TriMesh | None = None
    layers: list[Layer] = field(default_factory=list)
    schedule: NailSchedule | None = None
    clearance: ClearanceReport | None = None
    modularization: Modularization | None = None
    inventory: Inventory | None = None
    plan: CutPlan | None = None
    fabrication: dict[str, FabricationLog] = field(default_factory=dict)


# -- stages --------------------------------------------------------------------------


def _design(cfg: PipelineConfig, art: RunArtifacts, tmp: Path):
    g = cfg.geometry
    meshes = [loft_mesh(s, g.samples_u, g.samples_v) for s in g.surfaces]
    verts, faces, n = [], [], 0
    for m in meshes:
        verts.append(m.vertices)
        faces.append(m.faces + n)
        n += len(m.vertices)
    art.mesh = TriMesh(np.vstack(verts), np.vstack(faces))
    contours = slice_contours(art.mesh, cfg.slicing.axis, cfg.slicing.spacing, cfg.slicing.offset)
    sub = cfg.subdivision
    scheme = Table(sub.values) if sub.scheme == "table" else Uniform(sub.target_length)
    mask = MaskSpec(cfg.mask.kind, {(i, j): v for i, j, v in cfg.mask.overrides}, cfg.mask.default)
    _, art.layers = layout_contours(contours, scheme, mask, cfg.extension, cfg.cross_section, cfg.miter,
                                    cfg.manual_cut_threshold, layer_spacing=cfg.slicing.spacing)
    write_obj(art.mesh, tmp / "mesh.obj")
    write_contours_csv(contours, tmp / "contours.csv")
    with open(tmp / "elements.jsonl", "w") as fh:
        for e in all_elements(art.layers):
            fh.write(json.dumps(e.to_record(), sort_keys=True) + "\n")
    with open(tmp / "layers.csv", "w") as fh:
        fh.write("layer,element_id\n")
        for L in art.layers:
            for e in L.elements:
                fh.write(f"{L.index},{e.id}\n")


def _nails(cfg: PipelineConfig, art: RunArtifacts, tmp: Path):
    ref = None if cfg.nails.reference == "bbox_min" else np.asarray(cfg.nails.reference)
    art.schedule = place_nails(art.layers, cfg.nails.offset, ref, cfg.nails.min_overlap_area)
    art.clearance = check_nail_clearance(art.schedule.nails, cfg.nails.clearance)
    if art.schedule.skipped:
        warnings.warn(f"{len(art.schedule.skipped)} overlap(s) too small for nails after the {cfg.nails.offset} m offset")
    if not art.clearance.ok:
        warnings.warn(f"{len(art.clearance.violations)} nail pair(s) on adjacent interfaces closer than "
                      f"{cfg.nails.clearance} m")
    write_overlaps_csv(art.schedule.overlaps, tmp / "overlaps.csv")
    write_nails_csv(art.schedule.nails, tmp / "nails.csv")


def _modularize(cfg: PipelineConfig, art: RunArtifacts, tmp: Path):
    e = cfg.envelopes
    art.modularization = modularize(art.layers, EnvelopeConfig(e.robot, e.transport, e.w_max, e.density))
    write_manifest(art.modularization.subassemblies, tmp / "manifest.csv")


def _allocate(cfg: PipelineConfig, art: RunArtifacts, tmp: Path):
    if cfg.allocation.inventory is None:
        warnings.warn("no inventory configured; allocation skipped")
        return
    art.inventory = Inventory.from_csv(cfg.allocation.inventory)
    art.plan = allocate(all_elements(art.layers), art.inventory, cfg.allocation.kerf, cfg.allocation.policy)
    if art.plan.unassigned:
        warnings.warn(f"{len(art.plan.unassigned)} element(s) have no feasible stock")
    art.inventory.to_csv(tmp / "inventory.csv")
    art.plan.write_csv(tmp / "cut_plan.csv")


def _simulate(cfg: PipelineConfig, art: RunArtifacts, tmp: Path):
    sim = cfg.simulation
    if not sim.enabled:
        return
    subs = art.modularization.subassemblies
    wanted = [s.id for s in subs] if sim.subassemblies == "all" else sim.subassemblies
    unknown = sorted(set(wanted) - {s.id for s in subs})
    if unknown:
        raise ValueError(f"unknown subassemblies {', '.join(unknown)}")
    tol = ToleranceModel.gaussian(sim.thickness_sigma, sim.length_sigma, sim.sensor_sigma, sim.scan_step)
    perception = PerceptionConfig(noise=sim.perception_noise,
                                  thresholds=Thresholds(min_area=0.005, min_aspect=1.5))
    by_index = {L.index: L for L in art.layers}
    inv = art.inventory
    (tmp / "fabrication").mkdir()
    rows = []
    for k, s in enumerate(subs):
        if s.id not in wanted:
            continue
        # independent streams per subassembly, stable under reordering of the selection
        seed = int(np.random.SeedSequence([cfg.seed, k]).generate_state(1)[0])
        log = run_fabrication([by_index[i] for i in s.layer_indices], inv, tol, art.plan, perception, sim.mode,
                              seed, cfg.allocation.kerf, cfg.allocation.min_usable, cfg.manual_cut_threshold)
        inv = log.inventory
        art.fabrication[s.id] = log
        log.write_jsonl(tmp / "fabrication" / f"{s.id}.jsonl")
        rows.append((s.id, log.summary))
        if log.summary.aborted:
            warnings.warn(f"fabrication of {s.id} aborted: {log.summary.abort_reason}")
    keys = list(FabricationSummary.__dataclass_fields__)
    with open(tmp / "fabrication_summary.csv", "w") as fh:
        fh.write("subassembly," + ",".join(keys) + "\n")
        for sid, summ in rows:
            fh.write(sid + "," + ",".join(repr(getattr(summ, k)) for k in keys) + "\n")
    inv.to_csv(tmp / "inventory_after.csv")


_RUNNERS = {"design": _design, "nails": _nails, "modularize": _modularize, "allocate": _allocate,
            "simulate": _simulate}
# stages each target needs, in execution order
TARGETS = {
    "design": ("design",),
    "nails": ("design", "nails"),
    "modularize": ("design", "modularize"),
    "allocate": ("design", "allocate"),
    "simulate": STAGES,
    "all": STAGES,
}


def _publish(tmp: Path, out: Path) -> dict[str, Path]:
    """Move staged files into ``out``, one atomic rename per file."""
    files = {}
    for src in sorted(p for p in tmp.rglob("*") if p.is_file()):
        rel = src.relative_to(tmp)
        dst = out / rel
        dst.parent.mkdir(parents=True, exist_ok=True)
        os.replace(src, dst)
        files[rel.as_posix()] = dst
    return files


def run_pipeline(cfg: PipelineConfig, target: str = "all", out_dir=None) -> RunArtifacts:
    """Run the stages ``target`` needs and write their outputs.

    Everything is staged in a scratch directory next to the output and only
    moved into place once all stages succeed, so a failed run leaves earlier
    outputs untouched.
    """
    if target not in TARGETS:
        raise ValueError(f"unknown target {target!r}")
    out = Path(out_dir if out_dir is not None else cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    art = RunArtifacts(out)
    tmp = Path(tempfile.mkdtemp(prefix=".staging-", dir=out))
    try:
        for stage in TARGETS[target]:
            with warnings.catch_warnings(record=True) as caught:
                warnings.simplefilter("always")
                try:
                    _RUNNERS[stage](cfg, art, tmp)
                except PipelineError:
                    raise
                except (ValueError, ArithmeticError, KeyError, OSError) as exc:
                    raise PipelineError(stage, str(exc)) from exc
            art.warnings += [f"[{stage}] {w.message}" for w in caught]
        (tmp / "warnings.txt").write_text("".join(w + "\n" for w in art.warnings))
        art.files = _publish(tmp, out)
    finally:
        shutil.rmtree(tmp, ignore_errors=True)
    return art
