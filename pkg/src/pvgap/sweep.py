"""Threshold sweeps over search areas and report assembly.

A case run opens each configured area once, classifies scar at every
threshold factor, solves the minimum-gap encircling path per factor, and
summarizes the gap fraction curve by its normalized area under the curve.
Failures of one area (bad labels, unresolvable cuts, missing connectivity)
are recorded and do not abort the remaining areas.

Veins measured both independently and jointly with their ipsilateral
neighbor are combined conservatively: the final per-vein curve takes the
pointwise minimum of the two measurements and the summary is recomputed
from the combined curve.
"""

from __future__ import annotations

import json
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import AreaError, ConfigError
from .gaps import EncirclingPath, build_graph, min_gap_path
from .mesh import SurfaceMesh, connected_components, save_mesh
from .regions import (JOINT_OF_VEIN, OpenedArea, RegionConfig,
                      build_search_area, open_area, veins_of_joint)
from .scar import THRESHOLD_FACTORS, threshold_mask

REPORT_FORMAT = "gap-report 1"


def rgm_nauc(factors, values) -> float:
    """Area under the gap-fraction curve over the factor range, normalized
    to [0, 1] by the range width (trapezoid rule)."""
    f = np.asarray(factors, dtype=np.float64)
    v = np.asarray(values, dtype=np.float64)
    if f.ndim != 1 or f.shape != v.shape or len(f) < 2:
        raise ValueError("need matching factor/value arrays of length >= 2")
    if not (np.diff(f) > 0).all():
        raise ValueError("threshold factors must be strictly ascending")
    # fsum keeps constant/linear curves exact at double precision
    steps = math.fsum((np.diff(f) * 0.5 * (v[1:] + v[:-1])).tolist())
    return steps / (f[-1] - f[0])


@dataclass(frozen=True)
class ThresholdResult:
    factor: float
    path: EncirclingPath


@dataclass(frozen=True)
class AreaResult:
    name: str
    strategy: str
    labels: tuple
    opened: OpenedArea | None
    error: str | None
    results: tuple  # ThresholdResult per factor, factor-aligned
    nauc: float | None

    @property
    def ok(self) -> bool:
        return self.error is None


@dataclass(frozen=True)
class VeinSummary:
    """Final per-vein gap-fraction curve after combining strategies."""
    vein: str
    rgm: tuple  # factor-aligned, pointwise min over sources
    nauc: float
    sources: tuple  # contributing area names


@dataclass(frozen=True)
class CaseResult:
    mesh_name: str
    factors: tuple
    ref_factor: float
    bp_mean: float
    bp_sd: float
    areas: tuple  # AreaResult, config order
    veins: tuple  # VeinSummary, first-seen vein order


def _run_area(mesh, spec, masks):
    try:
        area = build_search_area(mesh, spec)
        opened = open_area(area)
        sub_of_open = area.parent_vertex[opened.parent_vertex]
        results = []
        for factor, mask in masks:
            graph = build_graph(opened, mask[sub_of_open])
            results.append(ThresholdResult(factor=factor,
                                           path=min_gap_path(graph)))
        nauc = rgm_nauc([r.factor for r in results],
                        [r.path.rgm for r in results])
        return AreaResult(name=spec.name, strategy=spec.strategy,
                          labels=tuple(sorted(spec.labels)), opened=opened,
                          error=None, results=tuple(results), nauc=nauc)
    except AreaError as exc:
        return AreaResult(name=spec.name, strategy=spec.strategy,
                          labels=tuple(sorted(spec.labels)), opened=None,
                          error=str(exc), results=(), nauc=None)


def _vein_summaries(factors, area_results) -> tuple:
    """Pointwise-minimum combination of independent and joint measurements,
    keyed by canonical vein names; other area names pass through as-is."""
    by_name = {r.name: r for r in area_results if r.ok}
    curves = {}  # vein -> list of (area name, rgm tuple)

    def add(vein, res):
        curves.setdefault(vein, []).append(
            (res.name, tuple(t.path.rgm for t in res.results)))

    for res in area_results:
        if not res.ok:
            continue
        if res.strategy == "independent":
            add(res.name, res)
        else:
            veins = veins_of_joint(res.name)
            for v in (veins if veins else (res.name,)):
                add(v, res)
    # joint results already attached; make sure paired independents come
    # first in the source list for readability
    out = []
    for vein, entries in curves.items():
        entries = sorted(entries, key=lambda e: (by_name[e[0]].strategy, e[0]))
        merged = tuple(min(vals) for vals in zip(*(e[1] for e in entries)))
        out.append(VeinSummary(vein=vein, rgm=merged,
                               nauc=rgm_nauc(factors, merged),
                               sources=tuple(e[0] for e in entries)))
    return tuple(out)


def run_case(mesh: SurfaceMesh, config: RegionConfig, bp_mean: float,
             bp_sd: float, factors=THRESHOLD_FACTORS,
             ref_factor: float | None = None, strategy: str = "both",
             threads: int | None = None) -> CaseResult:
    """Measure every configured area of one annotated mesh."""
    if mesh.intensity is None:
        raise ConfigError("mesh carries no intensity values")
    factors = tuple(float(k) for k in factors)
    if len(factors) < 2 or not all(a < b for a, b in zip(factors,
                                                         factors[1:])):
        raise ConfigError("need at least 2 strictly ascending thresholds")
    if ref_factor is None:
        ref_factor = 3.3 if 3.3 in factors else factors[0]
    if ref_factor not in factors:
        raise ConfigError(f"reference factor {ref_factor} is not swept")
    if strategy not in ("independent", "joint", "both"):
        raise ConfigError("strategy must be independent, joint, or both")
    if threads is None:
        threads = int(os.environ.get("PVGAP_THREADS", "1"))

    masks = [(k, threshold_mask(mesh.intensity, bp_mean, bp_sd, k))
             for k in factors]
    specs = [a for a in config.areas
             if strategy == "both" or a.strategy == strategy]
    if not specs:
        raise ConfigError(f"no area matches strategy {strategy!r}")

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            futures = [pool.submit(_run_area, mesh, s, masks) for s in specs]
            area_results = tuple(f.result() for f in futures)
    else:
        area_results = tuple(_run_area(mesh, s, masks) for s in specs)

    return CaseResult(mesh_name=mesh.name, factors=factors,
                      ref_factor=float(ref_factor), bp_mean=float(bp_mean),
                      bp_sd=float(bp_sd), areas=area_results,
                      veins=_vein_summaries(factors, area_results))


# ----------------------------------------------------------------------
# report emission

def _round6(obj):
    """Round floats to 6 significant digits, recursively."""
    if isinstance(obj, float):
        return float(f"{obj:.6g}")
    if isinstance(obj, dict):
        return {k: _round6(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_round6(v) for v in obj]
    return obj


def case_report(case: CaseResult) -> dict:
    areas = {}
    for res in case.areas:
        entry = {"strategy": res.strategy, "labels": list(res.labels),
                 "status": "ok" if res.ok else "failed"}
        if not res.ok:
            entry["error"] = res.error
            areas[res.name] = entry
            continue
        per = []
        for tr in res.results:
            p = tr.path
            per.append({
                "factor": tr.factor,
                "rgm": p.rgm,
                "gap_length_mm": p.gap_length,
                "total_length_mm": p.total_length,
                "gap_count": p.gap_count,
                "gaps": [{"length_mm": g.length,
                          "midpoint_region": g.midpoint_region,
                          "regions": list(g.regions),
                          "wraps_seam": g.wraps_seam} for g in p.gaps],
            })
        counts = np.asarray([p["gap_count"] for p in per], dtype=np.float64)
        lens = np.asarray([p["gap_length_mm"] for p in per], dtype=np.float64)
        entry["per_threshold"] = per
        entry["rgm_nauc"] = res.nauc
        # summary across thresholds, sample standard deviation
        entry["gap_count_mean"] = float(counts.mean())
        entry["gap_count_sd"] = float(counts.std(ddof=1))
        entry["gap_length_mm_mean"] = float(lens.mean())
        entry["gap_length_mm_sd"] = float(lens.std(ddof=1))
        areas[res.name] = entry
    veins = {v.vein: {"rgm": list(v.rgm), "rgm_nauc": v.nauc,
                      "sources": list(v.sources)}
             for v in case.veins}
    return {
        "format": REPORT_FORMAT,
        "mesh_name": case.mesh_name,
        "thresholds": list(case.factors),
        "reference_threshold": case.ref_factor,
        "blood_pool": {"mean": case.bp_mean, "sd": case.bp_sd},
        "areas": areas,
        "veins": veins,
    }


def write_report(case: CaseResult, path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_suffix(path.suffix + ".tmp")
    tmp.write_text(json.dumps(_round6(case_report(case)), indent=2) + "\n",
                   encoding="utf-8")
    tmp.replace(path)


def load_report(path) -> dict:
    with open(path, "r", encoding="utf-8") as fh:
        data = json.load(fh)
    if not isinstance(data, dict) or data.get("format") != REPORT_FORMAT:
        raise ConfigError(f"{path}: not a {REPORT_FORMAT} file")
    return data


def annotated_mesh(mesh: SurfaceMesh, case: CaseResult) -> SurfaceMesh:
    """Copy of the mesh with scar masks, patch ids, and path marks.

    scar_<k>: 0/1 scar classification per swept factor. patch_id: connected
    scar patches of the whole mesh at the reference factor (-1 healthy).
    path_<AREA>: 0 off path, 1 on the encircling path, 2 on a gap (gap wins),
    at the reference factor.
    """
    pd = dict(mesh.point_data)
    ref_mask = None
    for k in case.factors:
        mask = threshold_mask(mesh.intensity, case.bp_mean, case.bp_sd, k)
        pd[f"scar_{k:g}"] = (mask.astype(np.int64), "int")
        if k == case.ref_factor:
            ref_mask = mask
    comp = connected_components(mesh, ref_mask)
    pd["patch_id"] = (comp.labels, "int")
    for res in case.areas:
        if not res.ok:
            continue
        to_orig = res.opened.area.parent_vertex[res.opened.parent_vertex]
        marks = np.zeros(mesh.n_vertices, dtype=np.int64)
        ref = next(t for t in res.results if t.factor == case.ref_factor)
        for _kind, ids in ref.path.segment_ids:
            marks[to_orig[ids]] = 1
        for gap in ref.path.gaps:
            marks[to_orig[gap.vertex_ids]] = 2
        pd[f"path_{res.name}"] = (marks, "int")
    return SurfaceMesh(vertices=mesh.vertices, triangles=mesh.triangles,
                       intensity=mesh.intensity, region=mesh.region,
                       name=mesh.name, point_data=pd)


def write_annotated_mesh(mesh: SurfaceMesh, case: CaseResult, path) -> None:
    save_mesh(annotated_mesh(mesh, case), path)
