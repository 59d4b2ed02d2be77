"""Threshold sweeps, vein curve merging, reports, mesh annotation."""

import json
import math
from types import SimpleNamespace

import numpy as np
import pytest

from pvgap.errors import ConfigError
from pvgap.mesh import connected_components, load_mesh
from pvgap.regions import AreaSpec, RegionConfig
from pvgap.scar import THRESHOLD_FACTORS, threshold_mask
from pvgap.sweep import (REPORT_FORMAT, AreaResult, ThresholdResult,
                         _round6, _vein_summaries, annotated_mesh,
                         case_report, load_report, rgm_nauc, run_case,
                         write_annotated_mesh, write_report)
from pvgap.synth import PhantomSpec, make_phantom, plane_grid

FACTORS = tuple(THRESHOLD_FACTORS)


# --- normalized area under the curve ---

def test_nauc_worked_example():
    # hand trapezoid: (1.3*0.15 + 0.7*0.2 + 1*0.35 + 1*0.65) / 4
    got = rgm_nauc([2.0, 3.3, 4.0, 5.0, 6.0], [0.1, 0.2, 0.2, 0.5, 0.8])
    assert got == pytest.approx(0.33375, abs=1e-12)


def test_nauc_constant_curves_exact():
    for c in (0.0, 0.25, 1.0):
        assert rgm_nauc(FACTORS, [c] * len(FACTORS)) == c


def test_nauc_linear_curves():
    f = np.asarray(FACTORS)
    for a, b in ((0.1, 0.0), (-0.05, 0.9), (0.2, 0.05)):
        want = a * 0.5 * (f[0] + f[-1]) + b
        assert rgm_nauc(f, a * f + b) == pytest.approx(want, rel=1e-12)


@pytest.mark.parametrize("factors,values", [
    ([3.3], [0.1]),
    ([2.0, 3.3], [0.1]),
    ([3.3, 2.0], [0.1, 0.2]),
    ([2.0, 2.0], [0.1, 0.2]),
    ([[2.0, 3.3]], [[0.1, 0.2]]),
])
def test_nauc_validation(factors, values):
    with pytest.raises(ValueError):
        rgm_nauc(factors, values)


# --- vein curve pairing ---

def _fake_area(name, strategy, rgms, error=None):
    results = tuple(ThresholdResult(factor=f, path=SimpleNamespace(rgm=r))
                    for f, r in zip((2.0, 3.3), rgms or ()))
    return AreaResult(name=name, strategy=strategy, labels=(1,),
                      opened=None, error=error, results=results,
                      nauc=None if error else 0.0)


def test_vein_summaries_pointwise_min():
    areas = (_fake_area("RSPV", "independent", (0.4, 0.6)),
             _fake_area("RightPVs", "joint", (0.5, 0.3)))
    out = {v.vein: v for v in _vein_summaries((2.0, 3.3), areas)}
    assert set(out) == {"RSPV", "RIPV"}
    assert out["RSPV"].rgm == (0.4, 0.3)
    assert out["RSPV"].sources == ("RSPV", "RightPVs")
    assert out["RSPV"].nauc == pytest.approx(0.35)
    # the joint area alone covers the vein with no independent twin
    assert out["RIPV"].rgm == (0.5, 0.3)
    assert out["RIPV"].sources == ("RightPVs",)


def test_vein_summaries_skip_failed_and_passthrough():
    areas = (_fake_area("LSPV", "independent", None, error="boom"),
             _fake_area("LIPV", "independent", (0.2, 0.2)),
             _fake_area("Custom", "joint", (0.9, 0.9)))
    out = {v.vein: v for v in _vein_summaries((2.0, 3.3), areas)}
    # failed area contributes nothing; non-canonical joint names pass through
    assert set(out) == {"LIPV", "Custom"}
    assert out["Custom"].sources == ("Custom",)


# --- full case sweeps ---

@pytest.fixture(scope="module")
def disk_case():
    spec = PhantomSpec(keep_fraction=0.5)
    mesh, config, truth = make_phantom(spec)
    case = run_case(mesh, config, spec.blood_pool_mean, spec.blood_pool_sd)
    return mesh, config, truth, case, spec


def test_run_case_structure(disk_case):
    mesh, _config, truth, case, _spec = disk_case
    assert case.mesh_name == mesh.name
    assert case.factors == FACTORS
    assert case.ref_factor == 3.3
    assert len(case.areas) == 1
    res = case.areas[0]
    assert res.ok and res.name == "LSPV"
    assert tuple(t.factor for t in res.results) == FACTORS
    curve = [t.path.rgm for t in res.results]
    assert res.nauc == rgm_nauc(FACTORS, curve)
    assert abs(curve[1] - truth.expected_rgm) < 0.1
    (vein,) = case.veins
    assert vein.vein == "LSPV" and vein.sources == ("LSPV",)
    assert vein.rgm == tuple(curve)


def test_run_case_validation(disk_case):
    mesh, config, _truth, _case, spec = disk_case
    mean, sd = spec.blood_pool_mean, spec.blood_pool_sd
    with pytest.raises(ConfigError):
        run_case(mesh, config, mean, sd, factors=(3.3,))
    with pytest.raises(ConfigError):
        run_case(mesh, config, mean, sd, factors=(4.0, 3.3))
    with pytest.raises(ConfigError):
        run_case(mesh, config, mean, sd, ref_factor=7.0)
    with pytest.raises(ConfigError):
        run_case(mesh, config, mean, sd, strategy="nonsense")
    with pytest.raises(ConfigError):
        run_case(mesh, config, mean, sd, strategy="joint")  # no joint areas
    with pytest.raises(ConfigError):
        run_case(plane_grid(4, 4), config, mean, sd)  # no intensity


def test_run_case_default_reference_without_33(disk_case):
    mesh, config, _truth, _case, spec = disk_case
    case = run_case(mesh, config, spec.blood_pool_mean, spec.blood_pool_sd,
                    factors=(2.0, 4.0))
    assert case.ref_factor == 2.0


def test_run_case_soft_area_failure(disk_case):
    mesh, _config, _truth, _case, spec = disk_case
    bad = AreaSpec(name="RIPV", labels=frozenset({25, 26}),
                   strategy="independent", cut_labels=(25, 26),
                   cut_vertices=None, vein_seeds=(0,))
    case = run_case(mesh, RegionConfig(areas=(bad,)),
                    spec.blood_pool_mean, spec.blood_pool_sd)
    res = case.areas[0]
    assert not res.ok
    assert res.error and res.results == ()
    assert case.veins == ()
    entry = case_report(case)["areas"]["RIPV"]
    assert entry["status"] == "failed"
    assert "error" in entry and "per_threshold" not in entry


def test_joint_case_covers_both_veins():
    spec = PhantomSpec(base_shape="two-hole-plate", keep_fraction=0.7)
    mesh, config, _ = make_phantom(spec)
    case = run_case(mesh, config, spec.blood_pool_mean, spec.blood_pool_sd,
                    factors=(2.0, 3.3, 4.0))
    res = case.areas[0]
    assert res.strategy == "joint" and res.name == "RightPVs"
    veins = {v.vein: v for v in case.veins}
    assert set(veins) == {"RSPV", "RIPV"}
    for v in veins.values():
        assert v.sources == ("RightPVs",)
        assert v.rgm == tuple(t.path.rgm for t in res.results)


def test_thread_count_does_not_change_results(disk_case, monkeypatch):
    mesh, config, _truth, _case, spec = disk_case
    kw = dict(factors=(2.0, 3.3, 4.0))
    one = run_case(mesh, config, spec.blood_pool_mean, spec.blood_pool_sd,
                   threads=1, **kw)
    two = run_case(mesh, config, spec.blood_pool_mean, spec.blood_pool_sd,
                   threads=2, **kw)
    assert case_report(one) == case_report(two)
    monkeypatch.setenv("PVGAP_THREADS", "2")
    via_env = run_case(mesh, config, spec.blood_pool_mean,
                       spec.blood_pool_sd, **kw)
    assert case_report(via_env) == case_report(one)


# --- report emission ---

def test_round6():
    assert _round6(0.123456789) == 0.123457
    assert _round6(1234567.0) == 1234570.0
    assert _round6(7) == 7 and isinstance(_round6(7), int)
    assert _round6(True) is True
    assert _round6({"a": (0.1000000001, "x")}) == {"a": [0.1, "x"]}


def test_case_report_schema(disk_case):
    _mesh, _config, _truth, case, spec = disk_case
    report = case_report(case)
    assert set(report) == {"format", "mesh_name", "thresholds",
                           "reference_threshold", "blood_pool", "areas",
                           "veins"}
    assert report["format"] == REPORT_FORMAT
    assert report["thresholds"] == list(FACTORS)
    assert report["reference_threshold"] == 3.3
    assert report["blood_pool"] == {"mean": spec.blood_pool_mean,
                                    "sd": spec.blood_pool_sd}
    entry = report["areas"]["LSPV"]
    assert set(entry) == {"strategy", "labels", "status", "per_threshold",
                          "rgm_nauc", "gap_count_mean", "gap_count_sd",
                          "gap_length_mm_mean", "gap_length_mm_sd"}
    per = entry["per_threshold"]
    assert [p["factor"] for p in per] == list(FACTORS)
    for p in per:
        assert set(p) == {"factor", "rgm", "gap_length_mm",
                          "total_length_mm", "gap_count", "gaps"}
        assert p["gap_count"] == len(p["gaps"])
        for g in p["gaps"]:
            assert set(g) == {"length_mm", "midpoint_region", "regions",
                              "wraps_seam"}
    counts = [p["gap_count"] for p in per]
    assert entry["gap_count_mean"] == pytest.approx(np.mean(counts))
    assert entry["gap_count_sd"] == pytest.approx(np.std(counts, ddof=1))
    vein = report["veins"]["LSPV"]
    assert vein["rgm"] == [p["rgm"] for p in per]
    assert vein["sources"] == ["LSPV"]


def test_write_and_load_report(disk_case, tmp_path):
    _mesh, _config, _truth, case, _spec = disk_case
    path = tmp_path / "report.json"
    write_report(case, path)
    on_disk = json.loads(path.read_text())
    assert on_disk == _round6(case_report(case))
    assert load_report(path) == on_disk
    (tmp_path / "other.json").write_text(json.dumps({"format": "nope"}))
    with pytest.raises(ConfigError):
        load_report(tmp_path / "other.json")


# --- annotation ---

def test_annotated_mesh_marks(disk_case):
    mesh, _config, _truth, case, spec = disk_case
    out = annotated_mesh(mesh, case)
    keys = set(out.point_data)
    assert {"scar_2", "scar_3.3", "scar_4", "scar_5", "scar_6",
            "patch_id", "path_LSPV"} <= keys
    ref_mask = threshold_mask(mesh.intensity, spec.blood_pool_mean,
                              spec.blood_pool_sd, 3.3)
    scar, _kind = out.point_data["scar_3.3"]
    assert np.array_equal(scar.astype(bool), ref_mask)
    patch, _kind = out.point_data["patch_id"]
    assert np.array_equal(patch >= 0, ref_mask)
    comp = connected_components(mesh, ref_mask)
    assert np.array_equal(patch, comp.labels)
    marks, _kind = out.point_data["path_LSPV"]
    assert set(np.unique(marks)) == {0, 1, 2}
    # gap marks trace the counted gap polylines back onto the source mesh
    ref = next(t for t in case.areas[0].results if t.factor == 3.3)
    n_gap_ids = len({int(v) for g in ref.path.gaps
                     for v in g.vertex_ids.tolist()})
    assert 0 < (marks == 2).sum() <= n_gap_ids


def test_annotated_mesh_round_trip(disk_case, tmp_path):
    mesh, _config, _truth, case, _spec = disk_case
    path = tmp_path / "annotated.vtk"
    write_annotated_mesh(mesh, case, path)
    back = load_mesh(path)
    for key, (arr, kind) in annotated_mesh(mesh, case).point_data.items():
        got, got_kind = back.point_data[key]
        assert got_kind == kind
        assert np.array_equal(got, arr)
