"""Patch graph construction, routing, and encircling path assembly."""

import itertools
import math

import numpy as np
import pytest

from pvgap.errors import AreaError
from pvgap.gaps import (EPS_GAP, build_graph, min_gap_path, solve_gap_graph)
from pvgap.geodesics import distance_transform
from pvgap.regions import build_search_area, open_area
from pvgap.scar import threshold_mask
from pvgap.synth import TWO_PI, PhantomSpec, make_phantom


def _opened_with_mask(spec, factor=3.3):
    mesh, config, truth = make_phantom(spec)
    area = build_search_area(mesh, config.areas[0])
    opened = open_area(area)
    mask = threshold_mask(opened.mesh.intensity, spec.blood_pool_mean,
                          spec.blood_pool_sd, factor)
    return opened, mask, truth


# --- pure graph solve ---

def _enumerate_best(weights, start_w, end_w):
    """Reference solve: try every simple patch sequence, every twin pair.

    Costs accumulate left to right, matching the incremental solver, so
    agreement can be asserted with exact float equality.
    """
    n = weights.shape[0]
    best = None
    for k in range(start_w.shape[1]):
        for r in range(1, n + 1):
            for seq in itertools.permutations(range(n), r):
                cost = float(start_w[seq[0], k])
                if not math.isfinite(cost):
                    continue
                feasible = True
                for a, b in zip(seq, seq[1:]):
                    w = float(weights[a, b])
                    if not math.isfinite(w):
                        feasible = False
                        break
                    cost = cost + w
                if not feasible:
                    continue
                tail = float(end_w[seq[-1], k])
                if not math.isfinite(tail):
                    continue
                cand = (cost + tail, k, seq)
                if best is None or cand < best:
                    best = cand
    return best


def _random_instance(rng, n, n_pairs, p_inf):
    w = rng.uniform(0.5, 8.0, size=(n, n))
    w = np.triu(w, 1)
    w = w + w.T
    drop = np.triu(rng.random((n, n)) < p_inf, 1)
    w[drop | drop.T] = np.inf
    start = rng.uniform(0.1, 6.0, size=(n, n_pairs))
    end = rng.uniform(0.1, 6.0, size=(n, n_pairs))
    start[rng.random(start.shape) < p_inf] = np.inf
    end[rng.random(end.shape) < p_inf] = np.inf
    return w, start, end


def test_solver_matches_enumeration():
    rng = np.random.default_rng(42)
    solved = 0
    for trial in range(40):
        n = int(rng.integers(1, 7))
        n_pairs = int(rng.integers(1, 5))
        w, start, end = _random_instance(rng, n, n_pairs,
                                         p_inf=float(rng.uniform(0.0, 0.5)))
        want = _enumerate_best(w, start, end)
        if want is None:
            with pytest.raises(AreaError):
                solve_gap_graph(w, start, end)
            continue
        got = solve_gap_graph(w, start, end)
        assert got[0] == want[0]  # exact: identical accumulation order
        assert got[1] == want[1]
        assert got[2] == want[2]
        solved += 1
    assert solved >= 30


def test_solver_all_unreachable():
    w = np.zeros((2, 2))
    start = np.full((2, 1), np.inf)
    end = np.full((2, 1), np.inf)
    with pytest.raises(AreaError):
        solve_gap_graph(w, start, end)


def test_solver_tie_prefers_smaller_pair_then_sequence():
    # one patch, two identical twin pairs: pair 0 wins
    w = np.zeros((1, 1))
    start = np.array([[1.0, 1.0]])
    end = np.array([[2.0, 2.0]])
    assert solve_gap_graph(w, start, end) == (3.0, 0, (0,))
    # two patches give equal-cost single-hop routes: sequence (0,) wins
    w = np.full((2, 2), np.inf)
    np.fill_diagonal(w, 0.0)
    start = np.array([[1.0], [1.0]])
    end = np.array([[2.0], [2.0]])
    assert solve_gap_graph(w, start, end) == (3.0, 0, (0,))
    # costlier pair 0 loses to pair 1
    w = np.zeros((1, 1))
    start = np.array([[5.0, 1.0]])
    end = np.array([[5.0, 1.0]])
    assert solve_gap_graph(w, start, end) == (2.0, 1, (0,))


# --- graph construction on an opened area ---

def test_build_graph_structure():
    spec = PhantomSpec(keep_fraction=0.75, patchiness=2, seed=3)
    opened, mask, _ = _opened_with_mask(spec)
    graph = build_graph(opened, mask)
    n = graph.n_patches
    assert n >= 2
    assert graph.weights.shape == (n, n)
    assert np.allclose(np.diag(graph.weights), 0.0)
    assert np.array_equal(graph.weights, graph.weights.T)
    n_pairs = len(opened.side_a)
    assert graph.start_w.shape == (n, n_pairs)
    assert graph.end_w.shape == (n, n_pairs)
    for (i, j), isd in graph.geometry.items():
        assert i < j
        assert graph.weights[i, j] == isd.distance
        # stored polyline starts on patch i and ends on patch j
        assert graph.patches.labels[isd.path.vertex_ids[0]] == i
        assert graph.patches.labels[isd.path.vertex_ids[-1]] == j
    # start weights vanish exactly on patches containing a side_a vertex
    for k, v in enumerate(opened.side_a):
        lab = graph.patches.labels[v]
        if lab >= 0:
            assert graph.start_w[lab, k] == 0.0


def test_build_graph_rejects_bad_mask():
    opened, mask, _ = _opened_with_mask(PhantomSpec(keep_fraction=0.5))
    with pytest.raises(ValueError):
        build_graph(opened, mask[:-1])


# --- assembled encircling paths ---

def test_single_gap_phantom_geometry():
    spec = PhantomSpec(keep_fraction=0.5)
    opened, mask, truth = _opened_with_mask(spec)
    path = min_gap_path(build_graph(opened, mask))
    assert path.gap_count == 1
    # the cut runs through the kept arc, splitting it into two patches;
    # the one counted gap is the inter-patch hop across the removed arc
    assert len(path.node_sequence) == 2
    # closure identity between the reported ratio and its parts
    assert path.gap_length == pytest.approx(path.rgm * path.total_length,
                                            rel=1e-12)
    assert path.total_length == pytest.approx(
        path.gap_length + path.non_gap_length, rel=1e-12)
    assert abs(path.rgm - truth.expected_rgm) < 0.1
    # removed arc is centered on angle zero: sectors 1 and 4
    gap = path.gaps[0]
    assert gap.midpoint_region in (1, 4)
    assert not gap.wraps_seam
    assert gap.length > EPS_GAP
    # crossing sits on scar (kept arc holds the seam): stubs have zero
    # length and are dropped from the count
    assert bool(mask[path.crossing_pair[0]])


def test_healthy_crossing_merges_stubs_across_seam():
    # removed arc centered on the seam angle pi: the crossing is healthy
    spec = PhantomSpec(removed_intervals=((0.5 * math.pi, math.pi),))
    opened, mask, _ = _opened_with_mask(spec)
    path = min_gap_path(build_graph(opened, mask))
    assert not bool(mask[path.crossing_pair[0]])
    assert path.gap_count == 1
    gap = path.gaps[0]
    assert gap.wraps_seam
    # the merged wrap gap spans both sides of the seam
    assert 2 in gap.regions and 3 in gap.regions
    assert gap.length == pytest.approx(path.gap_length, rel=1e-12)


def test_no_scar_loop_matches_per_pair_brute_force():
    spec = PhantomSpec(keep_fraction=0.0)
    opened, mask, _ = _opened_with_mask(spec)
    assert not mask.any()
    path = min_gap_path(build_graph(opened, mask))
    assert path.rgm == 1.0
    assert path.gap_count == 1
    assert path.non_gap_length == 0.0
    assert path.gaps[0].wraps_seam
    best = None
    for k in range(len(opened.side_a)):
        field = distance_transform(opened.mesh, [int(opened.side_a[k])])
        d = float(field.dist[opened.side_b[k]])
        if math.isfinite(d) and (best is None or (d, k) < best):
            best = (d, k)
    assert path.crossing_pair == (int(opened.side_a[best[1]]),
                                  int(opened.side_b[best[1]]))
    assert path.total_length == pytest.approx(best[0], rel=1e-9)


def test_full_scar_ring_has_no_gaps():
    spec = PhantomSpec(keep_fraction=1.0)
    opened, mask, _ = _opened_with_mask(spec)
    path = min_gap_path(build_graph(opened, mask))
    assert path.gap_count == 0
    assert path.gaps == ()
    assert path.rgm == pytest.approx(0.0, abs=1e-12)
    assert path.gap_length == 0.0


def test_patchy_phantom_counts_and_ratio():
    spec = PhantomSpec(keep_fraction=0.6, patchiness=3, seed=5)
    opened, mask, truth = _opened_with_mask(spec)
    path = min_gap_path(build_graph(opened, mask))
    # lumping short arcs is allowed, splitting is not
    assert 1 <= path.gap_count <= truth.designed_gap_count
    assert abs(path.rgm - truth.expected_rgm) < 0.12
    assert all(g.length > EPS_GAP for g in path.gaps)
    assert sum(g.length for g in path.gaps) <= path.gap_length + 1e-9
    # interior gap polylines realize the inter-patch weights they route
    graph = build_graph(opened, mask)
    _cost, _k, seq = solve_gap_graph(graph.weights, graph.start_w,
                                     graph.end_w)
    for a, b in zip(seq, seq[1:]):
        lo, hi = (a, b) if a < b else (b, a)
        isd = graph.geometry[(lo, hi)]
        # traced vertex polylines can only overshoot the field distance
        assert isd.distance - 1e-9 <= isd.path.length <= 1.1 * isd.distance


def test_graph_nesting_raises_ratio_with_threshold():
    spec = PhantomSpec(keep_fraction=0.5, taper=(2.5, 8.0))
    opened, _mask, _ = _opened_with_mask(spec)
    prev = -1.0
    for factor in (2.0, 3.3, 4.0, 5.0, 6.0):
        mask = threshold_mask(opened.mesh.intensity, spec.blood_pool_mean,
                              spec.blood_pool_sd, factor)
        path = min_gap_path(build_graph(opened, mask))
        assert path.rgm >= prev - 1e-12
        prev = path.rgm
