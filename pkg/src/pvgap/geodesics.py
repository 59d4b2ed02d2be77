"""Geodesic distance fields over triangle meshes.

Distances are propagated with planar wavefront updates on triangles
(first-order eikonal update) and plain edge relaxations as fallback; the
triangle update rejects itself at obtuse corners, where the edge relaxation
takes over. Plain edge-Dijkstra alone overestimates surface distance by
several percent on structured meshes, which would bias every downstream gap
ratio, so the triangle update is not optional.

The solver runs as label-correcting sweeps over the active wavefront with
vectorized updates; values only decrease, so it terminates at a fixed point
of the update operator. Accuracy contract: within 2% of analytic geodesics
on well-shaped plane/sphere meshes (asserted in the test suite).
"""

from __future__ import annotations

import heapq
import weakref
from dataclasses import dataclass

import numpy as np

from .errors import TopologyError
from .mesh import SurfaceMesh

_TABLES: "weakref.WeakKeyDictionary" = weakref.WeakKeyDictionary()


def _as_mesh(mesh_like) -> SurfaceMesh:
    return mesh_like.mesh if hasattr(mesh_like, "mesh") else mesh_like


def _corner_tables(mesh: SurfaceMesh) -> dict:
    """Per-triangle-corner geometry used by the wavefront update."""
    cached = _TABLES.get(mesh)
    if cached is not None:
        return cached
    t = mesh.triangles
    p = mesh.vertices[t]  # (m, 3, 3)
    tab = {"C": [], "A": [], "B": [], "la": [], "lb": [], "cos": [],
           "sin2": [], "csq": []}
    for r in range(3):
        c, a, b = r, (r + 1) % 3, (r + 2) % 3
        ea = p[:, a] - p[:, c]
        eb = p[:, b] - p[:, c]
        la = np.linalg.norm(ea, axis=1)
        lb = np.linalg.norm(eb, axis=1)
        cos = np.einsum("ij,ij->i", ea, eb) / (la * lb)
        np.clip(cos, -1.0, 1.0, out=cos)
        tab["C"].append(t[:, c])
        tab["A"].append(t[:, a])
        tab["B"].append(t[:, b])
        tab["la"].append(la)
        tab["lb"].append(lb)
        tab["cos"].append(cos)
        tab["sin2"].append(1.0 - cos * cos)
        tab["csq"].append(np.einsum("ij,ij->i", ea - eb, ea - eb))
    out = {k: np.stack(v, axis=1) for k, v in tab.items()}  # (m, 3)
    _TABLES[mesh] = out
    return out


@dataclass(frozen=True)
class DistanceField:
    """Geodesic distance transform from a source vertex set.

    dist is 0 exactly on sources, +inf on unreachable vertices, and
    1-Lipschitz along edges. pred[v] is an edge neighbor with strictly
    smaller distance (-1 on sources/unreachable); predecessor chains
    terminate at a source.
    """
    mesh: SurfaceMesh
    sources: np.ndarray
    dist: np.ndarray
    pred: np.ndarray


@dataclass(frozen=True)
class TracedPath:
    """Vertex-restricted polyline traced through predecessors."""
    vertex_ids: np.ndarray
    points: np.ndarray
    length: float


@dataclass(frozen=True)
class InterSetDistance:
    """Minimum geodesic distance between two vertex sets.

    path runs from endpoint_a (in set a) to endpoint_b (in set b).
    distance is +inf (with empty path, endpoints -1) when unreachable.
    """
    distance: float
    endpoint_a: int
    endpoint_b: int
    path: TracedPath


def distance_transform(mesh_like, sources) -> DistanceField:
    """Geodesic distance from a set of source vertices."""
    mesh = _as_mesh(mesh_like)
    src = np.unique(np.asarray(sources, dtype=np.int64))
    if src.size == 0:
        raise TopologyError("distance_transform requires a nonempty source set")
    if src.min() < 0 or src.max() >= mesh.n_vertices:
        raise TopologyError("source vertex out of range")
    n = mesh.n_vertices
    tab = _corner_tables(mesh)
    vt = mesh.vertex_triangles

    dist = np.full(n, np.inf)
    dist[src] = 0.0
    active = src
    max_sweeps = 6 * n + 64
    sweeps = 0
    while active.size:
        sweeps += 1
        if sweeps > max_sweeps:
            raise RuntimeError("distance transform failed to converge")
        tri_sel = np.unique(vt[active].indices)
        targets = []
        values = []
        for r in range(3):
            C = tab["C"][tri_sel, r]
            A = tab["A"][tri_sel, r]
            B = tab["B"][tri_sel, r]
            la = tab["la"][tri_sel, r]
            lb = tab["lb"][tri_sel, r]
            dA = dist[A]
            dB = dist[B]
            fa = np.isfinite(dA)
            fb = np.isfinite(dB)
            if fa.any():
                targets.append(C[fa])
                values.append(dA[fa] + la[fa])
            if fb.any():
                targets.append(C[fb])
                values.append(dB[fb] + lb[fb])
            both = fa & fb
            if not both.any():
                continue
            idx = np.nonzero(both)[0]
            dlo = dA[idx]
            dhi = dB[idx]
            llo = la[idx]
            lhi = lb[idx]
            sw = dhi < dlo
            dlo2 = np.where(sw, dhi, dlo)
            dhi2 = np.where(sw, dlo, dhi)
            b = np.where(sw, lhi, llo)  # edge to the earlier support
            a = np.where(sw, llo, lhi)  # edge to the later support
            u = dhi2 - dlo2
            cos = tab["cos"][tri_sel, r][idx]
            sin2 = tab["sin2"][tri_sel, r][idx]
            csq = tab["csq"][tri_sel, r][idx]
            Bq = 2.0 * b * u * (a * cos - b)
            Cq = b * b * (u * u - a * a * sin2)
            disc = Bq * Bq - 4.0 * csq * Cq
            ok = disc >= 0.0
            with np.errstate(invalid="ignore", divide="ignore"):
                t = (-Bq + np.sqrt(np.where(ok, disc, 0.0))) / (2.0 * csq)
                valid = ok & (u < t)
                valid &= a * cos * t < b * (t - u)
                # front must leave through the opposite edge; obtuse corners
                # (cos < 0) are rejected and fall back to edge updates
                valid &= np.where(cos > 0.0, b * (t - u) * cos < a * t,
                                  cos == 0.0)
            if valid.any():
                targets.append(C[idx[valid]])
                values.append(dlo2[valid] + t[valid])
        if not targets:
            break
        tgt = np.concatenate(targets)
        val = np.concatenate(values)
        tmp = np.full(n, np.inf)
        np.minimum.at(tmp, tgt, val)
        improved = tmp < dist
        if not improved.any():
            break
        dist[improved] = tmp[improved]
        active = np.nonzero(improved)[0]

    pred = _predecessors(mesh, dist, src)
    dist.flags.writeable = False
    pred.flags.writeable = False
    src.flags.writeable = False
    return DistanceField(mesh=mesh, sources=src, dist=dist, pred=pred)


def _predecessors(mesh: SurfaceMesh, dist: np.ndarray, src: np.ndarray) -> np.ndarray:
    """Steepest-descent predecessor per vertex: the neighbor minimizing
    dist[u] + |uv| among neighbors with strictly smaller dist (tie: smaller
    index)."""
    e = mesh.edges
    w = mesh.edge_lengths
    tails = np.concatenate([e[:, 0], e[:, 1]])
    heads = np.concatenate([e[:, 1], e[:, 0]])
    ww = np.concatenate([w, w])
    with np.errstate(invalid="ignore"):
        ok = np.isfinite(dist[tails]) & (dist[tails] < dist[heads])
    tails, heads, ww = tails[ok], heads[ok], ww[ok]
    vals = dist[tails] + ww
    pred = np.full(mesh.n_vertices, -1, dtype=np.int64)
    if len(heads):
        order = np.lexsort((tails, vals, heads))
        heads_s = heads[order]
        first = np.ones(len(heads_s), dtype=bool)
        first[1:] = heads_s[1:] != heads_s[:-1]
        pred[heads_s[first]] = tails[order][first]
    pred[src] = -1
    return pred


def trace_path(field: DistanceField, start: int) -> TracedPath:
    """Polyline from `start` down the predecessor chain to a source vertex."""
    mesh = field.mesh
    start = int(start)
    if not np.isfinite(field.dist[start]):
        raise TopologyError(f"vertex {start} is unreachable from the sources")
    ids = [start]
    seen = {start}
    while field.pred[ids[-1]] >= 0:
        nxt = int(field.pred[ids[-1]])
        if nxt in seen:
            raise RuntimeError("predecessor chain cycled")
        seen.add(nxt)
        ids.append(nxt)
    if field.dist[ids[-1]] != 0.0:
        raise RuntimeError("predecessor chain did not reach a source")
    ids_arr = np.asarray(ids, dtype=np.int64)
    pts = mesh.vertices[ids_arr]
    length = float(np.linalg.norm(np.diff(pts, axis=0), axis=1).sum())
    return TracedPath(vertex_ids=ids_arr, points=pts, length=length)


def _best_at(dist: np.ndarray, where: np.ndarray):
    """(value, vertex) minimizing dist over `where`, tie to smaller vertex."""
    vals = dist[where]
    order = np.lexsort((where, vals))
    j = order[0]
    return float(vals[j]), int(where[j])


def _reverse(path: TracedPath) -> TracedPath:
    return TracedPath(vertex_ids=path.vertex_ids[::-1],
                      points=path.points[::-1], length=path.length)


def min_interset_distance(mesh_like, set_a, set_b,
                          field_a: DistanceField | None = None,
                          field_b: DistanceField | None = None) -> InterSetDistance:
    """Minimum geodesic distance between two vertex sets with its polyline.

    Evaluated in both directions and symmetrized (the transforms are not
    exactly symmetric vertex-for-vertex); direction a->b wins exact ties.
    Endpoint ties resolve to the smaller vertex index on the far set.
    """
    mesh = _as_mesh(mesh_like)
    a = np.unique(np.asarray(set_a, dtype=np.int64))
    b = np.unique(np.asarray(set_b, dtype=np.int64))
    if a.size == 0 or b.size == 0:
        raise TopologyError("min_interset_distance requires nonempty sets")
    if field_a is None:
        field_a = distance_transform(mesh, a)
    if field_b is None:
        field_b = distance_transform(mesh, b)
    d_ab, end_b = _best_at(field_a.dist, b)
    d_ba, end_a = _best_at(field_b.dist, a)
    dist = min(d_ab, d_ba)
    if not np.isfinite(dist):
        empty = TracedPath(vertex_ids=np.empty(0, dtype=np.int64),
                           points=np.empty((0, 3)), length=np.inf)
        return InterSetDistance(distance=np.inf, endpoint_a=-1, endpoint_b=-1,
                                path=empty)
    if d_ab <= d_ba:
        path = _reverse(trace_path(field_a, end_b))  # now runs a -> b
        return InterSetDistance(distance=d_ab,
                                endpoint_a=int(path.vertex_ids[0]),
                                endpoint_b=end_b, path=path)
    path = trace_path(field_b, end_a)  # runs a -> b already
    return InterSetDistance(distance=d_ba, endpoint_a=end_a,
                            endpoint_b=int(path.vertex_ids[-1]), path=path)
