"""Triangle surface meshes.

Provides the mesh container used across the pipeline, legacy ASCII polydata
reading/writing, topology queries (components, boundary loops, edge paths)
and seam cutting with vertex duplication.

Conventions: coordinates are millimetres, float64. Triangles are consistently
oriented (counter-clockwise seen from outside); orientation is validated on
load together with edge-manifoldness. All containers are treated as immutable
after construction (arrays are locked).
"""

from __future__ import annotations

import heapq
from dataclasses import dataclass
from functools import cached_property
from pathlib import Path

import numpy as np
from scipy import sparse
from scipy.sparse import csgraph

from .errors import AttributeLengthError, MeshFormatError, TopologyError

# Writer emits 9 significant digits; one load/save round trip is idempotent.
_FMT = "%.9g"


def _lock(a: np.ndarray) -> np.ndarray:
    a.flags.writeable = False
    return a


class SurfaceMesh:
    """Edge-manifold oriented triangle mesh with optional per-vertex scalars.

    Parameters
    ----------
    vertices : (n, 3) float array, mm.
    triangles : (m, 3) int array of vertex indices.
    intensity : optional (n,) float array (projected image intensity).
    region : optional (n,) int array (parcellation labels).
    name : dataset name (goes into the file header title line).
    point_data : optional dict of extra named per-vertex arrays; values are
        (array, kind) with kind "float" or "int".
    """

    def __init__(self, vertices, triangles, intensity=None, region=None,
                 name: str = "surface", point_data=None):
        v = np.ascontiguousarray(np.asarray(vertices, dtype=np.float64))
        t = np.ascontiguousarray(np.asarray(triangles, dtype=np.int64))
        if v.ndim != 2 or v.shape[1] != 3:
            raise MeshFormatError("vertices must be an (n, 3) array")
        if t.size == 0:
            t = t.reshape(0, 3)
        if t.ndim != 2 or t.shape[1] != 3:
            raise MeshFormatError("triangles must be an (m, 3) array")
        if t.size and (t.min() < 0 or t.max() >= len(v)):
            raise TopologyError("triangle references a vertex out of range")
        if t.size and ((t[:, 0] == t[:, 1]) | (t[:, 1] == t[:, 2])
                       | (t[:, 0] == t[:, 2])).any():
            raise TopologyError("degenerate triangle (repeated vertex index)")
        self.vertices = _lock(v)
        self.triangles = _lock(t)
        self.name = str(name)
        self.intensity = self._checked(intensity, np.float64, "intensity")
        self.region = self._checked(region, np.int64, "region")
        self.point_data = {}
        for key, (arr, kind) in (point_data or {}).items():
            dt = np.int64 if kind == "int" else np.float64
            self.point_data[key] = (self._checked(arr, dt, key), kind)

    def _checked(self, arr, dtype, label):
        if arr is None:
            return None
        out = np.ascontiguousarray(np.asarray(arr, dtype=dtype))
        if out.shape != (len(self.vertices),):
            raise AttributeLengthError(
                f"{label} has length {out.shape}, expected ({len(self.vertices)},)")
        return _lock(out)

    # ------------------------------------------------------------------
    # derived connectivity (cached)

    @property
    def n_vertices(self) -> int:
        return len(self.vertices)

    @property
    def n_triangles(self) -> int:
        return len(self.triangles)

    @cached_property
    def directed_edges(self) -> np.ndarray:
        """(3m, 2) directed edges (a,b),(b,c),(c,a) per triangle."""
        t = self.triangles
        return _lock(np.concatenate([t[:, [0, 1]], t[:, [1, 2]], t[:, [2, 0]]]))

    @cached_property
    def edges(self) -> np.ndarray:
        """(k, 2) unique undirected edges, each sorted, lexicographic order."""
        und = np.sort(self.directed_edges, axis=1)
        return _lock(np.unique(und, axis=0))

    @cached_property
    def edge_lengths(self) -> np.ndarray:
        d = self.vertices[self.edges[:, 0]] - self.vertices[self.edges[:, 1]]
        return _lock(np.linalg.norm(d, axis=1))

    @cached_property
    def _edge_use_counts(self) -> np.ndarray:
        und = np.sort(self.directed_edges, axis=1)
        uniq, counts = np.unique(und, axis=0, return_counts=True)
        # uniq rows align with self.edges (same unique call)
        return counts

    @cached_property
    def boundary_edges(self) -> np.ndarray:
        """Undirected edges used by exactly one triangle."""
        return _lock(self.edges[self._edge_use_counts == 1])

    @cached_property
    def boundary_vertex_mask(self) -> np.ndarray:
        mask = np.zeros(self.n_vertices, dtype=bool)
        mask[self.boundary_edges.ravel()] = True
        return _lock(mask)

    @cached_property
    def adjacency(self) -> sparse.csr_matrix:
        """Symmetric vertex adjacency with Euclidean edge lengths as data."""
        e, w = self.edges, self.edge_lengths
        n = self.n_vertices
        m = sparse.csr_matrix(
            (np.concatenate([w, w]),
             (np.concatenate([e[:, 0], e[:, 1]]),
              np.concatenate([e[:, 1], e[:, 0]]))),
            shape=(n, n))
        m.sort_indices()
        return m

    @cached_property
    def vertex_triangles(self) -> sparse.csr_matrix:
        """Vertex -> incident triangle incidence (data = triangle index + 1)."""
        t = self.triangles
        rows = t.ravel()
        tri_idx = np.repeat(np.arange(len(t)), 3)
        m = sparse.csr_matrix((tri_idx + 1, (rows, tri_idx)),
                              shape=(self.n_vertices, len(t)))
        m.sort_indices()
        return m

    def triangles_of_vertex(self, v: int) -> np.ndarray:
        vt = self.vertex_triangles
        return vt.indices[vt.indptr[v]:vt.indptr[v + 1]]

    def neighbors(self, v: int) -> np.ndarray:
        a = self.adjacency
        return a.indices[a.indptr[v]:a.indptr[v + 1]]

    @cached_property
    def _dir_third(self) -> dict:
        """Map directed edge (a, b) -> third vertex of its triangle."""
        t = self.triangles
        third = np.concatenate([t[:, 2], t[:, 0], t[:, 1]])
        de = self.directed_edges
        return dict(zip(map(tuple, de.tolist()), third.tolist()))

    # ------------------------------------------------------------------
    # validation

    def check_topology(self) -> None:
        """Raise TopologyError on non-manifold edges, inconsistent orientation
        or zero-length edges."""
        counts = self._edge_use_counts
        if (counts > 2).any():
            e = self.edges[int(np.argmax(counts > 2))]
            raise TopologyError(
                f"non-manifold edge {tuple(e)} shared by more than 2 triangles")
        de = self.directed_edges
        uniq = np.unique(de, axis=0)
        if len(uniq) != len(de):
            raise TopologyError(
                "inconsistent orientation: a directed edge appears twice")
        if self.n_triangles and self.edge_lengths.min() <= 0.0:
            e = self.edges[int(np.argmin(self.edge_lengths))]
            raise TopologyError(f"zero-length edge {tuple(e)}")

    # ------------------------------------------------------------------
    # boundary loops

    def boundary_loops(self) -> list[np.ndarray]:
        """Closed boundary loops as vertex index arrays.

        Loops follow triangle orientation, walking fans so that pinch vertices
        are handled per surface corner. Each loop starts at its smallest
        (tail, head) boundary edge; loops are ordered by that key.
        """
        dir_third = self._dir_third
        b_dir = [(a, b) for (a, b) in map(tuple, self.directed_edges.tolist())
                 if (b, a) not in dir_third]
        b_dir.sort()
        pending = dict.fromkeys(b_dir)  # insertion-ordered set
        loops = []
        while pending:
            start = next(iter(pending))
            loop = [start[0]]
            edge = start
            while True:
                del pending[edge]
                u, v = edge
                loop.append(v)
                w = u
                while (w, v) in dir_third:
                    w = dir_third[(w, v)]
                edge = (v, w)
                if edge == start:
                    break
            loops.append(np.asarray(loop[:-1], dtype=np.int64))
        return loops


# ----------------------------------------------------------------------
# connected components of a vertex mask

@dataclass(frozen=True)
class PatchLabeling:
    """Connected components of a masked vertex set.

    labels[v] is the patch id or -1 outside the mask. Patch ids are contiguous
    and ordered by the smallest vertex index contained in each patch.
    """
    labels: np.ndarray
    count: int
    patches: tuple  # tuple of sorted vertex index arrays


def connected_components(mesh: SurfaceMesh, mask) -> PatchLabeling:
    mask = np.asarray(mask, dtype=bool)
    if mask.shape != (mesh.n_vertices,):
        raise AttributeLengthError("mask length does not match vertex count")
    labels = np.full(mesh.n_vertices, -1, dtype=np.int64)
    idx = np.nonzero(mask)[0]
    if len(idx) == 0:
        return PatchLabeling(_lock(labels), 0, ())
    e = mesh.edges
    keep = mask[e[:, 0]] & mask[e[:, 1]]
    sub = e[keep]
    n = mesh.n_vertices
    g = sparse.csr_matrix((np.ones(len(sub), dtype=np.int8),
                           (sub[:, 0], sub[:, 1])), shape=(n, n))
    _, raw = csgraph.connected_components(g, directed=False)
    raw = raw[idx]
    # Relabel so patch ids follow the smallest contained vertex index
    # (idx is ascending, so first occurrence = smallest member).
    first_seen = {}
    for r in raw.tolist():
        if r not in first_seen:
            first_seen[r] = len(first_seen)
    labels[idx] = np.asarray([first_seen[r] for r in raw.tolist()], dtype=np.int64)
    patches = tuple(np.sort(idx[labels[idx] == k]) for k in range(len(first_seen)))
    return PatchLabeling(_lock(labels), len(first_seen), patches)


# ----------------------------------------------------------------------
# shortest edge path (deterministic Dijkstra)

def edge_path(mesh: SurfaceMesh, sources, targets) -> np.ndarray:
    """Shortest path along mesh edges from a source set to a target set.

    Euclidean edge weights; ties broken by smaller vertex index at each
    expansion. Returns the ordered vertex index path (source first).
    Raises TopologyError if no target is reachable.
    """
    src = np.unique(np.asarray(sources, dtype=np.int64))
    dst = np.unique(np.asarray(targets, dtype=np.int64))
    if len(src) == 0 or len(dst) == 0:
        raise TopologyError("edge_path requires nonempty source and target sets")
    common = np.intersect1d(src, dst)
    if len(common):
        return np.asarray([common[0]], dtype=np.int64)
    target_mask = np.zeros(mesh.n_vertices, dtype=bool)
    target_mask[dst] = True
    dist = np.full(mesh.n_vertices, np.inf)
    pred = np.full(mesh.n_vertices, -1, dtype=np.int64)
    dist[src] = 0.0
    heap = [(0.0, int(v)) for v in src]
    heapq.heapify(heap)
    adj = mesh.adjacency
    done = np.zeros(mesh.n_vertices, dtype=bool)
    while heap:
        d, v = heapq.heappop(heap)
        if done[v] or d > dist[v]:
            continue
        done[v] = True
        if target_mask[v]:
            path = [v]
            while pred[path[-1]] >= 0:
                path.append(int(pred[path[-1]]))
            return np.asarray(path[::-1], dtype=np.int64)
        lo, hi = adj.indptr[v], adj.indptr[v + 1]
        for u, w in zip(adj.indices[lo:hi].tolist(), adj.data[lo:hi].tolist()):
            nd = d + w
            if nd < dist[u]:
                dist[u] = nd
                pred[u] = v
                heapq.heappush(heap, (nd, u))
    raise TopologyError("no edge path between the given sets")


# ----------------------------------------------------------------------
# seam cutting

@dataclass(frozen=True)
class CutMesh:
    """Mesh cut open along a vertex path.

    mesh : the opened mesh (same triangle count, duplicated seam vertices).
    parent_vertex : per-vertex index into the mesh the cut was applied to.
    twin : per-vertex twin index (-1 where none); twins have identical
        coordinates and share no triangle.
    side_a : all cut-path vertices, original copies, in path order.
    side_b : their duplicates, same order.
    """
    mesh: SurfaceMesh
    parent_vertex: np.ndarray
    twin: np.ndarray
    side_a: np.ndarray
    side_b: np.ndarray


def cut_mesh(mesh: SurfaceMesh, path) -> CutMesh:
    """Open `mesh` along an edge-connected simple vertex path.

    Path endpoints must lie on mesh boundary, all other path vertices in the
    mesh interior. Every path vertex is duplicated; triangles on the right
    of the directed path get the duplicates, so after cutting no edge (and
    no shared vertex) connects the two seam copies.
    """
    path = np.asarray(path, dtype=np.int64)
    if len(path) < 3:
        raise TopologyError("cut path needs at least one interior vertex")
    if len(np.unique(path)) != len(path):
        raise TopologyError("cut path revisits a vertex")
    dir_third = mesh._dir_third
    bmask = mesh.boundary_vertex_mask
    if not (bmask[path[0]] and bmask[path[-1]]):
        raise TopologyError("cut path endpoints must lie on a mesh boundary")
    if bmask[path[1:-1]].any():
        raise TopologyError("cut path touches a boundary at an interior vertex")
    for a, b in zip(path[:-1], path[1:]):
        ab = (int(a), int(b))
        if ab not in dir_third and (ab[1], ab[0]) not in dir_third:
            raise TopologyError(f"cut path vertices {ab} are not edge-connected")
        if (ab not in dir_third) or ((ab[1], ab[0]) not in dir_third):
            raise TopologyError(f"cut path edge {ab} lies on a boundary")

    tris = mesh.triangles.copy()
    n = mesh.n_vertices
    dup_of = {}  # original path vertex -> new duplicate index
    for j, v in enumerate(path.tolist()):
        dup_of[v] = n + j

    # Every path vertex is duplicated, endpoints included: the endpoint fans
    # open at the mesh boundary, so the path edge splits them in two exactly
    # like the two spokes split an interior fan. Leaving endpoints single
    # would pinch the seam there and let paths slip around its ends.
    m_last = len(path) - 1
    for i, v in enumerate(path.tolist()):
        prv = int(path[i - 1]) if i > 0 else None
        nxt = int(path[i + 1]) if i < m_last else None
        fan = [int(t) for t in mesh.triangles_of_vertex(v)]
        # Fan triangles pair up across spoke edges (v, x); the path spokes
        # block the flood so it stays on one side.
        blocked = {x for x in (prv, nxt) if x is not None}
        tri_rim = {t: set(mesh.triangles[t].tolist()) - {v} for t in fan}
        by_spoke = {}
        for t, rim in tri_rim.items():
            for x in rim:
                by_spoke.setdefault(x, []).append(t)
        seed_tris = set()
        for t in fan:
            a, b, c = mesh.triangles[t].tolist()
            dirs = {(a, b), (b, c), (c, a)}
            # right of the directed path: triangles holding the reversed
            # directed path edges
            if (nxt, v) in dirs or (v, prv) in dirs:
                seed_tris.add(t)
        if not seed_tris:
            raise TopologyError("cut path is not interior to a triangle fan")
        right = set()
        stack = sorted(seed_tris)
        while stack:
            t = stack.pop()
            if t in right:
                continue
            right.add(t)
            for x in tri_rim[t]:
                if x in blocked:
                    continue
                for t2 in by_spoke[x]:
                    if t2 not in right:
                        stack.append(t2)
        if len(right) == len(fan):
            raise TopologyError("cut does not separate the fan at a vertex")
        dup = dup_of[v]
        for t in right:
            row = tris[t]
            row[row == v] = dup

    n_new = n + len(path)
    verts = np.concatenate([mesh.vertices, mesh.vertices[path]])
    parent = np.concatenate([np.arange(n, dtype=np.int64), path])
    twin = np.full(n_new, -1, dtype=np.int64)
    side_a = path.copy()
    side_b = np.arange(n, n_new, dtype=np.int64)
    twin[side_a] = side_b
    twin[side_b] = side_a

    def _ext(arr):
        if arr is None:
            return None
        return np.concatenate([arr, arr[path]])

    pd = {k: (_ext(a), kind) for k, (a, kind) in mesh.point_data.items()}
    out = SurfaceMesh(verts, tris, intensity=_ext(mesh.intensity),
                      region=_ext(mesh.region), name=mesh.name, point_data=pd)

    # post: the seam is really open
    de = out.directed_edges
    sa = np.zeros(n_new, dtype=bool)
    sb = np.zeros(n_new, dtype=bool)
    sa[side_a] = True
    sb[side_b] = True
    if (sa[de[:, 0]] & sb[de[:, 1]]).any() or (sb[de[:, 0]] & sa[de[:, 1]]).any():
        raise TopologyError("cut failed: an edge still crosses the seam")
    return CutMesh(mesh=out, parent_vertex=_lock(parent), twin=_lock(twin),
                   side_a=_lock(side_a), side_b=_lock(side_b))


# ----------------------------------------------------------------------
# legacy ASCII polydata I/O

def _tokens(lines):
    for ln in lines:
        for tok in ln.split():
            yield tok


def load_mesh(path) -> SurfaceMesh:
    """Read a legacy ASCII polydata file written by save_mesh (or compatible).

    Expects POINTS / POLYGONS with triangle cells, then optional POINT_DATA
    with SCALARS arrays. 'intensity' (float) and 'region' (int) are mapped to
    the corresponding mesh attributes; other scalars land in point_data.
    """
    path = Path(path)
    try:
        text = path.read_text(encoding="ascii")
    except (OSError, UnicodeDecodeError) as e:
        if isinstance(e, UnicodeDecodeError):
            raise MeshFormatError(f"{path}: not an ASCII polydata file") from e
        raise
    lines = text.splitlines()
    if len(lines) < 4:
        raise MeshFormatError(f"{path}: truncated header")
    if not lines[0].startswith("# vtk DataFile"):
        raise MeshFormatError(f"{path}: missing polydata header line")
    name = lines[1].strip()
    if lines[2].strip().upper() != "ASCII":
        raise MeshFormatError(f"{path}: only ASCII encoding is supported")
    if lines[3].split() != ["DATASET", "POLYDATA"]:
        raise MeshFormatError(f"{path}: expected DATASET POLYDATA")

    verts = None
    tris = None
    n_points = 0
    scalars = {}

    def read_values(count, caster, stream):
        vals = []
        while len(vals) < count:
            try:
                ln = next(stream)
            except StopIteration:
                raise MeshFormatError(f"{path}: unexpected end of file") from None
            vals.extend(ln.split())
        if len(vals) != count:
            raise MeshFormatError(f"{path}: ragged data block")
        try:
            return [caster(v) for v in vals]
        except ValueError:
            raise MeshFormatError(f"{path}: bad numeric value") from None

    line_iter = iter(lines[4:])
    for raw in line_iter:
        parts = raw.split()
        if not parts:
            continue
        key = parts[0].upper()
        if key == "POINTS":
            if len(parts) != 3:
                raise MeshFormatError(f"{path}: malformed POINTS line")
            n_points = int(parts[1])
            vals = read_values(3 * n_points, float, line_iter)
            verts = np.asarray(vals, dtype=np.float64).reshape(n_points, 3)
        elif key == "POLYGONS":
            if len(parts) != 3 or verts is None:
                raise MeshFormatError(f"{path}: malformed POLYGONS section")
            m, total = int(parts[1]), int(parts[2])
            if total != 4 * m:
                raise MeshFormatError(
                    f"{path}: POLYGONS size {total} != 4*{m}; only triangles "
                    "are supported")
            vals = read_values(total, int, line_iter)
            arr = np.asarray(vals, dtype=np.int64).reshape(m, 4)
            if (arr[:, 0] != 3).any():
                raise MeshFormatError(f"{path}: non-triangle cell present")
            tris = arr[:, 1:]
        elif key == "POINT_DATA":
            if int(parts[1]) != n_points:
                raise AttributeLengthError(
                    f"{path}: POINT_DATA count {parts[1]} != {n_points}")
        elif key == "SCALARS":
            if len(parts) < 3:
                raise MeshFormatError(f"{path}: malformed SCALARS line")
            sname, stype = parts[1], parts[2].lower()
            comps = int(parts[3]) if len(parts) > 3 else 1
            if comps != 1:
                raise MeshFormatError(f"{path}: multi-component scalars unsupported")
            lut = next(line_iter, "")
            if lut.split()[:1] != ["LOOKUP_TABLE"]:
                raise MeshFormatError(f"{path}: SCALARS without LOOKUP_TABLE")
            if stype in ("int", "long", "short", "vtkidtype"):
                vals = read_values(n_points, int, line_iter)
                scalars[sname] = (np.asarray(vals, dtype=np.int64), "int")
            elif stype in ("float", "double"):
                vals = read_values(n_points, float, line_iter)
                scalars[sname] = (np.asarray(vals, dtype=np.float64), "float")
            else:
                raise MeshFormatError(f"{path}: unsupported scalar type {stype}")
        else:
            raise MeshFormatError(f"{path}: unsupported section {parts[0]!r}")

    if verts is None or tris is None:
        raise MeshFormatError(f"{path}: missing POINTS or POLYGONS section")
    intensity = scalars.pop("intensity", (None, None))[0]
    region_arr = scalars.pop("region", (None, None))[0]
    if region_arr is not None and region_arr.dtype != np.int64:
        raise MeshFormatError(f"{path}: region scalars must be integer")
    mesh = SurfaceMesh(verts, tris, intensity=intensity, region=region_arr,
                       name=name, point_data=scalars)
    mesh.check_topology()
    return mesh


def _format_floats(arr) -> list[str]:
    return [_FMT % x for x in arr]


def save_mesh(mesh: SurfaceMesh, path) -> None:
    """Write legacy ASCII polydata with LF endings and 9 significant digits.

    Writing is atomic (temp file in the target directory, then rename).
    """
    path = Path(path)
    out = []
    out.append("# vtk DataFile Version 3.0")
    out.append(mesh.name if mesh.name else "surface")
    out.append("ASCII")
    out.append("DATASET POLYDATA")
    out.append(f"POINTS {mesh.n_vertices} float")
    for p in mesh.vertices:
        out.append(" ".join(_FMT % c for c in p))
    out.append(f"POLYGONS {mesh.n_triangles} {4 * mesh.n_triangles}")
    for t in mesh.triangles:
        out.append(f"3 {t[0]} {t[1]} {t[2]}")

    arrays = []
    if mesh.intensity is not None:
        arrays.append(("intensity", mesh.intensity, "float"))
    if mesh.region is not None:
        arrays.append(("region", mesh.region, "int"))
    for key, (arr, kind) in mesh.point_data.items():
        arrays.append((key, arr, kind))
    if arrays:
        out.append(f"POINT_DATA {mesh.n_vertices}")
        for key, arr, kind in arrays:
            vtype = "int" if kind == "int" else "float"
            out.append(f"SCALARS {key} {vtype} 1")
            out.append("LOOKUP_TABLE default")
            if kind == "int":
                out.extend(str(x) for x in arr.tolist())
            else:
                out.extend(_format_floats(arr))
    data = ("\n".join(out) + "\n").encode("ascii")
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(data)
    tmp.replace(path)
