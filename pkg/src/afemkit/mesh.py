"""Conforming 2D triangulations with newest-vertex bisection (NVB).

A triangle stores its vertex triple ``v`` so that the refinement edge is
``(v[0], v[1])`` and ``v[2]`` is the newest vertex.  Bisection replaces a
triangle by

    child 0 = (v[2], v[0], m)    child 1 = (v[1], v[2], m)

with ``m`` the midpoint of the refinement edge.  Every triangle remembers
its level-0 ancestor (``root``) and the bit path of bisections taken from
it, which makes overlay and lineage queries pure tree operations.

Meshes are immutable: :func:`refine` and :func:`overlay` return new meshes
whose vertex numbering extends the parent numbering, so coefficient vectors
and prolongations can rely on stable vertex ids along a refinement chain.
"""

from __future__ import annotations

import io
from dataclasses import dataclass

import numpy as np

from .errors import GeometryError, LineageError, StructureError

DIRICHLET = "dirichlet"
NEUMANN = "neumann"

_MARKER_TOKENS = {"D": DIRICHLET, "N": NEUMANN}
_TOKEN_OF = {DIRICHLET: "D", NEUMANN: "N"}


def _ekey(a: int, b: int) -> tuple[int, int]:
    """Canonical (sorted) key for the undirected edge {a, b}."""
    return (a, b) if a < b else (b, a)


@dataclass(frozen=True)
class Triangle:
    """One triangle: refinement edge (v[0], v[1]), newest vertex v[2]."""

    v: tuple[int, int, int]
    generation: int
    root: int
    path: tuple[int, ...]

    @property
    def refinement_edge(self) -> tuple[int, int]:
        return _ekey(self.v[0], self.v[1])

    def edges(self) -> tuple[tuple[int, int], ...]:
        a, b, c = self.v
        return (_ekey(a, b), _ekey(b, c), _ekey(c, a))


class Mesh:
    """Immutable conforming triangulation.

    Construct through :func:`initial_mesh`, :func:`refine` or
    :func:`overlay`; the raw constructor performs no validation.
    """

    def __init__(
        self,
        coords: np.ndarray,
        triangles: tuple[Triangle, ...],
        boundary: dict[tuple[int, int], str],
        initial: "Mesh | None",
    ):
        self.coords = coords
        self.coords.setflags(write=False)
        self.triangles = triangles
        self.boundary = boundary
        self._initial = initial
        self.cache: dict = {}

    # ------------------------------------------------------------------ basics
    @property
    def initial(self) -> "Mesh":
        return self._initial if self._initial is not None else self

    @property
    def n_vertices(self) -> int:
        return self.coords.shape[0]

    @property
    def n_triangles(self) -> int:
        return len(self.triangles)

    @property
    def tri_array(self) -> np.ndarray:
        """(nt, 3) int array of vertex ids, row order = triangle order."""
        arr = self.cache.get("tri_array")
        if arr is None:
            arr = np.array([t.v for t in self.triangles], dtype=np.int64)
            arr.setflags(write=False)
            self.cache["tri_array"] = arr
        return arr

    def signed_areas(self) -> np.ndarray:
        t = self.tri_array
        p0 = self.coords[t[:, 0]]
        d1 = self.coords[t[:, 1]] - p0
        d2 = self.coords[t[:, 2]] - p0
        return 0.5 * (d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0])

    def leaf_keys(self) -> set[tuple[int, tuple[int, ...]]]:
        """Identify each triangle by (root ancestor id, bisection path)."""
        keys = self.cache.get("leaf_keys")
        if keys is None:
            keys = {(t.root, t.path) for t in self.triangles}
            self.cache["leaf_keys"] = keys
        return keys

    def edge_incidence(self) -> dict[tuple[int, int], list[int]]:
        inc = self.cache.get("edge_incidence")
        if inc is None:
            inc = {}
            for i, t in enumerate(self.triangles):
                for e in t.edges():
                    inc.setdefault(e, []).append(i)
            self.cache["edge_incidence"] = inc
        return inc

    def same_lineage(self, other: "Mesh") -> bool:
        return self.initial is other.initial

    def __eq__(self, other) -> bool:
        if not isinstance(other, Mesh):
            return NotImplemented
        return self.same_lineage(other) and self.leaf_keys() == other.leaf_keys()

    def __hash__(self):
        return id(self)


# ---------------------------------------------------------------------------
# construction
# ---------------------------------------------------------------------------


def _orient_and_assign(coords: np.ndarray, tri: tuple[int, int, int]) -> tuple[int, int, int]:
    """CCW-orient a vertex triple and rotate the longest edge into slot (0,1).

    Ties in edge length are broken by the lexicographically smallest sorted
    vertex-id pair, which keeps the assignment deterministic on structured
    grids where exact ties are common.
    """
    a, b, c = tri
    d1 = coords[b] - coords[a]
    d2 = coords[c] - coords[a]
    area2 = float(d1[0] * d2[1] - d1[1] * d2[0])
    if area2 == 0.0:
        raise GeometryError(f"degenerate triangle {tri}")
    if area2 < 0.0:
        a, b, c = a, c, b
    candidates = []
    for order in ((a, b, c), (b, c, a), (c, a, b)):
        i, j = order[0], order[1]
        length2 = float(np.sum((coords[j] - coords[i]) ** 2))
        candidates.append((-length2, _ekey(i, j), order))
    candidates.sort(key=lambda item: (item[0], item[1]))
    return candidates[0][2]


def _audit(mesh: Mesh, check_partial_edges: bool = False) -> None:
    """Raise on any conformity violation; used on construction and in tests."""
    nv = mesh.n_vertices
    for i, t in enumerate(mesh.triangles):
        if len(set(t.v)) != 3:
            raise StructureError(f"triangle {i} has repeated vertices {t.v}")
        if not all(0 <= k < nv for k in t.v):
            raise StructureError(f"triangle {i} references missing vertex: {t.v}")
    areas = mesh.signed_areas()
    if np.any(areas <= 0.0):
        bad = int(np.argmin(areas))
        raise GeometryError(f"triangle {bad} has non-positive area {areas[bad]:.3e}")
    inc = mesh.edge_incidence()
    for e, tris in inc.items():
        if len(tris) > 2:
            raise StructureError(f"edge {e} shared by {len(tris)} triangles")
    boundary_edges = {e for e, tris in inc.items() if len(tris) == 1}
    for e in mesh.boundary:
        if e not in boundary_edges:
            raise StructureError(f"marked boundary edge {e} is not a boundary edge")
    for e in boundary_edges:
        if e not in mesh.boundary:
            raise StructureError(f"boundary edge {e} lacks a marker")
    if check_partial_edges:
        used = {k for t in mesh.triangles for k in t.v}
        if len(used) != nv:
            missing = sorted(set(range(nv)) - used)
            raise StructureError(f"vertices {missing} belong to no triangle")
        # A vertex sitting strictly inside another triangle's edge means two
        # triangles share only part of an edge (a hanging node in the input).
        for e in inc:
            pa, pb = mesh.coords[e[0]], mesh.coords[e[1]]
            d = pb - pa
            ll = float(d @ d)
            for v in range(nv):
                if v in e:
                    continue
                w = mesh.coords[v] - pa
                t_par = float(w @ d) / ll
                if 1e-12 < t_par < 1 - 1e-12:
                    dist2 = float(w @ w) - t_par * t_par * ll
                    if dist2 < 1e-24 * ll:
                        raise StructureError(
                            f"vertex {v} lies inside edge {e}: non-conforming input"
                        )


def initial_mesh(
    coords,
    triangles,
    boundary: dict[tuple[int, int], str] | None = None,
) -> Mesh:
    """Build a generation-0 mesh with refinement edges assigned.

    ``boundary`` maps sorted vertex-id pairs of boundary edges to
    ``"dirichlet"`` or ``"neumann"``; unlisted boundary edges default to
    Dirichlet.
    """
    coords = np.asarray(coords, dtype=float)
    if coords.ndim != 2 or coords.shape[1] != 2:
        raise StructureError("coords must be an (n, 2) array")
    if not np.all(np.isfinite(coords)):
        raise GeometryError("non-finite vertex coordinates")
    tris = []
    for i, tri in enumerate(triangles):
        v = _orient_and_assign(coords, tuple(int(k) for k in tri))
        tris.append(Triangle(v=v, generation=0, root=i, path=()))
    mesh = Mesh(coords, tuple(tris), {}, initial=None)
    inc = mesh.edge_incidence()
    markers = {}
    given = {_ekey(*e): m for e, m in (boundary or {}).items()}
    for e, incident in inc.items():
        if len(incident) == 1:
            markers[e] = given.get(e, DIRICHLET)
    for e, m in given.items():
        if e not in markers:
            raise StructureError(f"boundary marker given for non-boundary edge {e}")
        if m not in (DIRICHLET, NEUMANN):
            raise StructureError(f"unknown boundary marker {m!r} for edge {e}")
    mesh.boundary = markers
    _audit(mesh, check_partial_edges=True)
    return mesh


# ---------------------------------------------------------------------------
# refinement
# ---------------------------------------------------------------------------


def refine(mesh: Mesh, marked, edges: str = "ref") -> Mesh:
    """Coarsest conforming NVB refinement bisecting all marked triangles.

    ``edges`` selects how much of a marked triangle is split: ``"ref"``
    splits only its refinement edge (one bisection), ``"all"`` marks all
    three of its edges so the triangle is split into four children (the
    strategy used by the adaptive drivers, which accelerates growth on
    strongly graded meshes).

    Closure works on edges: the set of edges to be split is saturated so
    that any triangle touching a split edge has its own refinement edge
    split as well; afterwards each triangle is bisected once or twice,
    giving two to four children.
    """
    if edges not in ("ref", "all"):
        raise StructureError(f"unknown edge-marking mode {edges!r}")
    marked = set(int(m) for m in marked)
    for m in marked:
        if not 0 <= m < mesh.n_triangles:
            raise StructureError(f"marked id {m} out of range")
    if not marked:
        return mesh

    inc = mesh.edge_incidence()
    split: set[tuple[int, int]] = set()
    queue = []
    for m in marked:
        t = mesh.triangles[m]
        if edges == "all":
            v0, v1, v2 = t.v
            seeds = (_ekey(v0, v1), _ekey(v1, v2), _ekey(v2, v0))
        else:
            seeds = (t.refinement_edge,)
        for e in seeds:
            if e not in split:
                split.add(e)
                queue.append(e)
    while queue:
        e = queue.pop()
        for ti in inc[e]:
            re = mesh.triangles[ti].refinement_edge
            if re not in split:
                split.add(re)
                queue.append(re)

    # midpoints in deterministic (sorted-edge) order
    order = sorted(split)
    mid = {}
    new_pts = np.empty((len(order), 2))
    for i, e in enumerate(order):
        mid[e] = mesh.n_vertices + i
        new_pts[i] = 0.5 * (mesh.coords[e[0]] + mesh.coords[e[1]])
    coords = np.vstack([mesh.coords, new_pts])

    out: list[Triangle] = []

    def emit(t: Triangle) -> None:
        e = t.refinement_edge
        if e not in split:
            out.append(t)
            return
        v0, v1, v2 = t.v
        m = mid[e]
        emit(Triangle((v2, v0, m), t.generation + 1, t.root, t.path + (0,)))
        emit(Triangle((v1, v2, m), t.generation + 1, t.root, t.path + (1,)))

    for t in mesh.triangles:
        emit(t)

    boundary = {}
    for e, mk in mesh.boundary.items():
        if e in split:
            m = mid[e]
            boundary[_ekey(e[0], m)] = mk
            boundary[_ekey(m, e[1])] = mk
        else:
            boundary[e] = mk
    return Mesh(coords, tuple(out), boundary, initial=mesh.initial)


def uniform_refine(mesh: Mesh, rounds: int = 1) -> Mesh:
    for _ in range(rounds):
        mesh = refine(mesh, range(mesh.n_triangles))
    return mesh


# ---------------------------------------------------------------------------
# overlay and lineage
# ---------------------------------------------------------------------------


def _refines(fine: Mesh, coarse: Mesh) -> bool:
    """True if every leaf of ``fine`` descends from (or equals) a leaf of ``coarse``."""
    ck = coarse.leaf_keys()
    for root, path in fine.leaf_keys():
        if not any((root, path[:n]) in ck for n in range(len(path), -1, -1)):
            return False
    return True


def overlay(a: Mesh, b: Mesh) -> Mesh:
    """Coarsest common refinement of two meshes of the same lineage."""
    if not a.same_lineage(b):
        raise LineageError("overlay requires meshes refined from the same initial mesh")
    if _refines(b, a):
        return b
    if _refines(a, b):
        return a

    union = a.leaf_keys() | b.leaf_keys()
    internal = set()
    for root, path in union:
        for n in range(len(path)):
            internal.add((root, path[:n]))
    leaves = {k for k in union if k not in internal}

    init = a.initial
    next_id = init.n_vertices
    mid: dict[tuple[int, int], int] = {}
    boundary = dict(init.boundary)
    pts: list[np.ndarray] = []

    def midpoint(i: int, j: int) -> int:
        nonlocal next_id
        e = _ekey(i, j)
        m = mid.get(e)
        if m is None:
            m = next_id
            next_id += 1
            mid[e] = m
            pts.append(0.5 * (point(e[0]) + point(e[1])))
            if e in boundary:
                mk = boundary.pop(e)
                boundary[_ekey(e[0], m)] = mk
                boundary[_ekey(m, e[1])] = mk
        return m

    def point(i: int) -> np.ndarray:
        if i < init.n_vertices:
            return init.coords[i]
        return pts[i - init.n_vertices]

    out: list[Triangle] = []

    def descend(t: Triangle) -> None:
        if (t.root, t.path) in leaves:
            out.append(t)
            return
        v0, v1, v2 = t.v
        m = midpoint(v0, v1)
        descend(Triangle((v2, v0, m), t.generation + 1, t.root, t.path + (0,)))
        descend(Triangle((v1, v2, m), t.generation + 1, t.root, t.path + (1,)))

    for t in init.triangles:
        descend(t)

    all_coords = np.vstack([init.coords] + pts) if pts else init.coords.copy()
    return Mesh(all_coords, tuple(out), boundary, initial=init)


def lineage_stats(coarse: Mesh, fine: Mesh) -> tuple[int, int, int]:
    """Counts (#refined coarse elements, #common elements, #fine elements)."""
    if not coarse.same_lineage(fine) or not _refines(fine, coarse):
        raise LineageError("fine mesh does not descend from coarse mesh")
    common = len(coarse.leaf_keys() & fine.leaf_keys())
    refined = coarse.n_triangles - common
    return refined, common, fine.n_triangles


# ---------------------------------------------------------------------------
# quality
# ---------------------------------------------------------------------------


def shape_regularity(mesh: Mesh) -> float:
    """max over triangles of diameter / inradius."""
    t = mesh.tri_array
    p = mesh.coords[t]  # (nt, 3, 2)
    sides = np.stack(
        [
            np.linalg.norm(p[:, 1] - p[:, 0], axis=1),
            np.linalg.norm(p[:, 2] - p[:, 1], axis=1),
            np.linalg.norm(p[:, 0] - p[:, 2], axis=1),
        ],
        axis=1,
    )
    diam = sides.max(axis=1)
    area = mesh.signed_areas()
    inradius = 2.0 * area / sides.sum(axis=1)
    return float(np.max(diam / inradius))


# ---------------------------------------------------------------------------
# serialization
# ---------------------------------------------------------------------------

_TEXT_HEADER = "afemkit-mesh v1"


def save_text(mesh: Mesh) -> str:
    """Plain-text node/element format (geometry + boundary markers only).

    Loading re-derives refinement edges, so this format is meant for
    initial meshes and interchange; use the binary format to round-trip
    refined meshes with their bisection history.
    """
    buf = io.StringIO()
    buf.write(_TEXT_HEADER + "\n")
    buf.write(f"{mesh.n_vertices}\n")
    for x, y in mesh.coords:
        buf.write(f"{float(x)!r} {float(y)!r}\n")
    buf.write(f"{mesh.n_triangles}\n")
    for t in mesh.triangles:
        a, b, c = t.v
        marks = []
        for e in (_ekey(a, b), _ekey(b, c), _ekey(c, a)):
            marks.append(_TOKEN_OF.get(mesh.boundary.get(e, ""), "-"))
        buf.write(f"{a} {b} {c} {' '.join(marks)}\n")
    return buf.getvalue()


def load_text(text: str) -> Mesh:
    lines = [ln.strip() for ln in text.splitlines() if ln.strip()]
    if not lines or lines[0] != _TEXT_HEADER:
        raise StructureError(f"expected header {_TEXT_HEADER!r}")
    pos = 1
    nv = int(lines[pos]); pos += 1
    coords = np.array(
        [[float(tok) for tok in lines[pos + i].split()] for i in range(nv)]
    )
    pos += nv
    nt = int(lines[pos]); pos += 1
    tris = []
    boundary = {}
    for i in range(nt):
        toks = lines[pos + i].split()
        a, b, c = int(toks[0]), int(toks[1]), int(toks[2])
        tris.append((a, b, c))
        for e, tok in zip((_ekey(a, b), _ekey(b, c), _ekey(c, a)), toks[3:6]):
            if tok in _MARKER_TOKENS:
                boundary[e] = _MARKER_TOKENS[tok]
    return initial_mesh(coords, tris, boundary)


def save_binary(mesh: Mesh, path) -> None:
    """Compact npz round-trip including bisection history and lineage."""
    init = mesh.initial
    paths = [t.path for t in mesh.triangles]
    flat = np.array([bit for p in paths for bit in p], dtype=np.uint8)
    lens = np.array([len(p) for p in paths], dtype=np.int64)
    bedges = np.array(sorted(mesh.boundary), dtype=np.int64).reshape(-1, 2)
    bmarks = np.array(
        [0 if mesh.boundary[tuple(e)] == DIRICHLET else 1 for e in bedges],
        dtype=np.uint8,
    )
    ibedges = np.array(sorted(init.boundary), dtype=np.int64).reshape(-1, 2)
    ibmarks = np.array(
        [0 if init.boundary[tuple(e)] == DIRICHLET else 1 for e in ibedges],
        dtype=np.uint8,
    )
    np.savez_compressed(
        path,
        coords=mesh.coords,
        tri=mesh.tri_array,
        gen=np.array([t.generation for t in mesh.triangles], dtype=np.int64),
        root=np.array([t.root for t in mesh.triangles], dtype=np.int64),
        path_flat=flat,
        path_len=lens,
        bedges=bedges,
        bmarks=bmarks,
        init_coords=init.coords,
        init_tri=init.tri_array,
        init_bedges=ibedges,
        init_bmarks=ibmarks,
    )


def load_binary(path) -> Mesh:
    data = np.load(path)
    init_boundary = {
        _ekey(int(a), int(b)): (DIRICHLET if m == 0 else NEUMANN)
        for (a, b), m in zip(data["init_bedges"], data["init_bmarks"])
    }
    init_tris = tuple(
        Triangle(tuple(int(v) for v in row), 0, i, ())
        for i, row in enumerate(data["init_tri"])
    )
    init = Mesh(np.array(data["init_coords"]), init_tris, init_boundary, initial=None)
    if np.array_equal(data["coords"], data["init_coords"]) and np.array_equal(
        data["tri"], data["init_tri"]
    ):
        return init
    paths = []
    offset = 0
    flat = data["path_flat"]
    for n in data["path_len"]:
        paths.append(tuple(int(b) for b in flat[offset : offset + n]))
        offset += n
    tris = tuple(
        Triangle(tuple(int(v) for v in row), int(g), int(r), p)
        for row, g, r, p in zip(data["tri"], data["gen"], data["root"], paths)
    )
    boundary = {
        _ekey(int(a), int(b)): (DIRICHLET if m == 0 else NEUMANN)
        for (a, b), m in zip(data["bedges"], data["bmarks"])
    }
    return Mesh(np.array(data["coords"]), tris, boundary, initial=init)


def validate(mesh: Mesh) -> None:
    """Public conformity audit (edge table, orientation, markers)."""
    _audit(mesh)
