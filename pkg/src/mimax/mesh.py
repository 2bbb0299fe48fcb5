"""Primal tetrahedral meshes and their signed incidence matrices.

The solver runs on a tetrahedral mesh paired with its circumcentric
(Voronoi) dual, so the generators here only produce meshes whose tets
contain their own circumcenters.  Two families are provided:

* ``build_base_cube_pyramids`` -- the unit cube capped with a square
  pyramid of height 1/2 on each face, split into 24 congruent tets
  around the cube center.  Uniform refinement of this mesh is exactly
  self-similar (every child tet is a half-scale copy of its parent), so
  the whole refinement hierarchy stays well-centered.
* ``build_bcc_mesh`` -- an n x n x n cell version of the same diamond
  pattern: interior cell faces are split between the two adjacent cell
  centers, boundary faces between the cell center and a shallow apex
  just outside the face.  All tets are congruent for every n.

Entity enumeration is lexicographic on sorted vertex tuples, which makes
every derived table (and therefore every assembled matrix) reproducible
across runs and platforms.

Orientation conventions, fixed once and used everywhere:

* edge (i, j) is stored with i < j and its tangent points i -> j;
* face (a, b, c) is stored sorted and its normal is the normalized
  (v_b - v_a) x (v_c - v_a);
* tets are permuted to positive signed volume.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .errors import MeshConstructionError

_TET_EDGE_PAIRS = np.array([[0, 1], [0, 2], [0, 3], [1, 2], [1, 3], [2, 3]])
_TET_FACE_TRIPLES = np.array([[1, 2, 3], [0, 2, 3], [0, 1, 3], [0, 1, 2]])

# Octahedron diagonals after midpoint subdivision, as local edge slots
# (slot order matches _TET_EDGE_PAIRS).
_OCT_DIAGONALS = ((0, 5), (1, 4), (2, 3))
# Equatorial cycle of the four remaining midpoints for each diagonal.
_OCT_CYCLES = ((1, 2, 4, 3), (0, 2, 5, 3), (0, 1, 5, 4))


@dataclass(frozen=True)
class TetMesh:
    """Immutable tetrahedral mesh with globally enumerated entities."""

    vertices: np.ndarray          # (n_vertices, 3) float64
    tets: np.ndarray              # (n_tets, 4) int64, positively oriented
    edges: np.ndarray             # (n_edges, 2) int64, each row sorted
    faces: np.ndarray             # (n_faces, 3) int64, each row sorted
    tet_edges: np.ndarray         # (n_tets, 6) edge ids, slot k = local pair k
    tet_faces: np.ndarray         # (n_tets, 4) face ids, slot l = face opposite l
    face_edges: np.ndarray        # (n_faces, 3) edge ids for (ab, ac, bc)
    face_tets: np.ndarray         # (n_faces, 2) adjacent tets, -1 if none
    boundary_vertex: np.ndarray   # bool flags
    boundary_edge: np.ndarray
    boundary_face: np.ndarray
    h: float                      # max edge length inside the unit-cube core

    @property
    def n_vertices(self) -> int:
        return len(self.vertices)

    @property
    def n_edges(self) -> int:
        return len(self.edges)

    @property
    def n_faces(self) -> int:
        return len(self.faces)

    @property
    def n_tets(self) -> int:
        return len(self.tets)

    def euler_characteristic(self) -> int:
        return self.n_vertices - self.n_edges + self.n_faces - self.n_tets

    def edge_vectors(self) -> np.ndarray:
        return self.vertices[self.edges[:, 1]] - self.vertices[self.edges[:, 0]]

    def edge_lengths(self) -> np.ndarray:
        return np.linalg.norm(self.edge_vectors(), axis=1)

    def edge_tangents(self) -> np.ndarray:
        vec = self.edge_vectors()
        return vec / np.linalg.norm(vec, axis=1)[:, None]

    def edge_midpoints(self) -> np.ndarray:
        return 0.5 * (self.vertices[self.edges[:, 0]] + self.vertices[self.edges[:, 1]])

    def face_normals(self) -> np.ndarray:
        a, b, c = (self.vertices[self.faces[:, k]] for k in range(3))
        n = np.cross(b - a, c - a)
        return n / np.linalg.norm(n, axis=1)[:, None]

    def face_areas(self) -> np.ndarray:
        a, b, c = (self.vertices[self.faces[:, k]] for k in range(3))
        return 0.5 * np.linalg.norm(np.cross(b - a, c - a), axis=1)

    def tet_volumes(self) -> np.ndarray:
        v = self.vertices[self.tets]
        return np.linalg.det(v[:, 1:] - v[:, :1]) / 6.0


def signed_volumes(vertices: np.ndarray, tets: np.ndarray) -> np.ndarray:
    v = vertices[tets]
    return np.linalg.det(v[:, 1:] - v[:, :1]) / 6.0


def _canonical_tets(vertices: np.ndarray, tets: np.ndarray) -> np.ndarray:
    """Sort each tet's vertices, then swap the last two if volume < 0."""
    tets = np.sort(np.asarray(tets, dtype=np.int64), axis=1)
    flip = signed_volumes(vertices, tets) < 0
    tets[flip] = tets[flip][:, [0, 1, 3, 2]]
    vol = signed_volumes(vertices, tets)
    if np.any(vol <= 0):
        k = int(np.argmin(vol))
        raise MeshConstructionError(
            f"tet {k} has non-positive volume {vol[k]:g} after orientation fix"
        )
    return tets


def _unique_rows(rows: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Lexicographically sorted unique rows plus the inverse map."""
    uniq, inverse = np.unique(rows, axis=0, return_inverse=True)
    return uniq, inverse.reshape(-1)


def _core_mesh_size(vertices: np.ndarray, edges: np.ndarray,
                    lengths: np.ndarray) -> float:
    eps = 1e-12
    inside = np.all((vertices >= -eps) & (vertices <= 1.0 + eps), axis=1)
    core = inside[edges[:, 0]] & inside[edges[:, 1]]
    if not np.any(core):
        return float(lengths.max())
    return float(lengths[core].max())


def build_tet_mesh(vertices: np.ndarray, tets: np.ndarray) -> TetMesh:
    """Enumerate all entities of a tet soup and run the invariant checks."""
    vertices = np.ascontiguousarray(vertices, dtype=np.float64)
    if not np.all(np.isfinite(vertices)):
        raise MeshConstructionError("non-finite vertex coordinates")
    tets = _canonical_tets(vertices, tets)

    edge_rows = np.sort(tets[:, _TET_EDGE_PAIRS].reshape(-1, 2), axis=1)
    edges, edge_inv = _unique_rows(edge_rows)
    tet_edges = edge_inv.reshape(-1, 6)

    face_rows = np.sort(tets[:, _TET_FACE_TRIPLES].reshape(-1, 3), axis=1)
    faces, face_inv = _unique_rows(face_rows)
    tet_faces = face_inv.reshape(-1, 4)

    fe = np.stack(
        [faces[:, [0, 1]], faces[:, [0, 2]], faces[:, [1, 2]]], axis=1
    ).reshape(-1, 2)
    # Rows of `edges` are lexicographically sorted, so flattened keys are
    # strictly increasing and searchsorted recovers global edge ids.
    flat = edges[:, 0] * len(vertices) + edges[:, 1]
    keys = fe[:, 0] * len(vertices) + fe[:, 1]
    face_edges = np.searchsorted(flat, keys).reshape(-1, 3).astype(np.int64)

    incident = np.argsort(tet_faces.reshape(-1), kind="stable")
    counts = np.bincount(tet_faces.reshape(-1), minlength=len(faces))
    if counts.max() > 2 or counts.min() < 1:
        raise MeshConstructionError("a face must be shared by one or two tets")
    starts = np.concatenate([[0], np.cumsum(counts)])
    face_tets = np.full((len(faces), 2), -1, dtype=np.int64)
    face_tets[:, 0] = incident[starts[:-1]] // 4
    two = counts == 2
    face_tets[two, 1] = incident[starts[:-1][two] + 1] // 4

    boundary_face = face_tets[:, 1] < 0
    boundary_edge = np.zeros(len(edges), dtype=bool)
    boundary_edge[face_edges[boundary_face].ravel()] = True
    boundary_vertex = np.zeros(len(vertices), dtype=bool)
    boundary_vertex[faces[boundary_face].ravel()] = True

    lengths = np.linalg.norm(vertices[edges[:, 1]] - vertices[edges[:, 0]], axis=1)
    mesh = TetMesh(
        vertices=vertices,
        tets=tets,
        edges=edges,
        faces=faces,
        tet_edges=tet_edges,
        tet_faces=tet_faces,
        face_edges=face_edges,
        face_tets=face_tets,
        boundary_vertex=boundary_vertex,
        boundary_edge=boundary_edge,
        boundary_face=boundary_face,
        h=_core_mesh_size(vertices, edges, lengths),
    )
    if mesh.euler_characteristic() != 1:
        raise MeshConstructionError(
            f"Euler characteristic {mesh.euler_characteristic()} != 1"
        )
    return mesh


_CUBE_FACES = (
    # (axis, side, apex); quad corners are listed cyclically below
    (0, 0, (-0.5, 0.5, 0.5)),
    (0, 1, (1.5, 0.5, 0.5)),
    (1, 0, (0.5, -0.5, 0.5)),
    (1, 1, (0.5, 1.5, 0.5)),
    (2, 0, (0.5, 0.5, -0.5)),
    (2, 1, (0.5, 0.5, 1.5)),
)


def _face_quad(axis: int, side: int) -> list[tuple[float, float, float]]:
    """Corners of a unit-cube face in cyclic order."""
    quad2d = [(0, 0), (1, 0), (1, 1), (0, 1)]
    pts = []
    for u, v in quad2d:
        p = [0.0, 0.0, 0.0]
        p[axis] = float(side)
        p[(axis + 1) % 3] = float(u)
        p[(axis + 2) % 3] = float(v)
        pts.append(tuple(p))
    return pts


def build_base_cube_pyramids() -> TetMesh:
    """Coarse mesh of the unit cube with a height-1/2 pyramid on each face.

    15 vertices (8 cube corners, 6 pyramid apexes, the cube center) and
    24 congruent tets, one per (face edge, apex, center) diamond half.
    This is the Delaunay tetrahedralization of the vertex set: every
    circumsphere is empty.
    """
    corners = [
        (float(i), float(j), float(k))
        for i in (0, 1) for j in (0, 1) for k in (0, 1)
    ]
    apexes = [apex for _, _, apex in _CUBE_FACES]
    center = (0.5, 0.5, 0.5)
    verts = np.array(corners + apexes + [center])

    index = {tuple(v): i for i, v in enumerate(verts)}
    c = index[center]
    tets = []
    for fi, (axis, side, apex) in enumerate(_CUBE_FACES):
        a = 8 + fi
        quad = [index[p] for p in _face_quad(axis, side)]
        for s in range(4):
            tets.append((quad[s], quad[(s + 1) % 4], a, c))
    return build_tet_mesh(verts, np.array(tets))


def build_bcc_mesh(n: int) -> TetMesh:
    """Diamond-pattern mesh over an n^3-cell grid, all tets congruent.

    Vertices are the (n+1)^3 cell corners, the n^3 cell centers, and one
    apex at depth 1/(2n) outside each boundary cell face.  Every cell
    face carries four tets: (face edge, center, center) across interior
    faces and (face edge, center, apex) on the boundary.  Each tet is a
    scaled copy of the shape ((0,0,0),(1,0,0),(.5,.5,.5),(.5,.5,-.5)),
    whose circumcenter sits at its barycenter, so the dual is
    non-degenerate for every n.  The solid is the unit cube plus a
    fringe of shallow boundary pyramids.
    """
    if n < 1:
        raise ValueError("subdivision count must be >= 1")
    s = 1.0 / n
    corner_id = np.arange((n + 1) ** 3).reshape(n + 1, n + 1, n + 1)
    corners = np.stack(
        np.meshgrid(*(np.arange(n + 1),) * 3, indexing="ij"), axis=-1
    ).reshape(-1, 3) * s
    center_id = (n + 1) ** 3 + np.arange(n ** 3).reshape(n, n, n)
    centers = (
        np.stack(np.meshgrid(*(np.arange(n),) * 3, indexing="ij"), axis=-1)
        .reshape(-1, 3) + 0.5
    ) * s

    apex_coords: list[np.ndarray] = []
    tets: list[tuple[int, int, int, int]] = []
    n_grid = (n + 1) ** 3 + n ** 3

    def grid_index(axis, along, j, k):
        p = [0, 0, 0]
        p[axis], p[(axis + 1) % 3], p[(axis + 2) % 3] = along, j, k
        return tuple(p)

    for axis in range(3):
        for i in range(n + 1):
            for j in range(n):
                for k in range(n):
                    # cell-grid face at layer i (along axis), cross pos (j, k)
                    quad = []
                    for du, dv in ((0, 0), (1, 0), (1, 1), (0, 1)):
                        quad.append(
                            corner_id[grid_index(axis, i, j + du, k + dv)]
                        )
                    lo = center_id[grid_index(axis, i - 1, j, k)] if i > 0 else None
                    hi = center_id[grid_index(axis, i, j, k)] if i < n else None
                    if lo is None or hi is None:
                        apex = np.zeros(3)
                        apex[axis] = -0.5 * s if lo is None else 1.0 + 0.5 * s
                        apex[(axis + 1) % 3] = (j + 0.5) * s
                        apex[(axis + 2) % 3] = (k + 0.5) * s
                        apex_coords.append(apex)
                        other = n_grid + len(apex_coords) - 1
                        lo = lo if lo is not None else other
                        hi = hi if hi is not None else other
                    for t in range(4):
                        tets.append((quad[t], quad[(t + 1) % 4], lo, hi))

    verts = np.concatenate(
        [corners, centers, np.array(apex_coords).reshape(-1, 3)], axis=0
    )
    return build_tet_mesh(verts, np.array(tets))


def refine_uniform(mesh: TetMesh) -> TetMesh:
    """Split every tet into 8 children via edge midpoints.

    The interior octahedron is cut along its shortest diagonal (ties
    broken by the lowest global vertex-index pair), which keeps the
    BCC-shaped tets of the built-in generators exactly self-similar.
    """
    nv = mesh.n_vertices
    midpoints = mesh.edge_midpoints()
    vertices = np.concatenate([mesh.vertices, midpoints], axis=0)

    m = nv + mesh.tet_edges  # (n_tets, 6) midpoint vertex ids per edge slot
    t = mesh.tets
    corner_children = np.stack(
        [
            np.stack([t[:, 0], m[:, 0], m[:, 1], m[:, 2]], axis=1),
            np.stack([t[:, 1], m[:, 0], m[:, 3], m[:, 4]], axis=1),
            np.stack([t[:, 2], m[:, 1], m[:, 3], m[:, 5]], axis=1),
            np.stack([t[:, 3], m[:, 2], m[:, 4], m[:, 5]], axis=1),
        ],
        axis=1,
    )

    diag_len = np.stack(
        [
            np.linalg.norm(midpoints[mesh.tet_edges[:, a]] -
                           midpoints[mesh.tet_edges[:, b]], axis=1)
            for a, b in _OCT_DIAGONALS
        ],
        axis=1,
    )
    diag_key = np.stack(
        [
            np.stack([np.minimum(m[:, a], m[:, b]), np.maximum(m[:, a], m[:, b])],
                     axis=1)
            for a, b in _OCT_DIAGONALS
        ],
        axis=1,
    )
    choice = np.zeros(mesh.n_tets, dtype=np.int64)
    best_len = diag_len[:, 0].copy()
    best_key = diag_key[:, 0].copy()
    for cand in (1, 2):
        length = diag_len[:, cand]
        key = diag_key[:, cand]
        shorter = length < best_len * (1.0 - 1e-12)
        tie = np.abs(length - best_len) <= best_len * 1e-12
        tie &= (key[:, 0] < best_key[:, 0]) | (
            (key[:, 0] == best_key[:, 0]) & (key[:, 1] < best_key[:, 1])
        )
        take = shorter | tie
        choice[take] = cand
        best_len[take] = length[take]
        best_key[take] = key[take]

    oct_children = np.empty((mesh.n_tets, 4, 4), dtype=np.int64)
    for cand, ((a, b), cyc) in enumerate(zip(_OCT_DIAGONALS, _OCT_CYCLES)):
        rows = choice == cand
        if not np.any(rows):
            continue
        d1, d2 = m[rows, a], m[rows, b]
        ring = [m[rows, c] for c in cyc]
        for s in range(4):
            oct_children[rows, s] = np.stack(
                [d1, d2, ring[s], ring[(s + 1) % 4]], axis=1
            )

    children = np.concatenate(
        [corner_children.reshape(-1, 4), oct_children.reshape(-1, 4)], axis=0
    )
    return build_tet_mesh(vertices, children)


def incidence_grad(mesh: TetMesh) -> sp.csr_matrix:
    """Edge-vertex incidence: row (i, j) has -1 at i and +1 at j (i < j)."""
    ne = mesh.n_edges
    rows = np.repeat(np.arange(ne), 2)
    cols = mesh.edges.reshape(-1)
    vals = np.tile(np.array([-1, 1], dtype=np.int64), ne)
    g = sp.csr_matrix((vals, (rows, cols)), shape=(ne, mesh.n_vertices))
    g.sort_indices()
    return g


def incidence_curl(mesh: TetMesh) -> sp.csr_matrix:
    """Face-edge incidence, signed by the right-hand rule about the normal.

    With faces stored sorted (a < b < c) and the normal (b-a) x (c-a),
    the positively oriented loop is a->b->c, so the signs on the edges
    (ab, ac, bc) are (+1, -1, +1) for every face.
    """
    nf = mesh.n_faces
    rows = np.repeat(np.arange(nf), 3)
    cols = mesh.face_edges.reshape(-1)
    vals = np.tile(np.array([1, -1, 1], dtype=np.int64), nf)
    k = sp.csr_matrix((vals, (rows, cols)), shape=(nf, mesh.n_edges))
    k.sort_indices()
    return k


def incidence_dual_grad(mesh: TetMesh) -> sp.csr_matrix:
    """Face-tet incidence: +1 where the face normal leaves the tet.

    This is the Voronoi edge-vertex incidence under the identification
    of primal faces with dual edges (dual tangent = face normal);
    boundary faces keep a single entry for the owning tet.
    """
    normals = mesh.face_normals()
    fc = mesh.vertices[mesh.faces].mean(axis=1)
    rows, cols, vals = [], [], []
    for slot in range(2):
        tids = mesh.face_tets[:, slot]
        present = tids >= 0
        f = np.nonzero(present)[0]
        t = tids[present]
        # vertex of the tet opposite this face
        opp = np.empty(len(f), dtype=np.int64)
        tet_v = mesh.tets[t]
        is_in_face = (tet_v[:, :, None] == mesh.faces[f][:, None, :]).any(axis=2)
        opp_local = np.argmin(is_in_face, axis=1)
        opp = tet_v[np.arange(len(f)), opp_local]
        outward = np.einsum(
            "ij,ij->i", normals[f], mesh.vertices[opp] - fc[f]
        ) < 0
        rows.append(f)
        cols.append(t)
        vals.append(np.where(outward, 1, -1).astype(np.int64))
    gv = sp.csr_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
        shape=(mesh.n_faces, mesh.n_tets),
    )
    gv.sort_indices()
    return gv


@dataclass(frozen=True)
class BoundaryMaps:
    """Interior index maps realizing the perfect-conductor elimination."""

    interior_vertices: np.ndarray
    interior_edges: np.ndarray
    interior_faces: np.ndarray
    boundary_vertices: np.ndarray = field(repr=False, default=None)
    boundary_edges: np.ndarray = field(repr=False, default=None)
    boundary_faces: np.ndarray = field(repr=False, default=None)

    @property
    def n_interior_vertices(self) -> int:
        return len(self.interior_vertices)

    @property
    def n_interior_edges(self) -> int:
        return len(self.interior_edges)

    @property
    def n_interior_faces(self) -> int:
        return len(self.interior_faces)


def boundary_maps(mesh: TetMesh) -> BoundaryMaps:
    return BoundaryMaps(
        interior_vertices=np.nonzero(~mesh.boundary_vertex)[0],
        interior_edges=np.nonzero(~mesh.boundary_edge)[0],
        interior_faces=np.nonzero(~mesh.boundary_face)[0],
        boundary_vertices=np.nonzero(mesh.boundary_vertex)[0],
        boundary_edges=np.nonzero(mesh.boundary_edge)[0],
        boundary_faces=np.nonzero(mesh.boundary_face)[0],
    )


def save_mesh(mesh: TetMesh, path) -> None:
    """Plain-text mesh format with exact decimal round-trip."""
    with open(path, "w") as fh:
        fh.write(f"vertices {mesh.n_vertices}\n")
        for i, (x, y, z) in enumerate(mesh.vertices):
            fh.write(f"{i} {x:.17g} {y:.17g} {z:.17g}\n")
        fh.write(f"tets {mesh.n_tets}\n")
        for t in mesh.tets:
            fh.write(f"{t[0]} {t[1]} {t[2]} {t[3]}\n")
        fh.write("boundary\n")
        fh.write(" ".join(str(i) for i in np.nonzero(mesh.boundary_vertex)[0]))
        fh.write("\n")


def load_mesh(path) -> TetMesh:
    with open(path) as fh:
        tokens = fh.read().split()
    pos = 0

    def take():
        nonlocal pos
        tok = tokens[pos]
        pos += 1
        return tok

    if take() != "vertices":
        raise ValueError("expected 'vertices' section")
    nv = int(take())
    verts = np.empty((nv, 3))
    for _ in range(nv):
        i = int(take())
        verts[i] = [float(take()), float(take()), float(take())]
    if take() != "tets":
        raise ValueError("expected 'tets' section")
    nt = int(take())
    tets = np.empty((nt, 4), dtype=np.int64)
    for k in range(nt):
        tets[k] = [int(take()) for _ in range(4)]
    return build_tet_mesh(verts, tets)
