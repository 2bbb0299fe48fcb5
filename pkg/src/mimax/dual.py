"""Circumcentric (Voronoi) dual geometry of a tetrahedral mesh.

Every primal entity owns one dual quantity, stored as a positive weight:

====================  =========================  =====================
primal entity         dual entity                weight
====================  =========================  =====================
vertex i              Voronoi cell               ``cell_volumes[i]``
edge (i, j)           Voronoi face (polygon)     ``dual_face_areas``
face (a, b, c)        Voronoi edge (segment)     ``dual_edge_lengths``
tet k                 Voronoi vertex             ``tet_volumes[k]``
====================  =========================  =====================

Dual edges run between tet circumcenters along face normals; on the
boundary they terminate at the circumcenter of the boundary triangle.
Voronoi faces are planar polygons in the perpendicular-bisector plane
of their primal edge, which is why the edge midpoint can serve as the
fan apex when integrating their area.

All computations assume (and `check_nondegenerate` verifies) that each
circumcenter lies strictly inside its tet, so every weight is positive.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DegenerateTetError, NegativeMeasureError
from .mesh import TetMesh

BARYCENTRIC_EPS = 1e-12


@dataclass(frozen=True)
class DualGeometry:
    """All dual measures plus the circumcenter tables they derive from."""

    circumcenters: np.ndarray        # (n_tets, 3)
    face_circumcenters: np.ndarray   # (n_faces, 3) in-plane circumcenters
    face_normals: np.ndarray         # (n_faces, 3)
    edge_lengths: np.ndarray         # per edge
    dual_face_areas: np.ndarray      # per edge
    face_areas: np.ndarray           # per face
    dual_edge_lengths: np.ndarray    # per face
    cell_volumes: np.ndarray         # per vertex
    tet_volumes: np.ndarray          # per tet

    @property
    def boundary_face_points(self) -> np.ndarray:
        """Where boundary-terminated dual edges meet the surface."""
        return self.face_circumcenters

    def domain_volume(self) -> float:
        return float(self.tet_volumes.sum())


def circumcenter(points: np.ndarray) -> np.ndarray:
    """Circumcenter of one tet from its 4x3 vertex array."""
    points = np.asarray(points, dtype=np.float64)
    d = points[1:] - points[0]
    vol6 = np.linalg.det(d)
    longest = max(np.linalg.norm(points[i] - points[j])
                  for i in range(4) for j in range(i + 1, 4))
    if abs(vol6) / 6.0 <= 1e-14 * longest ** 3:
        raise DegenerateTetError(f"signed volume {vol6 / 6.0:g} below threshold")
    rhs = 0.5 * np.einsum("ij,ij->i", d, d)
    return points[0] + np.linalg.solve(d, rhs)


def _circumcenters_batch(mesh: TetMesh) -> np.ndarray:
    pts = mesh.vertices[mesh.tets]
    d = pts[:, 1:] - pts[:, :1]
    vol = np.linalg.det(d) / 6.0
    lengths = np.linalg.norm(
        pts[:, [0, 0, 0, 1, 1, 2]] - pts[:, [1, 2, 3, 2, 3, 3]], axis=2
    ).max(axis=1)
    bad = np.abs(vol) <= 1e-14 * lengths ** 3
    if np.any(bad):
        k = int(np.nonzero(bad)[0][0])
        raise DegenerateTetError(f"tet {k} is degenerate (volume {vol[k]:g})")
    rhs = 0.5 * np.einsum("kij,kij->ki", d, d)
    return pts[:, 0] + np.linalg.solve(d, rhs[..., None])[..., 0]


def _face_circumcenters(mesh: TetMesh) -> np.ndarray:
    a = mesh.vertices[mesh.faces[:, 0]]
    ab = mesh.vertices[mesh.faces[:, 1]] - a
    ac = mesh.vertices[mesh.faces[:, 2]] - a
    abxac = np.cross(ab, ac)
    denom = 2.0 * np.einsum("ij,ij->i", abxac, abxac)
    term = (
        np.einsum("ij,ij->i", ac, ac)[:, None] * np.cross(abxac, ab)
        - np.einsum("ij,ij->i", ab, ab)[:, None] * np.cross(abxac, ac)
    )
    return a + term / denom[:, None]


def _edge_face_table(mesh: TetMesh) -> tuple[np.ndarray, np.ndarray]:
    """CSR-style (indptr, face ids) listing the faces around each edge."""
    flat = mesh.face_edges.reshape(-1)
    order = np.argsort(flat, kind="stable")
    counts = np.bincount(flat, minlength=mesh.n_edges)
    indptr = np.concatenate([[0], np.cumsum(counts)])
    return indptr, order // 3


def voronoi_edge_lengths(mesh: TetMesh, circumcenters: np.ndarray,
                         face_circumcenters: np.ndarray | None = None,
                         normals: np.ndarray | None = None) -> np.ndarray:
    """Dual edge length per face: circumcenter gap, one-sided on the boundary.

    Signed distances along the face normal are required to place each
    adjacent circumcenter on its own side of the face; a violation means
    the dual is inverted there.
    """
    if normals is None:
        normals = mesh.face_normals()
    if face_circumcenters is None:
        face_circumcenters = _face_circumcenters(mesh)
    out = np.zeros(mesh.n_faces)
    t0 = mesh.face_tets[:, 0]
    t1 = mesh.face_tets[:, 1]
    s0 = np.einsum("ij,ij->i", normals, circumcenters[t0] - face_circumcenters)
    interior = t1 >= 0
    s1 = np.zeros(mesh.n_faces)
    s1[interior] = np.einsum(
        "ij,ij->i",
        normals[interior],
        circumcenters[t1[interior]] - face_circumcenters[interior],
    )
    # Interior: the two centers must straddle the plane.
    straddle = s0[interior] * s1[interior]
    if np.any(straddle > 0):
        f = int(np.nonzero(interior)[0][np.argmax(straddle > 0)])
        raise NegativeMeasureError(
            f"circumcenters on the same side of interior face {f}"
        )
    out[interior] = np.abs(s0[interior] - s1[interior])
    bnd = ~interior
    out[bnd] = np.abs(s0[bnd])
    if np.any(out <= 0):
        f = int(np.argmin(out))
        raise NegativeMeasureError(f"zero-length dual edge at face {f}")
    return out


def voronoi_face_areas(mesh: TetMesh, circumcenters: np.ndarray,
                       face_circumcenters: np.ndarray | None = None) -> np.ndarray:
    """Dual polygon area per edge, by fan triangulation about the midpoint.

    The polygon vertices are the circumcenters of the tets around the
    edge, ordered by walking tet-to-tet; for a boundary edge the chain is
    extended by the two boundary-face circumcenters and closed through
    the edge midpoint, which lies on the surface.
    """
    if face_circumcenters is None:
        face_circumcenters = _face_circumcenters(mesh)
    indptr, edge_faces = _edge_face_table(mesh)
    midpoints = mesh.edge_midpoints()
    tangents = mesh.edge_tangents()
    face_tets = mesh.face_tets
    boundary_face = mesh.boundary_face

    areas = np.zeros(mesh.n_edges)
    for e in range(mesh.n_edges):
        faces_e = edge_faces[indptr[e]:indptr[e + 1]]
        # faces around the edge, keyed by the tets they touch
        tet_faces_e: dict[int, list[int]] = {}
        for f in faces_e:
            for t in face_tets[f]:
                if t >= 0:
                    tet_faces_e.setdefault(int(t), []).append(int(f))
        bnd = sorted(int(f) for f in faces_e if boundary_face[f])
        if bnd:
            start_face = bnd[0]
            walk_tet = int(face_tets[start_face, 0])
            chain = [face_circumcenters[start_face]]
        else:
            start_face = int(min(faces_e))
            walk_tet = int(face_tets[start_face, 0])
            chain = []
        ring = []
        prev_face = start_face
        while True:
            ring.append(walk_tet)
            fa, fb = tet_faces_e[walk_tet]
            nxt = fb if fa == prev_face else fa
            if boundary_face[nxt]:
                chain_closed = False
                chain = chain + [circumcenters[t] for t in ring]
                chain.append(face_circumcenters[nxt])
                break
            t0, t1 = face_tets[nxt]
            other = int(t1 if t0 == walk_tet else t0)
            if other == ring[0] and not bnd:
                chain_closed = True
                chain = [circumcenters[t] for t in ring]
                break
            prev_face = nxt
            walk_tet = other

        pts = np.asarray(chain) - midpoints[e]
        if chain_closed:
            nxt_pts = np.roll(pts, -1, axis=0)
        else:
            nxt_pts = pts[1:]
            pts = pts[:-1]
        contrib = 0.5 * np.cross(pts, nxt_pts) @ tangents[e]
        total = contrib.sum()
        if total < 0:
            contrib = -contrib
            total = -total
        scale = max(1e-30, float(np.abs(contrib).max()))
        if contrib.min() < -1e-14 * max(scale, 1.0):
            raise NegativeMeasureError(
                f"inverted dual polygon sector at edge {e}"
            )
        areas[e] = total
    if np.any(areas <= 0):
        e = int(np.argmin(areas))
        raise NegativeMeasureError(f"non-positive dual face area at edge {e}")
    return areas


def voronoi_cell_volumes(mesh: TetMesh, dual_face_areas: np.ndarray,
                         edge_lengths: np.ndarray) -> np.ndarray:
    """Clipped Voronoi cell volume per vertex.

    Each dual face sits on the bisector plane of its edge, so the cell
    decomposes into pyramids of apex distance half the edge length; the
    surface facets of boundary cells pass through the vertex itself and
    add no volume.
    """
    pyramid = dual_face_areas * edge_lengths / 6.0
    volumes = np.zeros(mesh.n_vertices)
    np.add.at(volumes, mesh.edges[:, 0], pyramid)
    np.add.at(volumes, mesh.edges[:, 1], pyramid)
    return volumes


def build_dual(mesh: TetMesh) -> DualGeometry:
    circumcenters = _circumcenters_batch(mesh)
    face_cc = _face_circumcenters(mesh)
    normals = mesh.face_normals()
    edge_lengths = mesh.edge_lengths()
    dual_face_areas = voronoi_face_areas(mesh, circumcenters, face_cc)
    return DualGeometry(
        circumcenters=circumcenters,
        face_circumcenters=face_cc,
        face_normals=normals,
        edge_lengths=edge_lengths,
        dual_face_areas=dual_face_areas,
        face_areas=mesh.face_areas(),
        dual_edge_lengths=voronoi_edge_lengths(mesh, circumcenters, face_cc,
                                               normals),
        cell_volumes=voronoi_cell_volumes(mesh, dual_face_areas, edge_lengths),
        tet_volumes=mesh.tet_volumes(),
    )


@dataclass(frozen=True)
class NondegeneracyReport:
    passed: bool
    min_barycentric: float
    worst_tet: int
    threshold: float = BARYCENTRIC_EPS

    def __str__(self) -> str:
        verdict = "pass" if self.passed else "FAIL"
        return (
            f"non-degeneracy {verdict}: min barycentric {self.min_barycentric:.3e}"
            f" at tet {self.worst_tet} (threshold {self.threshold:g})"
        )


def check_nondegenerate(mesh: TetMesh,
                        circumcenters: np.ndarray | None = None) -> NondegeneracyReport:
    """Verify every circumcenter sits strictly inside its tet."""
    if circumcenters is None:
        circumcenters = _circumcenters_batch(mesh)
    pts = mesh.vertices[mesh.tets]
    d = np.swapaxes(pts[:, 1:] - pts[:, :1], 1, 2)
    lam = np.linalg.solve(d, (circumcenters - pts[:, 0])[..., None])[..., 0]
    bary = np.concatenate([1.0 - lam.sum(axis=1, keepdims=True), lam], axis=1)
    worst = int(np.argmin(bary.min(axis=1)))
    min_bary = float(bary.min())
    return NondegeneracyReport(
        passed=min_bary >= BARYCENTRIC_EPS,
        min_barycentric=min_bary,
        worst_tet=worst,
    )


@dataclass(frozen=True)
class PartitionIdentities:
    """Relative residuals of the four dual-measure partition identities."""

    cell_volume_residual: float      # sum |V_i| vs |Omega|
    tet_volume_residual: float       # sum |D_k| vs |Omega| (zero by definition)
    edge_pyramid_residual: float     # sum |e||dual face| vs 3|Omega|
    face_pyramid_residual: float     # sum |face||dual edge| vs 3|Omega|
    domain_volume: float

    def max_residual(self) -> float:
        return max(self.cell_volume_residual, self.tet_volume_residual,
                   self.edge_pyramid_residual, self.face_pyramid_residual)


def partition_identities(dual: DualGeometry) -> PartitionIdentities:
    omega = dual.domain_volume()
    return PartitionIdentities(
        cell_volume_residual=abs(dual.cell_volumes.sum() - omega) / omega,
        tet_volume_residual=abs(dual.tet_volumes.sum() - omega) / omega,
        edge_pyramid_residual=abs(
            (dual.edge_lengths * dual.dual_face_areas).sum() - 3 * omega
        ) / (3 * omega),
        face_pyramid_residual=abs(
            (dual.face_areas * dual.dual_edge_lengths).sum() - 3 * omega
        ) / (3 * omega),
        domain_volume=omega,
    )
