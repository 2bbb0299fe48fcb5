"""Lowest-order finite-element side and the scaled-system equivalence.

Spaces: Lagrange P1 for the scalar, first-kind Nedelec edge elements for
E, Raviart-Thomas face elements for B.  Degrees of freedom are the
*mean* tangential circulation (1/|e|) int_e u.t and the mean normal flux
(1/|f|) int_f u.n, so the dual basis carries |e| and |f| factors against
the unit-circulation Whitney forms.  With this normalization the
discrete gradient and curl written through DoFs coincide with the scaled
incidence matrices

    G_fe = diag(1/|e|) G,      K_fe = diag(1/|f|) K diag(|e|),

i.e. exactly the mimetic ``grad_p`` and ``curl_p`` operators, which is
what makes the mass-lumped comparison below an identity rather than an
approximation.

Mass lumping replaces each Gram matrix by the diagonal of dual measures
(cell volumes for P1, dual-face-area x edge-length for Nedelec,
face-area x dual-edge-length for Raviart-Thomas).  Scaling the lumped
system on the left by the inverses of those diagonals reproduces the
mimetic block system entry by entry; ``check_equivalence`` verifies the
two assemblies agree to rounding.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .dual import DualGeometry
from .linalg import BlockOperator, canonical_csr
from .mesh import _TET_EDGE_PAIRS, TetMesh
from .operators import MfdOperators, TransientSystem
from .precond import BlockFactorization

# degree-2 exact simplex rule: 4 points, equal weights
_QA = (5.0 + 3.0 * np.sqrt(5.0)) / 20.0
_QB = (5.0 - np.sqrt(5.0)) / 20.0
QUAD_BARY = np.full((4, 4), _QB) + (_QA - _QB) * np.eye(4)
QUAD_WEIGHTS = np.full(4, 0.25)


@dataclass(frozen=True)
class FemDiscreteOps:
    """DoF-based discrete gradient and curl in incidence form."""

    g_fe: sp.csr_matrix   # edges x vertices
    k_fe: sp.csr_matrix   # faces x edges


def fem_discrete_ops(ops: MfdOperators) -> FemDiscreteOps:
    return FemDiscreteOps(g_fe=ops.grad_p, k_fe=ops.curl_p)


@dataclass(frozen=True)
class LumpedMasses:
    """Diagonal mass weights over all entities (products of dual measures)."""

    m_b: np.ndarray   # per face
    m_e: np.ndarray   # per edge
    m_p: np.ndarray   # per vertex


def assemble_lumped_masses(dual: DualGeometry) -> LumpedMasses:
    return LumpedMasses(
        m_b=dual.face_areas * dual.dual_edge_lengths,
        m_e=dual.dual_face_areas * dual.edge_lengths,
        m_p=dual.cell_volumes.copy(),
    )


def _barycentric_gradients(mesh: TetMesh) -> tuple[np.ndarray, np.ndarray]:
    """Per-tet gradients of the four barycentric coordinates, plus volumes."""
    pts = mesh.vertices[mesh.tets]
    d = pts[:, 1:] - pts[:, :1]          # rows are v_i - v_0
    vol = np.linalg.det(d) / 6.0
    inv = np.linalg.inv(d)               # columns are grad lambda_{1..3}
    grads = np.empty((mesh.n_tets, 4, 3))
    grads[:, 1:] = np.swapaxes(inv, 1, 2)
    grads[:, 0] = -grads[:, 1:].sum(axis=1)
    return grads, vol


def _local_edge_orientation(mesh: TetMesh) -> tuple[np.ndarray, np.ndarray]:
    """Local vertex slots (low, high) of each tet edge in global order."""
    t = mesh.tets
    l1 = _TET_EDGE_PAIRS[:, 0][None, :].repeat(mesh.n_tets, axis=0)
    l2 = _TET_EDGE_PAIRS[:, 1][None, :].repeat(mesh.n_tets, axis=0)
    v1 = np.take_along_axis(t, l1, axis=1)
    v2 = np.take_along_axis(t, l2, axis=1)
    swap = v1 > v2
    lo = np.where(swap, l2, l1)
    hi = np.where(swap, l1, l2)
    return lo, hi


def edge_basis_at_quadrature(mesh: TetMesh) -> tuple[np.ndarray, np.ndarray]:
    """Scaled Nedelec basis values per (tet, quad point, local edge).

    Returns (values of shape (T, Q, 6, 3), quadrature points (T, Q, 3)).
    """
    grads, _ = _barycentric_gradients(mesh)
    lo, hi = _local_edge_orientation(mesh)
    arange = np.arange(mesh.n_tets)[:, None]
    g_lo = grads[arange, lo]            # (T, 6, 3)
    g_hi = grads[arange, hi]
    lam = QUAD_BARY                     # (Q, 4)
    lam_lo = np.moveaxis(lam[:, lo], 0, 1)[..., None]   # (T, Q, 6, 1)
    lam_hi = np.moveaxis(lam[:, hi], 0, 1)[..., None]
    w = lam_lo * g_hi[:, None] - lam_hi * g_lo[:, None]  # unit circulation
    lengths = np.linalg.norm(
        mesh.vertices[mesh.edges[:, 1]] - mesh.vertices[mesh.edges[:, 0]], axis=1
    )
    scale = lengths[mesh.tet_edges][:, None, :, None]
    pts = np.einsum("qi,tix->tqx", QUAD_BARY, mesh.vertices[mesh.tets])
    return w * scale, pts


def _face_orientation_signs(mesh: TetMesh) -> np.ndarray:
    """Per (tet, local face): +1 when the global face normal points outward."""
    normals = mesh.face_normals()[mesh.tet_faces]              # (T, 4, 3)
    centroids = mesh.vertices[mesh.faces].mean(axis=1)[mesh.tet_faces]
    opp = mesh.vertices[mesh.tets]                             # slot l opposite face l
    inward = np.einsum("tlx,tlx->tl", normals, opp - centroids)
    return np.where(inward < 0, 1.0, -1.0)


def face_basis_at_quadrature(mesh: TetMesh) -> tuple[np.ndarray, np.ndarray]:
    """Scaled Raviart-Thomas basis values per (tet, quad point, local face)."""
    pts = np.einsum("qi,tix->tqx", QUAD_BARY, mesh.vertices[mesh.tets])
    vol = mesh.tet_volumes()
    sigma = _face_orientation_signs(mesh)
    areas = mesh.face_areas()[mesh.tet_faces]        # (T, 4)
    opp = mesh.vertices[mesh.tets]                   # local slot l is opposite face l
    w = pts[:, :, None, :] - opp[:, None, :, :]      # (T, Q, 4, 3)
    coeff = (sigma * areas / (3.0 * vol[:, None]))[:, None, :, None]
    return w * coeff, pts


@dataclass(frozen=True)
class ConsistentMasses:
    """Sparse Gram matrices of the three bases over all entities."""

    m_b: sp.csr_matrix   # faces x faces
    m_e: sp.csr_matrix   # edges x edges
    m_p: sp.csr_matrix   # vertices x vertices


def _scatter(local: np.ndarray, dofs: np.ndarray, n: int) -> sp.csr_matrix:
    t, k, _ = local.shape
    rows = np.repeat(dofs, k, axis=1).reshape(-1)
    cols = np.tile(dofs, (1, k)).reshape(-1)
    return canonical_csr(
        sp.coo_matrix((local.reshape(-1), (rows, cols)), shape=(n, n))
    )


def assemble_consistent_masses(mesh: TetMesh) -> ConsistentMasses:
    _, vol = _barycentric_gradients(mesh)
    wq = QUAD_WEIGHTS * vol[:, None]                  # (T, Q)

    lam = QUAD_BARY                                   # (Q, 4)
    local_p = np.einsum("tq,qi,qj->tij", wq, lam, lam)
    m_p = _scatter(local_p, mesh.tets, mesh.n_vertices)

    we, _ = edge_basis_at_quadrature(mesh)
    local_e = np.einsum("tq,tqix,tqjx->tij", wq, we, we)
    m_e = _scatter(local_e, mesh.tet_edges, mesh.n_edges)

    wb, _ = face_basis_at_quadrature(mesh)
    local_b = np.einsum("tq,tqix,tqjx->tij", wq, wb, wb)
    m_b = _scatter(local_b, mesh.tet_faces, mesh.n_faces)
    return ConsistentMasses(m_b=m_b, m_e=m_e, m_p=m_p)


@dataclass(frozen=True)
class FemSystem(TransientSystem):
    """Consistent-mass Crank-Nicolson system sharing the mimetic packing."""

    masses: ConsistentMasses = None
    lift_12: sp.csr_matrix = None   # boundary-E columns of the (1,2) block
    lift_22: sp.csr_matrix = None
    lift_23: sp.csr_matrix = None   # boundary-p columns of the (2,3) block
    lift_32: sp.csr_matrix = None
    lift_33: sp.csr_matrix = None
    n_b: sp.csr_matrix = None       # full off-diagonal rows for the rhs
    n_e_b: sp.csr_matrix = None
    n_e_p: sp.csr_matrix = None
    n_p_e: sp.csr_matrix = None
    m_b_full: sp.csr_matrix = None
    m_e_rows: sp.csr_matrix = None
    m_p_rows: sp.csr_matrix = None

    def assemble_rhs(self, prev, j_prev, j_curr, bc_e_next, bc_p_next):
        a = 2.0 / self.tau
        g_b = a * (self.m_b_full @ prev.b) - self.n_b @ prev.e
        g_e = (
            a * (self.m_e_rows @ prev.e)
            + self.n_e_b @ prev.b
            - self.n_e_p @ prev.p
            - self.m_e_rows @ (j_curr + j_prev)
        )
        g_p = a * (self.m_p_rows @ prev.p) + self.n_p_e @ prev.e
        g_b -= self.lift_12 @ bc_e_next
        g_e -= self.lift_22 @ bc_e_next + self.lift_23 @ bc_p_next
        g_p -= self.lift_32 @ bc_e_next + self.lift_33 @ bc_p_next
        return np.concatenate([g_b, g_e, g_p])


def assemble_fe_system(ops: MfdOperators, masses: ConsistentMasses,
                       tau: float) -> FemSystem:
    """Restricted consistent-mass system plus the pieces its rhs needs."""
    if tau <= 0:
        raise ValueError("time step must be positive")
    maps = ops.maps
    ie, iv, be = maps.interior_edges, maps.interior_vertices, maps.boundary_edges
    a = 2.0 / tau
    k_fe, g_fe = ops.curl_p, ops.grad_p
    m_b, m_e, m_p = masses.m_b, masses.m_e, masses.m_p

    a12 = canonical_csr(m_b @ k_fe)              # faces x edges
    a23 = canonical_csr(m_e @ g_fe)              # edges x vertices
    blocks = BlockOperator(
        [
            [canonical_csr(a * m_b), canonical_csr(a12[:, ie]), None],
            [
                canonical_csr(-a12[:, ie].T),
                canonical_csr(a * m_e[ie, :][:, ie]),
                canonical_csr(a23[ie, :][:, iv]),
            ],
            [
                None,
                canonical_csr(-a23[ie, :][:, iv].T),
                canonical_csr(a * m_p[iv, :][:, iv]),
            ],
        ],
        ops.dims,
        ops.dims,
    )
    bv = maps.boundary_vertices
    return FemSystem(
        ops=ops,
        tau=tau,
        blocks=blocks,
        matrix=blocks.to_csr(),
        masses=masses,
        lift_12=canonical_csr(a12[:, be]),
        lift_22=canonical_csr(a * m_e[ie, :][:, be]),
        lift_23=canonical_csr(a23[ie, :][:, bv]),
        lift_32=canonical_csr(-(a23[be, :][:, iv]).T),
        lift_33=canonical_csr(a * m_p[iv, :][:, bv]),
        n_b=a12,
        n_e_b=canonical_csr(k_fe[:, ie].T @ m_b),
        n_e_p=canonical_csr(a23[ie, :]),
        n_p_e=canonical_csr(g_fe[:, iv].T @ m_e),
        m_b_full=m_b,
        m_e_rows=canonical_csr(m_e[ie, :]),
        m_p_rows=canonical_csr(m_p[iv, :]),
    )


def assemble_scaled_fe_system(ops: MfdOperators, lumped: LumpedMasses,
                              tau: float) -> BlockOperator:
    """Mass-lumped system scaled on the left by the inverse lumped weights."""
    if tau <= 0:
        raise ValueError("time step must be positive")
    maps = ops.maps
    ie, iv = maps.interior_edges, maps.interior_vertices
    a = 2.0 / tau
    k_fe, g_fe = ops.curl_p, ops.grad_p
    inv_b = sp.diags(1.0 / lumped.m_b)
    inv_e = sp.diags(1.0 / lumped.m_e)
    inv_p = sp.diags(1.0 / lumped.m_p)
    mb = sp.diags(lumped.m_b)
    me = sp.diags(lumped.m_e)

    a11 = canonical_csr(a * (inv_b @ mb))
    a12 = canonical_csr((inv_b @ mb @ k_fe)[:, ie])
    a21 = canonical_csr(-(inv_e @ k_fe.T @ mb)[ie, :])
    a22 = canonical_csr(a * (inv_e @ me)[ie, :][:, ie])
    a23 = canonical_csr((inv_e @ me @ g_fe)[ie, :][:, iv])
    a32 = canonical_csr(-(inv_p @ g_fe.T @ me)[iv, :][:, ie])
    a33 = canonical_csr(a * (inv_p @ sp.diags(lumped.m_p))[iv, :][:, iv])
    return BlockOperator(
        [[a11, a12, None], [a21, a22, a23], [None, a32, a33]],
        ops.dims,
        ops.dims,
    )


@dataclass(frozen=True)
class EquivalenceReport:
    max_abs: float
    max_rel: float
    passed: bool
    structure_mismatches: int
    tolerance: float = 1e-13

    def __str__(self) -> str:
        verdict = "pass" if self.passed else "FAIL"
        return (
            f"equivalence {verdict}: max |A_sfe - A_mfd| = {self.max_abs:.3e}"
            f" ({self.max_rel:.3e} relative, tol {self.tolerance:g},"
            f" {self.structure_mismatches} structural mismatches)"
        )


def check_equivalence(a_sfe: sp.csr_matrix | BlockOperator,
                      a_mfd: sp.csr_matrix | BlockOperator,
                      tolerance: float = 1e-13) -> EquivalenceReport:
    if isinstance(a_sfe, BlockOperator):
        a_sfe = a_sfe.to_csr()
    if isinstance(a_mfd, BlockOperator):
        a_mfd = a_mfd.to_csr()
    diff = (a_sfe - a_mfd).tocsr()
    diff.eliminate_zeros()
    scale = float(np.abs(a_mfd.data).max())
    max_abs = float(np.abs(diff.data).max()) if diff.nnz else 0.0
    structural = 0
    if diff.nnz:
        # entries present in one matrix only, beyond the tolerance
        mism = sp.csr_matrix(
            (np.ones_like(a_sfe.data), a_sfe.indices, a_sfe.indptr), a_sfe.shape
        ) - sp.csr_matrix(
            (np.ones_like(a_mfd.data), a_mfd.indices, a_mfd.indptr), a_mfd.shape
        )
        mism.eliminate_zeros()
        keep = np.abs(diff.tocoo().data) > tolerance * scale
        structural = int(min(mism.nnz, keep.sum()))
    return EquivalenceReport(
        max_abs=max_abs,
        max_rel=max_abs / scale,
        passed=max_abs <= tolerance * scale,
        structure_mismatches=structural,
    )


def build_fe_factorization(ops: MfdOperators, masses: ConsistentMasses,
                           tau: float) -> BlockFactorization:
    """Exact L S U factorization of the consistent-mass system."""
    maps = ops.maps
    ie, iv = maps.interior_edges, maps.interior_vertices
    a = 2.0 / tau
    half = tau / 2.0
    c = canonical_csr(ops.curl_p[:, ie])             # faces x int edges
    gi = canonical_csr(ops.grad_p[ie, :][:, iv])     # int edges x int vertices
    m_b = masses.m_b
    mi_e = canonical_csr(masses.m_e[ie, :][:, ie])
    mi_p = canonical_csr(masses.m_p[iv, :][:, iv])
    s_e = canonical_csr(a * mi_e + half * (c.T @ m_b @ c))
    s_p = canonical_csr(a * mi_p + half * (gi.T @ mi_e @ gi))
    return BlockFactorization(
        dims=ops.dims,
        l21=canonical_csr(-half * c.T),
        l32=canonical_csr(-half * gi.T),
        u12=canonical_csr(half * c),
        u23=canonical_csr(half * gi),
        s_blocks=(canonical_csr(a * m_b), s_e, s_p),
    )


def reconstruction_error_e(mesh: TetMesh, coeffs: np.ndarray, exact_func,
                           t: float) -> float:
    """L2 distance between the edge-element field and an exact field."""
    basis, pts = edge_basis_at_quadrature(mesh)
    _, vol = _barycentric_gradients(mesh)
    wq = QUAD_WEIGHTS * vol[:, None]
    uh = np.einsum("tqix,ti->tqx", basis, coeffs[mesh.tet_edges])
    diff = uh - exact_func(pts, t)
    return float(np.sqrt(np.sum(wq * np.einsum("tqx,tqx->tq", diff, diff))))


def reconstruction_error_b(mesh: TetMesh, coeffs: np.ndarray, exact_func,
                           t: float) -> float:
    basis, pts = face_basis_at_quadrature(mesh)
    _, vol = _barycentric_gradients(mesh)
    wq = QUAD_WEIGHTS * vol[:, None]
    uh = np.einsum("tqix,ti->tqx", basis, coeffs[mesh.tet_faces])
    diff = uh - exact_func(pts, t)
    return float(np.sqrt(np.sum(wq * np.einsum("tqx,tqx->tq", diff, diff))))
