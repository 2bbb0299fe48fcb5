"""Mimetic differential operators and the Crank-Nicolson Maxwell system.

Grid functions live on mesh entities: scalars on primal vertices (p) and
on tets, tangential vector samples on primal edges (E, at edge
midpoints), normal samples on primal faces (B, at face circumcenters,
which is where the dual edge crosses).  The six difference operators are
incidence matrices scaled by dual measures:

    grad_p  = diag(1/|e|)        G
    div_p   = diag(1/|V|)        G^T  diag(|dual face|)
    curl_p  = diag(1/|face|)     K    diag(|e|)
    grad_d  = diag(1/|dual e|)   G_V
    div_d   = diag(1/|tet|)      G_V^T diag(|face|)
    curl_d  = diag(1/|dual f|)   K^T  diag(|dual e|)

(_p: defined on the primal mesh, _d: on the dual.)  Because K G = 0 and
K^T G_V = 0 hold as integer identities, the compositions curl_p grad_p,
div_d curl_p, and div_p curl_d vanish to rounding, which is what makes
the scheme structure-preserving.

One sign convention deserves a note: with edge tangents pointing from
lower to higher vertex index, the outward-flux divergence at a vertex is
minus ``div_p`` as defined above.  The Crank-Nicolson block system
absorbs that sign in its (3,2) block, and the energy identity (the
off-diagonal blocks are skew-adjoint under the lumped mass weights)
confirms the combination is the physical one.

Time stepping solves, per step,

    [ (2/tau) I      curl_p        0      ] [B]   [g_B]
    [  -curl_d      (2/tau) I    grad_p   ] [E] = [g_E]
    [     0          -div_p     (2/tau) I ] [p]   [g_p]

with E and p eliminated to interior entities (tangential E and p carry
the essential data) while B keeps all faces: the discrete magnetic flux
has no independent boundary condition, its surface values evolve by the
same Faraday rows, and keeping them in the system is what lets the
solver preserve div_d B to rounding even with inhomogeneous data.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np
import scipy.sparse as sp

from .dual import DualGeometry
from .linalg import BlockOperator, KrylovConfig, SolveReport, canonical_csr, fgmres
from .mesh import BoundaryMaps, TetMesh, boundary_maps as make_boundary_maps
from .mesh import incidence_curl, incidence_dual_grad, incidence_grad


@dataclass(frozen=True)
class MfdOperators:
    """Full-mesh operators plus their interior-restricted system blocks."""

    mesh: TetMesh
    dual: DualGeometry
    maps: BoundaryMaps
    grad_p: sp.csr_matrix      # edges x vertices
    div_p: sp.csr_matrix       # vertices x edges
    curl_p: sp.csr_matrix      # faces x edges
    grad_d: sp.csr_matrix      # faces x tets
    div_d: sp.csr_matrix       # tets x faces
    curl_d: sp.csr_matrix      # edges x faces
    # interior-restricted blocks (B keeps all faces)
    curl_p_i: sp.csr_matrix = field(repr=False, default=None)
    curl_d_i: sp.csr_matrix = field(repr=False, default=None)
    grad_p_i: sp.csr_matrix = field(repr=False, default=None)
    div_p_i: sp.csr_matrix = field(repr=False, default=None)

    @property
    def dims(self) -> tuple[int, int, int]:
        """System block dimensions: (all faces, interior edges, interior vertices)."""
        return (
            self.mesh.n_faces,
            self.maps.n_interior_edges,
            self.maps.n_interior_vertices,
        )


def build_operators(mesh: TetMesh, dual: DualGeometry,
                    maps: BoundaryMaps | None = None) -> MfdOperators:
    maps = maps or make_boundary_maps(mesh)
    g = incidence_grad(mesh).astype(np.float64)
    k = incidence_curl(mesh).astype(np.float64)
    gv = incidence_dual_grad(mesh).astype(np.float64)

    inv = lambda d: 1.0 / d  # noqa: E731
    d_e = dual.edge_lengths
    d_df = dual.dual_face_areas
    d_f = dual.face_areas
    d_de = dual.dual_edge_lengths
    d_v = dual.cell_volumes
    d_t = dual.tet_volumes

    grad_p = canonical_csr(sp.diags(inv(d_e)) @ g)
    div_p = canonical_csr(sp.diags(inv(d_v)) @ g.T @ sp.diags(d_df))
    curl_p = canonical_csr(sp.diags(inv(d_f)) @ k @ sp.diags(d_e))
    grad_d = canonical_csr(sp.diags(inv(d_de)) @ gv)
    div_d = canonical_csr(sp.diags(inv(d_t)) @ gv.T @ sp.diags(d_f))
    curl_d = canonical_csr(sp.diags(inv(d_df)) @ k.T @ sp.diags(d_de))

    ie, iv = maps.interior_edges, maps.interior_vertices
    return MfdOperators(
        mesh=mesh,
        dual=dual,
        maps=maps,
        grad_p=grad_p,
        div_p=div_p,
        curl_p=curl_p,
        grad_d=grad_d,
        div_d=div_d,
        curl_d=curl_d,
        curl_p_i=canonical_csr(curl_p[:, ie]),   # (1,2) block: E -> B rows
        curl_d_i=canonical_csr(curl_d[ie, :]),   # (2,1) block: B -> E rows
        grad_p_i=canonical_csr(grad_p[ie, :][:, iv]),
        div_p_i=canonical_csr(div_p[iv, :][:, ie]),
    )


@dataclass
class StateVector:
    """Unknown triple over full entity sets; boundary entries hold data."""

    b: np.ndarray  # all faces
    e: np.ndarray  # all edges
    p: np.ndarray  # all vertices

    def copy(self) -> "StateVector":
        return StateVector(self.b.copy(), self.e.copy(), self.p.copy())

    @classmethod
    def zeros(cls, mesh: TetMesh) -> "StateVector":
        return cls(
            np.zeros(mesh.n_faces), np.zeros(mesh.n_edges), np.zeros(mesh.n_vertices)
        )


@dataclass(frozen=True)
class TransientSystem:
    """Interior Crank-Nicolson block system A x^n = g(x^{n-1}).

    Subclasses supply ``assemble_rhs``; the packing of (B on all faces,
    E and p on interior entities) is shared.
    """

    ops: MfdOperators
    tau: float
    blocks: BlockOperator
    matrix: sp.csr_matrix

    @property
    def dims(self) -> tuple[int, int, int]:
        return self.ops.dims

    def pack(self, state: StateVector) -> np.ndarray:
        maps = self.ops.maps
        return np.concatenate(
            [state.b, state.e[maps.interior_edges], state.p[maps.interior_vertices]]
        )

    def unpack(self, x: np.ndarray, bc_e: np.ndarray, bc_p: np.ndarray) -> StateVector:
        """Scatter the interior solution and the boundary data at the new time."""
        mesh, maps = self.ops.mesh, self.ops.maps
        nb, ne = self.dims[0], self.dims[1]
        state = StateVector.zeros(mesh)
        state.b[:] = x[:nb]
        state.e[maps.interior_edges] = x[nb:nb + ne]
        state.e[maps.boundary_edges] = bc_e
        state.p[maps.interior_vertices] = x[nb + ne:]
        state.p[maps.boundary_vertices] = bc_p
        return state

    def assemble_rhs(self, prev, j_prev, j_curr, bc_e_next, bc_p_next):
        raise NotImplementedError


@dataclass(frozen=True)
class MfdSystem(TransientSystem):
    def assemble_rhs(self, prev, j_prev, j_curr, bc_e_next, bc_p_next):
        return assemble_rhs(self, prev, j_prev, j_curr, bc_e_next, bc_p_next)


def assemble_system(ops: MfdOperators, tau: float) -> MfdSystem:
    if tau <= 0:
        raise ValueError("time step must be positive")
    nb, ne, nv = ops.dims
    a = 2.0 / tau
    blocks = BlockOperator(
        [
            [a * sp.identity(nb, format="csr"), ops.curl_p_i, None],
            [-ops.curl_d_i, a * sp.identity(ne, format="csr"), ops.grad_p_i],
            [None, -ops.div_p_i, a * sp.identity(nv, format="csr")],
        ],
        (nb, ne, nv),
        (nb, ne, nv),
    )
    return MfdSystem(ops=ops, tau=tau, blocks=blocks, matrix=blocks.to_csr())


def assemble_rhs(
    system: TransientSystem,
    prev: StateVector,
    j_prev: np.ndarray,
    j_curr: np.ndarray,
    bc_e_next: np.ndarray,
    bc_p_next: np.ndarray,
) -> np.ndarray:
    """Crank-Nicolson right-hand side with boundary lifting.

    The time-symmetric form is g = ((2/tau) I - N) x_prev - j_avg, where
    N is the off-diagonal part of the system; the known boundary values
    at the new time are moved to the right-hand side.
    """
    ops, tau = system.ops, system.tau
    maps = ops.maps
    a = 2.0 / tau
    ie, iv = maps.interior_edges, maps.interior_vertices
    be, bv = maps.boundary_edges, maps.boundary_vertices

    g_b = a * prev.b - ops.curl_p @ prev.e
    g_e = (
        a * prev.e[ie]
        + ops.curl_d[ie, :] @ prev.b
        - ops.grad_p[ie, :] @ prev.p
        - (j_curr[ie] + j_prev[ie])
    )
    g_p = a * prev.p[iv] + ops.div_p[iv, :] @ prev.e

    # lifting of the implicit-side boundary values
    g_b -= ops.curl_p[:, be] @ bc_e_next
    g_e -= ops.grad_p[ie, :][:, bv] @ bc_p_next
    g_p += ops.div_p[iv, :][:, be] @ bc_e_next
    return np.concatenate([g_b, g_e, g_p])


def project_current(mesh: TetMesh, j_func, t: float) -> np.ndarray:
    """Edge samples of a current density: tangential value at the midpoint.

    The midpoint is where the edge pierces its dual face, so this is the
    one-point approximation of the dual-face flux average.
    """
    mid = mesh.edge_midpoints()
    tangents = mesh.edge_tangents()
    return np.einsum("ij,ij->i", np.asarray(j_func(mid, t), dtype=np.float64),
                     tangents)


def interpolate_e_edges(mesh: TetMesh, e_func, t: float) -> np.ndarray:
    mid = mesh.edge_midpoints()
    tangents = mesh.edge_tangents()
    return np.einsum("ij,ij->i", np.asarray(e_func(mid, t), dtype=np.float64),
                     tangents)


def interpolate_b_faces(mesh: TetMesh, b_func, t: float,
                        dual: DualGeometry | None = None) -> np.ndarray:
    """Normal samples at face circumcenters (the face/dual-edge crossings)."""
    if dual is not None:
        points = dual.face_circumcenters
        normals = dual.face_normals
    else:
        from .dual import _face_circumcenters

        points = _face_circumcenters(mesh)
        normals = mesh.face_normals()
    return np.einsum("ij,ij->i", np.asarray(b_func(points, t), dtype=np.float64),
                     normals)


def interpolate_p_nodes(mesh: TetMesh, p_func, t: float) -> np.ndarray:
    return np.asarray(p_func(mesh.vertices, t), dtype=np.float64)


def lumped_weights(dual: DualGeometry) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Diagonal mass weights for (B, E, p): the dual-measure products."""
    return (
        dual.face_areas * dual.dual_edge_lengths,
        dual.dual_face_areas * dual.edge_lengths,
        dual.cell_volumes,
    )


def lumped_norm(values: np.ndarray, weights: np.ndarray) -> float:
    return float(np.sqrt(np.sum(weights * values ** 2)))


def energy(state: StateVector, dual: DualGeometry) -> float:
    w_b, w_e, w_p = lumped_weights(dual)
    return (
        lumped_norm(state.b, w_b) ** 2
        + lumped_norm(state.e, w_e) ** 2
        + lumped_norm(state.p, w_p) ** 2
    )


def divergence_of_b(ops: MfdOperators, b: np.ndarray) -> np.ndarray:
    return ops.div_d @ b


@dataclass
class StepResult:
    state: StateVector
    report: SolveReport
    div_b_max: float            # max relative div over the outer iterates
    div_b_final: float
    inner_iterations: int = 0


def step_crank_nicolson(
    system: TransientSystem,
    prev: StateVector,
    j_prev: np.ndarray,
    j_curr: np.ndarray,
    bc_e_next: np.ndarray,
    bc_p_next: np.ndarray,
    config: KrylovConfig,
    preconditioner: Callable[[np.ndarray], np.ndarray] | None = None,
    solver: Callable[[sp.csr_matrix, np.ndarray], np.ndarray] | None = None,
    track_divergence: bool = True,
) -> StepResult:
    """Advance one step; `solver` overrides FGMRES with a direct solve."""
    rhs = system.assemble_rhs(prev, j_prev, j_curr, bc_e_next, bc_p_next)
    ops = system.ops
    nb = system.dims[0]
    div_scale = max(np.abs(ops.div_d).sum(axis=1).max(), 1e-300)

    div_trace: list[float] = []

    def watch(_k: int, xk: np.ndarray) -> None:
        bk = xk[:nb]
        denom = max(float(np.abs(bk).max()), 1e-300)
        div_trace.append(
            float(np.abs(ops.div_d @ bk).max()) / (div_scale * denom)
        )

    if solver is not None:
        x = solver(system.matrix, rhs)
        report = SolveReport(iterations=0, final_residual=0.0, converged=True)
        if track_divergence:
            watch(0, x)
    else:
        x, report = fgmres(
            system.matrix,
            rhs,
            config=config,
            apply_m=preconditioner,
            callback=watch if track_divergence else None,
        )
    state = system.unpack(x, bc_e_next, bc_p_next)
    return StepResult(
        state=state,
        report=report,
        div_b_max=max(div_trace) if div_trace else 0.0,
        div_b_final=div_trace[-1] if div_trace else 0.0,
    )
