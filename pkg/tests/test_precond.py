"""Block factorization, preconditioners, clustering, divergence safety."""

import numpy as np
import pytest
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from mimax import operators as mo
from mimax import precond as mp
from mimax.linalg import KrylovConfig, fgmres
from mimax.manufactured import ManufacturedSolution


@pytest.fixture(scope="module")
def ops_r1(mesh_r1, dual_r1):
    return mo.build_operators(mesh_r1, dual_r1)


@pytest.fixture(scope="module")
def ops_bcc2(bcc2, dual_bcc2):
    return mo.build_operators(bcc2, dual_bcc2)


def test_schur_rows_away_from_boundary_are_scaled_identity(mesh_r2, dual_r2):
    """div grad of a constant vanishes, so S_p 1 = (2/tau) 1 on rows
    whose whole stencil is interior (boundary-adjacent rows lose the
    eliminated columns and differ)."""
    ops = mo.build_operators(mesh_r2, dual_r2)
    tau = 0.1
    schur = mp.build_schur(ops, tau)
    ones = np.ones(schur.s_p.shape[0])
    result = schur.s_p @ ones
    maps = ops.maps
    mesh = mesh_r2
    deep = ~mesh.boundary_vertex.copy()
    bad = np.unique(mesh.edges[mesh.boundary_edge])
    neighbor_of_boundary = np.zeros(mesh.n_vertices, dtype=bool)
    touching = np.unique(
        mesh.edges[mesh.boundary_vertex[mesh.edges].any(axis=1)]
    )
    neighbor_of_boundary[touching] = True
    deep &= ~neighbor_of_boundary
    clean = deep[maps.interior_vertices]
    assert clean.any()
    np.testing.assert_allclose(result[clean], 2.0 / tau, rtol=1e-11)


def test_schur_symmetry_under_diagonal_congruence(ops_r1, dual_r1):
    tau = 0.05
    schur = mp.build_schur(ops_r1, tau)
    maps = ops_r1.maps
    w_e = (dual_r1.dual_face_areas * dual_r1.edge_lengths)[maps.interior_edges]
    w_p = dual_r1.cell_volumes[maps.interior_vertices]
    sym_e = sp.diags(w_e) @ schur.s_e
    assert np.abs(sym_e - sym_e.T).max() <= 1e-12 * np.abs(sym_e).max()
    sym_p = sp.diags(w_p) @ schur.s_p
    assert np.abs(sym_p - sym_p.T).max() <= 1e-12 * np.abs(sym_p).max()


def test_schur_eigenvalues_bounded_below(ops_r1, dual_r1):
    """The curl-curl part is positive semidefinite under the congruence."""
    tau = 0.2
    schur = mp.build_schur(ops_r1, tau)
    maps = ops_r1.maps
    w_e = (dual_r1.dual_face_areas * dual_r1.edge_lengths)[maps.interior_edges]
    root = sp.diags(np.sqrt(w_e))
    root_inv = sp.diags(1.0 / np.sqrt(w_e))
    sym = (root @ schur.s_e @ root_inv).toarray()
    sym = 0.5 * (sym + sym.T)
    eigs = np.linalg.eigvalsh(sym)
    assert eigs.min() >= 2.0 / tau - 1e-9


def test_factorization_exact_all_meshes(ops_r1, ops_bcc2):
    for ops in (ops_r1, ops_bcc2):
        for tau in (0.2, 0.0125):
            system = mo.assemble_system(ops, tau)
            fact = mp.build_factorization(ops, tau)
            diff = fact.flatten() - system.matrix
            assert np.abs(diff).max() <= 1e-12 * np.abs(system.matrix).max()


def test_l_inverse_round_trip(ops_r1, rng):
    fact = mp.build_factorization(ops_r1, 0.1)
    x = rng.normal(size=sum(fact.dims))
    assert np.abs(fact.apply_l(fact.apply_l_inv(x)) - x).max() <= 1e-13 * np.abs(x).max()
    assert np.abs(fact.apply_u(fact.apply_u_inv(x)) - x).max() <= 1e-13 * np.abs(x).max()


def test_lsu_with_exact_inner_solves_is_identity(ops_r1, rng):
    tau = 0.05
    system = mo.assemble_system(ops_r1, tau)
    fact = mp.build_factorization(ops_r1, tau)
    pre = mp.make_preconditioner("lsu", fact, mp.InnerSolverConfig(mode="direct"))
    for _ in range(3):
        v = rng.normal(size=system.matrix.shape[0])
        assert np.linalg.norm(pre(system.matrix @ v) - v) <= 1e-10 * np.linalg.norm(v)


def test_ls_exact_is_block_upper_unitriangular(ops_r1, rng):
    """X_ls A maps a p-supported vector to itself plus a gradient tail."""
    tau = 0.1
    system = mo.assemble_system(ops_r1, tau)
    fact = mp.build_factorization(ops_r1, tau)
    pre = mp.make_preconditioner("ls", fact, mp.InnerSolverConfig(mode="direct"))
    nb, ne, nv = system.dims
    v = np.zeros(nb + ne + nv)
    v_p = rng.normal(size=nv)
    v[nb + ne:] = v_p
    out = pre(system.matrix @ v)
    assert np.abs(out[:nb]).max() <= 1e-12 * np.abs(v_p).max()
    np.testing.assert_allclose(out[nb + ne:], v_p, rtol=1e-10)
    # the E block carries (tau/2) grad p, by the triangular structure
    grad_ref = (tau / 2.0) * (ops_r1.grad_p_i @ v_p)
    np.testing.assert_allclose(out[nb:nb + ne], grad_ref, atol=1e-10 * max(
        np.abs(grad_ref).max(), 1.0))


def test_preconditioner_of_zero_is_zero(ops_r1):
    fact = mp.build_factorization(ops_r1, 0.1)
    for kind in mp.PRECONDITIONER_KINDS:
        pre = mp.make_preconditioner(kind, fact)
        out = pre(np.zeros(sum(fact.dims)))
        assert np.abs(out).max() == 0.0


@pytest.mark.parametrize("tau", [0.2, 0.0125])
def test_exact_counts_per_kind(ops_r1, tau, rng):
    """Exact Schur inverses: lsu solves in one iteration, ls/su in two.

    The ls/su-preconditioned operators are I + N with N nonzero but
    N^2 = 0 (the curl-grad identities kill the second power), so their
    minimal polynomial has degree two.
    """
    system = mo.assemble_system(ops_r1, tau)
    fact = mp.build_factorization(ops_r1, tau)
    b = rng.normal(size=system.matrix.shape[0])
    expected = {"lsu": 1, "ls": 2, "su": 2}
    for kind, count in expected.items():
        pre = mp.make_preconditioner(kind, fact, mp.InnerSolverConfig(mode="direct"))
        x, rep = fgmres(system.matrix, b, config=KrylovConfig(tol=1e-8), apply_m=pre)
        assert rep.converged
        assert rep.iterations == count, (kind, rep.iterations)


def test_eigen_clustering_exact_inner(base_mesh, base_dual):
    ops = mo.build_operators(base_mesh, base_dual)
    for tau in (0.2, 0.0125):
        system = mo.assemble_system(ops, tau)
        fact = mp.build_factorization(ops, tau)
        pre = mp.make_preconditioner("lsu", fact,
                                     mp.InnerSolverConfig(mode="direct"))
        report = mp.verify_eigen_clustering(system.matrix, pre)
        assert abs(report.min_real - 1.0) <= 1e-8
        assert abs(report.max_real - 1.0) <= 1e-8
        assert report.max_imag <= 1e-8


def test_eigen_clustering_inexact_inner_stays_close(base_mesh, base_dual):
    ops = mo.build_operators(base_mesh, base_dual)
    system = mo.assemble_system(ops, 0.05)
    fact = mp.build_factorization(ops, 0.05)
    pre = mp.make_preconditioner("lsu", fact, mp.InnerSolverConfig(tol=1e-2))
    report = mp.verify_eigen_clustering(system.matrix, pre)
    print("inexact-inner spectrum:", report)
    assert 0.5 <= report.min_real <= report.max_real <= 1.5


def test_unpreconditioned_spread_tracks_tau(base_mesh, base_dual):
    """Raw spectra are 2/tau plus the fixed curl skeleton.

    The absolute spread is tau-independent while the diagonal grows
    like 1/tau, so the spread relative to the diagonal shrinks with
    tau: unpreconditioned iteration difficulty peaks at LARGE steps.
    """
    ops = mo.build_operators(base_mesh, base_dual)
    spreads = []
    for tau in (0.2, 0.0125):
        system = mo.assemble_system(ops, tau)
        pre = mp.make_preconditioner(
            "none", mp.build_factorization(ops, tau)
        )
        report = mp.verify_eigen_clustering(system.matrix, pre)
        spreads.append(report.spread() / (2.0 / tau))
    assert spreads[0] > 5 * spreads[1]
    # and far from the clustered-at-one preconditioned picture
    assert spreads[0] > 0.5


def test_eigen_clustering_size_cap(ops_r1):
    system = mo.assemble_system(ops_r1, 0.1)
    with pytest.raises(ValueError):
        mp.verify_eigen_clustering(system.matrix, lambda r: r, cap=10)


def _manufactured_div_trace(ops, tau, kind, steps=3):
    ms = ManufacturedSolution()
    mesh, maps = ops.mesh, ops.maps
    system = mo.assemble_system(ops, tau)
    fact = mp.build_factorization(ops, tau)
    pre = mp.make_preconditioner(kind, fact, mp.InnerSolverConfig())
    state = mo.StateVector.zeros(mesh)
    state.e = mo.interpolate_e_edges(mesh, ms.e, 0.0)
    state.b = ops.curl_p @ state.e
    trace = []
    for n in range(1, steps + 1):
        j_prev = mo.project_current(mesh, ms.j, (n - 1) * tau)
        j_curr = mo.project_current(mesh, ms.j, n * tau)
        bc_e = mo.interpolate_e_edges(mesh, ms.e, n * tau)[maps.boundary_edges]
        bc_p = np.zeros(len(maps.boundary_vertices))
        res = mo.step_crank_nicolson(
            system, state, j_prev, j_curr, bc_e, bc_p,
            KrylovConfig(tol=1e-8, restart=100), preconditioner=pre,
        )
        state = res.state
        trace.append(res.div_b_max)
    return trace


@pytest.mark.parametrize("kind", ["ls", "su", "lsu"])
def test_divergence_preserved_at_every_iterate(ops_r1, kind):
    trace = _manufactured_div_trace(ops_r1, 0.1, kind)
    report = mp.verify_div_preservation(trace, tolerance=1e-10)
    assert report.passed, str(report)


def test_divergence_negative_control(ops_r1, rng):
    """A flux right-hand side with divergence must be flagged."""
    tau = 0.1
    mesh, maps = ops_r1.mesh, ops_r1.maps
    system = mo.assemble_system(ops_r1, tau)
    fact = mp.build_factorization(ops_r1, tau)
    pre = mp.make_preconditioner("lsu", fact, mp.InnerSolverConfig())
    rhs = np.zeros(sum(system.dims))
    rhs[: mesh.n_faces] = rng.normal(size=mesh.n_faces)  # div-carrying
    rhs[mesh.n_faces:] = 0.0
    div_scale = np.abs(ops_r1.div_d).sum(axis=1).max()
    trace = []

    def watch(_k, xk):
        bk = xk[: mesh.n_faces]
        trace.append(np.abs(ops_r1.div_d @ bk).max()
                     / (div_scale * max(np.abs(bk).max(), 1e-300)))

    fgmres(system.matrix, rhs, config=KrylovConfig(tol=1e-8),
           apply_m=pre, callback=watch)
    report = mp.verify_div_preservation(trace, tolerance=1e-10)
    assert not report.passed


def test_zero_run_trace_is_zero(ops_r1):
    mesh, maps = ops_r1.mesh, ops_r1.maps
    system = mo.assemble_system(ops_r1, 0.1)
    state = mo.StateVector.zeros(mesh)
    res = mo.step_crank_nicolson(
        system, state, np.zeros(mesh.n_edges), np.zeros(mesh.n_edges),
        np.zeros(len(maps.boundary_edges)), np.zeros(len(maps.boundary_vertices)),
        KrylovConfig(),
        preconditioner=mp.make_preconditioner(
            "lsu", mp.build_factorization(ops_r1, 0.1)
        ),
    )
    assert res.div_b_max == 0.0
    assert res.report.iterations == 0


def test_inner_config_validation():
    with pytest.raises(ValueError):
        mp.InnerSolverConfig(mode="amg")
    with pytest.raises(ValueError):
        mp.InnerSolverConfig(tol=2.0)
    with pytest.raises(ValueError):
        mp.make_preconditioner("xyz", None)
