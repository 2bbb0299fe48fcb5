"""Sparse kernels, FGMRES, and the dense direct solve."""

from fractions import Fraction

import numpy as np
import pytest
import scipy.sparse as sp

from mimax import linalg as la
from mimax.errors import NumericalBreakdownError, SingularMatrixError


def test_spmv_identity(rng):
    x = rng.normal(size=7)
    np.testing.assert_array_equal(la.spmv(sp.identity(7, format="csr"), x), x)


def test_spmv_hand_example():
    a = sp.csr_matrix(np.array([[1.0, 2.0], [0.0, 3.0]]))
    np.testing.assert_array_equal(la.spmv(a, np.ones(2)), [3.0, 3.0])


def test_spmv_matches_dense_oracle(rng):
    dense = rng.normal(size=(50, 50)) * (rng.random(size=(50, 50)) < 0.2)
    a = la.canonical_csr(sp.csr_matrix(dense))
    x = rng.normal(size=50)
    np.testing.assert_allclose(la.spmv(a, x), dense @ x, rtol=1e-13, atol=1e-13)


def test_spmv_dimension_mismatch():
    with pytest.raises(ValueError):
        la.spmv(sp.identity(3, format="csr"), np.ones(4))


def test_transpose_involution(rng):
    dense = rng.normal(size=(20, 30)) * (rng.random(size=(20, 30)) < 0.3)
    a = la.canonical_csr(dense)
    att = la.transpose(la.transpose(a))
    assert (att != a).nnz == 0
    np.testing.assert_array_equal(att.indices, a.indices)
    np.testing.assert_array_equal(att.data, a.data)


def test_matmul_matches_dense_and_associativity(rng):
    a = rng.normal(size=(40, 60)) * (rng.random(size=(40, 60)) < 0.2)
    b = rng.normal(size=(60, 30)) * (rng.random(size=(60, 30)) < 0.2)
    sa, sb = la.canonical_csr(a), la.canonical_csr(b)
    prod = la.matmul(sa, sb)
    np.testing.assert_allclose(prod.toarray(), a @ b, atol=1e-13)
    x = rng.normal(size=30)
    np.testing.assert_allclose(
        la.spmv(prod, x), la.spmv(sa, la.spmv(sb, x)), atol=1e-13
    )


def test_diag_scale(rng):
    a = la.canonical_csr(rng.normal(size=(5, 6)))
    d1 = rng.random(5) + 0.5
    d2 = rng.random(6) + 0.5
    out = la.diag_scale(d1, a, d2)
    np.testing.assert_allclose(
        out.toarray(), np.diag(d1) @ a.toarray() @ np.diag(d2), rtol=1e-14
    )


def test_fgmres_identity_converges_in_one(rng):
    b = rng.normal(size=12)
    x, rep = la.fgmres(sp.identity(12, format="csr"), b)
    assert rep.iterations == 1
    np.testing.assert_allclose(x, b, rtol=1e-12)


def test_fgmres_exact_preconditioner_one_iteration(rng):
    d = np.arange(1.0, 11.0)
    a = sp.diags(d, format="csr")
    b = rng.normal(size=10)
    x, rep = la.fgmres(a, b, apply_m=lambda v: v / d)
    assert rep.iterations == 1
    assert rep.converged
    np.testing.assert_allclose(x, b / d, rtol=1e-10)


def test_fgmres_matches_dense_solve(rng):
    m = rng.normal(size=(100, 100))
    a = m @ m.T + 100 * np.eye(100)  # SPD, well-conditioned
    b = rng.normal(size=100)
    cfg = la.KrylovConfig(tol=1e-12, restart=50)
    x, rep = la.fgmres(la.canonical_csr(a), b, config=cfg)
    assert rep.converged
    cond = np.linalg.cond(a)
    np.testing.assert_allclose(x, np.linalg.solve(a, b), atol=1e-12 * cond * 10)


def test_fgmres_residual_history_monotone(rng):
    m = rng.normal(size=(60, 60))
    a = la.canonical_csr(m @ m.T + 30 * np.eye(60))
    b = rng.normal(size=60)
    _, rep = la.fgmres(a, b, config=la.KrylovConfig(tol=1e-10, restart=60))
    hist = np.array(rep.residual_history)
    assert np.all(np.diff(hist) <= 1e-14)


def test_fgmres_restart_still_converges(rng):
    m = rng.normal(size=(80, 80))
    a = la.canonical_csr(m @ m.T + 20 * np.eye(80))
    b = rng.normal(size=80)
    _, rep = la.fgmres(a, b, config=la.KrylovConfig(tol=1e-10, restart=7))
    assert rep.converged
    assert rep.final_residual <= 1e-10


def test_fgmres_zero_rhs():
    x, rep = la.fgmres(sp.identity(5, format="csr"), np.zeros(5))
    assert rep.iterations == 0
    np.testing.assert_array_equal(x, np.zeros(5))


def test_fgmres_nonconvergence_reported(rng):
    m = rng.normal(size=(50, 50))
    a = la.canonical_csr(m @ m.T + 5 * np.eye(50))
    b = rng.normal(size=50)
    _, rep = la.fgmres(a, b, config=la.KrylovConfig(tol=1e-14, maxiter=3))
    assert not rep.converged
    assert rep.iterations == 3


def test_fgmres_nan_breaks_down(rng):
    b = rng.normal(size=4)

    def bad_apply(v):
        out = v.copy()
        out[0] = np.nan
        return out

    with pytest.raises(NumericalBreakdownError):
        la.fgmres(bad_apply, b)


def test_fgmres_callback_sees_every_iterate(rng):
    m = rng.normal(size=(30, 30))
    a = la.canonical_csr(m @ m.T + 10 * np.eye(30))
    b = rng.normal(size=30)
    seen = []
    la.fgmres(a, b, config=la.KrylovConfig(tol=1e-10),
              callback=lambda k, xk: seen.append((k, xk.copy())))
    ks = [k for k, _ in seen]
    assert ks == list(range(1, len(ks) + 1))
    # the final iterate solves the system
    np.testing.assert_allclose(a @ seen[-1][1], b, atol=1e-8 * np.linalg.norm(b))


def test_direct_small_solve_identity(rng):
    b = rng.normal(size=6)
    np.testing.assert_array_equal(la.direct_small_solve(np.eye(6), b), b)


def test_direct_small_solve_hilbert_vs_exact_inverse():
    n = 5
    hilbert = np.array(
        [[1.0 / (i + j + 1) for j in range(n)] for i in range(n)]
    )
    # exact rational inverse as the oracle
    frac = [[Fraction(1, i + j + 1) for j in range(n)] for i in range(n)]
    aug = [row + [Fraction(int(i == k)) for k in range(n)]
           for i, row in enumerate(frac)]
    for col in range(n):
        piv = aug[col][col]
        aug[col] = [v / piv for v in aug[col]]
        for r in range(n):
            if r != col and aug[r][col] != 0:
                factor = aug[r][col]
                aug[r] = [a - factor * b for a, b in zip(aug[r], aug[col])]
    inverse = np.array([[float(aug[i][n + j]) for j in range(n)]
                        for i in range(n)])
    b = np.arange(1.0, n + 1)
    np.testing.assert_allclose(
        la.direct_small_solve(hilbert, b), inverse @ b, rtol=1e-8
    )


def test_direct_small_solve_singular():
    a = np.array([[1.0, 2.0], [2.0, 4.0]])
    with pytest.raises(SingularMatrixError):
        la.direct_small_solve(a, np.ones(2))


def test_direct_small_solve_cap():
    with pytest.raises(ValueError):
        la.direct_small_solve(np.eye(3), np.ones(3), cap=2)


def test_block_operator_matches_flattened(rng):
    dims = (4, 3, 5)
    blocks = [[None] * 3 for _ in range(3)]
    for i in range(3):
        for j in range(3):
            if rng.random() < 0.7:
                blocks[i][j] = la.canonical_csr(rng.normal(size=(dims[i], dims[j])))
    op = la.BlockOperator(blocks, dims, dims)
    x = rng.normal(size=sum(dims))
    np.testing.assert_allclose(op @ x, op.to_csr() @ x, rtol=1e-13, atol=1e-14)


def test_block_operator_shape_validation():
    with pytest.raises(ValueError):
        la.BlockOperator(
            [[sp.identity(3, format="csr"), None, None],
             [None, None, None],
             [None, None, None]],
            (2, 2, 2), (2, 2, 2),
        )


def test_matrix_market_export(tmp_path, rng):
    a = la.canonical_csr(rng.normal(size=(4, 6)) * (rng.random((4, 6)) < 0.5))
    path = tmp_path / "matrix.mtx"
    la.export_matrix_market(a, path)
    header = path.read_text().splitlines()[0]
    assert header == "%%MatrixMarket matrix coordinate real general"
    import scipy.io
    back = scipy.io.mmread(path)
    np.testing.assert_allclose(back.toarray(), a.toarray(), rtol=1e-15)
