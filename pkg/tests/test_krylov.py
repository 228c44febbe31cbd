"""Eigenpair, block-Lanczos, and quadrature behaviour against dense algebra."""

import numpy as np
import pytest
from scipy import sparse

from partrace.krylov import (
    BlockTridiagonal,
    DeflationBasis,
    DepthSelectionError,
    KrylovDegeneracyError,
    QuadratureDomainError,
    block_lanczos_defl,
    choose_depth,
    depth_requirements,
    lowest_eigenpairs,
    matfun_quadrature,
    orthogonality_defect,
)
from partrace.spinsys import LinOp, build_hamiltonian, chain_xx


def random_sparse_symmetric(rng, d, density=0.05):
    a = sparse.random(d, d, density=density, random_state=rng, format="csr")
    a = 0.5 * (a + a.T)
    # keep the spectrum O(1) so polynomial evaluation stays well conditioned
    a = a / max(abs(a).sum(axis=1).max(), 1.0)
    return LinOp(a.tocsr())


# ---------------------------------------------------------------------------
# lowest_eigenpairs
# ---------------------------------------------------------------------------

def test_empty_basis():
    op = LinOp.from_dense(np.diag([1.0, 2.0, 3.0]))
    basis = lowest_eigenpairs(op, 0)
    assert basis.k == 0 and basis.q.shape == (3, 0)


def test_two_site_singlet_ground_state():
    j = 1.0
    op = build_hamiltonian(chain_xx(2, j))
    basis = lowest_eigenpairs(op, 1)
    np.testing.assert_allclose(basis.lam[0], -2.0 * j, atol=1e-12)
    expected = np.array([0.0, 1.0, -1.0, 0.0]) / np.sqrt(2.0)
    overlap = abs(expected @ basis.q[:, 0])
    np.testing.assert_allclose(overlap, 1.0, atol=1e-12)


def test_diagonal_operator_eigenpairs():
    op = LinOp.from_dense(np.diag(np.arange(1.0, 17.0)))
    basis = lowest_eigenpairs(op, 3)
    np.testing.assert_allclose(basis.lam, [1.0, 2.0, 3.0], atol=1e-13)
    np.testing.assert_allclose(np.abs(basis.q[:3, :3]), np.eye(3), atol=1e-12)


def test_arpack_path_residuals_and_orthonormality():
    op = build_hamiltonian(chain_xx(8, 1.0).with_field(0.3))
    assert op.dim == 256  # large enough to exercise the iterative path
    basis = lowest_eigenpairs(op, 5, tol=1e-12)
    assert np.all(basis.residual_norms <= 1e-12 * op.norm_bound())
    defect = np.linalg.norm(basis.q.T @ basis.q - np.eye(5))
    assert defect <= 1e-12
    dense = np.linalg.eigvalsh(op.to_array())[:5]
    np.testing.assert_allclose(basis.lam, dense, atol=1e-10)


def test_bad_k_rejected():
    op = LinOp.from_dense(np.diag([1.0, 2.0]))
    with pytest.raises(ValueError):
        lowest_eigenpairs(op, 2)
    with pytest.raises(ValueError):
        lowest_eigenpairs(op, -1)


# ---------------------------------------------------------------------------
# block_lanczos_defl
# ---------------------------------------------------------------------------

def test_identity_operator_single_step():
    op = LinOp.from_dense(np.eye(8))
    rng = np.random.default_rng(0)
    z = rng.standard_normal((8, 2))
    trid = block_lanczos_defl(op, z, None, 1)
    np.testing.assert_allclose(trid.m_blocks[0], np.eye(2), atol=1e-13)
    assert trid.r_blocks == ()


def test_full_depth_reproduces_spectrum():
    op = LinOp.from_dense(np.diag([1.0, 2.0, 3.0, 4.0]))
    trid = block_lanczos_defl(op, np.ones(4), None, 4)
    eigs = np.linalg.eigvalsh(trid.assemble())
    np.testing.assert_allclose(eigs, [1.0, 2.0, 3.0, 4.0], atol=1e-10)


def test_deflation_noop_when_start_block_orthogonal():
    # Q spans an exact invariant subspace; a start block orthogonal to it
    # makes the deflated and undeflated recurrences identical
    d = 12
    vals = np.linspace(-1.0, 1.0, d)
    op = LinOp.from_dense(np.diag(vals))
    q = np.eye(d)[:, :3]
    rng = np.random.default_rng(5)
    z = rng.standard_normal((d, 2))
    z[:3, :] = 0.0  # orthogonal to Q
    with_q = block_lanczos_defl(op, z, q, 4)
    without_q = block_lanczos_defl(op, z, None, 4)
    np.testing.assert_allclose(with_q.r0, without_q.r0, atol=1e-12)
    np.testing.assert_allclose(with_q.assemble(), without_q.assemble(), atol=1e-12)


def test_degenerate_subspace_raises_and_truncates():
    op = LinOp.from_dense(np.diag([0.0, 1.0]))
    z = np.array([1.0, 1.0])
    with pytest.raises(KrylovDegeneracyError):
        block_lanczos_defl(op, z, None, 3)
    trid = block_lanczos_defl(op, z, None, 3, allow_early_stop=True)
    assert trid.depth == 2


def test_zero_start_block_rejected():
    op = LinOp.from_dense(np.eye(4))
    q = np.eye(4)[:, :2]
    z = q @ np.ones((2, 1))  # lies entirely inside the deflated space
    with pytest.raises(KrylovDegeneracyError):
        block_lanczos_defl(op, z, q, 2)


def test_orthogonality_with_reorth_and_deflation():
    op = build_hamiltonian(chain_xx(8, 1.0).with_field(0.3))
    basis = lowest_eigenpairs(op, 4)
    rng = np.random.default_rng(3)
    z = rng.standard_normal((op.dim, 2))
    z -= basis.q @ (basis.q.T @ z)
    trid, v = block_lanczos_defl(op, z, basis, 50, reorth=True, return_basis=True)
    assert np.linalg.norm(v.T @ v - np.eye(v.shape[1])) <= 1e-10
    assert np.linalg.norm(v.T @ basis.q) <= 1e-10
    # T = V^T H V when the full basis is retained
    t_ref = v.T @ op.apply(v)
    assert np.linalg.norm(trid.assemble() - t_ref) <= 1e-10 * op.norm_bound()


def test_orthogonality_holds_to_depth_200():
    op = build_hamiltonian(chain_xx(8, 1.0).with_field(0.3))
    basis = lowest_eigenpairs(op, 4)
    rng = np.random.default_rng(4)
    z = rng.standard_normal((op.dim, 1))
    _, v = block_lanczos_defl(op, z, basis, 200, reorth=True, return_basis=True)
    assert v.shape[1] == 200
    assert np.linalg.norm(v.T @ v - np.eye(200)) <= 1e-10
    assert np.linalg.norm(v.T @ basis.q) <= 1e-10


def test_spectral_containment():
    op = build_hamiltonian(chain_xx(6, 1.0).with_field(0.4))
    w = np.linalg.eigvalsh(op.to_array())
    eps = 1e-10 * op.norm_bound()
    rng = np.random.default_rng(9)
    z = rng.standard_normal((op.dim, 2))

    trid = block_lanczos_defl(op, z, None, 12)
    ritz = np.linalg.eigvalsh(trid.assemble())
    assert ritz.min() >= w[0] - eps and ritz.max() <= w[-1] + eps

    basis = lowest_eigenpairs(op, 3)
    z_defl = z - basis.q @ (basis.q.T @ z)
    trid_d = block_lanczos_defl(op, z_defl, basis, 12)
    ritz_d = np.linalg.eigvalsh(trid_d.assemble())
    # deflating the bottom eigenpairs restricts Ritz values to the convex
    # closure of the remaining spectrum
    assert ritz_d.min() >= w[3] - eps and ritz_d.max() <= w[-1] + eps


def test_shift_invariance():
    op = build_hamiltonian(chain_xx(5, 1.0).with_field(0.2))
    shift = 2.31
    op_shifted = LinOp(op.matrix + shift * sparse.eye(op.dim))
    rng = np.random.default_rng(17)
    z = rng.standard_normal((op.dim, 3))
    a = block_lanczos_defl(op, z, None, 8)
    b = block_lanczos_defl(op_shifted, z, None, 8)
    for ma, mb in zip(a.m_blocks, b.m_blocks):
        np.testing.assert_allclose(mb, ma + shift * np.eye(3), atol=1e-12)
    for ra, rb in zip(a.r_blocks, b.r_blocks):
        np.testing.assert_allclose(rb, ra, atol=1e-12)


# ---------------------------------------------------------------------------
# quadrature
# ---------------------------------------------------------------------------

def test_quadrature_degree_zero_and_one_exactness():
    op = build_hamiltonian(chain_xx(5, 0.7).with_field(0.1))
    dense = op.to_array()
    rng = np.random.default_rng(21)
    z = rng.standard_normal((op.dim, 3))
    trid = block_lanczos_defl(op, z, None, 4)
    np.testing.assert_allclose(
        matfun_quadrature(trid, lambda x: np.ones_like(x)), z.T @ z, atol=1e-12)
    np.testing.assert_allclose(
        matfun_quadrature(trid, lambda x: x), z.T @ dense @ z, atol=1e-11)


def test_quadrature_polynomial_exactness_small():
    rng = np.random.default_rng(33)
    for _ in range(10):
        d = int(rng.integers(16, 64))
        b = int(rng.integers(1, 4))
        t = int(rng.integers(1, 6))
        op = random_sparse_symmetric(rng, d)
        dense = op.to_array()
        z = rng.standard_normal((d, b))
        coeffs = rng.standard_normal(2 * t)  # degree 2t - 1
        trid = block_lanczos_defl(op, z, None, t)
        got = matfun_quadrature(trid, lambda x: np.polyval(coeffs, x))
        w, u = np.linalg.eigh(dense)
        ref = (z.T @ u) @ np.diag(np.polyval(coeffs, w)) @ (u.T @ z)
        assert np.linalg.norm(got - ref) <= 1e-9 * max(np.linalg.norm(ref), 1.0)


def test_quadrature_domain_error_names_eigenvalue():
    op = LinOp.from_dense(np.diag([0.0, 1.0, 2.0]))
    trid = block_lanczos_defl(op, np.ones(3), None, 3)
    with pytest.raises(QuadratureDomainError, match="not finite"):
        matfun_quadrature(trid, np.log)  # T has eigenvalue 0


def test_banded_assembly_matches_dense():
    rng = np.random.default_rng(8)
    op = random_sparse_symmetric(rng, 40)
    z = rng.standard_normal((40, 3))
    trid = block_lanczos_defl(op, z, None, 5)
    dense_t = trid.assemble()
    band = trid.assemble_banded()
    rebuilt = np.zeros_like(dense_t)
    n = dense_t.shape[0]
    for off in range(band.shape[0]):
        for c in range(n - off):
            rebuilt[c + off, c] = band[off, c]
    rebuilt = rebuilt + np.tril(rebuilt, -1).T
    np.testing.assert_allclose(rebuilt, dense_t, atol=0)


# ---------------------------------------------------------------------------
# depth selection
# ---------------------------------------------------------------------------

def test_depth_constant_function():
    op = build_hamiltonian(chain_xx(4, 1.0))
    assert choose_depth(op, None, 0.0) == 1


def test_depth_two_dimensional_space():
    op = LinOp.from_dense(np.diag([0.0, 1.0]))
    assert choose_depth(op, None, 1.0) == 2


def test_depth_deflated_smaller_than_plain():
    op = build_hamiltonian(chain_xx(8, 1.0).with_field(0.3))
    basis = lowest_eigenpairs(op, 8)
    t_defl = choose_depth(op, basis, 50.0)
    t_plain = choose_depth(op, DeflationBasis.empty(op.dim), 50.0)
    assert t_defl < t_plain


def test_depth_requirements_grid():
    op = build_hamiltonian(chain_xx(6, 1.0).with_field(0.3))
    reqs = depth_requirements(op, DeflationBasis.empty(op.dim), [0.0, 1.0, 10.0])
    assert reqs[0] == 1
    assert reqs[1] <= reqs[2]  # harder at larger beta without deflation


def test_depth_cap_failure():
    op = build_hamiltonian(chain_xx(8, 1.0).with_field(0.3))
    with pytest.raises(DepthSelectionError, match="no stagnation"):
        choose_depth(op, None, 50.0, t_max=4)


def test_block_tridiagonal_consistency_checks():
    with pytest.raises(ValueError):
        BlockTridiagonal(
            m_blocks=(np.eye(2),), r_blocks=(np.eye(2),), r0=np.eye(2),
            block_size=2, depth=1,
        )


def test_debug_dump_roundtrip(tmp_path):
    rng = np.random.default_rng(40)
    op = random_sparse_symmetric(rng, 24)
    trid = block_lanczos_defl(op, rng.standard_normal((24, 2)), None, 3)
    path = tmp_path / "trid.txt"
    trid.dump(path)
    text = path.read_text()
    assert "# block R0" in text and "# block M2" in text and "# block R2" in text
    # entries round-trip through the text format
    lines = [l for l in text.splitlines() if not l.startswith("#")]
    first_row = np.array([float(x) for x in lines[0].split()])
    np.testing.assert_array_equal(first_row, trid.r0[0])


def test_orthogonality_monitor_reports_drift():
    op = build_hamiltonian(chain_xx(8, 1.0).with_field(0.3))
    basis = lowest_eigenpairs(op, 3)
    rng = np.random.default_rng(41)
    z = rng.standard_normal((op.dim, 2))
    _, v_re = block_lanczos_defl(op, z, basis, 40, reorth=True, return_basis=True)
    _, v_raw = block_lanczos_defl(op, z, basis, 40, reorth=False, return_basis=True)
    self_re, cross_re = orthogonality_defect(v_re, basis.q)
    self_raw, cross_raw = orthogonality_defect(v_raw, basis.q)
    assert self_re <= 1e-10 and cross_re <= 1e-10
    assert self_raw >= self_re  # the monitor exposes (possible) drift
    assert cross_raw <= 1e-8    # explicit deflation holds even without reorth
