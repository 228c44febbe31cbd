"""The dense reference implementations themselves."""

import math

import numpy as np
import pytest

from partrace.oracle import (
    dense_matrix,
    dense_partial_trace,
    dense_thermal,
    variance_profile,
)
from partrace.ptrace import partial_trace_rank1
from partrace.spinsys import BipartiteSplit, CouplingSpec, LinOp, build_hamiltonian, chain_xx


def test_dense_matrix_single_spin():
    op = build_hamiltonian(CouplingSpec(n_sites=1, field_h=1.0))
    np.testing.assert_array_equal(dense_matrix(op), np.diag([0.5, -0.5]))


def test_dense_matrix_matches_kronecker():
    sx = np.array([[0, 1], [1, 0]], dtype=complex)
    sy = np.array([[0, -1j], [1j, 0]])
    op = build_hamiltonian(chain_xx(2, 1.0))
    ref = (np.kron(sx, sx) + np.kron(sy, sy)).real
    np.testing.assert_allclose(dense_matrix(op), ref, atol=1e-14)


def test_dense_matrix_diagonal_for_zero_couplings():
    op = build_hamiltonian(CouplingSpec(n_sites=3, field_h=0.7))
    mat = dense_matrix(op)
    assert np.count_nonzero(mat - np.diag(np.diag(mat))) == 0


def test_dense_matrix_size_guard():
    with pytest.raises(ValueError, match="refused"):
        dense_matrix(LinOp.from_dense(np.eye(5000)))


def test_dense_thermal_identity_at_beta_zero():
    op = build_hamiltonian(chain_xx(3, 1.0).with_field(0.3))
    thermal, log_z = dense_thermal(op, 0.0)
    np.testing.assert_allclose(thermal.to_dense(), np.eye(8), atol=1e-12)
    np.testing.assert_allclose(log_z, math.log(8.0), rtol=1e-12)


def test_dense_thermal_scalar_case():
    op = LinOp.from_dense(np.diag([0.0, 1.0]))
    thermal, log_z = dense_thermal(op, math.log(2.0))
    np.testing.assert_allclose(thermal.to_dense(), np.diag([1.0, 0.5]), rtol=1e-12)
    np.testing.assert_allclose(log_z, math.log(1.5), rtol=1e-12)


def test_dense_thermal_partition_function():
    rng = np.random.default_rng(0)
    a = rng.standard_normal((8, 8))
    op = LinOp.from_dense(0.5 * (a + a.T))
    beta = 1.7
    thermal, log_z = dense_thermal(op, beta)
    w = np.linalg.eigvalsh(op.to_array())
    np.testing.assert_allclose(
        thermal.trace() * math.exp(thermal.log_scale), np.sum(np.exp(-beta * w)),
        rtol=1e-12)
    np.testing.assert_allclose(log_z, math.log(np.sum(np.exp(-beta * w))), rtol=1e-12)


def test_partial_trace_identity():
    split = BipartiteSplit(4, 2)
    np.testing.assert_array_equal(
        dense_partial_trace(np.eye(split.d_t), split), split.d_b * np.eye(split.d_s))


def test_partial_trace_matches_rank1():
    split = BipartiteSplit(5, 2)
    rng = np.random.default_rng(1)
    x = rng.standard_normal(split.d_t)
    np.testing.assert_allclose(
        dense_partial_trace(np.outer(x, x), split),
        partial_trace_rank1(x, split), atol=1e-12)


def test_partial_trace_preserves_trace_and_linearity():
    split = BipartiteSplit(4, 1)
    rng = np.random.default_rng(2)
    a = rng.standard_normal((split.d_t, split.d_t))
    b = rng.standard_normal((split.d_t, split.d_t))
    np.testing.assert_allclose(
        np.trace(dense_partial_trace(a, split)), np.trace(a), rtol=1e-12)
    lhs = dense_partial_trace(2.0 * a - 0.3 * b, split)
    rhs = 2.0 * dense_partial_trace(a, split) - 0.3 * dense_partial_trace(b, split)
    assert np.max(np.abs(lhs - rhs)) <= 1e-13 * max(np.linalg.norm(rhs), 1.0)


def test_variance_profile_full_deflation_and_beta_zero():
    op = build_hamiltonian(chain_xx(4, 1.0).with_field(0.3))
    d = op.dim
    profile = variance_profile(op, [0.0, 1.0], [0, 3, d])
    # k = d: nothing left, bound is exactly zero
    np.testing.assert_array_equal(profile.bound[:, -1], [0.0, 0.0])
    # beta = 0: all singular values equal 1/d
    np.testing.assert_allclose(profile.bound[0, 0], 2.0 * d / d ** 2, rtol=1e-12)
    np.testing.assert_allclose(profile.bound[0, 1], 2.0 * (d - 3) / d ** 2, rtol=1e-12)


def test_variance_profile_monotone_in_k():
    op = build_hamiltonian(chain_xx(6, 1.0).with_field(0.3))
    profile = variance_profile(op, [0.01, 0.1, 1.0, 10.0], [0, 1, 4, 16])
    assert np.all(np.diff(profile.bound, axis=1) <= 1e-15)
    rows = list(profile.iter_rows())
    assert len(rows) == 16 and rows[0][:2] == (0.01, 0)
