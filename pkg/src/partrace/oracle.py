"""Dense brute-force references for the stochastic and Krylov components.

Everything here materializes full matrices and is guarded to dimensions
where a complete eigendecomposition stays cheap (d_t <= 4096, i.e. 12
sites); the rest of the package is validated against these routines.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import logsumexp

from .logscale import LogScaledMatrix
from .spinsys import BipartiteSplit, LinOp

MAX_DENSE_DIM = 4096


def _check_dim(d: int) -> None:
    if d > MAX_DENSE_DIM:
        raise ValueError(f"dense oracle refused for dim {d} > {MAX_DENSE_DIM}")


def dense_matrix(h: LinOp, block: int = 512) -> np.ndarray:
    """Materialize the operator by applying it to coordinate blocks."""
    d = h.dim
    _check_dim(d)
    out = np.empty((d, d))
    eye = np.eye(d)
    for lo in range(0, d, block):
        hi = min(lo + block, d)
        out[:, lo:hi] = h.apply(eye[:, lo:hi])
    return out


def dense_thermal(h: LinOp, beta: float) -> tuple[LogScaledMatrix, float]:
    """exp(-beta*H) as a log-scaled matrix, plus ln of the partition function.

    The matrix part is exp(-beta*(H - lambda_min)) with
    log_scale = -beta*lambda_min, so entries stay in range for any beta.
    """
    if beta < 0:
        raise ValueError(f"beta must be >= 0, got {beta}")
    _check_dim(h.dim)
    w, u = np.linalg.eigh(dense_matrix(h))
    shift = w[0]
    f = np.exp(-beta * (w - shift))
    mat = (u * f) @ u.T
    mat = 0.5 * (mat + mat.T)
    log_z = float(-beta * shift + logsumexp(np.log(f, where=f > 0, out=np.full_like(f, -np.inf))))
    return LogScaledMatrix(mat, float(-beta * shift)), log_z


def dense_partial_trace(a: np.ndarray, split: BipartiteSplit) -> np.ndarray:
    """Literal block-trace over subsystem (b)."""
    a = np.asarray(a, dtype=float)
    d_s, d_b = split.d_s, split.d_b
    if a.shape != (split.d_t, split.d_t):
        raise ValueError(f"matrix shape {a.shape} != ({split.d_t}, {split.d_t})")
    return np.einsum("ibjb->ij", a.reshape(d_s, d_b, d_s, d_b))


def dense_reduced_state(h: LinOp, beta: float, split: BipartiteSplit) -> np.ndarray:
    """Ground-truth normalized reduced density matrix at inverse temperature beta."""
    thermal, _ = dense_thermal(h, beta)
    red = dense_partial_trace(thermal.mat, split)
    return red / np.trace(red)


@dataclass(frozen=True)
class VarianceProfile:
    """Deflated variance bounds 2*sum_{i>k} sigma_i^2 for the normalized
    thermal operator, tabulated over (beta, k)."""

    betas: tuple[float, ...]
    ks: tuple[int, ...]
    bound: np.ndarray        # shape (len(betas), len(ks))
    log10_bound: np.ndarray  # same shape; -inf where the bound is exactly 0

    def iter_rows(self):
        for bi, beta in enumerate(self.betas):
            for ki, k in enumerate(self.ks):
                yield beta, k, float(self.bound[bi, ki]), float(self.log10_bound[bi, ki])


def variance_profile(h: LinOp, betas, ks) -> VarianceProfile:
    """Variance bounds of the probe estimator applied to exp(-beta*H)/Z.

    The singular values of the normalized thermal operator are
    exp(-beta*lambda_i)/Z; deflating the top k of them leaves a bound of
    2*(sigma_{k+1}^2 + ... + sigma_{d}^2).  Computed in log space so large
    beta cannot overflow.
    """
    _check_dim(h.dim)
    betas = [float(b) for b in betas]
    ks = [int(k) for k in ks]
    for beta in betas:
        if beta < 0:
            raise ValueError(f"beta must be >= 0, got {beta}")
    for k in ks:
        if not (0 <= k <= h.dim):
            raise ValueError(f"need 0 <= k <= dim, got k={k}")
    w = np.linalg.eigvalsh(dense_matrix(h))
    bound = np.zeros((len(betas), len(ks)))
    log10_bound = np.full_like(bound, -np.inf)
    for bi, beta in enumerate(betas):
        log_sigma = -beta * (w - w[0])
        log_sigma -= logsumexp(log_sigma)
        log_sigma = np.sort(log_sigma)[::-1]  # descending singular values
        for ki, k in enumerate(ks):
            if k >= w.size:
                continue
            log_b = np.log(2.0) + logsumexp(2.0 * log_sigma[k:])
            log10_bound[bi, ki] = log_b / np.log(10.0)
            bound[bi, ki] = np.exp(log_b)
    return VarianceProfile(tuple(betas), tuple(ks), bound, log10_bound)
