"""Stochastic partial-trace estimators with eigenspace deflation.

The partial trace over subsystem (b) of an operator A on the product space
is estimated from quadratic forms Y^T A Y with probe blocks
Y = I_{d_s} (x) v, E[v v^T] = I.  A known eigenspace is removed exactly
(its partial trace is computed from rank-1 factors) and the probes only see
the residual, which reduces the estimator variance; for thermal operators
f(H) = exp(-beta*H) the residual quadratic forms are evaluated by block
Gauss quadrature on a deflated Lanczos recurrence that is run once per
probe and reused across the whole beta grid.
"""

from __future__ import annotations

import math
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .krylov import (
    DeflationBasis,
    QuadratureEvaluator,
    block_lanczos_defl,
    depth_requirements,
)
from .logscale import LogScaledMatrix
from .spinsys import BipartiteSplit, LinOp


class OrthonormalityError(ValueError):
    """A projection block that must be orthonormal is not."""


class RankDeficiencyWarning(UserWarning):
    """The sketch of the operator had lower rank than requested."""


@dataclass(frozen=True)
class ProbeConfig:
    """Sampling configuration for the quadratic-form probes.

    Probe i is drawn from its own RNG stream derived from (seed, i), so
    results are reproducible regardless of how samples are scheduled across
    workers.
    """

    m: int
    distribution: str = "gaussian"
    seed: int = 0
    parallel_width: int = 1

    def __post_init__(self):
        if self.m < 1:
            raise ValueError(f"need m >= 1 samples, got {self.m}")
        if self.distribution not in ("gaussian", "sphere"):
            raise ValueError(
                f"distribution must be 'gaussian' or 'sphere', got {self.distribution!r}"
            )
        if self.parallel_width < 1:
            raise ValueError(f"parallel_width must be >= 1, got {self.parallel_width}")

    def sample(self, index: int, d_b: int) -> np.ndarray:
        """Probe vector for sample ``index``; E[v v^T] = I_{d_b} for both distributions."""
        seq = np.random.SeedSequence(self.seed, spawn_key=(index,))
        v = np.random.default_rng(seq).standard_normal(d_b)
        if self.distribution == "sphere":
            v *= math.sqrt(d_b) / np.linalg.norm(v)
        return v


def _probe_block(v: np.ndarray, split: BipartiteSplit) -> np.ndarray:
    """The d_t x d_s block Y = I_{d_s} (x) v."""
    y = np.zeros((split.d_t, split.d_s))
    for s in range(split.d_s):
        y[s * split.d_b:(s + 1) * split.d_b, s] = v
    return y


def _probe_quadratic(block: np.ndarray, v: np.ndarray, split: BipartiteSplit) -> np.ndarray:
    """Y^T M for M given as a d_t x d_s block: contracts each d_b chunk with v."""
    m3 = block.reshape(split.d_s, split.d_b, split.d_s)
    return np.einsum("b,ibj->ij", v, m3)


def _sym(mat: np.ndarray) -> np.ndarray:
    return 0.5 * (mat + mat.T)


def partial_trace_rank1(x: np.ndarray, split: BipartiteSplit, weight: float = 1.0) -> np.ndarray:
    """Exact partial trace of weight * x x^T over subsystem (b).

    Entry (i, j) is weight * <chunk_j, chunk_i> over the d_s contiguous
    chunks of length d_b; cost O(d_s^2 * d_b).
    """
    x = np.asarray(x, dtype=float).reshape(-1)
    if x.shape[0] != split.d_t:
        raise ValueError(f"vector has length {x.shape[0]}, expected {split.d_t}")
    chunks = x.reshape(split.d_s, split.d_b)
    return weight * (chunks @ chunks.T)


def partial_trace_outer(xs: np.ndarray, weights: np.ndarray, split: BipartiteSplit) -> np.ndarray:
    """Exact partial trace of sum_i weights[i] * xs[:, i] xs[:, i]^T."""
    xs = np.asarray(xs, dtype=float)
    weights = np.asarray(weights, dtype=float)
    if xs.ndim != 2 or xs.shape[0] != split.d_t:
        raise ValueError(f"factor block must be {split.d_t} x k")
    if weights.shape != (xs.shape[1],):
        raise ValueError("one weight per column required")
    if xs.shape[1] == 0:
        return np.zeros((split.d_s, split.d_s))
    r = xs.reshape(split.d_s, split.d_b, xs.shape[1])
    return np.einsum("ibk,jbk,k->ij", r, r, weights)


def _jackknife_from_loo(loo_values) -> np.ndarray:
    arr = np.asarray(loo_values, dtype=float)
    m = arr.shape[0]
    center = arr.mean(axis=0)
    var = ((m - 1) / m) * np.sum((arr - center) ** 2, axis=0)
    return np.sqrt(var)


def jackknife_stderr(samples) -> np.ndarray:
    """Leave-one-out standard error of the sample mean, entrywise.

    For the plain mean this equals the classical s/sqrt(m).
    """
    arr = np.asarray(samples, dtype=float)
    m = arr.shape[0]
    if m < 2:
        raise ValueError(f"jackknife needs m >= 2 samples, got {m}")
    total = arr.sum(axis=0)
    loo = (total - arr) / (m - 1)
    return _jackknife_from_loo(loo)


@dataclass
class PartialTraceEstimate:
    """Deflation term, per-sample residual terms, and their combination.

    ``mean`` equals ``defl_term`` plus the average of ``rem_samples`` under
    a common scale; ``stderr`` holds the entrywise jackknife standard error
    of the raw mean, expressed at ``mean.log_scale`` (NaN for m = 1).
    ``asymmetry`` records how far the raw mean was from symmetric before it
    was symmetrized.
    """

    defl_term: LogScaledMatrix
    rem_samples: list[LogScaledMatrix]
    mean: LogScaledMatrix
    stderr: np.ndarray
    asymmetry: float = 0.0

    @classmethod
    def from_terms(
        cls, defl_term: LogScaledMatrix, rem_samples: list[LogScaledMatrix]
    ) -> "PartialTraceEstimate":
        m = len(rem_samples)
        if m < 1:
            raise ValueError("at least one residual sample required")
        ref = max([defl_term.log_scale] + [r.log_scale for r in rem_samples])
        defl = defl_term.scaled_to(ref)
        rems = np.stack([r.scaled_to(ref) for r in rem_samples])
        raw = defl + rems.mean(axis=0)
        denom = max(float(np.linalg.norm(raw)), 1e-300)
        asym = float(np.linalg.norm(raw - raw.T)) / denom
        mean_raw = LogScaledMatrix(_sym(raw), ref)
        mean = mean_raw.normalized()
        if m >= 2:
            stderr = jackknife_stderr(rems) * math.exp(ref - mean.log_scale)
        else:
            stderr = np.full_like(raw, np.nan)
        return cls(defl_term, list(rem_samples), mean, stderr, asym)

    def _scaled_parts(self) -> tuple[np.ndarray, np.ndarray]:
        ref = max([self.defl_term.log_scale] + [r.log_scale for r in self.rem_samples])
        defl = self.defl_term.scaled_to(ref)
        rems = np.stack([r.scaled_to(ref) for r in self.rem_samples])
        return defl, rems

    def normalized(self) -> np.ndarray:
        """The trace-normalized estimate (the scale factor cancels)."""
        tr = self.mean.trace()
        if tr == 0.0:
            raise ValueError("estimate has zero trace; cannot normalize")
        return self.mean.mat / tr

    def loo_normalized(self) -> list[np.ndarray]:
        """Trace-normalized leave-one-out means (needs m >= 2)."""
        m = len(self.rem_samples)
        if m < 2:
            raise ValueError(f"leave-one-out needs m >= 2 samples, got {m}")
        defl, rems = self._scaled_parts()
        total = rems.sum(axis=0)
        out = []
        for j in range(m):
            mat = _sym(defl + (total - rems[j]) / (m - 1))
            tr = float(np.trace(mat))
            if tr == 0.0:
                raise ValueError("leave-one-out estimate has zero trace")
            out.append(mat / tr)
        return out

    def normalized_stderr(self) -> np.ndarray:
        """Entrywise jackknife standard error of the normalized estimate."""
        return _jackknife_from_loo(self.loo_normalized())

    def jackknife_scalar(self, fn) -> tuple[float, float]:
        """Value and jackknife standard error of a scalar functional of the
        normalized estimate, computed by re-evaluating fn on each
        leave-one-out matrix (valid for smooth functionals)."""
        value = float(fn(self.normalized()))
        loo = [float(fn(mat)) for mat in self.loo_normalized()]
        return value, float(_jackknife_from_loo(loo))


def _map_samples(fn, m: int, width: int) -> list:
    """Evaluate fn(0..m-1), possibly on a thread pool; order is preserved so
    the reduction is deterministic for any worker count."""
    if width <= 1:
        return [fn(i) for i in range(m)]
    with ThreadPoolExecutor(max_workers=width) as pool:
        return list(pool.map(fn, range(m)))


def _check_orthonormal(q: np.ndarray, tol: float = 1e-8) -> np.ndarray:
    q = np.asarray(q, dtype=float)
    if q.ndim != 2:
        raise OrthonormalityError("projection block must be a 2-d array")
    if q.shape[1]:
        defect = np.linalg.norm(q.T @ q - np.eye(q.shape[1]))
        if defect > tol:
            raise OrthonormalityError(
                f"projection block not orthonormal: ||Q^T Q - I||_F = {defect:.3e}"
            )
    return q


def estimate_deflated_dense(
    a_apply: LinOp,
    q: np.ndarray,
    split: BipartiteSplit,
    probes: ProbeConfig,
) -> PartialTraceEstimate:
    """Variance-reduced partial trace of an explicitly applicable operator A.

    Eigendecomposes Q^T A Q = S Theta S^T, takes the partial trace of the
    induced rank-k part exactly, and applies the probe estimator to the
    residual A - (QQ^T) A (QQ^T).  Uses exactly k + m*d_s applications
    of A.
    """
    if a_apply.dim != split.d_t:
        raise ValueError(f"operator dim {a_apply.dim} != split dim {split.d_t}")
    q = _check_orthonormal(q)
    if q.shape[0] != split.d_t:
        raise ValueError(f"Q has leading dimension {q.shape[0]}, expected {split.d_t}")
    k = q.shape[1]

    if k:
        g = q.T @ a_apply.apply(q)
        theta, s = np.linalg.eigh(_sym(g))
        x = q @ s
        defl = LogScaledMatrix(partial_trace_outer(x, theta, split)).normalized()
    else:
        theta = np.zeros(0)
        x = np.zeros((split.d_t, 0))
        defl = LogScaledMatrix(np.zeros((split.d_s, split.d_s)))

    def one_sample(i: int) -> LogScaledMatrix:
        v = probes.sample(i, split.d_b)
        y = _probe_block(v, split)
        ay = a_apply.apply(y)
        b_rem = _probe_quadratic(ay, v, split)
        if k:
            w = x.T @ y
            b_rem = b_rem - w.T @ (theta[:, None] * w)
        return LogScaledMatrix(_sym(b_rem)).normalized()

    rems = _map_samples(one_sample, probes.m, probes.parallel_width)
    return PartialTraceEstimate.from_terms(defl, rems)


def estimate_plain(
    a_apply: LinOp, split: BipartiteSplit, probes: ProbeConfig
) -> PartialTraceEstimate:
    """Plain probe estimator of tr_b(A): m samples of Y^T A Y, no deflation."""
    return estimate_deflated_dense(a_apply, np.zeros((split.d_t, 0)), split, probes)


@dataclass(frozen=True)
class ThermalEstimate:
    """Per-beta partial-trace estimates of exp(-beta*H) from a single run."""

    betas: tuple[float, ...]
    estimates: tuple[PartialTraceEstimate, ...]
    depth: int
    lambda_shift: float | None
    matvecs: int

    def __iter__(self):
        return iter(zip(self.betas, self.estimates))


def estimate_thermal(
    h: LinOp,
    split: BipartiteSplit,
    basis: DeflationBasis,
    betas,
    probes: ProbeConfig,
    depth="auto",
    *,
    depth_rel_tol: float = 1e-10,
    depth_max: int = 512,
    reorth: bool = False,
) -> ThermalEstimate:
    """Estimate tr_b(exp(-beta*H)) for every beta in one pass.

    The deflated eigenpairs contribute exp(-beta*(lambda_i - shift)) times
    their exact rank-1 partial traces; each probe runs one deflated
    block-Lanczos recurrence (the recurrence does not depend on beta) whose
    quadrature is then re-evaluated per beta.  All terms are carried as
    log-scaled matrices, each residual shifted by the smallest Ritz value
    of its own recurrence, so arbitrarily large beta stays in range.  The
    automatic depth is the largest requirement over the whole beta grid
    (with deflation the hardest beta is an interior one: at large beta the
    residual drops below the deflated term's scale).  The probe loop
    applies H exactly m * depth * d_s times.
    """
    if h.dim != split.d_t:
        raise ValueError(f"operator dim {h.dim} != split dim {split.d_t}")
    betas = [float(b) for b in betas]
    if not betas:
        raise ValueError("betas must be nonempty")
    for b in betas:
        if b < 0 or math.isinf(b) or math.isnan(b):
            raise ValueError(f"beta values must be finite and >= 0, got {b}")
    if basis.q.shape[0] != h.dim:
        raise ValueError("deflation basis dimension does not match operator")

    if depth == "auto":
        t = max(depth_requirements(h, basis, betas, depth_rel_tol, t_max=depth_max))
    else:
        t = int(depth)
        if t < 1:
            raise ValueError(f"depth must be >= 1, got {depth}")

    k = basis.k
    lam_shift = float(basis.lam[0]) if k else None

    defl_terms = []
    for beta in betas:
        if k:
            weights = np.exp(-beta * (basis.lam - lam_shift))
            mat = partial_trace_outer(basis.q, weights, split)
            defl_terms.append(LogScaledMatrix(mat, -beta * lam_shift).normalized())
        else:
            defl_terms.append(LogScaledMatrix(np.zeros((split.d_s, split.d_s))))

    applies_before = h.applies

    def one_probe(i: int) -> list[LogScaledMatrix]:
        v = probes.sample(i, split.d_b)
        y = _probe_block(v, split)
        z = y - basis.q @ (basis.q.T @ y) if k else y
        trid = block_lanczos_defl(h, z, basis, t, reorth=reorth)
        ev = QuadratureEvaluator(trid)
        shift = float(ev.eigvals.min())
        out = []
        for beta in betas:
            mat = ev.evaluate(lambda x: np.exp(-beta * (x - shift)))
            out.append(LogScaledMatrix(_sym(mat), -beta * shift).normalized())
        return out

    per_probe = _map_samples(one_probe, probes.m, probes.parallel_width)
    matvecs = h.applies - applies_before

    estimates = []
    for bi, beta in enumerate(betas):
        rems = [per_probe[i][bi] for i in range(probes.m)]
        estimates.append(PartialTraceEstimate.from_terms(defl_terms[bi], rems))
    return ThermalEstimate(
        betas=tuple(betas),
        estimates=tuple(estimates),
        depth=t,
        lambda_shift=lam_shift,
        matvecs=matvecs,
    )


def ground_state_reduced(basis: DeflationBasis, split: BipartiteSplit) -> np.ndarray:
    """Zero-temperature reduced state tr_b(q1 q1^T) (unit trace by construction)."""
    if basis.k < 1:
        raise ValueError("ground-state path needs at least one eigenpair")
    return partial_trace_rank1(basis.q[:, 0], split)


def randomized_range(a_apply: LinOp, k: int, seed: int) -> np.ndarray:
    """Orthonormal basis for the range of A applied to a k-column Gaussian sketch.

    If A * Omega is (numerically) rank deficient, fewer than k columns are
    returned and a :class:`RankDeficiencyWarning` is issued.
    """
    if k < 1:
        raise ValueError(f"need k >= 1, got {k}")
    rng = np.random.default_rng(seed)
    omega = rng.standard_normal((a_apply.dim, k))
    b = a_apply.apply(omega)
    u, s, _ = np.linalg.svd(b, full_matrices=False)
    if s[0] == 0.0:
        rank = 0
    else:
        rank = int(np.sum(s > s[0] * max(b.shape) * np.finfo(float).eps))
    if rank < k:
        warnings.warn(
            f"sketch rank {rank} < requested {k}; returning {rank} columns",
            RankDeficiencyWarning,
            stacklevel=2,
        )
    return u[:, :rank]


def residual_quadratic_general_q(
    a_apply: LinOp, q: np.ndarray, y_block: np.ndarray
) -> np.ndarray:
    """Cancellation-mitigating form of Y^T (A - QQ^T A QQ^T) Y for general Q.

    Uses (1/2)(W^T A Z + Z^T A W) with Z = (I - QQ^T) Y and
    W = (I + QQ^T) Y, which is algebraically identical to the direct
    difference but keeps the computation anchored to the projected probe.
    Costs one block application of A.
    """
    q = _check_orthonormal(q)
    y = np.asarray(y_block, dtype=float)
    if y.ndim == 1:
        y = y[:, None]
    if q.shape[1]:
        qty = q.T @ y
        z = y - q @ qty
        w = y + q @ qty
    else:
        z = w = y
    az = a_apply.apply(z)
    m = w.T @ az
    return _sym(m)
