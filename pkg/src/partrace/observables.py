"""Physical quantities derived from a reduced density matrix."""

from __future__ import annotations

import numpy as np


class DensityMatrix:
    """A real-symmetric, unit-trace density matrix with cached spectrum.

    Statistical estimators can produce slightly negative eigenvalues; the
    constructor tolerates them down to ``negative_tol`` (pass None to accept
    any), and derived quantities use eigenvalues clamped at zero and
    renormalized, with the clamped magnitude recorded in
    ``clamp_magnitude``.
    """

    def __init__(self, rho: np.ndarray, negative_tol: float | None = 1e-8):
        rho = np.asarray(rho, dtype=float)
        if rho.ndim != 2 or rho.shape[0] != rho.shape[1]:
            raise ValueError(f"density matrix must be square, got shape {rho.shape}")
        asym = np.linalg.norm(rho - rho.T)
        if asym > 1e-10 * max(np.linalg.norm(rho), 1e-300):
            raise ValueError(f"density matrix not symmetric: ||rho - rho^T|| = {asym:.3e}")
        tr = float(np.trace(rho))
        if abs(tr - 1.0) > 1e-8:
            raise ValueError(f"density matrix trace {tr!r} is not 1")
        self.rho = 0.5 * (rho + rho.T) / tr
        self._negative_tol = negative_tol
        self._eigvals: np.ndarray | None = None

    @property
    def dim(self) -> int:
        return self.rho.shape[0]

    @property
    def eigenvalues(self) -> np.ndarray:
        """Raw eigenvalues in nondecreasing order (cached)."""
        if self._eigvals is None:
            w = np.linalg.eigvalsh(self.rho)
            if self._negative_tol is not None and w[0] < -self._negative_tol:
                raise ValueError(
                    f"eigenvalue {w[0]:.3e} below the noise floor -{self._negative_tol:.1e}"
                )
            self._eigvals = w
        return self._eigvals

    @property
    def clamp_magnitude(self) -> float:
        """Total negative weight removed by clamping."""
        w = self.eigenvalues
        return float(-np.sum(w[w < 0]))

    @property
    def probabilities(self) -> np.ndarray:
        """Eigenvalues clamped at zero and renormalized, nondecreasing."""
        w = np.clip(self.eigenvalues, 0.0, None)
        total = w.sum()
        if total == 0.0:
            raise ValueError("all eigenvalues clamped to zero")
        return w / total


def von_neumann_entropy(rho: DensityMatrix) -> float:
    """S = -sum p_i ln p_i in nats, with 0*ln(0) = 0."""
    p = rho.probabilities
    p = p[p > 0]
    return float(-np.sum(p * np.log(p)))


def entanglement_spectrum(
    rho: DensityMatrix, floor: float = 1e-12
) -> tuple[np.ndarray, int]:
    """Levels {-ln p_i} in ascending order for p_i above ``floor``.

    Returns the levels and the count of clamped (dropped) eigenvalues.
    """
    p = rho.probabilities
    kept = p[p > floor]
    levels = np.sort(-np.log(kept))
    return levels, int(p.size - kept.size)


def internal_energy(rho: DensityMatrix, h_s: np.ndarray) -> float:
    """tr(H_s rho)."""
    h_s = np.asarray(h_s, dtype=float)
    if h_s.shape != rho.rho.shape:
        raise ValueError(f"H_s shape {h_s.shape} != rho shape {rho.rho.shape}")
    return float(np.sum(h_s * rho.rho))


def ergotropy(rho: DensityMatrix, h_s: np.ndarray) -> float:
    """Maximal unitarily extractable energy tr(H_s rho) - sum_i p_i^down eps_i^up.

    The passive energy pairs the density-matrix eigenvalues in decreasing
    order with the H_s eigenvalues in increasing order (the optimal unitary
    maps the dominant state onto the lowest level); the pairing is
    insensitive to how ties are ordered.
    """
    h_s = np.asarray(h_s, dtype=float)
    if h_s.shape != rho.rho.shape:
        raise ValueError(f"H_s shape {h_s.shape} != rho shape {rho.rho.shape}")
    eps = np.linalg.eigvalsh(h_s)          # ascending
    p = rho.probabilities[::-1]            # descending
    passive = float(p @ eps)
    return internal_energy(rho, h_s) - passive
