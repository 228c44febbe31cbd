"""Matrices carried with a separate logarithmic scale factor.

Boltzmann weights exp(-beta*lambda) overflow or underflow double precision
long before the physics becomes uninteresting, so every thermal quantity in
this package is represented as ``exp(log_scale) * mat`` with ``mat`` kept at
a moderate Frobenius norm.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

#: target range for ||mat||_F after normalization
NORM_LO = 1e-3
NORM_HI = 1e3


@dataclass(frozen=True)
class LogScaledMatrix:
    """A real matrix ``mat`` together with a scale, representing exp(log_scale)*mat."""

    mat: np.ndarray
    log_scale: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "mat", np.asarray(self.mat, dtype=float))
        if not math.isfinite(self.log_scale):
            raise ValueError(f"log_scale must be finite, got {self.log_scale}")

    @classmethod
    def from_dense(cls, mat: np.ndarray) -> "LogScaledMatrix":
        return cls(np.asarray(mat, dtype=float), 0.0).normalized()

    def normalized(self) -> "LogScaledMatrix":
        """Rescale so ||mat||_F lies in [1e-3, 1e3]; the shift moves to log_scale."""
        s = float(np.linalg.norm(self.mat))
        if s == 0.0 or (NORM_LO <= s <= NORM_HI):
            return self
        return LogScaledMatrix(self.mat / s, self.log_scale + math.log(s))

    def scaled_to(self, log_scale: float) -> np.ndarray:
        """Entries of this matrix expressed at the given reference scale."""
        return self.mat * math.exp(min(self.log_scale - log_scale, 700.0))

    def to_dense(self) -> np.ndarray:
        """Plain matrix exp(log_scale)*mat; may overflow for extreme scales."""
        return self.mat * math.exp(self.log_scale)

    def trace(self) -> float:
        """Trace of ``mat`` (at this object's scale)."""
        return float(np.trace(self.mat))

    def frobenius(self) -> float:
        return float(np.linalg.norm(self.mat))


def combine(terms: Sequence[LogScaledMatrix], weights: Sequence[float]) -> LogScaledMatrix:
    """Weighted sum of log-scaled matrices, evaluated at the largest scale present.

    Contributions whose scale is far below the common one underflow to zero,
    which is the correct limiting behaviour.
    """
    if len(terms) == 0:
        raise ValueError("combine() needs at least one term")
    if len(terms) != len(weights):
        raise ValueError("terms and weights must have equal length")
    ref = max(t.log_scale for t in terms)
    acc = np.zeros_like(terms[0].mat)
    for t, w in zip(terms, weights):
        acc = acc + w * t.scaled_to(ref)
    return LogScaledMatrix(acc, ref)
