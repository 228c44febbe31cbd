"""Matrix-free estimation of partial traces of matrix functions.

Estimates tr_b(f(H)) for real-symmetric operators H — principally the
thermal case f(x) = exp(-beta*x) yielding reduced density matrices — by
combining an exactly deflated eigenspace with stochastic quadratic-form
probes and a block-Lanczos / Gauss-quadrature backend, validated against
dense brute-force oracles.
"""

from .krylov import (
    BlockTridiagonal,
    DeflationBasis,
    DepthSelectionError,
    EigensolverError,
    KrylovDegeneracyError,
    QuadratureDomainError,
    block_lanczos_defl,
    choose_depth,
    lowest_eigenpairs,
    matfun_quadrature,
)
from .logscale import LogScaledMatrix
from .observables import (
    DensityMatrix,
    entanglement_spectrum,
    ergotropy,
    internal_energy,
    von_neumann_entropy,
)
from .ptrace import (
    OrthonormalityError,
    PartialTraceEstimate,
    ProbeConfig,
    ThermalEstimate,
    estimate_deflated_dense,
    estimate_plain,
    estimate_thermal,
    ground_state_reduced,
    jackknife_stderr,
    partial_trace_rank1,
    randomized_range,
    residual_quadratic_general_q,
)
from .spinsys import (
    BipartiteSplit,
    CouplingSpec,
    LinOp,
    build_hamiltonian,
    chain_xx,
    kagome_strip,
    long_range_xx,
    subsystem_hamiltonian,
)

__version__ = "0.1.0"

__all__ = [
    "BipartiteSplit",
    "BlockTridiagonal",
    "CouplingSpec",
    "DeflationBasis",
    "DensityMatrix",
    "DepthSelectionError",
    "EigensolverError",
    "KrylovDegeneracyError",
    "LinOp",
    "LogScaledMatrix",
    "OrthonormalityError",
    "PartialTraceEstimate",
    "ProbeConfig",
    "QuadratureDomainError",
    "ThermalEstimate",
    "block_lanczos_defl",
    "build_hamiltonian",
    "chain_xx",
    "choose_depth",
    "entanglement_spectrum",
    "ergotropy",
    "estimate_deflated_dense",
    "estimate_plain",
    "estimate_thermal",
    "ground_state_reduced",
    "internal_energy",
    "jackknife_stderr",
    "kagome_strip",
    "long_range_xx",
    "lowest_eigenpairs",
    "matfun_quadrature",
    "partial_trace_rank1",
    "randomized_range",
    "residual_quadratic_general_q",
    "subsystem_hamiltonian",
    "von_neumann_entropy",
]
