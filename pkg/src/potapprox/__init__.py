"""Low-rank partially orthogonal tensor approximation.

The solver alternates polar decompositions on the orthonormal modes with
normalised least-squares updates on the remaining modes and truncates
vanishing components.  Runtime diagnostics check its convergence
guarantees on every run.
"""

from .diagnostics import (
    KktResidual,
    RateEstimate,
    Report,
    assert_lambda_chain,
    assert_monotone_after_truncation,
    assert_sufficient_increase,
    assert_truncation_budget,
    estimate_rate,
    kkt_residual,
    lojasiewicz_exponent,
    riemannian_grad_components,
    subdiff_bound_constant,
    subgradient_witness_norm,
)
from .linalg import polar, random_orthonormal, sigma_min, svd
from .problems import (
    PlantedInstance,
    factor_match_score,
    manifold_dimension,
    plant,
    rank_from_sigmas,
    rank_via_flattening,
)
from .solver import (
    DiagonalCore,
    FactorSet,
    InitializationError,
    IterationRecord,
    SolveResult,
    SolverConfig,
    lambdas_of,
    objective_f,
    reconstruct,
    solve,
    solve_multistart,
)
from .tensor import (
    A_tau,
    A_tau_i,
    DimensionError,
    Diag_k,
    contract,
    diag_k,
    hs_norm,
    inner,
    mat_tensor_product,
    read_tns,
    tau,
    write_tns,
)

__version__ = "0.1.0"
