"""Recover a planted partially orthogonal tensor from random starts."""

# %%
import numpy as np

from potapprox import (
    SolverConfig,
    factor_match_score,
    manifold_dimension,
    plant,
    rank_from_sigmas,
    rank_via_flattening,
    solve_multistart,
)

# %% A 10 x 10 x 10 tensor with two orthonormal factor matrices
inst = plant((10, 10, 10), r=3, s=2, sigmas=(3.0, 2.0, 1.0), seed=4)
print("||A||^2 =", np.sum(inst.tensor**2), "(sum of sigma^2 is 14)")
print("rank from sigmas:", rank_from_sigmas(inst.true_sigmas),
      " rank of the mode-1 flattening:", rank_via_flattening(inst.tensor))
print("parameter manifold dimension:", manifold_dimension((10, 10, 10), 3, 2))

# %% Best of five seeded restarts
best, runs = solve_multistart(inst.tensor, 3, 2, SolverConfig(seed=0), restarts=5)
for run in best.metadata["restarts"]:
    print(f"  restart {run['index']}: f = {run['objective_f']:.10f} "
          f"after {run['sweeps']} sweeps ({run['status']})")
print("recovered coefficients:", np.round(np.sort(np.abs(best.core.lambdas))[::-1], 10))
print("relative residual:", best.residual(inst.tensor) / np.linalg.norm(inst.tensor))
print("factor match score:", factor_match_score(best.factors, best.core, inst))

# %% With noise the fit is no longer exact but the factors stay close
noisy = plant((10, 10, 10), 3, 2, (3.0, 2.0, 1.0), noise_level=0.05, seed=4)
best, _ = solve_multistart(noisy.tensor, 3, 2, SolverConfig(seed=0), restarts=5)
print("noisy: relative residual", round(best.residual(noisy.tensor) / np.linalg.norm(noisy.tensor), 4),
      " match", round(factor_match_score(best.factors, best.core, noisy), 4))
