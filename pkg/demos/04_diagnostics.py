"""Runtime checks of the convergence guarantees on a random tensor."""

# %%
import numpy as np

from potapprox import (
    SolverConfig,
    assert_lambda_chain,
    assert_monotone_after_truncation,
    assert_sufficient_increase,
    assert_truncation_budget,
    estimate_rate,
    kkt_residual,
    lojasiewicz_exponent,
    solve,
)

a = np.random.default_rng(3).standard_normal((5, 5, 5))
res = solve(a, r=2, s=2, config=SolverConfig(seed=0, stop_tol=1e-12, record_inner=True))
print(f"{res.status} after {len(res.records) - 1} sweeps, f = {res.objective_f:.10f}")
print(f"epsilon = {res.epsilon:.3g}, kappa = {res.kappa:.3g}")

# %% Per-sweep assertions
norm = res.tensor_norm
for rep in (
    assert_sufficient_increase(res.records, res.epsilon, res.kappa, norm),
    assert_monotone_after_truncation(res.records, norm),
    assert_truncation_budget(res.records, res.initial_r, res.kappa),
    assert_lambda_chain([rec.inner_trace for rec in res.records[1:]]),
):
    print(f"{rep.name:28s} {'pass' if rep.passed else 'FAIL'}")

# %% First-order optimality at the returned point
kkt = kkt_residual(a, res.factors)
print("KKT residual per Stiefel mode:", kkt.per_mode_stiefel)
print("KKT residual per unit-column mode:", kkt.per_mode_oblique)
print("normalised total:", kkt.normalized_total)

# %% The objective gap decays geometrically
est = estimate_rate(res.records, tensor_norm=norm)
print(f"rate model {est.model}: factor {est.linear_factor:.4f}, R^2 {est.fit_r2:.6f} "
      f"on {est.n_points} sweeps")
gaps = [est.f_star - rec.objective_f for rec in res.records[1:]]
for p in range(0, len(gaps), max(1, len(gaps) // 8)):
    print(f"  sweep {p + 1:4d}  gap {gaps[p]:.3e}")

# %% The worst-case exponent is too close to 1 to matter numerically
zeta = lojasiewicz_exponent(3, (5, 5, 5), 2, 2, exact=True)
print("1 - zeta has", len(str(zeta.denominator)), "decimal digits in its denominator")
