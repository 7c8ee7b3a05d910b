import math
from fractions import Fraction

import numpy as np
import pytest

from oracles import fd_gradient_errors, random_feasible_point
from potapprox.diagnostics import (
    assert_lambda_chain,
    assert_monotone_after_truncation,
    assert_sufficient_increase,
    assert_truncation_budget,
    estimate_rate,
    kkt_residual,
    lojasiewicz_exponent,
    lojasiewicz_exponent_from_count,
    lojasiewicz_variable_count,
    riemannian_grad_components,
    subdiff_bound_constant,
    subgradient_witness_norm,
    sufficient_increase_constant,
    symmetry_defect,
)
from potapprox.problems import plant
from potapprox.solver import FactorSet, InnerTrace, IterationRecord, SolverConfig, lambdas_of, solve
from potapprox.tensor import hs_norm

H = 1e-5


# -- Riemannian gradient ----------------------------------------------------------

@pytest.mark.parametrize("seed", range(50))
def test_riemannian_gradient_matches_finite_differences(seed):
    shapes = [(3, 4, 3), (4, 4, 4), (5, 3, 4), (3, 3, 3, 2)]
    shape = shapes[seed % len(shapes)]
    r = 1 + seed % 3
    s = 1 + seed % len(shape)
    r = min(r, min(shape[:s]))
    a = np.random.default_rng(seed).standard_normal(shape)
    u, rng = random_feasible_point(shape, r, s, seed)
    x = rng.standard_normal(r)
    grads, grad_x = riemannian_grad_components(a, u, x)
    errors = fd_gradient_errors(a, u, x, grads, grad_x, rng, H)
    assert max(errors) <= 1e-5, errors


def test_gradient_vanishes_at_planted_solution():
    inst = plant((5, 4, 6), 3, 2, (3.0, 2.0, 1.0), seed=3)
    lam = lambdas_of(inst.tensor, inst.true_factors)
    grads, grad_x = riemannian_grad_components(inst.tensor, inst.true_factors, lam)
    assert all(np.linalg.norm(g) <= 1e-9 for g in grads)
    np.testing.assert_array_equal(grad_x, 0.0)


def test_gradient_is_tangent():
    a = np.random.default_rng(1).standard_normal((4, 5, 3))
    u, rng = random_feasible_point(a.shape, 2, 2, 1)
    grads, _ = riemannian_grad_components(a, u, rng.standard_normal(2))
    for i, g in enumerate(grads):
        m = u[i].T @ g
        if i < 2:
            np.testing.assert_allclose(m + m.T, 0.0, atol=1e-12)
        else:
            np.testing.assert_allclose(np.diag(m), 0.0, atol=1e-12)


# -- KKT residual -----------------------------------------------------------------

def test_kkt_zero_at_planted_and_positive_at_random():
    inst = plant((6, 5, 4), 3, 1, (3.0, 2.0, 1.0), seed=5)
    kkt = kkt_residual(inst.tensor, inst.true_factors)
    assert kkt.total <= 1e-9 * hs_norm(inst.tensor)
    assert kkt.lambda_residual == 0.0
    u, _ = random_feasible_point(inst.tensor.shape, 3, 1, 9)
    rnd = kkt_residual(inst.tensor, u)
    assert rnd.total > 0
    assert len(rnd.per_mode_stiefel) == 1 and len(rnd.per_mode_oblique) == 2
    lam = lambdas_of(inst.tensor, u)
    assert rnd.normalized_total == pytest.approx(
        rnd.total / (hs_norm(inst.tensor) * max(1.0, np.linalg.norm(lam))))


def test_kkt_invariant_under_permutation_and_admissible_signs():
    rng = np.random.default_rng(12)
    for trial in range(10):
        a = rng.standard_normal((4, 4, 3))
        u, _ = random_feasible_point(a.shape, 3, 2, trial)
        perm = rng.permutation(3)
        signs = rng.choice([-1.0, 1.0], size=(3, 3))
        signs[-1] = np.prod(signs[:-1], axis=0)  # product over modes is +1
        v = FactorSet(tuple(f[:, perm] * e for f, e in zip(u.factors, signs)), u.s)
        assert kkt_residual(a, v).total == pytest.approx(kkt_residual(a, u).total, abs=1e-10)


def test_symmetry_defect_bounded_by_kkt():
    # ||skew(U^T B)|| <= ||B - U sym(U^T B)||, so the defect is at most 2 * total
    for seed in range(5):
        a = np.random.default_rng(seed).standard_normal((4, 4, 4))
        res = solve(a, 2, 2, SolverConfig(seed=seed, stop_tol=1e-12))
        kkt = kkt_residual(a, res.factors)
        assert symmetry_defect(a, res.factors) <= 2 * kkt.total + 1e-12
        assert kkt.total <= 1e-6 * hs_norm(a)
        assert symmetry_defect(a, res.factors) <= 1e-6 * hs_norm(a)


# -- runtime checks ---------------------------------------------------------------

def _records(fs, steps=None, truncated=None):
    steps = steps or [0.0] * len(fs)
    truncated = truncated or {}
    return [IterationRecord(sweep=p, objective_f=f, step_norm=st, active_rank=2,
                            truncated_indices=truncated.get(p, ()))
            for p, (f, st) in enumerate(zip(fs, steps))]


def test_sufficient_increase_checks():
    assert sufficient_increase_constant(1e-3, 1.0) == 5e-4
    assert sufficient_increase_constant(1.0, 0.1) == pytest.approx(0.01)
    ok = assert_sufficient_increase(_records([1.0, 2.0, 2.5], [0, 1.0, 0.5]), 0.1, 1.0)
    assert ok.passed and not ok.failures
    bad = assert_sufficient_increase(_records([1.0, 0.9], [0, 0.1]), 0.1, 1.0)
    assert not bad.passed and [c.sweep for c in bad.failures] == [1]
    trunc = assert_sufficient_increase(_records([1.0, 0.5, 0.6], [0, 1.0, 0.1], {1: (0,)}),
                                       0.1, 1.0)
    assert trunc.passed
    assert trunc.to_dict()["exempt_sweeps"] == [1]


def test_monotone_and_budget_checks():
    recs = _records([1.0, 0.7, 0.8, 0.9], truncated={1: (1,)})
    assert assert_monotone_after_truncation(recs).passed
    assert not assert_monotone_after_truncation(_records([1.0, 1.2, 1.1])).passed
    recs[1].truncation_loss = 0.3
    assert assert_truncation_budget(recs, initial_r=2, kappa=0.6).passed
    assert not assert_truncation_budget(recs, initial_r=2, kappa=0.5).passed
    many = _records([1.0, 1.0, 1.0], truncated={1: (0,), 2: (0, 1)})
    rep = assert_truncation_budget(many, initial_r=2, kappa=1.0)
    assert not rep.passed and rep.details["truncations"] == 3


def test_checks_pass_on_completed_solves():
    for seed in range(6):
        shape = [(3, 3, 3), (4, 5, 3), (5, 5, 5)][seed % 3]
        a = np.random.default_rng(seed).standard_normal(shape)
        res = solve(a, 1 + seed % 3, 1 + seed % 3, SolverConfig(seed=seed, record_inner=True))
        norm = res.tensor_norm
        assert assert_sufficient_increase(res.records, res.epsilon, res.kappa, norm).passed
        assert assert_monotone_after_truncation(res.records, norm).passed
        assert assert_truncation_budget(res.records, res.initial_r, res.kappa).passed
        traces = [rec.inner_trace for rec in res.records[1:]]
        assert assert_lambda_chain(traces).passed


def test_lambda_chain_hand_built():
    flip = InnerTrace(1, 1, np.array([[1.0], [-1.2]]), np.array([[0.0]]))
    assert not assert_lambda_chain([flip]).passed
    # 2.0 - 1.5 = |2.0| / 2 * 0.5, then a stall with a zero step
    grow = InnerTrace(1, 1, np.array([[1.5], [2.0], [2.0]]), np.array([[0.5], [0.0]]))
    rep = assert_lambda_chain([grow])
    assert rep.passed and rep.details["max_identity_deviation"] == 0.0
    shrink = InnerTrace(2, 1, np.array([[2.0], [1.5]]), np.array([[0.0]]))
    assert not assert_lambda_chain([shrink]).passed


# -- subdifferential bound -------------------------------------------------------

def test_subdiff_bound_constant_examples():
    assert subdiff_bound_constant(1.0, 1, 3, 0.0) == pytest.approx(12.0)
    assert subdiff_bound_constant(0.0, 2, 3, 0.5) == pytest.approx(2 * math.sqrt(3) * 0.5)
    a = np.zeros((2, 2, 2))
    a[0, 0, 0] = 1.0
    assert subdiff_bound_constant(a, 1, 3, 0.0) == pytest.approx(12.0)


@pytest.mark.parametrize("seed,s", [(0, 1), (1, 2), (2, 3), (3, 1)])
def test_subgradient_witness_bounded_by_step(seed, s):
    a = np.random.default_rng(seed).standard_normal((4, 4, 4))
    states = []
    res = solve(a, 2, s, SolverConfig(seed=seed, max_sweeps=60),
                callback=lambda st, rec: states.append((st.factor_set(), rec)))
    const = subdiff_bound_constant(a, 2, 3, res.epsilon)
    checked = 0
    for (u_prev, _), (u_next, rec) in zip(states, states[1:]):
        if rec.truncated:
            continue
        w = subgradient_witness_norm(a, u_prev, u_next, rec.proximal_modes, res.epsilon)
        assert w <= const * rec.step_norm + 1e-12
        checked += 1
    assert checked > 5


def test_subgradient_witness_zero_at_fixed_point():
    inst = plant((4, 4, 4), 2, 2, (2.0, 1.0), seed=1)
    u = inst.true_factors
    assert subgradient_witness_norm(inst.tensor, u, u, (), 1e-3) <= 1e-12


# -- Lojasiewicz exponent ----------------------------------------------------------

def test_lojasiewicz_examples():
    assert lojasiewicz_exponent_from_count(3, 1, exact=True) == Fraction(5, 6)
    assert lojasiewicz_variable_count((2, 2, 2), 1, 1) == 4
    zeta = lojasiewicz_exponent(3, (2, 2, 2), 1, 1, exact=True)
    assert zeta == 1 - Fraction(1, 6 * 15**3)
    assert lojasiewicz_exponent(3, (2, 2, 2), 1, 1) == pytest.approx(1 - 1 / 20250, abs=1e-15)


@pytest.mark.parametrize("k,dims,r,s", [(3, (3, 4, 5), 2, 2), (4, (2, 3, 3, 2), 2, 1),
                                        (3, (6, 6, 6), 3, 3)])
def test_lojasiewicz_matches_direct_arithmetic(k, dims, r, s):
    n_vars = r + sum(dims[:s]) * r + s * r * (r + 1) // 2
    direct = Fraction(2 * k * (6 * k - 3) ** (n_vars - 1) - 1, 2 * k * (6 * k - 3) ** (n_vars - 1))
    assert lojasiewicz_exponent(k, dims, r, s, exact=True) == direct
    assert abs(lojasiewicz_exponent(k, dims, r, s) - float(direct)) <= 1e-15


# -- rate estimation ------------------------------------------------------------

def _gap_records(gaps, f_star=1.0):
    return [IterationRecord(sweep=p, objective_f=f_star - g, step_norm=0.0, active_rank=1)
            for p, g in enumerate(gaps)]


def test_rate_geometric():
    recs = _gap_records([1.0] + [0.5**p for p in range(1, 41)])
    est = estimate_rate(recs, f_star_hint=1.0)
    assert est.model == "linear"
    assert est.linear_factor == pytest.approx(0.5, abs=1e-6)
    assert est.fit_r2 == pytest.approx(1.0, abs=1e-9)


def test_rate_power_law():
    recs = _gap_records([1.0] + [float(p) ** -2 for p in range(1, 201)])
    est = estimate_rate(recs, f_star_hint=1.0)
    assert est.model == "sublinear"
    assert est.sublinear_exponent == pytest.approx(-2.0, abs=1e-6)


def test_rate_short_log_rejected():
    with pytest.raises(ValueError):
        estimate_rate(_gap_records([0.5**p for p in range(5)]), f_star_hint=1.0)


def test_rate_ignores_sweeps_before_truncation():
    recs = _gap_records([1.0] + [0.5**p for p in range(1, 41)])
    recs[3].truncated_indices = (1,)
    recs[1].objective_f = -100.0
    est = estimate_rate(recs, f_star_hint=1.0)
    assert est.model == "linear" and est.linear_factor == pytest.approx(0.5, abs=1e-6)


def test_rate_on_random_solve_is_linear():
    a = np.random.default_rng([77, 0]).standard_normal((5, 5, 5))
    res = solve(a, 2, 2, SolverConfig(seed=0, stop_tol=1e-12))
    est = estimate_rate(res.records, tensor_norm=res.tensor_norm)
    assert est.model == "linear" and est.fit_r2 >= 0.95
    assert 0 < est.linear_factor < 1
