import itertools

import numpy as np
import pytest

from oracles import loop_A_tau_i
from potapprox.linalg import random_orthonormal
from potapprox.problems import factor_match_score, plant
from potapprox.solver import (
    DiagonalCore,
    FactorSet,
    InvariantError,
    SolverConfig,
    SweepState,
    als_update,
    compute_lambda_V,
    initialize,
    lambdas_of,
    objective_f,
    polar_update,
    reconstruct,
    restart_seed,
    solve,
    solve_multistart,
    sweep,
    truncate,
)
from potapprox.tensor import diag_k, hs_norm, tau


def _state(inst):
    u = inst.true_factors
    return SweepState(list(u.factors), u.s, lambdas_of(inst.tensor, u))


def _random_state(shape, r, s, seed):
    rng = np.random.default_rng(seed)
    factors = []
    for i, n in enumerate(shape):
        if i < s:
            factors.append(random_orthonormal(n, r, rng))
        else:
            g = rng.standard_normal((n, r))
            factors.append(g / np.linalg.norm(g, axis=0))
    return factors


# -- data types ---------------------------------------------------------------

def test_factor_set_validation():
    with pytest.raises(ValueError):
        FactorSet((np.ones((3, 2)), np.ones((3, 3))), 1)
    with pytest.raises(ValueError):
        FactorSet((np.eye(2),), 2)
    fs = FactorSet((np.eye(3)[:, :2], np.ones((4, 2)) / 2), 1)
    assert fs.k == 2 and fs.r_active == 2 and fs.dims == (3, 4)
    assert fs.is_feasible()
    assert not FactorSet((np.ones((3, 2)),), 1).is_feasible()


def test_solver_config_validation():
    for bad in ({"epsilon": 0.0}, {"kappa": -1.0}, {"stop_tol": 0.0},
                {"max_sweeps": 0}, {"kappa_factor": 1.0}):
        with pytest.raises(ValueError):
            SolverConfig(**bad)


# -- objective and reconstruction -------------------------------------------------

def test_reconstruct_examples():
    eye = np.eye(3)
    fs = FactorSet((eye, eye, eye), 3)
    np.testing.assert_array_equal(reconstruct(fs, DiagonalCore(np.ones(3))), diag_k(np.ones(3), 3))
    rng = np.random.default_rng(0)
    cols = [v / np.linalg.norm(v) for v in (rng.standard_normal(n) for n in (2, 3, 4))]
    single = FactorSet(tuple(c[:, None] for c in cols), 1)
    np.testing.assert_allclose(reconstruct(single, DiagonalCore([2.5])), 2.5 * tau(cols))


def test_reconstruct_planted_and_objective():
    inst = plant((4, 5, 3), 3, 2, (3.0, 2.0, 1.0), seed=4)
    np.testing.assert_allclose(reconstruct(inst.true_factors, DiagonalCore(inst.true_sigmas)),
                               inst.tensor, atol=1e-12)
    a = diag_k([3.0, 2.0], 3)
    eye = np.eye(2)
    assert objective_f(a, FactorSet((eye, eye, eye), 3)) == pytest.approx(13.0)
    u = FactorSet(tuple(_random_state((2, 2, 2), 2, 1, 3)), 1)
    assert objective_f(np.zeros((2, 2, 2)), u) == 0.0


# -- per-mode steps -------------------------------------------------------------

def test_compute_lambda_V_on_diagonal_tensor():
    sig = np.array([3.0, 1.5])
    a = diag_k(sig, 3)
    eye = np.eye(2)
    state = SweepState([eye, eye, eye], 3, sig)
    for i in range(3):
        lam, v = compute_lambda_V(a, state, i)
        np.testing.assert_allclose(lam, sig)
        np.testing.assert_allclose(v, eye * sig)
    lam, v = compute_lambda_V(np.zeros((2, 2, 2)), state, 1)
    assert not lam.any() and not v.any()


def test_compute_lambda_V_matches_loops():
    rng = np.random.default_rng(8)
    a = rng.standard_normal((3, 4, 5))
    factors = _random_state(a.shape, 3, 1, 2)
    state = SweepState(factors, 1, np.zeros(3))
    for i in range(3):
        lam, v = compute_lambda_V(a, state, i)
        for j in range(3):
            col = loop_A_tau_i(a, [f[:, j] for f in factors], i)
            np.testing.assert_allclose(v[:, j], col, atol=1e-13)
            assert lam[j] == pytest.approx(col @ factors[i][:, j], abs=1e-13)


def test_polar_update_fixed_point_at_truth():
    inst = plant((5, 5, 5), 3, 2, (3.0, 2.0, 1.0), seed=1)
    state = _state(inst)
    for i in range(2):
        u, prox, s_mat = polar_update(inst.tensor, state, i, 1e-3)
        assert not prox
        np.testing.assert_allclose(u, inst.true_factors[i], atol=1e-10)
        np.testing.assert_allclose(u @ s_mat, compute_lambda_V(inst.tensor, state, i)[1]
                                   * compute_lambda_V(inst.tensor, state, i)[0], atol=1e-12)


def test_polar_update_zero_target_keeps_previous():
    prev = random_orthonormal(4, 2, 3)
    state = SweepState([prev, np.eye(3)[:, :2]], 1, np.zeros(2))
    u, prox, _ = polar_update(np.zeros((4, 3)), state, 0, 0.1)
    assert prox
    np.testing.assert_allclose(u, prev, atol=1e-14)


def test_polar_update_rejects_unit_column_mode():
    inst = plant((3, 3, 3), 2, 1, (2.0, 1.0), seed=0)
    with pytest.raises(ValueError):
        polar_update(inst.tensor, _state(inst), 1, 1e-3)


def test_truncate():
    factors = [np.eye(3), np.eye(3)]
    state = SweepState(factors, 1, np.array([2.0, -0.8, 1.0]))
    same, removed = truncate(state, 0.5)
    assert same is state and removed == ()
    state2, removed = truncate(SweepState(factors, 1, np.array([2.0, -0.01, 0.2])), 0.5)
    assert removed == (1, 2)
    np.testing.assert_array_equal(state2.factors[0], np.eye(3)[:, [0]])
    np.testing.assert_array_equal(state2.lambdas, [2.0])
    with pytest.raises(InvariantError):
        truncate(SweepState(factors, 1, np.full(3, 0.1)), 0.5)


def test_truncation_removes_tiny_planted_component():
    inst = plant((5, 5, 5), 3, 1, (3.0, 2.0, 0.05), seed=2)
    state = _state(inst)
    kappa = 0.5
    new_state, record = sweep(inst.tensor, state, 1e-3, kappa)
    assert record.truncated_indices == (2,)
    assert record.active_rank == 2
    assert record.truncation_loss == pytest.approx(0.05**2, rel=1e-8)
    assert record.objective_f >= objective_f(inst.tensor, inst.true_factors) - kappa**2


def test_als_update_fixed_point_and_rank_one():
    inst = plant((4, 4, 4), 2, 1, (2.0, 1.0), seed=3)
    state = _state(inst)
    for i in (1, 2):
        u, lam, deg = als_update(inst.tensor, state, i)
        np.testing.assert_allclose(u, inst.true_factors[i], atol=1e-12)
        np.testing.assert_allclose(lam, inst.true_sigmas, atol=1e-12)
        assert not deg.any()

    one = plant((3, 4, 5), 1, 1, (2.0,), seed=5)
    start = [f[:, None] for f in (np.ones(3) / np.sqrt(3), np.ones(4) / 2, np.ones(5) / np.sqrt(5))]
    st = SweepState(start, 1, lambdas_of(one.tensor, start))
    u, lam, _ = als_update(one.tensor, st, 2)
    truth = one.true_factors[2][:, 0]
    assert abs(u[:, 0] @ truth) == pytest.approx(1.0, abs=1e-14)


def test_als_update_sign_flip_keeps_chain_monotone():
    inst = plant((4, 4, 4), 2, 1, (2.0, 1.0), seed=6)
    factors = _random_state(inst.tensor.shape, 2, 1, 11)
    lam = lambdas_of(inst.tensor, factors)
    neg = lam < 0
    if not neg.any():  # force a negative coefficient
        factors[2][:, 0] *= -1
        lam = lambdas_of(inst.tensor, factors)
    state = SweepState(factors, 1, lam)
    for i in (1, 2):
        prev = compute_lambda_V(inst.tensor, state, i)[0]
        u, lam_new, _ = als_update(inst.tensor, state, i)
        assert np.all(np.sign(lam_new) == np.where(prev < 0, -1.0, 1.0))
        assert np.all(np.abs(lam_new) >= np.abs(prev) - 1e-14)
        state.factors[i] = u
        state.lambdas = lam_new


def test_als_update_degenerate_column():
    a = np.zeros((2, 2, 2))
    a[0, 0, 0] = 1.0
    factors = [np.eye(2), np.eye(2), np.eye(2)]
    state = SweepState(factors, 1, lambdas_of(a, factors))
    u, lam, deg = als_update(a, state, 2)
    assert deg.tolist() == [False, True]
    np.testing.assert_array_equal(u[:, 1], [0.0, 1.0])
    assert lam[1] == 0.0 and lam[0] == 1.0


# -- full sweeps ------------------------------------------------------------------

def test_sweep_fixed_point():
    inst = plant((5, 4, 6), 3, 2, (3.0, 2.0, 1.0), seed=9)
    state = _state(inst)
    new, rec = sweep(inst.tensor, state, 1e-3, 0.1)
    assert rec.step_norm <= 1e-10
    assert rec.objective_f == pytest.approx(14.0, abs=1e-10)
    assert not rec.truncated and rec.proximal_modes == ()


def test_sweep_sufficient_increase_on_random_instance():
    a = np.random.default_rng(12).standard_normal((4, 5, 3))
    state, kappa = initialize(a, 2, 2, SolverConfig(seed=3))
    eps = 1e-3 * hs_norm(a)
    c = 0.5 * min(eps, 2 * kappa**2)
    for _ in range(30):
        f_prev = float(np.sum(state.lambdas**2))
        state, rec = sweep(a, state, eps, kappa)
        if not rec.truncated:
            assert rec.objective_f - f_prev >= c * rec.step_norm**2 - 1e-10 * hs_norm(a) ** 2
        else:
            assert rec.objective_f >= f_prev - len(rec.truncated_indices) * kappa**2


# -- initialization ---------------------------------------------------------------

def test_initialize_errors_and_determinism():
    with pytest.raises(ValueError, match="zero tensor"):
        initialize(np.zeros((3, 3, 3)), 1, 1)
    a = np.random.default_rng(1).standard_normal((3, 4, 2))
    with pytest.raises(ValueError):
        initialize(a, 4, 1)
    with pytest.raises(ValueError):
        initialize(a, 1, 4)
    s1, k1 = initialize(a, 2, 2, SolverConfig(seed=5))
    s2, k2 = initialize(a, 2, 2, SolverConfig(seed=5))
    assert k1 == k2
    for f1, f2 in zip(s1.factors, s2.factors):
        np.testing.assert_array_equal(f1, f2)
    assert FactorSet(tuple(s1.factors), 2).is_feasible(1e-12)
    with pytest.raises(ValueError):
        initialize(a, 2, 2, SolverConfig(seed=5, kappa=10 * k1))


def test_initialize_positive_objective_100_seeds():
    a = np.random.default_rng(4).standard_normal((4, 4, 4))
    for seed in range(100):
        state, kappa = initialize(a, 2, 2, SolverConfig(seed=seed))
        f0 = float(np.sum(state.lambdas**2))
        assert f0 > 0
        assert 0 < kappa < np.sqrt(f0 / 2)


# -- solve ------------------------------------------------------------------------

def test_solve_recovers_orthogonally_decomposable_tensor():
    inst = plant((6, 6, 6), 3, 3, (3.0, 2.0, 1.0), seed=21)
    best, _ = solve_multistart(inst.tensor, 3, 3, SolverConfig(seed=0), restarts=5)
    assert best.residual(inst.tensor) <= 1e-8 * hs_norm(inst.tensor)
    np.testing.assert_allclose(np.sort(np.abs(best.core.lambdas)), [1.0, 2.0, 3.0], atol=1e-8)


def test_solve_diag_best_rank_one():
    a = diag_k([3.0, 1.0], 3)
    values = []
    for seed in range(50):
        res = solve(a, 1, 3, SolverConfig(seed=seed))
        values.append(abs(res.core.lambdas[0]))
    best = max(values)
    assert best == pytest.approx(3.0, abs=1e-8)
    res = solve(a, 1, 3, SolverConfig(seed=int(np.argmax(values))))
    assert res.residual(a) == pytest.approx(1.0, abs=1e-8)


def test_solve_full_rank_planted():
    inst = plant((3, 3, 3), 3, 1, (3.0, 2.0, 1.0), seed=2)
    best, _ = solve_multistart(inst.tensor, 3, 1, SolverConfig(seed=1), restarts=5)
    assert best.residual(inst.tensor) <= 1e-8 * hs_norm(inst.tensor)
    assert factor_match_score(best.factors, best.core, inst) >= 0.999


def test_solve_is_deterministic():
    a = np.random.default_rng(3).standard_normal((4, 3, 5))
    r1 = solve(a, 2, 1, SolverConfig(seed=8))
    r2 = solve(a, 2, 1, SolverConfig(seed=8))
    assert [x.objective_f for x in r1.records] == [x.objective_f for x in r2.records]
    for f1, f2 in zip(r1.factors.factors, r2.factors.factors):
        np.testing.assert_array_equal(f1, f2)


def test_solve_result_unpacks_and_records():
    a = np.random.default_rng(5).standard_normal((3, 3, 3))
    seen = []
    res = solve(a, 2, 1, SolverConfig(seed=0), callback=lambda st, rec: seen.append(rec.sweep))
    factors, core, records = res
    assert records[0].sweep == 0 and records[0].step_norm == 0.0
    assert seen == [rec.sweep for rec in records]
    assert res.status in ("converged", "cap")
    assert core.lambdas.size == factors.r_active
    assert res.objective_f == pytest.approx(records[-1].objective_f, rel=1e-12)


def test_solve_respects_sweep_cap():
    a = np.random.default_rng(6).standard_normal((5, 5, 5))
    res = solve(a, 2, 1, SolverConfig(seed=0, max_sweeps=3))
    assert res.status == "cap" and len(res.records) == 4


def test_solve_zero_tensor():
    with pytest.raises(ValueError, match="zero tensor"):
        solve(np.zeros((3, 3, 3)), 1, 1)


def test_multistart_is_independent_of_threads():
    a = np.random.default_rng(9).standard_normal((4, 4, 4))
    b1, runs1 = solve_multistart(a, 2, 1, SolverConfig(seed=4), restarts=4, max_workers=1)
    b2, runs2 = solve_multistart(a, 2, 1, SolverConfig(seed=4), restarts=4, max_workers=4)
    assert b1.metadata["restart_index"] == b2.metadata["restart_index"]
    assert [r.objective_f for r in runs1] == [r.objective_f for r in runs2]
    top = max(r.objective_f for r in runs1)
    assert b1.objective_f >= top - 1e-12 * hs_norm(a) ** 2
    first = min(m for m, r in enumerate(runs1) if r.objective_f >= top - 1e-12 * hs_norm(a) ** 2)
    assert b1.metadata["restart_index"] == first
    assert restart_seed(4, 0) == 4
    assert len({restart_seed(4, m) for m in range(50)}) == 50


def test_record_inner_trace_shapes():
    a = np.random.default_rng(2).standard_normal((3, 3, 4, 2))
    res = solve(a, 2, 2, SolverConfig(seed=0, record_inner=True, max_sweeps=5))
    for rec in res.records[1:]:
        tr = rec.inner_trace
        assert tr.lambdas.shape == (3, rec.active_rank)
        assert tr.column_step_sq.shape == (2, rec.active_rank)


@pytest.mark.parametrize("shape,r,s", list(itertools.product([(4, 4, 4), (3, 5, 4)], [1, 2], [1, 3])))
def test_iterates_stay_feasible(shape, r, s):
    a = np.random.default_rng(sum(shape) + r + s).standard_normal(shape)
    errors = []

    def cb(state, rec):
        errors.append(state.factor_set().feasibility_error())

    solve(a, r, s, SolverConfig(seed=1), callback=cb)
    assert max(errors) <= 1e-8
