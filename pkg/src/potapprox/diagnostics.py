"""Optimality residuals, gradients and runtime checks of the convergence
guarantees, plus empirical rate estimation from iteration logs."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from fractions import Fraction
from typing import Sequence

import numpy as np

from .solver import FactorSet, InnerTrace, IterationRecord, lambdas_of
from .tensor import DimensionError, columnwise_A_tau_i, hs_norm

EPS = np.finfo(float).eps


def _sym(m: np.ndarray) -> np.ndarray:
    return 0.5 * (m + m.T)


def _check_factors(a: np.ndarray, u: FactorSet) -> None:
    if a.ndim != u.k or tuple(a.shape) != u.dims:
        raise DimensionError(f"factors with dims {u.dims} do not match tensor {a.shape}")


@dataclass(frozen=True)
class KktResidual:
    """Residuals of the first-order optimality system at a feasible point.

    ``per_mode_stiefel[i]`` is ``||V_i L - U_i sym(U_i^T V_i L)||_F`` and
    ``per_mode_oblique`` holds ``||V_i L - U_i L^2||_F`` with
    ``L = diag(lambda(U))``.  ``normalized_total`` divides ``total`` by
    ``||A|| * max(1, ||lambda||)``.
    """

    per_mode_stiefel: tuple
    per_mode_oblique: tuple
    lambda_residual: float
    total: float
    normalized_total: float

    def to_dict(self) -> dict:
        return asdict(self)


def riemannian_grad_components(a, u: FactorSet, x):
    """Riemannian gradient of ``g(U, x) = 0.5 ||A - (U_1..U_k) . diag_k(x)||^2``.

    Returns
    -------
    grads : list of ndarray
        One ``n_i x r`` tangent matrix per mode.
    grad_x : ndarray
        ``x - lambda(U)``.
    """
    a = np.asarray(a, dtype=np.float64)
    x = np.asarray(x, dtype=np.float64).ravel()
    _check_factors(a, u)
    if x.size != u.r_active:
        raise DimensionError(f"x has {x.size} entries, factors have {u.r_active} columns")
    grads = []
    for i, ui in enumerate(u.factors):
        b = columnwise_A_tau_i(a, u.factors, i) * x
        if i < u.s:
            proj = np.eye(ui.shape[0]) - 0.5 * ui @ ui.T
            grads.append(-proj @ (b - ui @ b.T @ ui))
        else:
            grads.append(-(b - ui * np.einsum("ij,ij->j", ui, b)))
    return grads, x - lambdas_of(a, u)


def kkt_residual(a, u: FactorSet) -> KktResidual:
    """Residual of the KKT system with the multipliers reconstructed from ``U``.

    Stiefel modes use the symmetric multiplier ``sym(U_i^T V_i L)``; the
    unit-column modes use ``diag(L^2)``.  The coefficient residual is zero
    because the coefficients are taken as ``lambda(U)``.
    """
    a = np.asarray(a, dtype=np.float64)
    _check_factors(a, u)
    lam = lambdas_of(a, u)
    stiefel, oblique = [], []
    for i, ui in enumerate(u.factors):
        b = columnwise_A_tau_i(a, u.factors, i) * lam
        if i < u.s:
            stiefel.append(float(np.linalg.norm(b - ui @ _sym(ui.T @ b))))
        else:
            oblique.append(float(np.linalg.norm(b - ui * lam**2)))
    total = math.sqrt(sum(v * v for v in stiefel + oblique))
    scale = hs_norm(a) * max(1.0, float(np.linalg.norm(lam)))
    return KktResidual(
        per_mode_stiefel=tuple(stiefel),
        per_mode_oblique=tuple(oblique),
        lambda_residual=0.0,
        total=total,
        normalized_total=total / scale if scale > 0 else total,
    )


def symmetry_defect(a, u: FactorSet) -> float:
    """Largest ``||U_i^T V_i L - (V_i L)^T U_i||_F`` over orthonormal modes."""
    a = np.asarray(a, dtype=np.float64)
    lam = lambdas_of(a, u)
    worst = 0.0
    for i in range(u.s):
        m = u.factors[i].T @ (columnwise_A_tau_i(a, u.factors, i) * lam)
        worst = max(worst, float(np.linalg.norm(m - m.T)))
    return worst


@dataclass
class SweepCheck:
    sweep: int
    status: str  # "pass", "fail" or "exempt"
    margin: float


@dataclass
class Report:
    """Outcome of one runtime check; ``passed`` is the overall verdict."""

    name: str
    passed: bool
    details: dict = field(default_factory=dict)
    sweeps: list = field(default_factory=list)

    @property
    def failures(self) -> list:
        return [c for c in self.sweeps if c.status == "fail"]

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "passed": self.passed,
            "details": self.details,
            "failed_sweeps": [c.sweep for c in self.failures],
            "exempt_sweeps": [c.sweep for c in self.sweeps if c.status == "exempt"],
        }


def sufficient_increase_constant(epsilon: float, kappa: float) -> float:
    return 0.5 * min(epsilon, 2.0 * kappa**2)


def assert_sufficient_increase(records: Sequence[IterationRecord], epsilon: float,
                               kappa: float, tensor_norm: float = 1.0,
                               slack: float = 1e-10) -> Report:
    """Check ``f_p - f_{p-1} >= c ||U_p - U_{p-1}||^2`` for non-truncation sweeps.

    ``c = min(epsilon, 2 kappa^2) / 2``; a violation smaller than
    ``slack * tensor_norm**2`` is tolerated.  Truncation sweeps are exempt.
    """
    c = sufficient_increase_constant(epsilon, kappa)
    tol = slack * tensor_norm**2
    checks = []
    for prev, cur in zip(records, records[1:]):
        if cur.truncated:
            checks.append(SweepCheck(cur.sweep, "exempt", 0.0))
            continue
        margin = (cur.objective_f - prev.objective_f) - c * cur.step_norm**2
        checks.append(SweepCheck(cur.sweep, "pass" if margin >= -tol else "fail", margin))
    passed = all(ch.status != "fail" for ch in checks)
    return Report("sufficient_increase", passed, {"constant": c, "tolerance": tol}, checks)


def assert_monotone_after_truncation(records: Sequence[IterationRecord],
                                     tensor_norm: float = 1.0,
                                     slack: float = 64 * EPS) -> Report:
    """``f`` must be nondecreasing after the last truncation sweep.

    ``slack * tensor_norm**2`` absorbs rounding in the objective.
    """
    last = max((rec.sweep for rec in records if rec.truncated), default=0)
    tol = slack * tensor_norm**2
    checks = []
    for prev, cur in zip(records, records[1:]):
        if cur.sweep <= last:
            checks.append(SweepCheck(cur.sweep, "exempt", 0.0))
            continue
        margin = cur.objective_f - prev.objective_f
        checks.append(SweepCheck(cur.sweep, "pass" if margin >= -tol else "fail", margin))
    passed = all(ch.status != "fail" for ch in checks)
    return Report("monotone_after_truncation", passed,
                  {"last_truncation_sweep": last, "tolerance": tol}, checks)


def assert_truncation_budget(records: Sequence[IterationRecord], initial_r: int,
                             kappa: float, slack: float = 1e-10) -> Report:
    """At most ``initial_r`` truncations, each costing at most ``kappa**2``.

    Checks the recorded truncation losses and, independently, that every
    truncation sweep lowers ``f`` by at most ``|J_p| kappa^2``.
    """
    count = sum(len(rec.truncated_indices) for rec in records)
    loss = sum(rec.truncation_loss for rec in records)
    checks = []
    drop_total = 0.0
    for prev, cur in zip(records, records[1:]):
        if not cur.truncated:
            continue
        drop = prev.objective_f - cur.objective_f
        drop_total += max(drop, 0.0)
        bound = len(cur.truncated_indices) * kappa**2
        checks.append(SweepCheck(cur.sweep, "pass" if drop <= bound + slack else "fail",
                                 bound - drop))
    budget = initial_r * kappa**2 + slack
    passed = (count <= initial_r and loss <= budget and drop_total <= budget
              and all(ch.status == "pass" for ch in checks))
    details = {
        "truncations": count,
        "initial_r": initial_r,
        "truncation_loss": loss,
        "objective_drop": drop_total,
        "budget": budget,
    }
    return Report("truncation_budget", passed, details, checks)


def assert_lambda_chain(inner_trace: Sequence[InnerTrace], mono_tol: float = 1e-12,
                        identity_tol: float = 1e-10) -> Report:
    """Monotone, sign-coherent coefficient chain over the unit-column modes.

    For consecutive chain values ``l0 -> l1`` of one component, checks
    ``sgn(l1) == sgn(l0)``, ``|l1| >= |l0| - mono_tol`` and
    ``l1 - l0 == sgn(l0) |l1| / 2 * ||u_new - u_old||^2`` within
    ``identity_tol``.
    """
    checks = []
    worst_identity = 0.0
    for tr in inner_trace:
        lam = np.asarray(tr.lambdas, dtype=np.float64)
        steps = np.asarray(tr.column_step_sq, dtype=np.float64)
        ok = True
        margin = math.inf
        for t in range(lam.shape[0] - 1):
            l0, l1 = lam[t], lam[t + 1]
            live = l0 != 0.0
            sgn0 = np.where(l0 < 0, -1.0, 1.0)
            sgn1 = np.where(l1 < 0, -1.0, 1.0)
            if np.any((sgn0 != sgn1) & live & (l1 != 0.0)):
                ok = False
            growth = np.abs(l1) - np.abs(l0)
            if growth.size:
                margin = min(margin, float(growth.min()))
            if np.any(growth < -mono_tol):
                ok = False
            if t < steps.shape[0]:
                dev = np.abs((l1 - l0) - sgn0 * np.abs(l1) / 2.0 * steps[t])
                if dev.size:
                    worst_identity = max(worst_identity, float(dev.max()))
                if np.any(dev > identity_tol):
                    ok = False
        checks.append(SweepCheck(tr.sweep, "pass" if ok else "fail",
                                 0.0 if margin == math.inf else margin))
    passed = all(ch.status == "pass" for ch in checks)
    return Report("lambda_chain", passed, {"max_identity_deviation": worst_identity}, checks)


def subdiff_bound_constant(a, r: int, k: int, epsilon: float) -> float:
    """``2 sqrt(k) (2 r sqrt(k) ||A||^2 + epsilon)``.

    ``a`` may be the tensor itself or its norm given as a scalar.
    """
    arr = np.asarray(a, dtype=np.float64)
    norm = float(abs(arr)) if arr.ndim == 0 else hs_norm(arr)
    return 2.0 * math.sqrt(k) * (2.0 * r * math.sqrt(k) * norm**2 + epsilon)


def subgradient_witness_norm(a, u_prev: FactorSet, u_next: FactorSet,
                             proximal_modes: Sequence[int], epsilon: float) -> float:
    """Norm of the subgradient of ``-f + indicators`` assembled at ``u_next``.

    Replays the sweep ``u_prev -> u_next`` (which must not have truncated)
    and builds the witness from the intermediate polar targets and ALS
    contractions.  It is bounded by
    ``subdiff_bound_constant * ||u_next - u_prev||``.
    """
    a = np.asarray(a, dtype=np.float64)
    if u_prev.r_active != u_next.r_active:
        raise DimensionError("sweep changed the number of components")
    s = u_next.s
    lam_final = lambdas_of(a, u_next)
    cur = list(u_prev.factors)
    total = 0.0
    for i in range(u_next.k):
        v_mid = columnwise_A_tau_i(a, cur, i)
        if i < s:
            lam_mid = np.einsum("ij,ij->j", v_mid, u_prev.factors[i])
            target = v_mid * lam_mid
            if i in proximal_modes:
                target = target + epsilon * (u_prev.factors[i] - u_next.factors[i])
        else:
            lam_mid = np.einsum("ij,ij->j", v_mid, u_next.factors[i])
            target = v_mid * lam_mid
        cur[i] = u_next.factors[i]
        v_final = columnwise_A_tau_i(a, u_next.factors, i) * lam_final
        total += float(np.sum((target - v_final) ** 2))
    return 2.0 * math.sqrt(total)


def lojasiewicz_variable_count(n_dims: Sequence[int], r: int, s: int) -> int:
    """Number of variables ``(1 + n_1 + ... + n_s) r + s r (r + 1) / 2``."""
    return (1 + sum(n_dims[:s])) * r + s * r * (r + 1) // 2


def lojasiewicz_exponent_from_count(k: int, n_vars: int, exact: bool = False):
    """``1 - 1 / (2k (6k - 3)^(N - 1))`` for ``N = n_vars`` variables."""
    zeta = 1 - Fraction(1, 2 * k * (6 * k - 3) ** (n_vars - 1))
    return zeta if exact else float(zeta)


def lojasiewicz_exponent(k: int, n_dims: Sequence[int], r: int, s: int,
                         exact: bool = False):
    """Lojasiewicz exponent of the Lagrangian, governing the sublinear rate.

    With ``exact=True`` a :class:`fractions.Fraction` is returned; the float
    value rounds to 1.0 once the variable count is moderately large.
    """
    if len(n_dims) != k:
        raise DimensionError(f"need {k} dimensions, got {len(n_dims)}")
    return lojasiewicz_exponent_from_count(k, lojasiewicz_variable_count(n_dims, r, s), exact)


@dataclass(frozen=True)
class RateEstimate:
    """Least-squares fit of the objective gap over the tail of a run.

    ``model`` is ``"linear"`` (gap ~ C q^p, ``linear_factor = q``),
    ``"sublinear"`` (gap ~ C p^e, ``sublinear_exponent = e``) or
    ``"undecided"`` when neither fit reaches the R^2 threshold.
    """

    model: str
    linear_factor: float | None
    sublinear_exponent: float | None
    fit_r2: float
    tail_start: int
    n_points: int
    linear_r2: float
    sublinear_r2: float
    f_star: float

    def to_dict(self) -> dict:
        return asdict(self)


def _fit(x: np.ndarray, y: np.ndarray):
    slope, intercept = np.polyfit(x, y, 1)
    resid = y - (slope * x + intercept)
    ss_tot = float(np.sum((y - y.mean()) ** 2))
    ss_res = float(np.sum(resid**2))
    r2 = 1.0 - ss_res / ss_tot if ss_tot > 0 else (1.0 if ss_res == 0 else 0.0)
    return float(slope), min(max(r2, 0.0), 1.0)


def estimate_rate(records: Sequence[IterationRecord], f_star_hint: float | None = None,
                  *, tensor_norm: float | None = None, tail_fraction: float = 0.5,
                  min_points: int = 10, r2_threshold: float = 0.9,
                  min_records: int = 20) -> RateEstimate:
    """Classify the convergence of ``f_star - f_p`` as linear or sublinear.

    Only sweeps after the last truncation are used.  Sweeps whose gap is
    below ``1e3 * eps * tensor_norm**2`` are discarded as rounding noise;
    the fit uses the last ``tail_fraction`` of the remaining sweeps (at
    least ``min_points``).  ``log(gap)`` is regressed on ``p`` (linear
    model) and on ``log p`` (sublinear model); the better fit wins.

    Raises
    ------
    ValueError
        If fewer than ``min_records`` sweeps follow the last truncation.
    """
    last = max((rec.sweep for rec in records if rec.truncated), default=0)
    post = [rec for rec in records if rec.sweep > last and rec.sweep >= 1]
    if len(post) < min_records:
        raise ValueError(f"need at least {min_records} post-truncation sweeps, got {len(post)}")
    p = np.array([rec.sweep for rec in post], dtype=np.float64)
    f = np.array([rec.objective_f for rec in post], dtype=np.float64)
    scale_sq = tensor_norm**2 if tensor_norm is not None else max(float(np.max(np.abs(f))), 1e-300)
    if f_star_hint is None:
        f_star = float(np.max(f)) + EPS * scale_sq
    else:
        f_star = float(f_star_hint)
    gap = f_star - f
    valid = gap > 1e3 * EPS * scale_sq
    p, gap = p[valid], gap[valid]
    n_tail = max(min_points, math.ceil(tail_fraction * p.size))
    p, gap = p[-n_tail:], gap[-n_tail:]
    if p.size < 3:
        return RateEstimate("undecided", None, None, 0.0, int(p[0]) if p.size else -1,
                            int(p.size), 0.0, 0.0, f_star)

    y = np.log(gap)
    lin_slope, lin_r2 = _fit(p, y)
    sub_slope, sub_r2 = _fit(np.log(p), y)
    factor = math.exp(lin_slope)
    lin_ok = lin_r2 >= r2_threshold and 0.0 < factor < 1.0
    sub_ok = sub_r2 >= r2_threshold
    if lin_ok and (not sub_ok or lin_r2 >= sub_r2):
        model, r2 = "linear", lin_r2
    elif sub_ok:
        model, r2 = "sublinear", sub_r2
    else:
        model, r2 = "undecided", max(lin_r2, sub_r2)
    return RateEstimate(
        model=model,
        linear_factor=factor if model == "linear" else None,
        sublinear_exponent=sub_slope if model == "sublinear" else None,
        fit_r2=r2,
        tail_start=int(p[0]),
        n_points=int(p.size),
        linear_r2=lin_r2,
        sublinear_r2=sub_r2,
        f_star=f_star,
    )
