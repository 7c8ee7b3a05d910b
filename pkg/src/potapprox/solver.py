"""Alternating polar decompositions with ALS for partially orthogonal
low-rank tensor approximation.

The first ``s`` factor matrices have orthonormal columns and are updated by
polar decompositions (with a proximal correction when the polar target is
ill conditioned).  The remaining factors have unit columns and are updated
by normalised alternating least squares.  Components whose coefficient
drops below the truncation parameter ``kappa`` are removed.

Typical use::

    result = solve(a, r=3, s=2, config=SolverConfig(seed=1))
    factors, core, records = result
"""

from __future__ import annotations

import math
import time
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Callable, Sequence

import numpy as np

from .linalg import polar, random_orthonormal, svd
from .tensor import (
    DimensionError,
    as_tensor,
    columnwise_A_tau,
    columnwise_A_tau_i,
    diag_k,
    hs_norm,
    mat_tensor_product,
)

MAX_INIT_RETRIES = 16
FEASIBILITY_TOL = 1e-8


class InitializationError(RuntimeError):
    """No initial point with a positive objective was found."""


class InvariantError(RuntimeError):
    """An internal invariant of the iteration was violated."""


def _sign(x: np.ndarray) -> np.ndarray:
    # sgn(0) = +1
    return np.where(x < 0, -1.0, 1.0)


@dataclass(frozen=True)
class FactorSet:
    """Factor matrices ``U^(1), ..., U^(k)``; the first ``s`` are orthonormal."""

    factors: tuple
    s: int

    def __post_init__(self):
        mats = tuple(np.array(f, dtype=np.float64, ndmin=2) for f in self.factors)
        if not mats:
            raise ValueError("need at least one factor")
        if len({f.shape[1] for f in mats}) != 1:
            raise DimensionError("all factors must have the same number of columns")
        if not 0 <= self.s <= len(mats):
            raise ValueError(f"s={self.s} out of range for k={len(mats)}")
        object.__setattr__(self, "factors", mats)

    @property
    def k(self) -> int:
        return len(self.factors)

    @property
    def r_active(self) -> int:
        return self.factors[0].shape[1]

    @property
    def dims(self) -> tuple:
        return tuple(f.shape[0] for f in self.factors)

    def __getitem__(self, i: int) -> np.ndarray:
        return self.factors[i]

    def feasibility_error(self) -> float:
        """Largest deviation from the Stiefel / unit-column constraints."""
        err = 0.0
        eye = np.eye(self.r_active)
        for i, f in enumerate(self.factors):
            if i < self.s:
                err = max(err, float(np.max(np.abs(f.T @ f - eye))))
            else:
                err = max(err, float(np.max(np.abs(np.linalg.norm(f, axis=0) - 1.0))))
        return err

    def is_feasible(self, tol: float = FEASIBILITY_TOL) -> bool:
        return self.feasibility_error() <= tol

    def select(self, columns) -> "FactorSet":
        return FactorSet(tuple(f[:, columns] for f in self.factors), self.s)


@dataclass(frozen=True)
class DiagonalCore:
    """Coefficients ``lambda_1, ..., lambda_r`` of the diagonal core."""

    lambdas: np.ndarray

    def __post_init__(self):
        lam = np.asarray(self.lambdas, dtype=np.float64).ravel()
        if not np.all(np.isfinite(lam)):
            raise ValueError("core entries must be finite")
        object.__setattr__(self, "lambdas", lam)

    def tensor(self, k: int) -> np.ndarray:
        return diag_k(self.lambdas, k)


@dataclass(frozen=True)
class SolverConfig:
    """Solver parameters.

    ``epsilon``, ``kappa`` and ``stop_tol`` default to ``None`` which means
    ``1e-3 * ||A||``, ``kappa_factor * sqrt(f(U0) / r)`` and
    ``1e-10 * sqrt(sum(n_i) * r)`` respectively.
    """

    epsilon: float | None = None
    kappa: float | None = None
    max_sweeps: int = 10000
    stop_tol: float | None = None
    seed: int = 0
    record_inner: bool = False
    kappa_factor: float = 0.5

    def __post_init__(self):
        if self.epsilon is not None and not self.epsilon > 0:
            raise ValueError("epsilon must be positive")
        if self.kappa is not None and not self.kappa > 0:
            raise ValueError("kappa must be positive")
        if self.stop_tol is not None and not self.stop_tol > 0:
            raise ValueError("stop_tol must be positive")
        if not 0 < self.kappa_factor < 1:
            raise ValueError("kappa_factor must lie in (0, 1)")
        if self.max_sweeps < 1:
            raise ValueError("max_sweeps must be a positive integer")


@dataclass
class SweepState:
    """Iterate ``U_[p]`` together with the running coefficient chain.

    ``lambdas`` holds the most recently computed chain values; between sweeps
    these are ``lambda_j(U_[p])``, the starting values of the next sweep.
    """

    factors: list
    s: int
    lambdas: np.ndarray
    sweep: int = 0

    @property
    def r_active(self) -> int:
        return self.factors[0].shape[1]

    def factor_set(self) -> FactorSet:
        return FactorSet(tuple(self.factors), self.s)


@dataclass(frozen=True)
class InnerTrace:
    """Coefficient chain inside one sweep, after truncation.

    Row ``t`` of ``lambdas`` is the chain value after updating mode
    ``s + t`` (row 0 is the value after the last orthonormal mode), and row
    ``t`` of ``column_step_sq`` holds ``||u_new - u_old||^2`` per column for
    the ALS update of mode ``s + t + 1``.
    """

    sweep: int
    s: int
    lambdas: np.ndarray
    column_step_sq: np.ndarray


@dataclass
class IterationRecord:
    sweep: int
    objective_f: float
    step_norm: float
    active_rank: int
    truncated_indices: tuple = ()
    proximal_modes: tuple = ()
    truncation_loss: float = 0.0
    degenerate_columns: tuple = ()
    kkt_residual: float | None = None
    wall_time_ms: float = 0.0
    inner_trace: InnerTrace | None = None

    @property
    def truncated(self) -> bool:
        return len(self.truncated_indices) > 0


@dataclass
class SolveResult:
    """Outcome of :func:`solve`.  Unpacks as ``(factors, core, records)``."""

    factors: FactorSet
    core: DiagonalCore
    records: list
    status: str
    epsilon: float
    kappa: float
    stop_tol: float
    initial_r: int
    f0: float
    tensor_norm: float
    seed: int = 0
    metadata: dict = field(default_factory=dict)

    def __iter__(self):
        return iter((self.factors, self.core, self.records))

    @property
    def objective_f(self) -> float:
        return float(np.sum(self.core.lambdas**2))

    @property
    def last_truncation_sweep(self) -> int:
        """Index of the last sweep that removed a component (0 if none)."""
        return max((rec.sweep for rec in self.records if rec.truncated), default=0)

    def reconstruction(self) -> np.ndarray:
        return reconstruct(self.factors, self.core)

    def residual(self, a) -> float:
        return hs_norm(np.asarray(a) - self.reconstruction())


def lambdas_of(a, u: FactorSet | Sequence[np.ndarray]) -> np.ndarray:
    """``lambda_j(U) = <A, u^(1)_j (x) ... (x) u^(k)_j>`` for every column."""
    factors = u.factors if isinstance(u, FactorSet) else tuple(u)
    return columnwise_A_tau(np.asarray(a, dtype=np.float64), factors)


def objective_f(a, u: FactorSet | Sequence[np.ndarray]) -> float:
    """Sum of squared coefficients ``sum_j lambda_j(U)^2``."""
    return float(np.sum(lambdas_of(a, u) ** 2))


def reconstruct(u: FactorSet, core: DiagonalCore) -> np.ndarray:
    """``(U^(1), ..., U^(k)) . diag_k(lambda)``."""
    if core.lambdas.size != u.r_active:
        raise DimensionError(
            f"core has {core.lambdas.size} entries, factors have {u.r_active} columns"
        )
    return mat_tensor_product(u.factors, core.tensor(u.k))


def compute_lambda_V(a: np.ndarray, state: SweepState, i: int):
    """Coefficients and partial contractions for mode ``i`` of the sweep.

    Column ``j`` of ``V`` is ``A tau_i(x)`` where ``x`` takes the already
    updated columns for modes before ``i`` and the previous ones otherwise;
    the coefficient is ``<V[:, j], U^(i)[:, j]>``.

    Returns
    -------
    lambdas : ndarray, shape (r,)
        Diagonal of the coefficient matrix.
    V : ndarray, shape (n_i, r)
    """
    if not 0 <= i < len(state.factors):
        raise ValueError(f"invalid mode {i}")
    v = columnwise_A_tau_i(a, state.factors, i)
    lam = np.einsum("ij,ij->j", v, state.factors[i])
    return lam, v


def _polar_step(target: np.ndarray, previous: np.ndarray, epsilon: float):
    res = svd(target)
    if res.singular_values[-1] >= epsilon:
        u = res.u @ res.v.T
        s_factor = (res.v * res.singular_values) @ res.v.T
        return u, False, 0.5 * (s_factor + s_factor.T)
    pol = polar(target + epsilon * previous)
    return pol.orthonormal_factor, True, pol.psd_factor


def polar_update(a: np.ndarray, state: SweepState, i: int, epsilon: float):
    """Polar update of orthonormal mode ``i`` (0-based, ``i < s``).

    Returns ``(U_new, proximal_applied, S)`` where ``U_new S`` equals the
    polar target: ``V diag(lambda)``, or ``V diag(lambda) + epsilon U_prev``
    when the smallest singular value of the former is below ``epsilon``.
    """
    if i >= state.s:
        raise ValueError(f"mode {i} is not an orthonormal mode (s={state.s})")
    lam, v = compute_lambda_V(a, state, i)
    return _polar_step(v * lam, state.factors[i], epsilon)


def truncate(state: SweepState, kappa: float):
    """Drop every component whose current coefficient has magnitude below kappa.

    ``state.lambdas`` must hold the coefficients computed right after the last
    orthonormal mode.  Surviving columns keep their relative order.

    Returns
    -------
    state : SweepState
        New state without the removed columns.
    removed : tuple of int
        Indices (in the pre-truncation numbering) that were removed.
    """
    lam = np.asarray(state.lambdas)
    drop = np.abs(lam) < kappa
    removed = tuple(int(j) for j in np.flatnonzero(drop))
    if not removed:
        return state, removed
    if np.all(drop):
        raise InvariantError("truncation would remove every component")
    keep = ~drop
    new = SweepState(
        factors=[f[:, keep] for f in state.factors],
        s=state.s,
        lambdas=lam[keep],
        sweep=state.sweep,
    )
    return new, removed


def als_update(a: np.ndarray, state: SweepState, i: int):
    """Normalised least-squares update of unit-column mode ``i`` (``i >= s``).

    ``u_j <- sgn(lambda_j) v_j / ||v_j||`` with ``v_j = A tau_i(x_j)``.  A
    column with ``v_j = 0`` is kept unchanged and gets coefficient 0.

    Returns
    -------
    U_new : ndarray
    lambdas : ndarray
        Updated coefficients ``sgn(lambda_j) ||v_j||``.
    degenerate : ndarray of bool
        Columns for which ``v_j`` vanished.
    """
    if i < state.s:
        raise ValueError(f"mode {i} is an orthonormal mode (s={state.s})")
    lam_prev, v = compute_lambda_V(a, state, i)
    norms = np.linalg.norm(v, axis=0)
    degenerate = norms == 0.0
    sign = _sign(lam_prev)
    safe = np.where(degenerate, 1.0, norms)
    u_new = v * (sign / safe)
    u_new[:, degenerate] = state.factors[i][:, degenerate]
    lam_new = np.where(degenerate, 0.0, sign * norms)
    return u_new, lam_new, degenerate


def sweep(a: np.ndarray, state: SweepState, epsilon: float, kappa: float,
          record_inner: bool = False):
    """One full pass over all modes.

    Orthonormal modes are updated first, then the truncation test runs once
    on the coefficients after the last orthonormal mode, then the unit-column
    modes are updated.  ``state`` is not modified.

    Returns
    -------
    state : SweepState
    record : IterationRecord
    """
    t0 = time.perf_counter()
    k = len(state.factors)
    s = state.s
    previous = list(state.factors)
    work = SweepState(list(state.factors), s, np.asarray(state.lambdas), state.sweep)

    proximal = []
    for i in range(s):
        lam, v = compute_lambda_V(a, work, i)
        u_new, prox, _ = _polar_step(v * lam, work.factors[i], epsilon)
        work.factors[i] = u_new
        work.lambdas = np.einsum("ij,ij->j", v, u_new)
        if prox:
            proximal.append(i)

    lam_s = work.lambdas
    work, removed = truncate(work, kappa)
    loss = float(np.sum(lam_s[list(removed)] ** 2)) if removed else 0.0
    if removed:
        keep = np.setdiff1d(np.arange(lam_s.size), removed)
        previous = [f[:, keep] for f in previous]

    chain = [work.lambdas.copy()]
    steps_sq = []
    degenerate = np.zeros(work.r_active, dtype=bool)
    for i in range(s, k):
        u_new, lam_new, deg = als_update(a, work, i)
        if record_inner:
            steps_sq.append(np.sum((u_new - work.factors[i]) ** 2, axis=0))
        work.factors[i] = u_new
        work.lambdas = lam_new
        degenerate |= deg
        chain.append(lam_new.copy())

    step = math.sqrt(sum(float(np.sum((u - p) ** 2)) for u, p in zip(work.factors, previous)))
    work.sweep = state.sweep + 1
    trace = None
    if record_inner:
        r = work.r_active
        trace = InnerTrace(
            sweep=work.sweep,
            s=s,
            lambdas=np.array(chain).reshape(len(chain), r),
            column_step_sq=np.array(steps_sq).reshape(len(steps_sq), r),
        )
    record = IterationRecord(
        sweep=work.sweep,
        objective_f=float(np.sum(work.lambdas**2)),
        step_norm=step,
        active_rank=work.r_active,
        truncated_indices=removed,
        proximal_modes=tuple(proximal),
        truncation_loss=loss,
        degenerate_columns=tuple(int(j) for j in np.flatnonzero(degenerate)),
        wall_time_ms=1e3 * (time.perf_counter() - t0),
        inner_trace=trace,
    )
    return work, record


INIT_STREAM = 0x1A17
RESTART_STREAM = 0x5E57
TIE_TOL = 1e-12


def _rng_seed(seed: int, *extra: int) -> list:
    return [int(seed) & 0xFFFFFFFFFFFFFFFF, INIT_STREAM, *extra]


def default_epsilon(a) -> float:
    return 1e-3 * hs_norm(a)


def default_stop_tol(dims: Sequence[int], r: int) -> float:
    return 1e-10 * math.sqrt(sum(dims) * r)


def initialize(a, r: int, s: int, config: SolverConfig | None = None):
    """Random feasible starting point with positive objective.

    Orthonormal modes come from :func:`random_orthonormal`; the others are
    normalised Gaussian columns.  Up to 16 seeds derived from
    ``config.seed`` are tried.

    Returns
    -------
    state : SweepState
    kappa : float
        ``config.kappa`` if given, else ``config.kappa_factor * sqrt(f(U0) / r)``.
    """
    config = config or SolverConfig()
    a = as_tensor(a)
    k = a.ndim
    if hs_norm(a) == 0.0:
        raise ValueError("zero tensor: the objective vanishes for every start")
    if not 1 <= s <= k:
        raise ValueError(f"s must lie in [1, {k}], got {s}")
    if not 1 <= r <= min(a.shape[:s]):
        raise ValueError(f"r must lie in [1, {min(a.shape[:s])}], got {r}")

    for attempt in range(MAX_INIT_RETRIES):
        rng = np.random.default_rng(_rng_seed(config.seed, attempt))
        factors = []
        for i, n in enumerate(a.shape):
            if i < s:
                factors.append(random_orthonormal(n, r, rng))
            else:
                g = rng.standard_normal((n, r))
                factors.append(g / np.linalg.norm(g, axis=0))
        lam = columnwise_A_tau(a, factors)
        f0 = float(np.sum(lam**2))
        if f0 > 0.0:
            break
    else:
        raise InitializationError(f"no start with f > 0 after {MAX_INIT_RETRIES} tries")

    upper = math.sqrt(f0 / r)
    if config.kappa is None:
        kappa = config.kappa_factor * upper
    elif config.kappa < upper:
        kappa = config.kappa
    else:
        raise ValueError(f"kappa must lie in (0, {upper:.6g}) for this start")
    return SweepState(factors=factors, s=s, lambdas=lam, sweep=0), kappa


def solve(a, r: int, s: int, config: SolverConfig | None = None,
          callback: Callable | None = None) -> SolveResult:
    """Run sweeps until the step norm drops below ``stop_tol`` or the cap.

    Parameters
    ----------
    a : array_like
        Nonzero order-k tensor.
    r : int
        Number of components, at most ``min(n_1, ..., n_s)``.
    s : int
        Number of leading modes with orthonormal factors, ``1 <= s <= k``.
    config : SolverConfig, optional
    callback : callable, optional
        Called as ``callback(state, record)`` after every sweep (and once for
        the initial point with sweep 0).  It may fill ``record.kkt_residual``.

    Returns
    -------
    SolveResult
        ``status`` is ``"converged"`` or ``"cap"``; ``records[0]`` describes
        the starting point.
    """
    config = config or SolverConfig()
    a = as_tensor(a)
    norm = hs_norm(a)
    state, kappa = initialize(a, r, s, config)
    epsilon = config.epsilon if config.epsilon is not None else default_epsilon(a)
    stop_tol = config.stop_tol if config.stop_tol is not None else default_stop_tol(a.shape, r)

    f0 = float(np.sum(state.lambdas**2))
    records = [IterationRecord(sweep=0, objective_f=f0, step_norm=0.0, active_rank=r)]
    if callback is not None:
        callback(state, records[0])

    status = "cap"
    for _ in range(config.max_sweeps):
        state, record = sweep(a, state, epsilon, kappa, config.record_inner)
        if callback is not None:
            callback(state, record)
        records.append(record)
        if record.step_norm <= stop_tol:
            status = "converged"
            break

    factors = state.factor_set()
    core = DiagonalCore(lambdas_of(a, factors))
    return SolveResult(
        factors=factors,
        core=core,
        records=records,
        status=status,
        epsilon=float(epsilon),
        kappa=float(kappa),
        stop_tol=float(stop_tol),
        initial_r=r,
        f0=f0,
        tensor_norm=norm,
        seed=config.seed,
    )


def with_seed(config: SolverConfig, seed: int) -> SolverConfig:
    return replace(config, seed=seed)


def restart_seed(seed: int, index: int) -> int:
    """Seed of restart ``index``; restart 0 keeps ``seed`` itself."""
    if index == 0:
        return int(seed)
    ss = np.random.SeedSequence([int(seed) & 0xFFFFFFFFFFFFFFFF, RESTART_STREAM, int(index)])
    return int(ss.generate_state(1, np.uint32)[0])


def default_workers() -> int:
    """Worker threads for independent solves, capped by ``POTAPPROX_THREADS``."""
    cap = os.environ.get("POTAPPROX_THREADS")
    n = os.cpu_count() or 1
    if cap:
        try:
            n = min(n, max(1, int(cap)))
        except ValueError:
            pass
    return n


def solve_multistart(a, r: int, s: int, config: SolverConfig | None = None,
                     restarts: int = 1, callback: Callable | None = None,
                     max_workers: int | None = None):
    """Run ``restarts`` independently seeded solves and keep the best objective.

    Restart ``m`` uses ``restart_seed(config.seed, m)``.  Runs may execute
    in worker threads.  The winner is the lowest-index run whose final ``f``
    is within ``1e-12 ||A||^2`` of the largest, so rounding-level differences
    do not decide and the outcome does not depend on scheduling.
    ``callback`` is shared between runs and must be thread safe.

    Returns
    -------
    best : SolveResult
        ``metadata`` holds ``restart_index`` and a per-run ``restarts`` summary.
    runs : list of SolveResult
        All runs in restart order.
    """
    if restarts < 1:
        raise ValueError("restarts must be a positive integer")
    config = config or SolverConfig()
    a = as_tensor(a)
    configs = [with_seed(config, restart_seed(config.seed, m)) for m in range(restarts)]
    workers = min(restarts, max_workers or default_workers())
    if workers <= 1:
        runs = [solve(a, r, s, c, callback) for c in configs]
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            runs = list(pool.map(lambda c: solve(a, r, s, c, callback), configs))
    top = max(run.objective_f for run in runs)
    tie = TIE_TOL * hs_norm(a) ** 2
    best = min(m for m, run in enumerate(runs) if run.objective_f >= top - tie)
    summary = [
        {"index": m, "seed": run.seed, "objective_f": run.objective_f,
         "status": run.status, "sweeps": len(run.records) - 1}
        for m, run in enumerate(runs)
    ]
    runs[best].metadata.update(restart_index=best, restarts=summary)
    return runs[best], runs
