"""Deterministic SVD and polar decomposition.

The SVD is a one-sided (Hestenes) Jacobi iteration with a fixed cyclic
column-pair order, so identical inputs always give bit-identical factors.
Singular vectors are normalised so that the largest-magnitude entry of
every right singular vector is positive.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .tensor import DimensionError

JACOBI_TOL = 1e-14
MAX_JACOBI_SWEEPS = 100
ORTHONORMAL_TOL = 1e-8


@dataclass(frozen=True)
class SvdResult:
    """Thin SVD ``m = u @ diag(singular_values) @ v.T`` of an n x m input."""

    u: np.ndarray
    singular_values: np.ndarray
    v: np.ndarray


@dataclass(frozen=True)
class PolarResult:
    """Polar decomposition ``m = orthonormal_factor @ psd_factor``."""

    orthonormal_factor: np.ndarray
    psd_factor: np.ndarray


def _as_matrix(m) -> np.ndarray:
    m = np.array(m, dtype=np.float64, ndmin=2)
    if m.ndim != 2:
        raise DimensionError(f"expected a matrix, got shape {m.shape}")
    if not np.all(np.isfinite(m)):
        raise ValueError("matrix entries must be finite")
    return m


def _complete_basis(u: np.ndarray, keep: np.ndarray) -> np.ndarray:
    """Replace the columns of ``u`` not flagged in ``keep`` by an orthonormal
    completion drawn from the standard basis (deterministic)."""
    n, m = u.shape
    basis = [u[:, j] for j in range(m) if keep[j]]
    fill = []
    for e in np.eye(n):
        if len(basis) + len(fill) == m:
            break
        w = e.copy()
        for _ in range(2):
            for b in basis + fill:
                w -= (b @ w) * b
        nrm = np.linalg.norm(w)
        if nrm > 1e-8:
            fill.append(w / nrm)
    out = u.copy()
    it = iter(fill)
    for j in range(m):
        if not keep[j]:
            out[:, j] = next(it)
    return out


def svd(m) -> SvdResult:
    """Thin SVD of an ``n x m`` matrix with ``n >= m`` by one-sided Jacobi.

    Column pairs are swept in the fixed order ``(0,1), (0,2), ..., (m-2,m-1)``
    until every pair is orthogonal to relative precision ``1e-14``.

    Raises
    ------
    DimensionError
        If the matrix has more columns than rows.
    ValueError
        If the input contains NaN or infinite entries.
    """
    a = _as_matrix(m)
    n, p = a.shape
    if n < p:
        raise DimensionError(f"svd expects rows >= columns, got {a.shape}")
    w = a.copy()
    v = np.eye(p)
    for _ in range(MAX_JACOBI_SWEEPS):
        rotated = False
        for i in range(p - 1):
            for j in range(i + 1, p):
                wi = w[:, i]
                wj = w[:, j]
                alpha = wi @ wi
                beta = wj @ wj
                gamma = wi @ wj
                if gamma == 0.0 or abs(gamma) <= JACOBI_TOL * np.sqrt(alpha * beta):
                    continue
                rotated = True
                zeta = (beta - alpha) / (2.0 * gamma)
                t = (1.0 if zeta >= 0 else -1.0) / (abs(zeta) + np.hypot(1.0, zeta))
                c = 1.0 / np.hypot(1.0, t)
                s = c * t
                wi_old = wi.copy()
                w[:, i] = c * wi_old - s * wj
                w[:, j] = s * wi_old + c * wj
                vi_old = v[:, i].copy()
                v[:, i] = c * vi_old - s * v[:, j]
                v[:, j] = s * vi_old + c * v[:, j]
        if not rotated:
            break

    sigma = np.linalg.norm(w, axis=0)
    order = np.argsort(-sigma, kind="stable")
    sigma = sigma[order]
    w = w[:, order]
    v = v[:, order]

    cutoff = max(n, p) * np.finfo(float).eps * (sigma[0] if p else 0.0)
    keep = sigma > cutoff
    u = np.zeros_like(w)
    u[:, keep] = w[:, keep] / sigma[keep]
    if not np.all(keep):
        u = _complete_basis(u, keep)

    for j in range(p):
        if v[np.argmax(np.abs(v[:, j])), j] < 0:
            v[:, j] = -v[:, j]
            u[:, j] = -u[:, j]
    return SvdResult(u=u, singular_values=sigma, v=v)


def polar(m) -> PolarResult:
    """Polar decomposition of an ``n x m`` matrix (``n >= m``).

    With ``m = G diag(s) H^T`` the factors are ``U = G H^T`` and
    ``P = H diag(s) H^T``.  ``U`` maximises ``<Q, m>`` over matrices ``Q``
    with orthonormal columns; it is unique when ``m`` has full rank.
    """
    res = svd(m)
    u = res.u @ res.v.T
    h = (res.v * res.singular_values) @ res.v.T
    h = 0.5 * (h + h.T)
    return PolarResult(orthonormal_factor=u, psd_factor=h)


def sigma_min(m) -> float:
    """Smallest singular value; wide matrices are transposed first."""
    a = _as_matrix(m)
    if a.shape[0] < a.shape[1]:
        a = a.T
    return float(svd(a).singular_values[-1])


def is_orthonormal(q, tol: float = ORTHONORMAL_TOL) -> bool:
    q = np.asarray(q, dtype=np.float64)
    return bool(np.max(np.abs(q.T @ q - np.eye(q.shape[1]))) <= tol)


def polar_error_bound_gap(b, c, q) -> float:
    """Slack in the global error bound for ``min ||B - QC||_F``.

    Returns ``(||B - QC||^2 - ||B - WC||^2) - sigma_min(BC^T) ||W - Q||^2``
    with ``W`` the polar factor of ``BC^T``.  The bound says this is never
    negative.
    """
    b = _as_matrix(b)
    c = _as_matrix(c)
    q = _as_matrix(q)
    if b.shape[1] != c.shape[1] or q.shape != (b.shape[0], c.shape[0]):
        raise DimensionError(f"incompatible shapes B{b.shape}, C{c.shape}, Q{q.shape}")
    if not is_orthonormal(q):
        raise ValueError("q must have orthonormal columns")
    target = b @ c.T
    w = polar(target).orthonormal_factor
    lhs = np.linalg.norm(b - q @ c) ** 2 - np.linalg.norm(b - w @ c) ** 2
    return float(lhs - sigma_min(target) * np.linalg.norm(w - q) ** 2)


def orthonormal_distance_gap(u, v) -> float:
    """``||U - V||_F^2 - ||U^T V - I||_F^2``, nonnegative for orthonormal pairs."""
    u = _as_matrix(u)
    v = _as_matrix(v)
    if u.shape != v.shape:
        raise DimensionError(f"shape mismatch {u.shape} vs {v.shape}")
    if not (is_orthonormal(u) and is_orthonormal(v)):
        raise ValueError("inputs must have orthonormal columns")
    eye = np.eye(u.shape[1])
    return float(np.linalg.norm(u - v) ** 2 - np.linalg.norm(u.T @ v - eye) ** 2)


def random_orthonormal(n: int, m: int, seed) -> np.ndarray:
    """Seeded ``n x m`` matrix with orthonormal columns.

    Q factor of a Gaussian matrix, with each column's sign chosen so its
    largest-magnitude entry is positive (so ``n = m = 1`` gives ``[[1]]``).
    ``seed`` may be an int, a sequence of ints or a ``numpy.random.Generator``.
    """
    if m > n:
        raise ValueError(f"cannot fit {m} orthonormal columns in dimension {n}")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    q, _ = np.linalg.qr(rng.standard_normal((n, m)))
    lead = q[np.argmax(np.abs(q), axis=0), np.arange(m)]
    return q * np.where(lead < 0, -1.0, 1.0)
