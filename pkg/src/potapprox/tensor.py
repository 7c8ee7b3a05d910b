"""Dense tensors and the multilinear operations used throughout the package.

Tensors are plain ``numpy.ndarray`` objects of dtype float64 stored in
row-major (C) order.  The helpers here validate shapes and modes and raise
:class:`DimensionError` on mismatches so that misuse surfaces early.
"""

from __future__ import annotations

from pathlib import Path
from typing import Sequence

import numpy as np


class DimensionError(ValueError):
    """Raised when operand shapes are incompatible."""


def as_tensor(data, copy: bool = False) -> np.ndarray:
    """Return ``data`` as a finite, C-contiguous float64 array.

    Raises
    ------
    ValueError
        If any entry is NaN or infinite, or a dimension is zero.
    """
    arr = np.array(data, dtype=np.float64, copy=copy, order="C")
    if not np.all(np.isfinite(arr)):
        raise ValueError("tensor entries must be finite")
    if any(n < 1 for n in arr.shape):
        raise ValueError(f"every dimension must be >= 1, got {arr.shape}")
    return arr


def zeros(shape: Sequence[int]) -> np.ndarray:
    return np.zeros(tuple(int(n) for n in shape))


class UnitVectorTuple(tuple):
    """Tuple of unit vectors ``(u_1, ..., u_k)``.

    The multilinear functions below accept any sequence of vectors; this
    class only adds the unit-norm check for callers that need it.
    """

    def __new__(cls, vectors, tol: float = 1e-12):
        vecs = [np.asarray(v, dtype=np.float64).ravel() for v in vectors]
        for i, v in enumerate(vecs):
            if abs(np.linalg.norm(v) - 1.0) > tol:
                raise ValueError(f"vector {i} is not a unit vector")
        return super().__new__(cls, vecs)


def _check_modes(ndim: int, modes) -> list[int]:
    modes = [int(m) for m in modes]
    for m in modes:
        if m < 0 or m >= ndim:
            raise ValueError(f"invalid mode index {m} for order-{ndim} tensor")
    if any(b <= a for a, b in zip(modes, modes[1:])):
        raise ValueError("modes must be strictly increasing")
    return modes


def contract(a, b, modes_of_a) -> np.ndarray:
    """Contract ``a`` with ``b`` over the given (increasing) modes of ``a``.

    The result lives on the remaining modes of ``a`` in their original
    order.  Contracting every mode yields an order-0 array.
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    modes = _check_modes(a.ndim, modes_of_a)
    if len(modes) != b.ndim or tuple(a.shape[m] for m in modes) != b.shape:
        raise DimensionError(
            f"cannot contract modes {modes} of shape {a.shape} with {b.shape}"
        )
    return np.asarray(np.tensordot(a, b, axes=(modes, list(range(b.ndim)))))


def inner(a, b) -> float:
    """Hilbert-Schmidt inner product."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise DimensionError(f"shape mismatch {a.shape} vs {b.shape}")
    return float(np.dot(a.ravel(), b.ravel()))


def hs_norm(a) -> float:
    """Hilbert-Schmidt norm (the Frobenius norm for matrices)."""
    a = np.asarray(a, dtype=np.float64)
    return float(np.linalg.norm(a.ravel()))


def mat_tensor_product(matrices: Sequence, a) -> np.ndarray:
    """Apply ``matrices[i]`` along mode ``i`` of ``a`` for every mode.

    Entry ``(i_1, ..., i_k)`` of the result is
    ``sum_j B1[i_1, j_1] ... Bk[i_k, j_k] a[j_1, ..., j_k]``.
    """
    a = np.asarray(a, dtype=np.float64)
    if len(matrices) != a.ndim:
        raise DimensionError(f"need {a.ndim} matrices, got {len(matrices)}")
    out = a
    for i, mat in enumerate(matrices):
        mat = np.asarray(mat, dtype=np.float64)
        if mat.ndim != 2 or mat.shape[1] != a.shape[i]:
            raise DimensionError(
                f"matrix {i} has shape {mat.shape}, mode {i} has size {a.shape[i]}"
            )
        out = np.moveaxis(np.tensordot(mat, out, axes=(1, i)), 0, i)
    return np.ascontiguousarray(out)


def diag_k(lambdas, k: int) -> np.ndarray:
    """Order-``k`` diagonal tensor with ``lambdas`` on the super-diagonal."""
    lam = np.asarray(lambdas, dtype=np.float64).ravel()
    if lam.size < 1 or k < 1:
        raise ValueError("need at least one entry and k >= 1")
    out = np.zeros((lam.size,) * k)
    idx = np.arange(lam.size)
    out[(idx,) * k] = lam
    return out


def Diag_k(a) -> np.ndarray:
    """Super-diagonal of a cubical tensor; a left inverse of :func:`diag_k`."""
    a = np.asarray(a, dtype=np.float64)
    if a.ndim < 1 or len(set(a.shape)) != 1:
        raise DimensionError(f"tensor of shape {a.shape} is not cubical")
    idx = np.arange(a.shape[0])
    return a[(idx,) * a.ndim].copy()


def tau(vectors: Sequence) -> np.ndarray:
    """Rank-one tensor ``u_1 (x) ... (x) u_k``.

    Any vectors are accepted; wrap them in :class:`UnitVectorTuple` to
    enforce unit norms.
    """
    vecs = [np.asarray(v, dtype=np.float64).ravel() for v in vectors]
    out = vecs[0]
    for v in vecs[1:]:
        out = np.multiply.outer(out, v)
    return np.ascontiguousarray(out)


def _check_vectors(a: np.ndarray, vectors, skip: int | None = None) -> list:
    if len(vectors) != a.ndim:
        raise DimensionError(f"need {a.ndim} vectors, got {len(vectors)}")
    vecs = []
    for i, v in enumerate(vectors):
        if i == skip:
            vecs.append(None)
            continue
        v = np.asarray(v, dtype=np.float64).ravel()
        if v.size != a.shape[i]:
            raise DimensionError(f"vector {i} has length {v.size}, expected {a.shape[i]}")
        vecs.append(v)
    return vecs


def A_tau(a, vectors: Sequence) -> float:
    """``<a, tau(vectors)>`` evaluated by successive contractions."""
    a = np.asarray(a, dtype=np.float64)
    vecs = _check_vectors(a, vectors)
    out = a
    for v in reversed(vecs):
        out = out @ v
    return float(out)


def A_tau_i(a, vectors: Sequence, i: int) -> np.ndarray:
    """Contract ``a`` with every vector except the one at mode ``i``.

    The vector at position ``i`` is ignored and may be anything.
    """
    a = np.asarray(a, dtype=np.float64)
    if not 0 <= i < a.ndim:
        raise ValueError(f"invalid mode index {i} for order-{a.ndim} tensor")
    vecs = _check_vectors(a, vectors, skip=i)
    out = a
    for mode in reversed(range(a.ndim)):
        if mode == i:
            continue
        out = np.tensordot(out, vecs[mode], axes=(mode, 0))
    return np.asarray(out)


_LETTERS = "abcdefghijklmnopqrstuvwxyz"


def _column_subscripts(k: int, skip: int | None) -> str:
    # "abc,aZ,cZ->bZ" style; Z indexes columns
    modes = _LETTERS[:k]
    ops = [f"{modes[t]}Z" for t in range(k) if t != skip]
    out = f"{modes[skip]}Z" if skip is not None else "Z"
    return f"{modes}," + ",".join(ops) + "->" + out


def columnwise_A_tau_i(a: np.ndarray, factors: Sequence[np.ndarray], i: int) -> np.ndarray:
    """Matrix whose column ``j`` is ``A_tau_i(a, [F[:, j] for F in factors], i)``."""
    others = [f for t, f in enumerate(factors) if t != i]
    return np.einsum(_column_subscripts(a.ndim, i), a, *others)


def columnwise_A_tau(a: np.ndarray, factors: Sequence[np.ndarray]) -> np.ndarray:
    """Vector of ``A_tau(a, [F[:, j] for F in factors])`` over columns ``j``."""
    return np.einsum(_column_subscripts(a.ndim, None), a, *factors)


def read_tns(path) -> np.ndarray:
    """Read a tensor in the ``.tns`` text format.

    Line 1 is ``order k``, line 2 ``dims n1 ... nk``, then one value per
    line in row-major order.
    """
    lines = [ln.strip() for ln in Path(path).read_text().splitlines()]
    lines = [ln for ln in lines if ln]
    if len(lines) < 2:
        raise ValueError("truncated .tns header")
    head = lines[0].split()
    dims_line = lines[1].split()
    if len(head) != 2 or head[0] != "order" or not dims_line or dims_line[0] != "dims":
        raise ValueError("malformed .tns header")
    k = int(head[1])
    dims = [int(x) for x in dims_line[1:]]
    if k < 1 or len(dims) != k:
        raise ValueError(f"order {k} does not match dims {dims}")
    values = np.array([float(x) for x in lines[2:]], dtype=np.float64)
    expected = int(np.prod(dims))
    if values.size != expected:
        raise ValueError(f"expected {expected} values, found {values.size}")
    return as_tensor(values.reshape(dims))


def write_tns(path, a) -> None:
    a = as_tensor(a)
    body = "\n".join(repr(float(x)) for x in a.ravel())
    text = f"order {a.ndim}\ndims {' '.join(str(n) for n in a.shape)}\n{body}\n"
    Path(path).write_text(text)
