"""Planted test instances with known ground truth and rank/dimension utilities."""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy.optimize import linear_sum_assignment

from .linalg import random_orthonormal, sigma_min, svd
from .solver import DiagonalCore, FactorSet, reconstruct
from .tensor import DimensionError, hs_norm, read_tns, write_tns

SCHEMA = "potapprox/v1"
MIN_INDEPENDENCE_SIGMA = 0.1
MAX_RESAMPLES = 1000
PLANT_STREAM = 0x91A7


@dataclass(frozen=True)
class PlantedInstance:
    tensor: np.ndarray
    true_factors: FactorSet
    true_sigmas: np.ndarray
    noise_level: float
    seed: int

    @property
    def signal(self) -> np.ndarray:
        return reconstruct(self.true_factors, DiagonalCore(self.true_sigmas))

    def to_sidecar(self) -> dict:
        return {
            "schema": SCHEMA,
            "dims": list(self.tensor.shape),
            "r": int(self.true_sigmas.size),
            "s": self.true_factors.s,
            "sigmas": [float(x) for x in self.true_sigmas],
            "factors": [f.tolist() for f in self.true_factors.factors],
            "seed": int(self.seed),
            "noise_level": float(self.noise_level),
        }

    def save(self, tns_path) -> Path:
        """Write the tensor as ``.tns`` and the ground truth as a JSON sidecar.

        Returns the sidecar path (same stem, ``.json`` suffix).
        """
        tns_path = Path(tns_path)
        write_tns(tns_path, self.tensor)
        sidecar = tns_path.with_suffix(".json")
        sidecar.write_text(json.dumps(self.to_sidecar(), indent=2) + "\n")
        return sidecar

    @classmethod
    def load(cls, tns_path, sidecar_path=None) -> "PlantedInstance":
        tns_path = Path(tns_path)
        meta = json.loads(Path(sidecar_path or tns_path.with_suffix(".json")).read_text())
        return cls(
            tensor=read_tns(tns_path),
            true_factors=FactorSet(tuple(np.array(f) for f in meta["factors"]), meta["s"]),
            true_sigmas=np.array(meta["sigmas"], dtype=np.float64),
            noise_level=float(meta["noise_level"]),
            seed=int(meta["seed"]),
        )


def plant(n_dims: Sequence[int], r: int, s: int, sigmas, noise_level: float = 0.0,
          seed: int = 0) -> PlantedInstance:
    """Random partially orthogonal tensor ``sum_j sigma_j a1_j (x) ... (x) ak_j``.

    The first ``s`` factor matrices have orthonormal columns.  The others
    have unit columns and are resampled until their smallest singular value
    is at least 0.1.  Gaussian noise is scaled so that
    ``||noise|| = noise_level * ||signal||``.
    """
    dims = [int(n) for n in n_dims]
    k = len(dims)
    sig = np.asarray(sigmas, dtype=np.float64).ravel()
    if not 1 <= s <= k:
        raise ValueError(f"s must lie in [1, {k}], got {s}")
    if sig.size != r:
        raise ValueError(f"expected {r} sigmas, got {sig.size}")
    if np.any(sig <= 0):
        raise ValueError("sigmas must be positive")
    if r < 1 or r > min(dims[:s]):
        raise ValueError(f"r={r} exceeds the orthonormal dimensions {dims[:s]}")
    if r > min(dims):
        raise ValueError(f"r={r} exceeds min(dims)={min(dims)}; independent factors impossible")
    if noise_level < 0:
        raise ValueError("noise_level must be nonnegative")

    rng = np.random.default_rng([int(seed) & 0xFFFFFFFFFFFFFFFF, PLANT_STREAM])
    factors = []
    for i, n in enumerate(dims):
        if i < s:
            factors.append(random_orthonormal(n, r, rng))
            continue
        for _ in range(MAX_RESAMPLES):
            g = rng.standard_normal((n, r))
            g /= np.linalg.norm(g, axis=0)
            if sigma_min(g) >= MIN_INDEPENDENCE_SIGMA:
                break
        else:
            raise ValueError(f"could not draw well-conditioned factor for mode {i}")
        factors.append(g)
    true_factors = FactorSet(tuple(factors), s)
    tensor = reconstruct(true_factors, DiagonalCore(sig))
    if noise_level > 0:
        noise = rng.standard_normal(tensor.shape)
        tensor = tensor + noise * (noise_level * hs_norm(tensor) / hs_norm(noise))
    return PlantedInstance(tensor, true_factors, sig, float(noise_level), int(seed))


def rank_from_sigmas(sigmas, tol: float = 1e-8) -> int:
    """Number of coefficients with magnitude above ``tol``.

    Equals the tensor rank of a partially orthogonal tensor when ``s >= 2``.
    """
    return int(np.count_nonzero(np.abs(np.asarray(sigmas, dtype=np.float64)) > tol))


def rank_via_flattening(t, tol: float = 1e-8) -> int:
    """Numerical rank of the mode-1 flattening (relative tolerance ``tol``).

    Matches the tensor rank on partially orthogonal tensors; off that set it
    is only a heuristic.
    """
    t = np.asarray(t, dtype=np.float64)
    flat = t.reshape(t.shape[0], -1)
    if flat.shape[0] > flat.shape[1]:
        flat = flat.T
    sv = svd(flat.T).singular_values
    if sv.size == 0 or sv[0] == 0.0:
        return 0
    return int(np.count_nonzero(sv > tol * sv[0]))


def manifold_dimension(n_dims: Sequence[int], r: int, s: int) -> int:
    """Dimension ``r (sum n_i - s (r - 1) / 2 - k + 1)`` of the parameter manifold."""
    k = len(n_dims)
    twice = r * (2 * sum(n_dims) - s * (r - 1) - 2 * k + 2)
    if twice % 2:
        raise ArithmeticError("non-integer manifold dimension")
    return twice // 2


def factor_match_score(u: FactorSet, core: DiagonalCore, truth: PlantedInstance) -> float:
    """Alignment of recovered components with the planted ones, in ``[0, 1]``.

    For a pair of components the per-mode cosines ``c_i`` are combined
    under the best admissible sign pattern: signs may flip per mode only if
    the flips multiply to the sign of the recovered coefficient, since
    ``lambda u_1 (x) ... (x) u_k`` is unchanged exactly then.  The pair score
    is the mean of the signed cosines, and components are paired by an
    optimal assignment.  The result is the sigma-weighted mean over the
    planted components, invariant under column permutations and
    admissible sign flips.  A rank mismatch scores the best partial
    matching (unmatched planted components count as zero) and warns.
    """
    if u.dims != truth.true_factors.dims:
        raise DimensionError(f"dims {u.dims} vs {truth.true_factors.dims}")
    lam = np.asarray(core.lambdas, dtype=np.float64)
    if lam.size != u.r_active:
        raise DimensionError(f"core has {lam.size} entries, factors have {u.r_active} columns")
    cos = np.stack([
        (est / np.linalg.norm(est, axis=0)).T @ (ref / np.linalg.norm(ref, axis=0))
        for est, ref in zip(u.factors, truth.true_factors.factors)
    ])  # (k, r_est, r_true)
    mags = np.abs(cos)
    sign = np.prod(np.where(cos < 0, -1.0, 1.0), axis=0) * np.where(lam < 0, -1.0, 1.0)[:, None]
    # an odd number of mismatched signs forces the weakest mode to count negatively
    sim = (mags.sum(axis=0) - np.where(sign < 0, 2.0 * mags.min(axis=0), 0.0)) / u.k
    rows, cols = linear_sum_assignment(sim, maximize=True)
    if u.r_active != truth.true_factors.r_active:
        warnings.warn(
            f"rank mismatch: {u.r_active} recovered vs {truth.true_factors.r_active} planted; "
            "scoring the best partial matching",
            stacklevel=2,
        )
    weights = np.abs(truth.true_sigmas)
    score = np.sum(weights[cols] * np.clip(sim[rows, cols], 0.0, 1.0)) / np.sum(weights)
    return float(score)
