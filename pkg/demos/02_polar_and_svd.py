"""Deterministic Jacobi SVD, polar decomposition and the polar error bound."""

# %%
import numpy as np

from potapprox.linalg import (
    orthonormal_distance_gap,
    polar,
    polar_error_bound_gap,
    random_orthonormal,
    sigma_min,
    svd,
)

rng = np.random.default_rng(1)

# %% SVD agrees with LAPACK and is bit-reproducible
a = rng.standard_normal((6, 4))
res = svd(a)
print("singular values:", np.round(res.singular_values, 6))
print("LAPACK values:  ", np.round(np.linalg.svd(a, compute_uv=False), 6))
print("reconstruction error:", np.linalg.norm((res.u * res.singular_values) @ res.v.T - a))
print("repeatable:", np.array_equal(svd(a).u, res.u))

# %% The polar factor maximises <Q, A> over orthonormal Q
pol = polar(a)
best = np.sum(pol.orthonormal_factor * a)
rivals = [np.sum(random_orthonormal(6, 4, [9, j]) * a) for j in range(1000)]
print(f"<U, A> = {best:.6f}, best of 1000 random Q = {max(rivals):.6f}")
print("U H == A:", np.allclose(pol.orthonormal_factor @ pol.psd_factor, a))
print("sigma_min(A) =", sigma_min(a))

# %% Global error bound and orthonormal distance inequality stay nonnegative
gaps = []
for t in range(200):
    b, c = rng.standard_normal((5, 3)), rng.standard_normal((2, 3))
    gaps.append(polar_error_bound_gap(b, c, random_orthonormal(5, 2, [t, 0])))
print("smallest error-bound slack over 200 draws:", min(gaps))
q, v = random_orthonormal(5, 3, 1), random_orthonormal(5, 3, 2)
print("||Q - V||^2 - ||Q^T V - I||^2 =", orthonormal_distance_gap(q, v))
