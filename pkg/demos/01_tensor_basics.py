"""Dense tensor operations and the .tns file format."""

# %%
import tempfile
from pathlib import Path

import numpy as np

from potapprox.tensor import (
    A_tau,
    A_tau_i,
    Diag_k,
    contract,
    diag_k,
    hs_norm,
    inner,
    mat_tensor_product,
    read_tns,
    tau,
    write_tns,
)

# %% Contractions on a small matrix
m = np.array([[1.0, 2.0], [3.0, 4.0]])
print("contract last mode with e1:", contract(m, np.array([1.0, 0.0]), [1]))
print("full contraction with itself:", float(contract(m, m, [0, 1])))
print("<m, I> =", inner(m, np.eye(2)))

# %% Diagonal tensors
d = diag_k([3.0, 4.0], 3)
print("shape of diag_3(3, 4):", d.shape, " norm:", hs_norm(d))
print("Diag_3 recovers:", Diag_k(d))

# %% Rank-one tensors and partial contractions
rng = np.random.default_rng(0)
u = [v / np.linalg.norm(v) for v in (rng.standard_normal(n) for n in (3, 4, 2))]
t = tau(u)
print("||tau(u)|| for unit vectors:", round(hs_norm(t), 12))
a = rng.standard_normal((3, 4, 2))
print("<A, tau(u)> =", A_tau(a, u))
print("A tau_1(u) . u_1 =", A_tau_i(a, u, 0) @ u[0], "(same value)")

# %% Mode products: (B, C) . (x o y) = (Bx) o (Cy)
x, y = rng.standard_normal(2), rng.standard_normal(3)
b, c = rng.standard_normal((4, 2)), rng.standard_normal((5, 3))
lhs = mat_tensor_product([b, c], np.outer(x, y))
print("max |(B,C).(x o y) - Bx o Cy| =", np.max(np.abs(lhs - np.outer(b @ x, c @ y))))

# %% Text format round trip is exact
with tempfile.TemporaryDirectory() as tmp:
    path = Path(tmp) / "a.tns"
    write_tns(path, a)
    print(path.read_text().splitlines()[:3])
    print("round trip exact:", np.array_equal(read_tns(path), a))
