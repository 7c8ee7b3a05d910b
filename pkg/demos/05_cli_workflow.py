"""The command-line workflow: generate, solve, verify, rate, bench."""

# %%
import json
import subprocess
import sys
import tempfile
from pathlib import Path


def run(*args, cwd):
    cmd = [sys.executable, "-m", "potapprox.cli", *args]
    print("$ potapprox", " ".join(args))
    out = subprocess.run(cmd, cwd=cwd, capture_output=True, text=True)
    print(out.stdout + out.stderr, end="")
    print(f"[exit {out.returncode}]\n")
    return out.returncode


with tempfile.TemporaryDirectory() as tmp:
    tmp = Path(tmp)
    run("generate", "--dims", "8,8,8", "--r", "3", "--s", "1", "--sigmas", "3,2,1",
        "--seed", "7", "--out", "inst.tns", cwd=tmp)
    run("solve", "--input", "inst.tns", "--r", "3", "--s", "1", "--restarts", "5",
        "--stop-tol", "1e-13", "--record-inner", "--log", "log.csv", "--result", "res.json",
        cwd=tmp)
    print("".join((tmp / "log.csv").read_text().splitlines(keepends=True)[:4]))
    run("verify", "--log", "log.csv", "--result", "res.json", "--report", "report.json", cwd=tmp)
    run("rate", "--log", "log.csv", "--sidecar", "inst.json", cwd=tmp)

    # %% A zero tensor is rejected with exit code 3
    (tmp / "zero.tns").write_text("order 2\ndims 2 2\n0\n0\n0\n0\n")
    run("solve", "--input", "zero.tns", "--r", "1", "--s", "1", cwd=tmp)

    # %% Config files mirror the flags
    (tmp / "bench.json").write_text(json.dumps({"dims": [5, 5, 5], "r": 2, "s": 2, "count": 4}))
    run("bench", "--config", "bench.json", "--out", "bench.csv", cwd=tmp)
    print((tmp / "bench.csv").read_text())
