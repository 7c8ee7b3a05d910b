"""Command-line interface: ``potapprox {generate,solve,bench,verify,rate}``.

Exit codes: 0 success, 2 usage error or malformed input, 3 rejected input
(a zero tensor).  Every JSON document carries ``"schema": "potapprox/v1"``.

Iteration log (CSV)
-------------------
One row per sweep, sweep 0 being the starting point, with columns in this
fixed order:

``sweep``
    sweep index
``f``
    objective ``sum_j lambda_j^2`` after the sweep
``step_norm``
    ``||U_p - U_{p-1}||_F`` (0 for sweep 0)
``kkt_total``
    KKT residual total at ``U_p``
``active_rank``
    number of components after the sweep
``truncated``
    pre-truncation indices removed in this sweep, ``;``-separated (empty if none)
``proximal_mask``
    one character per orthonormal mode, ``1`` where the proximal polar step ran
``wall_ms``
    sweep time in milliseconds; written as ``0`` unless ``--timing`` is given
    so that logs are reproducible byte for byte

Floats are written with ``repr`` and therefore round-trip exactly.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import math
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from .diagnostics import (
    Report,
    assert_lambda_chain,
    assert_monotone_after_truncation,
    assert_sufficient_increase,
    assert_truncation_budget,
    estimate_rate,
    kkt_residual,
)
from .problems import SCHEMA, plant
from .solver import (
    FactorSet,
    InnerTrace,
    IterationRecord,
    SolverConfig,
    default_workers,
    restart_seed,
    solve_multistart,
)
from .tensor import hs_norm, read_tns

LOG_COLUMNS = ("sweep", "f", "step_norm", "kkt_total", "active_rank", "truncated",
               "proximal_mask", "wall_ms")
BENCH_COLUMNS = ("instance", "dims", "r", "s", "seed", "status", "sweeps", "f",
                 "kkt_total", "relative_residual", "rate_model", "wall_ms")
BENCH_STREAM = 0xBE7C

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_REJECTED = 3


class UsageError(Exception):
    """Invalid flags or malformed input files (exit code 2)."""


class RejectedInput(Exception):
    """Well-formed input the solver refuses, e.g. a zero tensor (exit code 3)."""


def _int_list(text: str) -> list:
    try:
        vals = [int(x) for x in str(text).split(",") if x.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}")
    if not vals:
        raise argparse.ArgumentTypeError("empty list")
    return vals


def _float_list(text: str) -> list:
    try:
        vals = [float(x) for x in str(text).split(",") if x.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}")
    if not vals:
        raise argparse.ArgumentTypeError("empty list")
    return vals


def _positive_int(text: str) -> int:
    val = int(text)
    if val < 1:
        raise argparse.ArgumentTypeError(f"expected a positive integer, got {text}")
    return val


def _fmt(x) -> str:
    return "" if x is None else repr(float(x))


# -- parser -----------------------------------------------------------------

def _add_solver_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--r", type=_positive_int, required=True, help="number of components")
    p.add_argument("--s", type=_positive_int, required=True, help="number of orthonormal modes")
    p.add_argument("--epsilon", type=float, help="proximal parameter (default 1e-3 ||A||)")
    p.add_argument("--kappa", type=float, help="truncation threshold (default automatic)")
    p.add_argument("--kappa-factor", type=float, default=0.5,
                   help="automatic kappa as a fraction of sqrt(f0 / r)")
    p.add_argument("--max-sweeps", type=_positive_int, default=10000)
    p.add_argument("--stop-tol", type=float, help="step-norm stopping tolerance")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--restarts", type=_positive_int, default=1)
    p.add_argument("--threads", type=_positive_int,
                   help="worker threads (default: CPU count capped by POTAPPROX_THREADS)")
    p.add_argument("--timing", action="store_true", help="record wall-clock times")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="potapprox",
        description="Low-rank partially orthogonal tensor approximation.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    g = sub.add_parser("generate", help="write a planted instance (.tns + JSON sidecar)")
    g.add_argument("--dims", type=_int_list, required=True, help="e.g. 4,4,4")
    g.add_argument("--r", type=_positive_int, required=True)
    g.add_argument("--s", type=_positive_int, required=True)
    g.add_argument("--sigmas", type=_float_list, help="r positive weights, e.g. 3,1")
    g.add_argument("--noise", type=float, default=0.0, help="relative noise level")
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--out", default="instance.tns", help="tensor path; sidecar gets .json")

    s = sub.add_parser("solve", help="approximate a tensor and write log + result")
    s.add_argument("--input", required=True, help=".tns tensor file")
    _add_solver_flags(s)
    s.add_argument("--record-inner", action="store_true",
                   help="store the per-sweep coefficient chain in the result")
    s.add_argument("--log", help="CSV log path (default <input>_log.csv)")
    s.add_argument("--result", help="JSON result path (default <input>_result.json)")

    b = sub.add_parser("bench", help="solve a batch of seeded random tensors")
    b.add_argument("--dims", type=_int_list, required=True)
    b.add_argument("--count", type=_positive_int, default=10)
    _add_solver_flags(b)
    b.add_argument("--out", default="bench.csv", help="CSV summary path")

    v = sub.add_parser("verify", help="check a solve log against the convergence guarantees")
    v.add_argument("--log", required=True)
    v.add_argument("--result", required=True)
    v.add_argument("--input", help="tensor file (default: the one named in the result)")
    v.add_argument("--kkt-tol", type=float, default=1e-6,
                   help="KKT residual bound relative to ||A||")
    v.add_argument("--report", help="JSON report path (default: stdout only)")

    r = sub.add_parser("rate", help="estimate the convergence rate of a solve log")
    r.add_argument("--log", required=True)
    r.add_argument("--sidecar", help="ground-truth sidecar; f* = sum of sigma^2")
    r.add_argument("--f-star", type=float, help="limit objective (overrides --sidecar)")
    r.add_argument("--result", help="solve result, used for the tensor norm")
    r.add_argument("--tail-fraction", type=float, default=0.5)
    r.add_argument("--min-points", type=_positive_int, default=10)
    r.add_argument("--r2-threshold", type=float, default=0.9)
    r.add_argument("--out", help="JSON output path (default: stdout only)")

    for p in (g, s, b, v, r):
        p.add_argument("--config", help="JSON file whose keys mirror the flags")
    parser._potapprox_subparsers = {"generate": g, "solve": s, "bench": b,
                                    "verify": v, "rate": r}
    return parser


def _coerce(action: argparse.Action, value):
    if action.type is None or value is None:
        return value
    if isinstance(value, list):
        value = ",".join(str(x) for x in value)
    return action.type(str(value))


def parse_args(argv=None) -> argparse.Namespace:
    """Parse ``argv``; keys of a ``--config`` JSON file act as flag defaults.

    Explicit command-line flags win over the config file.
    """
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    pre = argparse.ArgumentParser(add_help=False)
    pre.add_argument("command", nargs="?")
    pre.add_argument("--config")
    known, _ = pre.parse_known_args(argv)
    subparsers = parser._potapprox_subparsers
    if known.config and known.command in subparsers:
        try:
            cfg = json.loads(Path(known.config).read_text())
        except (OSError, ValueError) as exc:
            raise UsageError(f"cannot read config {known.config}: {exc}")
        if not isinstance(cfg, dict):
            raise UsageError("config file must hold a JSON object")
        sub = subparsers[known.command]
        actions = {a.dest: a for a in sub._actions}
        defaults = {}
        for key, value in cfg.items():
            dest = key.replace("-", "_")
            if dest in ("config", "help") or dest not in actions:
                raise UsageError(f"unknown config key {key!r} for {known.command}")
            try:
                defaults[dest] = _coerce(actions[dest], value)
            except (argparse.ArgumentTypeError, TypeError, ValueError) as exc:
                raise UsageError(f"bad config value for {key!r}: {exc}")
            actions[dest].required = False
        sub.set_defaults(**defaults)
    return parser.parse_args(argv)


# -- shared helpers ---------------------------------------------------------

def _load_tensor(path) -> np.ndarray:
    try:
        return read_tns(path)
    except OSError as exc:
        raise UsageError(f"cannot read {path}: {exc}")
    except ValueError as exc:
        raise UsageError(f"malformed tensor file {path}: {exc}")


def _solver_config(args) -> SolverConfig:
    try:
        return SolverConfig(
            epsilon=args.epsilon,
            kappa=args.kappa,
            max_sweeps=args.max_sweeps,
            stop_tol=args.stop_tol,
            seed=args.seed,
            record_inner=getattr(args, "record_inner", False),
            kappa_factor=args.kappa_factor,
        )
    except ValueError as exc:
        raise UsageError(str(exc))


def _check_shape(a: np.ndarray, r: int, s: int) -> None:
    if s > a.ndim:
        raise UsageError(f"--s {s} exceeds the tensor order {a.ndim}")
    if r > min(a.shape[:s]):
        raise UsageError(f"--r {r} exceeds min(n_1..n_s) = {min(a.shape[:s])}")


def _run(a, args, config):
    if hs_norm(a) == 0.0:
        raise RejectedInput("zero tensor: nothing to approximate")
    _check_shape(a, args.r, args.s)

    def kkt_callback(state, record):
        record.kkt_residual = kkt_residual(a, state.factor_set()).total

    try:
        best, _ = solve_multistart(a, args.r, args.s, config, args.restarts,
                                   callback=kkt_callback, max_workers=args.threads)
    except ValueError as exc:
        raise UsageError(str(exc))
    return best


def _write_json(path, doc: dict) -> None:
    Path(path).write_text(json.dumps(doc, indent=2) + "\n")


def _proximal_mask(record: IterationRecord, s: int) -> str:
    return "".join("1" if i in record.proximal_modes else "0" for i in range(s))


def format_log(records, s: int, timing: bool = False) -> str:
    """Render iteration records as CSV text in the fixed column order."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(LOG_COLUMNS)
    for rec in records:
        w.writerow([
            rec.sweep,
            _fmt(rec.objective_f),
            _fmt(rec.step_norm),
            _fmt(rec.kkt_residual),
            rec.active_rank,
            ";".join(str(j) for j in rec.truncated_indices),
            _proximal_mask(rec, s),
            f"{rec.wall_time_ms:.3f}" if timing else "0",
        ])
    return buf.getvalue()


def read_log(path) -> list:
    """Parse a CSV log back into :class:`IterationRecord` objects.

    Raises :class:`UsageError` on a wrong header, unparsable fields or
    non-consecutive sweep indices.
    """
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise UsageError(f"cannot read log {path}: {exc}")
    rows = list(csv.reader(io.StringIO(text)))
    if not rows or tuple(rows[0]) != LOG_COLUMNS:
        raise UsageError(f"malformed log {path}: header must be {','.join(LOG_COLUMNS)}")
    records = []
    for lineno, row in enumerate(rows[1:], start=2):
        if not row:
            continue
        if len(row) != len(LOG_COLUMNS):
            raise UsageError(f"malformed log {path}:{lineno}: expected {len(LOG_COLUMNS)} fields")
        try:
            sweep = int(row[0])
            rec = IterationRecord(
                sweep=sweep,
                objective_f=float(row[1]),
                step_norm=float(row[2]),
                kkt_residual=float(row[3]) if row[3] else None,
                active_rank=int(row[4]),
                truncated_indices=tuple(int(j) for j in row[5].split(";") if j),
                proximal_modes=tuple(i for i, c in enumerate(row[6]) if c == "1"),
                wall_time_ms=float(row[7]),
            )
        except ValueError as exc:
            raise UsageError(f"malformed log {path}:{lineno}: {exc}")
        if set(row[6]) - {"0", "1"}:
            raise UsageError(f"malformed log {path}:{lineno}: bad proximal mask {row[6]!r}")
        if not all(math.isfinite(x) for x in (rec.objective_f, rec.step_norm)):
            raise UsageError(f"malformed log {path}:{lineno}: non-finite value")
        if sweep != len(records):
            raise UsageError(f"malformed log {path}:{lineno}: expected sweep {len(records)}")
        records.append(rec)
    if not records:
        raise UsageError(f"malformed log {path}: no rows")
    return records


def _read_json(path, what: str) -> dict:
    try:
        doc = json.loads(Path(path).read_text())
    except (OSError, ValueError) as exc:
        raise UsageError(f"cannot read {what} {path}: {exc}")
    if not isinstance(doc, dict) or doc.get("schema") != SCHEMA:
        raise UsageError(f"{what} {path} is not a {SCHEMA} document")
    return doc


# -- commands ---------------------------------------------------------------

def cmd_generate(args) -> int:
    if args.sigmas is None:
        raise UsageError("--sigmas is required (one weight per component)")
    try:
        inst = plant(args.dims, args.r, args.s, args.sigmas, args.noise, args.seed)
    except ValueError as exc:
        raise UsageError(str(exc))
    out = Path(args.out)
    sidecar = inst.save(out)
    print(f"wrote {out} and {sidecar}")
    return EXIT_OK


def result_document(result, a, input_path: str) -> dict:
    """JSON-ready summary of a :class:`~potapprox.solver.SolveResult`."""
    norm = hs_norm(a)
    residual = result.residual(a)
    kkt = kkt_residual(a, result.factors)
    doc = {
        "schema": SCHEMA,
        "input": input_path,
        "dims": list(a.shape),
        "r": result.initial_r,
        "s": result.factors.s,
        "status": result.status,
        "seed": result.seed,
        "restart_index": result.metadata.get("restart_index", 0),
        "restarts": result.metadata.get("restarts", []),
        "epsilon": result.epsilon,
        "kappa": result.kappa,
        "stop_tol": result.stop_tol,
        "tensor_norm": norm,
        "f0": result.f0,
        "objective_f": result.objective_f,
        "sweeps": len(result.records) - 1,
        "active_rank": result.factors.r_active,
        "last_truncation_sweep": result.last_truncation_sweep,
        "truncations": [
            {"sweep": rec.sweep, "indices": list(rec.truncated_indices),
             "loss": rec.truncation_loss}
            for rec in result.records if rec.truncated
        ],
        "lambdas": result.core.lambdas.tolist(),
        "factors": [f.tolist() for f in result.factors.factors],
        "residual": residual,
        "relative_residual": residual / norm,
        "kkt": kkt.to_dict(),
    }
    traces = [rec.inner_trace for rec in result.records if rec.inner_trace is not None]
    if traces:
        doc["inner_trace"] = [
            {"sweep": tr.sweep, "lambdas": tr.lambdas.tolist(),
             "column_step_sq": tr.column_step_sq.tolist()}
            for tr in traces
        ]
    return doc


def cmd_solve(args) -> int:
    a = _load_tensor(args.input)
    config = _solver_config(args)
    result = _run(a, args, config)
    stem = Path(args.input).with_suffix("")
    log_path = Path(args.log or f"{stem}_log.csv")
    result_path = Path(args.result or f"{stem}_result.json")
    log_path.write_text(format_log(result.records, args.s, args.timing))
    doc = result_document(result, a, str(args.input))
    _write_json(result_path, doc)
    print(f"status={doc['status']} sweeps={doc['sweeps']} f={doc['objective_f']:.12g} "
          f"relative_residual={doc['relative_residual']:.3e}")
    return EXIT_OK


def bench_instance(dims, seed: int, index: int) -> np.ndarray:
    """Standard Gaussian tensor number ``index`` of a bench batch."""
    rng = np.random.default_rng([int(seed) & 0xFFFFFFFFFFFFFFFF, BENCH_STREAM, int(index)])
    return rng.standard_normal(tuple(dims))


def cmd_bench(args) -> int:
    base = _solver_config(args)
    if min(args.dims) < 1:
        raise UsageError("--dims entries must be positive")
    _check_shape(np.empty(args.dims), args.r, args.s)
    workers = min(args.count, args.threads or default_workers())

    def one(index):
        a = bench_instance(args.dims, args.seed, index)
        t0 = time.perf_counter()
        cfg = SolverConfig(**{**base.__dict__, "seed": restart_seed(args.seed, index)})
        best, _ = solve_multistart(a, args.r, args.s, cfg, args.restarts, max_workers=1)
        ms = 1e3 * (time.perf_counter() - t0)
        try:
            model = estimate_rate(best.records, tensor_norm=hs_norm(a)).model
        except ValueError:
            model = "short"
        return [
            index,
            "x".join(str(n) for n in args.dims),
            args.r,
            args.s,
            best.seed,
            best.status,
            len(best.records) - 1,
            _fmt(best.objective_f),
            _fmt(kkt_residual(a, best.factors).total),
            _fmt(best.residual(a) / hs_norm(a)),
            model,
            f"{ms:.3f}" if args.timing else "0",
        ]

    if workers <= 1:
        rows = [one(i) for i in range(args.count)]
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            rows = list(pool.map(one, range(args.count)))
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(BENCH_COLUMNS)
    w.writerows(rows)
    Path(args.out).write_text(buf.getvalue())
    converged = sum(1 for row in rows if row[5] == "converged")
    print(f"wrote {args.out}: {converged}/{args.count} converged")
    return EXIT_OK


def _attach_result(records: list, doc: dict) -> list:
    losses = {t["sweep"]: float(t["loss"]) for t in doc.get("truncations", [])}
    for rec in records:
        rec.truncation_loss = losses.get(rec.sweep, 0.0)
    for tr in doc.get("inner_trace", []):
        if 0 <= tr["sweep"] < len(records):
            records[tr["sweep"]].inner_trace = InnerTrace(
                sweep=tr["sweep"], s=doc["s"],
                lambdas=np.array(tr["lambdas"], dtype=np.float64),
                column_step_sq=np.array(tr["column_step_sq"], dtype=np.float64),
            )
    return records


def run_checks(records: list, doc: dict, a: np.ndarray, kkt_tol: float = 1e-6) -> list:
    """Assertion battery over a parsed log and its result document."""
    norm = hs_norm(a)
    try:
        factors = FactorSet(tuple(np.array(f, dtype=np.float64) for f in doc["factors"]),
                            int(doc["s"]))
        eps, kappa, r0 = float(doc["epsilon"]), float(doc["kappa"]), int(doc["r"])
    except (KeyError, TypeError, ValueError) as exc:
        raise UsageError(f"result document is missing fields: {exc}")
    if factors.dims != a.shape:
        raise UsageError(f"result factors {factors.dims} do not match tensor {a.shape}")

    reports = [
        assert_sufficient_increase(records, eps, kappa, norm),
        assert_monotone_after_truncation(records, norm),
        assert_truncation_budget(records, r0, kappa),
    ]
    traces = [rec.inner_trace for rec in records if rec.inner_trace is not None]
    if traces:
        reports.append(assert_lambda_chain(traces))

    kkt = kkt_residual(a, factors)
    reports.append(Report("kkt_residual", kkt.total <= kkt_tol * norm,
                          {"total": kkt.total, "bound": kkt_tol * norm,
                           "normalized_total": kkt.normalized_total}))
    feas = factors.feasibility_error()
    reports.append(Report("feasibility", feas <= 1e-8, {"max_error": feas}))
    f_final = float(np.sum(np.asarray(doc.get("lambdas", []), dtype=np.float64) ** 2))
    f_log = records[-1].objective_f
    gap = abs(f_log - f_final)
    reports.append(Report("log_consistency",
                          gap <= 1e-9 * norm**2 and records[-1].active_rank == factors.r_active,
                          {"log_f": f_log, "result_f": f_final, "difference": gap}))
    return reports


def cmd_verify(args) -> int:
    records = read_log(args.log)
    doc = _read_json(args.result, "result")
    tensor_path = args.input or doc.get("input")
    if not tensor_path:
        raise UsageError("no tensor given (--input) and none named in the result")
    a = _load_tensor(tensor_path)
    _attach_result(records, doc)
    reports = run_checks(records, doc, a, args.kkt_tol)
    passed = all(rep.passed for rep in reports)
    out = {"schema": SCHEMA, "passed": passed, "log": str(args.log),
           "checks": [rep.to_dict() for rep in reports]}
    text = json.dumps(out, indent=2) + "\n"
    if args.report:
        Path(args.report).write_text(text)
    for rep in reports:
        print(f"{'PASS' if rep.passed else 'FAIL'} {rep.name}")
    return EXIT_OK if passed else 1


def cmd_rate(args) -> int:
    records = read_log(args.log)
    f_star = args.f_star
    if f_star is None and args.sidecar:
        side = _read_json(args.sidecar, "sidecar")
        f_star = float(np.sum(np.asarray(side["sigmas"], dtype=np.float64) ** 2))
    norm = None
    if args.result:
        norm = float(_read_json(args.result, "result")["tensor_norm"])
    try:
        est = estimate_rate(records, f_star, tensor_norm=norm,
                            tail_fraction=args.tail_fraction, min_points=args.min_points,
                            r2_threshold=args.r2_threshold)
    except ValueError as exc:
        raise UsageError(f"log too short for a rate estimate: {exc}")
    doc = {"schema": SCHEMA, **{k: (float(v) if isinstance(v, np.floating) else v)
                                for k, v in est.to_dict().items()}}
    text = json.dumps(doc, indent=2) + "\n"
    if args.out:
        Path(args.out).write_text(text)
    print(text, end="")
    return EXIT_OK


COMMANDS = {
    "generate": cmd_generate,
    "solve": cmd_solve,
    "bench": cmd_bench,
    "verify": cmd_verify,
    "rate": cmd_rate,
}


def main(argv=None) -> int:
    try:
        args = parse_args(argv)
        return COMMANDS[args.command](args)
    except SystemExit as exc:  # argparse usage errors
        return int(exc.code) if isinstance(exc.code, int) else EXIT_USAGE
    except UsageError as exc:
        print(f"potapprox: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except RejectedInput as exc:
        print(f"potapprox: rejected: {exc}", file=sys.stderr)
        return EXIT_REJECTED


if __name__ == "__main__":
    sys.exit(main())
