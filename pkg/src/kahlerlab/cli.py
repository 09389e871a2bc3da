"""``lab`` command-line front end.

Every command writes a JSON report carrying ``"schema": 1``.  Exit codes:
0 success, 2 invalid input, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
from pathlib import Path
from typing import List, Optional, Sequence

import numpy as np

from . import foliation, geodesic_solver as gs, linear_model, matrix_core as mc, potential_builder as pb
from .errors import NumericalError, ValidationError
from .torus import TorusSpec, read_field, write_field, field_to_csv

SCHEMA = 1
PLOT_COLUMNS = gs.SWEEP_COLUMNS

log = logging.getLogger("kahlerlab")


def default_obstructed_q(m: int) -> List[float]:
    if m == 1:
        return [3.0]
    if m == 2:
        return [2.5, 3.5]
    return [2.5 + j for j in range(m)]


def _floats(text: str, name: str) -> List[float]:
    try:
        return [float(t) for t in str(text).split(",") if t.strip()]
    except ValueError as exc:
        raise ValidationError(f"--{name}: expected comma-separated numbers, got {text!r}") from exc


def _matrix_arg(text, m: int, name: str) -> np.ndarray:
    """Comma list (diagonal) or JSON nested list (full real matrix)."""
    if text is None:
        return np.zeros((m, m))
    s = str(text).strip()
    if s.startswith("["):
        try:
            M = np.array(json.loads(s), dtype=float)
        except (ValueError, TypeError) as exc:
            raise ValidationError(f"--{name}: malformed matrix {s!r}") from exc
        if M.shape != (m, m):
            raise ValidationError(f"--{name}: expected a {m}x{m} matrix")
        return M
    vals = _floats(s, name)
    if len(vals) == 1:
        vals = vals * m
    if len(vals) != m:
        raise ValidationError(f"--{name}: expected {m} values, got {len(vals)}")
    return np.diag(vals)


def _threads(args) -> int:
    t = args.threads
    if t is None:
        env = os.environ.get("LAB_THREADS")
        try:
            t = int(env) if env else 1
        except ValueError as exc:
            raise ValidationError(f"LAB_THREADS must be an integer, got {env!r}") from exc
    if t < 1:
        raise ValidationError(f"threads must be >= 1, got {t}")
    return t


def _dump(obj: dict, path: Optional[str]) -> str:
    text = json.dumps({"schema": SCHEMA, **obj}, indent=2, sort_keys=False, allow_nan=True) + "\n"
    if path:
        Path(path).write_text(text)
    return text


def _require_positive(value, name):
    if not value > 0:
        raise ValidationError(f"--{name} must be positive, got {value}")


# commands ------------------------------------------------------------------


def cmd_obstruction(args) -> dict:
    m = args.m
    p = _floats(args.p, "p") if args.p is not None else [1.0] * m
    q = _floats(args.q, "q") if args.q is not None else default_obstructed_q(m)
    if len(p) == 1:
        p = p * m
    if len(q) == 1 and m > 1:
        q = q * m
    if len(p) != m or len(q) != m:
        raise ValidationError(f"--p and --q need {m} values each")
    rep = mc.obstruction_certificate(mc.HessianPair.diagonal(p, q))
    return {"command": "obstruction", "m": m, "P": p, "Q": q, **rep.to_dict()}


def cmd_lemmas(args) -> dict:
    if args.trials < 1:
        raise ValidationError("--trials must be >= 1")
    m = args.m
    threads = _threads(args)
    stats = mc.dichotomy_suite(args.trials, (m,), seed=args.seed)
    q = default_obstructed_q(m)
    obstructed = mc.HessianPair.diagonal([1.0] * m, q)
    control = mc.HessianPair.diagonal([1.0] * m, [0.0] * m)
    search = linear_model.compatibility_search(obstructed, args.trials, seed=args.seed, threads=threads)
    ctrl = linear_model.compatibility_search(control, min(args.trials, 10), seed=args.seed, threads=threads)
    return {
        "command": "lemmas",
        "m": m,
        "seed": args.seed,
        "dichotomy": {
            "samples": stats.samples,
            "eigenpairs": stats.eigenpairs,
            "violations": stats.violations,
            "counts": stats.counts,
            "worst": stats.worst,
        },
        "obstruction": mc.obstruction_certificate(obstructed).to_dict(),
        "compatibilitySearch": {"Q": q, **search.to_dict()},
        "controlSearch": {"Q": [0.0] * m, **ctrl.to_dict()},
        "eigenvalueFloorFrequency": mc.eigenvalue_floor_frequency(min(args.trials, 1000), m, args.seed),
    }


def cmd_build_potential(args) -> dict:
    m = args.m
    torus = TorusSpec(m, args.L, args.N)
    a = _matrix_arg(args.a, m, "a")
    b = _matrix_arg(args.b, m, "b")
    built = pb.build_potential(a, b, torus, margin=args.margin)
    if args.out:
        write_field(built.field, args.out)
    if args.csv:
        field_to_csv(built.field, args.csv)
    return {"command": "build-potential", "m": m, "L": args.L, "N": args.N, **built.report()}


def _load_v(path):
    if not path:
        raise ValidationError("--v is required")
    return read_field(path)


def _config(args) -> gs.SolverConfig:
    _require_positive(args.newton_tol, "newton-tol")
    if args.max_iter < 1:
        raise ValidationError("--max-iter must be >= 1")
    return gs.SolverConfig(newton_tol=args.newton_tol, max_iter=args.max_iter)


def cmd_solve(args) -> dict:
    config = _config(args)
    v = _load_v(args.v)
    if args.epsilon is None:
        raise ValidationError("--epsilon is required")
    problem = gs.GeodesicProblem(v.spec, v, args.epsilon, args.nt)
    sol = gs.newton_solve(problem, config)
    if args.out:
        gs.write_solution(sol, args.out)
    return {"command": "solve", **sol.report(), "newtonTol": config.newton_tol}


def cmd_sweep(args) -> dict:
    config = _config(args)
    v = _load_v(args.v)
    schedule = _floats(args.schedule, "schedule")
    if not schedule:
        raise ValidationError("--schedule is empty")
    problem = gs.GeodesicProblem(v.spec, v, schedule[0], args.nt)
    report = gs.epsilon_sweep(problem, schedule, config)
    if args.csv:
        report.to_csv(args.csv)
    return {"command": "sweep", "N": v.spec.N, "L": v.spec.L, "Nt": args.nt, **report.to_dict()}


def _load_starts(path) -> List[complex]:
    p = Path(path)
    if not p.exists():
        raise ValidationError(f"file not found: {p}")
    try:
        data = json.loads(p.read_text())
    except ValueError as exc:
        raise ValidationError(f"--starts: malformed JSON ({exc})") from exc
    if isinstance(data, dict):
        data = data.get("starts", [])
    out = []
    for item in data:
        if isinstance(item, (list, tuple)) and len(item) == 2:
            out.append(complex(float(item[0]), float(item[1])))
        elif isinstance(item, (int, float)):
            out.append(complex(item))
        else:
            raise ValidationError(f"--starts: cannot read start point {item!r}")
    return out


def cmd_foliate(args) -> dict:
    if not args.sol:
        raise ValidationError("--sol is required")
    sol = gs.read_solution(args.sol)
    starts = _load_starts(args.starts) if args.starts else [0j]
    coeff = foliation.CoefficientField(sol)
    traces = foliation.trace_many(sol, starts, r=args.r, coeff=coeff)
    extract = foliation.extract_linearization(sol)
    kernel, lam = foliation.kernel_direction(coeff.matrix(sol.u.shape[0] - 2, (0, 0)))
    return {
        "command": "foliate",
        "epsilon": sol.epsilon,
        "traces": [t.to_dict() for t in traces],
        "extraction": extract.to_dict(),
        "centralKernel": {
            "direction": [[complex(c).real, complex(c).imag] for c in kernel],
            "eigenvalue": lam,
        },
    }


def emit_plots(report_paths: Sequence[str], out_dir: str) -> List[str]:
    """Flatten sweep reports into tidy CSVs: one per run plus ``combined.csv``."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written = []
    combined = []
    for path in report_paths:
        p = Path(path)
        if not p.exists():
            raise ValidationError(f"file not found: {p}")
        try:
            rep = json.loads(p.read_text())
        except ValueError as exc:
            raise ValidationError(f"{p}: not JSON") from exc
        if rep.get("schema") != SCHEMA or not isinstance(rep.get("rows"), list):
            raise ValidationError(f"{p}: not a schema-{SCHEMA} sweep report")
        rows = []
        for r in rep["rows"]:
            if not r.get("converged"):
                continue
            ladder = r.get("normLadder") or {}
            try:
                rows.append([r["epsilon"]] + [ladder[f"C{l}"] for l in range(4)] + [r["thirdDerivDiagnostic"]])
            except KeyError as exc:
                raise ValidationError(f"{p}: row lacks {exc}") from exc
        target = out / f"{p.stem}.csv"
        _write_csv(target, PLOT_COLUMNS, rows)
        written.append(str(target))
        combined.extend([p.stem] + row for row in rows)
    target = out / "combined.csv"
    _write_csv(target, ["run"] + PLOT_COLUMNS, combined)
    written.append(str(target))
    return written


def _write_csv(path: Path, header, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([v if isinstance(v, str) else repr(float(v)) for v in row])


def cmd_report(args) -> dict:
    files = emit_plots(args.inputs, args.out_dir)
    return {"command": "report", "files": files}


# parser --------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="lab", description="Kahler geodesic obstruction laboratory")
    parser.add_argument("--threads", type=int, default=None, help="worker threads (fallback: LAB_THREADS)")
    parser.add_argument("--config", default=None, help="key=value file; flags override it")
    parser.add_argument("--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("obstruction", help="obstruction certificate for diagonal (P, Q)")
    p.add_argument("--m", type=int, default=1)
    p.add_argument("--p", default=None, help="diagonal of P, comma-separated")
    p.add_argument("--q", default=None, help="diagonal of Q, comma-separated")
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_obstruction)

    p = sub.add_parser("lemmas", help="dichotomy suite and compatibility search")
    p.add_argument("--m", type=int, default=1)
    p.add_argument("--trials", type=int, default=1000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_lemmas)

    p = sub.add_parser("build-potential", help="symmetric potential with prescribed Hessian")
    p.add_argument("--m", type=int, default=1)
    p.add_argument("--a", default=None, help="Hermitian part: diagonal list or JSON matrix")
    p.add_argument("--b", default=None, help="symmetric part: diagonal list or JSON matrix")
    p.add_argument("--margin", type=float, default=0.1)
    p.add_argument("--L", type=float, default=4.0)
    p.add_argument("--N", type=int, default=64)
    p.add_argument("--out", default=None, help="field binary")
    p.add_argument("--csv", default=None)
    p.add_argument("--report", default=None)
    p.set_defaults(func=cmd_build_potential)

    for name, func in (("solve", cmd_solve), ("sweep", cmd_sweep)):
        p = sub.add_parser(name)
        p.add_argument("--v", default=None, help="boundary field binary")
        p.add_argument("--nt", type=int, default=16)
        p.add_argument("--newton-tol", type=float, default=1e-10)
        p.add_argument("--max-iter", type=int, default=40)
        if name == "solve":
            p.add_argument("--epsilon", type=float, default=None)
            p.add_argument("--out", default=None, help="solution binary")
        else:
            p.add_argument("--schedule", default="0.1,0.05,0.02,0.01")
            p.add_argument("--csv", default=None)
        p.add_argument("--report", default=None)
        p.set_defaults(func=func)

    p = sub.add_parser("foliate", help="trace leaves of a solution")
    p.add_argument("--sol", default=None)
    p.add_argument("--starts", default=None, help="JSON file with a list of [re, im] start points")
    p.add_argument("--r", type=float, default=0.1)
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_foliate)

    p = sub.add_parser("report", help="flatten sweep reports into plot CSVs")
    p.add_argument("--inputs", nargs="*", default=[])
    p.add_argument("--out-dir", default=".")
    p.set_defaults(func=cmd_report)
    return parser


def _read_config(path: str) -> dict:
    p = Path(path)
    if not p.exists():
        raise ValidationError(f"file not found: {p}")
    out = {}
    for n, line in enumerate(p.read_text().splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValidationError(f"{p}:{n}: expected key = value")
        key, value = (s.strip() for s in line.split("=", 1))
        out[key.replace("-", "_")] = value.strip("\"'")
    return out


def _apply_config(parser, argv, args):
    """Re-parse with config values as defaults so explicit flags win."""
    values = _read_config(args.config)
    sub = next(a for a in parser._subparsers._group_actions if isinstance(a, argparse._SubParsersAction))
    subparser = sub.choices[args.command]
    known = {a.dest: a for a in subparser._actions if a.dest != "help"}
    known.update({a.dest: a for a in parser._actions if a.dest not in ("help", "command")})
    unknown = sorted(set(values) - set(known))
    if unknown:
        raise ValidationError(f"unknown config keys: {', '.join(unknown)}")
    for key, raw in values.items():
        action = known[key]
        try:
            conv = action.type(raw) if action.type else raw
        except ValueError as exc:
            raise ValidationError(f"config key {key}: invalid value {raw!r}") from exc
        target = subparser if key in {a.dest for a in subparser._actions} else parser
        target.set_defaults(**{key: conv})
    return parser.parse_args(argv)


OUT_KEYS = {"obstruction": "out", "lemmas": "out", "foliate": "out"}


def main(argv: Optional[Sequence[str]] = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code) if exc.code is not None else 0
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING, format="%(message)s")
    try:
        if args.config:
            args = _apply_config(parser, argv, args)
        result = args.func(args)
        path = getattr(args, "report", None) or getattr(args, OUT_KEYS.get(args.command, ""), None)
        text = _dump(result, path)
        sys.stdout.write(text)
        return 0
    except ValidationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except NumericalError as exc:
        print(f"numerical failure: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 3
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
