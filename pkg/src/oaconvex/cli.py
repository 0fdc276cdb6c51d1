"""Command line: solve, bench, profile, generate."""
from __future__ import annotations

import argparse
import json
import logging
import math
import sys

from .bench import (bench, generate, parse_config, performance_profile, read_manifest, read_records,
                    write_records, MissingColumn)
from .errors import ModelError, OAConvexError
from .model import load_model
from .oa import Algorithm, Scale, SolverOptions, Status, solve

EXIT = {Status.OPTIMAL: 0, Status.INFEASIBLE: 2, Status.TIME_LIMIT: 3, Status.ITERATION_LIMIT: 3}
ALGS = {"oa": Algorithm.OA, "lpnlp": Algorithm.LPNLP_BB, "goa": Algorithm.GOA, "glpnlp": Algorithm.GLPNLP_BB}


def _num(v):
    return v if math.isfinite(v) else str(v)


def cmd_solve(args) -> int:
    try:
        model = load_model(args.file)
    except json.JSONDecodeError as exc:
        print(f"{args.file}: parse error at line {exc.lineno} column {exc.colno}: {exc.msg}", file=sys.stderr)
        return 1
    except (ModelError, OAConvexError) as exc:
        print(f"{args.file}: invalid model: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"{args.file}: {exc.strerror}", file=sys.stderr)
        return 1
    opts = SolverOptions(algorithm=ALGS[args.alg], convexify=args.convexify, subproblem_scale=Scale(args.scale),
                         eps_abs=args.eps_abs, eps_rel=args.eps_rel, time_limit=args.time_limit,
                         feasibility_norm=args.norm, trace_path=args.trace)
    res = solve(model, opts)
    b = res.bounds
    print(f"{res.status.value} {res.objective:.10g}")
    gap = b.ub - b.lb if math.isfinite(b.ub) and math.isfinite(b.lb) else math.inf
    print(f"bounds [{b.lb:.10g}, {b.ub:.10g}] gap {gap:.3g}")
    print(f"iterations {res.iterations}  time {res.time:.3f}s" + ("  (heuristic)" if res.heuristic else ""))
    if args.json:
        out = {
            "status": res.status.value,
            "objective": _num(res.objective),
            "lb": _num(b.lb),
            "ub": _num(b.ub),
            "iterations": res.iterations,
            "time": res.time,
            "heuristic": res.heuristic,
            "point": None if res.incumbent is None else dict(zip((v.name for v in model.variables),
                                                                 map(float, res.incumbent))),
        }
        print(json.dumps(out))
    return EXIT[res.status]


def cmd_bench(args) -> int:
    try:
        instances = read_manifest(args.manifest)
    except (OSError, json.JSONDecodeError) as exc:
        print(f"{args.manifest}: {exc}", file=sys.stderr)
        return 1
    configs = [c.strip() for c in args.configs.split(",") if c.strip()]
    try:
        for c in configs:
            parse_config(c)
    except ValueError as exc:
        print(exc, file=sys.stderr)
        return 1
    recs = bench(instances, configs, jobs=args.jobs, time_limit=args.time_limit)
    write_records(recs, args.out)
    print(f"{len(recs)} runs written to {args.out}")
    return 0


def cmd_profile(args) -> int:
    try:
        recs = read_records(args.csv)
    except MissingColumn as exc:
        print(exc, file=sys.stderr)
        return 1
    table = performance_profile(recs, args.metric)
    table.write(args.out)
    print(f"profile over {len(table.instances)} instances, {len(table.configs)} configs -> {args.out}")
    return 0


def cmd_generate(args) -> int:
    if args.n < 1:
        print("--n must be at least 1", file=sys.stderr)
        return 1
    paths = generate(args.kind, args.n, args.seed, args.out, oracle=not args.no_oracle)
    print(f"{len(paths)} {args.kind} instances in {args.out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="oaconvex", description="Outer-approximation MINLP solvers")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="cmd", required=True)

    s = sub.add_parser("solve", help="solve one model file")
    s.add_argument("file")
    s.add_argument("--alg", choices=sorted(ALGS), default="oa")
    s.add_argument("--convexify", action="store_true")
    s.add_argument("--scale", choices=["r", "c"], default="r")
    s.add_argument("--eps-abs", type=float, default=1e-5)
    s.add_argument("--eps-rel", type=float, default=1e-3)
    s.add_argument("--time-limit", type=float, default=900.0)
    s.add_argument("--norm", choices=["l1", "linf"], default="l1")
    s.add_argument("--trace")
    s.add_argument("--json", action="store_true")
    s.set_defaults(func=cmd_solve)

    b = sub.add_parser("bench", help="run configs over a manifest of instances")
    b.add_argument("manifest")
    b.add_argument("--configs", required=True, help='comma separated labels, e.g. "OA,C-OA(r),LP/NLP-B&B"')
    b.add_argument("--out", required=True)
    b.add_argument("--jobs", type=int, default=1, help="worker processes (0 = in process)")
    b.add_argument("--time-limit", type=float, default=None)
    b.set_defaults(func=cmd_bench)

    f = sub.add_parser("profile", help="performance profile from a bench CSV")
    f.add_argument("csv")
    f.add_argument("--metric", choices=["time", "iterations"], default="time")
    f.add_argument("--out", required=True)
    f.set_defaults(func=cmd_profile)

    g = sub.add_parser("generate", help="write random instances with oracle values")
    g.add_argument("kind", choices=["convex", "nonconvex"])
    g.add_argument("--n", type=int, required=True)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--out", required=True)
    g.add_argument("--no-oracle", action="store_true")
    g.set_defaults(func=cmd_generate)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
