"""Sweep configurations over a bundled suite and write run and profile tables.

    python scripts/run_suite.py convex --out results/convex
    python scripts/run_suite.py nonconvex --configs "GOA,C-GOA(r),GLP/NLP-B&B" --jobs 1

Writes runs.csv, profile_time.csv and profile_iterations.csv, and prints a
per-config summary (solved count, oracle mismatches, median NLP-I, total time).
"""
import argparse
import statistics
from pathlib import Path

from oaconvex import bench

DEFAULT = {
    "convex": "OA,C-OA(r),C-OA(c),LP/NLP-B&B,C-LP/NLP-B&B(r),C-LP/NLP-B&B(c)",
    "nonconvex": "GOA,C-GOA(r),C-GOA(c),GLP/NLP-B&B,C-GLP/NLP-B&B(r),C-GLP/NLP-B&B(c)",
}


def summarize(records, oracles):
    by_cfg = {}
    for r in records:
        by_cfg.setdefault(r.config, []).append(r)
    print(f"{'config':<20}{'solved':>8}{'off-oracle':>12}{'median NLP-I':>14}{'time s':>10}")
    for cfg, rs in by_cfg.items():
        solved = [r for r in rs if r.status == "Optimal"]
        off = 0
        for r in solved:
            ref = oracles.get(r.instance)
            if ref is not None and abs(r.objective - ref) > max(1e-5, 1e-3 * abs(ref)):
                off += 1
        med = statistics.median(r.iterations for r in rs)
        print(f"{cfg:<20}{len(solved):>5}/{len(rs):<3}{off:>11}{med:>14g}{sum(r.time for r in rs):>10.1f}")


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("kind", choices=["convex", "nonconvex"])
    ap.add_argument("--configs")
    ap.add_argument("--manifest", help="defaults to the bundled manifest for the kind")
    ap.add_argument("--out", default="results")
    ap.add_argument("--jobs", type=int, default=0, help="worker processes (0 = in process)")
    ap.add_argument("--time-limit", type=float)
    args = ap.parse_args()

    manifest = Path(args.manifest) if args.manifest else bench.bundled_manifest(args.kind)
    instances = bench.read_manifest(manifest)
    configs = [c.strip() for c in (args.configs or DEFAULT[args.kind]).split(",")]
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)

    records = bench.bench(instances, configs, jobs=args.jobs, time_limit=args.time_limit)
    bench.write_records(records, out / "runs.csv")
    for metric in ("time", "iterations"):
        bench.performance_profile(records, metric).write(out / f"profile_{metric}.csv")
    oracles = {p.stem: (bench.load_oracle(p) or {}).get("objective") for p in instances}
    summarize(records, oracles)
    print(f"tables in {out}")


if __name__ == "__main__":
    main()
