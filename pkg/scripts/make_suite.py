"""Regenerate the bundled instance suites (instances, oracle files, manifests).

    python scripts/make_suite.py                 # both kinds, bundled sizes
    python scripts/make_suite.py --kind convex --n 40 --seed 5 --out /tmp/convex
"""
import argparse
import time
from pathlib import Path

from oaconvex import bench

SIZES = {"convex": 30, "nonconvex": 20}


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--kind", choices=["convex", "nonconvex", "both"], default="both")
    ap.add_argument("--n", type=int, help="instances per kind (default: bundled size)")
    ap.add_argument("--seed", type=int, default=11)
    ap.add_argument("--out", help="output directory (default: package data dir, per kind)")
    args = ap.parse_args()
    kinds = ["convex", "nonconvex"] if args.kind == "both" else [args.kind]
    for kind in kinds:
        out = Path(args.out) / kind if args.out else bench.DATA_DIR / kind
        t0 = time.perf_counter()
        paths = bench.generate(kind, args.n or SIZES[kind], args.seed, out)
        print(f"{kind}: {len(paths)} instances in {out} ({time.perf_counter() - t0:.1f}s)")


if __name__ == "__main__":
    main()
