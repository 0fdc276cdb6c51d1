"""Instance generation with enumeration oracles, benchmark sweeps and performance profiles."""
from __future__ import annotations

import csv
import itertools
import json
import logging
import math
import multiprocessing as mp
import re
import time
import warnings
from dataclasses import dataclass, fields
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np
from scipy.optimize import minimize

from . import expr as ex
from .model import Model, ModelBuilder, load_model, save_model
from .oa import Algorithm, Scale, SolverOptions, Status, config_label, solve

log = logging.getLogger(__name__)

DATA_DIR = Path(__file__).parent / "data"


# --------------------------------------------------------------------------
# generators


def _r(v, nd=3):
    return float(round(float(v), nd))


def generate_convex(rng: np.random.Generator, name: str) -> Model:
    """min c.x + d.y + sum q x^2 where each binary widens a separable convex
    ball around an anchor point p; affine rows couple everything.

    (x, y) = (p, 0) is feasible by construction.
    """
    nb = int(rng.integers(2, 7))
    nc = int(rng.integers(2, 7))
    mb = ModelBuilder(name, convex=True)
    lo = np.array([_r(-rng.uniform(1, 3)) for _ in range(nc)])
    hi = np.array([_r(rng.uniform(1, 3)) for _ in range(nc)])
    xs = [mb.continuous(f"x{i}", lo[i], hi[i]) for i in range(nc)]
    ys = [mb.binary(f"y{j}") for j in range(nb)]
    p = np.array([_r(v) for v in rng.uniform(lo / 2, hi / 2)])
    c = [_r(v) for v in rng.uniform(-4, 4, nc)]
    q = [_r(v) for v in rng.uniform(0.2, 1.0, nc)]
    d = [_r(v) for v in rng.uniform(0.5, 4.0, nb)]
    mb.minimize(ex.linear_sum(xs, c) + ex.linear_sum(ys, d) + ex.linear_sum([x * x for x in xs], q))
    order = list(rng.permutation(nc))
    for j in range(nb):
        size = int(rng.integers(1, min(3, nc) + 1))
        S = sorted(set([order.pop()] if order else []) | set(rng.choice(nc, size=size, replace=False).tolist()))
        a = [_r(v) for v in rng.uniform(0.5, 2.0, len(S))]
        b = [_r(v) for v in rng.uniform(0, 0.5, len(S))]
        g = ex.linear_sum([(xs[i] - p[i]) ** 2 for i in S], a) + ex.linear_sum([ex.exp(0.5 * xs[i]) for i in S], b)
        base = sum(b_ * math.exp(0.5 * p[i]) for i, b_ in zip(S, b))
        rhs = _r(base + rng.uniform(0.05, 0.5) + 1e-3)
        mb.add(g - _r(rng.uniform(2, 8)) * ys[j], "<=", rhs, name=f"ball{j}")
    while order:  # anchor any variable no ball picked up
        i = order.pop()
        mb.add((xs[i] - p[i]) ** 2 - _r(rng.uniform(2, 8)) * ys[int(rng.integers(nb))], "<=",
               _r(rng.uniform(0.05, 0.5)), name=f"ball_x{i}")
    for k in range(int(rng.integers(1, 3))):
        w = [_r(v) for v in rng.normal(0, 1, nc)]
        v = [_r(v_) for v_ in rng.uniform(0, 1.5, nb)]
        rhs = float(np.dot(w, p)) + rng.uniform(0.5, 2.0)
        mb.add(ex.linear_sum(xs, w) + ex.linear_sum(ys, v), "<=", _r(rhs + 1e-3), name=f"lin{k}")
    return mb.build()


def generate_nonconvex(rng: np.random.Generator, name: str) -> Model:
    """The convex family plus indefinite bilinear terms; 2-3 continuous variables."""
    nb = int(rng.integers(2, 5))
    nc = int(rng.integers(2, 4))
    mb = ModelBuilder(name, convex=False)
    lo = np.array([_r(-rng.uniform(0.5, 2)) for _ in range(nc)])
    hi = np.array([_r(rng.uniform(1, 3)) for _ in range(nc)])
    xs = [mb.continuous(f"x{i}", lo[i], hi[i]) for i in range(nc)]
    ys = [mb.binary(f"y{j}") for j in range(nb)]
    x0 = rng.uniform(lo / 2, hi / 2)
    y0 = rng.integers(0, 2, nb)
    c = [_r(v) for v in rng.normal(0, 1, nc)]
    q = [_r(v) for v in rng.uniform(0.05, 0.5, nc)]
    d = [_r(v) for v in rng.uniform(0.2, 2.0, nb)]
    pairs = list(itertools.combinations(range(nc), 2))
    e = [_r(rng.choice([-1, 1]) * rng.uniform(0.5, 2.0)) for _ in pairs]
    obj = ex.linear_sum(xs, c) + ex.linear_sum(ys, d) + ex.linear_sum([x * x for x in xs], q) \
        + ex.linear_sum([xs[i] * xs[j] for i, j in pairs], e)
    mb.minimize(obj)
    # one bilinear row switched by a binary
    i, j = pairs[int(rng.integers(len(pairs)))]
    s = _r(rng.choice([-1, 1]) * rng.uniform(0.5, 1.5))
    w = [_r(v) for v in rng.normal(0, 0.5, nc)]
    jb = int(rng.integers(nb))
    M = _r(rng.uniform(1, 3))
    val = s * x0[i] * x0[j] + float(np.dot(w, x0)) - M * y0[jb]
    mb.add(s * xs[i] * xs[j] + ex.linear_sum(xs, w) - M * ys[jb], "<=",
           _r(val + rng.uniform(0.05, 0.5) + 1e-3), name="bilin")
    # one separable convex row
    S = sorted(rng.choice(nc, size=2, replace=False))
    a = [_r(v) for v in rng.uniform(0.5, 1.5, 2)]
    p = [_r(v) for v in rng.normal(0, 1, 2)]
    jb2 = int(rng.integers(nb))
    M2 = _r(rng.uniform(1, 3))
    val = sum(a_ * (x0[k] - p_) ** 2 for k, a_, p_ in zip(S, a, p)) - M2 * y0[jb2]
    mb.add(ex.linear_sum([(xs[k] - p_) ** 2 for k, p_ in zip(S, p)], a) - M2 * ys[jb2], "<=",
           _r(val + rng.uniform(0.1, 1.0) + 1e-3), name="conv")
    wl = [_r(v) for v in rng.normal(0, 1, nc)]
    vl = [_r(v) for v in rng.normal(0, 1, nb)]
    rhs = float(np.dot(wl, x0) + np.dot(vl, y0)) + rng.uniform(0.1, 1.0)
    mb.add(ex.linear_sum(xs, wl) + ex.linear_sum(ys, vl), "<=", _r(rhs + 1e-3), name="lin")
    return mb.build()


# --------------------------------------------------------------------------
# enumeration oracle (independent of the package's NLP solvers)


def _slsqp(model: Model, fixed: Dict[int, float], starts: Iterable[np.ndarray]):
    cont = model.continuous_indices
    n = model.n
    bounds = [(model.variables[i].lower, model.variables[i].upper) for i in cont]

    def full(z):
        p = np.zeros(n)
        for i, v in fixed.items():
            p[i] = v
        p[cont] = z
        return p

    f = lambda z: ex.evaluate(model.objective, full(z))
    fg = lambda z: ex.gradient(model.objective, full(z), n)[cont]
    cons = [{"type": "ineq",
             "fun": (lambda z, c=c: -ex.evaluate(c.body, full(z))),
             "jac": (lambda z, c=c: -ex.gradient(c.body, full(z), n)[cont])}
            for c in model.constraints]
    best_f, best_x = math.inf, None
    lo = np.array([b[0] for b in bounds])
    hi = np.array([b[1] for b in bounds])
    for z0 in starts:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            try:
                res = minimize(f, np.clip(z0, lo, hi), jac=fg, method="SLSQP", bounds=bounds,
                               constraints=cons, options={"ftol": 1e-13, "maxiter": 500})
            except Exception:
                continue
        z = np.clip(res.x, lo, hi)
        p = full(z)
        try:
            if model.max_violation(p) > 1e-8:
                continue
            val = ex.evaluate(model.objective, p)
        except Exception:
            continue
        if val < best_f:
            best_f, best_x = val, p
    return best_f, best_x


def enumeration_oracle(model: Model, grid: int = 3, seed: int = 0) -> dict:
    """Enumerate every discrete assignment and solve the continuous rest by
    multi-start SLSQP from a ``grid``-per-axis lattice of starts."""
    ints = model.integer_indices
    cont = model.continuous_indices
    lo = np.array([model.variables[i].lower for i in cont])
    hi = np.array([model.variables[i].upper for i in cont])
    axes = [np.linspace(a, b, grid) for a, b in zip(lo, hi)]
    lattice = [np.array(p) for p in itertools.product(*axes)] if grid >= 2 else []
    rng = np.random.default_rng(seed)
    extra = [rng.uniform(lo, hi) for _ in range(2)]
    ranges = [range(int(model.variables[i].lower), int(model.variables[i].upper) + 1) for i in ints]
    best_f, best_x, feasible = math.inf, None, 0
    for y in itertools.product(*ranges):
        fixed = dict(zip(ints, map(float, y)))
        f, x = _slsqp(model, fixed, [0.5 * (lo + hi)] + lattice + extra)
        if x is not None:
            feasible += 1
            if f < best_f:
                best_f, best_x = f, x
    return {"objective": best_f if math.isfinite(best_f) else None,
            "point": None if best_x is None else [float(v) for v in best_x],
            "feasible_assignments": feasible,
            "method": f"enumeration + SLSQP multistart (lattice {grid}^{len(cont)} + 3 starts)"}


def generate(kind: str, n: int, seed: int, out_dir, oracle: bool = True) -> List[Path]:
    """Write ``n`` instances (and oracle files) of the given kind to ``out_dir``."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    gen = {"convex": generate_convex, "nonconvex": generate_nonconvex}[kind]
    paths = []
    for k in range(n):
        rng = np.random.default_rng([seed, k])
        name = f"{kind}_{seed}_{k:03d}"
        model = gen(rng, name)
        path = out / f"{name}.json"
        save_model(model, path)
        if oracle:
            # any local optimum of a convex instance is global
            grid = 0 if kind == "convex" else 5
            orc = enumeration_oracle(model, grid=grid, seed=seed + k)
            with open(out / f"{name}.oracle.json", "w") as fh:
                json.dump(orc, fh, indent=1)
        paths.append(path)
    with open(out / "manifest.txt", "w") as fh:
        for p in paths:
            fh.write(p.name + "\n")
    return paths


def load_oracle(instance_path) -> Optional[dict]:
    p = Path(instance_path)
    o = p.with_name(p.stem + ".oracle.json")
    if not o.exists():
        return None
    with open(o) as fh:
        return json.load(fh)


def read_manifest(path) -> List[Path]:
    p = Path(path)
    if p.suffix == ".json":
        with open(p) as fh:
            items = json.load(fh)
    else:
        items = [ln.strip() for ln in p.read_text().splitlines() if ln.strip() and not ln.startswith("#")]
    return [(p.parent / it) if not Path(it).is_absolute() else Path(it) for it in items]


def bundled_manifest(kind: str) -> Path:
    return DATA_DIR / kind / "manifest.txt"


# --------------------------------------------------------------------------
# configurations and sweeps


_BASES = {"OA": Algorithm.OA, "LP/NLP-B&B": Algorithm.LPNLP_BB, "GOA": Algorithm.GOA,
          "GLP/NLP-B&B": Algorithm.GLPNLP_BB, "oa": Algorithm.OA, "lpnlp": Algorithm.LPNLP_BB,
          "goa": Algorithm.GOA, "glpnlp": Algorithm.GLPNLP_BB}
_LABEL = re.compile(r"^(C-)?(.+?)(?:\((r|c)\))?$")


def parse_config(label: str, **overrides) -> SolverOptions:
    """``"C-OA(r)"`` and friends to solver options."""
    m = _LABEL.match(label.strip())
    if not m or m.group(2) not in _BASES:
        raise ValueError(f"unknown configuration label {label!r}")
    conv = bool(m.group(1))
    scale = m.group(3) or "r"
    if m.group(3) and not conv:
        raise ValueError(f"scale suffix needs the C- prefix: {label!r}")
    return SolverOptions(algorithm=_BASES[m.group(2)], convexify=conv, subproblem_scale=Scale(scale),
                         **overrides)


@dataclass
class RunRecord:
    instance: str
    config: str
    status: str
    objective: float
    lb: float
    ub: float
    iterations: int
    time: float


COLUMNS = [f.name for f in fields(RunRecord)]


def _run_one(args) -> RunRecord:
    path, label, overrides = args
    name = Path(path).stem
    t0 = time.perf_counter()
    try:
        model = load_model(path)
        opts = parse_config(label, **overrides)
        res = solve(model, opts)
        return RunRecord(name, config_label(opts), res.status.value, res.objective,
                         res.bounds.lb, res.bounds.ub, res.iterations, time.perf_counter() - t0)
    except Exception as exc:  # recorded, never fatal for the sweep
        return RunRecord(name, label, f"Error:{type(exc).__name__}", math.nan, math.nan, math.nan, 0,
                         time.perf_counter() - t0)


def bench(instances: Sequence, configs: Sequence[str], jobs: int = 1,
          time_limit: Optional[float] = None) -> List[RunRecord]:
    """Cross product of instances and configs, ordered by (instance, config).

    ``jobs >= 1`` runs each solve in its own worker process (one task per
    process); ``jobs = 0`` runs in this process.
    """
    overrides = {} if time_limit is None else {"time_limit": time_limit}
    for p in instances:
        m = load_model(p)
        if not m.integer_indices or not m.continuous_indices:
            log.warning("%s lacks a discrete or a continuous variable", Path(p).name)
            warnings.warn(f"{Path(p).name}: needs at least one discrete and one continuous variable")
    for c in configs:
        parse_config(c)
    tasks = [(str(p), c, overrides) for p in instances for c in configs]
    if jobs <= 0:
        recs = [_run_one(t) for t in tasks]
    else:
        ctx = mp.get_context("spawn")
        with ctx.Pool(processes=jobs, maxtasksperchild=1) as pool:
            recs = pool.map(_run_one, tasks, chunksize=1)
    order = {c: k for k, c in enumerate(configs)}
    keyed = sorted(zip(tasks, recs), key=lambda tr: (Path(tr[0][0]).stem, order[tr[0][1]]))
    return [r for _, r in keyed]


def _fmt(v) -> str:
    if isinstance(v, float):
        return repr(v)
    return str(v)


def write_records(records: Sequence[RunRecord], path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(COLUMNS)
        for r in records:
            w.writerow([_fmt(getattr(r, c)) for c in COLUMNS])


class MissingColumn(ValueError):
    pass


def read_records(path) -> List[RunRecord]:
    with open(path, newline="") as fh:
        rd = csv.DictReader(fh)
        missing = [c for c in COLUMNS if c not in (rd.fieldnames or [])]
        if missing:
            raise MissingColumn(f"{path}: missing columns {missing}")
        out = []
        for row in rd:
            out.append(RunRecord(row["instance"], row["config"], row["status"], float(row["objective"]),
                                 float(row["lb"]), float(row["ub"]), int(row["iterations"]),
                                 float(row["time"])))
    return out


# --------------------------------------------------------------------------
# performance profiles


@dataclass
class ProfileTable:
    configs: List[str]
    instances: List[str]
    ratios: Dict[str, List[float]]
    grid: List[float]
    curves: Dict[str, List[float]]

    def fraction(self, config: str, tau: float) -> float:
        r = self.ratios[config]
        return sum(1 for v in r if v <= tau) / len(r) if r else 0.0

    def write(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["ratio"] + self.configs)
            for k, tau in enumerate(self.grid):
                w.writerow([repr(tau)] + [repr(self.curves[c][k]) for c in self.configs])


_FLOOR = {"time": 1e-6, "iterations": 1.0}


def performance_profile(records: Sequence[RunRecord], metric: str = "time",
                        grid: Optional[Sequence[float]] = None) -> ProfileTable:
    """Dolan-More profile: fraction of instances within ratio tau of the best config.

    Unsolved runs get ratio infinity; metrics are floored (1 iteration,
    1 microsecond) so that zero-cost runs keep ratios finite.
    """
    if metric not in _FLOOR:
        raise ValueError("metric must be 'time' or 'iterations'")
    configs: List[str] = []
    instances: List[str] = []
    table: Dict[Tuple[str, str], float] = {}
    for r in records:
        if r.config not in configs:
            configs.append(r.config)
        if r.instance not in instances:
            instances.append(r.instance)
        val = float(getattr(r, metric))
        table[(r.instance, r.config)] = max(val, _FLOOR[metric]) if r.status == Status.OPTIMAL.value else math.inf
    ratios: Dict[str, List[float]] = {c: [] for c in configs}
    for i in instances:
        vals = {c: table.get((i, c), math.inf) for c in configs}
        best = min(vals.values())
        for c in configs:
            ratios[c].append(vals[c] / best if math.isfinite(best) and math.isfinite(vals[c]) else math.inf)
    if grid is None:
        finite = sorted({v for rs in ratios.values() for v in rs if math.isfinite(v)} | {1.0})
        grid = finite
    grid = list(grid)
    curves = {c: [sum(1 for v in ratios[c] if v <= tau) / len(instances) for tau in grid] for c in configs}
    return ProfileTable(configs, instances, ratios, grid, curves)
