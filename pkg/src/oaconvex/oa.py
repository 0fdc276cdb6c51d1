"""Outer approximation (multi-tree) and LP/NLP branch and bound (single tree),
each in a convex variant (Taylor cuts, local NLP) and a global variant
(McCormick underestimators, spatial B&B subproblems, no-good cuts).
"""
from __future__ import annotations

import csv
import hashlib
import logging
import math
import time
from dataclasses import dataclass, field
from enum import Enum
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from . import expr as ex
from .errors import DomainError, NonBinaryError, UnboundedBox
from .lp import CallbackAction, LinearProgram, LpStatus, MilpOptions, MilpStatus, solve_lp, solve_milp
from .model import Box, Convexity, Model, binary_expand, fix_integers, make_feasibility, relax_integrality
from .nlp import NlpOptions, NlpSolution, NlpStatus, solve_global, solve_local
from .presolve import PresolveOptions, PresolveResult, linear_rows, presolve
from .relaxation import CutKind, LinearCut, affine_underestimator, cut_as_expr, no_good_cut

log = logging.getLogger(__name__)


class Algorithm(str, Enum):
    OA = "OA"
    LPNLP_BB = "LpNlpBB"
    GOA = "GOA"
    GLPNLP_BB = "GLpNlpBB"

    @property
    def is_global(self) -> bool:
        return self in (Algorithm.GOA, Algorithm.GLPNLP_BB)

    @property
    def single_tree(self) -> bool:
        return self in (Algorithm.LPNLP_BB, Algorithm.GLPNLP_BB)


class Scale(str, Enum):
    REDUCED = "r"
    COMPLETE = "c"


class Status(str, Enum):
    OPTIMAL = "Optimal"
    INFEASIBLE = "Infeasible"
    TIME_LIMIT = "TimeLimit"
    ITERATION_LIMIT = "IterationLimit"


@dataclass
class SolverOptions:
    algorithm: Algorithm = Algorithm.OA
    convexify: bool = False
    subproblem_scale: Scale = Scale.REDUCED
    eps_abs: float = 1e-5
    eps_rel: float = 1e-3
    time_limit: float = 900.0
    feasibility_norm: str = "l1"
    max_iterations: int = 1000
    violated_only: bool = False  # restrict cuts to rows violated at the point
    mu_bound: float = 1e12
    binary_expansion: bool = True
    nlp: NlpOptions = field(default_factory=NlpOptions)
    presolve: PresolveOptions = field(default_factory=PresolveOptions)
    trace_path: Optional[str] = None

    def __post_init__(self):
        self.algorithm = Algorithm(self.algorithm)
        self.subproblem_scale = Scale(self.subproblem_scale)
        if not (self.eps_abs > 0 and self.eps_rel > 0):
            raise ValueError("eps_abs and eps_rel must be positive")
        if self.feasibility_norm not in ("l1", "linf"):
            raise ValueError("feasibility_norm must be 'l1' or 'linf'")

    def gap(self, ub: float) -> float:
        return max(self.eps_abs, self.eps_rel * abs(ub)) if math.isfinite(ub) else self.eps_abs


@dataclass
class Bounds:
    lb: float = -math.inf
    ub: float = math.inf

    @property
    def gap(self) -> float:
        return self.ub - self.lb


@dataclass
class IterationLog:
    iteration: int
    y: Tuple[float, ...]
    master_objective: float
    lb: float
    ub: float
    subproblem_status: str
    cuts_added: Dict[str, int]
    cuts_total: int
    elapsed: float
    heuristic: bool = False

    @property
    def y_hash(self) -> str:
        key = ",".join(f"{v:g}" for v in self.y)
        return hashlib.sha1(key.encode()).hexdigest()[:12]


@dataclass
class SolveResult:
    status: Status
    incumbent: Optional[np.ndarray]
    objective: float
    bounds: Bounds
    log: List[IterationLog]
    algorithm: str = ""
    first_lb: float = -math.inf
    heuristic: bool = False
    time: float = 0.0
    presolve: Optional[PresolveResult] = None

    @property
    def iterations(self) -> int:
        """Number of fixed-integer NLP subproblems solved."""
        return len(self.log)


def config_label(opts: SolverOptions) -> str:
    base = {Algorithm.OA: "OA", Algorithm.LPNLP_BB: "LP/NLP-B&B",
            Algorithm.GOA: "GOA", Algorithm.GLPNLP_BB: "GLP/NLP-B&B"}[opts.algorithm]
    if opts.convexify:
        return f"C-{base}({opts.subproblem_scale.value})"
    return base


# --------------------------------------------------------------------------
# cuts


def oa_cuts(model: Model, point, convex_mode: bool = True, box: Optional[Box] = None,
            violated_only: bool = False) -> List[LinearCut]:
    """Objective epigraph cut plus one cut per nonlinear row at ``point``.

    Convex mode linearizes the functions themselves; otherwise the
    linearization of each function's McCormick relaxation over ``box`` is
    used, which underestimates it on the whole box.
    """
    p = np.asarray(point, dtype=float)[: model.n]
    disc = model.integer_indices
    box = model.box() if box is None else box
    out: List[LinearCut] = []

    def one(e, epigraph, source):
        try:
            if convex_mode:
                val = ex.evaluate(e, p)
                g = ex.gradient(e, p, model.n)
                coeffs = {i: float(a) for i, a in enumerate(g) if a != 0.0}
                rhs = float(g @ p) - val
                kind = CutKind.OA_OBJECTIVE if epigraph else CutKind.OA_CONSTRAINT
                return LinearCut.from_coeffs(coeffs, rhs, kind, disc, source=source,
                                             mu=-1.0 if epigraph else 0.0)
            kind = CutKind.OA_OBJECTIVE if epigraph else CutKind.OA_CONSTRAINT
            return affine_underestimator(e, box, p, epigraph, kind, disc, source)
        except (DomainError, UnboundedBox, ValueError, OverflowError) as exc:
            log.warning("cut skipped at %s: %s", source, exc)
            return None

    if not model.objective_is_linear:
        c = one(model.objective, True, "oa:objective")
        if c is not None:
            out.append(c)
    for row in model.nonlinear_constraints:
        if violated_only:
            try:
                if ex.evaluate(row.body, p) <= 0:
                    continue
            except DomainError:
                pass
        c = one(row.body, False, f"oa:{row.name or row.index}")
        if c is not None:
            out.append(c)
    return out


# --------------------------------------------------------------------------
# engine


class _Engine:
    def __init__(self, model: Model, options: SolverOptions):
        self.t0 = time.perf_counter()
        self.opts = options
        self.original = model
        self.global_mode = options.algorithm.is_global
        self.expansion = None
        if self.global_mode and any(not self._is_binary(v) for v in model.variables if v.is_discrete):
            if not options.binary_expansion:
                raise NonBinaryError("global variants need binary discrete variables")
            model, self.expansion = binary_expand(model)
        self.model = model
        self.heuristic = not self.global_mode and model.convexity is not Convexity.DECLARED_CONVEX
        self.ints = model.integer_indices
        self.box = model.box()
        self.pre: Optional[PresolveResult] = None
        self.pre_cuts: List[LinearCut] = []
        self.k = 0
        self.aux_lo = np.zeros(0)
        self.aux_hi = np.zeros(0)
        self.log: List[IterationLog] = []
        self.bounds = Bounds()
        self.incumbent: Optional[np.ndarray] = None
        self.visited: Dict[Tuple[float, ...], float] = {}
        self.cuts: List[LinearCut] = []
        self.first_lb = -math.inf
        self._trace = None

    @staticmethod
    def _is_binary(v) -> bool:
        return v.lower >= 0.0 and v.upper <= 1.0

    def elapsed(self) -> float:
        return time.perf_counter() - self.t0

    def out_of_time(self) -> bool:
        return self.elapsed() > self.opts.time_limit

    # -- setup ---------------------------------------------------------
    def initialize(self) -> Optional[Status]:
        m = self.model
        if self.opts.convexify:
            self.pre = presolve(m, self.opts.presolve)
            if self.pre.infeasible:
                return Status.INFEASIBLE
            self.box = self.pre.tightened
            self.pre_cuts = list(self.pre.cuts)
            dec = self.pre.decomposition
            if dec is not None:
                self.k = len(dec.aux)
                self.aux_lo = np.array([a.bounds.lo for a in dec.aux])
                self.aux_hi = np.array([a.bounds.hi for a in dec.aux])
        self.sub_model = m.with_bounds(self.box)
        if self.opts.convexify and self.opts.subproblem_scale is Scale.COMPLETE and self.pre_cuts:
            dec = self.pre.decomposition
            var_of = m.var_expr
            extra = [cut_as_expr(c, dec, var_of) for c in self.pre_cuts
                     if c.mu == 0.0 and c.source.startswith("envelope")]
            self.sub_model = self.sub_model.with_constraints(extra, prefix="envelope")
        self.n = m.n
        self.width = self.n + self.k + 1
        self.mu = self.n + self.k
        return None

    def master_lp(self) -> LinearProgram:
        m = self.model
        c = np.zeros(self.width)
        c[self.mu] = 1.0
        lo = np.concatenate([self.box.lo, self.aux_lo, [-self.opts.mu_bound]])
        hi = np.concatenate([self.box.hi, self.aux_hi, [self.opts.mu_bound]])
        if math.isfinite(self.bounds.ub):
            hi[self.mu] = min(hi[self.mu], self.bounds.ub)
        A, b = linear_rows(m, self.pre_cuts + self.cuts, self.width, self.mu)
        rows, rhs = [A], [b]
        if m.objective_is_linear:
            coeffs, const = ex.linear_coefficients(m.objective)
            r = np.zeros(self.width)
            for i, a in coeffs.items():
                r[i] = a
            r[self.mu] = -1.0
            rows.append(r[None, :])
            rhs.append(np.array([-const]))
        return LinearProgram(c, np.vstack(rows), np.concatenate(rhs),
                             np.zeros(sum(len(x) for x in rhs), bool), lo, hi)

    def dense(self, cuts: Sequence[LinearCut]):
        return [(c.dense(self.width, self.mu), c.rhs) for c in cuts]

    def new_cuts(self, point) -> List[LinearCut]:
        return oa_cuts(self.model, point, not self.global_mode, self.box, self.opts.violated_only)

    # -- subproblems ---------------------------------------------------
    def y_of(self, x) -> Tuple[float, ...]:
        return tuple(float(round(x[i])) for i in self.ints)

    def solve_fixed(self, y: Tuple[float, ...], start) -> NlpSolution:
        fixed = fix_integers(self.sub_model, dict(zip(self.ints, y)))
        if self.global_mode:
            try:
                return solve_global(fixed, self.opts.nlp, start=start)
            except UnboundedBox:
                return solve_local(fixed, start, self.opts.nlp)
        return solve_local(fixed, start, self.opts.nlp)

    def solve_feasibility(self, y, start) -> Optional[np.ndarray]:
        fm = make_feasibility(self.model.with_bounds(self.box), dict(zip(self.ints, y)),
                              self.opts.feasibility_norm)
        x0 = None
        if start is not None:
            x0 = np.concatenate([np.asarray(start, float)[: self.n], np.zeros(fm.n - self.n)])
        sol = solve_local(fm, x0, self.opts.nlp)
        if sol.point is None:
            return None
        return sol.point[: self.n]

    def subproblem(self, y, start):
        """Solve NLP-I (or NLP-f); returns (status label, value, point, cuts)."""
        sol = self.solve_fixed(y, start)
        cuts: List[LinearCut] = []
        heuristic = False
        if sol.feasible:
            value = sol.objective
            point = sol.point
            cuts += self.new_cuts(point)
            label = sol.status.value
            if self.global_mode and sol.status is not NlpStatus.GLOBAL_OPTIMAL:
                heuristic = True
            if value < self.bounds.ub:
                self.bounds.ub = value
                self.incumbent = np.asarray(point, float).copy()
        else:
            value = math.inf
            label = sol.status.value
            point = self.solve_feasibility(y, start)
            if point is not None:
                cuts += self.new_cuts(point)
            if sol.status is NlpStatus.FAILED:
                heuristic = True
        exclude = self.global_mode or (sol.status is NlpStatus.FAILED)
        if exclude and self.ints and all(self._is_binary(self.model.variables[i]) for i in self.ints):
            cuts.append(no_good_cut(dict(zip(self.ints, y))))
        self.visited[y] = value
        if heuristic:
            self.heuristic = True
        return label, value, point, cuts, heuristic

    # -- bookkeeping ---------------------------------------------------
    def raise_lb(self, bound: float):
        self.bounds.lb = max(self.bounds.lb, min(bound, self.bounds.ub))

    def converged(self) -> bool:
        return self.bounds.ub - self.bounds.lb <= self.opts.gap(self.bounds.ub)

    def record(self, y, master_obj, label, cuts, heuristic=False):
        counts: Dict[str, int] = {}
        for c in cuts:
            counts[c.kind.value] = counts.get(c.kind.value, 0) + 1
        rec = IterationLog(len(self.log) + 1, tuple(y), master_obj, self.bounds.lb, self.bounds.ub,
                           label, counts, len(self.cuts), self.elapsed(), heuristic)
        self.log.append(rec)
        if self.opts.trace_path:
            new = self._trace is None
            with open(self.opts.trace_path, "w" if new else "a", newline="") as fh:
                w = csv.writer(fh)
                if new:
                    w.writerow(["iter", "lb", "ub", "gap", "y_assignment_hash",
                                "subproblem_status", "cuts_total", "time_s"])
                    self._trace = True
                w.writerow([rec.iteration, rec.lb, rec.ub, rec.ub - rec.lb, rec.y_hash,
                            rec.subproblem_status, rec.cuts_total, f"{rec.elapsed:.6f}"])

    def result(self, status: Status) -> SolveResult:
        x = self.incumbent
        if x is not None and self.expansion is not None:
            x = self.expansion.restrict(x)
        obj = self.bounds.ub if x is not None else math.inf
        return SolveResult(status, x, obj, Bounds(self.bounds.lb, self.bounds.ub), self.log,
                           config_label(self.opts), self.first_lb, self.heuristic,
                           self.elapsed(), self.pre)

    def milp_options(self, deadline_left: float, exact: bool = False) -> MilpOptions:
        # the master must be at least as exact as the outer loop; the first
        # one is closed completely so its bound is comparable across configs
        if exact:
            return MilpOptions(abs_gap=1e-11, rel_gap=0.0, time_limit=max(deadline_left, 0.0))
        return MilpOptions(abs_gap=min(1e-7, self.opts.eps_abs * 1e-2), rel_gap=1e-7,
                           time_limit=max(deadline_left, 0.0))

    # -- shared start --------------------------------------------------
    def relaxed_start(self) -> Optional[Status]:
        """Solve the continuous relaxation; its point seeds the first cuts."""
        if not self.ints:
            if self.global_mode:
                sol = solve_global(self.sub_model, self.opts.nlp)
                certified = sol.status is NlpStatus.GLOBAL_OPTIMAL
            else:
                sol = solve_local(self.sub_model, None, self.opts.nlp)
                certified = sol.feasible
            if not sol.feasible:
                return Status.INFEASIBLE if sol.status is NlpStatus.INFEASIBLE else Status.ITERATION_LIMIT
            self.incumbent = np.asarray(sol.point, float)
            self.bounds.ub = sol.objective
            self.bounds.lb = sol.bound if self.global_mode else sol.objective
            self.bounds.lb = min(self.bounds.lb, self.bounds.ub)
            self.first_lb = self.bounds.lb
            self.heuristic |= not certified
            return Status.OPTIMAL
        # same relaxation with or without presolve, so both masters share
        # these first cuts and the presolved one can only be tighter
        sol = solve_local(relax_integrality(self.model), None, self.opts.nlp)
        if sol.status is NlpStatus.INFEASIBLE and not self.global_mode and not self.heuristic:
            return Status.INFEASIBLE
        point = sol.point if sol.point is not None else self.box.midpoint()
        self.start_point = self.box.clip(point)
        self.cuts += self.new_cuts(self.start_point if self.global_mode else point)
        return None

    # -- multi-tree ----------------------------------------------------
    def run_oa(self) -> SolveResult:
        status = self.initialize() or self.relaxed_start()
        if status is not None:
            return self.result(status)
        for it in range(self.opts.max_iterations):
            if self.out_of_time():
                return self.result(Status.TIME_LIMIT)
            left = self.opts.time_limit - self.elapsed()
            res = solve_milp(self.master_lp(), self.ints, options=self.milp_options(left, exact=it == 0))
            if res.status is MilpStatus.TIME_LIMIT:
                self.raise_lb(res.bound)
                return self.result(Status.TIME_LIMIT)
            if res.status is MilpStatus.INFEASIBLE or res.x is None:
                if self.incumbent is None:
                    return self.result(Status.INFEASIBLE)
                self.raise_lb(self.bounds.ub)
                return self.result(Status.OPTIMAL)
            if it == 0:
                self.first_lb = res.bound
            self.raise_lb(res.bound)
            if self.converged():
                return self.result(Status.OPTIMAL)
            y = self.y_of(res.x)
            if y in self.visited:
                # an explored assignment came back: nothing better is left for it
                if all(self._is_binary(self.model.variables[i]) for i in self.ints):
                    self.cuts.append(no_good_cut(dict(zip(self.ints, y))))
                    continue
                self.heuristic = True
                self.raise_lb(res.objective)
                return self.result(Status.OPTIMAL if self.converged() else Status.ITERATION_LIMIT)
            label, value, point, cuts, heur = self.subproblem(y, res.x[: self.n])
            self.cuts += cuts
            self.record(y, res.objective, label, cuts, heur)
            if self.converged():
                return self.result(Status.OPTIMAL)
        return self.result(Status.ITERATION_LIMIT)

    # -- single tree ---------------------------------------------------
    def run_single_tree(self) -> SolveResult:
        status = self.initialize() or self.relaxed_start()
        if status is not None:
            return self.result(status)
        lp = self.master_lp()
        tol = self.opts.gap
        root = solve_lp(lp)
        if root.status is LpStatus.INFEASIBLE:
            return self.result(Status.INFEASIBLE)
        if root.status is LpStatus.OPTIMAL:
            self.first_lb = root.objective

        def callback(x, obj, ctx):
            self.raise_lb(ctx.bound)
            y = self.y_of(x)
            binary = all(self._is_binary(self.model.variables[i]) for i in self.ints)
            if y in self.visited:
                value = self.visited[y]
                if obj >= value - tol(value) and not self.global_mode:
                    return CallbackAction(True, cutoff=self.bounds.ub)
                if binary:
                    return CallbackAction.reject(self.dense([no_good_cut(dict(zip(self.ints, y)))]),
                                                 cutoff=self.bounds.ub)
                self.heuristic = True
                return CallbackAction(True, cutoff=self.bounds.ub)
            if self.out_of_time():
                return CallbackAction.reject([], cutoff=self.bounds.ub)
            label, value, point, cuts, heur = self.subproblem(y, x[: self.n])
            self.cuts += cuts
            self.record(y, obj, label, cuts, heur)
            if not self.global_mode and math.isfinite(value) and obj >= value - tol(value):
                return CallbackAction(True, self.dense(cuts), cutoff=self.bounds.ub)
            if not cuts:
                return CallbackAction.reject([], cutoff=self.bounds.ub)
            return CallbackAction.reject(self.dense(cuts), cutoff=self.bounds.ub)

        left = self.opts.time_limit - self.elapsed()
        mopts = self.milp_options(left)
        # nodes within the outer tolerance of the incumbent are not worth exploring
        mopts.abs_gap, mopts.rel_gap = self.opts.eps_abs, self.opts.eps_rel
        res = solve_milp(lp, self.ints, callback, mopts)
        if res.status is MilpStatus.TIME_LIMIT or self.out_of_time():
            self.raise_lb(res.bound)
            return self.result(Status.TIME_LIMIT)
        if self.incumbent is None:
            return self.result(Status.INFEASIBLE)
        self.raise_lb(res.bound)
        if not self.converged():
            # the tree closed: every node was pruned within tolerance of the incumbent
            self.raise_lb(self.bounds.ub - self.opts.gap(self.bounds.ub))
        return self.result(Status.OPTIMAL)


def solve_oa(model: Model, options: Optional[SolverOptions] = None) -> SolveResult:
    opts = options or SolverOptions()
    if opts.algorithm.single_tree:
        opts = _with_algorithm(opts, Algorithm.GOA if opts.algorithm.is_global else Algorithm.OA)
    return _Engine(model, opts).run_oa()


def solve_lpnlp_bb(model: Model, options: Optional[SolverOptions] = None) -> SolveResult:
    opts = options or SolverOptions(algorithm=Algorithm.LPNLP_BB)
    if not opts.algorithm.single_tree:
        opts = _with_algorithm(opts, Algorithm.GLPNLP_BB if opts.algorithm.is_global else Algorithm.LPNLP_BB)
    return _Engine(model, opts).run_single_tree()


def solve_goa(model: Model, options: Optional[SolverOptions] = None) -> SolveResult:
    return solve_oa(model, _with_algorithm(options or SolverOptions(), Algorithm.GOA))


def solve_glpnlp_bb(model: Model, options: Optional[SolverOptions] = None) -> SolveResult:
    return solve_lpnlp_bb(model, _with_algorithm(options or SolverOptions(), Algorithm.GLPNLP_BB))


def solve(model: Model, options: Optional[SolverOptions] = None) -> SolveResult:
    """Dispatch on ``options.algorithm``."""
    opts = options or SolverOptions()
    if opts.algorithm.single_tree:
        return _Engine(model, opts).run_single_tree()
    return _Engine(model, opts).run_oa()


def solve_subproblem(model: Model, y, options: Optional[SolverOptions] = None) -> NlpSolution:
    """NLP-I for one integer assignment, built exactly as the outer loop builds it
    (presolve box and, at complete scale, the envelope rows)."""
    eng = _Engine(model, options or SolverOptions())
    y = tuple(float(v) for v in y)
    if eng.initialize() is not None or not all(eng.box.lo[i] <= v <= eng.box.hi[i] for i, v in zip(eng.ints, y)):
        return NlpSolution(NlpStatus.INFEASIBLE, None, math.inf)
    return eng.solve_fixed(y, None)


def _with_algorithm(opts: SolverOptions, alg: Algorithm) -> SolverOptions:
    from dataclasses import replace
    return replace(opts, algorithm=alg)
