"""Continuous subproblem solvers.

``solve_local`` is an augmented-Lagrangian method whose bound-constrained
inner problems go to L-BFGS-B.  ``solve_global`` is a spatial branch and
bound on top of it, with LP lower bounds from envelope cuts.
"""
from __future__ import annotations

import csv
import heapq
import math
import time
from dataclasses import dataclass, field
from enum import Enum
from typing import List, Optional, Tuple

import numpy as np
from scipy.optimize import minimize, nnls

from . import expr as ex
from .errors import DomainError, IterationLimit, UnboundedBox
from .lp import LinearProgram, LpStatus, solve_lp
from .model import Box, Model
from .presolve import PROVEN_INFEASIBLE, _Empty, fbbt, linear_rows, propagate_row
from .relaxation import (AvmDecomposition, TangentPolicy, avm_decompose, convexification_cuts,
                         factor_cuts)


class NlpStatus(str, Enum):
    LOCAL_OPTIMAL = "LocalOptimal"
    GLOBAL_OPTIMAL = "GlobalOptimal"
    INFEASIBLE = "Infeasible"
    FAILED = "Failed"


@dataclass
class NlpOptions:
    feastol: float = 1e-7
    kkttol: float = 1e-6
    max_outer: int = 40
    max_inner: int = 2000
    rho0: float = 10.0
    rho_max: float = 1e10
    multistart: int = 0
    seed: int = 0
    # spatial branch and bound
    eps_abs: float = 1e-5
    eps_rel: float = 1e-4
    node_limit: int = 5000
    time_limit: Optional[float] = None
    cut_rounds: int = 2
    local_every: int = 6
    trace_path: Optional[str] = None


@dataclass
class NlpSolution:
    status: NlpStatus
    point: Optional[np.ndarray]
    objective: float
    kkt_residual: float = math.inf
    violation: float = math.inf
    multipliers: Optional[np.ndarray] = None
    iterations: int = 0
    bound: float = -math.inf  # certified lower bound (global solves)
    nodes: int = 0

    @property
    def feasible(self) -> bool:
        return self.status in (NlpStatus.LOCAL_OPTIMAL, NlpStatus.GLOBAL_OPTIMAL)


# --------------------------------------------------------------------------
# compiled problem data


class _Problem:
    """Objective, nonlinear rows (compiled) and linear rows (as a matrix)."""

    def __init__(self, model: Model, box: Optional[Box] = None):
        box = model.box() if box is None else box
        self.n = model.n
        self.lo = box.lo.astype(float).copy()
        self.hi = box.hi.astype(float).copy()
        self.f_val, self.f_grad = ex.compile_expr(model.objective)
        nl = model.nonlinear_constraints
        self.g = [ex.compile_expr(c.body) for c in nl]
        A, b = [], []
        for c in model.linear_constraints:
            coeffs, const = ex.linear_coefficients(c.body)
            row = np.zeros(self.n)
            for i, a in coeffs.items():
                row[i] = a
            A.append(row)
            b.append(-const)
        self.A = np.array(A).reshape(-1, self.n)
        self.b = np.array(b)
        self.m_nl = len(self.g)
        self.m = self.m_nl + len(self.b)

    def objective(self, x) -> Tuple[float, np.ndarray]:
        g = [0.0] * self.n
        v = self.f_grad(list(x), g)
        return v, np.array(g)

    def constraints(self, x, want_jac: bool = True):
        xs = list(x)
        vals = np.empty(self.m)
        jac = np.zeros((self.m, self.n)) if want_jac else None
        for j, (val, grad) in enumerate(self.g):
            if want_jac:
                gj = [0.0] * self.n
                vals[j] = grad(xs, gj)
                jac[j] = gj
            else:
                vals[j] = val(xs)
        if len(self.b):
            vals[self.m_nl:] = self.A @ x - self.b
            if want_jac:
                jac[self.m_nl:] = self.A
        return vals, jac

    def violation(self, x) -> float:
        vals, _ = self.constraints(x, want_jac=False)
        return float(np.max(vals, initial=0.0))

    def start(self, x0=None) -> np.ndarray:
        if x0 is None:
            x0 = np.zeros(self.n)
            for i in range(self.n):
                lo, hi = self.lo[i], self.hi[i]
                if math.isfinite(lo) and math.isfinite(hi):
                    x0[i] = 0.5 * (lo + hi)
                elif math.isfinite(lo):
                    x0[i] = lo
                elif math.isfinite(hi):
                    x0[i] = hi
        x0 = np.asarray(x0, dtype=float)[: self.n]
        return np.minimum(np.maximum(x0, self.lo), self.hi)

    def bounds(self):
        return [(None if not math.isfinite(a) else a, None if not math.isfinite(b) else b)
                for a, b in zip(self.lo, self.hi)]


_BIG = 1e30


def kkt_residual(prob: _Problem, x, lam) -> float:
    """Scaled max-norm of projected stationarity and complementarity."""
    _, gf = prob.objective(x)
    vals, jac = prob.constraints(x)
    r = gf + (jac.T @ lam if prob.m else 0.0)
    tol = 1e-9
    at_lo = x <= prob.lo + tol * (1 + np.abs(prob.lo))
    at_hi = x >= prob.hi - tol * (1 + np.abs(prob.hi))
    r = np.where(at_lo & at_hi, 0.0, r)
    r = np.where(at_lo & ~at_hi, np.minimum(r, 0.0), r)
    r = np.where(at_hi & ~at_lo, np.maximum(r, 0.0), r)
    scale = max(1.0, float(np.max(np.abs(gf), initial=0.0)))
    stat = float(np.max(np.abs(r), initial=0.0))
    comp = float(np.max(np.abs(lam * np.minimum(vals, 0.0)), initial=0.0)) if prob.m else 0.0
    return max(stat, comp) / scale


def refined_kkt_residual(prob: _Problem, x, lam, active_tol: float = 1e-7) -> Tuple[float, np.ndarray]:
    """KKT residual with multipliers refit by nonnegative least squares over
    the near-active rows and box sides; the smaller of the two is kept."""
    base = kkt_residual(prob, x, lam)
    _, gf = prob.objective(x)
    vals, jac = prob.constraints(x)
    scale = max(1.0, float(np.max(np.abs(gf), initial=0.0)))
    act = np.flatnonzero(vals >= -active_tol * scale) if prob.m else np.array([], int)
    tol = 1e-9
    at_lo = np.flatnonzero(x <= prob.lo + tol * (1 + np.abs(prob.lo)))
    at_hi = np.flatnonzero(x >= prob.hi - tol * (1 + np.abs(prob.hi)))
    cols = [jac[act].T] if len(act) else []
    eye = np.eye(prob.n)
    if len(at_lo):
        cols.append(-eye[:, at_lo])
    if len(at_hi):
        cols.append(eye[:, at_hi])
    if not cols:
        return base, lam
    A = np.hstack(cols)
    mult, _ = nnls(A, -gf)
    new = np.zeros(prob.m)
    new[act] = mult[: len(act)]
    r = gf + A @ mult
    comp = float(np.max(np.abs(new * np.minimum(vals, 0.0)), initial=0.0)) if prob.m else 0.0
    res = max(float(np.max(np.abs(r), initial=0.0)), comp) / scale
    return (res, new) if res < base else (base, lam)


def _al_value(prob: _Problem, lam, rho):
    def fun(x):
        try:
            f, gf = prob.objective(x)
            vals, jac = prob.constraints(x)
        except DomainError:
            return _BIG, np.zeros(prob.n)
        if not math.isfinite(f) or not np.all(np.isfinite(vals)):
            return _BIG, np.zeros(prob.n)
        if prob.m:
            s = np.maximum(0.0, lam + rho * vals)
            f = f + (float(s @ s) - float(lam @ lam)) / (2 * rho)
            gf = gf + jac.T @ s
        return f, gf
    return fun


def _inner(prob: _Problem, fun, x, opts: NlpOptions):
    res = minimize(fun, x, jac=True, method="L-BFGS-B", bounds=prob.bounds(),
                   options={"maxiter": opts.max_inner, "ftol": 1e-15, "gtol": 1e-11, "maxcor": 20})
    return np.minimum(np.maximum(res.x, prob.lo), prob.hi), res.nit


def _feasibility_phase(prob: _Problem, x, opts: NlpOptions) -> Tuple[np.ndarray, float]:
    """Minimize half the squared positive violations over the box."""
    def fun(z):
        try:
            vals, jac = prob.constraints(z)
        except DomainError:
            return _BIG, np.zeros(prob.n)
        v = np.maximum(vals, 0.0)
        return 0.5 * float(v @ v), jac.T @ v

    best, best_v = x, prob_violation_safe(prob, x)
    for z0 in (x, prob.start()):
        z, _ = _inner(prob, fun, z0, opts)
        v = prob_violation_safe(prob, z)
        if v < best_v:
            best, best_v = z, v
        if best_v <= opts.feastol:
            break
    return best, best_v


def prob_violation_safe(prob: _Problem, x) -> float:
    try:
        return prob.violation(x)
    except DomainError:
        return math.inf


class _Trace:
    def __init__(self, path):
        self.fh = open(path, "w", newline="") if path else None
        if self.fh:
            self.w = csv.writer(self.fh)
            self.w.writerow(["outer", "inner_iterations", "objective", "violation", "kkt", "rho"])

    def row(self, *vals):
        if self.fh:
            self.w.writerow(vals)

    def close(self):
        if self.fh:
            self.fh.close()


def _augmented_lagrangian(prob: _Problem, x, opts: NlpOptions, trace: _Trace):
    lam = np.zeros(prob.m)
    rho = opts.rho0
    prev_v = math.inf
    iters = 0
    kkt = math.inf
    v = math.inf
    for outer in range(opts.max_outer):
        x, nit = _inner(prob, _al_value(prob, lam, rho), x, opts)
        iters += nit
        try:
            vals, _ = prob.constraints(x, want_jac=False)
            f, _ = prob.objective(x)
        except DomainError:
            return x, lam, math.inf, math.inf, iters
        v = float(np.max(vals, initial=0.0))
        lam = np.maximum(0.0, lam + rho * vals) if prob.m else lam
        kkt = kkt_residual(prob, x, lam)
        trace.row(outer, nit, f, v, kkt, rho)
        # aim well below the reporting tolerance: complementarity slack shows
        # up one-for-one in the objective
        if v <= opts.feastol * 1e-2 and kkt <= opts.kkttol * 1e-3:
            break
        if v > 0.25 * prev_v and v > opts.feastol * 1e-2:
            rho = min(rho * 10.0, opts.rho_max)
        prev_v = v
    return x, lam, v, kkt, iters


def solve_local(model: Model, start=None, options: Optional[NlpOptions] = None,
                box: Optional[Box] = None) -> NlpSolution:
    """Local solve of the continuous problem (discrete variables treated as continuous)."""
    opts = NlpOptions() if options is None else options
    prob = _Problem(model, box)
    if np.any(prob.lo > prob.hi):
        return NlpSolution(NlpStatus.INFEASIBLE, None, math.inf)
    trace = _Trace(opts.trace_path)
    try:
        x0 = prob.start(start)
        x, lam, v, kkt, iters = _augmented_lagrangian(prob, x0, opts, trace)
        if not v <= opts.feastol:
            z, vz = _feasibility_phase(prob, x if math.isfinite(v) else x0, opts)
            if vz > opts.feastol:
                return NlpSolution(NlpStatus.INFEASIBLE, z, math.inf, violation=vz, iterations=iters)
            x, lam, v, kkt, more = _augmented_lagrangian(prob, z, opts, trace)
            iters += more
        if not v <= opts.feastol:
            return NlpSolution(NlpStatus.FAILED, x, math.inf, kkt, v, lam, iters)
        f, _ = prob.objective(x)
        if kkt > opts.kkttol:
            kkt, lam = refined_kkt_residual(prob, x, lam)
        status = NlpStatus.LOCAL_OPTIMAL if kkt <= opts.kkttol else NlpStatus.FAILED
        return NlpSolution(status, x, float(f), kkt, v, lam, iters)
    finally:
        trace.close()


def solve_local_multistart(model: Model, start=None, options: Optional[NlpOptions] = None,
                           box: Optional[Box] = None, starts: int = 5) -> NlpSolution:
    """Best of several local solves from perturbed starts (a heuristic only)."""
    opts = NlpOptions() if options is None else options
    b = model.box() if box is None else box
    rng = np.random.default_rng(opts.seed)
    best = solve_local(model, start, opts, b)
    width = np.where(np.isfinite(b.hi - b.lo), b.hi - b.lo, 2.0)
    base = np.asarray(best.point if best.point is not None else b.midpoint(), float)
    for _ in range(starts - 1):
        x0 = b.clip(base + rng.uniform(-0.5, 0.5, len(base)) * width)
        sol = solve_local(model, x0, opts, b)
        if sol.feasible and (not best.feasible or sol.objective < best.objective):
            best = sol
    return best


# --------------------------------------------------------------------------
# spatial branch and bound


@dataclass(order=True)
class _Node:
    bound: float
    seq: int
    lo: np.ndarray = field(compare=False)
    hi: np.ndarray = field(compare=False)
    hint: Optional[np.ndarray] = field(compare=False, default=None)


def _gap(ub: float, eps_abs: float, eps_rel: float) -> float:
    return max(eps_abs, eps_rel * abs(ub)) if math.isfinite(ub) else eps_abs


class _Relaxation:
    """LP lower bound over a node box from envelope cuts."""

    def __init__(self, model: Model, policy: TangentPolicy):
        self.model = model
        self.policy = policy

    def solve(self, box: Box, rounds: int, hint=None):
        """Returns (status, bound, x, lifted LP solution, decomposition)."""
        model = self.model
        n = model.n
        dec = avm_decompose(model, box)
        k = len(dec.aux)
        width = n + k + 1
        mu = n + k
        points = [] if hint is None else [hint]
        cuts = convexification_cuts(model, box, points, self.policy, dec)
        lo = np.concatenate([box.lo, [a.bounds.lo for a in dec.aux], [-np.inf]])
        hi = np.concatenate([box.hi, [a.bounds.hi for a in dec.aux], [np.inf]])
        c = np.zeros(width)
        if model.objective_is_linear:
            coeffs, const = ex.linear_coefficients(model.objective)
            for i, a in coeffs.items():
                c[i] = a
            c0 = const
        else:
            c[mu] = 1.0
            c0 = 0.0
        A, b = linear_rows(model, cuts, width, mu_index=mu)
        sol = None
        for r in range(rounds + 1):
            lp = LinearProgram(c, A, b, np.zeros(len(b), bool), lo, hi, c0)
            try:
                sol = solve_lp(lp)
            except IterationLimit:
                return "failed", -math.inf, None, None, dec
            if sol.status is LpStatus.INFEASIBLE:
                return "infeasible", math.inf, None, None, dec
            if sol.status is not LpStatus.OPTIMAL:
                return "failed", -math.inf, None, None, dec
            if r == rounds or not dec.aux:
                break
            # tangents at the LP operand values tighten univariate factors
            new = []
            for a in dec.aux:
                if a.op == "mul":
                    continue
                u = a.operands[0].value(sol.x)
                for coeffs, rhs in factor_cuts(a, [(u,)], TangentPolicy(False, False, True)):
                    row = np.zeros(width)
                    for i, v in coeffs.items():
                        row[i] = v
                    if row @ sol.x - rhs > 1e-9:
                        new.append((row, rhs))
            if not new:
                break
            A = np.vstack([A, [r_ for r_, _ in new]])
            b = np.concatenate([b, [h for _, h in new]])
        return "optimal", sol.objective, sol.x[:n].copy(), sol.x, dec


def _branch_var(model: Model, dec: AvmDecomposition, box: Box, root: Box, lifted, x) -> Optional[int]:
    """Continuous variable with the largest attributed relaxation gap."""
    n = model.n
    score = np.zeros(n)
    for a in dec.aux:
        try:
            true = ex.evaluate(a.node, x)
        except DomainError:
            true = a.bounds.hi
        gap = abs(lifted[a.id] - true)
        if gap <= 0:
            continue
        for op in a.operands:
            for i, _ in op.coeffs:
                if i < n:
                    score[i] += gap
    rw = np.ones(n)
    for i in range(n):
        w0 = root.hi[i] - root.lo[i]
        w = box.hi[i] - box.lo[i]
        rw[i] = w / w0 if w0 > 0 else 0.0
        if w <= 1e-9 * (1 + abs(box.lo[i])):
            rw[i] = 0.0
    score = score * rw
    if np.max(score, initial=0.0) <= 0:
        # no gap information; split the widest nonlinear variable
        cand = [i for i in model.nonlinear_vars() if rw[i] > 0]
        if not cand:
            return None
        return max(cand, key=lambda i: rw[i])
    return int(np.argmax(score))


def solve_global(model: Model, options: Optional[NlpOptions] = None, box: Optional[Box] = None,
                 start=None, policy: TangentPolicy = TangentPolicy(),
                 cutoff: float = math.inf) -> NlpSolution:
    """Spatial branch and bound; GlobalOptimal when the gap closes.

    ``cutoff`` prunes nodes whose bound cannot beat it (no solution is
    returned if the optimum is not below it).
    """
    opts = NlpOptions() if options is None else options
    t0 = time.perf_counter()
    root = model.box() if box is None else box
    nl = model.nonlinear_vars()
    if not root.is_finite(nl):
        raise UnboundedBox("spatial branch and bound needs finite bounds on nonlinear variables")
    relax = _Relaxation(model, policy)
    feastol = opts.feastol
    inc_x, inc_f, inc_kkt = None, math.inf, math.inf
    ub = cutoff

    def try_local(b: Box, x0):
        nonlocal inc_x, inc_f, inc_kkt, ub
        sol = solve_local(model, x0, opts, b)
        if sol.point is not None and sol.status is not NlpStatus.INFEASIBLE:
            x = root.clip(sol.point)
            if model.max_violation(x) <= feastol * 10:
                f = ex.evaluate(model.objective, x)
                if f < inc_f:
                    inc_x, inc_f, inc_kkt = x, f, sol.kkt_residual
                    ub = min(ub, f)
        return sol

    heap: List[_Node] = []
    seq = 0
    b0 = fbbt(model, root)
    if b0 is PROVEN_INFEASIBLE:
        return NlpSolution(NlpStatus.INFEASIBLE, None, math.inf)
    heapq.heappush(heap, _Node(-math.inf, seq, b0.lo, b0.hi, None if start is None else np.asarray(start, float)))
    nodes = 0
    pruned_bound = math.inf  # smallest bound among nodes dropped unresolved
    limit = False
    while heap:
        if heap[0].bound >= ub - _gap(ub, opts.eps_abs, opts.eps_rel):
            break
        if nodes >= opts.node_limit or (opts.time_limit and time.perf_counter() - t0 > opts.time_limit):
            limit = True
            break
        node = heapq.heappop(heap)
        nodes += 1
        b = Box(node.lo, node.hi)
        if math.isfinite(ub):
            try:
                for i, iv in propagate_row(model.objective, b.lo, b.hi, upper=ub).items():
                    b.lo[i], b.hi[i] = max(b.lo[i], iv.lo), min(b.hi[i], iv.hi)
            except _Empty:
                continue
        b = fbbt(model, b, max_passes=3)
        if b is PROVEN_INFEASIBLE:
            continue
        try:
            status, lb, x, lifted, dec = relax.solve(b, opts.cut_rounds, node.hint)
        except UnboundedBox:
            status, lb, x, lifted, dec = "failed", -math.inf, None, None, None
        if status == "infeasible":
            continue
        lb = max(lb, node.bound)
        if lb >= ub - _gap(ub, opts.eps_abs, opts.eps_rel):
            continue
        x0 = b.clip(x) if x is not None else b.midpoint()
        # the LP point is a free incumbent candidate; local solves are rationed
        try:
            if model.max_violation(x0) <= feastol:
                fx = ex.evaluate(model.objective, x0)
                if fx < inc_f:
                    inc_x, inc_f, inc_kkt = x0, fx, math.nan
                    ub = min(ub, fx)
        except DomainError:
            pass
        if nodes <= 3 or nodes % opts.local_every == 0 or not math.isfinite(ub):
            try_local(b, x0)
        if lb >= ub - _gap(ub, opts.eps_abs, opts.eps_rel):
            continue
        j = _branch_var(model, dec, b, root, lifted, x0) if dec is not None else None
        if j is None:
            pruned_bound = min(pruned_bound, lb)
            continue
        lo_j, hi_j = b.lo[j], b.hi[j]
        frac = (x0[j] - lo_j) / (hi_j - lo_j)
        split = x0[j] if 0.2 <= frac <= 0.8 else 0.5 * (lo_j + hi_j)
        for clo, chi in ((lo_j, split), (split, hi_j)):
            nlo, nhi = b.lo.copy(), b.hi.copy()
            nlo[j], nhi[j] = clo, chi
            seq += 1
            heapq.heappush(heap, _Node(lb, seq, nlo, nhi, x0))
    if inc_x is not None and math.isnan(inc_kkt):
        try_local(root, inc_x)
    open_bound = min((nd.bound for nd in heap), default=math.inf)
    bound = min(open_bound, pruned_bound, inc_f)
    if limit:
        bound = min(bound, open_bound)
    if inc_x is None:
        if limit or math.isfinite(pruned_bound):
            return NlpSolution(NlpStatus.FAILED, None, math.inf, bound=bound, nodes=nodes)
        return NlpSolution(NlpStatus.INFEASIBLE, None, math.inf, bound=bound, nodes=nodes)
    certified = inc_f - bound <= _gap(inc_f, opts.eps_abs, opts.eps_rel) + 1e-12
    status = NlpStatus.GLOBAL_OPTIMAL if certified else NlpStatus.LOCAL_OPTIMAL
    return NlpSolution(status, inc_x, float(inc_f), kkt_residual=inc_kkt,
                       violation=model.max_violation(inc_x), bound=bound, nodes=nodes)
