"""Dense bounded-variable simplex and an LP-based branch-and-bound MILP engine.

The simplex works on a full tableau ``B^-1 [A | I]`` with one slack per row
(``[0, inf)`` for ``<=`` rows, ``[0, 0]`` for ``=`` rows).  Cold starts run a
two-phase primal method with artificials; warm starts reuse a basis and pick
primal or dual simplex depending on which kind of feasibility survived the
change.  Sizes here are desk scale (a few hundred rows), so dense is fine.
"""
from __future__ import annotations

import csv
import heapq
import math
import time
from dataclasses import dataclass, field
from enum import Enum
from typing import Callable, List, Optional, Sequence, Tuple

import numpy as np

from .errors import IterationLimit

INF = math.inf


class LpStatus(str, Enum):
    OPTIMAL = "optimal"
    INFEASIBLE = "infeasible"
    UNBOUNDED = "unbounded"


@dataclass
class LinearProgram:
    """``min c.x + c0`` s.t. ``A x <= b`` (rows with ``eq`` set: ``A x = b``), ``lo <= x <= hi``."""

    c: np.ndarray
    A: np.ndarray
    b: np.ndarray
    eq: np.ndarray
    lo: np.ndarray
    hi: np.ndarray
    c0: float = 0.0

    def __post_init__(self):
        self.c = np.asarray(self.c, dtype=float)
        n = len(self.c)
        self.A = np.asarray(self.A, dtype=float).reshape(-1, n)
        self.b = np.asarray(self.b, dtype=float).reshape(-1)
        self.eq = np.asarray(self.eq, dtype=bool).reshape(-1)
        self.lo = np.asarray(self.lo, dtype=float)
        self.hi = np.asarray(self.hi, dtype=float)
        if not (len(self.b) == len(self.eq) == self.A.shape[0]):
            raise ValueError("row data lengths differ")
        if not (len(self.lo) == len(self.hi) == n):
            raise ValueError("bound arrays must match the objective length")
        if not np.all(np.isfinite(self.A)) or not np.all(np.isfinite(self.c)):
            raise ValueError("LP coefficients must be finite")

    @classmethod
    def build(cls, c, A_ub=None, b_ub=None, A_eq=None, b_eq=None, lo=None, hi=None, c0=0.0):
        c = np.asarray(c, dtype=float)
        n = len(c)
        A_ub = np.zeros((0, n)) if A_ub is None else np.asarray(A_ub, dtype=float).reshape(-1, n)
        A_eq = np.zeros((0, n)) if A_eq is None else np.asarray(A_eq, dtype=float).reshape(-1, n)
        b_ub = np.zeros(0) if b_ub is None else np.asarray(b_ub, dtype=float)
        b_eq = np.zeros(0) if b_eq is None else np.asarray(b_eq, dtype=float)
        lo = np.zeros(n) if lo is None else np.asarray(lo, dtype=float)
        hi = np.full(n, INF) if hi is None else np.asarray(hi, dtype=float)
        eq = np.concatenate([np.zeros(len(b_ub), bool), np.ones(len(b_eq), bool)])
        return cls(c, np.vstack([A_ub, A_eq]), np.concatenate([b_ub, b_eq]), eq, lo, hi, c0)

    @property
    def n(self) -> int:
        return len(self.c)

    @property
    def m(self) -> int:
        return len(self.b)

    def with_rows(self, A, b) -> "LinearProgram":
        A = np.asarray(A, dtype=float).reshape(-1, self.n)
        if A.shape[0] == 0:
            return self
        return LinearProgram(
            self.c, np.vstack([self.A, A]), np.concatenate([self.b, b]),
            np.concatenate([self.eq, np.zeros(A.shape[0], bool)]), self.lo, self.hi, self.c0,
        )

    def with_bounds(self, lo, hi) -> "LinearProgram":
        return LinearProgram(self.c, self.A, self.b, self.eq, lo, hi, self.c0)

    def max_violation(self, x) -> float:
        x = np.asarray(x, dtype=float)
        r = self.A @ x - self.b if self.m else np.zeros(0)
        v = np.where(self.eq, np.abs(r), np.maximum(r, 0.0))
        vb = np.maximum(np.maximum(self.lo - x, x - self.hi), 0.0)
        return float(max(np.max(v, initial=0.0), np.max(vb, initial=0.0)))


@dataclass
class Basis:
    """Warm-start data: basic column per row and nonbasic-at-upper flags over ``n + m`` columns."""

    basic: np.ndarray
    at_upper: np.ndarray


@dataclass
class LpSolution:
    status: LpStatus
    x: Optional[np.ndarray] = None
    objective: float = math.nan
    duals: Optional[np.ndarray] = None
    iterations: int = 0
    basis: Optional[Basis] = None


_PIV_TOL = 1e-9
_DUAL_TOL = 1e-9
_REFACTOR_EVERY = 50
_BLAND_AFTER = 30


class _Tableau:
    def __init__(self, lp: LinearProgram, feastol: float):
        n, m = lp.n, lp.m
        self.n, self.m = n, m
        self.feastol = feastol
        scale = np.ones(m)
        if m:
            rowmax = np.max(np.abs(lp.A), axis=1)
            nz = rowmax > 0
            scale[nz] = 1.0 / rowmax[nz]
        self.row_scale = scale
        A = lp.A * scale[:, None]
        self.A = np.hstack([A, np.eye(m)]) if m else np.zeros((0, n))
        self.b = lp.b * scale
        self.lo = np.concatenate([lp.lo, np.zeros(m)])
        self.hi = np.concatenate([lp.hi, np.where(lp.eq, 0.0, INF)])
        self.c = np.concatenate([lp.c, np.zeros(m)])
        self.N = n + m
        self.iterations = 0
        self.max_iter = 0
        self.basis = np.arange(n, n + m)
        self.x = np.zeros(self.N)
        self.T = None
        self.d = None

    # -- factorization ------------------------------------------------
    def refactor(self, cost) -> bool:
        B = self.A[:, self.basis]
        try:
            Binv = np.linalg.inv(B)
        except np.linalg.LinAlgError:
            return False
        if not np.all(np.isfinite(Binv)):
            return False
        self.T = Binv @ self.A
        nb = np.ones(self.A.shape[1], bool)
        nb[self.basis] = False
        xn = np.where(nb, self.x, 0.0)
        self.x[self.basis] = Binv @ (self.b - self.A @ xn)
        self.d = cost - cost[self.basis] @ self.T
        self.d[self.basis] = 0.0
        return True

    def _pivot(self, r: int, j: int):
        T = self.T
        piv = T[r, j]
        T[r] /= piv
        col = T[:, j].copy()
        col[r] = 0.0
        T -= np.outer(col, T[r])
        self.d -= self.d[j] * T[r]
        self.d[j] = 0.0
        self.basis[r] = j

    def _tick(self, cost):
        self.iterations += 1
        if self.iterations > self.max_iter:
            raise IterationLimit(f"simplex exceeded {self.max_iter} iterations")
        if self.iterations % _REFACTOR_EVERY == 0:
            if not self.refactor(cost):
                raise IterationLimit("basis became singular")

    # -- primal simplex -----------------------------------------------
    def primal(self, cost) -> LpStatus:
        lo, hi = self.lo, self.hi
        bland = False
        streak = 0
        nbas = self.A.shape[1]
        is_basic = np.zeros(nbas, bool)
        while True:
            is_basic[:] = False
            is_basic[self.basis] = True
            x, d = self.x, self.d
            can_inc = (x < hi - 1e-12) & ~is_basic
            can_dec = (x > lo + 1e-12) & ~is_basic
            score = np.where(can_inc & (d < -_DUAL_TOL), -d, 0.0)
            score = np.maximum(score, np.where(can_dec & (d > _DUAL_TOL), d, 0.0))
            cand = np.nonzero(score)[0]
            if cand.size == 0:
                return LpStatus.OPTIMAL
            j = int(cand[0]) if bland else int(cand[np.argmax(score[cand])])
            delta = 1.0 if d[j] < 0 else -1.0
            alpha = self.T[:, j]
            rate = -delta * alpha
            xb = x[self.basis]
            lb, ub = lo[self.basis], hi[self.basis]
            with np.errstate(divide="ignore", invalid="ignore"):
                t_dec = np.where(rate < -_PIV_TOL, (xb - lb) / -rate, INF)
                t_inc = np.where(rate > _PIV_TOL, (ub - xb) / rate, INF)
            t_rows = np.maximum(np.minimum(t_dec, t_inc), 0.0)
            t_flip = hi[j] - lo[j]
            t_min = float(np.min(t_rows)) if t_rows.size else INF
            if t_flip <= t_min:
                if math.isinf(t_flip):
                    return LpStatus.UNBOUNDED
                x[self.basis] = xb + rate * t_flip
                x[j] = hi[j] if delta > 0 else lo[j]
                self._tick(cost)
                streak = 0
                bland = False
                continue
            ties = np.nonzero(t_rows <= t_min + 1e-12)[0]
            if bland:
                r = int(ties[np.argmin(self.basis[ties])])
            else:
                r = int(ties[np.argmax(np.abs(alpha[ties]))])
            leave = self.basis[r]
            x[self.basis] = xb + rate * t_min
            x[j] += delta * t_min
            x[leave] = lb[r] if rate[r] < 0 else ub[r]
            self._pivot(r, j)
            if t_min <= 1e-12:
                streak += 1
                if streak > _BLAND_AFTER:
                    bland = True
            else:
                streak = 0
                bland = False
            self._tick(cost)

    # -- dual simplex ---------------------------------------------------
    def dual(self, cost) -> LpStatus:
        lo, hi = self.lo, self.hi
        tol = self.feastol
        nbas = self.A.shape[1]
        is_basic = np.zeros(nbas, bool)
        while True:
            x, d = self.x, self.d
            xb = x[self.basis]
            below = lo[self.basis] - xb
            above = xb - hi[self.basis]
            viol = np.maximum(below, above)
            r = int(np.argmax(viol)) if viol.size else 0
            if viol.size == 0 or viol[r] <= tol:
                return LpStatus.OPTIMAL
            to_lower = below[r] > above[r]
            target = lo[self.basis[r]] if to_lower else hi[self.basis[r]]
            is_basic[:] = False
            is_basic[self.basis] = True
            row = self.T[r]
            at_lo = np.abs(x - lo) <= np.abs(x - hi)
            movable = ~is_basic & (hi > lo)
            free = movable & np.isinf(lo) & np.isinf(hi)
            # sign of alpha that lets a nonbasic push x_Br toward target
            if to_lower:
                elig = movable & (((row < -_PIV_TOL) & (at_lo | free)) | ((row > _PIV_TOL) & (~at_lo | free)))
            else:
                elig = movable & (((row > _PIV_TOL) & (at_lo | free)) | ((row < -_PIV_TOL) & (~at_lo | free)))
            cand = np.nonzero(elig)[0]
            if cand.size == 0:
                return LpStatus.INFEASIBLE
            ratios = np.abs(d[cand]) / np.abs(row[cand])
            rmin = np.min(ratios)
            ties = cand[ratios <= rmin + 1e-12]
            j = int(ties[np.argmax(np.abs(row[ties]))])
            step = (xb[r] - target) / row[j]
            x[self.basis] = xb - step * self.T[:, j]
            x[j] += step
            leave = self.basis[r]
            self._pivot(r, j)
            x[leave] = target
            self._tick(cost)

    def dual_feasible(self) -> bool:
        is_basic = np.zeros(self.A.shape[1], bool)
        is_basic[self.basis] = True
        x, d, lo, hi = self.x, self.d, self.lo, self.hi
        nb = ~is_basic & (hi > lo)
        at_lo = np.abs(x - lo) <= np.abs(x - hi)
        free = np.isinf(lo) & np.isinf(hi)
        bad = nb & (((d < -_DUAL_TOL) & (at_lo | free)) | ((d > _DUAL_TOL) & (~at_lo | free)))
        return not bool(np.any(bad))

    def flip_to_dual_feasible(self, cost) -> None:
        """Move boxed nonbasics whose reduced cost has the wrong sign to the other bound."""
        is_basic = np.zeros(self.A.shape[1], bool)
        is_basic[self.basis] = True
        x, d, lo, hi = self.x, self.d, self.lo, self.hi
        boxed = ~is_basic & np.isfinite(lo) & np.isfinite(hi) & (hi > lo)
        at_lo = np.abs(x - lo) <= np.abs(x - hi)
        to_hi = boxed & at_lo & (d < -_DUAL_TOL)
        to_lo = boxed & ~at_lo & (d > _DUAL_TOL)
        if np.any(to_hi) or np.any(to_lo):
            x[to_hi] = hi[to_hi]
            x[to_lo] = lo[to_lo]
            self.refactor(cost)

    def primal_feasible(self) -> bool:
        xb = self.x[self.basis]
        return bool(np.all(xb >= self.lo[self.basis] - self.feastol)
                    and np.all(xb <= self.hi[self.basis] + self.feastol))


def _nonbasic_start(lo: float, hi: float) -> float:
    if math.isfinite(lo):
        return lo
    if math.isfinite(hi):
        return hi
    return 0.0


def _cold_solve(tab: _Tableau, cost) -> LpStatus:
    n, m = tab.n, tab.m
    for j in range(n):
        tab.x[j] = _nonbasic_start(tab.lo[j], tab.hi[j])
    r = tab.b - tab.A[:, :n] @ tab.x[:n] if m else np.zeros(0)
    slack_ok = (r >= tab.lo[n:] - tab.feastol) & (r <= tab.hi[n:] + tab.feastol)
    art_rows = np.nonzero(~slack_ok)[0]
    tab.basis = np.arange(n, n + m)
    tab.x[n:] = 0.0
    tab.x[n + np.nonzero(slack_ok)[0]] = r[slack_ok]
    if art_rows.size:
        k = art_rows.size
        sigma = np.sign(r[art_rows])
        art = np.zeros((m, k))
        art[art_rows, np.arange(k)] = sigma
        A0, lo0, hi0 = tab.A, tab.lo, tab.hi
        tab.A = np.hstack([A0, art])
        tab.lo = np.concatenate([lo0, np.zeros(k)])
        tab.hi = np.concatenate([hi0, np.full(k, INF)])
        tab.x = np.concatenate([tab.x, np.abs(r[art_rows])])
        tab.basis[art_rows] = tab.N + np.arange(k)
        c1 = np.zeros(tab.N + k)
        c1[tab.N:] = 1.0
        tab.refactor(c1)
        tab.primal(c1)
        infeas = float(np.sum(tab.x[tab.N:]))
        if infeas > tab.feastol * max(1.0, k):
            tab.A, tab.lo, tab.hi = A0, lo0, hi0
            tab.x = tab.x[: tab.N]
            return LpStatus.INFEASIBLE
        # swap basic artificials for the slack of their row (same column up to sign)
        for rr in range(m):
            if tab.basis[rr] >= tab.N:
                a_col = tab.basis[rr] - tab.N
                tab.basis[rr] = n + art_rows[a_col]
        tab.A, tab.lo, tab.hi = A0, lo0, hi0
        tab.x = tab.x[: tab.N]
    if not tab.refactor(cost):
        raise IterationLimit("singular basis after phase one")
    return tab.primal(cost)


def solve_lp(lp: LinearProgram, feastol: float = 1e-7, warm: Optional[Basis] = None,
             max_iter: Optional[int] = None) -> LpSolution:
    """Solve ``lp`` to an optimal basic solution, or certify infeasible/unbounded.

    Raises :class:`IterationLimit` rather than returning a doubtful answer.
    """
    n, m = lp.n, lp.m
    if np.any(lp.lo > lp.hi + feastol):
        return LpSolution(LpStatus.INFEASIBLE)
    lo = np.minimum(lp.lo, lp.hi)
    if not np.array_equal(lo, lp.lo):
        lp = lp.with_bounds(lo, lp.hi)
    zero = np.all(lp.A == 0.0, axis=1) if m else np.zeros(0, bool)
    if np.any(zero):
        bad = np.where(lp.eq[zero], np.abs(lp.b[zero]) > feastol, lp.b[zero] < -feastol)
        if np.any(bad):
            return LpSolution(LpStatus.INFEASIBLE)
    tab = _Tableau(lp, feastol)
    tab.max_iter = max_iter or (50 * (n + m) + 1000)
    cost = tab.c
    status = None
    if warm is not None and len(warm.basic) <= m and len(warm.at_upper) <= tab.N:
        status = _warm_solve(tab, lp, warm, cost)
    if status is None:
        tab.iterations = 0
        tab.x = np.zeros(tab.N)
        status = _cold_solve(tab, cost)
    if status is not LpStatus.OPTIMAL:
        return LpSolution(status, iterations=tab.iterations)
    tab.refactor(cost)
    x = tab.x[:n].copy()
    x = np.minimum(np.maximum(x, lp.lo), lp.hi)
    Binv = tab.T[:, n:]
    y_scaled = cost[tab.basis] @ Binv if m else np.zeros(0)
    duals = y_scaled * tab.row_scale if m else np.zeros(0)
    at_upper = np.zeros(tab.N, bool)
    at_upper[:] = np.abs(tab.x - tab.hi) < np.abs(tab.x - tab.lo)
    basis = Basis(tab.basis.copy(), at_upper)
    return LpSolution(LpStatus.OPTIMAL, x, float(lp.c @ x + lp.c0), duals, tab.iterations, basis)


def _warm_solve(tab: _Tableau, lp: LinearProgram, warm: Basis, cost) -> Optional[LpStatus]:
    n, m = tab.n, tab.m
    m_old = len(warm.basic)
    basic = np.concatenate([warm.basic, np.arange(n + m_old, n + m)]).astype(int)
    # slacks of an older, shorter LP keep their index since rows only get appended
    if np.any(basic >= tab.N) or len(set(basic.tolist())) != m:
        return None
    at_upper = np.zeros(tab.N, bool)
    at_upper[: len(warm.at_upper)] = warm.at_upper[: tab.N]
    for j in range(tab.N):
        lo, hi = tab.lo[j], tab.hi[j]
        if at_upper[j] and math.isfinite(hi):
            tab.x[j] = hi
        else:
            tab.x[j] = _nonbasic_start(lo, hi)
    tab.basis = basic
    if not tab.refactor(cost):
        return None
    tab.flip_to_dual_feasible(cost)
    try:
        if tab.primal_feasible():
            return tab.primal(cost)
        if tab.dual_feasible():
            st = tab.dual(cost)
            if st is LpStatus.OPTIMAL:
                tab.refactor(cost)
                return tab.primal(cost)
            return st
    except IterationLimit:
        return None
    return None


# --------------------------------------------------------------------------
# branch and bound


class MilpStatus(str, Enum):
    OPTIMAL = "optimal"
    INFEASIBLE = "infeasible"
    UNBOUNDED = "unbounded"
    TIME_LIMIT = "time_limit"
    NODE_LIMIT = "node_limit"


@dataclass
class CallbackAction:
    """Verdict of a lazy-constraint callback at an integral node.

    ``accept=False`` with cuts: the cuts join the pool and the node LP is
    re-solved.  ``accept=False`` with no cuts: the node is discarded.
    Cuts sent with ``accept=True`` join the pool without a re-solve.
    ``cutoff`` tells the tree about an external incumbent value.
    """

    accept: bool
    cuts: List[Tuple[np.ndarray, float]] = field(default_factory=list)
    cutoff: Optional[float] = None

    @classmethod
    def reject(cls, cuts, cutoff=None):
        return cls(False, list(cuts), cutoff)


@dataclass
class NodeContext:
    node_id: int
    depth: int
    bound: float
    incumbent: float


MilpCallback = Callable[[np.ndarray, float, NodeContext], Optional[CallbackAction]]


@dataclass
class MilpOptions:
    inttol: float = 1e-6
    feastol: float = 1e-7
    abs_gap: float = 1e-9
    rel_gap: float = 1e-9
    time_limit: float = INF
    node_limit: int = 1_000_000
    max_resolves: int = 200
    node_log: Optional[str] = None


@dataclass
class MilpResult:
    status: MilpStatus
    x: Optional[np.ndarray]
    objective: float
    bound: float
    nodes: int = 0
    callback_calls: int = 0
    lp_iterations: int = 0
    cuts: List[Tuple[np.ndarray, float]] = field(default_factory=list)
    bound_trace: List[float] = field(default_factory=list)


def _gap(value: float, abs_gap: float, rel_gap: float) -> float:
    return max(abs_gap, rel_gap * abs(value))


def solve_milp(lp: LinearProgram, integrality: Sequence[int],
               callback: Optional[MilpCallback] = None,
               options: Optional[MilpOptions] = None,
               deadline: Optional[float] = None) -> MilpResult:
    """Best-bound branch and bound with a lazy-constraint hook.

    Branches on the most fractional variable (lowest index on ties).  Nodes
    whose LP bound is within the gap of ``min(incumbent, cutoff)`` are pruned.
    Cuts returned by the callback are global: they stay in the pool for
    every later node.
    """
    opt = options or MilpOptions()
    ints = np.array(sorted(set(int(i) for i in integrality)), dtype=int)
    t0 = time.perf_counter()
    if deadline is None and math.isfinite(opt.time_limit):
        deadline = t0 + opt.time_limit
    lo0 = lp.lo.copy()
    hi0 = lp.hi.copy()
    if ints.size:
        if not (np.all(np.isfinite(lo0[ints])) and np.all(np.isfinite(hi0[ints]))):
            raise ValueError("integer variables need finite bounds")
        lo0[ints] = np.ceil(lo0[ints] - opt.inttol)
        hi0[ints] = np.floor(hi0[ints] + opt.inttol)
    pool_A: List[np.ndarray] = []
    pool_b: List[float] = []
    cur_lp = lp
    incumbent: Optional[np.ndarray] = None
    inc_obj = INF
    cutoff = INF
    pruned_min = INF
    nodes = 0
    calls = 0
    lp_iters = 0
    bound_trace: List[float] = []
    heap: List = []
    seq = 0
    heapq.heappush(heap, (-INF, seq, 0, 0, lo0, hi0, None))
    log_rows = [] if opt.node_log else None
    status = MilpStatus.OPTIMAL

    def threshold() -> float:
        c = min(inc_obj, cutoff)
        return c - _gap(c, opt.abs_gap, opt.rel_gap) if math.isfinite(c) else INF

    while heap:
        if deadline is not None and time.perf_counter() > deadline:
            status = MilpStatus.TIME_LIMIT
            break
        if nodes >= opt.node_limit:
            status = MilpStatus.NODE_LIMIT
            break
        key, _, node_id, depth, lo, hi, warm = heapq.heappop(heap)
        if key >= threshold():
            pruned_min = min(pruned_min, key)
            continue
        bound_trace.append(key if not bound_trace else max(key, bound_trace[-1]))
        nodes += 1
        action_label = ""
        resolves = 0
        while True:
            sol = solve_lp(cur_lp.with_bounds(lo, hi), opt.feastol, warm=warm)
            lp_iters += sol.iterations
            if sol.status is LpStatus.UNBOUNDED:
                return MilpResult(MilpStatus.UNBOUNDED, None, -INF, -INF, nodes, calls, lp_iters,
                                  list(zip(pool_A, pool_b)), bound_trace)
            if sol.status is LpStatus.INFEASIBLE:
                action_label = "infeasible"
                break
            warm = sol.basis
            if sol.objective >= threshold():
                pruned_min = min(pruned_min, sol.objective)
                action_label = "pruned"
                break
            xv = sol.x
            frac = np.abs(xv[ints] - np.round(xv[ints])) if ints.size else np.zeros(0)
            if frac.size and np.max(frac) > opt.inttol:
                # most fractional, lowest index on ties
                f = np.minimum(xv[ints] - np.floor(xv[ints]), np.ceil(xv[ints]) - xv[ints])
                k = int(np.argmax(f))
                j = int(ints[k])
                v = xv[j]
                hi_dn = hi.copy()
                hi_dn[j] = math.floor(v)
                lo_up = lo.copy()
                lo_up[j] = math.ceil(v)
                for clo, chi in ((lo, hi_dn), (lo_up, hi)):
                    seq += 1
                    heapq.heappush(heap, (sol.objective, seq, seq, depth + 1, clo, chi, warm))
                action_label = f"branch x{j}"
                break
            xr = xv.copy()
            if ints.size:
                xr[ints] = np.round(xr[ints])
            if callback is not None:
                calls += 1
                ctx = NodeContext(node_id, depth, bound_trace[-1], min(inc_obj, cutoff))
                act = callback(xr, sol.objective, ctx) or CallbackAction(True)
                if act.cutoff is not None:
                    cutoff = min(cutoff, act.cutoff)
                if act.accept and act.cuts:
                    # accepted with extra cuts: pool them for later nodes
                    for a, rhs in act.cuts:
                        pool_A.append(np.asarray(a, dtype=float))
                        pool_b.append(float(rhs))
                    cur_lp = lp.with_rows(np.array(pool_A), np.array(pool_b))
                if not act.accept:
                    if not act.cuts or resolves >= opt.max_resolves:
                        action_label = "callback-discard"
                        break
                    for a, rhs in act.cuts:
                        pool_A.append(np.asarray(a, dtype=float))
                        pool_b.append(float(rhs))
                    cur_lp = lp.with_rows(np.array(pool_A), np.array(pool_b))
                    resolves += 1
                    action_label = "callback-cut"
                    continue
            if sol.objective < inc_obj:
                incumbent, inc_obj = xr, sol.objective
            action_label = "incumbent"
            break
        if log_rows is not None:
            log_rows.append((node_id, depth, key, inc_obj, action_label))
    if log_rows is not None:
        with open(opt.node_log, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["node", "depth", "lp_bound", "incumbent", "action"])
            w.writerows(log_rows)
    open_min = min((h[0] for h in heap), default=INF)
    bound = min(inc_obj, pruned_min, open_min)
    if status is MilpStatus.OPTIMAL and incumbent is None:
        status = MilpStatus.INFEASIBLE
    return MilpResult(status, incumbent, inc_obj, bound, nodes, calls, lp_iters,
                      list(zip(pool_A, pool_b)), bound_trace)
