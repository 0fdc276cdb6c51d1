"""Bound tightening (FBBT, OBBT) and the initialization presolve pipeline."""
from __future__ import annotations

import json
import math
import time
from dataclasses import dataclass, field
from enum import Enum
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np

from . import expr as ex
from .errors import EmptyDomain, IterationLimit, UnboundedBox
from .interval import (INF, Interval, div_down, div_up, exp_down, exp_up, extended_div,
                       hull_of, log_down, log_up, mul_down, mul_up, root_down, root_up)
from .lp import LinearProgram, LpStatus, solve_lp
from .model import Box, Model
from .relaxation import (AvmDecomposition, LinearCut, TangentPolicy, avm_decompose,
                         convexification_cuts)


class PresolveStatus(str, Enum):
    TIGHTENED = "Tightened"
    PROVEN_INFEASIBLE = "ProvenInfeasible"


PROVEN_INFEASIBLE = PresolveStatus.PROVEN_INFEASIBLE

_EMPTY_TOL = 1e-9


class _Empty(Exception):
    pass


def _meet(a: Interval, b: Interval) -> Interval:
    lo, hi = max(a.lo, b.lo), min(a.hi, b.hi)
    if lo > hi:
        if lo - hi > _EMPTY_TOL * max(1.0, abs(lo), abs(hi)):
            raise _Empty
        mid = 0.5 * (lo + hi)
        return Interval(mid, mid)
    return Interval(lo, hi)


def _meet_pieces(cur: Interval, pieces: Sequence[Interval]) -> Interval:
    kept = []
    for p in pieces:
        try:
            kept.append(_meet(cur, p))
        except _Empty:
            pass
    if not kept:
        raise _Empty
    return hull_of(kept)


def _div_scalar(iv: Interval, c: float) -> Interval:
    if c > 0:
        return Interval(div_down(iv.lo, c), div_up(iv.hi, c))
    return Interval(div_down(iv.hi, c), div_up(iv.lo, c))


def _round_integer(lo: float, hi: float) -> Tuple[float, float]:
    if math.isfinite(lo):
        lo = float(math.ceil(lo - 1e-9))
    if math.isfinite(hi):
        hi = float(math.floor(hi + 1e-9))
    return lo, hi


def _power_preimage(node_iv: Interval, child: Interval, k: int) -> Interval:
    """Values of the child compatible with child**k in node_iv (k > 0)."""
    if k % 2 == 1:
        lo = -root_up(-node_iv.lo, k) if node_iv.lo < 0 else root_down(node_iv.lo, k)
        hi = -root_down(-node_iv.hi, k) if node_iv.hi < 0 else root_up(node_iv.hi, k)
        return _meet(child, Interval(lo, hi))
    if node_iv.hi < 0:
        raise _Empty
    r_hi = root_up(node_iv.hi, k)
    r_lo = root_down(node_iv.lo, k) if node_iv.lo > 0 else 0.0
    if r_lo == 0.0:
        return _meet(child, Interval(-r_hi, r_hi))
    return _meet_pieces(child, [Interval(-r_hi, -r_lo), Interval(r_lo, r_hi)])


def propagate_row(body: ex.Expr, box_lo: np.ndarray, box_hi: np.ndarray,
                  upper: float = 0.0, lower: float = -INF) -> Dict[int, Interval]:
    """One forward-backward sweep of ``lower <= body <= upper``.

    Returns the narrowed interval of every variable in the row.  Raises
    ``_Empty`` when the row cannot be satisfied over the box.
    """
    t = ex.tape(body)
    box = Box(box_lo, box_hi)
    try:
        ivs = ex.node_intervals(body, box)
    except EmptyDomain:
        raise _Empty from None
    ivs = list(ivs)
    ivs[-1] = _meet(ivs[-1], Interval(lower, upper))
    for i in range(len(t.nodes) - 1, -1, -1):
        node, kids, iv = t.nodes[i], t.kids[i], ivs[i]
        if isinstance(node, (ex.Var, ex.Const)):
            continue
        if isinstance(node, ex.Sum):
            m = len(kids)
            terms = [ivs[k].scale(c) for c, k in zip(node.coefs, kids)]
            # prefix / suffix sums so each "rest" is computed without cancellation
            pre = [Interval(0.0)]
            for tm in terms[:-1]:
                pre.append(pre[-1] + tm)
            suf = [Interval(0.0)] * m
            for j in range(m - 2, -1, -1):
                suf[j] = suf[j + 1] + terms[j + 1]
            for j, (c, k) in enumerate(zip(node.coefs, kids)):
                if c == 0.0:
                    continue
                rest = pre[j] + suf[j] + Interval(node.const)
                try:
                    cand = _div_scalar(iv - rest, c)
                except ValueError:  # inf - inf
                    continue
                ivs[k] = _meet(ivs[k], cand)
        elif isinstance(node, ex.Negate):
            ivs[kids[0]] = _meet(ivs[kids[0]], -iv)
        elif isinstance(node, ex.Product):
            a, b = kids
            if a == b:
                ivs[a] = _power_preimage(iv, ivs[a], 2)
            else:
                ivs[a] = _meet_pieces(ivs[a], extended_div(iv, ivs[b]))
                ivs[b] = _meet_pieces(ivs[b], extended_div(iv, ivs[a]))
        elif isinstance(node, ex.Power):
            k = node.exponent
            c = kids[0]
            if k > 0:
                ivs[c] = _power_preimage(iv, ivs[c], k)
            elif k < 0:
                # child**|k| = 1 / node
                inv = extended_div(Interval(1.0), iv)
                if not inv:
                    raise _Empty
                pieces = []
                for p in inv:
                    try:
                        pieces.append(_power_preimage(p, ivs[c], -k))
                    except _Empty:
                        pass
                if not pieces:
                    raise _Empty
                ivs[c] = hull_of(pieces)
        elif isinstance(node, ex.Exp):
            if iv.hi <= 0:
                raise _Empty
            lo = log_down(iv.lo) if iv.lo > 0 else -INF
            ivs[kids[0]] = _meet(ivs[kids[0]], Interval(lo, log_up(iv.hi) if math.isfinite(iv.hi) else INF))
        elif isinstance(node, ex.Log):
            lo = exp_down(iv.lo) if math.isfinite(iv.lo) else 0.0
            hi = exp_up(iv.hi) if math.isfinite(iv.hi) else INF
            ivs[kids[0]] = _meet(ivs[kids[0]], Interval(lo, hi))
        elif isinstance(node, ex.Sqrt):
            if iv.hi < 0:
                raise _Empty
            lo = mul_down(iv.lo, iv.lo) if iv.lo > 0 else -INF
            hi = mul_up(iv.hi, iv.hi)
            ivs[kids[0]] = _meet(ivs[kids[0]], Interval(lo, hi))
        elif isinstance(node, ex.Reciprocal):
            pieces = extended_div(Interval(1.0), iv)
            if not pieces:
                raise _Empty
            ivs[kids[0]] = _meet_pieces(ivs[kids[0]], pieces)
    out: Dict[int, Interval] = {}
    for node, iv in zip(t.nodes, ivs):
        if isinstance(node, ex.Var):
            out[node.index] = iv if node.index not in out else _meet(out[node.index], iv)
    return out


def _relative_shrink(old_lo, old_hi, new_lo, new_hi) -> float:
    ow = old_hi - old_lo
    nw = new_hi - new_lo
    if ow == 0.0:
        return 0.0
    if math.isinf(ow):
        if math.isinf(nw):
            changed = (new_lo > old_lo) or (new_hi < old_hi)
            return 1.0 if changed and (math.isfinite(new_lo) != math.isfinite(old_lo)
                                      or math.isfinite(new_hi) != math.isfinite(old_hi)) else 0.0
        return 1.0
    return (ow - nw) / ow


def _trace_changes(model: Model, old: Box, new: Box) -> List[dict]:
    out = []
    for i in range(len(old)):
        if old.lo[i] != new.lo[i] or old.hi[i] != new.hi[i]:
            out.append({"var": model.variables[i].name,
                        "old": [float(old.lo[i]), float(old.hi[i])],
                        "new": [float(new.lo[i]), float(new.hi[i])]})
    return out


def fbbt(model: Model, box: Optional[Box] = None, max_passes: int = 10,
         min_reduction: float = 1e-3, trace: Optional[list] = None,
         stats: Optional[dict] = None) -> Union[Box, PresolveStatus]:
    """Forward-backward interval propagation over every row to a fixpoint.

    Returns the tightened box, or ``PROVEN_INFEASIBLE``.
    """
    box = model.box() if box is None else box
    lo, hi = box.lo.copy(), box.hi.copy()
    if np.any(lo > hi):
        return PROVEN_INFEASIBLE
    discrete = set(model.integer_indices)
    passes = 0
    for passes in range(1, max_passes + 1):
        start = Box(lo.copy(), hi.copy())
        try:
            for c in model.constraints:
                for i, iv in propagate_row(c.body, lo, hi).items():
                    a, b = max(lo[i], iv.lo), min(hi[i], iv.hi)
                    if i in discrete:
                        a, b = _round_integer(a, b)
                    if a > b:
                        raise _Empty
                    lo[i], hi[i] = a + 0.0, b + 0.0
        except _Empty:
            if stats is not None:
                stats["fbbt_passes"] = stats.get("fbbt_passes", 0) + passes
            return PROVEN_INFEASIBLE
        if trace is not None:
            trace.append({"stage": "fbbt", "pass": passes,
                          "changes": _trace_changes(model, start, Box(lo, hi))})
        shrink = max((_relative_shrink(start.lo[i], start.hi[i], lo[i], hi[i]) for i in range(len(lo))),
                     default=0.0)
        if shrink <= min_reduction:
            break
    if stats is not None:
        stats["fbbt_passes"] = stats.get("fbbt_passes", 0) + passes
    return Box(lo, hi)


# --------------------------------------------------------------------------
# linear relaxation shared by OBBT, the spatial B&B and the OA master


def linear_rows(model: Model, cuts: Sequence[LinearCut], width: int,
                mu_index: Optional[int] = None) -> Tuple[np.ndarray, np.ndarray]:
    """Rows of the model's linear constraints followed by ``cuts``.

    Cuts with an epigraph coefficient are dropped when ``mu_index`` is None.
    """
    rows, rhs = [], []
    for c in model.linear_constraints:
        coeffs, const = ex.linear_coefficients(c.body)
        r = np.zeros(width)
        for i, a in coeffs.items():
            r[i] = a
        rows.append(r)
        rhs.append(-const)
    for cut in cuts:
        if cut.mu != 0.0 and mu_index is None:
            continue
        rows.append(cut.dense(width, mu_index))
        rhs.append(cut.rhs)
    if not rows:
        return np.zeros((0, width)), np.zeros(0)
    return np.array(rows), np.array(rhs)


def obbt(model: Model, cuts: Sequence[LinearCut], box: Optional[Box] = None,
         targets: Optional[Sequence[int]] = None, aux_box: Optional[Box] = None,
         stats: Optional[dict] = None, margin: float = 1e-7) -> Union[Box, PresolveStatus]:
    """Minimize and maximize each target over the linear relaxation.

    ``aux_box`` gives bounds for the auxiliary columns referenced by cuts
    (ids ``>= model.n``); absent bounds are treated as free.  Bounds only
    ever shrink.  LP optima are relaxed by ``margin`` (relative) so that
    simplex tolerances cannot cut off boundary points.
    """
    box = model.box() if box is None else box
    n = model.n
    width = n
    for cut in cuts:
        if cut.coeffs_z:
            width = max(width, max(cut.coeffs_z) + 1)
    lo = np.full(width, -INF)
    hi = np.full(width, INF)
    lo[:n], hi[:n] = box.lo, box.hi
    if aux_box is not None:
        k = min(len(aux_box), width)
        lo[n:k], hi[n:k] = aux_box.lo[n:k], aux_box.hi[n:k]
    A, b = linear_rows(model, cuts, width)
    targets = list(range(n)) if targets is None else list(targets)
    discrete = set(model.integer_indices)
    new_lo, new_hi = box.lo.copy(), box.hi.copy()
    basis = None
    lp_count = 0
    for j in targets:
        for sense in (1.0, -1.0):
            c = np.zeros(width)
            c[j] = sense
            lp = LinearProgram(c, A, b, np.zeros(len(b), bool), lo, hi)
            lp_count += 1
            try:
                sol = solve_lp(lp, warm=basis)
            except IterationLimit:
                continue
            if sol.status is LpStatus.INFEASIBLE:
                if stats is not None:
                    stats["lp_count"] = stats.get("lp_count", 0) + lp_count
                return PROVEN_INFEASIBLE
            if sol.status is not LpStatus.OPTIMAL:
                continue
            basis = sol.basis
            val = sense * sol.objective
            slack = margin * max(1.0, abs(val))
            if sense > 0:
                cand = val - slack
                if j in discrete:
                    cand = float(math.ceil(cand - 1e-6))
                new_lo[j] = max(new_lo[j], cand)
            else:
                cand = val + slack
                if j in discrete:
                    cand = float(math.floor(cand + 1e-6))
                new_hi[j] = min(new_hi[j], cand)
            if new_lo[j] > new_hi[j]:
                if stats is not None:
                    stats["lp_count"] = stats.get("lp_count", 0) + lp_count
                return PROVEN_INFEASIBLE
            # later LPs see the tightened bound
            lo[j], hi[j] = new_lo[j], new_hi[j]
    if stats is not None:
        stats["lp_count"] = stats.get("lp_count", 0) + lp_count
    return Box(new_lo, new_hi)


# --------------------------------------------------------------------------
# presolve pipeline


@dataclass
class PresolveOptions:
    max_passes: int = 10
    min_reduction: float = 1e-3
    obbt: bool = True
    obbt_targets: Optional[Sequence[int]] = None  # default: variables in nonlinear terms
    policy: TangentPolicy = field(default_factory=TangentPolicy)
    trace_path: Optional[str] = None


@dataclass
class PresolveResult:
    tightened: Box
    cuts: List[LinearCut]
    status: PresolveStatus
    stats: Dict[str, float]
    decomposition: Optional[AvmDecomposition] = None

    @property
    def infeasible(self) -> bool:
        return self.status is PresolveStatus.PROVEN_INFEASIBLE


def _cuts_on(model, b, policy, has_nl, nl):
    if not (has_nl and b.is_finite(nl)):
        return None, []
    try:
        dec = avm_decompose(model, b)
    except UnboundedBox:
        return None, []
    return dec, convexification_cuts(model, b, (), policy, dec) if dec.aux else []


def presolve(model: Model, options: Optional[PresolveOptions] = None,
             box: Optional[Box] = None) -> PresolveResult:
    """FBBT, then envelope cuts on the tightened box, then OBBT, then one more FBBT pass.

    The returned cuts are regenerated on the final box.
    """
    opts = PresolveOptions() if options is None else options
    t0 = time.perf_counter()
    stats: Dict[str, float] = {}
    trace: Optional[list] = [] if opts.trace_path else None
    start = model.box() if box is None else box

    def finish(status, b, cuts, dec):
        stats["wall_time"] = time.perf_counter() - t0
        stats.setdefault("lp_count", 0)
        stats["passes"] = stats.get("fbbt_passes", 0)
        if trace is not None:
            with open(opts.trace_path, "w") as fh:
                for rec in trace:
                    fh.write(json.dumps(rec) + "\n")
        return PresolveResult(b, cuts, status, stats, dec)

    b = fbbt(model, start, opts.max_passes, opts.min_reduction, trace, stats)
    if b is PROVEN_INFEASIBLE:
        return finish(PROVEN_INFEASIBLE, start, [], None)
    nl = model.nonlinear_vars()
    has_nl = bool(nl) or not model.objective_is_linear
    dec, cuts = _cuts_on(model, b, opts.policy, has_nl, nl)
    if opts.obbt:
        targets = nl if opts.obbt_targets is None else list(opts.obbt_targets)
        if targets:
            before = b
            aux_box = dec.aux_box(b) if dec is not None else None
            b = obbt(model, cuts, b, targets, aux_box, stats)
            if b is PROVEN_INFEASIBLE:
                return finish(PROVEN_INFEASIBLE, before, [], None)
            if trace is not None:
                trace.append({"stage": "obbt", "pass": 1, "changes": _trace_changes(model, before, b)})
    b2 = fbbt(model, b, 1, opts.min_reduction, trace, stats)
    if b2 is PROVEN_INFEASIBLE:
        return finish(PROVEN_INFEASIBLE, b, [], None)
    b = b2
    # aux bounds and cuts follow the final box
    dec, cuts = _cuts_on(model, b, opts.policy, has_nl, nl)
    return finish(PresolveStatus.TIGHTENED, b, cuts, dec)
