"""McCormick relaxations, auxiliary-variable decomposition and linear cuts.

Univariate nonlinearities are described once, by a convex underestimator and
a concave overestimator on the operand interval (the function itself on the
side where it already has the right curvature, a secant or a piecewise
tangent/secant envelope on the other).  Both the McCormick composition rule
and the envelope cuts are built from that single description.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass
from enum import Enum
from typing import Callable, Dict, Iterable, List, Mapping, Optional, Sequence, Tuple

import numpy as np
from scipy.optimize import brentq

from . import expr as ex
from .errors import DomainError, NonBinaryError, UnboundedBox
from .interval import Interval
from .model import Box, Constraint, Model, Sense

# --------------------------------------------------------------------------
# linear cuts


class CutKind(str, Enum):
    OA_OBJECTIVE = "OAObjective"
    OA_CONSTRAINT = "OAConstraint"
    ENVELOPE = "Envelope"
    NO_GOOD = "NoGood"


@dataclass
class LinearCut:
    """``coeffs_x·x + coeffs_y·y + coeffs_z·z + mu*μ <= rhs``.

    ``mu`` is the coefficient of the objective epigraph variable; it is -1 on
    objective cuts and 0 elsewhere.
    """

    coeffs_x: Dict[int, float]
    coeffs_y: Dict[int, float]
    coeffs_z: Dict[int, float]
    rhs: float
    kind: CutKind
    source: str = ""
    mu: float = 0.0

    @classmethod
    def from_coeffs(cls, coeffs: Mapping[int, float], rhs: float, kind: CutKind,
                    discrete: Iterable[int] = (), n: Optional[int] = None,
                    source: str = "", mu: float = 0.0) -> "LinearCut":
        """Split a coefficient map by variable class.

        Ids ``>= n`` are auxiliary; ids in ``discrete`` go to the y part.
        """
        disc = set(discrete)
        cx, cy, cz = {}, {}, {}
        for i, a in coeffs.items():
            a = float(a)
            if a == 0.0:
                continue
            if n is not None and i >= n:
                cz[i] = a
            elif i in disc:
                cy[i] = a
            else:
                cx[i] = a
        cut = cls(cx, cy, cz, float(rhs) + 0.0, CutKind(kind), source, float(mu))
        cut.check_finite()
        return cut

    def check_finite(self):
        vals = list(self.coeffs_x.values()) + list(self.coeffs_y.values()) + list(self.coeffs_z.values())
        if not all(math.isfinite(v) for v in vals + [self.rhs, self.mu]):
            raise ValueError(f"non-finite cut coefficients ({self.source})")

    def coeffs(self) -> Dict[int, float]:
        out = dict(self.coeffs_x)
        out.update(self.coeffs_y)
        out.update(self.coeffs_z)
        return out

    def lhs(self, point, mu: float = 0.0) -> float:
        """Left-hand side at ``point`` (indexable by every id in the cut)."""
        return sum(a * float(point[i]) for i, a in self.coeffs().items()) + self.mu * mu

    def violation(self, point, mu: float = 0.0) -> float:
        return self.lhs(point, mu) - self.rhs

    def dense(self, width: int, mu_index: Optional[int] = None) -> np.ndarray:
        row = np.zeros(width)
        for i, a in self.coeffs().items():
            row[i] = a
        if self.mu != 0.0:
            if mu_index is None:
                raise ValueError("cut has an epigraph coefficient but no column for it")
            row[mu_index] = self.mu
        return row

    def to_json(self) -> dict:
        enc = lambda d: {str(k): v for k, v in sorted(d.items())}
        return {"x": enc(self.coeffs_x), "y": enc(self.coeffs_y), "z": enc(self.coeffs_z),
                "mu": self.mu, "rhs": self.rhs, "kind": self.kind.value, "source": self.source}

    @classmethod
    def from_json(cls, d: Mapping) -> "LinearCut":
        dec = lambda m: {int(k): float(v) for k, v in m.items()}
        return cls(dec(d.get("x", {})), dec(d.get("y", {})), dec(d.get("z", {})),
                   float(d["rhs"]), CutKind(d["kind"]), d.get("source", ""), float(d.get("mu", 0.0)))


def write_cuts(cuts: Iterable[LinearCut], path) -> None:
    with open(path, "w") as fh:
        for c in cuts:
            fh.write(json.dumps(c.to_json()) + "\n")


def read_cuts(path) -> List[LinearCut]:
    with open(path) as fh:
        return [LinearCut.from_json(json.loads(line)) for line in fh if line.strip()]


def no_good_cut(y, model: Optional[Model] = None) -> LinearCut:
    """Cut excluding exactly the binary assignment ``y``.

    ``y`` maps variable ids to 0/1 (a sequence is read as ids 0..len-1).
    In ``<=`` form: sum over ones of y_i minus sum over zeros of y_i <= ones - 1.
    """
    items = y.items() if isinstance(y, Mapping) else enumerate(y)
    coeffs: Dict[int, float] = {}
    ones = 0
    for i, v in items:
        v = float(v)
        if model is not None and not (model.variables[i].is_discrete
                                      and model.variables[i].lower >= 0 and model.variables[i].upper <= 1):
            raise NonBinaryError(f"variable {model.variables[i].name} is not binary")
        r = round(v)
        if abs(v - r) > 1e-6 or r not in (0, 1):
            raise NonBinaryError(f"value {v} for variable {i} is not binary")
        if r == 1:
            coeffs[i] = 1.0
            ones += 1
        else:
            coeffs[i] = -1.0
    key = ",".join(str(int(round(coeffs[i] > 0))) for i in sorted(coeffs))
    return LinearCut({}, coeffs, {}, float(ones - 1), CutKind.NO_GOOD, f"nogood:{key}")


# --------------------------------------------------------------------------
# univariate envelopes


_SQRT_FLOOR = 1e-10


def _odd_tangent_ratio(k: int) -> float:
    """c in (0, 1] with (k-1) c^k + k c^(k-1) = 1; tangent point is -c*L."""
    if k == 3:
        return 0.5
    return brentq(lambda c: (k - 1) * c ** k + k * c ** (k - 1) - 1.0, 1e-12, 1.0, xtol=1e-15)


class Envelope:
    """Convex under / concave over estimators of phi on [lo, hi]."""

    def __init__(self, f: Callable[[float], float], df: Callable[[float], float],
                 lo: float, hi: float, shape: str):
        self.f, self.df, self.lo, self.hi = f, df, lo, hi
        self.shape = shape
        self._under = self._over = None
        self._dunder = self._dover = None

    # the secant through the endpoints, as value and slope
    def _secant(self, a: float, b: float):
        fa = self.f(a)
        if b > a:
            s = (self.f(b) - fa) / (b - a)
        else:
            s = self.df(a)
        return (lambda u: fa + s * (u - a)), (lambda u: s)

    def build(self) -> "Envelope":
        lo, hi, f, df = self.lo, self.hi, self.f, self.df
        if self.shape == "convex":
            self._under, self._dunder = f, df
            self._over, self._dover = self._secant(lo, hi)
        elif self.shape == "concave":
            self._under, self._dunder = self._secant(lo, hi)
            self._over, self._dover = f, df
        else:
            # odd power over a box straddling zero
            k = self.shape_k
            c = _odd_tangent_ratio(k)
            t = min(-c * lo, hi)
            su, dsu = self._secant(lo, t)
            self._under = lambda u: su(u) if u <= t else f(u)
            self._dunder = lambda u: dsu(u) if u <= t else df(u)
            s = max(-c * hi, lo)
            so, dso = self._secant(s, hi)
            self._over = lambda u: so(u) if u >= s else f(u)
            self._dover = lambda u: dso(u) if u >= s else df(u)
        return self

    def under(self, u: float) -> float:
        return self._under(u)

    def over(self, u: float) -> float:
        return self._over(u)

    def dunder(self, u: float) -> float:
        return self._dunder(u)

    def dover(self, u: float) -> float:
        return self._dover(u)

    def argmin_under(self) -> float:
        if self.dunder(self.lo) >= 0:
            return self.lo
        if self.dunder(self.hi) <= 0:
            return self.hi
        return 0.0  # even powers are the only non-monotone case

    def argmax_over(self) -> float:
        if self.dover(self.hi) >= 0:
            return self.hi
        if self.dover(self.lo) <= 0:
            return self.lo
        return self.lo if self.over(self.lo) >= self.over(self.hi) else self.hi


def envelope(node: ex.Expr, iv: Interval) -> Envelope:
    """Envelope of the univariate node ``node`` over operand interval ``iv``."""
    lo, hi = iv.lo, iv.hi
    if not iv.is_finite():
        raise UnboundedBox(f"operand of {type(node).__name__} has unbounded interval {iv}")
    if isinstance(node, ex.Exp):
        if hi > 700:
            raise UnboundedBox(f"exp operand bound {hi} overflows")
        return Envelope(math.exp, math.exp, lo, hi, "convex").build()
    if isinstance(node, ex.Log):
        if lo <= 0:
            raise UnboundedBox(f"log operand interval {iv} reaches 0")
        return Envelope(math.log, lambda u: 1.0 / u, lo, hi, "concave").build()
    if isinstance(node, ex.Sqrt):
        lo = max(lo, 0.0)
        d = max(_SQRT_FLOOR, 1e-12 * hi)
        env = Envelope(lambda u: math.sqrt(max(u, 0.0)), lambda u: 0.5 / math.sqrt(max(u, d)),
                       lo, hi, "concave").build()
        # near 0 the overestimator switches to the tangent at d (still above sqrt)
        sd = math.sqrt(d)
        env._over = lambda u: math.sqrt(u) if u >= d else sd + (u - d) / (2 * sd)
        env._dover = lambda u: 0.5 / math.sqrt(u) if u >= d else 0.5 / sd
        return env
    if isinstance(node, ex.Reciprocal):
        k = -1
    elif isinstance(node, ex.Power):
        k = node.exponent
    elif isinstance(node, ex.Product):  # square of a shared child
        k = 2
    else:  # pragma: no cover
        raise TypeError(node)
    f = lambda u: u ** k
    df = lambda u: k * u ** (k - 1)
    if k < 0:
        if lo <= 0 <= hi:
            raise UnboundedBox(f"negative power over interval {iv} containing 0")
        if lo > 0 or (-k) % 2 == 0:
            shape = "convex"
        else:
            shape = "concave"
    elif k % 2 == 0 or lo >= 0:
        shape = "convex"
    elif hi <= 0:
        shape = "concave"
    else:
        shape = "odd"
    env = Envelope(f, df, lo, hi, shape)
    env.shape_k = k
    return env.build()


# --------------------------------------------------------------------------
# McCormick propagation


@dataclass
class McCormickValue:
    iv: Interval
    cv: float
    cc: float
    cv_sub: np.ndarray
    cc_sub: np.ndarray

    def under_at(self, q, point) -> float:
        """Affine underestimator value at ``q`` (linearized at ``point``)."""
        return self.cv + float(self.cv_sub @ (np.asarray(q, float)[: len(self.cv_sub)] - np.asarray(point, float)[: len(self.cv_sub)]))

    def over_at(self, q, point) -> float:
        return self.cc + float(self.cc_sub @ (np.asarray(q, float)[: len(self.cc_sub)] - np.asarray(point, float)[: len(self.cc_sub)]))


def _is_square(node) -> bool:
    return isinstance(node, ex.Product) and node.children[0] is node.children[1]


def _mid_select(cv, cc, cv_sub, cc_sub, target, zero):
    if target <= cv:
        return cv, cv_sub
    if target >= cc:
        return cc, cc_sub
    return target, zero


def _compose(env: Envelope, m: McCormickValue, zero) -> Tuple[float, np.ndarray, float, np.ndarray]:
    z, s = _mid_select(m.cv, m.cc, m.cv_sub, m.cc_sub, env.argmin_under(), zero)
    cv, cv_sub = env.under(z), env.dunder(z) * s
    z, s = _mid_select(m.cv, m.cc, m.cv_sub, m.cc_sub, env.argmax_over(), zero)
    cc, cc_sub = env.over(z), env.dover(z) * s
    return cv, cv_sub, cc, cc_sub


def _scaled_pick(c: float, m: McCormickValue, want_min: bool):
    """min (or max) of {c*cv, c*cc} with its subgradient."""
    if c == 0.0:
        return 0.0, None
    if (c > 0) == want_min:
        return c * m.cv, c * m.cv_sub
    return c * m.cc, c * m.cc_sub


def _product(a: McCormickValue, b: McCormickValue, zero):
    xL, xU = a.iv.lo, a.iv.hi
    yL, yU = b.iv.lo, b.iv.hi

    def plane(cx, cy, k, want_min):
        v1, s1 = _scaled_pick(cx, a, want_min)
        v2, s2 = _scaled_pick(cy, b, want_min)
        sub = zero
        if s1 is not None:
            sub = sub + s1
        if s2 is not None:
            sub = sub + s2
        return v1 + v2 - k, sub

    a1 = plane(yL, xL, xL * yL, True)
    a2 = plane(yU, xU, xU * yU, True)
    cv, cv_sub = a1 if a1[0] >= a2[0] else a2
    g1 = plane(yL, xU, xU * yL, False)
    g2 = plane(yU, xL, xL * yU, False)
    cc, cc_sub = g1 if g1[0] <= g2[0] else g2
    return cv, cv_sub, cc, cc_sub


def mccormick_nodes(e: ex.Expr, box, point) -> List[McCormickValue]:
    """McCormick relaxation at every tape position of ``e``."""
    t = ex.tape(e)
    ivs = ex.node_intervals(e, box)
    p = np.asarray(point, dtype=float)
    n = len(p)
    zero = np.zeros(n)
    out: List[McCormickValue] = []
    for node, kids, iv in zip(t.nodes, t.kids, ivs):
        if isinstance(node, ex.Var):
            s = zero.copy()
            s[node.index] = 1.0
            x = float(p[node.index])
            out.append(McCormickValue(iv, x, x, s, s))
            continue
        if isinstance(node, ex.Const):
            out.append(McCormickValue(iv, node.value, node.value, zero, zero))
            continue
        if isinstance(node, ex.Sum):
            cv = cc = node.const
            cvs, ccs = zero.copy(), zero.copy()
            for c, k in zip(node.coefs, kids):
                m = out[k]
                if c >= 0:
                    cv += c * m.cv
                    cc += c * m.cc
                    cvs += c * m.cv_sub
                    ccs += c * m.cc_sub
                else:
                    cv += c * m.cc
                    cc += c * m.cv
                    cvs += c * m.cc_sub
                    ccs += c * m.cv_sub
        elif isinstance(node, ex.Negate):
            m = out[kids[0]]
            cv, cc, cvs, ccs = -m.cc, -m.cv, -m.cc_sub, -m.cv_sub
        else:
            for k in kids:
                if not ivs[k].is_finite():
                    raise UnboundedBox(f"unbounded operand interval under {node!r}")
            if isinstance(node, ex.Product) and not _is_square(node):
                cv, cvs, cc, ccs = _product(out[kids[0]], out[kids[1]], zero)
            else:
                env = envelope(node, ivs[kids[0]])
                cv, cvs, cc, ccs = _compose(env, out[kids[0]], zero)
        # intersect with the interval enclosure
        if cv < iv.lo:
            cv, cvs = iv.lo, zero
        if cc > iv.hi:
            cc, ccs = iv.hi, zero
        out.append(McCormickValue(iv, cv, cc, cvs, ccs))
    return out


def mccormick_eval(e: ex.Expr, box, point) -> McCormickValue:
    """Convex/concave relaxations of ``e`` over ``box`` at ``point`` with subgradients."""
    return mccormick_nodes(e, box, point)[-1]


def affine_underestimator(e: ex.Expr, box, point, epigraph: bool = False,
                          kind: CutKind = CutKind.OA_CONSTRAINT, discrete: Iterable[int] = (),
                          source: str = "") -> LinearCut:
    """Linearization of the convex relaxation of ``e`` at ``point`` as a cut.

    With ``epigraph`` the cut reads ``cv + sub·(v - point) <= μ``; otherwise
    ``... <= 0``.
    """
    m = mccormick_eval(e, box, point)
    p = np.asarray(point, dtype=float)
    coeffs = {i: float(a) for i, a in enumerate(m.cv_sub) if a != 0.0}
    rhs = float(m.cv_sub @ p) - m.cv
    return LinearCut.from_coeffs(coeffs, rhs, kind, discrete, source=source,
                                 mu=-1.0 if epigraph else 0.0)


# --------------------------------------------------------------------------
# auxiliary variable decomposition


@dataclass(frozen=True)
class Affine:
    coeffs: Tuple[Tuple[int, float], ...]
    const: float = 0.0

    @classmethod
    def of(cls, d: Mapping[int, float], const: float = 0.0) -> "Affine":
        return cls(tuple(sorted((i, a) for i, a in d.items() if a != 0.0)), float(const))

    def as_dict(self) -> Dict[int, float]:
        return dict(self.coeffs)

    def value(self, vals) -> float:
        return self.const + sum(a * float(vals[i]) for i, a in self.coeffs)

    def expr(self, var_of: Callable[[int], ex.Expr]) -> ex.Expr:
        return ex.linear_sum([var_of(i) for i, _ in self.coeffs], [a for _, a in self.coeffs], self.const)


@dataclass(frozen=True)
class AuxVar:
    id: int
    node: ex.Expr
    bounds: Interval
    op: str
    operands: Tuple[Affine, ...]
    operand_bounds: Tuple[Interval, ...]
    exponent: int = 1


@dataclass
class AvmDecomposition:
    n: int
    aux: List[AuxVar]
    factor_rows: List[Constraint]
    rows: Dict[str, Affine]
    objective: Affine
    discrete: Tuple[int, ...] = ()

    @property
    def width(self) -> int:
        return self.n + len(self.aux)

    def aux_box(self, box: Box) -> Box:
        return box.extended([a.bounds.lo for a in self.aux], [a.bounds.hi for a in self.aux])

    def lift(self, point) -> np.ndarray:
        """Extend an original point with the exact aux values."""
        p = np.asarray(point, dtype=float)[: self.n]
        out = np.concatenate([p, np.zeros(len(self.aux))])
        for a in self.aux:
            out[a.id] = ex.evaluate(a.node, p)
        return out

    def definition(self, aux_id: int) -> ex.Expr:
        return self.aux[aux_id - self.n].node


_OPS = {ex.Exp: "exp", ex.Log: "log", ex.Sqrt: "sqrt", ex.Reciprocal: "inv", ex.Power: "pow"}


def avm_decompose(model: Model, box: Optional[Box] = None) -> AvmDecomposition:
    """One auxiliary variable per nonlinear DAG node, shared across rows."""
    box = model.box() if box is None else box
    n = model.n
    if not box.is_finite(model.nonlinear_vars()):
        raise UnboundedBox("nonlinear variables need finite bounds")
    forms: Dict[int, Affine] = {}
    aux: List[AuxVar] = []
    factor_rows: List[Constraint] = []
    var_nodes = {}

    def var_of(i):
        if i not in var_nodes:
            var_nodes[i] = ex.Var(i, model.variables[i].name if i < n else f"z{i - n}")
        return var_nodes[i]

    def walk(root: ex.Expr) -> Affine:
        t = ex.tape(root)
        ivs = None
        for node, kids in zip(t.nodes, t.kids):
            if id(node) in forms:
                continue
            if isinstance(node, ex.Const):
                forms[id(node)] = Affine.of({}, node.value)
            elif isinstance(node, ex.Var):
                forms[id(node)] = Affine.of({node.index: 1.0})
            elif isinstance(node, (ex.Sum, ex.Negate)):
                coefs = node.coefs if isinstance(node, ex.Sum) else (-1.0,)
                acc: Dict[int, float] = {}
                const = node.const if isinstance(node, ex.Sum) else 0.0
                for c, ch in zip(coefs, node.children):
                    f = forms[id(ch)]
                    for i, a in f.coeffs:
                        acc[i] = acc.get(i, 0.0) + c * a
                    const += c * f.const
                forms[id(node)] = Affine.of(acc, const)
            else:
                if ivs is None:
                    ivs = ex.node_intervals(root, box)
                pos = t.pos
                iv = ivs[pos[id(node)]]
                if not iv.is_finite():
                    raise UnboundedBox(f"unbounded interval for {node!r}")
                zid = n + len(aux)
                if isinstance(node, ex.Product) and _is_square(node):
                    op, operands, exponent = "pow", (node.children[0],), 2
                elif isinstance(node, ex.Product):
                    op, operands, exponent = "mul", tuple(node.children), 1
                else:
                    op, operands = _OPS[type(node)], (node.children[0],)
                    exponent = node.exponent if isinstance(node, ex.Power) else 1
                aff = tuple(forms[id(c)] for c in operands)
                obounds = tuple(ivs[pos[id(c)]] for c in operands)
                aux.append(AuxVar(zid, node, iv, op, aff, obounds, exponent))
                args = [a.expr(var_of) for a in aff]
                if op == "mul":
                    rhs = ex.mul(args[0], args[1])
                elif op == "pow":
                    rhs = ex.power(args[0], exponent)
                else:
                    rhs = {"exp": ex.exp, "log": ex.log, "sqrt": ex.sqrt, "inv": ex.reciprocal}[op](args[0])
                body = ex.add(var_of(zid), ex.negate(rhs))
                factor_rows.append(Constraint(body, len(factor_rows), sense=Sense.EQ,
                                              origin=Sense.EQ, name=f"factor{len(factor_rows)}"))
                forms[id(node)] = Affine.of({zid: 1.0})
        return forms[id(root)]

    objective = walk(model.objective)
    rows: Dict[str, Affine] = {}
    for c in model.constraints:
        if not c.is_linear:
            rows[c.name or f"c{c.index}"] = walk(c.body)
    return AvmDecomposition(n, aux, factor_rows, rows, objective, tuple(model.integer_indices))


# --------------------------------------------------------------------------
# envelope cuts


@dataclass(frozen=True)
class TangentPolicy:
    """Where univariate factors get tangent cuts."""

    endpoints: bool = True
    midpoint: bool = True
    current: bool = True
    interior: int = 0  # extra evenly spaced points


def _tangent_points(lo: float, hi: float, currents: Sequence[float], policy: TangentPolicy) -> List[float]:
    pts = []
    if policy.endpoints:
        pts += [lo, hi]
    if policy.midpoint:
        pts.append(0.5 * (lo + hi))
    if policy.interior > 0:
        pts += list(np.linspace(lo, hi, policy.interior + 2)[1:-1])
    if policy.current:
        pts += [min(max(c, lo), hi) for c in currents]
    out: List[float] = []
    tol = 1e-12 * max(1.0, abs(lo), abs(hi))
    for p in pts:
        if all(abs(p - q) > tol for q in out):
            out.append(float(p))
    return out


def _emit(acc: List[Tuple[Dict[int, float], float]], coeffs: Dict[int, float], rhs: float):
    """Append a cut unless an identical one is already there."""
    key = (tuple(sorted((i, round(a, 12)) for i, a in coeffs.items())), round(rhs, 12))
    for c, r in acc:
        if (tuple(sorted((i, round(a, 12)) for i, a in c.items())), round(r, 12)) == key:
            return
    acc.append((coeffs, rhs))


def _affine_cut(z: int, slope: float, a: Affine, rhs_base: float, sign: float):
    """sign * (slope * a - z) <= sign * rhs_base, folded into coefficient form."""
    coeffs: Dict[int, float] = {}
    for i, c in a.coeffs:
        coeffs[i] = coeffs.get(i, 0.0) + sign * slope * c
    coeffs[z] = coeffs.get(z, 0.0) - sign
    return coeffs, sign * (rhs_base - slope * a.const)


def factor_cuts(a: AuxVar, currents: Sequence[Tuple[float, ...]] = (),
                policy: TangentPolicy = TangentPolicy()) -> List[Tuple[Dict[int, float], float]]:
    """Envelope cuts for one factor in ``coeffs · (w, z) <= rhs`` form."""
    out: List[Tuple[Dict[int, float], float]] = []
    z = a.id
    if a.op == "mul":
        A, B = a.operands
        (aL, aU), (bL, bU) = tuple(a.operand_bounds[0]), tuple(a.operand_bounds[1])
        # z >= aL*b + bL*a - aL*bL, z >= aU*b + bU*a - aU*bU
        # z <= aU*b + bL*a - aU*bL, z <= aL*b + bU*a - aL*bU
        for ca, cb, k, sign in ((bL, aL, aL * bL, 1.0), (bU, aU, aU * bU, 1.0),
                                (bL, aU, aU * bL, -1.0), (bU, aL, aL * bU, -1.0)):
            coeffs: Dict[int, float] = {}
            for i, c in A.coeffs:
                coeffs[i] = coeffs.get(i, 0.0) + sign * ca * c
            for i, c in B.coeffs:
                coeffs[i] = coeffs.get(i, 0.0) + sign * cb * c
            coeffs[z] = coeffs.get(z, 0.0) - sign
            const = ca * A.const + cb * B.const - k
            _emit(out, {i: v for i, v in coeffs.items() if v != 0.0}, -sign * const)
        return out
    node = a.node
    iv = a.operand_bounds[0]
    env = envelope(node, iv)
    lo, hi = iv.lo, max(iv.lo, iv.hi)
    if isinstance(node, ex.Sqrt) and lo < 1e-6 * max(hi, 1.0):
        lo_t = min(hi, max(lo, 1e-3 * hi))  # avoid near-vertical tangents
    else:
        lo_t = lo
    pts = _tangent_points(lo, hi, [c[0] for c in currents], policy)
    U = a.operands[0]
    for p in pts:
        # z >= under(p) + d (u - p)   ->   d*u - z <= d*p - under(p)
        d = env.dunder(p)
        coeffs, rhs = _affine_cut(z, d, U, d * p - env.under(p), 1.0)
        _emit(out, {i: v for i, v in coeffs.items() if v != 0.0}, rhs)
        # z <= over(p) + d (u - p)   ->   z - d*u <= over(p) - d*p
        q = max(p, lo_t)
        d = env.dover(q)
        coeffs, rhs = _affine_cut(z, d, U, d * q - env.over(q), -1.0)
        _emit(out, {i: v for i, v in coeffs.items() if v != 0.0}, rhs)
    return out


def convexification_cuts(model: Model, box: Optional[Box] = None, points: Sequence = (),
                         policy: TangentPolicy = TangentPolicy(),
                         decomposition: Optional[AvmDecomposition] = None,
                         include_rows: bool = True) -> List[LinearCut]:
    """Envelope cuts for every factor of the decomposition plus the lifted rows.

    ``points`` are points in the original variable space; their operand
    values supply the "current" tangent points.
    """
    box = model.box() if box is None else box
    dec = avm_decompose(model, box) if decomposition is None else decomposition
    lifted = []
    for p in points:
        try:
            lifted.append(dec.lift(box.clip(np.asarray(p, float)[: dec.n])))
        except (DomainError, OverflowError, ZeroDivisionError):
            continue
    cuts: List[LinearCut] = []
    disc = dec.discrete
    for a in dec.aux:
        currents = [tuple(o.value(v) for o in a.operands) for v in lifted]
        for coeffs, rhs in factor_cuts(a, currents, policy):
            cuts.append(LinearCut.from_coeffs(coeffs, rhs, CutKind.ENVELOPE, disc, dec.n,
                                              source=f"envelope:{a.op}:z{a.id - dec.n}"))
    if include_rows:
        if dec.aux and not model.objective_is_linear:
            f = dec.objective
            cuts.append(LinearCut.from_coeffs(f.as_dict(), -f.const, CutKind.ENVELOPE, disc, dec.n,
                                              source="avm-row:objective", mu=-1.0))
        for name, g in dec.rows.items():
            cuts.append(LinearCut.from_coeffs(g.as_dict(), -g.const, CutKind.ENVELOPE, disc, dec.n,
                                              source=f"avm-row:{name}"))
    return cuts


def cut_as_expr(cut: LinearCut, dec: AvmDecomposition, var_of: Callable[[int], ex.Expr]) -> ex.Expr:
    """``lhs - rhs`` with every aux variable replaced by its defining node."""
    if cut.mu != 0.0:
        raise ValueError("epigraph cuts have no meaning in the original space")
    terms, coefs = [], []
    for i, a in cut.coeffs().items():
        terms.append(dec.definition(i) if i >= dec.n else var_of(i))
        coefs.append(a)
    return ex.linear_sum(terms, coefs, -cut.rhs)
