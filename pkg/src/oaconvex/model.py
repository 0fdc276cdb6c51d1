"""MINLP instances and the subproblems derived from them.

A :class:`Model` minimizes an expression over typed, bounded variables
subject to ``body <= 0`` rows.  Equality rows are split into two inequality
rows when the model is built.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Dict, Iterable, List, Mapping, Optional, Sequence, Tuple, Union

import numpy as np

from . import expr as ex
from .errors import AssignmentError, ModelError
from .expr import Expr, Var
from .interval import INF, Interval


class Domain(str, Enum):
    CONTINUOUS = "continuous"
    INTEGER = "integer"
    BINARY = "binary"


class Sense(str, Enum):
    LEQ = "<="
    EQ = "="


class Convexity(str, Enum):
    DECLARED_CONVEX = "declared_convex"
    UNKNOWN = "unknown"


@dataclass(frozen=True)
class Variable:
    id: int
    name: str
    domain: Domain
    lower: float
    upper: float

    def __post_init__(self):
        lo, hi = float(self.lower), float(self.upper)
        if self.domain is Domain.BINARY:
            lo, hi = max(lo, 0.0), min(hi, 1.0)
        if self.domain is not Domain.CONTINUOUS:
            lo = math.ceil(lo - 1e-9) if math.isfinite(lo) else lo
            hi = math.floor(hi + 1e-9) if math.isfinite(hi) else hi
        if lo > hi:
            raise ModelError(f"variable {self.name}: empty domain [{lo}, {hi}]")
        object.__setattr__(self, "lower", float(lo))
        object.__setattr__(self, "upper", float(hi))

    @property
    def is_discrete(self) -> bool:
        return self.domain is not Domain.CONTINUOUS


@dataclass(frozen=True)
class Constraint:
    """A row ``body <= 0``; ``origin`` records whether it came from an equality."""

    body: Expr
    index: int
    sense: Sense = Sense.LEQ
    origin: Sense = Sense.LEQ
    name: str = ""
    is_linear: bool = field(init=False)

    def __post_init__(self):
        object.__setattr__(self, "is_linear", ex.is_linear(self.body))


class Box:
    """Per-variable interval bounds, stored as two float arrays."""

    __slots__ = ("lo", "hi")

    def __init__(self, lo, hi):
        self.lo = np.array(lo, dtype=float)
        self.hi = np.array(hi, dtype=float)
        if self.lo.shape != self.hi.shape:
            raise ValueError("bound arrays differ in length")

    @classmethod
    def from_intervals(cls, ivs: Sequence[Interval]) -> "Box":
        return cls([i.lo for i in ivs], [i.hi for i in ivs])

    def __len__(self) -> int:
        return len(self.lo)

    def __getitem__(self, i: int) -> Interval:
        return Interval(self.lo[i], self.hi[i])

    def __repr__(self) -> str:
        pairs = ", ".join(f"[{a:g}, {b:g}]" for a, b in zip(self.lo, self.hi))
        return f"Box({pairs})"

    def copy(self) -> "Box":
        return Box(self.lo.copy(), self.hi.copy())

    def extended(self, lo: Sequence[float], hi: Sequence[float]) -> "Box":
        return Box(np.concatenate([self.lo, lo]), np.concatenate([self.hi, hi]))

    def contains(self, point, tol: float = 0.0) -> bool:
        p = np.asarray(point, dtype=float)[: len(self)]
        return bool(np.all(p >= self.lo - tol) and np.all(p <= self.hi + tol))

    def subset_of(self, other: "Box", tol: float = 0.0) -> bool:
        return bool(np.all(self.lo >= other.lo - tol) and np.all(self.hi <= other.hi + tol))

    def is_finite(self, ids: Optional[Iterable[int]] = None) -> bool:
        idx = list(range(len(self))) if ids is None else list(ids)
        return bool(np.all(np.isfinite(self.lo[idx])) and np.all(np.isfinite(self.hi[idx])))

    def midpoint(self) -> np.ndarray:
        return np.array([self[i].mid for i in range(len(self))])

    def clip(self, point) -> np.ndarray:
        return np.minimum(np.maximum(np.asarray(point, dtype=float), self.lo), self.hi)


class Model:
    """``min objective`` over ``variables`` subject to ``c.body <= 0`` for all rows."""

    def __init__(
        self,
        variables: Sequence[Variable],
        objective: Expr,
        constraints: Sequence[Constraint] = (),
        name: str = "model",
        convexity: Convexity = Convexity.UNKNOWN,
    ):
        if not variables:
            raise ModelError("model needs at least one variable")
        self.variables: Tuple[Variable, ...] = tuple(variables)
        self.objective = ex.as_expr(objective)
        self.constraints: Tuple[Constraint, ...] = tuple(constraints)
        self.name = name
        self.convexity = Convexity(convexity)
        n = len(self.variables)
        for i, v in enumerate(self.variables):
            if v.id != i:
                raise ModelError("variable ids must be dense and ordered")
        for e in [self.objective] + [c.body for c in self.constraints]:
            for idx in ex.variables_in(e):
                if idx >= n:
                    raise ModelError(f"expression references undeclared variable {idx}")
        for c in self.constraints:
            if c.sense is not Sense.LEQ:
                raise ModelError("constraints must be normalized to body <= 0")

    # ------------------------------------------------------------------
    @property
    def n(self) -> int:
        return len(self.variables)

    @property
    def integer_indices(self) -> List[int]:
        return [v.id for v in self.variables if v.is_discrete]

    @property
    def continuous_indices(self) -> List[int]:
        return [v.id for v in self.variables if not v.is_discrete]

    @property
    def nonlinear_constraints(self) -> List[Constraint]:
        return [c for c in self.constraints if not c.is_linear]

    @property
    def linear_constraints(self) -> List[Constraint]:
        return [c for c in self.constraints if c.is_linear]

    @property
    def objective_is_linear(self) -> bool:
        return ex.is_linear(self.objective)

    def box(self) -> Box:
        return Box([v.lower for v in self.variables], [v.upper for v in self.variables])

    def var(self, name: str) -> Variable:
        for v in self.variables:
            if v.name == name:
                return v
        raise KeyError(name)

    def var_expr(self, i: int) -> Var:
        return _var_nodes(self)[i]

    def nonlinear_vars(self) -> List[int]:
        """Variables occurring inside some nonlinear term."""
        out = set()
        for e in [self.objective] + [c.body for c in self.constraints]:
            t = ex.tape(e)
            for node, kids in zip(t.nodes, t.kids):
                if isinstance(node, (ex.Const, ex.Var, ex.Sum, ex.Negate)):
                    continue
                for sub in ex.topo_order(node):
                    if isinstance(sub, ex.Var):
                        out.add(sub.index)
        return sorted(out)

    def with_bounds(self, box: Box) -> "Model":
        vs = [replace(v, lower=float(box.lo[v.id]), upper=float(box.hi[v.id])) for v in self.variables]
        return Model(vs, self.objective, self.constraints, self.name, self.convexity)

    def with_constraints(self, extra: Sequence[Expr], prefix: str = "extra") -> "Model":
        rows = list(self.constraints)
        for k, body in enumerate(extra):
            rows.append(Constraint(body, len(rows), name=f"{prefix}{k}"))
        return Model(self.variables, self.objective, rows, self.name, self.convexity)

    def max_violation(self, point) -> float:
        viol = 0.0
        for c in self.constraints:
            viol = max(viol, ex.evaluate(c.body, point))
        p = np.asarray(point, dtype=float)
        b = self.box()
        viol = max(viol, float(np.max(b.lo - p, initial=0.0)), float(np.max(p - b.hi, initial=0.0)))
        return viol

    def is_feasible(self, point, tol: float = 1e-6, int_tol: float = 1e-6) -> bool:
        try:
            if self.max_violation(point) > tol:
                return False
        except Exception:
            return False
        p = np.asarray(point, dtype=float)
        return all(abs(p[i] - round(p[i])) <= int_tol for i in self.integer_indices)

    def __repr__(self) -> str:
        return (
            f"Model({self.name!r}, n={self.n}, int={len(self.integer_indices)}, "
            f"rows={len(self.constraints)})"
        )


def _var_nodes(model: Model) -> List[Var]:
    nodes: Dict[int, Var] = {}
    for e in [model.objective] + [c.body for c in model.constraints]:
        for node in ex.tape(e).nodes:
            if isinstance(node, Var):
                nodes.setdefault(node.index, node)
    return [nodes.get(v.id) or Var(v.id, v.name) for v in model.variables]


class ModelBuilder:
    """Incremental construction::

        b = ModelBuilder("tiny")
        x = b.continuous("x", 0, 4)
        y = b.binary("y")
        b.minimize((x - 2) ** 2 + 0.5 * y)
        b.add(x - 1 - 2 * y, "<=", 0)
        model = b.build()
    """

    def __init__(self, name: str = "model", convex: bool = False):
        self.name = name
        self.convex = convex
        self._vars: List[Variable] = []
        self._nodes: List[Var] = []
        self._objective: Expr = ex.Const(0.0)
        self._rows: List[Tuple[Expr, Sense, str]] = []

    def add_var(self, name: str, domain: Union[Domain, str], lower: float = -INF, upper: float = INF) -> Var:
        domain = Domain(domain)
        if domain is Domain.BINARY:
            lower, upper = max(0.0, lower), min(1.0, upper)
        idx = len(self._vars)
        self._vars.append(Variable(idx, name, domain, lower, upper))
        node = Var(idx, name)
        self._nodes.append(node)
        return node

    def continuous(self, name: str, lower: float = -INF, upper: float = INF) -> Var:
        return self.add_var(name, Domain.CONTINUOUS, lower, upper)

    def integer(self, name: str, lower: float, upper: float) -> Var:
        return self.add_var(name, Domain.INTEGER, lower, upper)

    def binary(self, name: str) -> Var:
        return self.add_var(name, Domain.BINARY, 0.0, 1.0)

    def minimize(self, e) -> None:
        self._objective = ex.as_expr(e)

    def add(self, lhs, sense: str = "<=", rhs=0.0, name: str = "") -> None:
        body = ex.as_expr(lhs) - rhs
        if sense in ("<=", "le", Sense.LEQ):
            self._rows.append((body, Sense.LEQ, name))
        elif sense in (">=", "ge"):
            self._rows.append((-body, Sense.LEQ, name))
        elif sense in ("=", "==", "eq", Sense.EQ):
            self._rows.append((body, Sense.EQ, name))
        else:
            raise ModelError(f"unknown sense {sense!r}")

    def build(self) -> Model:
        rows: List[Constraint] = []
        for body, sense, name in self._rows:
            if sense is Sense.EQ:
                rows.append(Constraint(body, len(rows), origin=Sense.EQ, name=name + "+"))
                rows.append(Constraint(ex.negate(body), len(rows), origin=Sense.EQ, name=name + "-"))
            else:
                rows.append(Constraint(body, len(rows), name=name))
        conv = Convexity.DECLARED_CONVEX if self.convex else Convexity.UNKNOWN
        return Model(self._vars, self._objective, rows, self.name, conv)


# --------------------------------------------------------------------------
# derived subproblems


def _normalize_assignment(model: Model, y) -> Dict[int, float]:
    ints = model.integer_indices
    if isinstance(y, Mapping):
        assign = {int(k): v for k, v in y.items()}
    else:
        y = list(y)
        if len(y) == model.n:
            assign = {i: y[i] for i in ints}
        elif len(y) == len(ints):
            assign = dict(zip(ints, y))
        else:
            raise AssignmentError(f"assignment has {len(y)} entries, model has {len(ints)} discrete")
    missing = set(ints) - set(assign)
    if missing:
        raise AssignmentError(f"no value for discrete variables {sorted(missing)}")
    out = {}
    for i, val in assign.items():
        v = model.variables[i]
        if not v.is_discrete:
            raise AssignmentError(f"{v.name} is continuous")
        r = round(float(val))
        if abs(float(val) - r) > 1e-9:
            raise AssignmentError(f"{v.name}={val} is not integral")
        if r < v.lower or r > v.upper:
            raise AssignmentError(f"{v.name}={r} outside [{v.lower:g}, {v.upper:g}]")
        out[i] = float(r)
    return out


def fix_integers(model: Model, y) -> Model:
    """Collapse each discrete variable's bounds onto its assigned value."""
    assign = _normalize_assignment(model, y)
    vs = [
        replace(v, domain=Domain.CONTINUOUS, lower=assign[v.id], upper=assign[v.id])
        if v.id in assign
        else v
        for v in model.variables
    ]
    return Model(vs, model.objective, model.constraints, model.name + "[fixed]", model.convexity)


def relax_integrality(model: Model) -> Model:
    if not model.integer_indices:
        return model
    vs = [replace(v, domain=Domain.CONTINUOUS) for v in model.variables]
    return Model(vs, model.objective, model.constraints, model.name + "[relaxed]", model.convexity)


def make_feasibility(model: Model, y, norm: str = "l1") -> Model:
    """Fixed-integer model minimizing a norm of nonlinear-row violations.

    Every nonlinear row ``g_j <= 0`` becomes ``g_j - s_j <= 0`` with slack
    ``s_j >= 0``; under ``linf`` one shared slack bounds all rows.  Linear
    rows stay hard.  Slacks are appended after the original variables.
    """
    norm = norm.lower()
    if norm not in ("l1", "linf"):
        raise ValueError("norm must be 'l1' or 'linf'")
    fixed = fix_integers(model, y)
    box = fixed.box()
    nl = fixed.nonlinear_constraints
    n = model.n
    vs = list(fixed.variables)
    slacks: List[Var] = []

    def slack_cap(rows):
        cap = 0.0
        for c in rows:
            try:
                cap = max(cap, ex.interval_eval(c.body, box).hi)
            except Exception:
                return INF
        return cap if math.isfinite(cap) else INF

    if norm == "l1":
        for k, c in enumerate(nl):
            vs.append(Variable(n + k, f"s_{c.index}", Domain.CONTINUOUS, 0.0, slack_cap([c])))
            slacks.append(Var(n + k, f"s_{c.index}"))
    elif nl:
        vs.append(Variable(n, "s_inf", Domain.CONTINUOUS, 0.0, slack_cap(nl)))
        slacks.append(Var(n, "s_inf"))
    rows: List[Constraint] = []
    for c in fixed.constraints:
        if c.is_linear:
            rows.append(Constraint(c.body, len(rows), name=c.name))
    for k, c in enumerate(nl):
        s = slacks[k] if norm == "l1" else slacks[0]
        rows.append(Constraint(c.body - s, len(rows), name=c.name + "~"))
    obj = ex.linear_sum(slacks, [1.0] * len(slacks)) if slacks else ex.Const(0.0)
    return Model(vs, obj, rows, model.name + "[feas]", model.convexity)


def binary_expand(model: Model) -> Tuple[Model, "BinaryExpansion"]:
    """Rewrite general integers as ``lo + sum 2^k b_k`` over new binaries.

    Returns the expanded model and a map back to the original space.
    """
    new_vars: List[Variable] = []
    mapping: Dict[int, Expr] = {}
    encodings: Dict[int, Tuple[float, List[Tuple[int, float]]]] = {}
    extra_rows: List[Expr] = []
    for v in model.variables:
        if v.domain is Domain.INTEGER and not (v.lower == 0.0 and v.upper == 1.0):
            # continuous placeholder keeps ids dense; linked to its encoding below
            new_vars.append(replace(v, domain=Domain.CONTINUOUS))
        elif v.domain is Domain.INTEGER:
            new_vars.append(replace(v, domain=Domain.BINARY))
        else:
            new_vars.append(v)
    for v in model.variables:
        if v.domain is not Domain.INTEGER or (v.lower == 0.0 and v.upper == 1.0):
            continue
        if not (math.isfinite(v.lower) and math.isfinite(v.upper)):
            raise AssignmentError(f"cannot binary-expand unbounded integer {v.name}")
        span = int(v.upper - v.lower)
        bits = max(1, span.bit_length())
        terms: List[Tuple[int, float]] = []
        nodes, coefs = [], []
        for k in range(bits):
            idx = len(new_vars)
            new_vars.append(Variable(idx, f"{v.name}__b{k}", Domain.BINARY, 0.0, 1.0))
            nodes.append(Var(idx, f"{v.name}__b{k}"))
            coefs.append(float(2 ** k))
            terms.append((idx, float(2 ** k)))
        encodings[v.id] = (v.lower, terms)
        enc = ex.linear_sum(nodes, coefs, v.lower)
        mapping[v.id] = enc
        extra_rows.append(enc - v.upper)
        extra_rows.append(Var(v.id, v.name) - enc)
        extra_rows.append(enc - Var(v.id, v.name))
    if not encodings:
        return model, BinaryExpansion(model.n, {})
    obj = ex.substitute(model.objective, mapping)
    rows = [Constraint(ex.substitute(c.body, mapping), i, origin=c.origin, name=c.name)
            for i, c in enumerate(model.constraints)]
    for body in extra_rows:
        rows.append(Constraint(body, len(rows), name="binexp"))
    return (
        Model(new_vars, obj, rows, model.name + "[bin]", model.convexity),
        BinaryExpansion(model.n, encodings),
    )


@dataclass
class BinaryExpansion:
    n_original: int
    encodings: Dict[int, Tuple[float, List[Tuple[int, float]]]]

    def restrict(self, point) -> np.ndarray:
        p = np.asarray(point, dtype=float)
        out = p[: self.n_original].copy()
        for vid, (lo, terms) in self.encodings.items():
            out[vid] = lo + sum(c * round(p[i]) for i, c in terms)
        return out


# --------------------------------------------------------------------------
# JSON


def _bound_to_json(x: float):
    if x == INF:
        return "inf"
    if x == -INF:
        return "-inf"
    return x


def _bound_from_json(x) -> float:
    if isinstance(x, str):
        s = x.strip().lower()
        if s in ("inf", "+inf", "infinity"):
            return INF
        if s in ("-inf", "-infinity"):
            return -INF
        raise ModelError(f"bad bound {x!r}")
    if x is None:
        raise ModelError("bound may not be null")
    return float(x)


_UNARY_OPS = {"exp": ex.exp, "log": ex.log, "sqrt": ex.sqrt, "neg": ex.negate, "inv": ex.reciprocal}


def expr_from_json(obj, names: Mapping[str, Var]) -> Expr:
    if not isinstance(obj, dict) or "op" not in obj:
        raise ModelError(f"expression node must be an object with 'op': {obj!r}")
    op = obj["op"]
    try:
        if op == "const":
            return ex.Const(float(obj["value"]))
        if op == "var":
            name = obj["name"]
            if name not in names:
                raise ModelError(f"unknown variable {name!r}")
            return names[name]
        if op == "add":
            args = [expr_from_json(a, names) for a in obj["args"]]
            coefs = obj.get("coefs", [1.0] * len(args))
            if len(coefs) != len(args):
                raise ModelError("add: coefs/args length mismatch")
            return ex.linear_sum(args, coefs, float(obj.get("const", 0.0)))
        if op == "mul":
            args = [expr_from_json(a, names) for a in obj["args"]]
            if not args:
                raise ModelError("mul needs arguments")
            out = args[0]
            for a in args[1:]:
                out = ex.mul(out, a)
            return out
        if op == "pow":
            k = obj["exp"]
            if int(k) != k:
                raise ModelError("pow exponent must be an integer")
            return ex.power(expr_from_json(obj["arg"], names), int(k))
        if op in _UNARY_OPS:
            return _UNARY_OPS[op](expr_from_json(obj["arg"], names))
    except KeyError as exc:
        raise ModelError(f"{op}: missing field {exc}") from None
    raise ModelError(f"unknown op {op!r}")


def expr_to_json(e: Expr):
    memo: Dict[int, object] = {}
    t = ex.tape(e)
    for node, kids in zip(t.nodes, t.kids):
        ch = [memo[id(c)] for c in node.children]
        if isinstance(node, ex.Const):
            out = {"op": "const", "value": node.value}
        elif isinstance(node, ex.Var):
            out = {"op": "var", "name": node.name}
        elif isinstance(node, ex.Sum):
            out = {"op": "add", "args": ch, "coefs": list(node.coefs)}
            if node.const:
                out["const"] = node.const
        elif isinstance(node, ex.Product):
            out = {"op": "mul", "args": ch}
        elif isinstance(node, ex.Power):
            out = {"op": "pow", "arg": ch[0], "exp": node.exponent}
        else:
            out = {"op": node.fname, "arg": ch[0]}
        memo[id(node)] = out
    return memo[id(e)]


def model_from_dict(data: Mapping) -> Model:
    if not isinstance(data, Mapping):
        raise ModelError("model JSON must be an object")
    try:
        b = ModelBuilder(str(data.get("name", "model")), convex=bool(data.get("convex", False)))
        names: Dict[str, Var] = {}
        for vd in data["variables"]:
            name = vd["name"]
            if name in names:
                raise ModelError(f"duplicate variable {name!r}")
            names[name] = b.add_var(
                name, vd.get("domain", "continuous"),
                _bound_from_json(vd.get("lb", "-inf")), _bound_from_json(vd.get("ub", "inf")),
            )
        b.minimize(expr_from_json(data["objective"], names))
        for k, cd in enumerate(data.get("constraints", [])):
            b.add(expr_from_json(cd["expr"], names), cd.get("sense", "<="),
                  float(cd.get("rhs", 0.0)), cd.get("name", f"c{k}"))
    except KeyError as exc:
        raise ModelError(f"missing field {exc}") from None
    except ValueError as exc:
        if isinstance(exc, ModelError):
            raise
        raise ModelError(str(exc)) from None
    return b.build()


def model_to_dict(model: Model) -> dict:
    """Inverse of :func:`model_from_dict`; equality pairs are re-joined."""
    cons = []
    rows = list(model.constraints)
    i = 0
    while i < len(rows):
        c = rows[i]
        if c.origin is Sense.EQ:
            cons.append({"name": c.name.rstrip("+"), "expr": expr_to_json(c.body), "sense": "=", "rhs": 0.0})
            i += 2
            continue
        cons.append({"name": c.name, "expr": expr_to_json(c.body), "sense": "<=", "rhs": 0.0})
        i += 1
    return {
        "name": model.name,
        "convex": model.convexity is Convexity.DECLARED_CONVEX,
        "variables": [
            {"name": v.name, "domain": v.domain.value, "lb": _bound_to_json(v.lower), "ub": _bound_to_json(v.upper)}
            for v in model.variables
        ],
        "objective": expr_to_json(model.objective),
        "constraints": cons,
    }


def load_model(path) -> Model:
    with open(path) as fh:
        text = fh.read()
    return model_from_dict(json.loads(text))


def save_model(model: Model, path) -> None:
    with open(path, "w") as fh:
        json.dump(model_to_dict(model), fh, indent=1)
        fh.write("\n")
