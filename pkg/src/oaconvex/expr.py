"""Expression DAGs over model variables.

Nodes are immutable and compared by identity, so a subexpression reused in
several places is a single shared node.  Division is written as a product
with a reciprocal and subtraction as an affine sum; constants are folded at
build time.
"""
from __future__ import annotations

import math
from typing import Callable, Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np

from .errors import DomainError, EmptyDomain
from .interval import Interval


class Expr:
    __slots__ = ("_tape", "_fn")
    children: Tuple["Expr", ...] = ()

    def __init__(self):
        self._tape = None
        self._fn = None

    # builders -----------------------------------------------------------
    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return add(self, scale(other, -1.0))

    def __rsub__(self, other):
        return add(other, scale(self, -1.0))

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __truediv__(self, other):
        if _is_number(other):
            return scale(self, 1.0 / float(other))
        return mul(self, reciprocal(other))

    def __rtruediv__(self, other):
        return mul(other, reciprocal(self))

    def __neg__(self):
        return negate(self)

    def __pow__(self, k):
        return power(self, k)

    def __hash__(self):
        return id(self)

    def __eq__(self, other):
        return self is other


class Const(Expr):
    __slots__ = ("value",)

    def __init__(self, value: float):
        super().__init__()
        self.value = float(value)

    def __repr__(self):
        return repr(self.value)


class Var(Expr):
    __slots__ = ("index", "name")

    def __init__(self, index: int, name: str = ""):
        super().__init__()
        self.index = int(index)
        self.name = name or f"v{index}"

    def __repr__(self):
        return self.name


class Sum(Expr):
    """Affine combination ``const + sum(coef_i * term_i)``."""

    __slots__ = ("children", "coefs", "const")

    def __init__(self, terms: Sequence[Expr], coefs: Sequence[float], const: float = 0.0):
        super().__init__()
        self.children = tuple(terms)
        self.coefs = tuple(float(c) for c in coefs)
        self.const = float(const)

    def __repr__(self):
        parts = [f"{c:g}*{t!r}" for t, c in zip(self.children, self.coefs)]
        if self.const:
            parts.append(f"{self.const:g}")
        return "(" + " + ".join(parts) + ")"


class Product(Expr):
    __slots__ = ("children",)

    def __init__(self, left: Expr, right: Expr):
        super().__init__()
        self.children = (left, right)

    def __repr__(self):
        return f"({self.children[0]!r} * {self.children[1]!r})"


class Power(Expr):
    __slots__ = ("children", "exponent")

    def __init__(self, base: Expr, exponent: int):
        super().__init__()
        self.children = (base,)
        self.exponent = int(exponent)

    def __repr__(self):
        return f"{self.children[0]!r}**{self.exponent}"


class _Unary(Expr):
    __slots__ = ("children",)
    fname = "?"

    def __init__(self, child: Expr):
        super().__init__()
        self.children = (child,)

    def __repr__(self):
        return f"{self.fname}({self.children[0]!r})"


class Exp(_Unary):
    __slots__ = ()
    fname = "exp"


class Log(_Unary):
    __slots__ = ()
    fname = "log"


class Sqrt(_Unary):
    __slots__ = ()
    fname = "sqrt"


class Negate(_Unary):
    __slots__ = ()
    fname = "neg"


class Reciprocal(_Unary):
    __slots__ = ()
    fname = "inv"


# --------------------------------------------------------------------------
# construction with constant folding


def _is_number(x) -> bool:
    return isinstance(x, (int, float, np.integer, np.floating)) and not isinstance(x, bool)


def as_expr(x) -> Expr:
    if isinstance(x, Expr):
        return x
    if _is_number(x):
        return Const(float(x))
    raise TypeError(f"cannot convert {type(x).__name__} to Expr")


def _sum_parts(e: Expr):
    if isinstance(e, Sum):
        return list(e.children), list(e.coefs), e.const
    if isinstance(e, Const):
        return [], [], e.value
    return [e], [1.0], 0.0


def _make_sum(terms, coefs, const) -> Expr:
    merged: Dict[int, List] = {}
    order = []
    for t, c in zip(terms, coefs):
        key = id(t)
        if key in merged:
            merged[key][1] += c
        else:
            merged[key] = [t, c]
            order.append(key)
    out_t, out_c = [], []
    for key in order:
        t, c = merged[key]
        if c != 0.0:
            out_t.append(t)
            out_c.append(c)
    if not out_t:
        return Const(const)
    if len(out_t) == 1 and out_c[0] == 1.0 and const == 0.0:
        return out_t[0]
    return Sum(out_t, out_c, const)


def add(a, b) -> Expr:
    a, b = as_expr(a), as_expr(b)
    if isinstance(a, Const) and isinstance(b, Const):
        return Const(a.value + b.value)
    ta, ca, ka = _sum_parts(a)
    tb, cb, kb = _sum_parts(b)
    return _make_sum(ta + tb, ca + cb, ka + kb)


def linear_sum(terms: Iterable, coefs: Iterable[float], const: float = 0.0) -> Expr:
    """Build ``const + sum(c*t)`` without nesting Sum nodes."""
    tt, cc, k = [], [], float(const)
    for t, c in zip(terms, coefs):
        t = as_expr(t)
        pt, pc, pk = _sum_parts(t)
        tt.extend(pt)
        cc.extend(float(c) * x for x in pc)
        k += float(c) * pk
    return _make_sum(tt, cc, k)


def scale(e, c: float) -> Expr:
    e = as_expr(e)
    c = float(c)
    if c == 1.0:
        return e
    if c == 0.0:
        return Const(0.0)
    if isinstance(e, Const):
        return Const(c * e.value)
    t, cs, k = _sum_parts(e)
    return _make_sum(t, [c * x for x in cs], c * k)


def mul(a, b) -> Expr:
    a, b = as_expr(a), as_expr(b)
    if isinstance(a, Const):
        return scale(b, a.value)
    if isinstance(b, Const):
        return scale(a, b.value)
    return Product(a, b)


def negate(e) -> Expr:
    e = as_expr(e)
    if isinstance(e, (Const, Sum)):
        return scale(e, -1.0)
    if isinstance(e, Negate):
        return e.children[0]
    return Negate(e)


def power(e, k) -> Expr:
    if isinstance(k, float) and k.is_integer():
        k = int(k)
    if not isinstance(k, (int, np.integer)):
        raise TypeError("exponent must be an integer; use sqrt() for 1/2")
    k = int(k)
    e = as_expr(e)
    if k == 0:
        return Const(1.0)
    if k == 1:
        return e
    if isinstance(e, Const):
        if e.value == 0.0 and k < 0:
            raise DomainError("0 to a negative power")
        return Const(e.value ** k)
    return Power(e, k)


def exp(e) -> Expr:
    e = as_expr(e)
    if isinstance(e, Const):
        return Const(math.exp(e.value))
    return Exp(e)


def log(e) -> Expr:
    e = as_expr(e)
    if isinstance(e, Const):
        if e.value <= 0:
            raise DomainError(f"log({e.value})")
        return Const(math.log(e.value))
    return Log(e)


def sqrt(e) -> Expr:
    e = as_expr(e)
    if isinstance(e, Const):
        if e.value < 0:
            raise DomainError(f"sqrt({e.value})")
        return Const(math.sqrt(e.value))
    return Sqrt(e)


def reciprocal(e) -> Expr:
    e = as_expr(e)
    if isinstance(e, Const):
        if e.value == 0.0:
            raise DomainError("1/0")
        return Const(1.0 / e.value)
    if isinstance(e, Reciprocal):
        return e.children[0]
    return Reciprocal(e)


# --------------------------------------------------------------------------
# traversal


def topo_order(root: Expr) -> List[Expr]:
    """Nodes of the DAG, children before parents, each exactly once."""
    seen = set()
    out: List[Expr] = []
    stack: List[Tuple[Expr, bool]] = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            out.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for ch in reversed(node.children):
            if id(ch) not in seen:
                stack.append((ch, False))
    return out


class Tape:
    """Flattened DAG: node list plus child positions."""

    __slots__ = ("nodes", "kids", "pos")

    def __init__(self, root: Expr):
        self.nodes = topo_order(root)
        self.pos = {id(n): i for i, n in enumerate(self.nodes)}
        self.kids = [tuple(self.pos[id(c)] for c in n.children) for n in self.nodes]


def tape(e: Expr) -> Tape:
    if e._tape is None:
        e._tape = Tape(e)
    return e._tape


def variables_in(e: Expr) -> List[int]:
    return sorted({n.index for n in tape(e).nodes if isinstance(n, Var)})


def is_linear(e: Expr) -> bool:
    return all(isinstance(n, (Const, Var, Sum, Negate)) for n in tape(e).nodes)


def linear_coefficients(e: Expr) -> Tuple[Dict[int, float], float]:
    """Coefficient map and constant of a structurally linear expression."""
    t = tape(e)
    forms: List[Tuple[Dict[int, float], float]] = []
    for node, kids in zip(t.nodes, t.kids):
        if isinstance(node, Const):
            forms.append(({}, node.value))
        elif isinstance(node, Var):
            forms.append(({node.index: 1.0}, 0.0))
        elif isinstance(node, Sum):
            acc: Dict[int, float] = {}
            k = node.const
            for c, ki in zip(node.coefs, kids):
                d, kk = forms[ki]
                for v, a in d.items():
                    acc[v] = acc.get(v, 0.0) + c * a
                k += c * kk
            forms.append((acc, k))
        elif isinstance(node, Negate):
            d, kk = forms[kids[0]]
            forms.append(({v: -a for v, a in d.items()}, -kk))
        else:
            raise ValueError(f"expression is not linear: {node!r}")
    coeffs, const = forms[-1]
    return {v: a for v, a in coeffs.items() if a != 0.0}, const


def substitute(e: Expr, mapping: Dict[int, Expr]) -> Expr:
    """Replace Var nodes by index; shared structure is preserved."""
    t = tape(e)
    new: List[Expr] = []
    for node, kids in zip(t.nodes, t.kids):
        ch = [new[k] for k in kids]
        if isinstance(node, Var):
            new.append(mapping.get(node.index, node))
        elif isinstance(node, Const):
            new.append(node)
        elif all(c is o for c, o in zip(ch, node.children)):
            new.append(node)
        elif isinstance(node, Sum):
            new.append(linear_sum(ch, node.coefs, node.const))
        elif isinstance(node, Product):
            new.append(mul(ch[0], ch[1]))
        elif isinstance(node, Power):
            new.append(power(ch[0], node.exponent))
        elif isinstance(node, Exp):
            new.append(exp(ch[0]))
        elif isinstance(node, Log):
            new.append(log(ch[0]))
        elif isinstance(node, Sqrt):
            new.append(sqrt(ch[0]))
        elif isinstance(node, Negate):
            new.append(negate(ch[0]))
        elif isinstance(node, Reciprocal):
            new.append(reciprocal(ch[0]))
        else:  # pragma: no cover
            raise TypeError(node)
    return new[-1]


# --------------------------------------------------------------------------
# point evaluation and reverse-mode differentiation


def _forward(t: Tape, point) -> List[float]:
    vals: List[float] = []
    for node, kids in zip(t.nodes, t.kids):
        if isinstance(node, Var):
            v = float(point[node.index])
        elif isinstance(node, Const):
            v = node.value
        elif isinstance(node, Sum):
            v = node.const
            for c, k in zip(node.coefs, kids):
                v += c * vals[k]
        elif isinstance(node, Product):
            v = vals[kids[0]] * vals[kids[1]]
        elif isinstance(node, Power):
            b = vals[kids[0]]
            if b == 0.0 and node.exponent < 0:
                raise DomainError(f"0**{node.exponent}")
            try:
                v = b ** node.exponent
            except OverflowError as exc:
                raise DomainError(str(exc)) from None
        elif isinstance(node, Exp):
            try:
                v = math.exp(vals[kids[0]])
            except OverflowError:
                raise DomainError("exp overflow") from None
        elif isinstance(node, Log):
            a = vals[kids[0]]
            if not a > 0.0:
                raise DomainError(f"log({a})")
            v = math.log(a)
        elif isinstance(node, Sqrt):
            a = vals[kids[0]]
            if a < 0.0:
                raise DomainError(f"sqrt({a})")
            v = math.sqrt(a)
        elif isinstance(node, Negate):
            v = -vals[kids[0]]
        elif isinstance(node, Reciprocal):
            a = vals[kids[0]]
            if a == 0.0:
                raise DomainError("1/0")
            v = 1.0 / a
        else:  # pragma: no cover
            raise TypeError(node)
        vals.append(v)
    return vals


def evaluate(e: Expr, point) -> float:
    """Value of the expression at ``point`` (indexable by variable id)."""
    return _forward(tape(e), point)[-1]


def gradient(e: Expr, point, n: Optional[int] = None) -> np.ndarray:
    """Exact gradient by one reverse sweep over the tape.

    The returned vector has length ``n`` (default ``len(point)``); variables
    absent from the expression get 0.
    """
    t = tape(e)
    vals = _forward(t, point)
    adj = [0.0] * len(vals)
    adj[-1] = 1.0
    out = np.zeros(len(point) if n is None else n)
    for i in range(len(vals) - 1, -1, -1):
        a = adj[i]
        if a == 0.0:
            continue
        node, kids = t.nodes[i], t.kids[i]
        if isinstance(node, Var):
            out[node.index] += a
        elif isinstance(node, Sum):
            for c, k in zip(node.coefs, kids):
                adj[k] += c * a
        elif isinstance(node, Product):
            l, r = kids
            adj[l] += a * vals[r]
            adj[r] += a * vals[l]
        elif isinstance(node, Power):
            k = kids[0]
            p = node.exponent
            adj[k] += a * p * vals[k] ** (p - 1)
        elif isinstance(node, Exp):
            adj[kids[0]] += a * vals[i]
        elif isinstance(node, Log):
            adj[kids[0]] += a / vals[kids[0]]
        elif isinstance(node, Sqrt):
            if vals[i] == 0.0:
                raise DomainError("sqrt not differentiable at 0")
            adj[kids[0]] += a * 0.5 / vals[i]
        elif isinstance(node, Negate):
            adj[kids[0]] -= a
        elif isinstance(node, Reciprocal):
            adj[kids[0]] -= a * vals[i] * vals[i]
    return out


# --------------------------------------------------------------------------
# interval evaluation


def _box_interval(box, index: int) -> Interval:
    return box[index]


def node_intervals(e: Expr, box) -> List[Interval]:
    """Natural interval extension at every tape position (outward rounded)."""
    t = tape(e)
    ivs: List[Interval] = []
    for node, kids in zip(t.nodes, t.kids):
        if isinstance(node, Var):
            iv = _box_interval(box, node.index)
        elif isinstance(node, Const):
            iv = Interval(node.value)
        elif isinstance(node, Sum):
            iv = Interval(node.const)
            for c, k in zip(node.coefs, kids):
                iv = iv + ivs[k].scale(c)
        elif isinstance(node, Product):
            l, r = kids
            iv = ivs[l] ** 2 if l == r else ivs[l] * ivs[r]
        elif isinstance(node, Power):
            base = ivs[kids[0]]
            if node.exponent < 0 and base.lo == 0.0 and base.hi == 0.0:
                raise EmptyDomain(f"{node!r} over [0, 0]")
            iv = base ** node.exponent
        elif isinstance(node, Exp):
            iv = ivs[kids[0]].exp()
        elif isinstance(node, Log):
            iv = ivs[kids[0]].log()
        elif isinstance(node, Sqrt):
            iv = ivs[kids[0]].sqrt()
        elif isinstance(node, Negate):
            iv = -ivs[kids[0]]
        elif isinstance(node, Reciprocal):
            iv = ivs[kids[0]].recip()
        else:  # pragma: no cover
            raise TypeError(node)
        ivs.append(iv)
    return ivs


def interval_eval(e: Expr, box) -> Interval:
    """Enclosure of the expression's range over ``box``."""
    return node_intervals(e, box)[-1]


# --------------------------------------------------------------------------
# code generation for the hot loops of the NLP solver


def _codegen(e: Expr, name: str) -> str:
    t = tape(e)
    fwd, bwd = [], []
    tv = [f"t{i}" for i in range(len(t.nodes))]
    for i, (node, kids) in enumerate(zip(t.nodes, t.kids)):
        if isinstance(node, Var):
            fwd.append(f"{tv[i]} = v[{node.index}]")
        elif isinstance(node, Const):
            fwd.append(f"{tv[i]} = {node.value!r}")
        elif isinstance(node, Sum):
            terms = " + ".join(f"{c!r}*{tv[k]}" for c, k in zip(node.coefs, kids))
            fwd.append(f"{tv[i]} = {node.const!r} + {terms}")
        elif isinstance(node, Product):
            fwd.append(f"{tv[i]} = {tv[kids[0]]} * {tv[kids[1]]}")
        elif isinstance(node, Power):
            fwd.append(f"{tv[i]} = {tv[kids[0]]} ** {node.exponent}")
        elif isinstance(node, Exp):
            fwd.append(f"{tv[i]} = _exp({tv[kids[0]]})")
        elif isinstance(node, Log):
            fwd.append(f"{tv[i]} = _log({tv[kids[0]]})")
        elif isinstance(node, Sqrt):
            fwd.append(f"{tv[i]} = _sqrt({tv[kids[0]]})")
        elif isinstance(node, Negate):
            fwd.append(f"{tv[i]} = -{tv[kids[0]]}")
        elif isinstance(node, Reciprocal):
            fwd.append(f"{tv[i]} = 1.0 / {tv[kids[0]]}")
    last = len(t.nodes) - 1
    bwd.append(f"a{last} = 1.0")
    declared = {last}

    def acc(k, term):
        if k in declared:
            bwd.append(f"a{k} += {term}")
        else:
            declared.add(k)
            bwd.append(f"a{k} = {term}")

    for i in range(last, -1, -1):
        if i not in declared:
            continue
        node, kids = t.nodes[i], t.kids[i]
        a = f"a{i}"
        if isinstance(node, Var):
            bwd.append(f"g[{node.index}] += {a}")
        elif isinstance(node, Sum):
            for c, k in zip(node.coefs, kids):
                acc(k, f"{c!r}*{a}")
        elif isinstance(node, Product):
            l, r = kids
            acc(l, f"{a}*{tv[r]}")
            acc(r, f"{a}*{tv[l]}")
        elif isinstance(node, Power):
            p = node.exponent
            acc(kids[0], f"{a}*{p}*{tv[kids[0]]}**{p - 1}")
        elif isinstance(node, Exp):
            acc(kids[0], f"{a}*{tv[i]}")
        elif isinstance(node, Log):
            acc(kids[0], f"{a}/{tv[kids[0]]}")
        elif isinstance(node, Sqrt):
            acc(kids[0], f"{a}*0.5/{tv[i]}")
        elif isinstance(node, Negate):
            acc(kids[0], f"-{a}")
        elif isinstance(node, Reciprocal):
            acc(kids[0], f"-{a}*{tv[i]}*{tv[i]}")
    body_f = "\n    ".join(fwd)
    body_b = "\n    ".join(bwd)
    return (
        f"def {name}_val(v):\n    {body_f}\n    return {tv[last]}\n\n"
        f"def {name}_grad(v, g):\n    {body_f}\n    {body_b}\n    return {tv[last]}\n"
    )


def _domain_guard(fn):
    def wrapped(*args):
        try:
            return fn(*args)
        except (ValueError, ZeroDivisionError, OverflowError) as exc:
            raise DomainError(str(exc)) from None

    return wrapped


def compile_expr(e: Expr) -> Tuple[Callable, Callable]:
    """Compile to ``(val(v), grad(v, g))``.

    ``grad`` accumulates the gradient into the mutable sequence ``g`` and
    returns the value.  Both take a plain list for speed.
    """
    if e._fn is None:
        src = _codegen(e, "f")
        ns = {"_exp": math.exp, "_log": math.log, "_sqrt": math.sqrt}
        exec(compile(src, "<oaconvex-expr>", "exec"), ns)
        e._fn = (_domain_guard(ns["f_val"]), _domain_guard(ns["f_grad"]))
    return e._fn
