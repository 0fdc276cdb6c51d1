"""Closed real intervals with outward-rounded arithmetic.

Rounding direction is recovered from error-free transformations (TwoSum,
Dekker's TwoProduct), so results that are exactly representable are not
widened.  Transcendental functions are widened by one ulp on each side
since libm gives no rounding guarantee.
"""
from __future__ import annotations

import math
from typing import Iterable, List, Optional

INF = math.inf
_SPLIT = 134217729.0  # 2**27 + 1
_SAFE_HI = 1e300
_SAFE_LO = 1e-280


def _down(x: float) -> float:
    return math.nextafter(x, -INF)


def _up(x: float) -> float:
    return math.nextafter(x, INF)


def _two_sum(a: float, b: float):
    s = a + b
    bb = s - a
    return s, (a - (s - bb)) + (b - bb)


def _split(a: float):
    c = _SPLIT * a
    hi = c - (c - a)
    return hi, a - hi


def _two_prod(a: float, b: float):
    p = a * b
    ah, al = _split(a)
    bh, bl = _split(b)
    return p, ((ah * bh - p) + ah * bl + al * bh) + al * bl


def add_down(a: float, b: float) -> float:
    if math.isinf(a) or math.isinf(b):
        return a + b
    s, e = _two_sum(a, b)
    return s if e >= 0 else _down(s)


def add_up(a: float, b: float) -> float:
    if math.isinf(a) or math.isinf(b):
        return a + b
    s, e = _two_sum(a, b)
    return s if e <= 0 else _up(s)


def _mul_err(a: float, b: float):
    p = a * b
    if math.isinf(p) or p == 0.0 or not (_SAFE_LO < abs(p) < _SAFE_HI) \
            or abs(a) > _SAFE_HI or abs(b) > _SAFE_HI:
        return p, None
    return _two_prod(a, b)


def mul_down(a: float, b: float) -> float:
    if a == 0.0 or b == 0.0:
        return 0.0
    p, e = _mul_err(a, b)
    if e is None:
        return p if math.isinf(p) else _down(p)
    return p if e >= 0 else _down(p)


def mul_up(a: float, b: float) -> float:
    if a == 0.0 or b == 0.0:
        return 0.0
    p, e = _mul_err(a, b)
    if e is None:
        return p if math.isinf(p) else _up(p)
    return p if e <= 0 else _up(p)


def _div_sign(a: float, b: float):
    """Quotient and the sign of (true quotient - computed quotient), or None."""
    q = a / b
    if math.isinf(q) or q == 0.0:
        return q, None
    p, e = _mul_err(q, b)
    if e is None:
        return q, None
    r = (a - p) - e
    if r == 0.0:
        return q, 0
    return q, 1 if (r > 0) == (b > 0) else -1


def div_down(a: float, b: float) -> float:
    if a == 0.0:
        return 0.0
    if math.isinf(a) or math.isinf(b):
        return a / b
    q, s = _div_sign(a, b)
    if s is None:
        return _down(q)
    return q if s >= 0 else _down(q)


def div_up(a: float, b: float) -> float:
    if a == 0.0:
        return 0.0
    if math.isinf(a) or math.isinf(b):
        return a / b
    q, s = _div_sign(a, b)
    if s is None:
        return _up(q)
    return q if s <= 0 else _up(q)


def sqrt_down(a: float) -> float:
    if a <= 0.0:
        return 0.0
    if math.isinf(a):
        return a
    q = math.sqrt(a)
    p, e = _mul_err(q, q)
    if e is None:
        return _down(q)
    return q if (a - p) - e >= 0 else _down(q)


def sqrt_up(a: float) -> float:
    if a <= 0.0:
        return 0.0
    if math.isinf(a):
        return a
    q = math.sqrt(a)
    p, e = _mul_err(q, q)
    if e is None:
        return _up(q)
    return q if (a - p) - e <= 0 else _up(q)


def pow_down_nonneg(a: float, n: int) -> float:
    r = 1.0
    for _ in range(n):
        r = mul_down(r, a)
    return r


def pow_up_nonneg(a: float, n: int) -> float:
    r = 1.0
    for _ in range(n):
        r = mul_up(r, a)
    return r


def root_down(a: float, n: int) -> float:
    """Lower bound on the nonnegative real n-th root of a >= 0."""
    if n == 2:
        return sqrt_down(a)
    if a <= 0.0:
        return 0.0
    if math.isinf(a):
        return a
    r = a ** (1.0 / n)
    while r > 0 and pow_up_nonneg(r, n) > a:
        r = _down(r)
    return r


def root_up(a: float, n: int) -> float:
    if n == 2:
        return sqrt_up(a)
    if a <= 0.0:
        return 0.0
    if math.isinf(a):
        return a
    r = a ** (1.0 / n)
    while pow_down_nonneg(r, n) < a:
        r = _up(r)
    return r


def exp_down(a: float) -> float:
    if a == 0.0:
        return 1.0
    if a == -INF:
        return 0.0
    try:
        return max(0.0, _down(math.exp(a)))
    except OverflowError:
        return _SAFE_HI


def exp_up(a: float) -> float:
    if a == 0.0:
        return 1.0
    try:
        return _up(math.exp(a))
    except OverflowError:
        return INF


def log_down(a: float) -> float:
    if a <= 0.0:
        return -INF
    if a == 1.0:
        return 0.0
    return _down(math.log(a))


def log_up(a: float) -> float:
    if a <= 0.0:
        return -INF
    if a == 1.0:
        return 0.0
    return _up(math.log(a))


class Interval:
    __slots__ = ("lo", "hi")

    def __init__(self, lo: float, hi: Optional[float] = None):
        if hi is None:
            hi = lo
        lo = float(lo)
        hi = float(hi)
        if math.isnan(lo) or math.isnan(hi):
            raise ValueError("NaN interval bound")
        if lo > hi:
            raise ValueError(f"empty interval [{lo}, {hi}]")
        self.lo = lo
        self.hi = hi

    @classmethod
    def entire(cls) -> "Interval":
        return cls(-INF, INF)

    def __repr__(self) -> str:
        return f"Interval({self.lo!r}, {self.hi!r})"

    def __eq__(self, other) -> bool:
        if not isinstance(other, Interval):
            return NotImplemented
        return self.lo == other.lo and self.hi == other.hi

    def __hash__(self):
        return hash((self.lo, self.hi))

    def __iter__(self):
        yield self.lo
        yield self.hi

    def __contains__(self, x: float) -> bool:
        return self.lo <= x <= self.hi

    @property
    def width(self) -> float:
        return self.hi - self.lo

    @property
    def mid(self) -> float:
        if math.isinf(self.lo) or math.isinf(self.hi):
            if math.isinf(self.lo) and math.isinf(self.hi):
                return 0.0
            return self.hi if math.isinf(self.lo) else self.lo
        return 0.5 * (self.lo + self.hi)

    def is_finite(self) -> bool:
        return not (math.isinf(self.lo) or math.isinf(self.hi))

    def is_point(self) -> bool:
        return self.lo == self.hi

    def contains_zero(self) -> bool:
        return self.lo <= 0.0 <= self.hi

    def subset_of(self, other: "Interval") -> bool:
        return other.lo <= self.lo and self.hi <= other.hi

    def intersect(self, other: "Interval") -> Optional["Interval"]:
        lo = max(self.lo, other.lo)
        hi = min(self.hi, other.hi)
        if lo > hi:
            return None
        return Interval(lo, hi)

    def hull(self, other: "Interval") -> "Interval":
        return Interval(min(self.lo, other.lo), max(self.hi, other.hi))

    # arithmetic ---------------------------------------------------------
    def __add__(self, other) -> "Interval":
        if not isinstance(other, Interval):
            other = Interval(other)
        return Interval(add_down(self.lo, other.lo), add_up(self.hi, other.hi))

    __radd__ = __add__

    def __neg__(self) -> "Interval":
        return Interval(-self.hi, -self.lo)

    def __sub__(self, other) -> "Interval":
        if not isinstance(other, Interval):
            other = Interval(other)
        return self + (-other)

    def __rsub__(self, other) -> "Interval":
        return Interval(other) - self

    def scale(self, c: float) -> "Interval":
        if c == 0.0:
            return Interval(0.0)
        if c > 0:
            return Interval(mul_down(c, self.lo), mul_up(c, self.hi))
        return Interval(mul_down(c, self.hi), mul_up(c, self.lo))

    def __mul__(self, other) -> "Interval":
        if not isinstance(other, Interval):
            return self.scale(float(other))
        a, b, c, d = self.lo, self.hi, other.lo, other.hi
        lo = min(mul_down(a, c), mul_down(a, d), mul_down(b, c), mul_down(b, d))
        hi = max(mul_up(a, c), mul_up(a, d), mul_up(b, c), mul_up(b, d))
        return Interval(lo, hi)

    __rmul__ = __mul__

    def recip(self) -> "Interval":
        """Hull of {1/x : x in self, x != 0}; raises EmptyDomain on [0, 0]."""
        from .errors import EmptyDomain

        a, b = self.lo, self.hi
        if a == 0.0 and b == 0.0:
            raise EmptyDomain("reciprocal of [0, 0]")
        if a > 0 or b < 0:
            return Interval(div_down(1.0, b), div_up(1.0, a))
        if a == 0.0:
            return Interval(div_down(1.0, b), INF)
        if b == 0.0:
            return Interval(-INF, div_up(1.0, a))
        return Interval.entire()

    def __truediv__(self, other) -> "Interval":
        if not isinstance(other, Interval):
            other = Interval(other)
        return self * other.recip()

    def __pow__(self, n: int) -> "Interval":
        if not isinstance(n, int):
            raise TypeError("only integer exponents")
        if n == 0:
            return Interval(1.0)
        if n < 0:
            return (self ** (-n)).recip()
        a, b = self.lo, self.hi
        if n % 2 == 1:
            lo = pow_down_nonneg(a, n) if a >= 0 else -pow_up_nonneg(-a, n)
            hi = pow_up_nonneg(b, n) if b >= 0 else -pow_down_nonneg(-b, n)
            return Interval(lo, hi)
        if a >= 0:
            return Interval(pow_down_nonneg(a, n), pow_up_nonneg(b, n))
        if b <= 0:
            return Interval(pow_down_nonneg(-b, n), pow_up_nonneg(-a, n))
        return Interval(0.0, pow_up_nonneg(max(-a, b), n))

    def exp(self) -> "Interval":
        return Interval(exp_down(self.lo), exp_up(self.hi))

    def log(self) -> "Interval":
        from .errors import EmptyDomain

        if self.hi <= 0.0:
            raise EmptyDomain(f"log of {self}")
        return Interval(log_down(self.lo), log_up(self.hi))

    def sqrt(self) -> "Interval":
        from .errors import EmptyDomain

        if self.hi < 0.0:
            raise EmptyDomain(f"sqrt of {self}")
        return Interval(sqrt_down(max(self.lo, 0.0)), sqrt_up(self.hi))


def hull_of(parts: Iterable[Interval]) -> Optional[Interval]:
    out = None
    for p in parts:
        out = p if out is None else out.hull(p)
    return out


def extended_div(num: Interval, den: Interval) -> List[Interval]:
    """Pieces of {a : a*b in num for some b in den}, split at den's zero.

    An empty list means no quotient exists; ``[entire]`` means no information.
    """
    if not den.contains_zero():
        return [num * den.recip()]
    if num.contains_zero():
        return [Interval.entire()]
    if den.lo == 0.0 and den.hi == 0.0:
        return []
    pieces = []
    if den.hi > 0.0:
        if num.lo > 0.0:
            pieces.append(Interval(div_down(num.lo, den.hi), INF))
        else:
            pieces.append(Interval(-INF, div_up(num.hi, den.hi)))
    if den.lo < 0.0:
        if num.lo > 0.0:
            pieces.append(Interval(-INF, div_up(num.lo, den.lo)))
        else:
            pieces.append(Interval(div_down(num.hi, den.lo), INF))
    return pieces
