import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from oaconvex import expr as ex
from oaconvex.errors import NonBinaryError, UnboundedBox
from oaconvex.interval import Interval
from oaconvex.lp import LinearProgram, LpStatus, solve_lp
from oaconvex.model import Box, ModelBuilder
from oaconvex.presolve import linear_rows
from oaconvex.relaxation import (CutKind, LinearCut, TangentPolicy, affine_underestimator, avm_decompose,
                                 convexification_cuts, envelope, factor_cuts, mccormick_eval, no_good_cut,
                                 read_cuts, write_cuts)

from strategies import boxes, sample_box, smooth_exprs


def X(i):
    return ex.Var(i, f"x{i}")


# -- McCormick values ----------------------------------------------------------

def test_bilinear_unit_box_midpoint():
    m = mccormick_eval(X(0) * X(1), Box([0, 0], [1, 1]), [0.5, 0.5])
    assert m.cv == pytest.approx(0.0, abs=1e-15)
    assert m.cc == pytest.approx(0.5, abs=1e-15)


def test_square_on_zero_two():
    m = mccormick_eval(X(0) ** 2, Box([0], [2]), [1.0])
    assert m.cv == pytest.approx(1.0)
    assert m.cc == pytest.approx(2.0)


@settings(max_examples=150, deadline=None)
@given(smooth_exprs(), boxes(), st.integers(0, 2**31 - 1))
def test_sandwich_and_subgradients(e, box, seed):
    rng = np.random.default_rng(seed)
    for p in sample_box(box, rng, 5):
        m = mccormick_eval(e, box, p)
        v = ex.evaluate(e, p)
        tol = 1e-9 * (1 + abs(v))
        assert m.cv <= v + tol and v <= m.cc + tol
        for q in sample_box(box, rng, 20):
            w = ex.evaluate(e, q)
            assert m.under_at(q, p) <= w + 1e-8 * (1 + abs(w))
            assert m.over_at(q, p) >= w - 1e-8 * (1 + abs(w))


@settings(max_examples=60, deadline=None)
@given(smooth_exprs(), boxes(), st.integers(0, 2**31 - 1))
def test_relaxation_tightens_with_the_box(e, box, seed):
    p = sample_box(box, np.random.default_rng(seed), 1)[0]
    inner = Box(np.minimum(p, 0.5 * (box.lo + p)), np.maximum(p, 0.5 * (box.hi + p)))
    outer, tight = mccormick_eval(e, box, p), mccormick_eval(e, inner, p)
    assert tight.cv >= outer.cv - 1e-9 * (1 + abs(outer.cv))
    assert tight.cc <= outer.cc + 1e-9 * (1 + abs(outer.cc))


# -- univariate envelopes ------------------------------------------------------

@settings(max_examples=100, deadline=None)
@given(st.sampled_from(["exp", "log", "sqrt", "inv", "sq", "cube", "quart", "cube_neg", "inv_neg"]),
       st.floats(-3, 3), st.floats(0.01, 4), st.integers(0, 2**31 - 1))
def test_envelopes_bracket_the_function(kind, a, w, seed):
    u = X(0)
    node = {"exp": ex.exp(u), "log": ex.log(u), "sqrt": ex.sqrt(u), "inv": ex.reciprocal(u),
            "sq": u ** 2, "cube": u ** 3, "quart": u ** 4, "cube_neg": u ** 3, "inv_neg": ex.reciprocal(u)}[kind]
    lo, hi = a, a + w
    if kind in ("log", "sqrt", "inv"):
        lo, hi = abs(a) + 0.01, abs(a) + 0.01 + w
    if kind == "inv_neg":
        lo, hi = -(abs(a) + 0.01 + w), -(abs(a) + 0.01)
    env = envelope(node, Interval(lo, hi))
    f = lambda t: ex.evaluate(node, [t])
    ts = np.random.default_rng(seed).uniform(lo, hi, 200)
    for t in ts:
        tol = 1e-9 * (1 + abs(f(t)))
        assert env.under(t) <= f(t) + tol
        assert env.over(t) >= f(t) - tol
    # under is convex and over is concave along the sample grid
    g = np.linspace(lo, hi, 41)
    us, os_ = [env.under(t) for t in g], [env.over(t) for t in g]
    for k in range(1, 40):
        s = 1e-7 * (1 + abs(us[k]))
        assert us[k] <= 0.5 * (us[k - 1] + us[k + 1]) + s
        assert os_[k] >= 0.5 * (os_[k - 1] + os_[k + 1]) - 1e-7 * (1 + abs(os_[k]))


def test_odd_power_envelope_is_tight_where_convex():
    env = envelope(X(0) ** 3, Interval(-1, 2))
    for t in np.linspace(0.6, 2, 9):
        assert env.under(t) == pytest.approx(t ** 3, rel=1e-12)


def test_envelope_rejects_unbounded_domains():
    with pytest.raises(UnboundedBox):
        envelope(ex.exp(X(0)), Interval(0, math.inf))
    with pytest.raises(UnboundedBox):
        envelope(ex.log(X(0)), Interval(0, 1))


# -- affine underestimators ----------------------------------------------------

def test_tangent_of_square():
    cut = affine_underestimator(X(0) ** 2, Box([0], [2]), [1.0], epigraph=True)
    assert cut.coeffs() == {0: 2.0} and cut.mu == -1.0 and cut.rhs == pytest.approx(1.0)


def test_constant_expression_cut():
    cut = affine_underestimator(ex.Const(3.0), Box([0], [1]), [0.5], epigraph=True)
    assert cut.coeffs() == {} and cut.mu == -1.0 and cut.rhs == pytest.approx(-3.0)
    assert cut.violation([0.5], mu=3.0) <= 0.0 and cut.violation([0.5], mu=2.9) > 0.0


@settings(max_examples=100, deadline=None)
@given(smooth_exprs(), boxes(), st.integers(0, 2**31 - 1))
def test_affine_underestimator_is_valid(e, box, seed):
    rng = np.random.default_rng(seed)
    p = sample_box(box, rng, 1)[0]
    cut = affine_underestimator(e, box, p)
    for q in sample_box(box, rng, 1000 // 10):
        w = ex.evaluate(e, q)
        assert cut.lhs(q) - cut.rhs <= w + 1e-8 * (1 + abs(w))


# -- decomposition and envelope cuts ----------------------------------------------

def _xy_model(obj):
    mb = ModelBuilder("xy")
    x = mb.continuous("x", 0, 1)
    y = mb.continuous("y", 0, 1)
    mb.minimize(obj(x, y))
    return mb.build()


def test_decomposition_counts_and_bounds():
    dec = avm_decompose(_xy_model(lambda x, y: x * y + x ** 2))
    assert len(dec.aux) == 2 and len(dec.factor_rows) == 2
    prod = next(a for a in dec.aux if a.op == "mul")
    assert (prod.bounds.lo, prod.bounds.hi) == (0.0, 1.0)
    assert len(avm_decompose(_xy_model(lambda x, y: x + 2 * y)).aux) == 0


def test_bilinear_factor_gives_four_planes():
    m = _xy_model(lambda x, y: x * y)
    dec = avm_decompose(m)
    a = dec.aux[0]
    cuts = factor_cuts(a)
    assert len(cuts) == 4
    z = a.id
    expected = {((0, 0.0), (1, 0.0), (z, -1.0), 0.0),   # z >= 0
                ((0, 1.0), (1, 1.0), (z, -1.0), 1.0),   # z >= x + y - 1
                ((1, -1.0), (z, 1.0), 0.0),             # z <= y
                ((0, -1.0), (z, 1.0), 0.0)}             # z <= x
    got = set()
    for coeffs, rhs in cuts:
        got.add(tuple(sorted((i, v + 0.0) for i, v in coeffs.items())) + (rhs + 0.0,))
    norm = {tuple((i, v) for i, v in k[:-1] if v != 0.0) + (k[-1],) for k in expected}
    assert {tuple((i, v) for i, v in k[:-1] if v != 0.0) + (k[-1],) for k in got} == norm


def test_square_factor_tangents_and_secant():
    mb = ModelBuilder("sq")
    x = mb.continuous("x", 0, 2)
    mb.minimize(x ** 2)
    dec = avm_decompose(mb.build())
    a = dec.aux[0]
    cuts = factor_cuts(a, [(1.0,)], TangentPolicy(endpoints=True, midpoint=False, current=True))
    z = a.id
    under = [(c, r) for c, r in cuts if c.get(z, 0) < 0]
    over = [(c, r) for c, r in cuts if c.get(z, 0) > 0]
    # z >= 2a x - a^2 for a in {0, 1, 2}
    assert sorted((c.get(0, 0.0), r) for c, r in under) == [(0.0, 0.0), (2.0, 1.0), (4.0, 4.0)]
    assert len(over) == 1 and over[0][0] == {0: -2.0, z: 1.0} and over[0][1] == pytest.approx(0.0)


def test_envelope_cut_lp_bound_below_true_optimum():
    # min -x z + y  s.t. x + z <= 1 + y; optimum -0.25
    mb = ModelBuilder("bil")
    x = mb.continuous("x", 0, 1)
    z = mb.continuous("z", 0, 1)
    y = mb.binary("y")
    mb.add(x + z, "<=", 1 + y)
    mb.minimize(-x * z + y)
    m = mb.build()
    dec = avm_decompose(m)
    cuts = convexification_cuts(m, points=[[0.5, 0.5, 0.0]], decomposition=dec)
    width = dec.width + 1
    A, b = linear_rows(m, cuts, width, mu_index=width - 1)
    c = np.zeros(width)
    c[-1] = 1
    lo = np.concatenate([m.box().lo, [a.bounds.lo for a in dec.aux], [-1e9]])
    hi = np.concatenate([m.box().hi, [a.bounds.hi for a in dec.aux], [1e9]])
    sol = solve_lp(LinearProgram(c, A, b, np.zeros(len(b), bool), lo, hi))
    assert sol.status is LpStatus.OPTIMAL and sol.objective <= -0.25 + 1e-9


def test_envelope_cuts_hold_at_lifted_points():
    mb = ModelBuilder("mix")
    x = mb.continuous("x", 0.5, 2)
    w = mb.continuous("w", -1, 1)
    mb.add(ex.exp(w) + ex.log(x) + x * w, "<=", 3)
    mb.minimize(x ** 2 + ex.sqrt(x) - w ** 3 + ex.reciprocal(x))
    m = mb.build()
    dec = avm_decompose(m)
    cuts = convexification_cuts(m, points=[[1.0, 0.0]], decomposition=dec)
    rng = np.random.default_rng(3)
    pts = [p for p in rng.uniform(m.box().lo, m.box().hi, (800, 2)) if m.max_violation(p) <= 0]
    assert len(pts) > 100
    for p in pts:
        lifted = dec.lift(p)
        f = ex.evaluate(m.objective, p)
        for c in cuts:
            assert c.violation(lifted, mu=f) <= 1e-9 * (1 + abs(f)), c.source


# -- no-good cuts ----------------------------------------------------------------

def test_no_good_one_zero_one():
    cut = no_good_cut((1, 0, 1))
    # y1 - y2 + y3 <= 1
    assert cut.coeffs() == {0: 1.0, 1: -1.0, 2: 1.0} and cut.rhs == 1.0 and cut.kind is CutKind.NO_GOOD


def test_no_good_zero_zero_excludes_only_origin():
    cut = no_good_cut((0, 0))
    bad = [p for p in itertools.product((0, 1), repeat=2) if cut.violation(p) > 0]
    assert bad == [(0, 0)]


@given(st.lists(st.integers(0, 1), min_size=1, max_size=4))
def test_no_good_excludes_exactly_one(y):
    cut = no_good_cut(y)
    bad = [p for p in itertools.product((0, 1), repeat=len(y)) if cut.violation(p) > 1e-12]
    assert bad == [tuple(y)]


def test_no_good_needs_binaries():
    with pytest.raises(NonBinaryError):
        no_good_cut((0, 2))


def test_cut_json_round_trip(tmp_path):
    cuts = [no_good_cut((1, 0)), LinearCut.from_coeffs({0: 2.0, 3: -1.0}, 1.5, CutKind.ENVELOPE,
                                                         discrete=(1,), n=3, source="envelope:mul:z0")]
    path = tmp_path / "cuts.jsonl"
    write_cuts(cuts, path)
    again = read_cuts(path)
    assert [c.to_json() for c in again] == [c.to_json() for c in cuts]
