import itertools
import json
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.optimize import minimize_scalar

from oaconvex import expr as ex
from oaconvex.errors import AssignmentError, DomainError, ModelError
from oaconvex.interval import Interval, extended_div
from oaconvex.model import (Box, ModelBuilder, binary_expand, fix_integers, load_model, make_feasibility,
                            model_from_dict, model_to_dict, relax_integrality, save_model)
from oaconvex.nlp import solve_local

from strategies import boxes, sample_box, smooth_exprs


def X(i):
    return ex.Var(i, f"x{i}")


# -- evaluation --------------------------------------------------------------

def test_evaluate_examples():
    x, y = X(0), X(1)
    assert ex.evaluate(x ** 2 + y, [2.0, 3.0]) == 7.0
    assert ex.evaluate(ex.exp(x), [0.0]) == 1.0
    with pytest.raises(DomainError):
        ex.evaluate(ex.log(x * y), [1.0, 0.0])


def test_gradient_examples():
    x, y = X(0), X(1)
    assert np.allclose(ex.gradient(x * y, [2.0, 3.0]), [3.0, 2.0])
    assert np.allclose(ex.gradient(x ** 2 - 4, [1.0]), [2.0])


@settings(max_examples=100, deadline=None)
@given(smooth_exprs(), st.integers(0, 2**31 - 1))
def test_gradient_matches_central_differences(e, seed):
    p = np.random.default_rng(seed).uniform(-1.5, 1.5, 3)
    g = ex.gradient(e, p, 3)
    h = 1e-6
    for i in range(3):
        d = np.zeros(3)
        d[i] = h
        fd = (ex.evaluate(e, p + d) - ex.evaluate(e, p - d)) / (2 * h)
        assert abs(fd - g[i]) <= 1e-5 * max(1.0, abs(g[i]))


@settings(max_examples=60, deadline=None)
@given(smooth_exprs(), st.integers(0, 2**31 - 1))
def test_compiled_matches_tree_walk(e, seed):
    val, grad = ex.compile_expr(e)
    p = list(np.random.default_rng(seed).uniform(-1.5, 1.5, 3))
    g = [0.0] * 3
    assert math.isclose(val(p), ex.evaluate(e, p), rel_tol=1e-12, abs_tol=1e-12)
    assert math.isclose(grad(p, g), ex.evaluate(e, p), rel_tol=1e-12, abs_tol=1e-12)
    assert np.allclose(g, ex.gradient(e, p, 3), rtol=1e-12, atol=1e-12)


# -- intervals ---------------------------------------------------------------

def test_interval_examples():
    x, y = X(0), X(1)
    assert ex.interval_eval(x ** 2, Box([-2], [3])) == Interval(0, 9)
    assert ex.interval_eval(x * y, Box([0, -1], [1, 2])) == Interval(-1, 2)


@settings(max_examples=100, deadline=None)
@given(smooth_exprs(), boxes(), st.integers(0, 2**31 - 1))
def test_interval_contains_samples(e, box, seed):
    iv = ex.interval_eval(e, box)
    for p in sample_box(box, np.random.default_rng(seed), 1000 // 10):
        v = ex.evaluate(e, p)
        assert iv.lo <= v <= iv.hi


@given(st.floats(-1e6, 1e6), st.floats(-1e6, 1e6), st.floats(-1e6, 1e6), st.floats(-1e6, 1e6))
def test_interval_arithmetic_encloses_exact_results(a, b, c, d):
    u, v = Interval(min(a, b), max(a, b)), Interval(min(c, d), max(c, d))
    for s in (u + v, u - v, u * v):
        assert s.lo <= s.hi
    for p, q in itertools.product((u.lo, u.hi), (v.lo, v.hi)):
        assert (u + v).lo <= p + q <= (u + v).hi
        assert (u * v).lo <= p * q <= (u * v).hi


def test_extended_division_splits_around_zero():
    parts = sorted(extended_div(Interval(1, 2), Interval(-1, 1)), key=lambda iv: iv.lo)
    assert len(parts) == 2
    assert parts[0].hi == -1 and parts[1].lo == 1


# -- models ------------------------------------------------------------------

def _tiny():
    mb = ModelBuilder("tiny", convex=True)
    x = mb.continuous("x", 0, 4)
    y = mb.binary("y")
    mb.add(x, "<=", 1 + 2 * y)
    mb.minimize((x - 2) ** 2 + 0.5 * y)
    return mb.build()


def test_fix_integers_sets_bounds_and_rejects_bad_values():
    m = _tiny()
    f = fix_integers(m, {1: 1})
    assert (f.variables[1].lower, f.variables[1].upper) == (1.0, 1.0)
    with pytest.raises(AssignmentError):
        fix_integers(m, {1: 2})


def test_fixed_model_optimum_matches_grid_oracle():
    mb = ModelBuilder("two")
    x = mb.continuous("x", -1, 2)
    y = mb.integer("y", 0, 2)
    mb.add(x * x + y, "<=", 2.5)
    mb.minimize((x - 1.5) ** 2 + ex.exp(-x) + 0.3 * y)
    m = mb.build()
    for yv in (0, 1, 2):
        top = min(2.0, math.sqrt(2.5 - yv))
        grid = np.linspace(-1, top, 3001)
        f = lambda t: (t - 1.5) ** 2 + math.exp(-t) + 0.3 * yv
        t0 = grid[np.argmin([f(t) for t in grid])]
        ref = minimize_scalar(f, bounds=(max(-1, t0 - 0.01), min(top, t0 + 0.01)), method="bounded",
                              options={"xatol": 1e-12})
        ref_f = min(ref.fun, f(top))
        sol = solve_local(fix_integers(m, {1: yv}))
        assert abs(sol.objective - ref_f) <= 1e-6


def test_make_feasibility_examples():
    # nonlinear rows are the ones that get slacks; linear rows stay hard
    mb = ModelBuilder("viol")
    x = mb.continuous("x", 0, 1)
    y = mb.binary("y")
    mb.add(x * x + 1, "<=", 0)
    mb.minimize(x + y)
    fm = make_feasibility(mb.build(), {1: 0}, "l1")
    assert fm.n == 3
    sol = solve_local(fm)
    assert abs(sol.objective - 1.0) <= 1e-7 and abs(sol.point[0]) <= 1e-4
    # feasible fixing gives zero
    fm = make_feasibility(_tiny(), {1: 1}, "l1")
    assert abs(solve_local(fm).objective) <= 1e-7
    # two rows violated by 1 and 2
    mb = ModelBuilder("two_viol")
    x = mb.continuous("x", 0, 0)
    y = mb.binary("y")
    mb.add(x * x + 1, "<=", 0)
    mb.add(x * x + 2, "<=", 0)
    mb.minimize(y)
    m = mb.build()
    assert abs(solve_local(make_feasibility(m, {1: 0}, "l1")).objective - 3.0) <= 1e-7
    assert abs(solve_local(make_feasibility(m, {1: 0}, "linf")).objective - 2.0) <= 1e-7


def test_make_feasibility_keeps_linear_rows_hard():
    mb = ModelBuilder("lin")
    x = mb.continuous("x", 0, 1)
    y = mb.binary("y")
    mb.add(x + 1, "<=", 0)
    mb.minimize(x + y)
    fm = make_feasibility(mb.build(), {1: 0}, "l1")
    assert fm.n == 2 and len(fm.constraints) == 1


def test_relax_integrality():
    mb = ModelBuilder("r")
    y = mb.integer("y", 0, 3)
    x = mb.continuous("x", 0, 1)
    mb.minimize(x + y)
    r = relax_integrality(mb.build())
    assert not r.variables[0].is_discrete and (r.variables[0].lower, r.variables[0].upper) == (0, 3)
    m = relax_integrality(r)
    assert model_to_dict(m) == model_to_dict(r)


def test_relaxed_optimum_below_enumerated_optimum():
    m = _tiny()
    relaxed = solve_local(relax_integrality(m)).objective
    best = min(solve_local(fix_integers(m, {1: v})).objective for v in (0, 1))
    assert relaxed <= best + 1e-9


def test_binary_expansion_round_trip():
    mb = ModelBuilder("g")
    x = mb.continuous("x", 0, 5)
    k = mb.integer("k", 0, 5)
    mb.add(x - k, "<=", 0.5)
    mb.minimize((x - 3.7) ** 2 - k)
    m, expansion = binary_expand(mb.build())
    assert all(v.lower >= 0 and v.upper <= 1 for v in m.variables if v.is_discrete)
    for bits in itertools.product((0, 1), repeat=len(m.integer_indices)):
        p = np.zeros(m.n)
        p[m.integer_indices] = bits
        q = expansion.restrict(p)
        assert 0 <= q[1] <= 7 and float(q[1]).is_integer()


def test_json_round_trip(tmp_path):
    m = _tiny()
    path = tmp_path / "m.json"
    save_model(m, path)
    again = load_model(path)
    assert model_to_dict(again) == model_to_dict(m)
    for p in ([0.0, 0.0], [2.0, 1.0], [3.5, 1.0]):
        assert ex.evaluate(again.objective, p) == ex.evaluate(m.objective, p)


def test_malformed_model_is_rejected():
    with pytest.raises(ModelError):
        model_from_dict({"variables": [{"name": "x"}]})
    with pytest.raises(json.JSONDecodeError):
        json.loads('{"variables": [}')
