import csv

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from oaconvex import bench
from oaconvex.model import ModelBuilder
from oaconvex.oa import (Algorithm, SolverOptions, Status, config_label, oa_cuts, solve, solve_glpnlp_bb,
                         solve_goa, solve_lpnlp_bb, solve_oa)

ALL_CONFIGS = [SolverOptions(algorithm=a, convexify=c, subproblem_scale=s)
               for a in Algorithm for c in (False, True) for s in (("r", "c") if c else ("r",))]


def tiny_convex():
    mb = ModelBuilder("tiny_convex", convex=True)
    x = mb.continuous("x", 0, 4)
    y = mb.binary("y")
    mb.add(x, "<=", 1 + 2 * y)
    mb.minimize((x - 2) ** 2 + 0.5 * y)
    return mb.build()


def tiny_bilinear():
    mb = ModelBuilder("tiny_bilinear")
    x = mb.continuous("x", 0, 1)
    z = mb.continuous("z", 0, 1)
    y = mb.binary("y")
    mb.add(x + z, "<=", 1 + y)
    mb.minimize(-x * z + y)
    return mb.build()


def assert_monotone(log):
    for a, b in zip(log, log[1:]):
        assert b.lb >= a.lb and b.ub <= a.ub
    for it in log:
        assert it.lb <= it.ub + 1e-12


# -- cuts ----------------------------------------------------------------------

def test_constraint_cut_is_taylor_expansion():
    mb = ModelBuilder("g", convex=True)
    x = mb.continuous("x", -5, 5)
    mb.add(x ** 2 - 4, "<=", 0)
    mb.minimize(x)
    (cut,) = oa_cuts(mb.build(), [1.0])
    assert cut.coeffs() == {0: 2.0} and cut.rhs == pytest.approx(5.0)


def test_objective_cut_is_epigraph_tangent():
    mb = ModelBuilder("f", convex=True)
    x = mb.continuous("x", -5, 5)
    mb.minimize(x ** 2)
    (cut,) = oa_cuts(mb.build(), [2.0])
    assert cut.coeffs() == {0: 4.0} and cut.mu == -1.0 and cut.rhs == pytest.approx(4.0)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_convex_cuts_keep_feasible_points(seed):
    rng = np.random.default_rng(seed)
    m = bench.generate_convex(rng, "c")
    p = rng.uniform(m.box().lo, m.box().hi)
    cuts = [c for c in oa_cuts(m, p) if c.mu == 0.0]
    for q in rng.uniform(m.box().lo, m.box().hi, (1000, m.n)):
        q[m.integer_indices] = np.round(q[m.integer_indices])
        if m.max_violation(q) <= 0:
            assert all(c.violation(q) <= 1e-9 for c in cuts)


def test_global_mode_cut_underestimates_bilinear():
    mb = ModelBuilder("b")
    x = mb.continuous("x", 0, 1)
    z = mb.continuous("z", 0, 1)
    mb.add(-x * z, "<=", -0.1)
    mb.minimize(x + z)
    m = mb.build()
    rng = np.random.default_rng(1)
    for p in rng.uniform(0, 1, (20, 2)):
        (cut,) = oa_cuts(m, p, convex_mode=False)
        for q in rng.uniform(0, 1, (50, 2)):
            g = -q[0] * q[1] + 0.1
            assert cut.lhs(q) - cut.rhs <= g + 1e-12


# -- the small worked instances ------------------------------------------------------

@pytest.mark.parametrize("opts", ALL_CONFIGS, ids=config_label)
def test_tiny_convex_every_config(opts):
    r = solve(tiny_convex(), opts)
    assert r.status is Status.OPTIMAL
    assert r.objective == pytest.approx(0.5, abs=1e-6)
    assert np.allclose(r.incumbent, [2.0, 1.0], atol=1e-5)
    assert_monotone(r.log)


@pytest.mark.parametrize("solver", [solve_goa, solve_glpnlp_bb])
@pytest.mark.parametrize("convexify", [False, True])
def test_tiny_bilinear_global(solver, convexify):
    r = solver(tiny_bilinear(), SolverOptions(convexify=convexify))
    assert r.status is Status.OPTIMAL and not r.heuristic
    assert r.objective == pytest.approx(-0.25, abs=1e-6)
    assert np.allclose(r.incumbent, [0.5, 0.5, 0.0], atol=1e-3)


def test_entry_points_switch_tree_shape_and_keep_global_flag():
    r = solve_lpnlp_bb(tiny_convex(), SolverOptions(algorithm=Algorithm.GOA))
    assert r.algorithm == "GLP/NLP-B&B"
    assert solve_lpnlp_bb(tiny_convex()).algorithm == "LP/NLP-B&B"
    o = solve_oa(tiny_convex(), SolverOptions(algorithm=Algorithm.LPNLP_BB))
    assert o.algorithm == "OA" and o.objective == pytest.approx(r.objective, abs=1e-6)


def test_continuous_model_solves_once():
    mb = ModelBuilder("cont", convex=True)
    x = mb.continuous("x", -1, 3)
    mb.minimize((x - 1) ** 2)
    for alg in Algorithm:
        r = solve(mb.build(), SolverOptions(algorithm=alg))
        assert r.status is Status.OPTIMAL and r.iterations == 0
        assert r.objective == pytest.approx(0.0, abs=1e-9)


def test_integral_root_takes_one_subproblem():
    mb = ModelBuilder("root", convex=True)
    x = mb.continuous("x", -2, 2)
    y = mb.binary("y")
    mb.add(x, "<=", 2 + y)
    mb.minimize((x - 1) ** 2 + y)
    for alg in (Algorithm.OA, Algorithm.LPNLP_BB):
        r = solve(mb.build(), SolverOptions(algorithm=alg))
        assert r.status is Status.OPTIMAL and r.iterations == 1
        assert r.objective == pytest.approx(0.0, abs=1e-8)


def test_infeasible_minlp():
    mb = ModelBuilder("none", convex=True)
    x = mb.continuous("x", 0, 1)
    y = mb.binary("y")
    mb.add(x ** 2 + 2 * (1 - y) + 2 * y, "<=", 1)
    mb.minimize(x + y)
    for alg in Algorithm:
        assert solve(mb.build(), SolverOptions(algorithm=alg)).status is Status.INFEASIBLE


def test_general_integers_under_global_variants():
    mb = ModelBuilder("int")
    x = mb.continuous("x", 0, 5)
    k = mb.integer("k", 0, 5)
    mb.add(x - k, "<=", 0.5)
    mb.add(x * k, ">=", 1)
    mb.minimize((x - 3.7) ** 2 + 0.1 * k)
    m = mb.build()
    ref = min((min(max(3.7, 1 / kk), kk + 0.5) - 3.7) ** 2 + 0.1 * kk for kk in range(1, 6))
    for solver in (solve_goa, solve_glpnlp_bb):
        r = solver(m)
        assert r.status is Status.OPTIMAL and len(r.incumbent) == 2
        assert r.objective == pytest.approx(ref, abs=1e-5)
        assert float(r.incumbent[1]).is_integer()


def test_nonconvex_model_under_convex_algorithm_is_flagged():
    r = solve_oa(tiny_bilinear())
    assert r.heuristic


def test_time_limit_status():
    m = bench.generate_nonconvex(np.random.default_rng(3), "t")
    r = solve(m, SolverOptions(algorithm=Algorithm.GOA, time_limit=1e-4))
    assert r.status is Status.TIME_LIMIT


def test_trace_file(tmp_path):
    path = tmp_path / "trace.csv"
    r = solve(tiny_convex(), SolverOptions(trace_path=str(path)))
    with open(path) as fh:
        rows = list(csv.DictReader(fh))
    assert len(rows) == r.iterations
    assert list(rows[0]) == ["iter", "lb", "ub", "gap", "y_assignment_hash", "subproblem_status",
                             "cuts_total", "time_s"]


# -- random instances -----------------------------------------------------------------

@pytest.fixture(scope="module")
def random_convex():
    out = []
    for k in range(20):
        m = bench.generate_convex(np.random.default_rng([77, k]), f"rc{k}")
        out.append((m, bench.enumeration_oracle(m, grid=0)["objective"]))
    return out


@pytest.mark.parametrize("alg", [Algorithm.OA, Algorithm.LPNLP_BB])
def test_random_convex_against_oracle(random_convex, alg):
    for m, ref in random_convex:
        r = solve(m, SolverOptions(algorithm=alg))
        assert r.status is Status.OPTIMAL
        assert abs(r.objective - ref) <= max(1e-5, 1e-3 * abs(ref))
        assert_monotone(r.log)
        # one subproblem per distinct assignment at most
        assert r.iterations <= len({it.y for it in r.log})


def test_goa_matches_oa_on_convex(random_convex):
    for m, ref in random_convex[:6]:
        a = solve(m, SolverOptions(algorithm=Algorithm.OA))
        g = solve(m, SolverOptions(algorithm=Algorithm.GOA))
        assert abs(a.objective - g.objective) <= max(1e-5, 1e-3 * abs(ref))


@settings(max_examples=8, deadline=None)
@given(st.integers(0, 10_000))
def test_goa_never_revisits_an_assignment(seed):
    m = bench.generate_nonconvex(np.random.default_rng(seed), "n")
    for alg in (Algorithm.GOA, Algorithm.GLPNLP_BB):
        r = solve(m, SolverOptions(algorithm=alg))
        ys = [it.y for it in r.log]
        assert len(ys) == len(set(ys))
        assert_monotone(r.log)
