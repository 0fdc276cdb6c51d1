import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from oaconvex import bench
from oaconvex.model import ModelBuilder, load_model
from oaconvex.presolve import PROVEN_INFEASIBLE, PresolveOptions, fbbt, obbt, presolve

from strategies import feasible_samples, lifted_cut_violations


def _builder(*bounds):
    mb = ModelBuilder("p")
    xs = [mb.continuous(f"x{i}", lo, hi) for i, (lo, hi) in enumerate(bounds)]
    return mb, xs


def test_fbbt_linear_backward_pass():
    mb, (x, y) = _builder((0, 10), (2, 10))
    mb.add(x + y, "<=", 5)
    mb.minimize(x)
    b = fbbt(mb.build())
    assert (list(b.lo), list(b.hi)) == ([0, 2], [3, 5])


def test_fbbt_inverts_square():
    mb, (x,) = _builder((-10, 10))
    mb.add(x ** 2 - 4, "<=", 0)
    mb.minimize(x)
    b = fbbt(mb.build())
    assert (b.lo[0], b.hi[0]) == (-2.0, 2.0)


def test_fbbt_detects_empty_box():
    mb, (x,) = _builder((-10, 10))
    mb.add(x, ">=", 3)
    mb.add(x, "<=", 1)
    mb.minimize(x)
    assert fbbt(mb.build()) is PROVEN_INFEASIBLE


def test_fbbt_chain_reaches_fixpoint_in_two_passes():
    mb, (x, y) = _builder((-10, 10), (-10, 10))
    mb.add(x - y, "<=", 0)
    mb.add(y - x, "<=", 0)
    mb.add(y, "<=", 2)
    mb.add(x, ">=", 0)
    mb.minimize(x)
    trace = []
    b = fbbt(mb.build(), trace=trace)
    assert (list(b.lo), list(b.hi)) == ([0, 0], [2, 2])
    changing = [t["pass"] for t in trace if t["changes"]]
    assert changing == [1, 2]


def test_obbt_two_variable_lp():
    mb, (x, y) = _builder((0, 10), (0, 10))
    mb.add(x + y, "<=", 5)
    mb.add(x - y, "<=", 1)
    mb.minimize(x)
    b = obbt(mb.build(), [], targets=[0, 1])
    assert b.hi[0] == pytest.approx(3.0, abs=1e-6) and b.hi[0] >= 3.0
    assert b.lo[0] == 0.0


def test_obbt_without_rows_is_identity():
    mb, (x, y) = _builder((0, 10), (-1, 1))
    mb.minimize(x * y)
    m = mb.build()
    b = obbt(m, [], targets=[0, 1])
    assert list(b.lo) == list(m.box().lo) and list(b.hi) == list(m.box().hi)


def test_presolve_linear_model_has_no_cuts():
    mb, (x, y) = _builder((0, 10), (0, 10))
    mb.add(x + y, "<=", 5)
    mb.minimize(x - y)
    r = presolve(mb.build())
    assert r.cuts == [] and r.tightened.hi[0] == pytest.approx(5.0, abs=1e-5)


def test_presolve_bilinear_unit_box_has_four_planes():
    mb, (x, y) = _builder((0, 1), (0, 1))
    mb.minimize(x * y)
    r = presolve(mb.build())
    planes = [c for c in r.cuts if c.source.startswith("envelope:mul")]
    assert len(planes) == 4
    rng = np.random.default_rng(0)
    for p in rng.uniform(0, 1, (200, 2)):
        lifted = np.array([p[0], p[1], p[0] * p[1]])
        assert all(c.violation(lifted, mu=p[0] * p[1]) <= 1e-12 for c in r.cuts)


def test_presolve_trace_file(tmp_path):
    mb, (x, y) = _builder((-5, 5), (-5, 5))
    mb.add(x * x + y * y, "<=", 4)
    mb.minimize(x * y)
    path = tmp_path / "trace.jsonl"
    r = presolve(mb.build(), PresolveOptions(trace_path=str(path)))
    rows = [json.loads(ln) for ln in path.read_text().splitlines()]
    assert rows and {"stage", "pass", "changes"} <= set(rows[0])
    assert r.tightened.hi[0] <= 2.0 + 1e-9


def check_presolve_sound(model, samples, extra_points=()):
    r = presolve(model)
    P = np.vstack([samples] + [np.atleast_2d(p) for p in extra_points]) if extra_points else samples
    assert not r.infeasible
    b = r.tightened
    tol = 1e-9 * (1 + np.abs(P))
    assert np.all(P >= b.lo - tol) and np.all(P <= b.hi + tol)
    if r.cuts:
        assert max(lifted_cut_violations(model, r.decomposition, r.cuts, P)) <= 1e-8
    return r


@pytest.mark.parametrize("kind", ["convex", "nonconvex"])
def test_presolve_sound_on_bundled_instances(kind):
    rng = np.random.default_rng(5)
    for path in bench.read_manifest(bench.bundled_manifest(kind))[:8]:
        m = load_model(path)
        opt = bench.load_oracle(path)["point"]
        check_presolve_sound(m, feasible_samples(m, rng, 2000), [opt])


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 10_000), st.sampled_from(["convex", "nonconvex"]))
def test_presolve_sound_on_random_instances(seed, kind):
    gen = bench.generate_convex if kind == "convex" else bench.generate_nonconvex
    m = gen(np.random.default_rng(seed), "h")
    check_presolve_sound(m, feasible_samples(m, np.random.default_rng(seed), 500))
