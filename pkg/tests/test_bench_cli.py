import csv
import json
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from oaconvex import bench
from oaconvex import expr as ex
from oaconvex.bench import MissingColumn, RunRecord, performance_profile, read_records, write_records
from oaconvex.cli import main
from oaconvex.model import ModelBuilder, load_model, save_model

EXAMPLES = bench.DATA_DIR / "examples"


def rec(inst, cfg, t, status="Optimal", it=1):
    return RunRecord(inst, cfg, status, 0.0, 0.0, 0.0, it, t)


def hand_fraction(times, tau):
    """times: {config: [t_i]}; None means unsolved."""
    cfgs = list(times)
    n = len(times[cfgs[0]])
    out = {}
    for c in cfgs:
        hits = 0
        for i in range(n):
            solved = [times[d][i] for d in cfgs if times[d][i] is not None]
            if times[c][i] is not None and times[c][i] <= tau * min(solved):
                hits += 1
        out[c] = hits / n
    return out


# -- profiles ------------------------------------------------------------------

def test_profile_three_instance_example():
    recs = [rec(f"i{k}", "A", a) for k, a in enumerate((1, 2, 4))]
    recs += [rec(f"i{k}", "B", b) for k, b in enumerate((2, 2, 2))]
    p = performance_profile(recs, "time")
    assert p.ratios["A"] == [1.0, 1.0, 2.0] and p.ratios["B"] == [2.0, 1.0, 1.0]
    # both configs tie on instance i1, so each is best on two of three
    assert p.fraction("A", 1.0) == pytest.approx(2 / 3) and p.fraction("B", 1.0) == pytest.approx(2 / 3)
    assert hand_fraction({"A": [1, 2, 4], "B": [2, 2, 2]}, 1.0) == {"A": 2 / 3, "B": 2 / 3}


def test_single_config_is_step_at_one():
    recs = [rec("a", "X", 3.0), rec("b", "X", 0.5), rec("c", "X", 9.0, status="TimeLimit")]
    p = performance_profile(recs, "time", grid=[1.0, 2.0, 100.0])
    assert p.curves["X"] == [2 / 3, 2 / 3, 2 / 3]
    assert p.ratios["X"][2] == math.inf


def test_dominating_config_curve_is_above():
    rng = np.random.default_rng(4)
    recs = []
    for k in range(15):
        t = rng.uniform(0.1, 5)
        recs += [rec(f"i{k}", "A", t), rec(f"i{k}", "B", t * rng.uniform(1, 3))]
    p = performance_profile(recs, "time")
    assert all(a >= b for a, b in zip(p.curves["A"], p.curves["B"]))


def test_iteration_metric_floors_zero():
    p = performance_profile([rec("a", "X", 1.0, it=0), rec("a", "Y", 1.0, it=2)], "iterations")
    assert p.ratios == {"X": [1.0], "Y": [2.0]}


@settings(max_examples=100, deadline=None)
@given(st.lists(st.lists(st.one_of(st.none(), st.floats(1e-3, 1e3)), min_size=3, max_size=3), min_size=1,
                max_size=8),
       st.lists(st.floats(1.0, 50.0), min_size=1, max_size=6))
def test_profile_matches_hand_count(rows, taus):
    cfgs = ["A", "B", "C"]
    recs = [rec(f"i{k}", c, 1.0 if t is None else t, "Optimal" if t is not None else "TimeLimit")
            for k, row in enumerate(rows) for c, t in zip(cfgs, row)]
    grid = sorted(taus)
    p = performance_profile(recs, "time", grid=grid)
    times = {c: [row[j] for row in rows] for j, c in enumerate(cfgs)}
    for c in cfgs:
        solved = sum(t is not None for t in times[c]) / len(rows)
        assert all(r >= 1.0 for r in p.ratios[c])
        assert all(a <= b for a, b in zip(p.curves[c], p.curves[c][1:]))
        assert max(p.curves[c]) <= solved + 1e-12
        for tau, v in zip(grid, p.curves[c]):
            # hand count uses the unrounded ratio definition, so allow an ulp-scale band
            lo = hand_fraction(times, tau * (1 - 1e-12))[c]
            hi = hand_fraction(times, tau * (1 + 1e-12))[c]
            assert lo <= v <= hi


def test_profile_csv_layout(tmp_path):
    recs = [rec("a", "A", 1.0), rec("a", "B", 2.0)]
    out = tmp_path / "p.csv"
    performance_profile(recs, "time").write(out)
    rows = list(csv.reader(open(out)))
    assert rows[0] == ["ratio", "A", "B"]
    assert [float(v) for v in rows[1]] == [1.0, 1.0, 0.0]


# -- records and sweeps ----------------------------------------------------------

def test_records_round_trip(tmp_path):
    recs = [RunRecord("a", "C-OA(r)", "Optimal", 0.1 + 0.2, -1e-300, 1 / 3, 7, 0.25),
            RunRecord("b", "GOA", "TimeLimit", math.inf, -math.inf, math.inf, 0, 1e-7)]
    path = tmp_path / "r.csv"
    write_records(recs, path)
    assert read_records(path) == recs
    assert next(csv.reader(open(path))) == bench.COLUMNS


def test_missing_column(tmp_path):
    path = tmp_path / "bad.csv"
    path.write_text("instance,config,status\na,OA,Optimal\n")
    with pytest.raises(MissingColumn):
        read_records(path)
    assert main(["profile", str(path), "--out", str(tmp_path / "p.csv")]) == 1


def test_parse_config_labels():
    o = bench.parse_config("C-GLP/NLP-B&B(c)")
    assert o.convexify and o.subproblem_scale.value == "c" and o.algorithm.is_global and o.algorithm.single_tree
    assert not bench.parse_config("OA").convexify
    for bad in ("XYZ", "OA(r)"):
        with pytest.raises(ValueError):
            bench.parse_config(bad)


def _without_time(path):
    rows = list(csv.reader(open(path)))
    k = rows[0].index("time")
    return [r[:k] + r[k + 1:] for r in rows]


def test_bench_cardinality_order_and_determinism(tmp_path):
    insts = bench.read_manifest(bench.bundled_manifest("convex"))[:3]
    configs = ["OA", "LP/NLP-B&B"]
    a = bench.bench(list(reversed(insts)), configs, jobs=1)
    b = bench.bench(insts, configs, jobs=0)
    assert len(a) == 6
    assert [(r.instance, r.config) for r in a] == [(p.stem, c) for p in insts for c in configs]
    write_records(a, tmp_path / "a.csv")
    write_records(b, tmp_path / "b.csv")
    assert _without_time(tmp_path / "a.csv") == _without_time(tmp_path / "b.csv")
    for r in a:
        orc = bench.load_oracle(bench.bundled_manifest("convex").parent / f"{r.instance}.json")
        assert r.status == "Optimal"
        assert abs(r.objective - orc["objective"]) <= max(1e-5, 1e-3 * abs(orc["objective"]))


def test_bench_failure_is_a_row(tmp_path):
    bad = tmp_path / "broken.json"
    good = EXAMPLES / "tiny_convex.json"
    data = json.loads(good.read_text())
    data["objective"] = {"op": "var", "name": "nope"}
    bad.write_text(json.dumps(data))
    # called per task so the up-front manifest check does not reject the file first
    recs = [bench._run_one((str(bad), "OA", {})), bench._run_one((str(good), "OA", {}))]
    assert recs[0].status.startswith("Error:") and recs[1].status == "Optimal"


def test_bench_warns_on_pure_instances(tmp_path):
    mb = ModelBuilder("pure", convex=True)
    x = mb.continuous("x", 0, 1)
    mb.minimize(x * x)
    path = tmp_path / "pure.json"
    save_model(mb.build(), path)
    with pytest.warns(UserWarning):
        recs = bench.bench([path], ["OA"], jobs=0)
    assert recs[0].status == "Optimal"


# -- instance generation -------------------------------------------------------------

def test_generate_is_deterministic(tmp_path):
    for kind in ("convex", "nonconvex"):
        a = bench.generate(kind, 4, 9, tmp_path / "a", oracle=False)
        b = bench.generate(kind, 4, 9, tmp_path / "b", oracle=False)
        assert [p.read_bytes() for p in a] == [p.read_bytes() for p in b]


def fd_hessian(f, x, h=1e-4):
    n = len(x)
    H = np.zeros((n, n))
    for i in range(n):
        for j in range(n):
            ei, ej = np.eye(n)[i] * h, np.eye(n)[j] * h
            H[i, j] = (f(x + ei + ej) - f(x + ei - ej) - f(x - ei + ej) + f(x - ei - ej)) / (4 * h * h)
    return 0.5 * (H + H.T)


@pytest.mark.parametrize("seed", range(6))
def test_generated_convex_instances_have_psd_hessians(seed):
    m = bench.generate_convex(np.random.default_rng([seed, 1]), "g")
    ints, cont = m.integer_indices, m.continuous_indices
    assert 2 <= len(ints) <= 6 and 2 <= len(cont) <= 6
    box = m.box()
    rng = np.random.default_rng(seed)
    bodies = [m.objective] + [c.body for c in m.constraints]
    for _ in range(10):
        x = rng.uniform(box.lo, box.hi)
        for b in bodies:
            H = fd_hessian(lambda z: ex.evaluate(b, z), x)
            assert np.linalg.eigvalsh(H).min() >= -1e-5 * (1 + np.abs(H).max())


def test_generated_nonconvex_instances_are_indefinite():
    m = bench.generate_nonconvex(np.random.default_rng([0, 0]), "g")
    x = m.box().midpoint()
    H = fd_hessian(lambda z: ex.evaluate(m.objective, z), x)
    assert np.linalg.eigvalsh(H).min() < -1e-3


def test_convex_oracles_reproduced_independently():
    # different random starts; for convex pieces any local optimum is the global one
    for p in bench.read_manifest(bench.bundled_manifest("convex")):
        stored = bench.load_oracle(p)["objective"]
        again = bench.enumeration_oracle(load_model(p), grid=0, seed=12345)["objective"]
        assert abs(again - stored) <= 1e-6 * (1 + abs(stored))


def test_nonconvex_oracles_reproduced_independently():
    for p in bench.read_manifest(bench.bundled_manifest("nonconvex")):
        stored = bench.load_oracle(p)["objective"]
        again = bench.enumeration_oracle(load_model(p), grid=5, seed=54321)["objective"]
        assert abs(again - stored) <= 1e-6 * (1 + abs(stored))


# -- command line -----------------------------------------------------------------

def test_cli_solve_tiny(capsys):
    code = main(["solve", str(EXAMPLES / "tiny_convex.json"), "--alg", "oa", "--json"])
    out = capsys.readouterr().out.splitlines()
    assert code == 0 and out[0] == "Optimal 0.5"
    res = json.loads(out[-1])
    assert res["point"]["x"] == pytest.approx(2.0, abs=1e-6) and res["point"]["y"] == 1.0


@pytest.mark.parametrize("alg", ["lpnlp", "goa", "glpnlp"])
def test_cli_solve_other_algorithms(alg, capsys):
    assert main(["solve", str(EXAMPLES / "tiny_bilinear.json"), "--alg", alg, "--convexify"]) == 0
    status, obj = capsys.readouterr().out.splitlines()[0].split()
    assert status == "Optimal"
    if alg != "lpnlp":
        assert float(obj) == pytest.approx(-0.25, abs=1e-6)


def test_cli_malformed_json(tmp_path, capsys):
    path = tmp_path / "bad.json"
    path.write_text('{"name": "x",\n "variables": [\n')
    assert main(["solve", str(path)]) == 1
    err = capsys.readouterr().err
    assert "line 3" in err and "column" in err


def test_cli_invalid_model(tmp_path, capsys):
    path = tmp_path / "bad.json"
    path.write_text(json.dumps({"name": "x", "variables": [{"name": "a", "domain": "blob"}]}))
    assert main(["solve", str(path)]) == 1


def test_cli_infeasible_exit_code(tmp_path, capsys):
    mb = ModelBuilder("inf", convex=True)
    x = mb.continuous("x", 0, 1)
    y = mb.binary("y")
    mb.add(x * x + 2, "<=", 1 + 0.5 * y)
    mb.minimize(x)
    save_model(mb.build(), tmp_path / "inf.json")
    assert main(["solve", str(tmp_path / "inf.json")]) == 2
    assert capsys.readouterr().out.startswith("Infeasible")


def test_cli_time_limit(capsys):
    path = bench.read_manifest(bench.bundled_manifest("nonconvex"))[0]
    assert main(["solve", str(path), "--alg", "goa", "--time-limit", "0.001"]) == 3
    out = capsys.readouterr().out.splitlines()
    assert out[0].startswith("TimeLimit") and "gap" in out[1]


def test_cli_generate_bench_profile(tmp_path, capsys):
    inst = tmp_path / "inst"
    assert main(["generate", "convex", "--n", "2", "--seed", "3", "--out", str(inst)]) == 0
    assert len(list(inst.glob("*.oracle.json"))) == 2
    out = tmp_path / "runs.csv"
    assert main(["bench", str(inst / "manifest.txt"), "--configs", "OA,C-OA(r)", "--out", str(out),
                 "--jobs", "0"]) == 0
    recs = read_records(out)
    assert len(recs) == 4 and {r.config for r in recs} == {"OA", "C-OA(r)"}
    prof = tmp_path / "prof.csv"
    assert main(["profile", str(out), "--metric", "iterations", "--out", str(prof)]) == 0
    rows = list(csv.reader(open(prof)))
    assert rows[0] == ["ratio", "OA", "C-OA(r)"] and float(rows[-1][1]) == 1.0


def test_cli_rejects_bad_arguments(tmp_path, capsys):
    assert main(["generate", "convex", "--n", "0", "--out", str(tmp_path)]) == 1
    assert main(["bench", "m.txt", "--configs", "NOPE", "--out", str(tmp_path / "x.csv")]) == 1
