"""Benchmark drivers, run at toy sizes."""

import math

import numpy as np
import pytest

import ncmctf.bench as bench
import ncmctf.train as tr
from ncmctf.fixtures import named_graph
from ncmctf.identify import IdentifyConfig
from ncmctf.query import build_named_query
from ncmctf.scm import PositivityError, enumerate_query


def test_sweep_sizes_log_spaced():
    sizes = bench.estimation_sweep_sizes()
    assert sizes == [1000, 3162, 10000, 31623, 100000]
    assert bench.estimation_sweep_sizes(10, 1000, 3) == [10, 100, 1000]


def test_trailing_mean_plain():
    assert bench.trailing_mean([1.0, 2.0, 3.0], window=2) == [1.0, 1.5, 2.5]
    assert bench.trailing_mean([], window=5) == []


def test_trailing_mean_skips_nonfinite():
    nan = float("nan")
    out = bench.trailing_mean([nan, 4.0, nan, 8.0], window=2)
    assert math.isnan(out[0])
    assert out[1:] == [4.0, 4.0, 8.0]
    assert all(math.isnan(v) for v in bench.trailing_mean([nan, nan], window=3))


def test_sample_ground_truth_shapes():
    g = named_graph("backdoor")
    scm, data = bench.sample_ground_truth(g, r=2, n=500,
                                          interventions=({}, {"X": 1}),
                                          seed=0)
    assert scm.diagram == g
    assert len(data.datasets) == 2
    obs, dox = data.datasets
    assert obs.intervention_dict() == {}
    assert dox.intervention_dict() == {"X": 1}
    assert obs.n == dox.n == 500
    # positivity held: every joint configuration of the free vertices appears
    seen = {tuple(row) for row in obs.rows}
    assert len(seen) == 8


def test_sample_ground_truth_is_seeded():
    g = named_graph("bow")
    a = bench.sample_ground_truth(g, 2, 100, ({},), seed=3)
    b = bench.sample_ground_truth(g, 2, 100, ({},), seed=3)
    assert a[0].tables == b[0].tables
    np.testing.assert_array_equal(a[1].datasets[0].rows, b[1].datasets[0].rows)


def test_sample_ground_truth_positivity_budget():
    # at n=2 a three-vertex state space cannot be covered, so every draw
    # fails the positivity check and the attempt budget must trip
    g = named_graph("backdoor")
    with pytest.raises(PositivityError, match="attempts"):
        bench.sample_ground_truth(g, 2, 2, ({},), seed=0, attempts=3)


def test_grid_bench_rows_and_logs():
    cfg = IdentifyConfig(
        reruns=1, eval_m=500,
        train=tr.TrainConfig(lr=1e-3, epochs=2, batch=16, mc_samples=16))
    tags = []
    rows = bench.grid_bench(
        cfg, n=300, seed=1, graphs=("grid-mediation",), queries=("ate", "ett"),
        regimes={"obs": ({},)},
        log_sink=lambda tag, r, d, lg: tags.append((tag, r, d, len(lg))))
    assert [r["query"] for r in rows] == ["ate", "ett"]
    for row in rows:
        assert row["graph"] == "grid-mediation"
        assert row["regime"] == "obs"
        assert row["status"] in ("Identified", "NotIdentified", "failed",
                                 "skipped")
        if row["status"] == "skipped":
            assert row["truth"] == ""
            continue
        want = enumerate_query(
            bench.grid_ground_truth("grid-mediation", 1, 2, 300, ({},), 1)[0],
            build_named_query(row["query"], "X", "Y", "W"))
        assert row["truth"] == pytest.approx(want)
        if row["status"] == "Identified":
            assert row["error"] == pytest.approx(abs(row["estimate"] - want))
        else:
            assert row["estimate"] == "" and row["error"] == ""
    ran = {t[0] for t in tags}
    assert ran <= {"grid-mediation/ate/obs", "grid-mediation/ett/obs"}
    assert all(t[2] in ("maximize", "minimize") and t[3] == 2 for t in tags)


def test_runtime_bench_rows():
    rows = bench.runtime_bench(dims=(1,), backends=("mle",), trials=2,
                               epochs=1, n=50, mle_mc_samples=10)
    assert len(rows) == 2
    for trial, row in enumerate(rows):
        assert row["backend"] == "mle"
        assert row["d"] == 1
        assert row["trial"] == trial
        assert row["seconds"] > 0
    with pytest.raises(ValueError, match="backend"):
        bench.runtime_bench(dims=(1,), backends=("tpu",), trials=1, epochs=1,
                            n=10)
