import csv
import io

import pytest

from conftest import make_config
from wimaxcac import simulate
from wimaxcac.metrics import evaluate
from wimaxcac.policy import Threshold, Unrestricted


def test_same_seed_same_path(toy_threshold):
    a = simulate.run(toy_threshold, 20_000, seed=7)
    b = simulate.run(toy_threshold, 20_000, seed=7)
    c = simulate.run(toy_threshold, 20_000, seed=8)
    assert a.estimates == b.estimates and a.totals == b.totals
    assert a.estimates != c.estimates


def test_rejects_short_runs(toy_threshold):
    with pytest.raises(ValueError):
        simulate.run(toy_threshold, 9_999, seed=1)
    with pytest.raises(ValueError):
        simulate.run(toy_threshold, 20_000, seed=1, batches=10)


def test_silent_sources():
    res = simulate.run(make_config(Threshold(3), rates=(0.0, 0.0)), 10_000, seed=3)
    assert res.totals["arrived"] == 0
    assert res.estimates["n_queue"] == 0.0 and res.estimates["n_drop"] == 0.0
    assert res.estimates["n_connections"] > 0


def test_packet_accounting(toy_threshold):
    res = simulate.run(toy_threshold, 30_000, seed=4)
    t = res.totals
    assert t["arrived"] == t["served"] + t["dropped"] + t["final_backlog"] - t["initial_backlog"]
    assert t["dropped"] > 0


def test_trace(toy_threshold):
    buf = io.StringIO()
    simulate.run(toy_threshold, 10_000, seed=5, trace=buf)
    rows = list(csv.reader(io.StringIO(buf.getvalue())))
    assert rows[0] == ["frame", "s", "x", "c", "arrivals", "served", "dropped"]
    assert len(rows) == 10_001
    X = toy_threshold.queue_capacity
    for prev, cur in zip(rows[1:200], rows[2:201]):
        f, s, x, c, a, served, dropped = map(int, prev)
        assert int(cur[2]) == x - served + a - dropped <= X
        assert served <= x and 0 <= int(cur[3]) <= 3


def test_trace_to_file(toy_threshold, tmp_path):
    path = tmp_path / "t.csv"
    simulate.run(toy_threshold, 10_000, seed=5, trace=path)
    assert path.read_text().count("\n") == 10_001


def test_little_law(toy_threshold):
    res = simulate.run(toy_threshold, 200_000, seed=9)
    e = res.estimates
    assert e["delay"] == pytest.approx(e["n_queue"] / e["throughput"], rel=0.05)


def test_mean_connections_unrestricted():
    cfg = make_config(Unrestricted(6), rho=2.0, duration=1.0, frame_ms=200.0, X=5)
    rep, _, _ = evaluate(cfg)
    res = simulate.run(cfg, 100_000, seed=12)
    assert abs(res.z_score("n_connections", rep.n_connections)) < 4


def test_z_score_zero_variance():
    r = simulate.SimResult({"a": 1.0}, {"a": 0.0}, 10, 0)
    assert r.z_score("a", 1.0) == 0.0
    assert r.z_score("a", 2.0) == float("inf")
