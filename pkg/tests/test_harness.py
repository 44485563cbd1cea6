import csv
import json
import math

import networkx as nx
import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.special import ndtr

from fpp.graph import generate
from fpp.harness import (
    ExperimentConfig,
    default_workers,
    ecdf_rows,
    estimate_factorial_moment,
    ks_distance,
    make_rng,
    run_experiment,
    write_report,
)
from fpp.params import build_params
from fpp.weights import Exponential

SMALL = dict(
    weights="exp:1",
    lam=2.0,
    n=300,
    replications=24,
    seed=5,
    window_w=0.5,
    rectangles=[{"z": 1.0, "u": 0.0}, {"z": math.inf, "u": 0.5}],
    checks=["connect", "min_law", "window_counts", "factorial", "uncrossed"],
    bank_pairs=2000,
    bank_depth=20,
    batch=5,
)


def test_factorial_moment_examples():
    assert estimate_factorial_moment([3, 1, 0, 2], 1)[0] == pytest.approx(1.5)
    assert estimate_factorial_moment([3, 1, 0, 2], 2)[0] == pytest.approx(2.0)
    assert estimate_factorial_moment([3, 1, 0, 2], 3)[0] == pytest.approx(1.5)
    assert estimate_factorial_moment([3, 1, 0, 2], 2, tau=0.5)[0] == pytest.approx(0.5)
    with pytest.raises(ValueError):
        estimate_factorial_moment([], 1)
    with pytest.raises(ValueError):
        estimate_factorial_moment([1], 0)


def test_factorial_moment_poisson_unbiased():
    rng = np.random.default_rng(0)
    c = rng.poisson(1.7, 200_000)
    for r in (1, 2, 3):
        est, se = estimate_factorial_moment(c, r)
        assert abs(est - 1.7**r) < 4 * se


def test_ks_examples():
    assert ks_distance([0.0], ndtr) == pytest.approx(0.5)
    with pytest.raises(ValueError):
        ks_distance([], ndtr)
    x = np.random.default_rng(1).standard_normal(10_000)
    assert ks_distance(x, ndtr) < 0.0163  # 1.63/sqrt(n): the 1% critical value


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(-5, 5), min_size=1, max_size=40))
def test_ks_bounds_and_scipy(xs):
    from scipy.stats import kstest

    d = ks_distance(xs, ndtr)
    assert 0.0 <= d <= 1.0
    assert d == pytest.approx(kstest(xs, "norm").statistic, abs=1e-12)


def test_ecdf_rows():
    rows = ecdf_rows([2.0, 1.0, 2.0])
    assert rows == [{"value": 1.0, "ecdf": 1 / 3, "theory": None}, {"value": 2.0, "ecdf": 1.0, "theory": None}]


def test_config_roundtrip(tmp_path):
    cfg = ExperimentConfig(**SMALL)
    d = cfg.to_dict()
    assert json.loads(json.dumps(d)) == d
    path = tmp_path / "c.json"
    path.write_text(json.dumps({**d, "lambda": d.pop("lam")}))
    back = ExperimentConfig.from_json(path)
    assert back.to_dict() == cfg.to_dict()
    assert ExperimentConfig.from_dict(back.to_dict()) == back


@pytest.mark.parametrize(
    "bad",
    [
        {"lam": 1.0},
        {"replications": 0},
        {"checks": ["nope"]},
        {"weights": "bogus:1"},
        {"rectangles": [{"z": 0.0}]},
        {"rectangles": [{"z": 0.0, "u": 5.0}]},
    ],
)
def test_config_validation(bad):
    with pytest.raises(ValueError):
        ExperimentConfig(**{**SMALL, **bad})


def test_make_rng_streams():
    a = make_rng(3, "replication", 7).random(4)
    assert np.array_equal(a, make_rng(3, "replication", 7).random(4))
    assert not np.array_equal(a, make_rng(3, "replication", 8).random(4))
    assert not np.array_equal(a, make_rng(3, "bank", 7).random(4))
    assert not np.array_equal(a, make_rng(4, "replication", 7).random(4))


@pytest.fixture(scope="module")
def small_report():
    return run_experiment(ExperimentConfig(**SMALL))


def test_records_match_dijkstra_oracle(small_report):
    model = Exponential(1.0)
    for rec in small_report.records:
        g = generate(300, 2.0, model, make_rng(5, "replication", rec.index))
        G = nx.Graph()
        G.add_nodes_from(range(g.n))
        for a, b, w in zip(g.src, g.dst, g.weight):
            G.add_edge(int(a), int(b), weight=float(w))
        try:
            d = nx.dijkstra_path_length(G, 0, g.n - 1)
        except nx.NetworkXNoPath:
            assert rec.status == "disconnected"
            continue
        assert rec.status == "connected"
        assert rec.L_min == pytest.approx(d, rel=1e-12)
        assert rec.P_min == 1
        assert rec.H_min == len(nx.dijkstra_path(G, 0, g.n - 1)) - 1


def test_report_shape(small_report):
    d = small_report.to_dict()
    s = d["summary"]
    assert s["replications"] == 24 and s["connected"] + s["disconnected"] + s["truncated"] == 24
    assert "workers" not in d["config"]
    assert len(d["rectangles"]) == 2
    for rec in small_report.records:
        if rec.connected:
            # the wider rectangle contains the narrower one
            assert rec.counts[1] >= rec.counts[0]
            assert rec.uncrossed is not None and rec.uncrossed <= len(rec.points)


def test_determinism_across_workers(small_report):
    other = run_experiment(ExperimentConfig(**{**SMALL, "workers": 2}))
    strip = lambda r: json.dumps({k: v for k, v in r.to_dict().items() if k != "metadata"}, sort_keys=True, default=str)
    assert strip(other) == strip(small_report)


def test_budget_marks_truncated():
    rep = run_experiment(ExperimentConfig(**{**SMALL, "replications": 3, "budget": 1, "checks": ["connect"]}))
    s = rep.body["summary"]
    # disconnected graphs are settled without enumeration; any connected one exhausts the budget
    assert s["connected"] == 0 and s["truncated"] >= 1
    assert s["truncated"] + s["disconnected"] == 3


def test_write_report(tmp_path, small_report):
    path = write_report(small_report, tmp_path)
    doc = json.loads(path.read_text())
    assert doc["summary"] == json.loads(json.dumps(small_report.body["summary"]))
    for name in ("ecdf_hmin.csv", "ecdf_lmin.csv", "factorial_moments.csv", "points.csv"):
        with open(tmp_path / name) as fh:
            rows = list(csv.reader(fh))
        assert rows and rows[0]
    with pytest.raises(FileExistsError):
        write_report(small_report, tmp_path)
    write_report(small_report, tmp_path, force=True)


def test_default_workers(monkeypatch):
    monkeypatch.setenv("FPP_THREADS", "3")
    assert default_workers() == 3
    monkeypatch.delenv("FPP_THREADS")
    assert default_workers() >= 1
