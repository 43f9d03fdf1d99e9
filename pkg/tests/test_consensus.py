import json
from pathlib import Path

import numpy as np
import pytest

from noisepriv.consensus import (Graph, NoiseSchedule, check_weights, generate_schedule,
                                 load_trace, metropolis_weights, random_connected_graph,
                                 run_paca, save_trace, telescope)
from noisepriv.errors import ArgumentError

DATA = Path(__file__).parent / "data"


def slem(w):
    ev = np.sort(np.abs(np.linalg.eigvals(w)))
    return ev[-2]


def test_random_graph_extremes(rng):
    assert len(random_connected_graph(3, 1.0, rng).edges) == 3
    assert len(random_connected_graph(3, 0.0, rng).edges) == 2
    with pytest.raises(ArgumentError):
        random_connected_graph(2, 0.5, rng)


def test_random_graph_golden():
    gold = json.loads((DATA / "graph_n20_p0.2_seed7.json").read_text())
    g = random_connected_graph(20, 0.2, np.random.default_rng(7))
    assert g.sorted_edges() == [tuple(e) for e in gold["edges"]]


def test_random_graphs_connected():
    for seed in range(30):
        g = random_connected_graph(15, 0.05, np.random.default_rng(seed))
        assert len(g.edges) >= 14  # construction would have raised if disconnected


def test_graph_validation():
    with pytest.raises(ArgumentError):
        Graph.from_edges(4, [(0, 1), (2, 3)])
    with pytest.raises(ArgumentError):
        Graph.from_edges(3, [(0, 0), (0, 1), (1, 2)])
    with pytest.raises(ArgumentError):
        Graph.from_edges(2, [(0, 1)])


def test_metropolis_path():
    w = metropolis_weights(Graph.path(3))
    expect = np.array([[2, 1, 0], [1, 1, 1], [0, 1, 2]]) / 3
    np.testing.assert_allclose(w, expect, atol=1e-15)


def test_metropolis_triangle():
    np.testing.assert_allclose(metropolis_weights(Graph.triangle()), np.full((3, 3), 1 / 3))


def test_metropolis_doubly_stochastic(rng):
    for _ in range(10):
        g = random_connected_graph(12, 0.3, rng)
        w = metropolis_weights(g)
        check_weights(w, g)
        np.testing.assert_allclose(w.sum(0), 1, atol=1e-12)
        np.testing.assert_allclose(w.sum(1), 1, atol=1e-12)
        assert (np.diag(w) > 0).all()


def test_telescope_example():
    np.testing.assert_allclose(telescope(np.array([1.0, 0.7, 0.2])), [1.0, -0.3, -0.5, -0.2],
                               atol=1e-15)


def test_telescoping_sums_to_zero(rng):
    for fam in ("gaussian", "laplace", "uniform"):
        s = NoiseSchedule("telescoping", 2.0, 0.6, 12, fam)
        theta = generate_schedule(s, 8, rng)
        assert theta.shape == (13, 8)
        assert np.abs(theta.sum(axis=0)).max() < 1e-12


def test_telescoping_needs_horizon():
    with pytest.raises(ArgumentError):
        NoiseSchedule("telescoping", 1.0, 0.5, 0)
    with pytest.raises(ArgumentError):
        NoiseSchedule("independent", 1.0, 1.5, 3)


def test_independent_std(rng):
    s = NoiseSchedule("independent", 1.0, 0.25, 3)
    draws = np.concatenate([generate_schedule(s, 1000, rng)[2] for _ in range(100)])
    se = 0.25 / np.sqrt(2 * len(draws))
    assert abs(draws.std() - 0.25) < 3 * se


def test_telescoping_variances(rng):
    s = NoiseSchedule("telescoping", 1.0, 0.5, 6)
    theta = np.concatenate([generate_schedule(s, 5000, rng) for _ in range(20)], axis=1)
    var = theta.var(axis=1)
    for k in range(s.K + 1):
        assert var[k] == pytest.approx(s.noise_variance(k), rel=0.03)
    assert var[0] == pytest.approx(1.0, rel=0.03)
    # strict decay at every interior step
    for k in range(2, s.K):
        assert s.noise_variance(k) / s.noise_variance(k - 1) == pytest.approx(s.rho)


def test_triangle_one_step():
    g = Graph.triangle()
    tr = run_paca(g, metropolis_weights(g), [1, 2, 3], None, 1)
    np.testing.assert_allclose(tr.x[1], [2, 2, 2], atol=1e-15)


def test_dimension_mismatch():
    g = Graph.triangle()
    with pytest.raises(ArgumentError):
        run_paca(g, metropolis_weights(g), [1, 2], None, 3)
    with pytest.raises(ArgumentError):
        run_paca(g, np.eye(4), [1, 2, 3], None, 3)
    s = NoiseSchedule("telescoping", 1.0, 0.5, 10)
    with pytest.raises(ArgumentError):
        run_paca(g, metropolis_weights(g), [1, 2, 3], s, 5, np.random.default_rng(0))


def test_zero_noise_convergence_rate(rng):
    g = random_connected_graph(20, 0.2, rng)
    w = metropolis_weights(g)
    tr = run_paca(g, w, rng.uniform(0, 10, 20), None, 400)
    assert tr.max_deviation() < 1e-9
    lam = slem(w)
    dev = np.linalg.norm(tr.x - tr.xbar, axis=1)
    for k in range(1, 60):
        assert dev[k] / dev[k - 1] <= lam + 1e-6


def test_telescoping_converges_to_average(rng):
    g = random_connected_graph(20, 0.2, rng)
    w = metropolis_weights(g)
    s = NoiseSchedule("telescoping", 1.0, 0.5, 10)
    x0 = rng.uniform(0, 10, 20)
    tr = run_paca(g, w, x0, s, s.K + 200, rng)
    assert tr.max_deviation() < 1e-6
    # dense power-iteration oracle
    oracle = np.linalg.matrix_power(w, 200) @ (w @ (tr.x[s.K] + tr.theta[s.K]))
    np.testing.assert_allclose(tr.x[-1], oracle, atol=1e-9)
    totals = tr.x.sum(axis=1)
    assert np.abs(totals[s.K + 1:] - x0.sum()).max() < 1e-9


def test_sum_conservation(rng):
    g = random_connected_graph(15, 0.3, rng)
    s = NoiseSchedule("independent", 2.0, 0.7, 30)
    tr = run_paca(g, metropolis_weights(g), rng.normal(size=15), s, 40, rng)
    assert np.abs(tr.sum_residuals()).max() < 1e-9


def test_trace_round_trip(tmp_path, rng):
    g = random_connected_graph(8, 0.4, rng)
    s = NoiseSchedule("telescoping", 1.5, 0.4, 5, "laplace")
    tr = run_paca(g, metropolis_weights(g), rng.normal(size=8), s, 12, rng, seed=3,
                  config_digest="abc")
    p = tmp_path / "t.jsonl"
    save_trace(tr, p)
    back = load_trace(p)
    assert back.identical_to(tr)
    assert back.schedule == s and back.seed == 3 and back.config_digest == "abc"
    save_trace(back, tmp_path / "u.jsonl")
    assert p.read_bytes() == (tmp_path / "u.jsonl").read_bytes()


def test_replay_determinism(tmp_path):
    def once(name):
        r = np.random.default_rng(42)
        g = random_connected_graph(10, 0.3, r)
        s = NoiseSchedule("telescoping", 1.0, 0.5, 8)
        tr = run_paca(g, metropolis_weights(g), r.uniform(size=10), s, 30, r, seed=42)
        save_trace(tr, tmp_path / name)
        return (tmp_path / name).read_bytes()
    assert once("a") == once("b")
