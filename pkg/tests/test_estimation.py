import math

import numpy as np
import pytest

from noisepriv.consensus import (Graph, NoiseSchedule, metropolis_weights,
                                 random_connected_graph, run_paca)
from noisepriv.distributions import DomainSet, NoiseDistribution, shaded_area, shift_reflect
from noisepriv.errors import ArgumentError, StateError
from noisepriv.estimation import (InfoSet, KnowledgeRegime, ResidualSequence,
                                  attack_full_knowledge, estimate_k, estimate_k0,
                                  estimate_k0_batch, extract_info_set, hidden_neighbors,
                                  piecewise_oracle, residuals, telescoping_posterior)

G = NoiseDistribution.gaussian(1.0)
A2 = DomainSet.from_intervals([(-2.0, 0.0)])
FULL, PARTIAL, INDEP = (KnowledgeRegime.FULL_KNOWLEDGE, KnowledgeRegime.PARTIAL_NEIGHBORHOOD,
                        KnowledgeRegime.INDEPENDENT_NOISE)


def triangle_trace(sched, seed=0, T=None):
    g = Graph.triangle()
    r = np.random.default_rng(seed)
    return run_paca(g, metropolis_weights(g), r.uniform(0, 10, 3), sched,
                    sched.K + 5 if T is None else T, r)


def test_estimate_k0_examples():
    for xp in (-3.0, 0.0, 4.2):
        r = estimate_k0(G, xp, DomainSet.whole_line(), 0.1)
        assert r.e_hat == 0.0 and r.x_hat == xp
    r = estimate_k0(G, 1.3, A2, 0.1)
    assert r.e_hat == pytest.approx(1.3, abs=1e-12) and r.x_hat == pytest.approx(0.0, abs=1e-12)
    r = estimate_k0(G, -2.5, A2, 0.1)
    assert r.e_hat == pytest.approx(-0.5, abs=1e-12) and r.x_hat == pytest.approx(-2.0, abs=1e-12)
    assert r.x_hat == pytest.approx(-2.5 - r.e_hat, abs=1e-12)


def test_estimate_k0_rejects():
    with pytest.raises(ArgumentError):
        estimate_k0(G, 0.0, DomainSet.from_intervals([]), 0.1)
    with pytest.raises(ArgumentError):
        estimate_k0(G, 0.0, A2, 0.0)


def test_piecewise_oracle_examples():
    assert piecewise_oracle(1.3, 2, 0.1) == 1.3
    assert piecewise_oracle(-0.7, 2, 0.1) == 0.0
    assert piecewise_oracle(-2.5, 2, 0.1) == pytest.approx(-0.5)


def test_oracle_equality_grid():
    for a, eps in ((2.0, 0.1), (1.0, 0.5), (3.0, 0.3)):
        dom = DomainSet.from_intervals([(-a, 0.0)])
        for xp in np.linspace(-a - 3, 3, 101):
            assert estimate_k0(G, xp, dom, eps).e_hat == pytest.approx(
                piecewise_oracle(xp, a, eps), abs=1e-6)


def _random_domain(r):
    pick = r.integers(4)
    if pick == 0:
        return DomainSet.whole_line()
    if pick == 1:
        lo = r.uniform(-5, 2)
        return DomainSet.from_intervals([(lo, lo + r.uniform(0.1, 4))])
    if pick == 2:
        p = np.sort(r.uniform(-6, 6, 4))
        return DomainSet.from_intervals([(p[0], p[1]), (p[2], p[3])])
    return DomainSet.from_intervals([(-math.inf, r.uniform(-3, 3))])


def test_estimate_beats_dense_grid_random():
    r = np.random.default_rng(77)
    for _ in range(200):
        kind = ("gaussian", "laplace", "uniform")[r.integers(3)]
        dist = NoiseDistribution.with_std(kind, r.uniform(0.3, 3.0))
        dom = _random_domain(r)
        xp = float(r.normal(scale=3))
        eps = float(r.uniform(0.02, 1.0))
        res = estimate_k0(dist, xp, dom, eps)
        region = shift_reflect(xp, dom)
        assert region.contains(res.e_hat)
        width = 12 * dist.std + 2 * eps
        pieces = region.clip(-width, width)
        if not pieces:
            continue
        grid = np.concatenate([np.linspace(a, b, 10_000 // len(pieces)) for a, b in pieces])
        assert shaded_area(dist, res.e_hat, eps) >= shaded_area(dist, grid, eps).max() - 1e-9


def test_batch_matches_scalar():
    r = np.random.default_rng(4)
    for dist in (G, NoiseDistribution.laplace(0.7), NoiseDistribution.uniform(3.0)):
        for dom in (A2, DomainSet.from_intervals([(-4, -3), (-1, 2)]), DomainSet.whole_line()):
            xps = r.normal(scale=3, size=60)
            batch = estimate_k0_batch(dist, xps, dom, 0.2)
            scalar = [estimate_k0(dist, float(x), dom, 0.2).e_hat for x in xps]
            np.testing.assert_allclose(batch, scalar, atol=1e-9)


def test_uniform_tie_takes_midpoint():
    # the whole flat [-0.9, 0.9] is optimal; its midpoint represents it
    r = estimate_k0(NoiseDistribution.uniform(2.0), 5.0, DomainSet.whole_line(), 0.1)
    assert r.e_hat == pytest.approx(0.0, abs=1e-9)


def test_extract_info_set_triangle():
    tr = triangle_trace(NoiseSchedule("telescoping", 1.0, 0.5, 3))
    info = extract_info_set(tr, 1, 0, 0)
    assert info.nodes() == {0, 1, 2}
    assert set(info.outputs) == {(0, 0), (1, 0), (2, 0)}


def test_extract_info_set_private_neighbor():
    g = Graph.path(4)  # 0-1-2-3; target 1 has private neighbour 2 w.r.t. observer 0
    r = np.random.default_rng(0)
    tr = run_paca(g, metropolis_weights(g), r.normal(size=4),
                  NoiseSchedule("telescoping", 1.0, 0.5, 3), 5, r)
    info = extract_info_set(tr, 0, 1, 3)
    assert 2 not in info.nodes()
    assert hidden_neighbors(g, 0, 1) == [2]
    res = residuals(info, PARTIAL, g, tr.weights)
    assert len(res) == 3 and all(v is None for v in res.values)
    with pytest.raises(ArgumentError):
        extract_info_set(tr, 3, 1, 0)


def test_residuals_identity_and_empty():
    r = np.random.default_rng(8)
    for seed in range(20):
        g = random_connected_graph(10, 0.4, np.random.default_rng(seed))
        s = NoiseSchedule("telescoping", 1.0, 0.5, 6)
        tr = run_paca(g, metropolis_weights(g), r.normal(size=10), s, 8, r)
        for i in range(g.n):
            for j in g.neighbors(i):
                if hidden_neighbors(g, j, i):
                    continue
                info = extract_info_set(tr, j, i, 8)
                res = residuals(info, FULL, g, tr.weights)
                np.testing.assert_allclose(res.values, tr.theta[1:9, i], atol=1e-12)
    info = extract_info_set(tr, min(g.neighbors(0)), 0, 0)
    assert len(residuals(info, INDEP, g, tr.weights)) == 0


def test_independent_invariance_bitwise():
    for seed in range(20):
        g = random_connected_graph(8, 0.3, np.random.default_rng(seed))
        r = np.random.default_rng(seed + 100)
        s = NoiseSchedule("independent", 1.0, 0.5, 10)
        tr = run_paca(g, metropolis_weights(g), r.uniform(-2, 0, 8), s, 10, r)
        j = min(g.neighbors(0))
        base = None
        for k in range(6):
            info = extract_info_set(tr, j, 0, k)
            res = residuals(info, INDEP, g, tr.weights)
            e = estimate_k(s, info, res, A2, 0.1, INDEP)
            if base is None:
                base = estimate_k0(s.initial_distribution(), info.x_plus0, A2, 0.1)
            assert e.e_hat == base.e_hat and e.x_hat == base.x_hat
            assert e.k == k


def test_full_knowledge_horizon_example():
    s = NoiseSchedule("telescoping", 1.0, 0.5, 3)
    outputs = {(0, 0): 6.0}
    info = InfoSet(0, 1, 3, frozenset({0, 1, 2}), outputs)
    r = estimate_k(s, info, ResidualSequence((-0.3, -0.5, -0.2)), DomainSet.whole_line(), 0.1,
                   FULL)
    assert r.e_hat == 1.0 and r.x_hat == 5.0


def test_full_knowledge_unknown_residual():
    s = NoiseSchedule("telescoping", 1.0, 0.5, 3)
    info = InfoSet(0, 1, 2, frozenset({0, 1}), {(0, 0): 1.0})
    with pytest.raises(StateError):
        estimate_k(s, info, ResidualSequence((0.1, None)), DomainSet.whole_line(), 0.1, FULL)


def test_posterior_closed_form():
    s = NoiseSchedule("telescoping", 1.0, 0.5, 5)
    mean, std = telescoping_posterior(s, ResidualSequence((-0.4,)))
    # nu1 = nu0 + r with nu0 ~ N(0,1), nu1 ~ N(0, rho)
    assert mean == pytest.approx(0.4 / (1 + 0.5))
    assert std == pytest.approx(1 / math.sqrt(1 + 1 / 0.5))


def test_k1_rejection_sampling_oracle():
    rho, tp, eps = 0.05, -0.4, 0.1
    s = NoiseSchedule("telescoping", 1.0, rho, 5)
    info = InfoSet(0, 1, 1, frozenset({0, 1}), {(0, 0): 2.0, (0, 1): 2.0 + tp})
    e_hat = estimate_k(s, info, ResidualSequence((tp,)), DomainSet.whole_line(), eps, FULL).e_hat

    r = np.random.default_rng(2024)
    kept = []
    for _ in range(10):
        nu0 = r.normal(0.0, 1.0, 10**7)
        nu1 = r.normal(0.0, math.sqrt(rho), 10**7)
        kept.append(nu0[np.abs(nu1 - nu0 - tp) < 1e-3])
    kept = np.sort(np.concatenate(kept))
    grid = np.arange(-1.0, 1.5, 0.001)
    counts = (np.searchsorted(kept, grid + eps, "right")
              - np.searchsorted(kept, grid - eps, "left"))
    # histogram argmax, refined by a quadratic fit over the top of the count curve
    top = counts >= 0.8 * counts.max()
    a, b, _ = np.polyfit(grid[top], counts[top], 2)
    assert abs(-b / (2 * a) - e_hat) <= 0.02


def test_full_knowledge_non_gaussian_rejected():
    s = NoiseSchedule("telescoping", 1.0, 0.5, 5, "laplace")
    info = InfoSet(0, 1, 1, frozenset({0, 1}), {(0, 0): 1.0})
    with pytest.raises(StateError):
        estimate_k(s, info, ResidualSequence((0.2,)), DomainSet.whole_line(), 0.1, FULL)


def test_attack_triangle_example():
    g = Graph.triangle()
    theta = np.zeros((4, 3))
    theta[:, 0] = [1.0, -0.3, -0.5, -0.2]
    tr = run_paca(g, metropolis_weights(g), [5.0, 1.0, 2.0], None, 3, theta=theta)
    r = attack_full_knowledge(tr, 1, 0, K=3)
    assert r.x_hat == pytest.approx(5.0, abs=1e-12)
    assert r.e_hat == pytest.approx(1.0, abs=1e-12)


def test_attack_exact_random_traces():
    for seed in range(100):
        r = np.random.default_rng(seed)
        g = Graph.triangle() if seed % 2 else Graph.star(6, 0)
        s = NoiseSchedule("telescoping", r.uniform(0.5, 3), r.uniform(0.2, 0.9),
                          int(r.integers(1, 15)), ("gaussian", "laplace", "uniform")[seed % 3])
        tr = run_paca(g, metropolis_weights(g), r.uniform(-10, 10, g.n), s, s.K + 3, r)
        if seed % 2:
            targets, obs = [0], lambda i: 1
        else:
            targets, obs = range(1, 6), lambda i: 0
        for i in targets:
            res = attack_full_knowledge(tr, obs(i), i)
            assert abs(res.x_hat - tr.x0[i]) <= 1e-9


def test_attack_hidden_neighbor():
    g = Graph.path(5)
    r = np.random.default_rng(1)
    tr = run_paca(g, metropolis_weights(g), r.normal(size=5),
                  NoiseSchedule("telescoping", 1.0, 0.5, 4), 6, r)
    with pytest.raises(StateError, match="precondition: hidden neighbor"):
        attack_full_knowledge(tr, 0, 1)


def test_attack_needs_zero_sum():
    tr = triangle_trace(NoiseSchedule("independent", 1.0, 0.5, 4))
    with pytest.raises(StateError):
        attack_full_knowledge(tr, 1, 0)


def test_record_keys():
    rec = estimate_k0(G, 0.3, A2, 0.1).to_record()
    assert list(rec) == ["target", "observer", "k", "regime", "e_hat", "x_hat", "objective"]
