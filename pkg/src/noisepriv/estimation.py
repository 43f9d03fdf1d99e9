"""Optimal estimation of a neighbour's initial state from its noisy outputs.

An observer ``j`` adjacent to target ``i`` sees ``x_i^+(t)``, its own outputs
and those of common neighbours. The optimal estimate of the added noise
``theta_i(0)`` is the point of the (possibly conditioned) noise density whose
``eps``-window carries the most mass, restricted to ``x_i^+(0) - X_i``.
"""

from __future__ import annotations

import enum
import functools
import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .consensus import Graph, NoiseSchedule, ScheduleKind, Trace
from .distributions import (DomainSet, Kind, NoiseDistribution, log_shaded_area, shaded_area,
                            shift_reflect, stationary_set)
from .errors import ArgumentError, StateError

# candidates whose log-area is within this of the best are ties
TIE_TOL = 1e-12


class KnowledgeRegime(str, enum.Enum):
    INDEPENDENT_NOISE = "independent"
    PARTIAL_NEIGHBORHOOD = "partial"
    FULL_KNOWLEDGE = "full"


@dataclass(frozen=True)
class InfoSet:
    """Outputs available to ``observer`` about ``target`` through iteration ``k``."""

    target: int
    observer: int
    k: int
    visible: frozenset
    outputs: dict

    @property
    def x_plus0(self) -> float:
        return self.outputs[(self.target, 0)]

    def nodes(self) -> set:
        return {node for node, _ in self.outputs}


@dataclass(frozen=True)
class ResidualSequence:
    """``theta'_i(1..k)``; ``None`` marks an entry the observer cannot evaluate."""

    values: tuple

    def __len__(self):
        return len(self.values)

    @property
    def complete(self) -> bool:
        return all(v is not None for v in self.values)


@dataclass(frozen=True)
class EstimationResult:
    e_hat: float
    x_hat: float
    k: int
    regime: KnowledgeRegime
    candidate_count: int
    objective: float
    target: Optional[int] = None
    observer: Optional[int] = None

    def to_record(self) -> dict:
        return {
            "target": self.target,
            "observer": self.observer,
            "k": self.k,
            "regime": KnowledgeRegime(self.regime).value,
            "e_hat": self.e_hat,
            "x_hat": self.x_hat,
            "objective": self.objective,
        }


def hidden_neighbors(g: Graph, j: int, i: int) -> list[int]:
    """Neighbours of ``i`` whose outputs observer ``j`` cannot see."""
    return sorted(g.neighbors(i) - g.neighbors(j) - {j})


def check_regime(g: Graph, j: int, i: int, regime: KnowledgeRegime) -> None:
    if KnowledgeRegime(regime) is KnowledgeRegime.FULL_KNOWLEDGE:
        hidden = hidden_neighbors(g, j, i)
        if hidden:
            raise StateError(
                f"precondition: hidden neighbor(s) {hidden} of target {i} "
                f"are not visible to observer {j}")


def extract_info_set(trace: Trace, j: int, i: int, k: int) -> InfoSet:
    g = trace.graph
    if not (0 <= i < g.n and 0 <= j < g.n):
        raise ArgumentError(f"nodes ({i}, {j}) outside 0..{g.n - 1}")
    if j not in g.neighbors(i):
        raise ArgumentError(f"observer {j} is not a neighbour of target {i}")
    if not 0 <= k <= trace.T:
        raise ArgumentError(f"horizon k={k} outside 0..{trace.T}")
    visible = frozenset({i, j} | (g.neighbors(i) & g.neighbors(j)))
    outputs = {(node, t): float(trace.x_plus[t, node]) for node in sorted(visible)
               for t in range(k + 1)}
    return InfoSet(i, j, k, visible, outputs)


def residuals(info: InfoSet, regime: KnowledgeRegime, graph: Graph,
              weights: np.ndarray) -> ResidualSequence:
    """``theta'_i(t) = x_i^+(t) - f_i(x^+(t-1))`` for ``t = 1..k``.

    An entry is evaluated only when every input of node ``i``'s update is in
    the information set; otherwise it is ``None``.
    """
    i = info.target
    inputs = sorted(graph.neighbors(i) | {i})
    known = all(node in info.visible for node in inputs)
    if KnowledgeRegime(regime) is KnowledgeRegime.FULL_KNOWLEDGE and not known:
        check_regime(graph, info.observer, i, regime)
    vals = []
    for t in range(1, info.k + 1):
        if not known:
            vals.append(None)
            continue
        update = sum(weights[i, node] * info.outputs[(node, t - 1)] for node in inputs)
        vals.append(info.outputs[(i, t)] - update)
    return ResidualSequence(tuple(vals))


def argmax_shaded_area(dist: NoiseDistribution, region: DomainSet, eps: float):
    """Maximise the ``eps``-shaded area of ``dist`` over ``region``.

    Evaluates stationary points, the region's finite boundary points and the
    midpoint of every flat interval; ties go to the smallest candidate.
    Returns ``(y, area, candidate_count)``.
    """
    cands = stationary_set(dist, eps, region)
    values = cands.representatives() + region.boundary_points()
    if not values:
        raise StateError("no finite candidate for the shaded-area maximum")
    ys = np.array(sorted(set(values)))
    logs = log_shaded_area(dist, ys, eps)
    best = logs.max()
    idx = int(np.flatnonzero(logs >= best - TIE_TOL)[0])
    return float(ys[idx]), shaded_area(dist, float(ys[idx]), eps), len(ys)


def estimate_k0(dist0: NoiseDistribution, x_plus0: float, domain: DomainSet,
                eps: float) -> EstimationResult:
    """Optimal estimate from the single output ``x_i^+(0)``."""
    if not eps > 0:
        raise ArgumentError(f"eps must be positive, got {eps!r}")
    if domain.is_empty:
        raise ArgumentError("domain is empty")
    region = shift_reflect(x_plus0, domain)
    e_hat, area, count = argmax_shaded_area(dist0, region, eps)
    return EstimationResult(e_hat, x_plus0 - e_hat, 0, KnowledgeRegime.INDEPENDENT_NOISE,
                            count, area)


@functools.lru_cache(maxsize=256)
def _global_stationary(dist0: NoiseDistribution, eps: float):
    return stationary_set(dist0, eps)


def estimate_k0_batch(dist0: NoiseDistribution, x_plus0, domain: DomainSet,
                      eps: float) -> np.ndarray:
    """Vectorised ``e_hat`` for many outputs ``x_i^+(0)`` at once.

    The stationary set is computed once on the whole line and intersected with
    each shifted domain, instead of being rescanned per output.
    """
    if not eps > 0:
        raise ArgumentError(f"eps must be positive, got {eps!r}")
    if domain.is_empty:
        raise ArgumentError("domain is empty")
    xp = np.asarray(x_plus0, dtype=float).ravel()
    glob = _global_stationary(dist0, float(eps))
    if domain.is_whole_line:
        e, _, _ = argmax_shaded_area(dist0, DomainSet.whole_line(), eps)
        return np.full(xp.shape, e)

    cols = []
    pieces = domain.pieces()
    for p in glob.points:
        ok = np.zeros(xp.shape, dtype=bool)
        for lo, hi in pieces:
            ok |= (xp - hi <= p) & (p <= xp - lo)
        cols.append(np.where(ok, p, np.nan))
    for v in domain.boundary_points():
        cols.append(xp - v)
    for a, b in glob.intervals:
        for lo, hi in pieces:
            left = np.maximum(a, xp - hi)
            right = np.minimum(b, xp - lo)
            cols.append(np.where(left <= right, 0.5 * (left + right), np.nan))
    ys = np.stack(cols, axis=1)
    valid = ~np.isnan(ys)
    logs = np.where(valid, log_shaded_area(dist0, np.where(valid, ys, 0.0), eps), -np.inf)
    best = logs.max(axis=1, keepdims=True)
    tied = valid & (logs >= best - TIE_TOL)
    return np.where(tied, ys, np.inf).min(axis=1)


def piecewise_oracle(x_plus0: float, a: float, eps: float) -> float:
    """Closed-form noise estimate for a symmetric unimodal density and the
    prior ``[-a, 0]``."""
    if not a > 0:
        raise ArgumentError("a must be positive")
    if x_plus0 >= 0:
        return x_plus0
    if x_plus0 >= -a:
        return 0.0
    return x_plus0 + a


def telescoping_posterior(schedule: NoiseSchedule, res: ResidualSequence):
    """Gaussian law of ``theta_i(0)`` given ``theta_i(1..k)`` under a telescoping
    schedule with ``k < K``: returns ``(mean, std)``.

    Knowing the residuals pins ``nu(t) = nu(0) + c_t`` with ``c_t`` their
    running sum, so the posterior is a product of Gaussian factors in ``nu(0)``.
    """
    precision = 1.0 / schedule.latent_std(0) ** 2
    weighted = 0.0
    c = 0.0
    for t, r in enumerate(res.values, start=1):
        c += r
        w = 1.0 / schedule.latent_std(t) ** 2
        precision += w
        weighted -= c * w
    return weighted / precision, 1.0 / math.sqrt(precision)


def estimate_k(schedule: NoiseSchedule, info: InfoSet, res: ResidualSequence,
               domain: DomainSet, eps: float, regime: KnowledgeRegime) -> EstimationResult:
    """Optimal estimate from the information set through iteration ``info.k``."""
    if not eps > 0:
        raise ArgumentError(f"eps must be positive, got {eps!r}")
    regime = KnowledgeRegime(regime)
    x_plus0 = info.x_plus0

    def tagged(r: EstimationResult) -> EstimationResult:
        return EstimationResult(r.e_hat, r.x_hat, info.k, regime, r.candidate_count,
                                r.objective, info.target, info.observer)

    if (regime is not KnowledgeRegime.FULL_KNOWLEDGE or schedule.is_independent
            or info.k == 0):
        return tagged(estimate_k0(schedule.initial_distribution(), x_plus0, domain, eps))

    if not res.complete:
        raise StateError("full-knowledge estimation needs every residual, some are unknown")
    if len(res) != info.k:
        raise ArgumentError("residual sequence length does not match the horizon")
    if schedule.sigma0 == 0:
        raise StateError("zero-noise schedule: theta_i(0) is identically zero")

    region = shift_reflect(x_plus0, domain)
    if info.k >= schedule.K:
        e_hat = -math.fsum(res.values[: schedule.K])
        inside = any(lo - 1e-9 <= e_hat <= hi + 1e-9 for lo, hi in region.pieces())
        return EstimationResult(e_hat, x_plus0 - e_hat, info.k, regime, 1,
                                1.0 if inside else 0.0, info.target, info.observer)

    if schedule.family is not Kind.GAUSSIAN:
        raise StateError(
            f"conditional estimation under a telescoping schedule is only available for "
            f"gaussian noise, not {schedule.family.value}")
    mean, std = telescoping_posterior(schedule, res)
    e_hat, area, count = argmax_shaded_area(NoiseDistribution.gaussian(std, mean), region, eps)
    return EstimationResult(e_hat, x_plus0 - e_hat, info.k, regime, count, area,
                            info.target, info.observer)


def attack_full_knowledge(trace: Trace, j: int, i: int,
                          K: Optional[int] = None) -> EstimationResult:
    """Exact recovery of ``x_i(0)`` when ``j`` sees every input of ``i``'s update
    and the noise is zero-sum up to horizon ``K``."""
    g = trace.graph
    if j not in g.neighbors(i):
        raise ArgumentError(f"observer {j} is not a neighbour of target {i}")
    check_regime(g, j, i, KnowledgeRegime.FULL_KNOWLEDGE)
    if K is None:
        if trace.schedule is not None:
            if trace.schedule.kind is not ScheduleKind.TELESCOPING_ZERO_SUM:
                raise StateError("precondition: the trace's noise schedule is not zero-sum")
            K = trace.schedule.K
        else:
            K = trace.T
    if trace.T < K:
        raise StateError(f"precondition: trace horizon T={trace.T} is shorter than K={K}")
    info = extract_info_set(trace, j, i, K)
    res = residuals(info, KnowledgeRegime.FULL_KNOWLEDGE, g, trace.weights)
    e_hat = -math.fsum(res.values)
    return EstimationResult(e_hat, info.x_plus0 - e_hat, K, KnowledgeRegime.FULL_KNOWLEDGE,
                            1, 1.0, i, j)
