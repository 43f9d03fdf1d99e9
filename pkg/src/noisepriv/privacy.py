"""Disclosure probability: closed form, set integration, Monte Carlo and the
iteration-k upper bound, plus an equal-variance comparison of noise families."""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Optional, Sequence

import numpy as np

from .consensus import Graph, NoiseSchedule, ScheduleKind, metropolis_weights
from .distributions import DomainSet, Kind, NoiseDistribution, WINDOW_SDS, sample
from .errors import ArgumentError, StateError
from .estimation import (KnowledgeRegime, argmax_shaded_area, check_regime, estimate_k0_batch,
                         telescoping_posterior, ResidualSequence)

CSV_HEADER = ("dist", "sigma", "epsilon", "x0", "domain", "k", "regime", "delta_closed",
              "delta_general", "delta_mc", "stderr", "n", "seed")

MC_DEFAULT_N = 1_000_000
MC_MIN_N = 10_000
MC_BATCH = 100_000
SET_SCAN_POINTS = 4001


@dataclass(frozen=True)
class AccurateNoiseSet:
    """Values of ``theta_i(0)`` for which the optimal estimate is ``eps``-accurate."""

    intervals: tuple

    def contains(self, theta: float) -> bool:
        return any(lo <= theta <= hi for lo, hi in self.intervals)

    def probability(self, dist: NoiseDistribution) -> float:
        return float(sum(dist.cdf(hi) - dist.cdf(lo) for lo, hi in self.intervals))


@dataclass
class PrivacyReport:
    eps: float
    dist: str
    sigma: float
    delta_mc: Optional[float] = None
    mc_stderr: Optional[float] = None
    mc_n: int = 0
    delta_closed: Optional[float] = None
    delta_general: Optional[float] = None
    k: int = 0
    regime: str = KnowledgeRegime.INDEPENDENT_NOISE.value
    x0: Optional[float] = None
    domain: str = "R"
    seed: Optional[int] = None
    is_minimizer: bool = False

    def csv_row(self) -> dict:
        return {
            "dist": self.dist, "sigma": self.sigma, "epsilon": self.eps, "x0": self.x0,
            "domain": self.domain, "k": self.k, "regime": self.regime,
            "delta_closed": self.delta_closed, "delta_general": self.delta_general,
            "delta_mc": self.delta_mc, "stderr": self.mc_stderr, "n": self.mc_n,
            "seed": self.seed,
        }

    def to_dict(self) -> dict:
        return asdict(self)


def delta_whole_line(dist0: NoiseDistribution, eps: float) -> float:
    """Largest ``eps``-shaded area of ``dist0`` over the real line."""
    if not eps > 0:
        raise ArgumentError(f"eps must be positive, got {eps!r}")
    _, area, _ = argmax_shaded_area(dist0, DomainSet.whole_line(), eps)
    return area


def _error_map(dist0, domain, x0, eps, thetas):
    e_hat = estimate_k0_batch(dist0, x0 + np.asarray(thetas, dtype=float), domain, eps)
    return np.asarray(thetas) - e_hat


def accurate_noise_set(dist0: NoiseDistribution, domain: DomainSet, x0: float,
                       eps: float) -> AccurateNoiseSet:
    """Solve ``|x_hat(x0 + theta) - x0| <= eps`` for ``theta``.

    Whole line: the window ``[e - eps, e + eps]`` around the unconditional
    estimate. Bounded domains: the error map is scanned over every range where
    the estimator can change branch, transitions are bisected, and runs that
    reach the scan edge continue to infinity (the estimate is pinned to a
    domain boundary out there).
    """
    if not eps > 0:
        raise ArgumentError(f"eps must be positive, got {eps!r}")
    if domain.is_empty or not domain.contains(x0):
        raise ArgumentError(f"x0={x0} is not in the domain {domain.describe()}")
    if domain.is_whole_line:
        e, _, _ = argmax_shaded_area(dist0, domain, eps)
        return AccurateNoiseSet(((e - eps, e + eps),))

    half = WINDOW_SDS * dist0.std + eps
    ends = domain.boundary_points()
    lo = dist0.mode - half + min(ends) - x0 - 1.0
    hi = dist0.mode + half + max(ends) - x0 + 1.0
    grid = np.linspace(lo, hi, SET_SCAN_POINTS)
    member = np.abs(_error_map(dist0, domain, x0, eps, grid)) <= eps

    def is_member(t):
        return bool(abs(_error_map(dist0, domain, x0, eps, [t])[0]) <= eps)

    def edge(a, b):
        pa = is_member(a)
        for _ in range(200):
            if b - a <= 1e-12:
                break
            m = 0.5 * (a + b)
            if is_member(m) == pa:
                a = m
            else:
                b = m
        return b if not pa else a

    intervals = []
    i = 0
    while i < len(grid):
        if not member[i]:
            i += 1
            continue
        j = i
        while j + 1 < len(grid) and member[j + 1]:
            j += 1
        left = -math.inf if i == 0 else edge(grid[i - 1], grid[i])
        right = math.inf if j == len(grid) - 1 else edge(grid[j], grid[j + 1])
        intervals.append((float(left), float(right)))
        i = j + 1
    return AccurateNoiseSet(tuple(intervals))


def delta_general(dist0: NoiseDistribution, domain: DomainSet, x0: float, eps: float) -> float:
    """Mass of ``dist0`` on the accurate-noise set for a fixed true ``x0``."""
    return accurate_noise_set(dist0, domain, x0, eps).probability(dist0)


def delta_worst_case(dist0: NoiseDistribution, domain: DomainSet, eps: float,
                     points: int = 41) -> tuple[float, float]:
    """Largest ``delta_general`` over a grid of ``x0`` in the bounded pieces of
    ``domain``; returns ``(delta, x0)``."""
    xs = []
    for lo, hi in domain.pieces():
        if math.isfinite(lo) and math.isfinite(hi):
            xs.extend(np.linspace(lo, hi, points))
    if not xs:
        raise ArgumentError("worst-case sweep needs at least one bounded interval")
    vals = [(delta_general(dist0, domain, float(x), eps), float(x)) for x in xs]
    return max(vals, key=lambda v: (v[0], -v[1]))


@dataclass(frozen=True)
class Scenario:
    """One target/observer pair on a consensus network."""

    graph: Graph
    weights: np.ndarray = field(compare=False)
    schedule: NoiseSchedule
    x0: tuple
    target: int
    observer: int
    k: int = 0
    regime: KnowledgeRegime = KnowledgeRegime.INDEPENDENT_NOISE
    domain: DomainSet = field(default_factory=DomainSet.whole_line)

    def __post_init__(self):
        object.__setattr__(self, "regime", KnowledgeRegime(self.regime))
        object.__setattr__(self, "x0", tuple(float(v) for v in self.x0))
        if len(self.x0) != self.graph.n:
            raise ArgumentError(f"x0 has {len(self.x0)} entries, expected {self.graph.n}")
        if self.observer not in self.graph.neighbors(self.target):
            raise ArgumentError(f"observer {self.observer} is not a neighbour of {self.target}")
        if self.k < 0:
            raise ArgumentError("k must be non-negative")
        if not self.domain.contains(self.x0[self.target]):
            raise ArgumentError("the target's initial state lies outside its domain")
        if self.schedule.sigma0 == 0:
            raise ArgumentError("disclosure analysis needs a noisy schedule")
        check_regime(self.graph, self.observer, self.target, self.regime)

    @property
    def target_x0(self) -> float:
        return self.x0[self.target]

    def uses_residuals(self) -> bool:
        return (self.regime is KnowledgeRegime.FULL_KNOWLEDGE and not self.schedule.is_independent
                and self.k > 0)


def _noise_rows(s: NoiseSchedule, runs: int, n: int, upto: int, rng: np.random.Generator):
    """Yield ``theta(t)`` for ``t = 0..upto`` as ``(runs, n)`` arrays."""
    unit = NoiseDistribution.with_std(s.family, 1.0)

    def draw(t):
        return sample(unit, rng, runs * n).reshape(runs, n) * s.latent_std(t)

    prev = None
    for t in range(upto + 1):
        if t > s.K:
            yield np.zeros((runs, n))
        elif s.is_independent:
            yield draw(t)
        elif t == s.K:
            yield -prev
        else:
            nu = draw(t)
            yield nu if prev is None else nu - prev
            prev = nu


def _mc_batch(sc: Scenario, eps: float, runs: int, seed_seq: np.random.SeedSequence) -> int:
    rng = np.random.default_rng(seed_seq)
    g, w, i = sc.graph, np.asarray(sc.weights), sc.target
    x = np.broadcast_to(np.asarray(sc.x0), (runs, g.n)).copy()
    xp_i = np.empty((sc.k + 1, runs))
    res = np.empty((sc.k, runs))
    inputs = sorted(g.neighbors(i) | {i})
    prev_plus = None
    for t, theta in enumerate(_noise_rows(sc.schedule, runs, g.n, sc.k, rng)):
        x_plus = x + theta
        xp_i[t] = x_plus[:, i]
        if t > 0:
            res[t - 1] = x_plus[:, i] - prev_plus[:, inputs] @ w[i, inputs]
        x = x_plus @ w.T
        prev_plus = x_plus

    dist0 = sc.schedule.initial_distribution()
    x_plus0 = xp_i[0]
    if not sc.uses_residuals():
        e_hat = estimate_k0_batch(dist0, x_plus0, sc.domain, eps)
    elif sc.k >= sc.schedule.K:
        e_hat = -res[: sc.schedule.K].sum(axis=0)
    else:
        if sc.schedule.family is not Kind.GAUSSIAN:
            raise StateError("conditional estimation is only available for gaussian noise")
        # the posterior mean is linear in the residuals, so evaluate it on unit vectors
        k = sc.k
        basis = np.eye(k)
        coef = np.array([telescoping_posterior(sc.schedule, ResidualSequence(tuple(b)))[0]
                         for b in basis])
        _, std = telescoping_posterior(sc.schedule, ResidualSequence((0.0,) * k))
        mean = coef @ res
        e_hat = mean + estimate_k0_batch(NoiseDistribution.gaussian(std), x_plus0 - mean,
                                         sc.domain, eps)
    x_hat = x_plus0 - e_hat
    return int(np.count_nonzero(np.abs(x_hat - sc.target_x0) <= eps))


def delta_monte_carlo(scenario: Scenario, eps: float, n: int = MC_DEFAULT_N, seed=0,
                      batch: int = MC_BATCH, workers: int = 1) -> tuple[float, float]:
    """Empirical frequency of ``eps``-accurate optimal estimates over ``n``
    seeded runs, with its binomial standard error.

    Each batch owns a child stream of ``SeedSequence(seed)``; counts are summed,
    so the result does not depend on ``workers``.
    """
    if not eps > 0:
        raise ArgumentError(f"eps must be positive, got {eps!r}")
    if n < MC_MIN_N:
        raise ArgumentError(f"Monte Carlo needs n >= {MC_MIN_N}, got {n}")
    sizes = [batch] * (n // batch) + ([n % batch] if n % batch else [])
    root = seed if isinstance(seed, np.random.SeedSequence) else np.random.SeedSequence(seed)
    children = root.spawn(len(sizes))
    jobs = list(zip(sizes, children))
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            counts = list(pool.map(lambda job: _mc_batch(scenario, eps, *job), jobs))
    else:
        counts = [_mc_batch(scenario, eps, *job) for job in jobs]
    p = sum(counts) / n
    return p, math.sqrt(p * (1.0 - p) / n)


def delta_upper_bound_k(scenario: Scenario, eps: float) -> float:
    """Mass of ``theta_i(0)`` values that can lead to an accurate estimate at
    iteration ``k``.

    Reduces to the iteration-0 disclosure probability whenever the later
    outputs carry no information about ``theta_i(0)`` (independent noise, or
    residuals the observer cannot evaluate).
    """
    dist0 = scenario.schedule.initial_distribution()
    if not scenario.uses_residuals():
        return delta_general(dist0, scenario.domain, scenario.target_x0, eps)
    if scenario.k >= scenario.schedule.K:
        return 1.0
    raise StateError(
        f"no computable bound for full knowledge of a telescoping schedule at "
        f"k={scenario.k} < K={scenario.schedule.K}")


def compare_noise_families(sigma: float, eps: float, families: Sequence,
                           mc_n: int = 0, seed: Optional[int] = None) -> list[PrivacyReport]:
    """Whole-line disclosure probability of each family at standard deviation
    ``sigma``; the smallest is flagged."""
    if not families:
        raise ArgumentError("families must not be empty")
    if not (sigma > 0 and eps > 0):
        raise ArgumentError("sigma and eps must be positive")
    rows = []
    for fam in families:
        dist = NoiseDistribution.with_std(Kind(fam), sigma)
        d = delta_whole_line(dist, eps)
        row = PrivacyReport(eps=eps, dist=dist.kind.value, sigma=sigma, delta_closed=d,
                            delta_general=d, seed=seed)
        if mc_n:
            row.delta_mc, row.mc_stderr = _mc_k0(dist, eps, mc_n, seed)
            row.mc_n = mc_n
        rows.append(row)
    best = min(r.delta_closed for r in rows)
    for r in rows:
        r.is_minimizer = r.delta_closed == best
    return rows


def _mc_k0(dist: NoiseDistribution, eps: float, n: int, seed) -> tuple[float, float]:
    """Iteration-0 Monte Carlo on a triangle with independent noise of law ``dist``."""
    sched = NoiseSchedule(ScheduleKind.INDEPENDENT_DECAYING, dist.std, 0.5, 0, dist.kind)
    g = Graph.triangle()
    sc = Scenario(g, metropolis_weights(g), sched, (0.0, 0.0, 0.0), 0, 1)
    return delta_monte_carlo(sc, eps, n, seed=0 if seed is None else seed)
