"""Graphs, Metropolis weights, noise schedules and the noisy consensus loop.

The iteration simulated here is ``x(k+1) = W (x(k) + theta(k))`` with a doubly
stochastic ``W``. Each node broadcasts ``x_i^+(k) = x_i(k) + theta_i(k)``.
"""

from __future__ import annotations

import enum
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Optional

import numpy as np

from .distributions import Kind, NoiseDistribution, sample
from .errors import ArgumentError

TRACE_FORMAT = "noisepriv-trace"
TRACE_VERSION = 1


@dataclass(frozen=True)
class Graph:
    """Undirected, connected graph on nodes ``0..n-1`` (``n >= 3``)."""

    n: int
    edges: frozenset = field(default_factory=frozenset)

    def __post_init__(self):
        if self.n < 3:
            raise ArgumentError(f"need at least 3 nodes, got {self.n}")
        norm = set()
        for a, b in self.edges:
            a, b = int(a), int(b)
            if a == b:
                raise ArgumentError(f"self-loop at node {a}")
            if not (0 <= a < self.n and 0 <= b < self.n):
                raise ArgumentError(f"edge ({a}, {b}) references a node outside 0..{self.n - 1}")
            norm.add((min(a, b), max(a, b)))
        object.__setattr__(self, "edges", frozenset(norm))
        adj: list[set] = [set() for _ in range(self.n)]
        for a, b in norm:
            adj[a].add(b)
            adj[b].add(a)
        object.__setattr__(self, "_adj", tuple(frozenset(s) for s in adj))
        if not self._connected():
            raise ArgumentError("graph is not connected")

    def _connected(self) -> bool:
        seen = {0}
        stack = [0]
        while stack:
            for v in self._adj[stack.pop()]:
                if v not in seen:
                    seen.add(v)
                    stack.append(v)
        return len(seen) == self.n

    def neighbors(self, i: int) -> frozenset:
        return self._adj[i]

    def degree(self, i: int) -> int:
        return len(self._adj[i])

    def has_edge(self, a: int, b: int) -> bool:
        return (min(a, b), max(a, b)) in self.edges

    def sorted_edges(self) -> list[tuple[int, int]]:
        return sorted(self.edges)

    @classmethod
    def from_edges(cls, n: int, edges: Iterable) -> "Graph":
        return cls(n, frozenset(tuple(e) for e in edges))

    @classmethod
    def complete(cls, n: int) -> "Graph":
        return cls(n, frozenset((a, b) for a in range(n) for b in range(a + 1, n)))

    @classmethod
    def triangle(cls) -> "Graph":
        return cls.complete(3)

    @classmethod
    def path(cls, n: int) -> "Graph":
        return cls(n, frozenset((a, a + 1) for a in range(n - 1)))

    @classmethod
    def star(cls, n: int, hub: int = 0) -> "Graph":
        return cls(n, frozenset((hub, v) for v in range(n) if v != hub))


def random_connected_graph(n: int, p: float, rng: np.random.Generator) -> Graph:
    """Random spanning tree plus each remaining pair independently with prob. ``p``."""
    if n < 3:
        raise ArgumentError(f"need at least 3 nodes, got {n}")
    if not 0.0 <= p <= 1.0:
        raise ArgumentError(f"p must lie in [0, 1], got {p}")
    order = rng.permutation(n)
    edges = set()
    for idx in range(1, n):
        a, b = int(order[idx]), int(order[rng.integers(idx)])
        edges.add((min(a, b), max(a, b)))
    for a in range(n):
        for b in range(a + 1, n):
            if (a, b) not in edges and rng.random() < p:
                edges.add((a, b))
    return Graph(n, frozenset(edges))


def metropolis_weights(g: Graph) -> np.ndarray:
    """Symmetric Metropolis-Hastings weights ``1 / (1 + max(d_i, d_j))``."""
    w = np.zeros((g.n, g.n))
    for a, b in g.edges:
        w[a, b] = w[b, a] = 1.0 / (1.0 + max(g.degree(a), g.degree(b)))
    for i in range(g.n):
        w[i, i] = 1.0 - w[i].sum()
    return w


def check_weights(w: np.ndarray, g: Graph, tol: float = 1e-12) -> None:
    """Raise ``ArgumentError`` unless ``w`` is doubly stochastic and follows ``g``."""
    w = np.asarray(w, dtype=float)
    if w.shape != (g.n, g.n):
        raise ArgumentError(f"weight matrix shape {w.shape} does not match n={g.n}")
    if (w < 0).any():
        raise ArgumentError("weights must be non-negative")
    if np.abs(w.sum(axis=1) - 1).max() > tol or np.abs(w.sum(axis=0) - 1).max() > tol:
        raise ArgumentError("weights are not doubly stochastic")
    for i in range(g.n):
        if not w[i, i] > 0:
            raise ArgumentError(f"w[{i},{i}] must be positive")
        for j in range(g.n):
            if i != j and (w[i, j] > 0) != g.has_edge(i, j):
                raise ArgumentError(f"w[{i},{j}] is inconsistent with the edge set")


class ScheduleKind(str, enum.Enum):
    INDEPENDENT_DECAYING = "independent"
    TELESCOPING_ZERO_SUM = "telescoping"


@dataclass(frozen=True)
class NoiseSchedule:
    """Per-node noise sequence recipe.

    Independent: ``theta_i(k)`` has standard deviation ``sigma0 * rho**(k/2)``.
    Telescoping: a latent ``nu_i(k)`` with that standard deviation, and
    ``theta_i(0) = nu_i(0)``, ``theta_i(k) = nu_i(k) - nu_i(k-1)`` for
    ``0 < k < K``, ``theta_i(K) = -nu_i(K-1)``; the noise stops after ``K``.
    """

    kind: ScheduleKind
    sigma0: float = 1.0
    rho: float = 0.5
    K: int = 10
    family: Kind = Kind.GAUSSIAN

    def __post_init__(self):
        object.__setattr__(self, "kind", ScheduleKind(self.kind))
        object.__setattr__(self, "family", Kind(self.family))
        if not (self.sigma0 >= 0 and math.isfinite(self.sigma0)):
            raise ArgumentError(f"sigma0 must be non-negative, got {self.sigma0}")
        if not 0.0 < self.rho < 1.0:
            raise ArgumentError(f"rho must lie in (0, 1), got {self.rho}")
        if self.K < 0 or (self.kind is ScheduleKind.TELESCOPING_ZERO_SUM and self.K < 1):
            raise ArgumentError(f"horizon K={self.K} is too small for a {self.kind.value} schedule")

    @property
    def is_independent(self) -> bool:
        return self.kind is ScheduleKind.INDEPENDENT_DECAYING

    def latent_std(self, k: int) -> float:
        return self.sigma0 * self.rho ** (k / 2.0)

    def noise_variance(self, k: int) -> float:
        """Analytic ``Var theta_i(k)``."""
        if k < 0 or k > self.K:
            return 0.0
        s2 = self.sigma0**2
        if self.is_independent or k == 0:
            return s2 * self.rho**k
        if k == self.K:
            return s2 * self.rho ** (k - 1)
        return s2 * (self.rho**k + self.rho ** (k - 1))

    def initial_distribution(self) -> NoiseDistribution:
        """Marginal law of ``theta_i(0)``."""
        if self.sigma0 == 0:
            raise ArgumentError("a zero-noise schedule has no initial noise density")
        return NoiseDistribution.with_std(self.family, self.sigma0)

    def to_dict(self) -> dict:
        return {"kind": self.kind.value, "sigma0": self.sigma0, "rho": self.rho,
                "K": self.K, "family": self.family.value}

    @classmethod
    def from_dict(cls, d: dict) -> "NoiseSchedule":
        return cls(ScheduleKind(d["kind"]), float(d["sigma0"]), float(d["rho"]), int(d["K"]),
                   Kind(d["family"]))


def generate_schedule(s: NoiseSchedule, n: int, rng: np.random.Generator) -> np.ndarray:
    """Noise tensor of shape ``(K + 1, n)``; row ``k`` holds ``theta(k)``."""
    if s.is_independent:
        steps = s.K + 1
    else:
        steps = s.K
    if s.sigma0 == 0:
        return np.zeros((s.K + 1, n))
    unit = NoiseDistribution.with_std(s.family, 1.0)
    std = np.array([s.latent_std(k) for k in range(steps)])
    draws = sample(unit, rng, steps * n).reshape(steps, n) * std[:, None]
    if s.is_independent:
        return draws
    return telescope(draws)


def telescope(nu: np.ndarray) -> np.ndarray:
    """Zero-sum noise from latent rows ``nu(0..K-1)``: first row, successive
    differences, then the closing term ``-nu(K-1)``."""
    nu = np.asarray(nu, dtype=float)
    if nu.ndim == 1:
        return telescope(nu[:, None])[:, 0]
    return np.concatenate([nu[:1], np.diff(nu, axis=0), -nu[-1:]], axis=0)


@dataclass(frozen=True, eq=False)
class Trace:
    """Complete record of one consensus run over iterations ``0..T``."""

    graph: Graph
    weights: np.ndarray
    x: np.ndarray
    x_plus: np.ndarray
    theta: np.ndarray
    schedule: Optional[NoiseSchedule] = None
    seed: Optional[int] = None
    config_digest: Optional[str] = None

    def __post_init__(self):
        for name in ("weights", "x", "x_plus", "theta"):
            arr = np.array(getattr(self, name), dtype=float)
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)

    @property
    def T(self) -> int:
        return self.x.shape[0] - 1

    @property
    def n(self) -> int:
        return self.graph.n

    @property
    def x0(self) -> np.ndarray:
        return self.x[0]

    @property
    def xbar(self) -> float:
        return float(self.x[0].mean())

    def max_deviation(self, k: Optional[int] = None) -> float:
        """``max_i |x_i(k) - xbar|`` (defaults to the last iteration)."""
        k = self.T if k is None else k
        return float(np.abs(self.x[k] - self.xbar).max())

    def sum_residuals(self) -> np.ndarray:
        """``1'x(k+1) - 1'x(k) - 1'theta(k)`` for ``k = 0..T-1``."""
        return self.x[1:].sum(axis=1) - self.x[:-1].sum(axis=1) - self.theta[:-1].sum(axis=1)

    def identical_to(self, other: "Trace") -> bool:
        return (self.graph == other.graph and self.schedule == other.schedule
                and self.seed == other.seed and self.config_digest == other.config_digest
                and all(np.array_equal(getattr(self, a), getattr(other, a))
                        for a in ("weights", "x", "x_plus", "theta")))


def run_paca(g: Graph, w: np.ndarray, x0, schedule: Optional[NoiseSchedule], T: int,
             rng: Optional[np.random.Generator] = None, theta: Optional[np.ndarray] = None,
             seed: Optional[int] = None, config_digest: Optional[str] = None) -> Trace:
    """Run ``T`` iterations of ``x(k+1) = W (x(k) + theta(k))``.

    Noise comes from ``schedule`` (drawn from ``rng``) unless an explicit
    ``theta`` of shape ``(m, n)`` is given; rows past the noise horizon are
    zero.
    """
    x0 = np.asarray(x0, dtype=float)
    w = np.asarray(w, dtype=float)
    if x0.shape != (g.n,):
        raise ArgumentError(f"x0 has shape {x0.shape}, expected ({g.n},)")
    if w.shape != (g.n, g.n):
        raise ArgumentError(f"weights have shape {w.shape}, expected ({g.n}, {g.n})")
    if T < 0:
        raise ArgumentError("T must be non-negative")
    if theta is None:
        if schedule is None:
            noise = np.zeros((0, g.n))
        else:
            if T < schedule.K:
                raise ArgumentError(f"T={T} is shorter than the noise horizon K={schedule.K}")
            if rng is None:
                raise ArgumentError("a noise schedule needs an rng")
            noise = generate_schedule(schedule, g.n, rng)
    else:
        noise = np.atleast_2d(np.asarray(theta, dtype=float))
        if noise.shape[1] != g.n:
            raise ArgumentError(f"theta has {noise.shape[1]} columns, expected {g.n}")
        if noise.shape[0] > T + 1:
            raise ArgumentError("theta is longer than the run")

    full = np.zeros((T + 1, g.n))
    full[: noise.shape[0]] = noise
    x = np.empty((T + 1, g.n))
    x_plus = np.empty((T + 1, g.n))
    x[0] = x0
    for k in range(T + 1):
        x_plus[k] = x[k] + full[k]
        if k < T:
            x[k + 1] = w @ x_plus[k]
    return Trace(g, w, x, x_plus, full, schedule, seed, config_digest)


def save_trace(trace: Trace, path) -> None:
    """Write a JSON-lines trace: one header object, then one record per iteration.

    Floats are written with ``repr`` precision, so ``load_trace`` restores
    every array bit for bit.
    """
    header = {
        "format": TRACE_FORMAT,
        "version": TRACE_VERSION,
        "n": trace.n,
        "T": trace.T,
        "edges": [list(e) for e in trace.graph.sorted_edges()],
        "weights": trace.weights.tolist(),
        "schedule": None if trace.schedule is None else trace.schedule.to_dict(),
        "seed": trace.seed,
        "config_digest": trace.config_digest,
        "record_fields": ["k", "x", "x_plus", "theta"],
    }
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(json.dumps(header) + "\n")
        for k in range(trace.T + 1):
            rec = {"k": k, "x": trace.x[k].tolist(), "x_plus": trace.x_plus[k].tolist(),
                   "theta": trace.theta[k].tolist()}
            fh.write(json.dumps(rec) + "\n")


def load_trace(path) -> Trace:
    lines = Path(path).read_text(encoding="utf-8").splitlines()
    if not lines:
        raise ArgumentError(f"{path}: empty trace file")
    header = json.loads(lines[0])
    if header.get("format") != TRACE_FORMAT:
        raise ArgumentError(f"{path}: not a {TRACE_FORMAT} file")
    if header.get("version") != TRACE_VERSION:
        raise ArgumentError(f"{path}: unsupported trace version {header.get('version')}")
    records = [json.loads(line) for line in lines[1:] if line.strip()]
    if len(records) != header["T"] + 1 or [r["k"] for r in records] != list(range(len(records))):
        raise ArgumentError(f"{path}: iteration records are incomplete or out of order")
    g = Graph.from_edges(header["n"], header["edges"])
    sched = None if header["schedule"] is None else NoiseSchedule.from_dict(header["schedule"])
    return Trace(
        g,
        np.array(header["weights"], dtype=float),
        np.array([r["x"] for r in records], dtype=float),
        np.array([r["x_plus"] for r in records], dtype=float),
        np.array([r["theta"] for r in records], dtype=float),
        sched,
        header["seed"],
        header["config_digest"],
    )
