"""Scalar noise distributions, prior domains and the epsilon-shaded area.

Everything an estimator needs to evaluate: closed-form densities and CDFs for
the three supported location-scale families, the probability mass a density
puts on a window ``[y - eps, y + eps]``, and the points where that mass is
stationary in ``y``.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np
from scipy import special

from .errors import ArgumentError

__all__ = [
    "Kind",
    "NoiseDistribution",
    "DomainKind",
    "DomainSet",
    "CandidateSet",
    "density_at",
    "cumulative_at",
    "shaded_area",
    "log_shaded_area",
    "stationary_set",
    "shift_reflect",
    "sample",
]

SCAN_POINTS = 2048
WINDOW_SDS = 8.0
BISECT_TOL = 1e-12


class Kind(str, enum.Enum):
    GAUSSIAN = "gaussian"
    LAPLACE = "laplace"
    UNIFORM = "uniform"


@dataclass(frozen=True)
class NoiseDistribution:
    """A location-scale noise density.

    ``scale`` is the family's native parameter: the standard deviation for
    Gaussian, the diversity ``b`` for Laplace and the half-width ``M/2`` for
    Uniform.
    """

    kind: Kind
    location: float = 0.0
    scale: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "kind", Kind(self.kind))
        if not (self.scale > 0 and math.isfinite(self.scale)):
            raise ArgumentError(f"scale must be positive and finite, got {self.scale!r}")
        if not math.isfinite(self.location):
            raise ArgumentError(f"location must be finite, got {self.location!r}")

    @classmethod
    def gaussian(cls, sigma: float = 1.0, location: float = 0.0) -> "NoiseDistribution":
        return cls(Kind.GAUSSIAN, location, sigma)

    @classmethod
    def laplace(cls, b: float = 1.0, location: float = 0.0) -> "NoiseDistribution":
        return cls(Kind.LAPLACE, location, b)

    @classmethod
    def uniform(cls, width: float = 2.0, location: float = 0.0) -> "NoiseDistribution":
        """Uniform density of total width ``M`` centred on ``location``."""
        return cls(Kind.UNIFORM, location, width / 2.0)

    @classmethod
    def with_std(cls, kind, std: float, location: float = 0.0) -> "NoiseDistribution":
        """Member of ``kind`` whose standard deviation is ``std``."""
        kind = Kind(kind)
        if kind is Kind.GAUSSIAN:
            scale = std
        elif kind is Kind.LAPLACE:
            scale = std / math.sqrt(2.0)
        else:
            scale = std * math.sqrt(3.0)
        return cls(kind, location, scale)

    @property
    def support(self) -> tuple[float, float]:
        if self.kind is Kind.UNIFORM:
            return (self.location - self.scale, self.location + self.scale)
        return (-math.inf, math.inf)

    @property
    def variance(self) -> float:
        if self.kind is Kind.GAUSSIAN:
            return self.scale**2
        if self.kind is Kind.LAPLACE:
            return 2.0 * self.scale**2
        return (2.0 * self.scale) ** 2 / 12.0

    @property
    def std(self) -> float:
        return math.sqrt(self.variance)

    @property
    def mode(self) -> float:
        """Centre of symmetry (every supported kind is symmetric)."""
        return self.location

    def describe(self) -> str:
        return f"{self.kind.value}(loc={self.location:g},scale={self.scale:g})"

    def shifted(self, location: float) -> "NoiseDistribution":
        return NoiseDistribution(self.kind, location, self.scale)

    # vectorised kernels -------------------------------------------------

    def pdf(self, z):
        z = np.asarray(z, dtype=float)
        u = (z - self.location) / self.scale
        if self.kind is Kind.GAUSSIAN:
            return np.exp(-0.5 * u * u) / (self.scale * math.sqrt(2.0 * math.pi))
        if self.kind is Kind.LAPLACE:
            return np.exp(-np.abs(u)) / (2.0 * self.scale)
        return np.where(np.abs(u) <= 1.0, 0.5 / self.scale, 0.0)

    def cdf(self, z):
        z = np.asarray(z, dtype=float)
        u = (z - self.location) / self.scale
        if self.kind is Kind.GAUSSIAN:
            return special.ndtr(u)
        if self.kind is Kind.LAPLACE:
            return np.where(u < 0, 0.5 * np.exp(np.minimum(u, 0.0)),
                            1.0 - 0.5 * np.exp(-np.maximum(u, 0.0)))
        return np.clip(0.5 * (u + 1.0), 0.0, 1.0)

    def sf(self, z):
        """Survival function ``1 - cdf``, accurate in the right tail."""
        z = np.asarray(z, dtype=float)
        # symmetric families: sf(loc + t) == cdf(loc - t)
        return self.cdf(2.0 * self.location - z)


def density_at(dist: NoiseDistribution, z: float) -> float:
    return float(dist.pdf(z))


def cumulative_at(dist: NoiseDistribution, z: float) -> float:
    return float(dist.cdf(z))


def shaded_area(dist: NoiseDistribution, y, eps: float):
    """Probability mass of ``dist`` on ``[y - eps, y + eps]``.

    Accepts scalar or array ``y``. Differences are taken on whichever tail
    keeps precision (CDF left of the centre, survival function right of it).
    """
    if eps < 0:
        raise ArgumentError(f"eps must be non-negative, got {eps!r}")
    y_arr = np.asarray(y, dtype=float)
    left = dist.cdf(y_arr + eps) - dist.cdf(y_arr - eps)
    right = dist.sf(y_arr - eps) - dist.sf(y_arr + eps)
    area = np.clip(np.where(y_arr <= dist.location, left, right), 0.0, 1.0)
    if np.ndim(y) == 0:
        return float(area)
    return area


def log_shaded_area(dist: NoiseDistribution, y, eps: float):
    """Natural log of :func:`shaded_area`, finite far into the tails where the
    plain difference underflows to zero."""
    if eps < 0:
        raise ArgumentError(f"eps must be non-negative, got {eps!r}")
    y_arr = np.asarray(y, dtype=float)
    # every supported kind is symmetric, so fold onto the left of the centre
    u = -np.abs(y_arr - dist.location) / dist.scale
    e = eps / dist.scale
    a, b = u - e, u + e
    with np.errstate(divide="ignore", invalid="ignore"):
        if dist.kind is Kind.GAUSSIAN:
            la, lb = special.log_ndtr(a), special.log_ndtr(b)
            tail = lb + np.log1p(-np.exp(la - lb))
            out = np.where(b <= 0, tail, np.log(shaded_area(dist, y_arr, eps)))
        elif dist.kind is Kind.LAPLACE:
            tail = math.log(0.5) + b + np.log1p(-np.exp(a - b))
            out = np.where(b <= 0, tail, np.log(shaded_area(dist, y_arr, eps)))
        else:
            out = np.log(shaded_area(dist, y_arr, eps))
        if eps == 0:
            out = np.full(y_arr.shape, -np.inf)
    if np.ndim(y) == 0:
        return float(out)
    return out


class DomainKind(str, enum.Enum):
    WHOLE_LINE = "whole_line"
    INTERVALS = "intervals"


@dataclass(frozen=True)
class DomainSet:
    """Prior support of an initial state: the real line or a union of closed
    intervals (endpoints may be infinite)."""

    variant: DomainKind = DomainKind.WHOLE_LINE
    intervals: tuple[tuple[float, float], ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "variant", DomainKind(self.variant))
        ivs = tuple((float(lo), float(hi)) for lo, hi in self.intervals)
        object.__setattr__(self, "intervals", ivs)
        if self.variant is DomainKind.WHOLE_LINE:
            if ivs:
                raise ArgumentError("a whole-line domain carries no intervals")
            return
        for lo, hi in ivs:
            if math.isnan(lo) or math.isnan(hi) or lo > hi:
                raise ArgumentError(f"invalid interval [{lo}, {hi}]")
        for (_, hi0), (lo1, _) in zip(ivs, ivs[1:]):
            if not hi0 < lo1:
                raise ArgumentError("intervals must be sorted and pairwise disjoint")

    @classmethod
    def whole_line(cls) -> "DomainSet":
        return cls(DomainKind.WHOLE_LINE, ())

    @classmethod
    def from_intervals(cls, intervals: Iterable[Sequence[float]]) -> "DomainSet":
        ivs = sorted((float(lo), float(hi)) for lo, hi in intervals)
        return cls(DomainKind.INTERVALS, tuple(ivs))

    @property
    def is_whole_line(self) -> bool:
        if self.variant is DomainKind.WHOLE_LINE:
            return True
        return self.intervals == ((-math.inf, math.inf),)

    @property
    def is_empty(self) -> bool:
        return self.variant is DomainKind.INTERVALS and not self.intervals

    def pieces(self) -> tuple[tuple[float, float], ...]:
        if self.variant is DomainKind.WHOLE_LINE:
            return ((-math.inf, math.inf),)
        return self.intervals

    def contains(self, x: float) -> bool:
        return any(lo <= x <= hi for lo, hi in self.pieces())

    def boundary_points(self) -> list[float]:
        pts = []
        for lo, hi in self.pieces():
            pts.extend(p for p in (lo, hi) if math.isfinite(p))
        return sorted(set(pts))

    def clip(self, lo: float, hi: float) -> list[tuple[float, float]]:
        """Pieces of this set intersected with ``[lo, hi]``."""
        out = []
        for a, b in self.pieces():
            a, b = max(a, lo), min(b, hi)
            if a <= b:
                out.append((a, b))
        return out

    def describe(self) -> str:
        if self.is_whole_line:
            return "R"
        return "U".join(f"[{lo:g};{hi:g}]" for lo, hi in self.intervals) or "{}"


@dataclass(frozen=True)
class CandidateSet:
    """Isolated stationary points plus intervals on which the shaded-area
    derivative vanishes identically."""

    points: tuple[float, ...] = ()
    intervals: tuple[tuple[float, float], ...] = field(default=())

    def representatives(self) -> list[float]:
        return list(self.points) + [0.5 * (lo + hi) for lo, hi in self.intervals]


def shift_reflect(x_plus: float, domain: DomainSet) -> DomainSet:
    """The set ``{x_plus - v : v in domain}``."""
    if domain.variant is DomainKind.WHOLE_LINE:
        return DomainSet.whole_line()
    ivs = [(x_plus - hi, x_plus - lo) for lo, hi in reversed(domain.intervals)]
    return DomainSet(DomainKind.INTERVALS, tuple(ivs))


def _bisect(pred, a: float, b: float) -> float:
    """Boundary between ``pred(a)`` and ``not pred(a)`` inside ``[a, b]``."""
    pa = pred(a)
    for _ in range(200):
        if b - a <= BISECT_TOL:
            break
        m = 0.5 * (a + b)
        if m <= a or m >= b:
            break
        if pred(m) == pa:
            a = m
        else:
            b = m
    return 0.5 * (a + b)


def _scan_piece(g, a: float, b: float, n: int):
    if a == b:
        return ([a] if g(np.array([a]))[0] == 0.0 else []), []
    ys = np.linspace(a, b, n)
    vals = g(ys)
    zero = vals == 0.0
    sgn = np.sign(vals)
    points: list[float] = []
    flats: list[tuple[float, float]] = []

    def is_zero(y):
        return bool(g(np.array([y]))[0] == 0.0)

    i = 0
    while i < n:
        if zero[i]:
            j = i
            while j + 1 < n and zero[j + 1]:
                j += 1
            if j == i:
                points.append(float(ys[i]))
            else:
                lo = float(ys[i]) if i == 0 else _bisect(lambda y: not is_zero(y), ys[i - 1], ys[i])
                hi = float(ys[j]) if j == n - 1 else _bisect(is_zero, ys[j], ys[j + 1])
                flats.append((lo, hi))
            i = j + 1
            continue
        if i + 1 < n and not zero[i + 1] and sgn[i] != sgn[i + 1]:
            s0 = sgn[i]
            points.append(_bisect(lambda y: np.sign(g(np.array([y]))[0]) == s0, ys[i], ys[i + 1]))
        i += 1
    return points, flats


def stationary_set(dist: NoiseDistribution, eps: float, within: DomainSet | None = None,
                   scan_points: int = SCAN_POINTS) -> CandidateSet:
    """Zeros of ``f(y + eps) - f(y - eps)`` inside ``within``.

    Roots are bracketed by sign changes on a uniform grid over a window of
    ``8`` standard deviations (widened by ``eps``) around the mode, then
    bisected. Grid runs where the difference is exactly zero become flat
    intervals with bisection-refined ends.
    """
    if not eps > 0:
        raise ArgumentError(f"eps must be positive, got {eps!r}")
    within = DomainSet.whole_line() if within is None else within
    half = WINDOW_SDS * dist.std + eps
    lo_w, hi_w = dist.mode - half, dist.mode + half

    def g(y):
        return dist.pdf(y + eps) - dist.pdf(y - eps)

    points: list[float] = []
    flats: list[tuple[float, float]] = []
    for a, b in within.clip(lo_w, hi_w):
        p, f = _scan_piece(g, a, b, scan_points)
        points.extend(p)
        flats.extend(f)
    # the mode of a symmetric density is an exact root; snap the bisected copy onto it
    m = dist.mode
    if g(m) == 0.0 and within.contains(m):
        snap = BISECT_TOL * 1e3 * max(1.0, dist.std)
        points = [m if abs(p - m) <= snap else p for p in points]
    return CandidateSet(tuple(sorted(set(float(p) for p in points))),
                        tuple(sorted((float(a), float(b)) for a, b in flats)))


def sample(dist: NoiseDistribution, rng: np.random.Generator, n: int) -> np.ndarray:
    """``n`` i.i.d. draws; advances only ``rng``."""
    if n < 0:
        raise ArgumentError("n must be non-negative")
    if dist.kind is Kind.GAUSSIAN:
        return rng.normal(dist.location, dist.scale, n)
    if dist.kind is Kind.LAPLACE:
        return rng.laplace(dist.location, dist.scale, n)
    return rng.uniform(dist.location - dist.scale, dist.location + dist.scale, n)
