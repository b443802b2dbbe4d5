"""Temporal interval sampling for positive clip pairs.

An interval ``t`` (frames between the two clip starts) is drawn from a
power-law density ``P(t) = a * t**b + c`` on ``[0, T]`` by inverting its
closed-form CDF with a binary search over integers.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np

from .exceptions import ConfigurationError, DomainError


class DistributionPreset(str, enum.Enum):
    DEC_LINEAR = "dec-linear"
    DEC_SQRT = "dec-sqrt"
    DEC_QUAD = "dec-quad"
    UNIFORM = "uniform"
    INC_LINEAR = "inc-linear"
    INC_QUAD = "inc-quad"


@dataclass(frozen=True)
class IntervalDistribution:
    """Density ``a * t**b + c`` normalized on ``[0, T]``."""

    a: float
    b: float
    c: float
    T: int

    def __post_init__(self):
        if self.T < 1:
            raise ConfigurationError(f"T must be >= 1, got {self.T}")
        if self.b < 0:
            raise ConfigurationError(f"exponent b must be >= 0, got {self.b}")
        # a*t**b + c is monotone in t, so checking the endpoints suffices
        if min(self.pdf(0.0), self.pdf(float(self.T))) < -1e-12:
            raise ConfigurationError(f"density is negative somewhere on [0, {self.T}]")
        if abs(self.cdf(float(self.T)) - 1.0) > 1e-9:
            raise ConfigurationError(f"density integrates to {self.cdf(float(self.T))}, not 1")

    def pdf(self, t):
        return self.a * t**self.b + self.c

    def cdf(self, t):
        return self.a / (self.b + 1.0) * t ** (self.b + 1.0) + self.c * t

    def mean(self) -> float:
        T = float(self.T)
        return self.a / (self.b + 2.0) * T ** (self.b + 2.0) + self.c * T**2 / 2.0


def from_preset(preset: DistributionPreset | str, T: int) -> IntervalDistribution:
    """Materialize one of the six density shapes on ``[0, T]``.

    Decreasing shapes are pinned to zero density at ``T``, increasing ones at
    0, then normalized.
    """
    preset = DistributionPreset(preset)
    if T < 1:
        raise ConfigurationError(f"T must be >= 1, got {T}")
    T_ = float(T)
    if preset is DistributionPreset.UNIFORM:
        return IntervalDistribution(0.0, 0.0, 1.0 / T_, T)
    if preset is DistributionPreset.INC_LINEAR:
        return IntervalDistribution(2.0 / T_**2, 1.0, 0.0, T)
    if preset is DistributionPreset.INC_QUAD:
        return IntervalDistribution(3.0 / T_**3, 2.0, 0.0, T)
    # k * (T**b - t**b) integrates to k * T**(b+1) * b / (b+1)
    b = {"dec-linear": 1.0, "dec-sqrt": 0.5, "dec-quad": 2.0}[preset.value]
    k = (b + 1.0) / (b * T_ ** (b + 1.0))
    return IntervalDistribution(-k, b, k * T_**b, T)


def cdf(dist: IntervalDistribution, t: float) -> float:
    if not 0 <= t <= dist.T:
        raise DomainError(f"t={t} outside [0, {dist.T}]")
    return float(dist.cdf(float(t)))


def sample_interval(dist: IntervalDistribution, rng=None, *, v: float | None = None) -> int:
    """Return the smallest integer ``t`` in ``[0, T]`` with ``F(t) >= v``.

    ``v`` is drawn from ``rng`` unless given explicitly. The bracket keeps
    ``F(lower) < v <= F(upper)`` and the upper end is returned once it closes.
    """
    if v is None:
        v = rng.random()
    if v <= 0.0:
        return 0
    lower, upper = 0, dist.T
    while upper - lower > 1:
        t = (upper + lower) // 2
        if dist.cdf(float(t)) >= v:
            upper = t
        else:
            lower = t
    return upper


@dataclass(frozen=True)
class ClipPairSpec:
    start1: int
    start2: int
    interval: int


def sample_clip_pair(dist: IntervalDistribution, video_len: int, clip_span: int, rng) -> ClipPairSpec:
    """Draw an interval, then a uniform first start that keeps both clips inside."""
    if video_len < clip_span:
        raise ConfigurationError(f"video of {video_len} frames is shorter than clip span {clip_span}")
    if dist.T != video_len - clip_span:
        raise ConfigurationError(
            f"distribution domain T={dist.T} must equal video_len - clip_span = {video_len - clip_span}"
        )
    t = sample_interval(dist, rng)
    start1 = int(rng.integers(0, video_len - clip_span - t + 1))
    return ClipPairSpec(start1, start1 + t, t)


def interval_histogram(dist: IntervalDistribution, n: int, rng) -> np.ndarray:
    """Counts of ``n`` sampled intervals for each integer in ``[0, T]``."""
    counts = np.zeros(dist.T + 1, dtype=np.int64)
    for _ in range(n):
        counts[sample_interval(dist, rng)] += 1
    return counts


def discrete_ks_statistic(samples, dist: IntervalDistribution) -> float:
    """Sup-distance between the empirical CDF of integer samples and ``F``.

    Evaluated on the integer support, where the sampled variable's true CDF
    coincides with ``F``.
    """
    samples = np.asarray(samples)
    grid = np.arange(dist.T + 1)
    ecdf = np.searchsorted(np.sort(samples), grid, side="right") / samples.size
    return float(np.max(np.abs(ecdf - dist.cdf(grid.astype(np.float64)))))

