"""Invertible driving systems for the random fiber maps.

A base point is addressed by an anchor and an integer time, so advancing
forwards or backwards is exact integer bookkeeping.  For the circle
rotation the anchor is the starting position; for the two-sided Bernoulli
shift the anchor is the seed of the symbol sequence.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Union

import numpy as np

from .errors import ConfigError, OrbitOverflowError

GOLDEN_ANGLE = (math.sqrt(5.0) - 1.0) / 2.0
DEFAULT_MAX_ORBIT = 10**9


@dataclass(frozen=True)
class BasePoint:
    """Point of the base space: ``theta**time`` applied to ``anchor``."""

    anchor: Union[float, int]
    time: int = 0


@dataclass(frozen=True)
class CircleRotation:
    """Rotation ``x -> x + alpha (mod 1)`` with an affine parameter rule.

    Parameters
    ----------
    alpha : float
        Rotation angle; the golden-ratio default is badly approximable.
    box : tuple of float
        Parameter interval ``(lo, hi)``; position ``p`` maps to ``lo + (hi - lo) p``.
    max_orbit : int
        Largest admissible absolute time index.
    """

    alpha: float = GOLDEN_ANGLE
    box: tuple = (0.1, 0.3)
    max_orbit: int = DEFAULT_MAX_ORBIT

    def __post_init__(self):
        if not 0.0 < self.alpha < 1.0:
            raise ConfigError("rotation angle must lie in (0, 1)")
        if not self.box[0] <= self.box[1]:
            raise ConfigError("parameter box must satisfy lo <= hi")

    def position(self, x: BasePoint) -> float:
        shift = math.fmod(x.time * self.alpha, 1.0)
        return (float(x.anchor) + shift) % 1.0

    def parameter(self, x: BasePoint) -> float:
        lo, hi = self.box
        return lo + (hi - lo) * self.position(x)


@dataclass(frozen=True)
class BernoulliShift:
    """Two-sided full shift on ``len(values)`` symbols.

    The symbol at time ``n`` of the sequence with seed ``s`` is a fixed
    function of ``(s, n)``, so the shift is invertible without storing
    any sequence.
    """

    values: tuple = (0.12, 0.25)
    max_orbit: int = DEFAULT_MAX_ORBIT

    def __post_init__(self):
        if len(self.values) < 2:
            raise ConfigError("a Bernoulli shift needs at least two symbols")

    @property
    def n_symbols(self) -> int:
        return len(self.values)

    def symbol(self, x: BasePoint) -> int:
        # zig-zag map keeps the spawn key nonnegative for negative times
        t = x.time
        key = 2 * t if t >= 0 else -2 * t - 1
        ss = np.random.SeedSequence(entropy=int(x.anchor), spawn_key=(key,))
        return int(ss.generate_state(1, dtype=np.uint64)[0] % self.n_symbols)

    def parameter(self, x: BasePoint) -> float:
        return float(self.values[self.symbol(x)])


DrivingSystem = Union[CircleRotation, BernoulliShift]


def advance(system: DrivingSystem, x: BasePoint, n: int) -> BasePoint:
    """Return ``theta**n (x)``; negative ``n`` moves backwards."""
    if abs(n) > system.max_orbit or abs(x.time + n) > system.max_orbit:
        raise OrbitOverflowError(f"time index {x.time + n} exceeds the configured orbit length")
    return BasePoint(x.anchor, x.time + int(n))


def parameter_at(system: DrivingSystem, x: BasePoint) -> float:
    return system.parameter(x)


def orbit_parameters(system: DrivingSystem, x: BasePoint, start: int, stop: int) -> np.ndarray:
    """Parameters of the fibers ``theta**j (x)`` for ``start <= j < stop``."""
    return np.array([system.parameter(advance(system, x, j)) for j in range(start, stop)])


def sample_fibers(system: DrivingSystem, n_fibers: int, orbit_len: int, seed: int) -> list:
    """Reproducible sample of base points, each with room for ``orbit_len`` steps."""
    if orbit_len > system.max_orbit:
        raise OrbitOverflowError("requested orbit length exceeds the configured maximum")
    rng = np.random.default_rng(seed)
    if isinstance(system, CircleRotation):
        anchors = rng.random(n_fibers)
        return [BasePoint(float(a), 0) for a in anchors]
    anchors = rng.integers(0, 2**31 - 1, size=n_fibers)
    return [BasePoint(int(a), 0) for a in anchors]


def bin_discrepancy(system: CircleRotation, x: BasePoint, n: int, bins: int = 10) -> float:
    """Largest deviation of orbit bin frequencies from ``1/bins``."""
    times = x.time + np.arange(n, dtype=np.float64)
    pos = (float(x.anchor) + np.fmod(times * system.alpha, 1.0)) % 1.0
    counts = np.bincount(np.minimum((pos * bins).astype(int), bins - 1), minlength=bins)
    return float(np.max(np.abs(counts / n - 1.0 / bins)))


def make_driving(kind: str, **kwargs) -> DrivingSystem:
    if kind == "rotation":
        return CircleRotation(**kwargs)
    if kind == "shift":
        return BernoulliShift(**kwargs)
    raise ConfigError(f"unknown driving kind {kind!r}")
