"""Small regression helpers shared by the diagnostics."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import stats

from .errors import FitError

# Differences below this fraction of the largest one are rounding noise.
FLOAT_FLOOR = 1e-13


@dataclass
class GeometricFit:
    rate: float
    prefactor: float
    r2: float
    n_used: int
    slope_ci: tuple

    @property
    def log_rate(self) -> float:
        return math.log(self.rate)


def geometric_fit(ns, values, floor: float = FLOAT_FLOOR, level: float = 0.95) -> GeometricFit:
    """Fit ``values ~ B * rate**n`` by least squares on ``log values``.

    Entries at or below ``floor * max(values)`` are excluded: once a
    sequence reaches double-precision resolution it stops carrying rate
    information.
    """
    ns = np.asarray(ns, dtype=float)
    v = np.asarray(values, dtype=float)
    if v.size == 0 or not np.all(np.isfinite(v)):
        raise FitError("values must be finite and nonempty")
    top = np.max(np.abs(v))
    use = v > max(floor * top, 1e-300)
    if use.sum() < 3:
        raise FitError("fewer than three values above the floating-point floor")
    x, y = ns[use], np.log(v[use])
    fit = stats.linregress(x, y)
    half = stats.t.ppf(0.5 + level / 2, x.size - 2) * fit.stderr
    r2 = fit.rvalue**2 if np.ptp(y) > 0 else 1.0
    return GeometricFit(math.exp(fit.slope), math.exp(fit.intercept), float(r2), int(use.sum()),
                        (fit.slope - half, fit.slope + half))


@dataclass
class TrendFit:
    slope: float
    ci: tuple

    @property
    def no_upward_trend(self) -> bool:
        return bool(self.ci[0] <= 0.0)


def linear_trend(xs, ys, level: float = 0.95) -> TrendFit:
    """Least-squares slope with a two-sided confidence interval."""
    xs, ys = np.asarray(xs, float), np.asarray(ys, float)
    if xs.size < 3:
        raise FitError("need at least three points for a trend")
    fit = stats.linregress(xs, ys)
    half = stats.t.ppf(0.5 + level / 2, xs.size - 2) * fit.stderr
    return TrendFit(float(fit.slope), (float(fit.slope - half), float(fit.slope + half)))
