"""Conformal measures, normalizers and invariant densities along an orbit.

Conformal measures are built by pulling a reference measure back through
the dual operators (normalized at every step), which is the constructive
counterpart of the fixed-point argument.  Invariant densities are limits of
``L_hat^n 1``, with the normalizers ``lambda_x = nu_{theta(x)}(L_x 1)``
taken from the conformal family.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np
from scipy.spatial import cKDTree

from .errors import DegenerateDensityError, FitError
from .fits import GeometricFit, geometric_fit, linear_trend
from .maps import GrowthProfile
from .transfer import FiberChain, GridDensity, GridMeasure, dual_apply, holder_norm


# -- bounded-Lipschitz distance ------------------------------------------------------

BL_TENT_SCALES = (0.25, 0.5, 1.0, 2.0, 4.0)
BL_DIRECTIONS = 16
BL_SPACING = 0.5


def bl_dictionary(points: np.ndarray) -> np.ndarray:
    """Fixed family of test functions, 1-Lipschitz and bounded by 1, at ``points``.

    Tents ``min(s, 1) * max(0, 1 - |z - c| / s)`` with centers on a lattice of
    spacing 0.5 near the points and ramps ``clip(<z, e> - a, -1, 1)`` in 16
    directions.  Rows are test functions, columns are points.
    """
    pts = np.asarray(points, np.complex128)
    lo_x, hi_x = np.floor(pts.real.min()), np.ceil(pts.real.max())
    lo_y, hi_y = np.floor(pts.imag.min()), np.ceil(pts.imag.max())
    gx = np.arange(lo_x, hi_x + BL_SPACING, BL_SPACING)
    gy = np.arange(lo_y, hi_y + BL_SPACING, BL_SPACING)
    centers = (gx[:, None] + 1j * gy[None, :]).ravel()
    # keep centers that can see the support
    near = cKDTree(np.c_[pts.real, pts.imag]).query(np.c_[centers.real, centers.imag])[0] <= max(BL_TENT_SCALES)
    centers = centers[near]
    rows = []
    dist = np.abs(pts[None, :] - centers[:, None])
    for s in BL_TENT_SCALES:
        rows.append(min(s, 1.0) * np.maximum(0.0, 1.0 - dist / s))
    for k in range(BL_DIRECTIONS):
        e = np.exp(-1j * math.pi * k / (BL_DIRECTIONS / 2))
        proj = (pts * e).real
        offsets = np.arange(np.floor(proj.min()), np.ceil(proj.max()) + 1.0, 1.0)
        rows.append(np.clip(proj[None, :] - offsets[:, None], -1.0, 1.0))
    return np.vstack(rows)


def bl_distance(mu: GridMeasure, nu: GridMeasure) -> float:
    """Bounded-Lipschitz distance estimated over :func:`bl_dictionary`."""
    pts = np.concatenate((mu.grid.points, nu.grid.points))
    dic = bl_dictionary(pts)
    n = len(mu.grid)
    diff = dic[:, :n] @ mu.weights - dic[:, n:] @ nu.weights
    mass = abs(mu.mass - nu.mass)
    return float(max(np.max(np.abs(diff)), mass))


# -- conformal measures ------------------------------------------------------------------

@dataclass
class ConformalMeasure:
    measure: GridMeasure
    lambdas: np.ndarray  # lambdas[i] estimates lambda at fiber j + i
    depth: int


def reference_measure(chain: FiberChain, j: int, kind: str = "disk", r0: float = 10.0) -> GridMeasure:
    """Reference measures for pullbacks: ``disk`` (uniform on ``|z| <= r0``) or ``grid``."""
    grid = chain.grid(j)
    if kind == "disk":
        return GridMeasure.uniform(grid, r0)
    if kind == "grid":
        return GridMeasure.uniform(grid)
    if kind == "nearest":
        w = np.zeros(len(grid))
        w[int(np.argmin(np.abs(grid.points)))] = 1.0
        return GridMeasure(grid, w)
    raise ValueError(f"unknown reference kind {kind!r}")


def conformal_measure(chain: FiberChain, j: int, depth: int, reference: Optional[GridMeasure] = None,
                      r0: float = 10.0) -> ConformalMeasure:
    """``Phi_j o ... o Phi_{j+depth-1}`` applied to a reference measure on fiber ``j + depth``."""
    nu = reference_measure(chain, j + depth, "disk", r0) if reference is None else reference
    if nu.grid is not chain.grid(j + depth):
        raise ValueError("reference measure must live on the grid of fiber j + depth")
    lams = np.zeros(depth)
    for i in range(j + depth - 1, j - 1, -1):
        res = dual_apply(chain.operator(i), nu)
        nu, lams[i - j] = res.measure, res.normalizer
    return ConformalMeasure(nu, lams, depth)


def conformal_gauge(chain: FiberChain, j: int, depth: int, step: int = 5, r0: float = 10.0) -> float:
    """Bounded-Lipschitz distance between pullbacks of depth ``depth`` and ``depth + step``."""
    a = conformal_measure(chain, j, depth, r0=r0).measure
    b = conformal_measure(chain, j, depth + step, r0=r0).measure
    return bl_distance(a, b)


def conformality_residual(chain: FiberChain, j: int, nu_x: GridMeasure, nu_next: GridMeasure, lam: float,
                          samples: Sequence[np.ndarray]) -> float:
    """``max |<L g, nu_next> - lam <g, nu_x>| / |g|_inf`` over sample densities."""
    op = chain.operator(j)
    worst = 0.0
    for g in samples:
        g = np.asarray(g, float)
        lhs = nu_next.integrate(op.apply(g))
        rhs = lam * nu_x.integrate(g)
        worst = max(worst, abs(lhs - rhs) / np.max(np.abs(g)))
    return float(worst)


# -- the family along a chain --------------------------------------------------------

@dataclass
class GibbsFamily:
    """Conformal measures, normalizers and invariant densities on a chain.

    ``nus[j]`` is the pullback to fiber ``j`` of the reference placed on
    ``chain.stop``, so its depth is ``chain.stop - j``; ``rhos[j]`` is
    ``L_hat^{j - chain.start} 1``.
    """

    chain: FiberChain
    nus: dict
    lams: dict
    rhos: dict = field(default_factory=dict)
    log: list = field(default_factory=list)

    def depth_nu(self, j: int) -> int:
        return self.chain.stop - j

    def depth_rho(self, j: int) -> int:
        return j - self.chain.start

    def mu(self, j: int) -> GridMeasure:
        return invariant_measure(self.rhos[j], self.nus[j])

    def lambda_ratio(self, js) -> float:
        v = np.array([self.lams[j] for j in js])
        return float(v.max() / v.min())


def build_family(chain: FiberChain, reference: str = "disk", r0: float = 10.0, with_density: bool = True) -> GibbsFamily:
    """One backward pass for ``nu`` and ``lambda``, one forward pass for ``rho``."""
    nu = reference_measure(chain, chain.stop, reference, r0)
    nus, lams = {chain.stop: nu}, {}
    for j in range(chain.stop - 1, chain.start - 1, -1):
        res = dual_apply(chain.operator(j), nu)
        nu = res.measure
        nus[j], lams[j] = nu, res.normalizer
    fam = GibbsFamily(chain, nus, lams)
    if with_density:
        rho = np.ones(len(chain.grid(chain.start)))
        fam.rhos[chain.start] = GridDensity(chain.grid(chain.start), rho)
        for j in range(chain.start, chain.stop):
            rho = chain.operator(j).apply(rho) / lams[j]
            fam.rhos[j + 1] = GridDensity(chain.grid(j + 1), rho)
    return fam


def invariant_measure(rho: GridDensity, nu: GridMeasure) -> GridMeasure:
    """``mu = rho nu``; requires ``int rho dnu = 1`` to ``1e-10``."""
    if np.any(rho.values < 0):
        raise DegenerateDensityError("density has negative values")
    w = rho.values * nu.weights
    if abs(w.sum() - 1.0) > 1e-10:
        raise DegenerateDensityError(f"density integrates to {w.sum()} against nu")
    return GridMeasure(nu.grid, w)


# -- tightness -----------------------------------------------------------------------

@dataclass
class TightnessReport:
    r0: float
    radii: np.ndarray
    inner_mass: np.ndarray  # per fiber nu(|z| <= r0)
    tails: np.ndarray  # per fiber, per radius nu(|z| > R)
    eps_feasible: np.ndarray  # per fiber largest eps with tail <= R^-eps on the grid
    eps_fit: np.ndarray  # per fiber log-log slope of the tail

    @property
    def a_holds(self) -> bool:
        return bool(np.all(self.inner_mass >= 0.5))

    @property
    def b_holds(self) -> bool:
        return bool(np.all(self.eps_feasible > 0))

    @property
    def passed(self) -> bool:
        return self.a_holds and self.b_holds


def tightness_check(measures: Sequence[GridMeasure], r0: float, radii=None) -> TightnessReport:
    """Check ``nu(|z| <= r0) >= 1/2`` and ``nu(|z| > R) <= R^-eps`` for ``R >= r0``."""
    if r0 <= 1.0:
        raise ValueError("r0 must exceed 1 so that R^-eps is informative")
    if radii is None:
        r_top = max(float(np.abs(m.grid.points).max()) for m in measures)
        radii = np.geomspace(r0, max(r_top, 1.01 * r0), 12)
    radii = np.asarray(radii, float)
    inner, tails, feas, fits = [], [], [], []
    for m in measures:
        mod = np.abs(m.grid.points)
        inner.append(float(m.weights[mod <= r0].sum()))
        tail = np.array([m.weights[mod > R].sum() for R in radii])
        tails.append(tail)
        pos = tail > 0
        with np.errstate(divide="ignore"):
            eps_r = np.where(pos, -np.log(np.where(pos, tail, 1.0)) / np.log(radii), np.inf)
        feas.append(float(eps_r.min()))
        if pos.sum() >= 2:
            fits.append(float(-np.polyfit(np.log(radii[pos]), np.log(tail[pos]), 1)[0]))
        else:
            fits.append(np.inf)
    return TightnessReport(r0, radii, np.array(inner), np.array(tails), np.array(feas), np.array(fits))


# -- invariant densities -----------------------------------------------------------------

@dataclass
class DensityResult:
    density: GridDensity
    diffs: np.ndarray  # diffs[k] = |rho^(k+1) - rho^(k)|_beta at the target fiber
    fit: Optional[GeometricFit]
    k_range: tuple

    @property
    def geometric(self) -> bool:
        return self.fit is not None and self.fit.r2 >= 0.9


def density_iterates(chain: FiberChain, j: int, n: int, lams: dict) -> list:
    """``[L_hat^k 1 from fiber j - k, k = 0..n]`` as value arrays on grid ``j``."""
    out = []
    for k in range(n + 1):
        v = np.ones(len(chain.grid(j - k)))
        for i in range(j - k, j):
            v = chain.operator(i).apply(v) / lams[i]
        out.append(v)
    return out


def invariant_density(chain: FiberChain, j: int, n: int, lams: dict, beta: float, delta: float,
                      k_range=(5, 30)) -> DensityResult:
    """``rho^(n) = L_hat^n 1`` started ``n`` fibers back, with its convergence rate."""
    its = density_iterates(chain, j, n, lams)
    grid = chain.grid(j)
    diffs = np.array([holder_norm(GridDensity(grid, its[k + 1] - its[k]), beta, delta).norm for k in range(n)])
    ks = np.arange(n)
    use = (ks >= k_range[0]) & (ks <= k_range[1])
    try:
        fit = geometric_fit(ks[use], diffs[use])
    except FitError:
        fit = None
    return DensityResult(GridDensity(grid, its[n]), diffs, fit, tuple(k_range))


# -- diagnostics --------------------------------------------------------------------------

@dataclass
class UniformBoundReport:
    ns: np.ndarray
    maxima: np.ndarray
    slope: float
    slope_ci: tuple

    @property
    def m_emp(self) -> float:
        return float(self.maxima.max())

    @property
    def passed(self) -> bool:
        return bool(self.slope_ci[0] <= 0.0)


def uniform_bound_check(family: GibbsFamily, starts: Sequence[int], ns) -> UniformBoundReport:
    """``M(n) = max`` over start fibers and grid points of ``L_hat^n 1``; trend test in ``n``."""
    chain = family.chain
    ns = np.asarray(list(ns))
    maxima = np.zeros(ns.size)
    n_top = int(ns.max())
    for s in starts:
        v = np.ones(len(chain.grid(s)))
        for n in range(1, n_top + 1):
            v = chain.operator(s + n - 1).apply(v) / family.lams[s + n - 1]
            hit = np.flatnonzero(ns == n)
            if hit.size:
                maxima[hit] = np.maximum(maxima[hit], v.max())
    tr = linear_trend(ns, maxima)
    return UniformBoundReport(ns, maxima, tr.slope, tr.ci)


@dataclass
class LowerBoundReport:
    radii: np.ndarray
    measured_min: np.ndarray  # fibers x radii
    expression: np.ndarray  # radii
    c_emp: np.ndarray  # per fiber
    a_emp: float
    slope_measured: float
    slope_expression: float

    @property
    def c_spread(self) -> float:
        return float(self.c_emp.max() / self.c_emp.min())

    @property
    def passed(self) -> bool:
        return bool(np.isfinite(self.a_emp) and np.all(self.c_emp > 0) and self.c_spread <= 1.5 / 0.5)


def lower_bound_shape(radii, cfg, growth: GrowthProfile) -> np.ndarray:
    """``R^{-(alpha2 - tau) t} 8 log R r_R^{-tau_hat t}`` with ``r_R = omega^{-1}(8 log R)``."""
    radii = np.asarray(radii, float)
    r_r = growth.omega_inverse(8 * np.log(radii))
    return radii ** (-cfg.decay_exponent) * 8 * np.log(radii) * r_r ** (-cfg.tau_hat * cfg.t)


def lower_bound_diagnostics(family: GibbsFamily, fibers: Sequence[int], radii, growth: GrowthProfile,
                            delta: float) -> LowerBoundReport:
    """Measured ``min L_x 1`` on ``|w| <= R`` against the lower-bound shape, and ``A_emp``."""
    chain = family.chain
    radii = np.asarray(radii, float)
    expr = lower_bound_shape(radii, chain.cfg, growth)
    mins = np.zeros((len(fibers), radii.size))
    a_min = np.inf
    for a, j in enumerate(fibers):
        ones = chain.operator(j).ones_image
        pts = chain.grid(j + 1).points
        for b, R in enumerate(radii):
            inside = np.abs(pts) <= R
            mins[a, b] = ones[inside].min() if inside.any() else np.nan
        grid, nu = chain.grid(j), family.nus[j]
        inside = np.flatnonzero(np.abs(grid.points) <= radii.max())
        for i in inside:
            ball = grid.tree.query_ball_point([grid.points[i].real, grid.points[i].imag], delta)
            a_min = min(a_min, float(nu.weights[ball].sum()))
    c_emp = np.nanmin(mins / expr[None, :], axis=1)
    good = np.all(np.isfinite(mins), axis=0)
    sm = np.polyfit(np.log(radii[good]), np.log(np.nanmin(mins[:, good], axis=0)), 1)[0] if good.sum() >= 2 else np.nan
    se = np.polyfit(np.log(radii), np.log(expr), 1)[0]
    a_emp = 1.0 / a_min if a_min > 0 else np.inf
    return LowerBoundReport(radii, mins, expr, c_emp, a_emp, float(sm), float(se))


def pushforward_defect(family: GibbsFamily, j: int, g: Callable, beta: float, delta: float) -> float:
    """``|int g o f_x dmu_x - int g dmu_{theta(x)}| / |g|_beta`` on the grids."""
    chain = family.chain
    mu_x, mu_next = family.mu(j), family.mu(j + 1)
    fz = chain.fmap(j).value(chain.grid(j).points)
    lhs = mu_x.integrate(g(fz))
    rhs = mu_next.integrate(g(chain.grid(j + 1).points))
    gn = holder_norm(GridDensity(chain.grid(j + 1), g(chain.grid(j + 1).points)), beta, delta).norm
    return float(abs(lhs - rhs) / gn)


def random_holder_samples(points: np.ndarray, n: int, beta: float, seed: int) -> list:
    """Deterministic bounded Holder test functions on ``points``.

    Mixtures of ``|z - c|^beta`` bumps and low-frequency waves, each scaled
    to take values in ``[0.5, 1.5]``.
    """
    rng = np.random.default_rng(seed)
    out = []
    for _ in range(n):
        c = points[rng.integers(points.size)]
        k = rng.normal(scale=0.5, size=2)
        raw = np.cos(k[0] * points.real + k[1] * points.imag + rng.uniform(0, 2 * np.pi))
        raw = raw + rng.uniform(-1, 1) * np.minimum(np.abs(points - c), 4.0) ** beta / 4.0**beta
        span = np.ptp(raw)
        raw = (raw - raw.min()) / span if span > 0 else np.zeros_like(raw)
        out.append(0.5 + raw)
    return out
