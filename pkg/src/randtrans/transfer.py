"""Transfer operators in the ``sigma_tau`` metric on fiber grids.

For a fiber map ``f`` and potential parameters ``(t, tau)`` the operator
acts by

    (L g)(w) = sum over f(z) = w of |f'(z)|_tau^{-t} g(z),
    |f'(z)|_tau = |f'(z)| (1 + |z|)^tau / (1 + |f(z)|)^tau.

Densities live on point grids approximating the fiber Julia sets.  The
operator from the grid of fiber ``j`` to the grid of fiber ``j + 1`` is a
sparse matrix: each target ``w`` contributes one entry per enumerated
branch, placed at the grid point nearest to the preimage.  Preimages
outside the grid support are sent to the grid point nearest to their
radial projection onto the support boundary and are counted separately.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import cached_property
from typing import Optional, Sequence

import numpy as np
from scipy import sparse
from scipy.spatial import cKDTree
from scipy.special import zeta

from .driving import BasePoint, advance
from .errors import ConfigError, DivergenceError, PoleError, SingularValueError, ZeroNormalizerError
from .julia import approximate_julia
from .maps import FamilySpec, FiberMap, repelling_fixed_point


@dataclass(frozen=True)
class PotentialConfig:
    """Potential and truncation parameters.

    Parameters
    ----------
    t : float
        Inverse temperature.
    tau : float
        Metric exponent, ``0 < tau < alpha2``.
    beta : float
        Holder exponent for variations.
    delta : float
        Variation scale.
    k_max : int
        Branch truncation ``|k| <= k_max`` for lattice families.
    eps_tail : float
        Largest admissible truncated-tail budget per grid point.
    alpha1, alpha2, kappa, rho : float
        Growth data of the family (balanced growth and order).
    """

    t: float = 3.0
    tau: float = 0.5
    beta: float = 0.5
    delta: float = 0.25
    k_max: int = 200
    eps_tail: float = 0.05
    alpha1: float = 0.0
    alpha2: float = 1.0
    kappa: float = 2.0
    rho: float = 1.0

    def __post_init__(self):
        if not 0.0 < self.tau < self.alpha2:
            raise ConfigError("tau must lie in (0, alpha2)")
        if not 0.0 < self.beta <= 1.0:
            raise ConfigError("beta must lie in (0, 1]")
        if self.delta <= 0 or self.k_max < 1 or self.eps_tail <= 0:
            raise ConfigError("delta, k_max and eps_tail must be positive")
        if self.t * self.tau_hat <= self.rho:
            raise ConfigError(f"need t * tau_hat > rho; got {self.t * self.tau_hat} <= {self.rho}")
        if self.t <= self.rho / (self.alpha1 + self.alpha2):
            raise ConfigError("need t > rho / alpha")

    @property
    def tau_hat(self) -> float:
        return self.alpha1 + self.tau

    @property
    def decay_exponent(self) -> float:
        """Predicted decay exponent ``(alpha2 - tau) t`` of ``L 1``."""
        return (self.alpha2 - self.tau) * self.t

    @classmethod
    def for_family(cls, family: FamilySpec, **kwargs) -> "PotentialConfig":
        md = dict(alpha1=family.alpha1, alpha2=family.alpha2, kappa=family.kappa, rho=family.growth.rho)
        md.update(kwargs)
        return cls(**md)


# -- pointwise quantities --------------------------------------------------------

def sigma_tau_deriv(fmap: FiberMap, z, tau: float):
    """``|f'(z)|_tau = |f'(z)| ((1 + |z|) / (1 + |f(z)|))**tau``."""
    scalar = np.ndim(z) == 0
    z = np.asarray(z, dtype=np.complex128)
    fmap.check_regular(z)
    d = np.abs(fmap.deriv(z))
    if np.any(d == 0.0):
        raise SingularValueError("derivative vanishes at a critical point")
    fz = fmap.value(z)
    if not np.all(np.isfinite(fz)):
        raise PoleError("point is a pole")
    out = d * ((1.0 + np.abs(z)) / (1.0 + np.abs(fz))) ** tau
    return float(out) if scalar else out


def branch_weights(fmap: FiberMap, z: np.ndarray, w: np.ndarray, cfg: PotentialConfig) -> np.ndarray:
    """``|f'(z)|_tau^{-t}`` for preimages ``z`` of targets ``w`` (broadcast)."""
    d = np.abs(fmap.deriv(z))
    return d ** (-cfg.t) * ((1.0 + np.abs(w)) / (1.0 + np.abs(z))) ** (cfg.tau * cfg.t)


def _hurwitz_tail(fmap: FiberMap, w, cfg: PotentialConfig, k_max: int):
    """Closed-form bound of the omitted branch mass for lattice families.

    Branches with ``|k| > k_max`` satisfy ``|z_k| >= |p| (|k| - 1/2)``, so
    their ``|z|^{-s}`` sum is at most ``2 |p|^{-s} zeta(s, k_max + 1/2)``.
    """
    s = cfg.tau_hat * cfg.t
    p = abs(fmap.lattice_period)
    lattice = 2.0 * p ** (-s) * zeta(s, k_max + 0.5)
    return cfg.kappa**cfg.t * (1.0 + np.abs(w)) ** (-cfg.decay_exponent) * lattice


def truncated_tail_bound(fmap: FiberMap, w, cfg: PotentialConfig, k_max: Optional[int] = None) -> float:
    """Upper bound for ``L 1(w)`` restricted to branches with ``|k| > k_max``.

    ``kappa^t (1 + |w|)^{-(alpha2 - tau) t}`` times the preimage tail sum
    over ``|z| > |p| (k_max + 1/2)`` with exponent ``tau_hat t``.
    """
    from .nevanlinna import tail_sum

    k_max = cfg.k_max if k_max is None else k_max
    s = cfg.tau_hat * cfg.t
    if s <= cfg.rho:
        raise DivergenceError("tau_hat * t must exceed the order")
    if fmap.lattice_period is None:
        return 0.0
    R = abs(fmap.lattice_period) * (k_max + 0.5)
    tail = tail_sum(fmap, w, s, R, rho=cfg.rho).value
    return float(cfg.kappa**cfg.t * (1.0 + abs(w)) ** (-cfg.decay_exponent) * tail)


def transfer_one(fmap: FiberMap, w, cfg: PotentialConfig, k_max: Optional[int] = None) -> float:
    """``L 1(w)`` at an arbitrary target by direct branch summation."""
    w = complex(w)
    fmap.check_target(w)
    if fmap.lattice_period is not None:
        k_max = cfg.k_max if k_max is None else k_max
        ks = np.arange(-k_max, k_max + 1)
    else:
        ks = np.asarray(fmap.finite_branches)
    z = fmap.preimages(np.complex128(w), ks)
    return float(math.fsum(branch_weights(fmap, z, np.complex128(w), cfg)))


# -- grids, densities, measures --------------------------------------------------

class FiberGrid:
    """Points of one fiber with nearest-neighbour lookup."""

    def __init__(self, points, index: int = 0, r_max: float = np.inf, h: float = 0.05):
        self.points = np.ascontiguousarray(np.asarray(points, dtype=np.complex128))
        self.index = index
        self.r_max = float(r_max)
        self.h = float(h)
        self._pairs = {}

    def __len__(self):
        return self.points.size

    @cached_property
    def tree(self) -> cKDTree:
        return cKDTree(np.c_[self.points.real, self.points.imag])

    @cached_property
    def _boundary_table(self):
        n_bins = max(8, int(math.ceil(2 * math.pi * self.r_max / self.h)))
        ang = 2 * np.pi * (np.arange(n_bins) + 0.5) / n_bins
        probes = self.r_max * np.exp(1j * ang)
        return n_bins, self.tree.query(np.c_[probes.real, probes.imag])[1]

    def nearest(self, z: np.ndarray) -> tuple:
        """Nearest grid index for each ``z`` and a mask of out-of-support points.

        Points outside the closed disk of radius ``r_max`` are projected
        radially onto its boundary first.
        """
        z = np.asarray(z, dtype=np.complex128).ravel()
        out = np.abs(z) > self.r_max
        idx = np.empty(z.size, dtype=np.int64)
        inside = ~out
        if inside.any():
            idx[inside] = self.tree.query(np.c_[z[inside].real, z[inside].imag])[1]
        if out.any():
            n_bins, table = self._boundary_table
            a = np.mod(np.angle(z[out]), 2 * np.pi)
            idx[out] = table[np.minimum((a / (2 * np.pi) * n_bins).astype(np.int64), n_bins - 1)]
        return idx, out

    def pairs(self, delta: float) -> np.ndarray:
        """Index pairs ``i < j`` with ``0 < |z_i - z_j| <= delta`` (cached)."""
        if delta not in self._pairs:
            p = self.tree.query_pairs(delta, output_type="ndarray")
            if p.size:
                p = p[np.lexsort((p[:, 1], p[:, 0]))]
                d = np.abs(self.points[p[:, 0]] - self.points[p[:, 1]])
                p = p[d > 0]
            self._pairs[delta] = p.reshape(-1, 2)
        return self._pairs[delta]


@dataclass
class GridDensity:
    grid: FiberGrid
    values: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.shape != (len(self.grid),):
            raise ValueError("values do not match the grid")
        if not np.all(np.isfinite(self.values)):
            raise ValueError("density values must be finite")

    @classmethod
    def constant(cls, grid: FiberGrid, c: float = 1.0) -> "GridDensity":
        return cls(grid, np.full(len(grid), float(c)))

    def rows(self):
        return [(float(z.real), float(z.imag), float(v)) for z, v in zip(self.grid.points, self.values)]


@dataclass
class GridMeasure:
    grid: FiberGrid
    weights: np.ndarray

    def __post_init__(self):
        self.weights = np.asarray(self.weights, dtype=float)
        if self.weights.shape != (len(self.grid),):
            raise ValueError("weights do not match the grid")
        if np.any(self.weights < 0):
            raise ValueError("measure weights must be nonnegative")

    @property
    def mass(self) -> float:
        return float(math.fsum(self.weights))

    def integrate(self, values) -> float:
        return float(np.dot(self.weights, np.asarray(values, dtype=float)))

    def normalized(self) -> "GridMeasure":
        m = self.mass
        if m <= 0:
            raise ZeroNormalizerError("measure has zero mass")
        return GridMeasure(self.grid, self.weights / m)

    @classmethod
    def uniform(cls, grid: FiberGrid, radius: float = np.inf) -> "GridMeasure":
        w = (np.abs(grid.points) <= radius).astype(float)
        if w.sum() == 0:
            raise ZeroNormalizerError("no grid points inside the reference disk")
        return cls(grid, w / w.sum())

    def rows(self):
        return [(float(z.real), float(z.imag), float(v)) for z, v in zip(self.grid.points, self.weights)]


# -- the operator ----------------------------------------------------------------

@dataclass
class FiberOperator:
    """``L_x`` from ``src`` (grid of ``x``) to ``dst`` (grid of ``theta(x)``).

    ``matrix[i, j]`` is the total branch weight sent from source point ``j``
    to target point ``i``; ``tail[i]`` bounds the omitted branch mass at
    target ``i``; ``outside[i]`` is the weight of branches whose preimage
    left the grid support.
    """

    fmap: FiberMap
    src: FiberGrid
    dst: FiberGrid
    matrix: sparse.csr_matrix
    tail: np.ndarray
    outside: np.ndarray
    cfg: PotentialConfig

    def apply(self, values: np.ndarray) -> np.ndarray:
        return self.matrix @ values

    def dual(self, weights: np.ndarray) -> np.ndarray:
        return self.matrix.T @ weights

    @cached_property
    def ones_image(self) -> np.ndarray:
        """``L 1`` on the target grid (row sums)."""
        return np.asarray(self.matrix.sum(axis=1)).ravel()

    @property
    def tail_budget(self) -> float:
        return float(self.tail.max()) if self.tail.size else 0.0


def build_operator(fmap: FiberMap, src: FiberGrid, dst: FiberGrid, cfg: PotentialConfig,
                   k_max: Optional[int] = None) -> FiberOperator:
    """Assemble the sparse transfer matrix between two grids."""
    w = dst.points
    if fmap.lattice_period is not None:
        k_max = cfg.k_max if k_max is None else k_max
        ks = np.arange(-k_max, k_max + 1)
        z = fmap.preimages(w, ks)
        tail = _hurwitz_tail(fmap, w, cfg, k_max)
    else:
        ks = np.asarray(fmap.finite_branches)
        z = fmap.preimages(w, ks).reshape(w.size, ks.size)
        tail = np.zeros(w.size)
    wt = branch_weights(fmap, z, w[:, None], cfg)
    cols, out = src.nearest(z)
    rows = np.repeat(np.arange(w.size), z.shape[1])
    flat = wt.ravel()
    mat = sparse.csr_matrix((flat, (rows, cols)), shape=(w.size, len(src)))
    mat.sum_duplicates()
    mat.sort_indices()
    outside = np.bincount(rows[out], weights=flat[out], minlength=w.size)
    if tail.size and tail.max() > cfg.eps_tail:
        raise ConfigError(f"truncated tail budget {tail.max():.3g} exceeds eps_tail; increase k_max")
    return FiberOperator(fmap, src, dst, mat, tail, outside, cfg)


def apply_transfer(op: FiberOperator, g: GridDensity) -> GridDensity:
    if g.grid is not op.src:
        raise ValueError("density lives on an unregistered grid")
    return GridDensity(op.dst, op.apply(g.values))


def normalized_apply(op: FiberOperator, g: GridDensity, lam: float) -> GridDensity:
    """``lam^{-1} L g``."""
    if not lam > 0:
        raise ValueError("normalizer must be positive")
    return GridDensity(op.dst, op.apply(g.values) / lam)


@dataclass
class DualResult:
    measure: GridMeasure
    normalizer: float
    raw: np.ndarray


def dual_apply(op: FiberOperator, nu: GridMeasure) -> DualResult:
    """Pull ``nu`` back: ``L* nu / nu(L 1)``; the normalizer estimates ``lambda_x``."""
    if nu.grid is not op.dst:
        raise ValueError("measure lives on an unregistered grid")
    if nu.mass <= 0:
        raise ZeroNormalizerError("measure has zero mass")
    raw = op.dual(nu.weights)
    lam = float(math.fsum(raw))
    if lam <= 0:
        raise ZeroNormalizerError("pulled-back measure has zero mass")
    return DualResult(GridMeasure(op.src, raw / lam), lam, raw)


# -- Holder norms ----------------------------------------------------------------

@dataclass
class HolderNorm:
    sup: float
    v_beta: float
    norm: float
    sparse: bool = False


def holder_norm(g: GridDensity, beta: float, delta: float) -> HolderNorm:
    """Sup norm, ``beta``-variation over pairs within ``delta``, and their sum."""
    sup = float(np.max(np.abs(g.values))) if g.values.size else 0.0
    pairs = g.grid.pairs(delta)
    if pairs.shape[0] == 0:
        return HolderNorm(sup, 0.0, sup, True)
    pts = g.grid.points
    d = np.abs(pts[pairs[:, 0]] - pts[pairs[:, 1]])
    var = np.abs(g.values[pairs[:, 0]] - g.values[pairs[:, 1]]) / d**beta
    v = float(var.max())
    return HolderNorm(sup, v, v + sup, False)


# -- orbits of grids ---------------------------------------------------------------

@dataclass(frozen=True)
class GridGeometry:
    """Resolution of the fiber grids.

    ``r_max`` is the support radius, ``h`` the deduplication cell size and
    ``depth0`` the number of pullbacks used before the first stored grid.
    """

    r_max: float = 30.0
    h: float = 0.05
    depth0: int = 8
    shrink: float = 1.05


class FiberChain:
    """Grids and operators for fibers ``theta^j(x)``, ``start <= j <= stop``.

    All grids come from a single backward pullback of ``seeds`` placed in
    fiber ``stop + depth0``, so each grid point is an exact preimage of a
    point of the next grid.
    """

    def __init__(self, system, family: FamilySpec, x: BasePoint, start: int, stop: int,
                 cfg: PotentialConfig, geometry: GridGeometry = GridGeometry(), seeds=None,
                 cache: bool = True):
        if stop <= start:
            raise ValueError("need stop > start")
        self.system, self.family, self.x = system, family, x
        self.start, self.stop = start, stop
        self.cfg, self.geometry = cfg, geometry
        self.cache = cache
        end = stop + geometry.depth0
        self._maps = {j: family.make(system.parameter(advance(system, x, j))) for j in range(start, end + 1)}
        if seeds is None:
            q = repelling_fixed_point(self._maps[end])
            if q is None:
                raise ConfigError("no default seed for this family; pass seeds explicitly")
            seeds = [q]
        maps = [self._maps[j] for j in range(start, end)]
        cloud = approximate_julia(maps, end - start, geometry.r_max, seeds, shrink=geometry.shrink,
                                  h_dedup=geometry.h)
        self.cloud = cloud
        self._grids = {j: FiberGrid(cloud.levels[end - j], j, geometry.r_max, geometry.h)
                       for j in range(start, stop + 1)}
        self._ops = {}

    def fmap(self, j: int) -> FiberMap:
        return self._maps[j]

    def grid(self, j: int) -> FiberGrid:
        return self._grids[j]

    def operator(self, j: int) -> FiberOperator:
        """``L_{theta^j(x)}`` from grid ``j`` to grid ``j + 1``."""
        if not self.start <= j < self.stop:
            raise KeyError(f"no operator for fiber {j}")
        if j in self._ops:
            return self._ops[j]
        op = build_operator(self._maps[j], self._grids[j], self._grids[j + 1], self.cfg)
        if self.cache:
            self._ops[j] = op
        return op

    def push(self, j: int, n: int, values: np.ndarray, lams: Optional[Sequence[float]] = None) -> np.ndarray:
        """``L^n`` (or the normalized version with ``lams``) from fiber ``j`` to ``j + n``."""
        v = np.asarray(values, dtype=float)
        for i in range(n):
            v = self.operator(j + i).apply(v)
            if lams is not None:
                v = v / lams[i]
        return v


# -- operator diagnostics ----------------------------------------------------------

@dataclass
class DecayReport:
    radii: np.ndarray
    values: np.ndarray  # shape (fibers, samples)
    exponent: float
    predicted: float
    envelope: float
    r2: float

    @property
    def rel_error(self) -> float:
        return abs(self.exponent - self.predicted) / self.predicted

    @property
    def passed(self) -> bool:
        return bool(np.isfinite(self.envelope) and self.rel_error <= 0.15)


def operator_sup_bound_check(maps: Sequence[FiberMap], cfg: PotentialConfig, w_samples) -> DecayReport:
    """Fit ``L_x 1(w) ~ C (1 + |w|)^{-e}`` over fibers and targets.

    The exponent ``e`` is the negated least-squares slope of
    ``log L 1`` against ``log(1 + |w|)``; the envelope constant is the
    smallest ``C`` dominating every value with the predicted exponent.
    """
    w = np.asarray(w_samples, dtype=np.complex128)
    vals = np.array([[transfer_one(f, wi, cfg) for wi in w] for f in maps])
    x = np.tile(np.log1p(np.abs(w)), len(maps))
    y = np.log(vals.ravel())
    slope, intercept = np.polyfit(x, y, 1)
    resid = y - (slope * x + intercept)
    r2 = 1.0 - resid.var() / y.var()
    env = float(np.max(vals * (1 + np.abs(w)) ** cfg.decay_exponent))
    return DecayReport(np.abs(w), vals, float(-slope), cfg.decay_exponent, env, float(r2))


@dataclass
class DistortionReport:
    ns: tuple
    k_fit: np.ndarray

    @property
    def spread(self) -> float:
        k = self.k_fit
        return float((k.max() - k.min()) / k.max()) if k.max() > 0 else 0.0

    @property
    def passed(self) -> bool:
        return bool(np.all(np.isfinite(self.k_fit)) and self.spread <= 0.2)


def distortion_constant(values: np.ndarray, grid: FiberGrid, delta: float, min_distance: float = 0.0) -> float:
    """``max (v(w1) / v(w2) - 1) / |w1 - w2|`` over grid pairs at distance in ``[min_distance, delta]``."""
    pairs = grid.pairs(delta)
    if pairs.shape[0] == 0:
        return 0.0
    a, b = values[pairs[:, 0]], values[pairs[:, 1]]
    d = np.abs(grid.points[pairs[:, 0]] - grid.points[pairs[:, 1]])
    use = d >= min_distance
    if not use.any():
        return 0.0
    ratio = np.maximum(a / b, b / a)
    return float(np.max((ratio[use] - 1.0) / d[use]))


def distortion_check(chains: Sequence[FiberChain], delta: float, ns=(1, 2, 4, 8),
                     min_distance: float = 0.1) -> DistortionReport:
    """Distortion constant of ``L_x^n 1`` for each ``n``, maximised over chains.

    Every chain contributes its fiber ``start`` as ``x``.  Pairs closer
    than ``min_distance`` are skipped: at that scale the ratio is dominated
    by the nearest-neighbour interpolation error, not by distortion.
    """
    ks = []
    for n in ns:
        best = 0.0
        for ch in chains:
            v = ch.push(ch.start, n, np.ones(len(ch.grid(ch.start))))
            best = max(best, distortion_constant(v, ch.grid(ch.start + n), delta, min_distance))
        ks.append(best)
    return DistortionReport(tuple(ns), np.array(ks))


def branch_contraction(chain: FiberChain, j: int, n: int, delta: float, beta: float) -> float:
    """Largest ``(|z1 - z2| / |w1 - w2|)^beta`` over paired inverse branches of ``f^n``.

    Pairs ``(w1, w2)`` within ``delta`` on grid ``j + n`` are pulled back
    ``n`` times along the same branch index at every step.
    """
    grid = chain.grid(j + n)
    pairs = grid.pairs(delta)
    if pairs.shape[0] == 0:
        return 0.0
    w1, w2 = grid.points[pairs[:, 0]], grid.points[pairs[:, 1]]
    d0 = np.abs(w1 - w2)
    z1, z2 = w1, w2
    for i in range(n - 1, -1, -1):
        f = chain.fmap(j + i)
        if f.lattice_period is not None:
            # the nearest lattice branch keeps the pair inside one inverse branch
            c1, c2 = f.preimage_base(z1), f.preimage_base(z2)
            shift = np.round(((c1 - c2) / f.lattice_period).real)
            z1, z2 = c1, c2 + shift * f.lattice_period
        else:
            b = np.asarray(f.finite_branches)[:1]
            z1 = f.preimages(z1, b).ravel()
            z2 = f.preimages(z2, b).ravel()
            flip = np.abs(z1 + z2) < np.abs(z1 - z2)
            z2 = np.where(flip, -z2, z2)
    return float(np.max((np.abs(z1 - z2) / d0) ** beta))


@dataclass
class TwoNormReport:
    ns: np.ndarray
    margins: np.ndarray  # shape (samples, len(ns))
    coefficients: np.ndarray
    decay_fit: float
    decay_predicted: float

    @property
    def min_margin(self) -> float:
        return float(self.margins.min())

    @property
    def decay_rel_error(self) -> float:
        return abs(self.decay_fit - self.decay_predicted) / self.decay_predicted

    @property
    def passed(self) -> bool:
        return bool(self.min_margin >= 0 and self.decay_rel_error <= 0.2)


def two_norm_check(chain: FiberChain, samples: Sequence[np.ndarray], ns, K: float, c: float, gamma: float,
                   delta: float, beta: float) -> TwoNormReport:
    """Check ``v(L^n g) <= |L^n|_inf (|g|_inf + K (c gamma^n)^{-beta} v(g))``.

    Also fits the decay rate of the measured branch contraction that
    drives the variation coefficient and compares it with ``beta log gamma``.
    """
    j = chain.start
    g0 = chain.grid(j)
    ns = np.asarray(ns)
    margins = np.zeros((len(samples), ns.size))
    for a, vals in enumerate(samples):
        hn = holder_norm(GridDensity(g0, vals), beta, delta)
        for b, n in enumerate(ns):
            img = chain.push(j, int(n), vals)
            one = chain.push(j, int(n), np.ones(len(g0)))
            lhs = holder_norm(GridDensity(chain.grid(j + int(n)), img), beta, delta).v_beta
            rhs = one.max() * (hn.sup + K * (c * gamma**n) ** (-beta) * hn.v_beta)
            margins[a, b] = rhs - lhs
    coef = np.array([branch_contraction(chain, j, int(n), delta, beta) for n in ns])
    slope = -np.polyfit(ns, np.log(coef), 1)[0]
    return TwoNormReport(ns, margins, coef, float(slope), beta * math.log(gamma))
