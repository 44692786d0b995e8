"""Random Julia sets by backward iteration.

A cloud approximating the Julia set of fiber ``x`` is grown by pulling seed
points in fiber ``theta^n(x)`` back through ``f_{theta^{n-1}(x)}, ..., f_x``
along every inverse branch that stays in a disk and keeps shrinking.  Each
point remembers its parent and branch, so its forward orbit can be replayed.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy import stats
from scipy.spatial import cKDTree

from .errors import EmptyCloudError, FitError
from .maps import FiberMap


def dedup_cells(z: np.ndarray, h: float) -> np.ndarray:
    """Indices of a subset with at most one point per ``h``-cell and gaps ``>= h/2``.

    The first point of each cell survives; neighbours across cell edges
    closer than ``h/2`` are then thinned greedily in input order.
    """
    if z.size == 0:
        return np.zeros(0, dtype=np.int64)
    keys = np.stack([np.floor(z.real / h), np.floor(z.imag / h)], axis=1).astype(np.int64)
    _, first = np.unique(keys, axis=0, return_index=True)
    first = np.sort(first)
    pts = z[first]
    close = cKDTree(np.c_[pts.real, pts.imag]).query_pairs(0.5 * h, output_type="ndarray")
    if close.size == 0:
        return first
    close = close[np.lexsort((close[:, 1], close[:, 0]))]
    keep = np.ones(first.size, dtype=bool)
    for i, j in close:
        if keep[i] and keep[j]:
            keep[j] = False
    return first[keep]


@dataclass
class JuliaCloud:
    """Point cloud in one fiber with its backward-iteration history.

    ``levels[j]`` holds the points produced after ``j`` pullbacks, so the
    cloud itself is ``levels[-1]``; ``parents[j]`` and ``branches[j]``
    (``j >= 1``) link every point to its image in ``levels[j - 1]``.
    """

    r_max: float
    levels: list
    parents: list
    branches: list
    log_derivs: list
    fiber: object = None
    _tree: Optional[cKDTree] = field(default=None, repr=False)

    @property
    def points(self) -> np.ndarray:
        return self.levels[-1]

    @property
    def depth(self) -> int:
        return len(self.levels) - 1

    @property
    def log_deriv(self) -> np.ndarray:
        """``log |(f^n)'(z)|`` for every cloud point."""
        return self.log_derivs[-1]

    @property
    def tree(self) -> cKDTree:
        if self._tree is None:
            self._tree = cKDTree(np.c_[self.points.real, self.points.imag])
        return self._tree

    def __len__(self):
        return self.points.size

    def word(self, i: int) -> tuple:
        """Branch indices used to reach point ``i``, innermost fiber first."""
        out = []
        for j in range(self.depth, 0, -1):
            out.append(int(self.branches[j][i]))
            i = self.parents[j][i]
        return tuple(out)

    def seed_of(self) -> np.ndarray:
        """Index of the seed each cloud point descends from."""
        idx = np.arange(self.points.size)
        for j in range(self.depth, 0, -1):
            idx = self.parents[j][idx]
        return idx

    def forward_residual(self, maps: Sequence[FiberMap]) -> float:
        """Largest distance between ``f^n(z)`` and the seed ``z`` descends from.

        The residual is measured relative to ``1 + |seed|``.
        """
        z = self.points.copy()
        for j in range(self.depth):
            z = maps[j].value(z)
        seeds = self.levels[0][self.seed_of()]
        if z.size == 0:
            return 0.0
        return float(np.max(np.abs(z - seeds) / (1.0 + np.abs(seeds))))

    def rows(self):
        return [(float(z.real), float(z.imag), self.depth, float(d)) for z, d in zip(self.points, self.log_deriv)]


def approximate_julia(
    maps: Sequence[FiberMap],
    depth: int,
    r_max: float,
    seeds,
    shrink: float = 1.05,
    h_dedup: Optional[float] = None,
    fiber=None,
) -> JuliaCloud:
    """Backward iteration from ``seeds`` in fiber ``theta^depth(x)``.

    Parameters
    ----------
    maps : sequence of FiberMap
        ``maps[j]`` is ``f_{theta^j(x)}``; at least ``depth`` entries.
    depth : int
        Number of pullbacks.
    r_max : float
        Points outside the closed disk of this radius are discarded.
    seeds : array_like
        Starting points in the last fiber.
    shrink : float
        Branches must satisfy ``|(f^j)'(z)| >= shrink**j`` at every level.
    h_dedup : float, optional
        Deduplication cell size; defaults to ``r_max / 2000``.

    Raises
    ------
    EmptyCloudError
        If some level has no surviving points.
    """
    if depth < 0 or len(maps) < depth:
        raise ValueError("need one map per pullback level")
    if shrink <= 1.0:
        raise ValueError("shrink factor must exceed 1")
    h = r_max / 2000.0 if h_dedup is None else h_dedup
    pts = np.atleast_1d(np.asarray(seeds, dtype=np.complex128))
    if pts.size == 0:
        raise EmptyCloudError("no seed points")
    levels, parents, branches, logd = [pts], [None], [None], [np.zeros(pts.size)]
    log_shrink = math.log(shrink)
    for lev in range(1, depth + 1):
        fmap = maps[depth - lev]
        w = levels[-1]
        z, src, ks = fmap.all_preimages(w, r_max)
        with np.errstate(divide="ignore"):
            ld = np.log(np.abs(fmap.deriv(z))) + logd[-1][src]
        keep = ld >= lev * log_shrink - 1e-12
        z, src, ks, ld = z[keep], src[keep], ks[keep], ld[keep]
        first = dedup_cells(z, h)
        z, src, ks, ld = z[first], src[first], ks[first], ld[first]
        if z.size == 0:
            raise EmptyCloudError(f"no shrinking preimages survive at level {lev}")
        levels.append(z)
        parents.append(src)
        branches.append(ks)
        logd.append(ld)
    return JuliaCloud(r_max, levels, parents, branches, logd, fiber)


# -- geometry helpers ----------------------------------------------------------

def hausdorff_distance(a: np.ndarray, b: np.ndarray) -> float:
    """Symmetric Hausdorff distance between two finite planar sets."""
    a, b = np.asarray(a, np.complex128), np.asarray(b, np.complex128)
    ta, tb = cKDTree(np.c_[a.real, a.imag]), cKDTree(np.c_[b.real, b.imag])
    d_ab = tb.query(np.c_[a.real, a.imag])[0].max()
    d_ba = ta.query(np.c_[b.real, b.imag])[0].max()
    return float(max(d_ab, d_ba))


def hausdorff_to_circle(points: np.ndarray, radius: float = 1.0, n_probe: int = 20000) -> float:
    """Hausdorff distance from a cloud to the circle ``|z| = radius``.

    The circle side uses ``n_probe`` equally spaced probes; the probe
    spacing is added so the value is an upper bound.
    """
    points = np.asarray(points, np.complex128)
    off = np.max(np.abs(np.abs(points) - radius))
    probes = radius * np.exp(2j * np.pi * np.arange(n_probe) / n_probe)
    tree = cKDTree(np.c_[points.real, points.imag])
    cover = tree.query(np.c_[probes.real, probes.imag])[0].max() + math.pi * radius / n_probe
    return float(max(off, cover))


# -- expansion -----------------------------------------------------------------

@dataclass
class ExpansionFit:
    c: float
    gamma: float
    gamma_ci: tuple
    r2: float
    passed: bool


def expansion_constants(clouds: Sequence[JuliaCloud], level: float = 0.95) -> ExpansionFit:
    """Fit ``min log |(f^n)'| ~ log c + n log gamma`` over clouds of depth ``n``.

    Passes when the confidence band for ``gamma`` lies strictly above 1.
    """
    ns = np.array([c.depth for c in clouds], dtype=float)
    mins = np.array([np.min(c.log_deriv) for c in clouds])
    if ns.size < 2 or np.ptp(ns) == 0 or not np.all(np.isfinite(mins)):
        raise FitError("need finite data at two or more depths")
    fit = stats.linregress(ns, mins)
    if ns.size > 2:
        half = stats.t.ppf(0.5 + level / 2, ns.size - 2) * fit.stderr
    else:
        half = 0.0
    lo, hi = math.exp(fit.slope - half), math.exp(fit.slope + half)
    r2 = fit.rvalue**2 if np.ptp(mins) > 0 else 1.0
    return ExpansionFit(math.exp(fit.intercept), math.exp(fit.slope), (lo, hi), float(r2), bool(lo > 1.0))


def expansion_clouds(maps, depths, r_max, seeds, **kwargs) -> list:
    """Clouds at each requested depth, all ending in the same fiber ``x``.

    ``maps[j]`` is ``f_{theta^j(x)}`` and must cover the largest depth.
    """
    return [approximate_julia(maps, n, r_max, seeds, **kwargs) for n in depths]


# -- mixing --------------------------------------------------------------------

CAP_EXCEEDED = -1


def mixing_time(
    clouds: Sequence[np.ndarray],
    maps: Sequence[FiberMap],
    r: float,
    R: float,
    r_search: float,
    cap: int = 12,
    n_sources: int = 40,
    n_targets: int = 40,
    h_dedup: Optional[float] = None,
) -> int:
    """Smallest ``n`` with ``f_x^n(D(z, r))`` covering ``cloud_n`` inside ``|w| <= R``.

    ``clouds[n]`` is a point cloud in fiber ``theta^n(x)`` and ``maps[j]``
    is ``f_{theta^j(x)}``.  Covering is tested backwards: every sampled
    target must have an ``n``-fold preimage (within ``r_search``) in the
    disk ``D(z, r)`` of every sampled source ``z``.  Cloud points count as
    inside ``|w| <= R`` up to the covering tolerance ``4 h_dedup``.  Returns
    :data:`CAP_EXCEEDED` when no ``n <= cap`` works.
    """
    h = r_search / 2000.0 if h_dedup is None else h_dedup
    R = R + 4 * h
    src = np.asarray(clouds[0], np.complex128)
    src = src[np.abs(src) <= R]
    if src.size == 0:
        raise EmptyCloudError("no source points in the disk")
    src = src[np.linspace(0, src.size - 1, min(n_sources, src.size)).astype(int)]
    for n in range(1, min(cap, len(clouds) - 1, len(maps)) + 1):
        tgt = np.asarray(clouds[n], np.complex128)
        tgt = tgt[np.abs(tgt) <= R]
        if tgt.size == 0:
            continue
        tgt = tgt[np.linspace(0, tgt.size - 1, min(n_targets, tgt.size)).astype(int)]
        covered = True
        for y in tgt:
            pts = np.array([y])
            for j in range(n - 1, -1, -1):
                pts, _, _ = maps[j].all_preimages(pts, r_search)
                pts = pts[dedup_cells(pts, h)]
                if pts.size == 0:
                    break
            if pts.size == 0:
                covered = False
                break
            d = cKDTree(np.c_[pts.real, pts.imag]).query(np.c_[src.real, src.imag])[0]
            if np.any(d >= r):
                covered = False
                break
        if covered:
            return n
    return CAP_EXCEEDED


# -- hyperbolicity margin --------------------------------------------------------

def postsingular_points(maps_before: Sequence[FiberMap], n_max: Optional[int] = None) -> np.ndarray:
    """Forward orbits of singular values landing in fiber ``x``.

    ``maps_before[m]`` is ``f_{theta^{-(m+1)}(x)}``.  The singular values
    of ``f_{theta^{-m}(x)}`` are pushed through the remaining maps.
    """
    m_max = len(maps_before) if n_max is None else min(n_max, len(maps_before))
    out = []
    for m in range(1, m_max + 1):
        vals = np.array(maps_before[m - 1].singular_values(), dtype=np.complex128)
        for j in range(m - 2, -1, -1):
            vals = maps_before[j].value(vals)
        out.append(vals)
    pts = np.concatenate(out) if out else np.zeros(0, np.complex128)
    return pts[np.isfinite(pts)]


def delta0_estimate(cloud_points: np.ndarray, postsingular: np.ndarray, cap: float = 0.25) -> float:
    """Half the distance from the cloud to the postsingular set, capped at ``cap``."""
    if postsingular.size == 0:
        return cap
    tree = cKDTree(np.c_[postsingular.real, postsingular.imag])
    d = tree.query(np.c_[cloud_points.real, cloud_points.imag])[0]
    return float(min(cap, 0.5 * d.min()))
