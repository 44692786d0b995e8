"""Decay of correlations and central limit diagnostics.

Correlations are computed through the transfer operator,
``int (g o f^n) h dmu_x = int g L_hat^n(h rho_x) dnu_{theta^n x}``.
The independent oracle is trajectory sampling with the grid kernel

    Q_x(i -> w) = nu_{theta x}(w) L_x[w, i] / (L_x^* nu_{theta x})(i),

which is the forward dynamics on the grid written as a Markov chain.  Its
transition law is exactly dual to the discretized operator, so trajectory
averages and operator values estimate the same number by different routes.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np
from scipy import sparse
from scipy import stats as sps

from .errors import DegenerateDensityError, FitError, InsufficientSamplesError
from .fits import GeometricFit, geometric_fit
from .gibbs import GibbsFamily
from .transfer import GridDensity

Observable = Callable[[np.ndarray], np.ndarray]


def centered(family: GibbsFamily, j: int, h: Observable) -> np.ndarray:
    """``h - mu_j(h)`` on the grid of fiber ``j``."""
    v = np.asarray(h(family.chain.grid(j).points), dtype=float)
    return v - family.mu(j).integrate(v)


# -- operator correlations ---------------------------------------------------------

@dataclass
class CorrelationReport:
    ns: np.ndarray
    values: np.ndarray
    signed: np.ndarray
    per_fiber: np.ndarray
    fit: Optional[GeometricFit]
    pairing: tuple = (math.inf, 1.0)

    @property
    def theta(self) -> float:
        return self.fit.rate if self.fit is not None else math.nan

    def rows(self):
        pred = (self.fit.prefactor * self.fit.rate**self.ns) if self.fit is not None else np.full(self.ns.size, np.nan)
        return [(int(n), float(v), float(v - p)) for n, v, p in zip(self.ns, self.values, pred)]


def correlation(family: GibbsFamily, fibers: Sequence[int], g: Observable, h: Observable, ns,
                fit_from: int = 1) -> CorrelationReport:
    """Fiber-averaged ``int (g o f^n) h dmu`` with ``h`` centered on each fiber.

    The fit ``b theta^n`` uses the absolute averaged values at ``n >= fit_from``.
    """
    chain = family.chain
    ns = np.asarray(sorted(ns))
    per = np.zeros((len(fibers), ns.size))
    for a, j in enumerate(fibers):
        v = centered(family, j, h) * family.rhos[j].values
        done = 0
        for b, n in enumerate(ns):
            for i in range(j + done, j + n):
                v = chain.operator(i).apply(v) / family.lams[i]
            done = int(n)
            gv = g(chain.grid(j + n).points)
            per[a, b] = family.nus[j + n].integrate(gv * v)
    signed = per.mean(axis=0)
    vals = np.abs(signed)
    use = ns >= fit_from
    try:
        fit = geometric_fit(ns[use], vals[use])
    except FitError:
        fit = None
    return CorrelationReport(ns, vals, signed, per, fit)


# -- the grid Markov kernel ---------------------------------------------------------

@dataclass
class GridKernel:
    """Row-stochastic kernel in CSR form with a per-row cumulative table."""

    matrix: sparse.csr_matrix
    cum: np.ndarray = field(init=False)
    row_mass: np.ndarray = field(init=False)

    def __post_init__(self):
        m = self.matrix
        self.cum = np.cumsum(m.data)
        starts = np.concatenate([[0.0], self.cum])[m.indptr[:-1]]
        ends = np.concatenate([[0.0], self.cum])[m.indptr[1:]]
        self.row_mass = ends - starts

    def sample(self, states: np.ndarray, rng: np.random.Generator) -> np.ndarray:
        """Next states; rows without mass return ``-1``."""
        m = self.matrix
        lo, hi = m.indptr[states], m.indptr[states + 1]
        base = np.where(lo > 0, self.cum[np.maximum(lo - 1, 0)], 0.0)
        target = base + rng.random(states.size) * self.row_mass[states]
        pos = np.searchsorted(self.cum, target, side="right")
        pos = np.clip(pos, lo, np.maximum(hi - 1, lo))
        out = m.indices[np.minimum(pos, m.indices.size - 1)].astype(np.int64)
        out[hi == lo] = -1
        return out


def q_kernel(family: GibbsFamily, j: int) -> GridKernel:
    """Forward kernel from grid ``j`` to grid ``j + 1``."""
    L = family.chain.operator(j).matrix
    W = sparse.diags(family.nus[j + 1].weights) @ L
    return GridKernel(sparse.csr_matrix(W.T))


def _draw(p: np.ndarray, size: int, rng: np.random.Generator) -> np.ndarray:
    c = np.cumsum(p)
    return np.minimum(np.searchsorted(c, rng.random(size) * c[-1], side="right"), p.size - 1)


@dataclass
class McCorrelation:
    ns: np.ndarray
    mean: np.ndarray
    stderr: np.ndarray
    n_traj: int

    def z_scores(self, reference) -> np.ndarray:
        return np.abs(self.mean - np.asarray(reference)) / self.stderr


def mc_correlation(family: GibbsFamily, fibers: Sequence[int], g: Observable, h: Observable, ns,
                   n_traj: int = 100_000, seed: int = 0) -> McCorrelation:
    """Trajectory estimate of the fiber-averaged correlations, equal share per fiber."""
    rng = np.random.default_rng(seed)
    ns = np.asarray(sorted(ns))
    per = n_traj // len(fibers)
    if per < 2:
        raise InsufficientSamplesError("need at least two trajectories per fiber")
    prods = np.zeros((len(fibers) * per, ns.size))
    for a, j in enumerate(fibers):
        hc = centered(family, j, h)
        x = _draw(family.mu(j).weights, per, rng)
        h0 = hc[x]
        b = 0
        for step in range(int(ns.max()) + 1):
            if step == ns[b]:
                prods[a * per:(a + 1) * per, b] = h0 * g(family.chain.grid(j + step).points)[x]
                b += 1
                if b == ns.size:
                    break
            x = q_kernel(family, j + step).sample(x, rng)
    n = prods.shape[0]
    return McCorrelation(ns, prods.mean(axis=0), prods.std(axis=0, ddof=1) / math.sqrt(n), n)


# -- asymptotic variance -----------------------------------------------------------------

@dataclass
class GreenKubo:
    var0: float
    terms: np.ndarray
    k_trunc: int
    sigma2: float
    sigma2_doubled: float

    @property
    def stability(self) -> float:
        return abs(self.sigma2_doubled / self.sigma2 - 1.0) if self.sigma2 > 0 else math.inf

    @property
    def stable(self) -> bool:
        return self.stability <= 0.05


def green_kubo(family: GibbsFamily, fibers: Sequence[int], psi: Observable, tol: float = 1e-4,
               k_cap: int = 100) -> GreenKubo:
    """``sigma^2 = Var_0 + 2 sum_{k <= k_max} corr_k``, truncated once ``|corr_k| < tol``.

    The doubled truncation is reported alongside for the stability check.
    """
    k_cap = min(k_cap, family.chain.stop - max(fibers))
    rep = correlation(family, fibers, psi, psi, range(0, k_cap + 1))
    c = rep.signed
    small = np.flatnonzero(np.abs(c[1:]) < tol)
    k_trunc = int(small[0]) + 1 if small.size else k_cap
    k2 = min(2 * k_trunc, k_cap)
    s1 = c[0] + 2 * math.fsum(c[1:k_trunc + 1])
    s2 = c[0] + 2 * math.fsum(c[1:k2 + 1])
    return GreenKubo(float(c[0]), c, k_trunc, float(s1), float(s2))


# -- central limit theorem ---------------------------------------------------------------

COBOUNDARY_TOL = 1e-10


@dataclass
class CltReport:
    n: int
    samples: int
    sigma2: float
    ks_stat: float
    p_value: float
    hist_counts: np.ndarray
    hist_edges: np.ndarray
    scaled: np.ndarray
    coboundary: bool = False
    resampled: int = 0

    @property
    def passed(self) -> bool:
        return (not self.coboundary) and self.p_value > 0.01

    def quantile_rows(self, n_q: int = 99):
        qs = np.arange(1, n_q + 1) / (n_q + 1)
        emp = np.quantile(self.scaled, qs)
        ref = sps.norm.ppf(qs, scale=math.sqrt(max(self.sigma2, 0.0)))
        return [(float(q), float(e), float(r)) for q, e, r in zip(qs, emp, ref)]


def clt_report(sums: np.ndarray, n: int, sigma2: float, resampled: int = 0, bins: int = 40) -> CltReport:
    """KS test of ``S_n / sqrt(n)`` against ``Normal(0, sigma2)``."""
    if sums.size < 500:
        raise InsufficientSamplesError("the CLT diagnostic needs at least 500 samples")
    scaled = sums / math.sqrt(n)
    counts, edges = np.histogram(scaled, bins=bins)
    if sigma2 <= COBOUNDARY_TOL:
        return CltReport(n, sums.size, max(sigma2, 0.0), math.nan, math.nan, counts, edges, scaled, True, resampled)
    ks = sps.kstest(scaled, "norm", args=(0.0, math.sqrt(sigma2)))
    return CltReport(n, sums.size, sigma2, float(ks.statistic), float(ks.pvalue), counts, edges, scaled,
                     False, resampled)


def birkhoff_sums(family: GibbsFamily, starts: Sequence[int], psi: Observable, n: int, samples: int,
                  seed: int = 0) -> tuple:
    """``S_n psi`` along grid trajectories started from ``mu`` on the given fibers.

    Start fibers are assigned round-robin, which samples the base along the
    orbit (the annealed setting).  Returns ``(sums, resampled)``; a
    trajectory reaching a grid point without forward mass is redrawn from
    ``mu`` on that fiber and counted.
    """
    rng = np.random.default_rng(seed)
    starts = np.asarray(starts)
    s_of = starts[np.arange(samples) % starts.size]
    lo, hi = int(s_of.min()), int(s_of.max()) + n
    if hi > family.chain.stop:
        raise ValueError("trajectories run past the end of the chain")
    state = np.full(samples, -1, dtype=np.int64)
    sums = np.zeros(samples)
    resampled = 0
    for j in range(lo, hi):
        born = np.flatnonzero(s_of == j)
        active = (s_of <= j) & (j < s_of + n)
        if born.size or active.any():
            mu = family.mu(j)
            if born.size:
                state[born] = _draw(mu.weights, born.size, rng)
            idx = np.flatnonzero(active)
            psi_j = np.asarray(psi(family.chain.grid(j).points), float)
            psi_j = psi_j - mu.integrate(psi_j)
            sums[idx] += psi_j[state[idx]]
            moving = idx[j + 1 < s_of[idx] + n]
            if moving.size:
                nxt = q_kernel(family, j).sample(state[moving], rng)
                dead = nxt < 0
                if dead.any():
                    resampled += int(dead.sum())
                    nxt[dead] = _draw(family.mu(j + 1).weights, int(dead.sum()), rng)
                state[moving] = nxt
    return sums, resampled


def birkhoff_clt(family: GibbsFamily, starts: Sequence[int], psi: Observable, n: int = 2000,
                 samples: int = 5000, seed: int = 0, gk_fibers: Optional[Sequence[int]] = None,
                 tol: float = 1e-4) -> tuple:
    """CLT diagnostic; returns ``(CltReport, GreenKubo)``."""
    gk_fibers = list(starts)[:20] if gk_fibers is None else gk_fibers
    gk = green_kubo(family, gk_fibers, psi, tol)
    sums, resampled = birkhoff_sums(family, starts, psi, n, samples, seed)
    return clt_report(sums, n, gk.sigma2, resampled), gk


def iid_clt(n: int = 2000, samples: int = 5000, n_states: int = 50, seed: int = 0) -> CltReport:
    """Synthetic fixture whose next state ignores the current one.

    The same kernel sampler drives the trajectories, with every row equal
    to a fixed law ``p``; the variance oracle is the classical ``Var_p(psi)``.
    """
    rng = np.random.default_rng(seed)
    p = rng.random(n_states)
    p /= p.sum()
    psi = rng.uniform(-1.0, 1.0, n_states)
    psi -= p @ psi
    kernel = GridKernel(sparse.csr_matrix(np.tile(p, (n_states, 1))))
    state = _draw(p, samples, rng)
    sums = np.zeros(samples)
    for _ in range(n):
        sums += psi[state]
        state = kernel.sample(state, rng)
    return clt_report(sums, n, float(p @ psi**2))


# -- Koopman dual and Gordin terms ----------------------------------------------------------

def koopman_dual_apply(family: GibbsFamily, j: int, psi_vals: np.ndarray) -> GridDensity:
    """``U^* psi = L_hat(rho_x psi) / rho_{theta x}`` on the grid of ``theta x``."""
    rho, rho_next = family.rhos[j].values, family.rhos[j + 1].values
    if rho_next.min() < 1e-12:
        raise DegenerateDensityError("invariant density vanishes on the grid")
    img = family.chain.operator(j).apply(rho * np.asarray(psi_vals, float)) / family.lams[j]
    return GridDensity(family.chain.grid(j + 1), img / rho_next)


@dataclass
class GordinTerms:
    terms: np.ndarray
    partial: np.ndarray
    fit: Optional[GeometricFit]


def gordin_terms(family: GibbsFamily, j: int, psi: Observable, k_max: int = 30) -> GordinTerms:
    """``|U^{*k} psi|_{L^2(mu)}`` for ``k = 0..k_max`` and their partial sums.

    Since ``U`` is an isometry, these are the norms of ``U^k U^{*k} psi``.
    """
    f = centered(family, j, psi)
    terms = np.zeros(k_max + 1)
    for k in range(k_max + 1):
        terms[k] = math.sqrt(family.mu(j + k).integrate(f**2))
        if k < k_max:
            f = koopman_dual_apply(family, j + k, f).values
    try:
        fit = geometric_fit(np.arange(1, k_max + 1), terms[1:])
    except FitError:
        fit = None
    return GordinTerms(terms, np.cumsum(terms), fit)
