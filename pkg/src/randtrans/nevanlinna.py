"""Value-distribution quantities for the fiber maps.

Spherical (Ahlfors-Shimizu) characteristic, counting functions, chordal
geometry, first- and second-main-theorem checks, and the tail sums
``sum |z|^{-s}`` over preimages that control the transfer operator.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, NamedTuple, Optional, Sequence

import mpmath
import numpy as np

from .errors import DivergenceError, FitError, HypothesisError, QuadratureError
from .maps import FiberMap

INF = complex("inf")
_GL_NODES, _GL_WEIGHTS = np.polynomial.legendre.leggauss(10)


def _is_infinite(a) -> bool:
    return a is None or not np.isfinite(complex(a))


def chordal_distance(a, b) -> float:
    """Chordal distance on the Riemann sphere, normalised so that ``[0, inf] = 1``.

    Pass ``None`` or a non-finite complex number for the point at infinity.
    """
    a_inf, b_inf = _is_infinite(a), _is_infinite(b)
    if a_inf and b_inf:
        return 0.0
    if a_inf or b_inf:
        z = complex(b if a_inf else a)
        return 1.0 / math.sqrt(1.0 + abs(z) ** 2)
    a, b = complex(a), complex(b)
    return abs(a - b) / (math.sqrt(1.0 + abs(a) ** 2) * math.sqrt(1.0 + abs(b) ** 2))


def _chordal_to_target(fz: np.ndarray, w) -> np.ndarray:
    """Vectorised ``[f(z), w]`` allowing non-finite ``f(z)``."""
    fz = np.asarray(fz, dtype=np.complex128)
    finite = np.isfinite(fz)
    safe = np.where(finite, fz, 0.0)
    if _is_infinite(w):
        d = 1.0 / np.sqrt(1.0 + np.abs(safe) ** 2)
        return np.where(finite, d, 0.0)
    w = complex(w)
    d = np.abs(safe - w) / (np.sqrt(1.0 + np.abs(safe) ** 2) * math.sqrt(1.0 + abs(w) ** 2))
    return np.where(finite, d, 1.0 / math.sqrt(1.0 + abs(w) ** 2))


# -- spherical area and characteristic -------------------------------------------

def _circle_density(fmap: FiberMap, s: np.ndarray, rtol: float = 1e-12, max_points: int = 2**18) -> np.ndarray:
    """``a(s) = (s/pi) * integral over the circle |z| = s of (f^#)^2 dphi``.

    Periodic trapezoid rule with point doubling until every radius has
    converged to ``rtol``.
    """
    s = np.asarray(s, dtype=float)
    out = np.zeros_like(s)
    todo = np.flatnonzero(s > 0)
    n = 64
    phi = 2 * np.pi * np.arange(n) / n
    vals = {}
    for idx in todo:
        z = s[idx] * np.exp(1j * phi)
        vals[idx] = np.mean(fmap.spherical_deriv(z) ** 2) * 2 * np.pi
    while todo.size and n < max_points:
        mid = 2 * np.pi * (np.arange(n) + 0.5) / n
        z = s[todo, None] * np.exp(1j * mid)[None, :]
        new = np.mean(fmap.spherical_deriv(z) ** 2, axis=1) * 2 * np.pi
        old = np.array([vals[i] for i in todo])
        refined = 0.5 * (old + new)
        done = np.abs(refined - old) <= rtol * np.maximum(np.abs(refined), 1e-300)
        for i, v in zip(todo, refined):
            vals[i] = v
        # require two consecutive agreements for robustness on peaked integrands
        todo = todo[~done] if n >= 256 else todo
        n *= 2
    if todo.size:
        raise QuadratureError("angular quadrature did not converge")
    for i, v in vals.items():
        out[i] = s[i] * v / np.pi
    return out


def _panel_nodes(breaks: np.ndarray, max_len: float):
    """Gauss-Legendre nodes on panels refining the given breakpoints."""
    edges = [breaks[0]]
    for a, b in zip(breaks[:-1], breaks[1:]):
        # panels grow geometrically beyond radius 4, where the density is slowly varying
        length = max_len * max(1.0, 0.25 * a)
        m = max(1, int(math.ceil((b - a) / length)))
        if b > 4.0 and a >= 4.0:
            m = max(1, int(math.ceil(math.log(b / a) / math.log1p(max_len / 4.0))))
            edges.extend(a * (b / a) ** (np.arange(1, m + 1) / m))
            continue
        edges.extend(a + (b - a) * np.arange(1, m + 1) / m)
    edges = np.asarray(edges)
    if edges[0] == 0.0:
        # geometric grading towards the origin, where the log weight is singular
        first = edges[1]
        edges = np.concatenate(([0.0], first * 2.0 ** -np.arange(30, 0, -1), edges[1:]))
    lo, hi = edges[:-1], edges[1:]
    half = 0.5 * (hi - lo)
    nodes = (0.5 * (hi + lo))[:, None] + half[:, None] * _GL_NODES[None, :]
    weights = half[:, None] * _GL_WEIGHTS[None, :]
    return edges, nodes, weights


def _characteristic_once(fmap: FiberMap, radii: np.ndarray, max_len: float):
    breaks = np.concatenate(([0.0], radii))
    if radii[-1] > 4.0 and not np.any(radii == 4.0):
        breaks = np.sort(np.append(breaks, 4.0))
    edges, nodes, weights = _panel_nodes(breaks, max_len)
    a = _circle_density(fmap, nodes.ravel()).reshape(nodes.shape)
    area, char = np.empty(radii.size), np.empty(radii.size)
    for i, r in enumerate(radii):
        use = edges[1:] <= r * (1 + 1e-14)
        area[i] = math.fsum((weights[use] * a[use]).ravel())
        char[i] = math.fsum((weights[use] * a[use] * np.log(r / nodes[use])).ravel())
    return area, char


@dataclass
class CharacteristicTable:
    radii: np.ndarray
    A: np.ndarray  # spherical area A_f(r)
    T: np.ndarray  # characteristic T(r)
    err: np.ndarray  # estimated absolute quadrature error of T

    def as_rows(self):
        return [(float(r), float(a), float(t), float(e)) for r, a, t, e in zip(self.radii, self.A, self.T, self.err)]


def characteristic(fmap: FiberMap, radii: Iterable[float], max_panel: float = 0.25) -> CharacteristicTable:
    """Ahlfors-Shimizu characteristic ``T(r) = int_0^r A(t) dt / t`` on a radius grid.

    Uses the equivalent single integral ``int_0^r a(s) log(r/s) ds`` with
    ``a = dA/ds``; the error estimate compares against a run at halved panel
    length.
    """
    radii = np.asarray(sorted(float(r) for r in radii))
    if radii.size == 0 or radii[0] <= 0:
        raise ValueError("radii must be positive")
    a1, t1 = _characteristic_once(fmap, radii, max_panel)
    a2, t2 = _characteristic_once(fmap, radii, max_panel / 2)
    err = np.abs(t2 - t1) + np.abs(t2) * 1e-13
    # cumulative sums of nonnegative terms: enforce exact monotonicity against rounding
    t2 = np.maximum.accumulate(np.maximum(t2, 0.0))
    return CharacteristicTable(radii, a2, t2, err)


def spherical_area(fmap: FiberMap, t: float, rtol: float = 1e-4) -> tuple:
    """``A_f(t) = (1/pi) * area integral of (f^#)^2 over |z| <= t``, with error estimate."""
    if t <= 0:
        raise ValueError("radius must be positive")
    a1, _ = _characteristic_once(fmap, np.array([t]), 0.25)
    a2, _ = _characteristic_once(fmap, np.array([t]), 0.125)
    value = float(a2[0])
    err = abs(value - float(a1[0])) + 1e-15 * abs(value)
    if err > rtol * max(abs(value), 1e-300) and err > 1e-14:
        raise QuadratureError("spherical area quadrature did not reach the requested tolerance")
    return value, err


# -- counting functions --------------------------------------------------------

class Counting(NamedTuple):
    n: int
    N: float


def _preimages_within(fmap: FiberMap, w: complex, r: float) -> np.ndarray:
    fmap.check_target(w)
    if fmap.lattice_period is not None:
        ks = fmap.branch_range(w, r)
        if ks.size == 0:
            return np.zeros(0, dtype=np.complex128)
        zs = fmap.preimages(np.complex128(w), ks)
    else:
        ks = fmap.branch_range(w, np.inf)
        zs = fmap.preimages(np.complex128(w), ks) if ks.size else np.zeros(0, dtype=np.complex128)
    return zs[np.abs(zs) <= r]


def counting(fmap: FiberMap, w: complex, r: float, zero_tol: float = 1e-14) -> Counting:
    """``n(r, w)`` and ``N(r, w)`` from the closed-form preimages.

    ``N(r, w) = sum_{0 < |z_k| <= r} log(r/|z_k|) + n(0, w) log r``.
    """
    zs = _preimages_within(fmap, w, r)
    mod = np.abs(zs)
    at_zero = mod <= zero_tol
    N = math.fsum(np.log(r / mod[~at_zero])) + int(at_zero.sum()) * math.log(r)
    return Counting(int(zs.size), N)


def proximity(fmap: FiberMap, w, r: float, n_points: int = 2**14) -> float:
    """Spherical proximity ``(1/2pi) int log(1/[f(r e^{i phi}), w]) dphi``."""
    phi = 2 * np.pi * (np.arange(n_points) + 0.5) / n_points
    d = _chordal_to_target(fmap.value(r * np.exp(1j * phi)), w)
    return float(np.mean(-np.log(np.maximum(d, 1e-300))))


@dataclass
class MarginReport:
    radii: np.ndarray
    lhs: np.ndarray
    rhs: np.ndarray
    budget: np.ndarray

    @property
    def margin(self) -> np.ndarray:
        return self.rhs - self.lhs

    @property
    def max_violation(self) -> float:
        return float(np.max(self.lhs - self.rhs))

    def as_rows(self):
        return [(float(r), float(a), float(b), float(b - a)) for r, a, b in zip(self.radii, self.lhs, self.rhs)]


def fmt_check(fmap: FiberMap, w, radii, table: Optional[CharacteristicTable] = None) -> MarginReport:
    """First main theorem ``N(r,w) <= T(r) + log(1/[f(0), w])`` on a grid."""
    f0 = complex(fmap.value(0.0))
    d0 = chordal_distance(f0, w)
    if d0 == 0.0:
        raise ValueError("f(0) equals the target; the right-hand side is infinite")
    table = characteristic(fmap, radii) if table is None else table
    lhs = np.array([counting(fmap, w, r).N for r in table.radii])
    rhs = table.T + math.log(1.0 / d0)
    return MarginReport(table.radii, lhs, rhs, table.err)


# -- second main theorem --------------------------------------------------------

def d_ring(targets: Sequence) -> float:
    """``-log prod_{i != j} [a_i, a_j] + 2 log 2`` over ordered pairs."""
    total = 0.0
    for i, a in enumerate(targets):
        for j, b in enumerate(targets):
            if i != j:
                d = chordal_distance(a, b)
                if d == 0.0:
                    raise HypothesisError("targets must be pairwise distinct")
                total -= math.log(d)
    return total + 2 * math.log(2.0)


@dataclass
class SmtErrorConfig:
    """Constants of the uniform second main theorem.

    ``b6`` is calibrated by :func:`calibrate_b6` when not supplied.
    """

    L: float
    rho: float = 1.0
    c_rho: float = 1.0
    b6: Optional[float] = None
    khinchin: str = "psi(x) = x"
    auxiliary: str = "phi(r) = r**-(rho - 1)"

    def __post_init__(self):
        if self.L < 1:
            raise ValueError("L must be at least 1")
        if self.b6 is None:
            self.b6 = calibrate_b6(self.L, self.c_rho, self.rho)

    @property
    def r0(self) -> float:
        return self.L * math.exp(math.e)

    @property
    def b1(self) -> float:
        return math.e * (1.0 + (self.L * math.exp(math.e)) ** 2)


def _full_without_d(L: float, rho: float, T: float, r: float) -> float:
    b1 = math.e * (1.0 + (L * math.exp(math.e)) ** 2)
    return (
        2 * math.log(108 + 18 * math.log(2.0))
        + 0.5 * math.log(b1)
        + 1.0
        + 4 * math.log(T)
        + (1.5 * (rho - 1) + 0.5) * math.log(r)
        + math.log(L)
    )


def calibrate_b6(L: float, c_rho: float, rho: float = 1.0, r_max: float = 1e8, n_grid: int = 4000) -> float:
    """Max over ``r >= r0`` of the full error term minus ``6 rho log r + D``.

    The characteristic is replaced by its admissible bound ``C_rho r**rho``.
    """
    r0 = L * math.exp(math.e)
    rs = np.geomspace(r0, max(r_max, 10 * r0), n_grid)
    vals = [_full_without_d(L, rho, c_rho * r**rho, r) - 6 * rho * math.log(r) for r in rs]
    return float(max(vals))


def smt_error_term(cfg: SmtErrorConfig, T: float, targets: Sequence, r: float) -> tuple:
    """Return ``(full, simplified)`` error terms ``S(r, a1, a2, a3)``."""
    if r < cfg.r0:
        raise ValueError(f"radius {r} is below r0 = {cfg.r0}")
    D = d_ring(targets)
    full = _full_without_d(cfg.L, cfg.rho, T, r) + D
    simplified = cfg.b6 + 6 * cfg.rho * math.log(r) + D
    return full, simplified


def smt_lower_bound_check(fmap: FiberMap, targets: Sequence, radii, cfg: SmtErrorConfig) -> MarginReport:
    """Check ``sum_j N(a_j, r) >= T(r) - S(r, a1, a2, a3)`` after verifying the hypotheses."""
    fsharp0 = float(fmap.spherical_deriv(0.0))
    if not 1.0 / cfg.L <= fsharp0 <= cfg.L:
        raise HypothesisError(f"hypothesis (1): f#(0) = {fsharp0} lies outside [1/L, L]")
    f0 = complex(fmap.value(0.0))
    if any(chordal_distance(f0, a) == 0.0 for a in targets):
        raise HypothesisError("hypothesis (2): f(0) coincides with a target")
    d_ring(targets)
    table = characteristic(fmap, radii)
    if np.any(table.T > cfg.c_rho * table.radii**cfg.rho):
        raise HypothesisError("hypothesis (3): T(r) exceeds C_rho r**rho on the grid")
    lhs, rhs = [], []
    for r, T in zip(table.radii, table.T):
        full, _ = smt_error_term(cfg, T, targets, r)
        lhs.append(T - full)
        rhs.append(sum(counting(fmap, a, r).N for a in targets if not _is_infinite(a)))
    # reported as lhs <= rhs: margins are rhs - lhs
    return MarginReport(table.radii, np.array(lhs), np.array(rhs), table.err)


# -- tail sums -----------------------------------------------------------------

def _lattice(fmap: FiberMap, w):
    if fmap.lattice_period is None:
        raise ValueError("tail sums need a family with lattice preimages")
    c = complex(fmap.preimage_base(np.complex128(w)))
    return c, complex(fmap.lattice_period)


def _tail_direct(c: complex, p: complex, s: float, R: float, ks_inner: np.ndarray) -> float:
    a = abs(p) ** 2
    b = (c * p.conjugate()).real
    if ks_inner.size:
        k_hi, k_lo = int(ks_inner[-1]) + 1, int(ks_inner[0]) - 1
    else:
        k_star = int(round(-b / a))
        k_hi, k_lo = k_star, k_star - 1
    with mpmath.workdps(30):
        cc, pp = mpmath.mpc(c), mpmath.mpc(p)

        def term(k):
            return abs(cc + k * pp) ** (-s)

        def term_neg(k):
            return abs(cc - k * pp) ** (-s)

        up = mpmath.nsum(term, [k_hi, mpmath.inf], method="euler-maclaurin")
        down = mpmath.nsum(term_neg, [-k_lo, mpmath.inf], method="euler-maclaurin")
        return float(up + down)


def _tail_stieltjes(c: complex, p: complex, s: float, R: float, x_mult: float = 1e5) -> float:
    a = abs(p) ** 2
    b = (c * p.conjugate()).real
    X = max(R, abs(c)) + x_mult * abs(p)
    disc = b * b - a * (abs(c) ** 2 - X * X)
    root = math.sqrt(disc)
    ks = np.arange(math.ceil((-b - root) / a), math.floor((-b + root) / a) + 1)
    mods = np.abs(c + ks * p)
    mods = mods[mods <= X]
    n_R = int(np.sum(mods <= R))
    # s * int_R^X n(r) r^{-s-1} dr for the exact step function
    exact = math.fsum(np.maximum(mods, R) ** (-s) - X ** (-s))
    # beyond X use the smooth counting function (k_+ - k_-)
    with mpmath.workdps(30):
        aa, bb, cc2 = mpmath.mpf(a), mpmath.mpf(b), mpmath.mpf(abs(c) ** 2)

        def integrand(r):
            return 2 * mpmath.sqrt(bb * bb - aa * (cc2 - r * r)) / aa * r ** (-s - 1)

        smooth = float(s * mpmath.quad(integrand, [X, 10 * X, mpmath.inf]))
    return -n_R * R ** (-s) + exact + smooth


@dataclass
class TailSum:
    value: float
    direct: float
    stieltjes: float

    @property
    def rel_diff(self) -> float:
        return abs(self.direct - self.stieltjes) / max(abs(self.direct), 1e-300)


def tail_sum(fmap: FiberMap, w, s: float, R: float, rho: Optional[float] = None) -> TailSum:
    """``sum_{f(z) = w, |z| > R} |z|^{-s}`` by two independent routes.

    ``direct`` sums the branches with Euler-Maclaurin acceleration;
    ``stieltjes`` integrates the counting function,
    ``-n(R) R^{-s} + s int_R^inf n(r) r^{-s-1} dr``.
    """
    rho = 1.0 if rho is None else rho
    if s <= rho:
        raise DivergenceError(f"exponent {s} must exceed the order bound {rho}")
    c, p = _lattice(fmap, w)
    ks_inner = fmap.branch_range(w, R)
    direct = _tail_direct(c, p, s, R, ks_inner)
    stieltjes = _tail_stieltjes(c, p, s, R)
    return TailSum(direct, direct, stieltjes)


def order_estimate(table: CharacteristicTable) -> float:
    """Least-squares slope of ``log T`` against ``log r`` over the top decade."""
    r, T = table.radii, table.T
    if r.size < 3 or math.log10(r[-1] / r[0]) < 1.5:
        raise FitError("order estimate needs at least 1.5 decades of radii")
    use = (r >= r[-1] / 10) & (T > 0)
    if use.sum() < 2:
        raise FitError("not enough positive characteristic values in the top decade")
    lt = np.log(T[use])
    if np.ptp(lt) == 0:
        return 0.0
    return float(np.polyfit(np.log(r[use]), lt, 1)[0])
