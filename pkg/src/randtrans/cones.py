"""Cones of positive Holder functions and their contraction.

The cone at fiber ``x`` collects ``g >= 0`` with ``|g|_inf <= A nu_x(g)``
and ``v_beta(g) <= H nu_x(g)``; the smaller cone also asks
``g <= 2 M A nu_x(g) L_hat_{theta^{-1} x} 1``.  Constants are assembled
from measured inputs by the displayed formulas, never assumed.
"""
from __future__ import annotations

import hashlib
import json
import math
from dataclasses import asdict, dataclass
from typing import Optional, Sequence

import numpy as np

from .errors import ConfigError, FitError
from .fits import GeometricFit, geometric_fit
from .gibbs import GibbsFamily
from .maps import LinearMap
from .transfer import FiberGrid, GridDensity, PotentialConfig, build_operator, holder_norm


@dataclass(frozen=True)
class ConeConstants:
    beta: float
    delta: float
    M: float
    K: float
    A_ball: float
    A: float
    H: float
    c: float
    gamma: float
    N0: int
    eta: float
    a: float
    R0: float
    R1: float = math.inf

    def ledger_rows(self, inputs_hash: str) -> list:
        measured = {"M", "K", "A_ball", "c", "gamma", "a", "R0", "R1"}
        return [(k, v, "measured" if k in measured else "formula", inputs_hash) for k, v in asdict(self).items()]


def inputs_digest(inputs: dict) -> str:
    return hashlib.sha256(json.dumps(inputs, sort_keys=True, default=float).encode()).hexdigest()[:16]


def cone_delta(M: float, K: float, beta: float, delta0: float) -> float:
    """Largest ``delta <= delta0`` with ``1/2 + (2MK + 4) delta^beta <= 1``."""
    return min(delta0, (0.5 / (2 * M * K + 4)) ** (1.0 / beta))


def compute_constants(M: float, K: float, A_ball: float, c: float, gamma: float, a: float, beta: float,
                      delta0: float, R0: float, R1: float = math.inf) -> ConeConstants:
    """Assemble the cone constants from measured inputs."""
    vals = dict(M=M, K=K, A_ball=A_ball, c=c, gamma=gamma, a=a)
    if gamma <= 1.0:
        raise ConfigError("expansion rate gamma must exceed 1 for a finite N0")
    if not all(np.isfinite(v) and v > 0 for v in vals.values()):
        raise ConfigError("all measured inputs must be positive and finite")
    delta = cone_delta(M, K, beta, delta0)
    A = 2.0 * max(1.0, A_ball, M)
    H = 2.0 * M * K * A + 4.0
    # smallest n >= 1 with M K (c gamma^n)^(-beta) H <= 1
    n = max(1, math.ceil((math.log(M * K * H) / beta - math.log(c)) / math.log(gamma)))
    while n > 1 and M * K * (c * gamma ** (n - 1)) ** (-beta) * H <= 1.0:
        n -= 1
    while M * K * (c * gamma**n) ** (-beta) * H > 1.0:
        n += 1
    eta = min(1.0 / 3.0, 1.0 / H, 0.5 * a / M)
    return ConeConstants(float(beta), float(delta), float(M), float(K), float(A_ball), float(A), float(H), float(c),
                         float(gamma), int(n), float(eta), float(a), float(R0), float(R1))


def ball_constant(family: GibbsFamily, fibers: Sequence[int], delta: float, R: float) -> float:
    """``1 / min nu_x(D(z, delta))`` over grid points ``|z| <= R`` of the given fibers."""
    worst = math.inf
    for j in fibers:
        grid, nu = family.chain.grid(j), family.nus[j]
        idx = np.flatnonzero(np.abs(grid.points) <= R)
        balls = grid.tree.query_ball_point(np.c_[grid.points[idx].real, grid.points[idx].imag], delta)
        for b in balls:
            worst = min(worst, float(nu.weights[b].sum()))
    return 1.0 / worst


def one_step_image(family: GibbsFamily, j: int) -> np.ndarray:
    """``L_hat_{theta^{-1}(x)} 1`` on the grid of fiber ``j``."""
    return family.chain.operator(j - 1).ones_image / family.lams[j - 1]


def r1_radius(family: GibbsFamily, fibers: Sequence[int], A: float, M: float) -> float:
    """Smallest grid radius beyond which ``2 A M L_hat 1 <= 1`` on every sampled fiber."""
    r1 = 0.0
    for j in fibers:
        v = one_step_image(family, j)
        pts = family.chain.grid(j).points
        bad = 2 * A * M * v > 1.0
        if bad.any():
            r1 = max(r1, float(np.abs(pts[bad]).max()))
    return r1


# -- membership -------------------------------------------------------------------

@dataclass
class Membership:
    in_C: bool
    in_C0: bool
    integral: float
    sup_slack: float
    var_slack: float
    envelope_slack: float
    zero: bool = False
    sparse: bool = False

    @property
    def violated(self) -> list:
        out = []
        if self.sup_slack < 0:
            out.append("sup")
        if self.var_slack < 0:
            out.append("variation")
        if self.envelope_slack < 0:
            out.append("envelope")
        return out


def cone_membership(g: GridDensity, family: GibbsFamily, j: int, consts: ConeConstants,
                    envelope: Optional[np.ndarray] = None) -> Membership:
    """Evaluate the cone inequalities for ``g`` on fiber ``j``.

    Slacks are right-hand side minus left-hand side, so negative values
    mark violations.  ``envelope`` defaults to ``L_hat_{theta^{-1} x} 1``.
    """
    nu = family.nus[j]
    vals = g.values
    integral = nu.integrate(vals)
    hn = holder_norm(g, consts.beta, consts.delta)
    if np.any(vals < 0):
        return Membership(False, False, integral, -math.inf, -math.inf, -math.inf, False, hn.sparse)
    sup_slack = consts.A * integral - hn.sup
    var_slack = consts.H * integral - hn.v_beta
    env = one_step_image(family, j) if envelope is None else envelope
    env_slack = float(np.min(2 * consts.M * consts.A * integral * env - vals))
    in_c = sup_slack >= 0 and var_slack >= 0
    return Membership(bool(in_c), bool(in_c and env_slack >= 0), integral, float(sup_slack), float(var_slack),
                      env_slack, bool(np.all(vals == 0)), hn.sparse)


def sample_members(family: GibbsFamily, j: int, consts: ConeConstants, n: int, seed: int,
                   slack: float = 0.1) -> list:
    """Random members of the slice at fiber ``j``.

    Softplus of a smooth Gaussian random field (random Fourier features),
    normalized to ``nu(g) = 1`` and blended towards the constant 1 until
    the sup and variation constraints hold with the requested slack.
    """
    rng = np.random.default_rng(seed)
    grid = family.chain.grid(j)
    nu = family.nus[j]
    pts = grid.points
    out = []
    for _ in range(n):
        freqs = rng.normal(scale=0.4, size=(12, 2))
        phases = rng.uniform(0, 2 * np.pi, 12)
        amps = rng.normal(size=12) / math.sqrt(12)
        field_ = np.cos(np.outer(pts.real, freqs[:, 0]) + np.outer(pts.imag, freqs[:, 1]) + phases) @ amps
        g = np.logaddexp(0.0, 2.0 * field_)
        g = g / nu.integrate(g)
        s = 1.0
        for _ in range(60):
            cand = s * g + (1.0 - s)
            hn = holder_norm(GridDensity(grid, cand), consts.beta, consts.delta)
            if hn.sup <= consts.A / (1 + slack) and hn.v_beta <= consts.H / (1 + slack):
                break
            s *= 0.5
        out.append(cand)
    return out


def _push_normalized(family: GibbsFamily, j: int, n: int, vals: np.ndarray) -> np.ndarray:
    chain = family.chain
    v = np.asarray(vals, float)
    for i in range(j, j + n):
        v = chain.operator(i).apply(v) / family.lams[i]
    return v


@dataclass
class InvarianceReport:
    ns: tuple
    pass_fraction: dict
    worst: dict


def cone_invariance_test(family: GibbsFamily, j: int, consts: ConeConstants, members: Sequence[np.ndarray],
                         ns: Optional[Sequence[int]] = None) -> InvarianceReport:
    """Fraction of members whose ``L_hat^n`` image lies in the smaller cone."""
    ns = tuple(ns) if ns is not None else (consts.N0, consts.N0 + 1, 2 * consts.N0)
    frac, worst = {}, {}
    for n in ns:
        ok = []
        slack = math.inf
        for g in members:
            img = _push_normalized(family, j, n, g)
            m = cone_membership(GridDensity(family.chain.grid(j + n), img), family, j + n, consts)
            ok.append(m.in_C0)
            slack = min(slack, m.sup_slack, m.var_slack, m.envelope_slack)
        frac[n] = float(np.mean(ok))
        worst[n] = slack
    return InvarianceReport(ns, frac, worst)


# -- Bowen step ----------------------------------------------------------------------

def bump(z, R: float) -> np.ndarray:
    """Radial bump: 1 on ``|z| <= R``, 0 on ``|z| >= 2R``, linear in between."""
    r = np.abs(np.asarray(z)) / R
    return np.clip(2.0 - r, 0.0, 1.0)


def truncation_function(family: GibbsFamily, j: int, R: float) -> GridDensity:
    """``phi_R L_hat_{theta^{-1}(x)} 1`` on the grid of fiber ``j``."""
    grid = family.chain.grid(j)
    return GridDensity(grid, bump(grid.points, R) * one_step_image(family, j))


@dataclass
class BowenReport:
    a_emp: float
    lower_ok: bool
    eta_xr: float
    membership: Membership

    @property
    def passed(self) -> bool:
        return self.lower_ok and self.membership.in_C0


def bowen_step_check(family: GibbsFamily, j: int, g: np.ndarray, consts: ConeConstants, N: int, R: float,
                     eta: Optional[float] = None) -> BowenReport:
    """Check the lower bound on ``D_{2R}`` and the cone membership of the Bowen step."""
    eta = consts.eta if eta is None else eta
    chain = family.chain
    img = _push_normalized(family, j, N, g)
    pts = chain.grid(j + N).points
    inner = np.abs(pts) <= 2 * R
    a_emp = float(img[inner].min()) if inner.any() else 0.0
    phi = truncation_function(family, j + N, R).values
    eta_xr = eta * family.nus[j + N].integrate(phi)
    gp = (img - eta * phi) / (1.0 - eta_xr)
    m = cone_membership(GridDensity(chain.grid(j + N), gp), family, j + N, consts)
    return BowenReport(a_emp, a_emp > 0, float(eta_xr), m)


# -- contraction -----------------------------------------------------------------------

@dataclass
class ContractionReport:
    ns: np.ndarray
    D: np.ndarray
    fit: Optional[GeometricFit]

    @property
    def theta(self) -> float:
        return self.fit.rate if self.fit is not None else math.nan

    @property
    def contracts(self) -> bool:
        f = self.fit
        return bool(f is not None and f.rate < 1.0 and f.slope_ci[1] < 0.0 and f.r2 >= 0.9)


def contraction_rate(family: GibbsFamily, j: int, pairs: Sequence[tuple], ns, beta: float,
                     delta: float) -> ContractionReport:
    """``D_n = max over pairs |L_hat^n g - L_hat^n h|_beta`` and its geometric fit."""
    ns = np.asarray(list(ns))
    D = np.zeros(ns.size)
    for g, h in pairs:
        diff = np.asarray(g, float) - np.asarray(h, float)
        v = diff.copy()
        done = 0
        for a, n in enumerate(ns):
            v = _push_normalized(family, j + done, int(n) - done, v)
            done = int(n)
            hn = holder_norm(GridDensity(family.chain.grid(j + done), v), beta, delta)
            D[a] = max(D[a], hn.norm)
    try:
        fit = geometric_fit(ns, D)
    except FitError:
        fit = None
    return ContractionReport(ns, D, fit)


class IsometryChain:
    """Negative control: every fiber map is the rotation ``z -> i z``.

    The grid is a square lattice symmetric under the rotation, so the
    transfer operator permutes grid values and ``lambda = 1``.  Nothing
    contracts, and a working contraction diagnostic must say so.
    """

    def __init__(self, start: int = 0, stop: int = 40, half_width: float = 5.0, n_side: int = 41):
        xs = np.linspace(-half_width, half_width, n_side)
        pts = (xs[:, None] + 1j * xs[None, :]).ravel()
        self.start, self.stop = start, stop
        self._grid = FiberGrid(pts, 0, half_width * math.sqrt(2), xs[1] - xs[0])
        self._map = LinearMap(a=1j)
        self.cfg = PotentialConfig()
        self._op = build_operator(self._map, self._grid, self._grid, self.cfg)

    def fmap(self, j: int):
        return self._map

    def grid(self, j: int) -> FiberGrid:
        return self._grid

    def operator(self, j: int):
        if not self.start <= j < self.stop:
            raise KeyError(f"no operator for fiber {j}")
        return self._op


def isometry_family(start: int = 0, stop: int = 40) -> GibbsFamily:
    from .gibbs import build_family

    return build_family(IsometryChain(start, stop), reference="grid", with_density=False)
