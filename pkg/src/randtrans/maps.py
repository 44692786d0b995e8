"""Fiber maps with closed-form derivatives and branch-indexed preimages.

Every family here can be inverted in closed form.  Transcendental
families (``exp`` and ``tangent``) have preimages on a lattice
``z_k = c(w) + k p``, which the operator and the value-distribution code
exploit for exact branch enumeration and tail sums.  ``square``,
``identity`` and ``linear`` are algebraic fixtures with known Julia sets
or trivial operators.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy.spatial import cKDTree

from .errors import (
    BranchMismatchError,
    ConfigError,
    EmptyRangeError,
    InsufficientSamplesError,
    NoCandidateError,
    OmittedValueError,
    PoleError,
    SingularValueError,
)

POLE_TOL = 1e-14
RESIDUAL_TOL = 1e-10


def _as_complex(z):
    return np.asarray(z, dtype=np.complex128)


@dataclass(frozen=True)
class FiberMap:
    """Base class.  Subclasses implement the vectorised primitives."""

    alpha1: float = 0.0
    alpha2: float = 1.0
    kappa: float = 2.0

    family = "abstract"
    transcendental = False
    lattice_period = None  # set by lattice families
    finite_branches = ()  # branch labels of algebraic families

    # -- vectorised primitives -------------------------------------------------
    def value(self, z):
        raise NotImplementedError

    def deriv(self, z):
        raise NotImplementedError

    def spherical_deriv(self, z):
        fz = self.value(z)
        return np.abs(self.deriv(z)) / (1.0 + np.abs(fz) ** 2)

    def preimage_base(self, w):
        """Lattice base point ``c(w)``; only for lattice families."""
        raise NotImplementedError

    def preimages(self, w, ks):
        """Preimages ``z_k`` for every ``w`` (rows) and branch ``k`` (columns)."""
        w = _as_complex(w)
        c = self.preimage_base(w)
        ks = np.asarray(ks)
        return c[..., None] + ks * self.lattice_period

    def branch_range(self, w: complex, radius: float) -> np.ndarray:
        """Branch indices ``k`` with ``|z_k| <= radius`` for a single target."""
        c = complex(self.preimage_base(np.complex128(w)))
        p = self.lattice_period
        # |c + k p|^2 = |p|^2 k^2 + 2 Re(c conj p) k + |c|^2
        a = abs(p) ** 2
        b = (c * p.conjugate()).real
        disc = b * b - a * (abs(c) ** 2 - radius * radius)
        if disc < 0:
            return np.zeros(0, dtype=np.int64)
        root = math.sqrt(disc)
        lo = math.ceil((-b - root) / a)
        hi = math.floor((-b + root) / a)
        return np.arange(lo, hi + 1, dtype=np.int64)

    def all_preimages(self, w, radius: float):
        """Every preimage of every target inside the closed disk of ``radius``.

        Returns ``(z, source, k)``: the preimages, the index of the target
        each came from, and the branch index.  Ordered by target, then branch.
        """
        w = _as_complex(w).ravel()
        if self.lattice_period is not None:
            if w.size == 0:
                return np.zeros(0, np.complex128), np.zeros(0, np.int64), np.zeros(0, np.int64)
            c = self.preimage_base(w)
            kmax = int(math.ceil((radius + np.max(np.abs(c))) / abs(self.lattice_period)))
            ks = np.arange(-kmax, kmax + 1, dtype=np.int64)
            z = c[:, None] + ks[None, :] * self.lattice_period
        else:
            ks = np.asarray(self.finite_branches, dtype=np.int64)
            z = self.preimages(w, ks).reshape(w.size, ks.size)
        keep = np.abs(z) <= radius
        src, col = np.nonzero(keep)
        return z[src, col], src.astype(np.int64), ks[col]

    def omitted_values(self) -> tuple:
        return ()

    def singular_values(self) -> tuple:
        return ()

    def check_target(self, w) -> None:
        w = _as_complex(w)
        for v in self.omitted_values():
            if np.any(np.abs(w - v) <= POLE_TOL * (1.0 + abs(v))):
                raise OmittedValueError(f"{v} is an omitted value of the {self.family} family")

    def check_regular(self, z) -> None:
        """Raise :class:`PoleError` when ``z`` is within ``1e-14`` of a pole."""

    # continuation of the inverse through (w, z0) to u; generic Newton fallback
    def _continue_branch(self, w, z0, u):
        z = z0 + (u - w) / self.deriv(z0)
        for _ in range(50):
            step = (self.value(z) - u) / self.deriv(z)
            z = z - step
            if abs(step) < 1e-15 * (1.0 + abs(z)):
                break
        return z


@dataclass(frozen=True)
class ExpMap(FiberMap):
    """``z -> eta * exp(z)``."""

    eta: complex = 0.2
    family = "exp"
    transcendental = True
    lattice_period = 2j * math.pi

    def value(self, z):
        return self.eta * np.exp(_as_complex(z))

    def deriv(self, z):
        return self.value(z)

    def spherical_deriv(self, z):
        # |f|/(1+|f|^2) = 1/(2 cosh log|f|), safe for large |f|
        u = math.log(abs(self.eta)) + _as_complex(z).real
        with np.errstate(over="ignore"):
            return 0.5 / np.cosh(u)

    def preimage_base(self, w):
        w = _as_complex(w)
        self.check_target(w)
        return np.log(w / self.eta)

    def omitted_values(self):
        return (0.0,)

    def singular_values(self):
        return (0.0,)

    def _continue_branch(self, w, z0, u):
        return z0 + np.log(u / w)


@dataclass(frozen=True)
class TangentMap(FiberMap):
    """``z -> lam * tan(z)``."""

    lam: complex = 1.0
    alpha2: float = 2.0
    kappa: float = 4.0
    family = "tangent"
    transcendental = True
    lattice_period = complex(math.pi)

    def _pole_distance(self, z):
        z = _as_complex(z)
        k = np.round((z.real - math.pi / 2) / math.pi)
        return np.abs(z - (math.pi / 2 + math.pi * k))

    def check_regular(self, z):
        if np.any(self._pole_distance(z) < POLE_TOL):
            raise PoleError("evaluation point is within 1e-14 of a pole of tan")

    def value(self, z):
        z = _as_complex(z)
        out = self.lam * np.tan(z)
        near = self._pole_distance(z) < POLE_TOL
        if np.any(near):
            out = np.where(near, complex(np.inf, np.inf), out)
        return out

    def deriv(self, z):
        z = _as_complex(z)
        return self.lam / np.cos(z) ** 2

    def spherical_deriv(self, z):
        # regularised through the poles
        z = _as_complex(z)
        lam = abs(self.lam)
        return lam / (np.abs(np.cos(z)) ** 2 + lam**2 * np.abs(np.sin(z)) ** 2)

    def preimage_base(self, w):
        w = _as_complex(w)
        self.check_target(w)
        return np.arctan(w / self.lam)

    def omitted_values(self):
        return (1j * self.lam, -1j * self.lam)

    def singular_values(self):
        return (1j * self.lam, -1j * self.lam)

    def _continue_branch(self, w, z0, u):
        lam = self.lam
        return z0 + np.arctan(lam * (u - w) / (lam * lam + u * w))


@dataclass(frozen=True)
class SquareMap(FiberMap):
    """``z -> z**2``; Julia set is the unit circle."""

    alpha1: float = 0.0
    alpha2: float = 0.5
    kappa: float = 4.0
    family = "square"
    finite_branches = (0, 1)

    def value(self, z):
        z = _as_complex(z)
        return z * z

    def deriv(self, z):
        return 2.0 * _as_complex(z)

    def preimages(self, w, ks):
        w = _as_complex(w)
        root = np.sqrt(w)
        ks = np.asarray(ks)
        if np.any((ks < 0) | (ks > 1)):
            raise EmptyRangeError("z**2 has branches 0 and 1 only")
        sign = np.where(ks == 0, 1.0, -1.0)
        return root[..., None] * sign

    def branch_range(self, w, radius):
        return np.arange(2) if abs(w) <= radius * radius else np.zeros(0, dtype=np.int64)

    def singular_values(self):
        return (0.0,)

    def _continue_branch(self, w, z0, u):
        return z0 * np.sqrt(u / w)


@dataclass(frozen=True)
class LinearMap(FiberMap):
    """``z -> a z``; ``a = 1`` is the single-branch isometry fixture."""

    a: complex = 2.0
    alpha1: float = 0.0
    alpha2: float = 1.0
    kappa: float = 1.0
    family = "linear"
    finite_branches = (0,)

    def value(self, z):
        return self.a * _as_complex(z)

    def deriv(self, z):
        return np.full_like(_as_complex(z), self.a)

    def preimages(self, w, ks):
        w = _as_complex(w)
        ks = np.asarray(ks)
        if np.any(ks != 0):
            raise EmptyRangeError("a linear map has the single branch 0")
        return np.repeat((w / self.a)[..., None], ks.size, axis=-1)

    def branch_range(self, w, radius):
        return np.zeros(1, dtype=np.int64) if abs(w / self.a) <= radius else np.zeros(0, dtype=np.int64)

    def _continue_branch(self, w, z0, u):
        return z0 + (u - w) / self.a


def identity_map() -> LinearMap:
    """Single-branch isometry fixture ``z -> z``."""
    return LinearMap(a=1.0)


# -- scalar operations ----------------------------------------------------------

def evaluate(fmap: FiberMap, z: complex) -> complex:
    """Value of the map; raises :class:`PoleError` next to a pole."""
    fmap.check_regular(z)
    return complex(fmap.value(z))


def deriv(fmap: FiberMap, z: complex) -> complex:
    fmap.check_regular(z)
    return complex(fmap.deriv(z))


def spherical_deriv(fmap: FiberMap, z: complex) -> float:
    fmap.check_regular(z)
    return float(fmap.spherical_deriv(z))


def preimages(fmap: FiberMap, w: complex, branch_range: Sequence[int]) -> list:
    """List of ``(k, z_k)``; exp branches ordered by ``|Im z|``, others by ``|k|``."""
    ks = np.asarray(list(branch_range), dtype=np.int64)
    if ks.size == 0:
        raise EmptyRangeError("empty branch range")
    fmap.check_target(w)
    zs = fmap.preimages(np.complex128(w), ks)
    if isinstance(fmap, ExpMap):
        order = np.lexsort((ks, np.abs(zs.imag)))
    else:
        order = np.lexsort((ks, np.abs(ks)))
    return [(int(ks[i]), complex(zs[i])) for i in order]


@dataclass
class InverseBranch:
    """Holomorphic inverse branch of ``fmap`` through ``(w, z0)``."""

    fmap: FiberMap
    w: complex
    z0: complex
    radius: float

    def __call__(self, u):
        u = complex(u)
        if u == self.w:
            return self.z0
        z = complex(self.fmap._continue_branch(self.w, self.z0, u))
        if abs(complex(self.fmap.value(z)) - u) > RESIDUAL_TOL * (1.0 + abs(u)):
            raise BranchMismatchError("continuation left the branch")
        return z

    def derivative(self, u):
        return 1.0 / complex(self.fmap.deriv(self(u)))


def inverse_branch(fmap: FiberMap, w: complex, z0: complex, r: float) -> InverseBranch:
    """Branch evaluator ``g`` with ``g(w) = z0`` and ``f(g(u)) = u`` near ``w``."""
    if abs(complex(fmap.value(z0)) - w) > RESIDUAL_TOL * (1.0 + abs(w)):
        raise BranchMismatchError("anchor is not a preimage of w")
    if abs(complex(fmap.deriv(z0))) == 0.0:
        raise BranchMismatchError("anchor is a critical point")
    for v in fmap.singular_values():
        if abs(w - v) <= r:
            raise SingularValueError(f"disk D({w}, {r}) contains the singular value {v}")
    return InverseBranch(fmap, complex(w), complex(z0), float(r))


# -- condition checks ----------------------------------------------------------

@dataclass
class GrowthReport:
    kappa_fit: float
    upper: float
    lower: float
    n_samples: int
    passed: bool


def check_balanced_growth(fmap: FiberMap, samples, kappa: Optional[float] = None) -> GrowthReport:
    """Two-sided balanced-growth ratio over sampled Julia points."""
    z = _as_complex(samples).ravel()
    if z.size < 100:
        raise InsufficientSamplesError("balanced-growth check needs at least 100 samples")
    kappa = fmap.kappa if kappa is None else kappa
    fz = fmap.value(z)
    scale = (1.0 + np.abs(z)) ** fmap.alpha1 * (1.0 + np.abs(fz)) ** fmap.alpha2
    ratio = np.abs(fmap.deriv(z)) / scale
    upper, lower = float(ratio.max()), float(ratio.min())
    kfit = max(upper, 1.0 / lower)
    return GrowthReport(kfit, upper, lower, int(z.size), kfit <= kappa)


@dataclass(frozen=True)
class GrowthProfile:
    """Order bound with linear lower growth ``omega(r) = c0 r``."""

    rho: float = 1.0
    c_rho: float = 1.0
    c0: float = 0.05

    def omega(self, r):
        return self.c0 * np.asarray(r, dtype=float)

    def omega_inverse(self, y):
        return np.asarray(y, dtype=float) / self.c0

    def upper(self, r):
        return self.c_rho * np.asarray(r, dtype=float) ** self.rho


def check_growth_profile(fmap: FiberMap, profile: GrowthProfile, radii) -> dict:
    """Compare the characteristic with ``omega`` and ``C_rho r**rho`` on a grid."""
    from .nevanlinna import characteristic

    table = characteristic(fmap, radii)
    r = table.radii
    lower_ok = profile.omega(r) <= table.T
    upper_ok = table.T <= profile.upper(r)
    ratio = np.log(r) / profile.omega(r)
    return {
        "radii": r,
        "T": table.T,
        "lower_ok": lower_ok,
        "upper_ok": upper_ok,
        "log_over_omega_decreasing": bool(np.all(np.diff(ratio[r > math.e]) <= 0)),
        "passed": bool(upper_ok.all() and lower_ok.all()),
    }


@dataclass
class NormalizationData:
    T: float
    base_points: np.ndarray  # z_x per fiber
    images: np.ndarray  # f_x(z_x)
    offsets: np.ndarray  # translation used for the conjugation
    defects: np.ndarray  # distance from f_x(z_x) to the next cloud

    def conjugated_origin_image(self) -> np.ndarray:
        """``f_x(z_x) - z_{theta x}``: value at 0 of the translated map."""
        return self.images[:-1] - self.offsets[1:]


def normalize(maps: Sequence[FiberMap], clouds: Sequence[np.ndarray], T: float, tol: float) -> NormalizationData:
    """Choose base points ``z_x`` in ``J_x ∩ D_T`` mapping near ``J_{theta x} ∩ D_T``.

    ``clouds[j]`` approximates the Julia set of fiber ``j`` and ``maps[j]``
    sends fiber ``j`` to fiber ``j + 1``; ``len(clouds) == len(maps) + 1``.
    Among admissible candidates the one of least modulus is chosen.
    """
    if len(clouds) != len(maps) + 1:
        raise ValueError("need one more cloud than maps")
    zs, imgs, defects = [], [], []
    for j, fmap in enumerate(maps):
        cand = _as_complex(clouds[j])
        cand = cand[np.abs(cand) <= T]
        target = _as_complex(clouds[j + 1])
        target = target[np.abs(target) <= T + tol]
        if cand.size == 0 or target.size == 0:
            raise NoCandidateError(f"fiber {j}: no Julia points in the closed disk of radius {T}")
        fz = fmap.value(cand)
        d, _ = cKDTree(np.c_[target.real, target.imag]).query(np.c_[fz.real, fz.imag])
        ok = np.flatnonzero(d <= tol)
        if ok.size == 0:
            raise NoCandidateError(f"fiber {j}: no candidate within tolerance {tol}")
        best = ok[np.lexsort((ok, np.abs(cand[ok])))[0]]
        zs.append(cand[best])
        imgs.append(fz[best])
        defects.append(d[best])
    zs = np.array(zs)
    # the last fiber has no successor inside the orbit: reuse its nearest cloud point
    last = _as_complex(clouds[-1])
    last = last[np.argmin(np.abs(last))]
    offsets = np.append(zs, last)
    return NormalizationData(T, zs, np.array(imgs), offsets, np.array(defects))


def derivative_bound_check(maps: Sequence[FiberMap], cloud, R: float, n_max: int) -> dict:
    """Largest ``|(f^N)'(z)|`` over cloud points with ``z`` and ``f^N z`` in the disk of radius ``R``.

    The chain of maps is applied forwards from ``cloud``; the result is the
    fitted constant ``C_{R,N}`` for ``N = 1..n_max`` together with a flag when
    the constants grow with ``N``.
    """
    z = _as_complex(cloud)
    z = z[np.abs(z) <= R]
    logd = np.zeros(z.size)
    cur = z.copy()
    out = []
    for n in range(n_max):
        logd = logd + np.log(np.abs(maps[n].deriv(cur)))
        cur = maps[n].value(cur)
        inside = np.abs(cur) <= R
        out.append(float(np.exp(logd[inside].max())) if inside.any() else float("nan"))
    vals = np.array(out)
    finite = np.isfinite(vals)
    grows = bool(finite.sum() > 1 and np.all(np.diff(vals[finite]) > 0))
    return {"N": np.arange(1, n_max + 1), "C": vals, "grows": grows}


# -- families over an orbit ----------------------------------------------------

_FAMILIES = {
    "exp": lambda p, md: ExpMap(eta=p, **md),
    "tangent": lambda p, md: TangentMap(lam=p, **md),
    "square": lambda p, md: SquareMap(**md),
    "linear": lambda p, md: LinearMap(a=p, **md),
}


@dataclass(frozen=True)
class FamilySpec:
    """Named family with declared growth metadata."""

    name: str = "exp"
    alpha1: float = 0.0
    alpha2: float = 1.0
    kappa: float = 2.0
    growth: GrowthProfile = field(default_factory=GrowthProfile)

    def __post_init__(self):
        if self.name not in _FAMILIES:
            raise ConfigError(f"unknown family {self.name!r}")
        if self.alpha1 + self.alpha2 <= 0 or self.alpha2 <= max(0.0, -self.alpha1):
            raise ConfigError("need alpha1 + alpha2 > 0 and alpha2 > max(0, -alpha1)")

    def make(self, param) -> FiberMap:
        md = {"alpha1": self.alpha1, "alpha2": self.alpha2, "kappa": self.kappa}
        return _FAMILIES[self.name](param, md)


def orbit_maps(system, family: FamilySpec, x, start: int, stop: int) -> list:
    """Maps ``f_{theta^j x}`` for ``start <= j < stop``."""
    from .driving import advance

    return [family.make(system.parameter(advance(system, x, j))) for j in range(start, stop)]


def repelling_fixed_point(fmap: FiberMap) -> Optional[complex]:
    """Real repelling fixed point for the real exp and tangent families, if any."""
    if isinstance(fmap, ExpMap) and abs(complex(fmap.eta).imag) == 0.0:
        eta = complex(fmap.eta).real
        if 0 < eta < 1.0 / math.e:
            from scipy.special import lambertw

            return complex(-lambertw(-eta, -1).real)
    if isinstance(fmap, SquareMap):
        return 1.0 + 0j
    if isinstance(fmap, LinearMap):
        return 0j
    return None

