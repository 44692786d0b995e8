import cmath
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from randtrans import maps as M
from randtrans.errors import (
    BranchMismatchError,
    ConfigError,
    EmptyRangeError,
    InsufficientSamplesError,
    NoCandidateError,
    OmittedValueError,
    PoleError,
    SingularValueError,
)

EXP = M.ExpMap(eta=0.2)
TAN = M.TangentMap(lam=0.5)
SQ = M.SquareMap()

moderate = st.complex_numbers(max_magnitude=20, allow_nan=False, allow_infinity=False)


def test_values():
    assert M.evaluate(EXP, 0) == pytest.approx(0.2, abs=1e-15)
    assert M.evaluate(EXP, 1j * math.pi) == pytest.approx(-0.2, abs=1e-15)
    assert M.evaluate(TAN, math.pi / 4) == pytest.approx(0.5, abs=1e-15)


def test_derivatives():
    assert M.deriv(EXP, 0) == pytest.approx(0.2)
    assert M.deriv(SQ, 1 + 1j) == 2 + 2j
    assert M.deriv(TAN, 0) == pytest.approx(0.5)


def test_spherical_derivatives():
    assert M.spherical_deriv(EXP, 0) == pytest.approx(0.2 / 1.04, abs=1e-12)
    assert M.spherical_deriv(SQ, 0) == 0.0
    assert M.spherical_deriv(M.TangentMap(lam=1.0), 0) == pytest.approx(1.0)


def test_pole_detection():
    with pytest.raises(PoleError):
        M.evaluate(TAN, math.pi / 2)
    # the regularised spherical derivative is finite at the pole
    assert np.isfinite(TAN.spherical_deriv(math.pi / 2))


def test_exp_preimage_examples():
    got = M.preimages(EXP, 0.2, range(-2, 3))
    assert [k for k, _ in got] == [0, -1, 1, -2, 2]
    np.testing.assert_allclose(sorted(z.imag for _, z in got), 2 * math.pi * np.arange(-2, 3), atol=1e-14)
    assert M.preimages(EXP, 0.2 * math.e, [0])[0][1] == pytest.approx(1.0, abs=1e-15)


def test_tangent_preimage_example():
    got = M.preimages(TAN, 0.5, [0, 1])
    assert got[0][1] == pytest.approx(math.pi / 4)
    assert got[1][1] == pytest.approx(math.pi / 4 + math.pi)


def test_preimage_errors():
    with pytest.raises(OmittedValueError):
        M.preimages(EXP, 0.0, [0])
    with pytest.raises(OmittedValueError):
        M.preimages(TAN, 0.5j, [0])
    with pytest.raises(EmptyRangeError):
        M.preimages(EXP, 1.0, [])


@settings(max_examples=200, deadline=None)
@given(moderate, st.integers(-50, 50))
def test_preimage_round_trip(w, k):
    if abs(w) < 1e-6:
        return
    for fmap in (EXP, TAN):
        if fmap is TAN and min(abs(w - 0.5j), abs(w + 0.5j)) < 1e-6:
            continue
        z = M.preimages(fmap, w, [k])[0][1]
        assert abs(complex(fmap.value(z)) - w) <= 1e-10 * (1 + abs(w))


@settings(max_examples=100, deadline=None)
@given(moderate, st.integers(-20, 20), st.integers(-20, 20))
def test_branch_separation(w, j, k):
    if abs(w) < 1e-6 or min(abs(w - 0.5j), abs(w + 0.5j)) < 1e-6:
        return
    ze = dict(M.preimages(EXP, w, sorted({j, k})))
    assert ze[k].imag - ze[j].imag == pytest.approx(2 * math.pi * (k - j), abs=1e-9)
    zt = dict(M.preimages(TAN, w, sorted({j, k})))
    assert zt[k].real - zt[j].real == pytest.approx(math.pi * (k - j), abs=1e-9)


@settings(max_examples=100, deadline=None)
@given(moderate)
def test_derivative_identities(z):
    fz = EXP.value(z)
    assert abs(EXP.deriv(z) - fz) <= 1e-12 * (1 + abs(fz))
    if np.all(TAN._pole_distance(z) > 1e-3) and abs(z.imag) < 15:
        lam = TAN.lam
        ft = TAN.value(z)
        expect = lam + ft**2 / lam
        assert abs(TAN.deriv(z) - expect) <= 1e-12 * (1 + abs(expect))


def test_inverse_branch_examples():
    g = M.inverse_branch(EXP, 0.2, 2j * math.pi, 0.1)
    assert g(0.2) == 2j * math.pi
    assert g(0.2 * math.e) == pytest.approx(1 + 2j * math.pi, abs=1e-14)
    # independent Newton refinement from the anchor agrees
    z = 2j * math.pi
    for _ in range(60):
        z -= (0.2 * cmath.exp(z) - 0.2 * math.e) / (0.2 * cmath.exp(z))
    assert g(0.2 * math.e) == pytest.approx(z, abs=1e-12)
    gt = M.inverse_branch(TAN, 0.0, math.pi, 0.1)
    assert gt(0.0) == math.pi


@settings(max_examples=100, deadline=None)
@given(st.floats(-0.5, 0.5), st.floats(-0.5, 0.5), st.integers(-5, 5))
def test_inverse_branch_derivative(dx, dy, k):
    w = 1.0 + 0.5j
    z0 = M.preimages(EXP, w, [k])[0][1]
    g = M.inverse_branch(EXP, w, z0, 0.9)
    u = w + complex(dx, dy)
    h = 1e-6
    fd = (g(u + h) - g(u - h)) / (2 * h)
    assert abs(fd - g.derivative(u)) <= 1e-6 * abs(g.derivative(u))
    assert abs(complex(EXP.value(g(u))) - u) <= 1e-10 * (1 + abs(u))


def test_inverse_branch_errors():
    with pytest.raises(SingularValueError):
        M.inverse_branch(EXP, 0.1, M.preimages(EXP, 0.1, [0])[0][1], 0.5)
    with pytest.raises(BranchMismatchError):
        M.inverse_branch(EXP, 0.2, 1.0, 0.01)
    with pytest.raises(SingularValueError):
        M.inverse_branch(TAN, 0.4j, M.preimages(TAN, 0.4j, [0])[0][1], 0.2)


def test_balanced_growth():
    rng = np.random.default_rng(0)
    z = rng.uniform(2, 10, 500) + 1j * rng.uniform(-30, 30, 500)
    rep = M.check_balanced_growth(EXP, z, kappa=2.0)
    assert np.all(np.abs(EXP.value(z)) >= 1)
    assert rep.passed and rep.upper <= 1.0 and rep.lower >= 0.5
    with pytest.raises(InsufficientSamplesError):
        M.check_balanced_growth(EXP, z[:50])


@settings(max_examples=50, deadline=None)
@given(st.lists(st.tuples(st.floats(0.1, 15), st.floats(-40, 40)), min_size=100, max_size=150))
def test_balanced_growth_implication(pts):
    z = np.array([complex(a, b) for a, b in pts])
    if np.all(np.abs(EXP.value(z)) >= 1):
        assert M.check_balanced_growth(EXP, z, kappa=2.0).passed
    assert M.check_balanced_growth(EXP, z, kappa=2.0).upper <= 1.0


def test_tangent_growth_reported():
    z = np.linspace(0.1, 1.2, 200) + 0.3j
    rep = M.check_balanced_growth(M.TangentMap(lam=1.0, alpha2=2.0), z)
    assert np.isfinite(rep.kappa_fit) and rep.n_samples == 200


def test_growth_profile_exp():
    prof = M.check_growth_profile(EXP, M.GrowthProfile(), [5.0, 10.0, 20.0, 40.0])
    assert prof["passed"] and prof["log_over_omega_decreasing"]


def test_normalize_square_fixture():
    circle = np.exp(2j * np.pi * np.arange(64) / 64)
    nd = M.normalize([SQ], [circle, circle], T=2.0, tol=1e-9)
    assert abs(abs(nd.base_points[0]) - 1) < 1e-12
    assert nd.defects[0] <= 1e-9
    with pytest.raises(NoCandidateError):
        M.normalize([SQ], [circle, circle], T=0.5, tol=1e-9)


def test_family_spec():
    assert isinstance(M.FamilySpec("exp").make(0.2), M.ExpMap)
    assert M.FamilySpec("linear").make(2.0).a == 2.0
    with pytest.raises(ConfigError):
        M.FamilySpec("nosuch")
    with pytest.raises(ConfigError):
        M.FamilySpec("exp", alpha1=-1.0, alpha2=0.5)


def test_repelling_fixed_point():
    q = M.repelling_fixed_point(EXP)
    assert abs(complex(EXP.value(q)) - q) < 1e-12 and abs(EXP.deriv(q)) > 1
    assert M.repelling_fixed_point(SQ) == 1
