import math

import mpmath
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from randtrans import nevanlinna as nv
from randtrans.errors import DivergenceError, FitError, HypothesisError
from randtrans.maps import ExpMap, LinearMap, identity_map

EXP = ExpMap(eta=0.2)
finite = st.complex_numbers(max_magnitude=1e3, allow_nan=False, allow_infinity=False)


# -- chordal distance ----------------------------------------------------------

def test_chordal_distance_examples():
    assert nv.chordal_distance(0, None) == 1.0
    assert nv.chordal_distance(0, complex("inf")) == 1.0
    assert nv.chordal_distance(2 + 1j, 2 + 1j) == 0.0
    assert nv.chordal_distance(0, 1) == pytest.approx(1 / math.sqrt(2), abs=1e-15)


@settings(max_examples=300, deadline=None)
@given(finite, finite, finite)
def test_chordal_distance_is_metric(a, b, c):
    ab, ba = nv.chordal_distance(a, b), nv.chordal_distance(b, a)
    assert ab == ba
    assert 0.0 <= ab <= 1.0
    assert ab <= nv.chordal_distance(a, c) + nv.chordal_distance(c, b) + 1e-12


# -- characteristic ------------------------------------------------------------

def test_identity_area_and_characteristic_closed_forms():
    tab = nv.characteristic(identity_map(), [0.5, 1.0, 3.0])
    assert np.allclose(tab.A, tab.radii**2 / (1 + tab.radii**2), rtol=1e-12)
    assert np.allclose(tab.T, 0.5 * np.log1p(tab.radii**2), rtol=1e-10)
    assert tab.T[1] == pytest.approx(0.5 * math.log(2), abs=1e-10)


def test_spherical_area_error_bar_and_limit():
    val, err = nv.spherical_area(identity_map(), 1.0)
    assert val == pytest.approx(0.5, abs=1e-10)
    assert nv.spherical_area(identity_map(), 1e3)[0] == pytest.approx(1.0, abs=1e-5)
    v5, e5 = nv.spherical_area(EXP, 5.0)
    assert e5 <= 1e-4 * v5


def test_characteristic_small_radius_tends_to_zero():
    assert nv.characteristic(EXP, [1e-6]).T[0] < 1e-12


def test_characteristic_monotone_and_linear_growth():
    radii = np.geomspace(0.5, 200, 25)
    tab = nv.characteristic(EXP, radii)
    assert np.all(np.diff(tab.T) >= 0)
    assert np.all(tab.A >= 0)
    # T(r)/r approaches 1/pi; the slope of the table does too
    slope = np.polyfit(radii[-6:], tab.T[-6:], 1)[0]
    assert slope == pytest.approx(1 / math.pi, rel=0.02)


def test_order_estimate():
    assert nv.order_estimate(nv.characteristic(EXP, np.geomspace(1, 1e3, 30))) == pytest.approx(1.0, abs=0.1)
    ident = nv.order_estimate(nv.characteristic(identity_map(), np.geomspace(1, 1e6, 30)))
    assert abs(ident) < 0.1
    const = nv.CharacteristicTable(np.geomspace(1, 100, 5), np.ones(5), np.ones(5), np.zeros(5))
    assert nv.order_estimate(const) == 0.0
    short = nv.CharacteristicTable(np.array([1.0, 2.0, 3.0]), np.ones(3), np.ones(3), np.zeros(3))
    with pytest.raises(FitError):
        nv.order_estimate(short)


# -- counting ------------------------------------------------------------------

def test_counting_examples():
    c10 = nv.counting(EXP, 0.2, 10.0)
    assert c10.n == 3
    c1 = nv.counting(EXP, 0.2, 1.0)
    assert c1.n == 1 and c1.N == 0.0
    c20 = nv.counting(EXP, 0.2, 20.0)
    oracle = sum(math.log(20 / (2 * math.pi * abs(k))) for k in range(-3, 4) if k) + math.log(20)
    assert c20.n == 7
    assert c20.N == pytest.approx(oracle, rel=1e-14)


@pytest.mark.parametrize("w", [0.5, 2.0, 1 + 1j, -3.0])
def test_counting_log_sum_matches_quadrature(w):
    r = 25.0
    zs = EXP.preimages(np.complex128(w), EXP.branch_range(w, r))
    mods = np.sort(np.abs(zs))
    # integrate n(t)/t piecewise between the sorted moduli
    edges = np.concatenate((mods, [r]))
    quad = sum((i + 1) * mpmath.quad(lambda t: 1 / t, [edges[i], edges[i + 1]]) for i in range(mods.size))
    assert nv.counting(EXP, w, r).N == pytest.approx(float(quad), abs=1e-8)


# -- first main theorem ----------------------------------------------------------

@pytest.mark.parametrize("w", [0.5, 2.0, 1 + 1j, None])
def test_first_main_theorem_identity_with_proximity(w):
    # N - T - log(1/[f0, w]) = -m(r, w) holds with equality for entire maps
    f0 = EXP.value(0.0)
    for r in (2.0, 10.0):
        N = 0.0 if w is None else nv.counting(EXP, w, r).N
        T = nv.characteristic(EXP, [r]).T[0]
        lhs = N - T - math.log(1 / nv.chordal_distance(f0, w))
        assert lhs == pytest.approx(-nv.proximity(EXP, w, r), abs=1e-9)


def test_fmt_check_margins():
    rep = nv.fmt_check(EXP, 2.0, np.linspace(1, 20, 8))
    assert rep.max_violation <= 1e-3
    ident = nv.fmt_check(identity_map(), 1.0, [0.5, 2.0, 10.0])
    assert np.all(ident.margin >= -1e-9)
    with pytest.raises(ValueError):
        nv.fmt_check(EXP, 0.2, [1.0])


# -- second main theorem -------------------------------------------------------

def test_d_ring_ordered_pairs():
    assert nv.d_ring([0, 1, None]) == pytest.approx(4 * math.log(2), abs=1e-14)
    with pytest.raises(HypothesisError):
        nv.d_ring([0.1, 0.1, 1.0])


def test_smt_config_constants_exact():
    cfg = nv.SmtErrorConfig(L=2.0)
    assert cfg.r0 == 2.0 * math.exp(math.e)
    assert cfg.b1 == math.e * (1 + (2.0 * math.exp(math.e)) ** 2)
    with pytest.raises(ValueError):
        nv.SmtErrorConfig(L=0.5)


def test_smt_error_term_two_paths():
    cfg = nv.SmtErrorConfig(L=2.0)
    targets = [0, 1, None]
    full, simple = nv.smt_error_term(cfg, math.e, targets, cfg.r0)
    with mpmath.workdps(40):
        L = mpmath.mpf(2)
        r0 = L * mpmath.e ** mpmath.e
        b1 = mpmath.e * (1 + r0**2)
        oracle = (
            2 * mpmath.log(108 + 18 * mpmath.log(2))
            + mpmath.log(b1) / 2
            + 1
            + 4 * mpmath.log(mpmath.e)
            + mpmath.log(r0) / 2
            + mpmath.log(L)
            + 4 * mpmath.log(2)
        )
    assert full == pytest.approx(float(oracle), rel=1e-13)
    with pytest.raises(ValueError):
        nv.smt_error_term(cfg, math.e, targets, cfg.r0 - 1)


def test_calibrated_b6_dominates_full_term():
    cfg = nv.SmtErrorConfig(L=5.25)
    for r in np.geomspace(cfg.r0, 1e6, 40):
        full, simple = nv.smt_error_term(cfg, cfg.c_rho * r, [0.1, 0.1 + 0.05j, 0.1 - 0.05j], r)
        assert full <= simple + 1e-12


def test_smt_lower_bound_holds_on_exp():
    cfg = nv.SmtErrorConfig(L=5.25)
    rep = nv.smt_lower_bound_check(EXP, [0.1, 0.1 + 0.05j, 0.1 - 0.05j], np.linspace(cfg.r0, 120, 4), cfg)
    assert np.all(rep.margin >= 0)


def test_smt_hypotheses_enforced():
    with pytest.raises(HypothesisError, match=r"\(1\)"):
        nv.smt_lower_bound_check(EXP, [0.1, 0.2, 0.3], [100.0], nv.SmtErrorConfig(L=2.0))
    with pytest.raises(HypothesisError):
        nv.smt_lower_bound_check(EXP, [0.1, 0.1, 0.3], [100.0], nv.SmtErrorConfig(L=5.25))


# -- tail sums -----------------------------------------------------------------

def test_tail_sum_zeta_oracle():
    ts = nv.tail_sum(EXP, 0.2, 2.0, 1.0)
    assert ts.value == pytest.approx(1 / 12, abs=1e-8)
    assert ts.rel_diff <= 1e-8


def test_tail_sum_partial_zeta_at_r10():
    ts = nv.tail_sum(EXP, 0.2, 2.0, 10.0)
    oracle = 2 * float(mpmath.zeta(2, 2)) / (4 * math.pi**2)
    assert ts.value == pytest.approx(oracle, rel=1e-10)


@pytest.mark.parametrize("s", [1.5, 2.0, 3.0])
@pytest.mark.parametrize("R", [1.0, 5.0, 10.0])
def test_tail_sum_dual_route_sweep(s, R):
    assert nv.tail_sum(EXP, 0.7 + 0.3j, s, R).rel_diff <= 1e-8


def test_tail_sum_divergence_guard():
    with pytest.raises(DivergenceError):
        nv.tail_sum(EXP, 0.2, 1.0, 1.0)
    with pytest.raises(ValueError):
        nv.tail_sum(LinearMap(a=2.0), 0.2, 2.0, 1.0)
