import math

import mpmath
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from randtrans import transfer as T
from randtrans.driving import BasePoint, CircleRotation
from randtrans.errors import ConfigError, DivergenceError
from randtrans.maps import ExpMap, FamilySpec, LinearMap, identity_map

EXP = ExpMap(eta=0.2)
CFG = T.PotentialConfig()


def random_grid(n, seed, box=(0.5, 8.0, -12.0, 12.0)):
    rng = np.random.default_rng(seed)
    pts = rng.uniform(box[0], box[1], n) + 1j * rng.uniform(box[2], box[3], n)
    return T.FiberGrid(pts, r_max=30.0)


@pytest.fixture(scope="module")
def chain():
    return T.FiberChain(CircleRotation(), FamilySpec("exp"), BasePoint(0.3), 0, 12, CFG)


# -- pointwise ----------------------------------------------------------------------

def test_sigma_tau_identity_and_euclidean():
    z = np.array([0.3, 2 - 1j, -5j])
    np.testing.assert_allclose(T.sigma_tau_deriv(identity_map(), z, 0.7), 1.0)
    np.testing.assert_allclose(T.sigma_tau_deriv(EXP, z, 0.0), np.abs(EXP.deriv(z)), rtol=1e-15)


def test_sigma_tau_exp_value():
    expect = 0.2 * math.e * (2 / (1 + 0.2 * math.e)) ** 0.5
    # second path: spelled out with mpmath
    alt = float(mpmath.mpf("0.2") * mpmath.e * mpmath.sqrt(2 / (1 + mpmath.mpf("0.2") * mpmath.e)))
    assert T.sigma_tau_deriv(EXP, 1.0, 0.5) == pytest.approx(expect, rel=1e-14)
    assert T.sigma_tau_deriv(EXP, 1.0, 0.5) == pytest.approx(alt, rel=1e-14)


def test_config_constraints():
    with pytest.raises(ConfigError):
        T.PotentialConfig(t=2.0, tau=0.5)  # tau_hat t = 1 is not above the order
    with pytest.raises(ConfigError):
        T.PotentialConfig(tau=1.2)
    assert T.PotentialConfig().decay_exponent == 1.5


# -- operator values ------------------------------------------------------------------

def test_transfer_one_doubled_truncation():
    cfg = T.PotentialConfig(t=3.0)
    # the budget relies on balanced growth, which for exp needs |w| >= 1 (true on the Julia set)
    for w in (3.0, 4 + 2j, 10j):
        a = T.transfer_one(EXP, w, cfg, k_max=200)
        b = T.transfer_one(EXP, w, cfg, k_max=400)
        assert 0 <= b - a <= T.truncated_tail_bound(EXP, w, cfg, k_max=200)
    w = 0.2
    b = T.transfer_one(EXP, w, cfg, k_max=400)
    # direct sum over the lattice 2 pi i k at w = eta
    ks = np.arange(-400, 401)
    z = 2j * np.pi * ks
    direct = math.fsum(np.abs(0.2 * np.exp(z)) ** -3 * ((1 + 0.2) / (1 + np.abs(z))) ** 1.5)
    assert b == pytest.approx(direct, rel=1e-13)


def test_tail_bound_zeta_oracle():
    cfg = T.PotentialConfig(t=2.0, tau=0.5, alpha1=0.5)  # tau_hat t = 2
    w = 0.5
    bound = T.truncated_tail_bound(EXP, w, cfg, k_max=10)
    closed = cfg.kappa**2 * 2 * float(mpmath.zeta(2, 11)) / (2 * math.pi) ** 2
    assert bound <= closed
    assert bound > 0.5 * closed / (1 + w) ** cfg.decay_exponent


def test_tail_bound_monotone_to_zero():
    vals = [T.truncated_tail_bound(EXP, 1.0 + 1j, CFG, k) for k in (5, 20, 80, 320)]
    assert all(a > b for a, b in zip(vals, vals[1:]))
    # tail of a lattice sum of |z|^-s with s = 1.5 decays like k_max^-(s-1)
    scaled = np.array(vals) * np.sqrt(np.array([5, 20, 80, 320]) + 0.5)
    assert np.ptp(scaled) < 0.05 * scaled.mean()


def test_tail_bound_guard():
    cfg = T.PotentialConfig()
    object.__setattr__(cfg, "t", 1.5)  # bypass validation to reach the guard
    with pytest.raises(DivergenceError):
        T.truncated_tail_bound(EXP, 1.0, cfg, 10)


def test_truncation_monotone_within_bound():
    for w in (3.0, 2 + 1j, 10j):
        prev = T.transfer_one(EXP, w, CFG, 20)
        bound = T.truncated_tail_bound(EXP, w, CFG, 20)
        for k in (40, 80):
            nxt = T.transfer_one(EXP, w, CFG, k)
            assert 0 <= nxt - prev <= bound
            prev, bound = nxt, T.truncated_tail_bound(EXP, w, CFG, k)


def test_decay_far_field():
    rep = T.operator_sup_bound_check([EXP, ExpMap(eta=0.25)], CFG, np.geomspace(1, 1000, 30) * np.exp(0.4j))
    vals = rep.values
    assert vals[:, -3:].max() < vals[:, :3].min()
    assert rep.exponent > 0 and np.isfinite(rep.envelope)


# -- grid operators --------------------------------------------------------------------

def test_zero_and_identity():
    g = random_grid(40, 0)
    op = T.build_operator(identity_map(), g, g, CFG)
    vals = np.random.default_rng(1).normal(size=40)
    np.testing.assert_allclose(T.apply_transfer(op, T.GridDensity(g, vals)).values, vals, rtol=1e-14)
    op2 = T.build_operator(EXP, random_grid(40, 2), g, CFG)
    assert np.all(op2.apply(np.zeros(40)) == 0)


def test_point_mass_pullback_single_branch():
    g = random_grid(30, 3)
    op = T.build_operator(identity_map(), g, g, CFG)
    w = np.zeros(30)
    w[7] = 1.0
    res = T.dual_apply(op, T.GridMeasure(g, w))
    assert res.measure.weights[7] == pytest.approx(1.0) and res.measure.weights.sum() == pytest.approx(1.0)


@settings(max_examples=40, deadline=None)
@given(st.integers(5, 50), st.integers(5, 50), st.integers(0, 10**6), st.integers(1, 9))
def test_duality_exact(n_src, n_dst, seed, kmax):
    cfg = T.PotentialConfig(k_max=kmax, eps_tail=1e9)
    src, dst = random_grid(n_src, seed), random_grid(n_dst, seed + 1)
    op = T.build_operator(EXP, src, dst, cfg)
    rng = np.random.default_rng(seed)
    g = rng.uniform(-1, 1, n_src)
    nu = T.GridMeasure(dst, rng.uniform(0, 1, n_dst))
    lhs = nu.integrate(op.apply(g))
    res = T.dual_apply(op, nu)
    rhs = float(np.dot(g, res.raw))
    assert abs(lhs - rhs) <= 1e-12 * max(1.0, abs(lhs))


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 10**6), st.floats(-3, 3), st.floats(-3, 3))
def test_linearity_and_positivity(seed, a, b):
    src, dst = random_grid(40, seed), random_grid(30, seed + 7)
    op = T.build_operator(EXP, src, dst, T.PotentialConfig(k_max=20, eps_tail=1e9))
    rng = np.random.default_rng(seed)
    g, h = rng.uniform(0, 1, 40), rng.uniform(0, 1, 40)
    lhs = op.apply(a * g + b * h)
    rhs = a * op.apply(g) + b * op.apply(h)
    assert np.allclose(lhs, rhs, rtol=0, atol=1e-12 * (1 + np.abs(rhs).max()))
    assert np.all(op.apply(g) >= 0)


def test_normalized_apply(chain):
    op = chain.operator(0)
    g = T.GridDensity(chain.grid(0), np.linspace(0.5, 1.5, len(chain.grid(0))))
    np.testing.assert_array_equal(T.normalized_apply(op, g, 1.0).values, T.apply_transfer(op, g).values)
    np.testing.assert_allclose(T.normalized_apply(op, g, 0.4).values,
                               2 * T.normalized_apply(op, g, 0.8).values, rtol=1e-15)


def test_three_step_composition(chain):
    lams = [0.3, 0.7, 1.9]
    g = np.cos(chain.grid(0).points.real)
    step = g
    for i in range(3):
        step = T.normalized_apply(chain.operator(i), T.GridDensity(chain.grid(i), step), lams[i]).values
    comp = (chain.operator(2).matrix @ chain.operator(1).matrix @ chain.operator(0).matrix) @ g / np.prod(lams)
    np.testing.assert_allclose(step, comp, rtol=1e-12, atol=1e-15)
    np.testing.assert_allclose(chain.push(0, 3, g, lams), comp, rtol=1e-12, atol=1e-15)


def test_composed_branch_data(chain):
    """Two-step operator from composed branches matches the product of one-step operators."""
    f0, f1 = chain.fmap(0), chain.fmap(1)
    g0, g2 = chain.grid(0), chain.grid(2)
    two = chain.push(0, 2, np.ones(len(g0)))
    w = g2.points[:25]
    k = np.arange(-CFG.k_max, CFG.k_max + 1)
    direct = []
    for wi in w:
        y = f1.preimages(np.complex128(wi), k)
        wt1 = T.branch_weights(f1, y, wi, CFG)
        keep = np.abs(y) <= g0.r_max
        total = 0.0
        for yi, a in zip(y[keep], wt1[keep]):
            z = f0.preimages(np.complex128(yi), k)
            total += a * math.fsum(T.branch_weights(f0, z, yi, CFG))
        direct.append(total)
    budget = 2 * max(chain.operator(0).tail_budget, chain.operator(1).tail_budget)
    rel = np.abs(np.array(direct) - two[:25]) / two[:25]
    assert np.median(rel) < 0.1
    assert np.all(np.abs(np.array(direct) - two[:25]) <= budget + 0.5 * two[:25])


# -- Holder norms -------------------------------------------------------------------------

def test_holder_constant_and_linear():
    g = random_grid(50, 4)
    hn = T.holder_norm(T.GridDensity.constant(g, -2.5), 0.5, 0.5)
    assert hn.v_beta == 0 and hn.norm == 2.5
    two = T.FiberGrid(np.array([0.0, 0.3 + 0.0j]))
    hn = T.holder_norm(T.GridDensity(two, two.points.real), 1.0, 0.5)
    assert hn.v_beta == pytest.approx(1.0)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 10**6), st.floats(0.1, 1.0), st.floats(0.2, 5.0))
def test_holder_brute_force(seed, beta, delta):
    g = random_grid(40, seed)
    vals = np.random.default_rng(seed).normal(size=40)
    hn = T.holder_norm(T.GridDensity(g, vals), beta, delta)
    best = 0.0
    pts = g.points
    for i in range(39):
        d = np.abs(pts[i] - pts[i + 1:])
        ratio = np.abs(vals[i] - vals[i + 1:]) / d**beta
        near = d <= delta
        if near.any():
            best = max(best, float(ratio[near].max()))
    assert hn.v_beta == best


# -- distortion ------------------------------------------------------------------------------

def test_distortion_examples(chain):
    g = T.FiberGrid(np.array([1.0 + 0j, 1.0 + 0j]))
    assert T.distortion_constant(np.array([2.0, 2.0]), g, 0.5) == 0.0
    lat = np.add.outer(np.arange(10), 1j * np.arange(10)).ravel() * 0.2
    flat = T.FiberGrid(lat)
    op = T.build_operator(LinearMap(a=1j), flat, flat, T.PotentialConfig())
    assert T.distortion_constant(op.ones_image, flat, 0.5) == 0.0
    rep = T.distortion_check([chain], 0.25, ns=(1, 2, 4))
    assert np.all(np.isfinite(rep.k_fit)) and rep.k_fit.max() > 0


def test_two_norm_constant_and_zero_variation(chain):
    one = [np.ones(len(chain.grid(0)))]
    rep = T.two_norm_check(chain, one, [1, 2, 4], 2.0, 0.68, 2.84, 0.25, 0.5)
    assert rep.min_margin >= 0
    assert rep.coefficients[0] > rep.coefficients[-1]
