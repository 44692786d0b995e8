import numpy as np
import pytest
from scipy import sparse

from randtrans import gibbs as G
from randtrans import stats as S
from randtrans import transfer as T
from randtrans.driving import BasePoint, CircleRotation
from randtrans.errors import InsufficientSamplesError
from randtrans.maps import FamilySpec

FIBERS = list(range(30, 45))


def re_clip(z):
    return np.clip(z.real, -5, 5)


def radial(z):
    return np.minimum(np.abs(z), 5.0)


@pytest.fixture(scope="module")
def family():
    ch = T.FiberChain(CircleRotation(), FamilySpec("exp"), BasePoint(0.3), 0, 90, T.PotentialConfig())
    return G.build_family(ch)


def test_constant_h_gives_zero(family):
    rep = S.correlation(family, FIBERS, re_clip, lambda z: np.full(z.shape, 3.0), range(0, 4))
    assert np.all(rep.values < 1e-14)


def test_zero_step_is_covariance(family):
    rep = S.correlation(family, FIBERS, re_clip, radial, [0])
    cov = []
    for j in FIBERS:
        mu = family.mu(j)
        pts = family.chain.grid(j).points
        h = radial(pts) - mu.integrate(radial(pts))
        cov.append(mu.integrate(re_clip(pts) * h))
    assert rep.signed[0] == pytest.approx(np.mean(cov), rel=1e-12)


def test_bilinear(family):
    ns = [1, 3]
    a = S.correlation(family, FIBERS, re_clip, radial, ns).signed
    b = S.correlation(family, FIBERS, radial, radial, ns).signed
    ab = S.correlation(family, FIBERS, lambda z: 2 * re_clip(z) - 0.5 * radial(z), radial, ns).signed
    np.testing.assert_allclose(ab, 2 * a - 0.5 * b, atol=1e-10)


def test_correlation_decays(family):
    rep = S.correlation(family, FIBERS, re_clip, re_clip, range(0, 16))
    assert rep.fit.r2 >= 0.9 and rep.theta < 1
    assert len(rep.rows()) == 16


def test_kernel_is_stochastic_and_dual(family):
    K = S.q_kernel(family, 40)
    mass = np.asarray(K.matrix.sum(axis=1)).ravel()
    nu = family.nus[40].weights
    lam = family.lams[40]
    np.testing.assert_allclose(mass[nu > 0], lam * nu[nu > 0], rtol=1e-10)
    # mu_j pushed through the kernel is mu_{j+1}
    mu = family.mu(40).weights
    trans = sparse.diags(1 / np.where(mass > 0, mass, 1)) @ K.matrix
    np.testing.assert_allclose(trans.T @ mu, family.mu(41).weights, atol=1e-12)


def test_kernel_sampler_frequencies():
    p = np.array([0.1, 0.0, 0.6, 0.3])
    K = S.GridKernel(sparse.csr_matrix(np.vstack([p, p[::-1], np.zeros(4)])))
    rng = np.random.default_rng(0)
    draws = K.sample(np.zeros(40000, dtype=np.int64), rng)
    freq = np.bincount(draws, minlength=4) / draws.size
    np.testing.assert_allclose(freq, p, atol=0.01)
    assert K.sample(np.array([2]), rng)[0] == -1


def test_monte_carlo_oracle(family):
    ns = [1, 2, 5]
    op = S.correlation(family, FIBERS, re_clip, re_clip, ns)
    mc = S.mc_correlation(family, FIBERS, re_clip, re_clip, ns, n_traj=30_000, seed=2)
    assert np.all(mc.z_scores(op.signed) < 3.0)


def test_mc_needs_samples(family):
    with pytest.raises(InsufficientSamplesError):
        S.mc_correlation(family, FIBERS, re_clip, re_clip, [1], n_traj=10)


def test_green_kubo_stable(family):
    gk = S.green_kubo(family, FIBERS, radial)
    assert gk.sigma2 > 0 and gk.stable
    assert gk.k_trunc < 30


def test_zero_observable_is_coboundary(family):
    zero = lambda z: np.zeros(z.shape)
    rep, gk = S.birkhoff_clt(family, range(30, 40), zero, n=20, samples=600, seed=1)
    assert rep.coboundary and not rep.passed
    assert np.all(rep.scaled == 0)


def test_short_clt_runs(family):
    rep, gk = S.birkhoff_clt(family, range(30, 50), radial, n=30, samples=1000, seed=3)
    assert rep.resampled == 0
    assert rep.samples == 1000 and len(rep.quantile_rows()) == 99
    # the sample variance of S_n / sqrt(n) approaches sigma^2 up to O(1/n) corrections
    assert np.var(rep.scaled) == pytest.approx(gk.sigma2, rel=0.2)


def test_clt_rejects_few_samples():
    with pytest.raises(InsufficientSamplesError):
        S.clt_report(np.zeros(10), 5, 1.0)


def test_iid_fixture_passes():
    rep = S.iid_clt(n=2000, samples=5000, seed=11)
    assert rep.passed and rep.p_value > 0.01


def test_koopman_dual(family):
    one = np.ones(len(family.chain.grid(40)))
    np.testing.assert_allclose(S.koopman_dual_apply(family, 40, one).values, 1.0, atol=5e-3)
    assert np.all(S.koopman_dual_apply(family, 40, 0 * one).values == 0)


def test_gordin_terms_decay(family):
    gt = S.gordin_terms(family, 35, radial, 20)
    assert gt.fit is not None and gt.fit.rate < 1 and gt.fit.r2 > 0.9
    assert gt.partial[-1] - gt.partial[-5] < 1e-3 * gt.partial[-1]
