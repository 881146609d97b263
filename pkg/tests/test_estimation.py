import numpy as np
import pytest
import scipy.linalg as sla
from hypothesis import given, settings, strategies as st

from umsim.denoisers import FunctionDenoiser, LinearShrinkage, TweedieDenoiser
from umsim.estimation import (LeastSquaresEstimator, LMMSEEstimator, OAMPEstimator, lipschitz_probe,
                              lmmse_estimate, lmmse_mse, ls_estimate, nmse, oamp_estimate, oamp_iteration_map)
from umsim.exceptions import DivergenceError, InvalidParameterError, NumericalRankError
from umsim.measurement import build_pilot_operator, noise_variance_for_snr, observe
from umsim.priors import BernoulliGaussianPrior, GaussianPrior


def cvec(rng, *shape):
    return (rng.standard_normal(shape) + 1j * rng.standard_normal(shape)) / np.sqrt(2)


def noisy_problem(rng, prior, n, ratio, snr_db):
    h = prior.sample(rng)
    op = build_pilot_operator(n, ratio, rng=rng)
    op = op.with_noise(noise_variance_for_snr(op, h, snr_db))
    return h, op, observe(op, h, rng)


# -- least squares -------------------------------------------------------------

def test_ls_unitary_noiseless(rng):
    Q, _ = np.linalg.qr(cvec(rng, 16, 16))
    h = cvec(rng, 16)
    np.testing.assert_allclose(ls_estimate(Q, Q @ h), h, atol=1e-12)


def test_ls_is_minimum_norm(rng):
    M = cvec(rng, 8, 16)
    h = cvec(rng, 16)
    est = ls_estimate(M, M @ h)
    null = sla.null_space(M)
    assert np.max(np.abs(null.conj().T @ est)) < 1e-12
    np.testing.assert_allclose(M @ est, M @ h, atol=1e-12)


def test_ls_matches_normal_equations(rng):
    M = cvec(rng, 8, 16)
    y = cvec(rng, 8)
    oracle = M.conj().T @ sla.cho_solve(sla.cho_factor(M @ M.conj().T), y)
    np.testing.assert_allclose(ls_estimate(M, y), oracle, atol=1e-12)


def test_ls_rejects_rank_deficient(rng):
    M = cvec(rng, 4, 16)
    M[3] = M[2]
    with pytest.raises(NumericalRankError):
        ls_estimate(M, cvec(rng, 4))


# -- LMMSE ---------------------------------------------------------------------

def test_lmmse_scalar_wiener(rng):
    y = cvec(rng, 10)
    est = lmmse_estimate(np.eye(10), y, 2.0 * np.eye(10), noise_variance=0.5)
    np.testing.assert_allclose(est, 0.8 * y, rtol=1e-13)


def test_lmmse_vanishing_noise_inverts(rng):
    M = cvec(rng, 12, 12)
    h = cvec(rng, 12)
    C = GaussianPrior.exponential(12, 0.5).covariance
    est = lmmse_estimate(M, M @ h, C, noise_variance=1e-14)
    np.testing.assert_allclose(est, np.linalg.solve(M, M @ h), atol=1e-6)


def test_lmmse_monte_carlo_mse(rng):
    n = 32
    prior = GaussianPrior.exponential(n, 0.8)
    op = build_pilot_operator(n, 0.5, rng=rng).with_noise(0.05)
    H = prior.sample(rng, size=10000)
    Y = observe(op, H, rng)
    est = lmmse_estimate(op, Y, prior.covariance)
    mc = np.mean(np.sum(np.abs(est - H) ** 2, axis=1))
    assert abs(mc / lmmse_mse(op, prior.covariance) - 1) < 0.03


# -- OAMP ----------------------------------------------------------------------

def test_oamp_identity_is_wiener(rng):
    prior = GaussianPrior.white(64, 2.0)
    h = prior.sample(rng)
    y = h + cvec(rng, 64) * np.sqrt(0.5)
    rep = oamp_estimate(np.eye(64), y, TweedieDenoiser(prior), noise_variance=0.5, tol=1e-10)
    np.testing.assert_allclose(rep.estimate, 0.8 * y, atol=1e-8)
    assert rep.iterations_used <= 3
    assert rep.converged


@pytest.mark.parametrize("prior", [GaussianPrior.white(128), GaussianPrior.exponential(128, 0.9)],
                         ids=["white", "correlated"])
def test_oamp_gaussian_reaches_lmmse(rng, prior):
    h, op, y = noisy_problem(rng, prior, 128, 0.3, 10.0)
    rep = oamp_estimate(op, y, TweedieDenoiser(prior), max_iter=200, tol=1e-12)
    ref = lmmse_estimate(op, y, prior.covariance)
    assert np.linalg.norm(rep.estimate - ref) / np.linalg.norm(ref) < 1e-5


def test_oamp_sparse_beats_ls():
    rng = np.random.default_rng(21)
    prior = BernoulliGaussianPrior(0.1, 10.0, 256)
    den = TweedieDenoiser(prior)
    wins = 0
    for _ in range(200):
        h, op, y = noisy_problem(rng, prior, 256, 0.3, 15.0)
        wins += nmse(oamp_estimate(op, y, den).estimate, h) < nmse(ls_estimate(op, y), h)
    assert wins == 200


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_oamp_reports_divergence(rng):
    h, op, y = noisy_problem(rng, GaussianPrior.white(32), 32, 0.5, 10.0)
    boom = FunctionDenoiser(lambda r, v: r * np.nan)
    with pytest.raises(DivergenceError) as info:
        oamp_estimate(op, y, boom)
    assert info.value.iteration == 1


def test_oamp_rejects_bad_damping(rng):
    h, op, y = noisy_problem(rng, GaussianPrior.white(16), 16, 0.5, 10.0)
    with pytest.raises(InvalidParameterError):
        oamp_estimate(op, y, LinearShrinkage(0.5), damping=0.0)


def test_residual_monotone_after_second_iteration():
    rng = np.random.default_rng(8)
    prior = GaussianPrior.exponential(128, 0.9)
    den = TweedieDenoiser(prior)
    bad = 0
    for _ in range(1000):
        h, op, y = noisy_problem(rng, prior, 128, 0.3, 10.0)
        r = np.asarray(oamp_estimate(op, y, den, damping=0.7).per_iteration_residual)
        bad += bool(np.any(np.diff(r[1:]) > 0))
    assert bad <= 10


def test_iteration_budget_tradeoff():
    rng = np.random.default_rng(9)
    prior = BernoulliGaussianPrior(0.1, 10.0, 256)
    den = TweedieDenoiser(prior)
    budgets = (1, 2, 4, 8, 16)
    res = np.empty((200, len(budgets)))
    for i in range(200):
        h, op, y = noisy_problem(rng, prior, 256, 0.3, 15.0)
        for j, t in enumerate(budgets):
            res[i, j] = nmse(oamp_estimate(op, y, den, max_iter=t, tol=0.0).estimate, h)
    med = np.median(res, axis=0)
    assert np.all(np.diff(med) <= 0), med


def test_bayes_collapse_across_snr(rng):
    prior = GaussianPrior.exponential(64, 0.7)
    den = TweedieDenoiser(prior)
    for snr in (0.0, 5.0, 10.0, 15.0, 20.0):
        h, op, y = noisy_problem(rng, prior, 64, 0.3, snr)
        rep = oamp_estimate(op, y, den, max_iter=300, tol=1e-12)
        ref = lmmse_estimate(op, y, prior.covariance)
        assert np.linalg.norm(rep.estimate - ref) <= 1e-5 * np.linalg.norm(ref)


# -- fixed-point diagnostics ---------------------------------------------------

def test_lipschitz_of_linear_maps(rng):
    sample = lambda r: cvec(r, 20)
    assert 0.5 - 1e-9 <= lipschitz_probe(lambda x: 0.5 * x, sample, 200, rng) <= 0.5 + 1e-12
    assert lipschitz_probe(lambda x: x, sample, 50, rng) == pytest.approx(1.0)


def test_lipschitz_flags_expansion(rng):
    assert lipschitz_probe(lambda x: 2.0 * x, lambda r: cvec(r, 20), 20, rng) == pytest.approx(2.0)


def test_oamp_map_is_contractive(rng):
    prior = GaussianPrior.white(128)
    h, op, y = noisy_problem(rng, prior, 128, 0.3, 10.0)
    T = oamp_iteration_map(op, y, TweedieDenoiser(prior), v2=1.0)
    assert lipschitz_probe(T, lambda r: prior.sample(r), 500, rng) < 1.0


# -- nmse ----------------------------------------------------------------------

def test_nmse_cases(rng):
    h = cvec(rng, 8)
    assert nmse(h, h) == -300.0
    assert nmse(np.zeros(8), h) == pytest.approx(0.0, abs=1e-12)
    assert nmse(2 * h, h) == pytest.approx(0.0, abs=1e-12)
    assert nmse(1.1 * h, h) == pytest.approx(-20.0)
    with pytest.raises(InvalidParameterError):
        nmse(h, np.zeros(8))


@settings(max_examples=50, deadline=None)
@given(st.floats(0.01, 100.0), st.floats(0.0, 2 * np.pi), st.integers(0, 2**32 - 1))
def test_nmse_scale_and_phase_invariant(scale, phase, seed):
    r = np.random.default_rng(seed)
    h, e = cvec(r, 16), cvec(r, 16)
    rot = scale * np.exp(1j * phase)
    assert nmse(rot * (h + e), rot * h) == pytest.approx(nmse(h + e, h), abs=1e-9)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**32 - 1), st.floats(0.1, 1.0))
def test_ls_consistent_with_observation(seed, ratio):
    r = np.random.default_rng(seed)
    op = build_pilot_operator(24, ratio, rng=r)
    y = cvec(r, op.shape[0])
    np.testing.assert_allclose(op.matrix @ ls_estimate(op, y), y, atol=1e-9)


# -- scikit-learn wrappers -----------------------------------------------------

def test_estimator_api(rng):
    prior = GaussianPrior.exponential(32, 0.6)
    op = build_pilot_operator(32, 0.5, rng=rng).with_noise(0.01)
    H = prior.sample(rng, size=5)
    Y = observe(op, H, rng)
    ls = LeastSquaresEstimator().fit(op)
    np.testing.assert_allclose(ls.predict(Y), ls_estimate(op, Y), atol=1e-12)
    lm = LMMSEEstimator(covariance=prior.covariance).fit(op)
    np.testing.assert_allclose(lm.predict(Y), lmmse_estimate(op, Y, prior.covariance), atol=1e-12)
    assert set(lm.get_params()) == {"covariance", "noise_variance"}
    om = OAMPEstimator(TweedieDenoiser(prior), max_iter=100, tol=1e-12).fit(op)
    est = om.predict(Y)
    assert est.shape == H.shape and len(om.reports_) == 5
    np.testing.assert_allclose(est, lm.predict(Y), atol=1e-6)
    assert lm.score(Y, H) > ls.score(Y, H)
    om.set_params(damping=0.5)
    assert om.get_params()["damping"] == 0.5


def test_sample_covariance_variant(rng):
    prior = GaussianPrior.exponential(16, 0.5)
    op = build_pilot_operator(16, 0.5, rng=rng).with_noise(0.1)
    lm = LMMSEEstimator().fit(op, channel_samples=prior.sample(rng, size=20000))
    assert np.max(np.abs(lm.covariance_ - prior.covariance)) < 0.05
    with pytest.raises(InvalidParameterError):
        LMMSEEstimator().fit(op)
