import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.stats import norm

from wienerqgs import nonlinearity as nlm
from wienerqgs.baselines import kalman_filter
from wienerqgs.gauss import GaussianMixture, check_covariance, mixture_moments
from wienerqgs.model import WienerModel, example, simulate
from wienerqgs.qgsf import (
    FilterOptions,
    NoLikelihoodSupportError,
    initial_prediction,
    measurement_update,
    run_filter,
    time_update,
)
from wienerqgs.quadrature import LikelihoodMixture, forced_likelihood, likelihood_mixture

from conftest import random_spd
from oracles import likelihood_on_grid


def forced(model, nl, y, t):
    return forced_likelihood(y)


@pytest.mark.parametrize("name", ["example1", "example2", "example3"])
def test_forced_likelihood_is_kalman_filter(name):
    model, g = example(name)
    traj = simulate(model, nlm.identity_map(), 100, seed=2)
    kf = kalman_filter(model, traj.y, traj.u)
    res = run_filter(model, g, traj.y, traj.u, FilterOptions(likelihood=forced))
    means, covs = res.moments()
    assert np.max(np.abs(means - kf.filt_means)) <= 1e-10
    assert np.max(np.abs(covs - kf.filt_covs)) <= 1e-10
    assert res.log_evidence == pytest.approx(kf.log_evidence, abs=1e-9)


def test_symmetric_pseudo_measurements():
    model, _ = example("example1")
    prior = GaussianMixture([0.0], [[0.3]], [[[1.2]]])
    u = np.array([0.4])
    r_hat = 1.1 * 0.3 + 1.5 * 0.4
    lik = LikelihoodMixture(np.zeros(2), np.array([r_hat - 2, r_hat + 2]), 0.0, np.array([0, 1]))
    post, _, _ = measurement_update(prior, lik, model, u)
    assert len(post) == 2
    np.testing.assert_allclose(post.weights, [0.5, 0.5], atol=1e-15)
    assert post.means[0, 0] + post.means[1, 0] == pytest.approx(2 * 0.3, abs=1e-14)
    np.testing.assert_array_equal(post.covs[0], post.covs[1])


def test_update_matches_single_kalman_step(rng):
    model, _ = example("example2")
    prior = GaussianMixture([0.0], rng.normal(size=(1, 2)), random_spd(rng, 2)[None])
    post, diag, log_ev = measurement_update(prior, forced_likelihood(1.3), model, [0.5])
    S = model.R + model.C[0] @ prior.covs[0] @ model.C[0]
    K = prior.covs[0] @ model.C[0] / S
    resid = 1.3 - model.C[0] @ prior.means[0] - model.D[0, 0] * 0.5
    np.testing.assert_allclose(post.means[0], prior.means[0] + K * resid, atol=1e-14)
    np.testing.assert_allclose(post.covs[0], prior.covs[0] - np.outer(K, K) * S, atol=1e-14)
    np.testing.assert_allclose(diag.gains[0, :, 0], K, atol=1e-14)
    assert log_ev == pytest.approx(norm.logpdf(resid, 0, np.sqrt(S)), abs=1e-13)


def test_example1_first_update_against_grid_bayes():
    model, g = example("example1")
    traj = simulate(model, g, 1, seed=0)
    grid = np.linspace(-6.0, 8.0, 4000)
    h = grid[1] - grid[0]
    lik = likelihood_on_grid(g, traj.y[0], model.C[0, 0] * grid + model.D[0, 0] * traj.u[0, 0], model.R, model.P)
    post = norm.pdf(grid, model.mu1[0], np.sqrt(model.P1[0, 0])) * lik
    post /= post.sum() * h
    f = run_filter(model, g, traj.y, traj.u).states[0].filtered
    assert np.sum(np.abs(post - f.pdf(grid[:, None]))) * h <= 1e-3


def test_time_update_identity(rng):
    model = WienerModel(A=np.eye(2), B=np.zeros((2, 1)), C=[[1, 0]], D=0, Q=np.zeros((2, 2)), R=1, P=1,
                        mu1=[0, 0], P1=np.eye(2))
    m = GaussianMixture(np.log([0.2, 0.8]), rng.normal(size=(2, 2)), np.array([random_spd(rng, 2)] * 2))
    out = time_update(m, model, [3.0])
    np.testing.assert_array_equal(out.log_weights, m.log_weights)
    np.testing.assert_array_equal(out.means, m.means)
    np.testing.assert_allclose(out.covs, m.covs, atol=1e-15)


def test_time_update_scalar():
    model, _ = example("example1")
    out = time_update(GaussianMixture([0.0], [[1.0]], [[[2.0]]]), model, [0.4])
    assert out.means[0, 0] == pytest.approx(0.9 + 2.5 * 0.4)
    assert out.covs[0, 0, 0] == pytest.approx(1 + 0.81 * 2)


def test_time_update_by_sampling():
    model, _ = example("example2")
    rng = np.random.default_rng(5)
    m = GaussianMixture(np.log([0.3, 0.7]), [[1.0, -1.0], [-2.0, 0.5]], [[[1.0, 0.2], [0.2, 0.5]], [[0.4, 0.0], [0.0, 2.0]]])
    u = np.array([0.7])
    out = time_update(m, model, u)
    S = 1_000_000
    comp = rng.choice(2, size=S, p=m.weights)
    L = np.linalg.cholesky(m.covs)
    x = m.means[comp] + np.einsum("sij,sj->si", L[comp], rng.standard_normal((S, 2)))
    xn = x @ model.A.T + model.B @ u + rng.standard_normal((S, 2)) @ np.linalg.cholesky(model.Q).T
    ref = mixture_moments(out)
    emp_mean = xn.mean(axis=0)
    emp_cov = np.cov(xn.T)
    sd = np.sqrt(np.diag(ref.cov))
    assert np.all(np.abs(emp_mean - ref.mean) < 4 * sd / np.sqrt(S))
    se = np.sqrt((np.outer(sd, sd) ** 2 + ref.cov**2) / S)
    assert np.all(np.abs(emp_cov - ref.cov) < 4 * se)


def test_single_step_run_is_one_update():
    model, g = example("example3")
    traj = simulate(model, g, 1, seed=4)
    res = run_filter(model, g, traj.y, traj.u, FilterOptions(max_components=10_000))
    lik = likelihood_mixture(model, g, traj.y[0])
    direct, _, ev = measurement_update(initial_prediction(model), lik, model, traj.u[0])
    got = res.states[0].filtered
    np.testing.assert_array_equal(got.means, direct.means)
    np.testing.assert_array_equal(got.covs, direct.covs)
    np.testing.assert_allclose(got.log_weights, direct.log_weights, atol=1e-14)
    assert res.log_evidence == ev


@pytest.mark.parametrize("name", ["example1", "example2", "example3"])
def test_filter_invariants(name):
    model, g = example(name)
    traj = simulate(model, g, 60, seed=8)
    res = run_filter(model, g, traj.y, traj.u, FilterOptions(keep_diagnostics=True))
    for s in res.states:
        assert abs(s.filtered.weights.sum() - 1) <= 1e-10
        assert abs(s.predicted.weights.sum() - 1) <= 1e-10
        assert len(s.filtered) <= 10
        for c in np.concatenate([s.filtered.covs, s.predicted.covs]):
            check_covariance(c)
        # count law before reduction
        assert s.unreduced_count == len(s.diagnostics.raw_log_weights)
        assert s.unreduced_count == len(s.predicted) * (len(s.diagnostics.raw_log_weights) // len(s.predicted))
        assert s.diagnostics.gains.shape[0] == len(s.predicted)


def test_count_law_with_likelihood_sizes():
    model, g = example("example1")
    traj = simulate(model, g, 20, seed=1)
    res = run_filter(model, g, traj.y, traj.u, FilterOptions(keep_diagnostics=True))
    for s in res.states:
        K = len(likelihood_mixture(model, g, traj.y[s.t - 1]))
        assert s.unreduced_count == K * len(s.predicted)


@settings(max_examples=25)
@given(st.integers(0, 2**32 - 1))
def test_evidence_is_permutation_invariant(seed):
    model, g = example("example2")
    rng = np.random.default_rng(seed)
    M = 4
    prior = GaussianMixture(
        rng.normal(size=M), rng.normal(scale=2, size=(M, 2)), np.array([random_spd(rng, 2) for _ in range(M)]),
        normalized=False,
    ).normalize()
    lik = likelihood_mixture(model, g, float(rng.uniform(-1, 6)))
    perm = rng.permutation(M)
    kperm = rng.permutation(len(lik))
    shuffled_prior = GaussianMixture(prior.log_weights[perm], prior.means[perm], prior.covs[perm], normalized=True)
    shuffled_lik = LikelihoodMixture(lik.log_weights[kperm], lik.zeta[kperm], lik.y, lik.source[kperm])
    _, _, a = measurement_update(prior, lik, model, [0.3])
    _, _, b = measurement_update(shuffled_prior, shuffled_lik, model, [0.3])
    assert a == pytest.approx(b, abs=1e-8)


def test_no_likelihood_support_is_annotated():
    model, _ = example("example1")
    g = nlm.uniform_quantizer(2, 1.0)
    empty = LikelihoodMixture(np.empty(0), np.empty(0), 50.0, np.empty(0, dtype=int))
    with pytest.raises(NoLikelihoodSupportError):
        measurement_update(initial_prediction(model), empty, model, [0.0])
    y = np.array([0.5, 1e4])
    with pytest.raises(NoLikelihoodSupportError, match="t=2"):
        run_filter(model, g, y, np.zeros((2, 1)))


def test_reduction_respects_cap():
    model, g = example("example3")
    traj = simulate(model, g, 30, seed=3)
    for cap in (1, 3, 10):
        res = run_filter(model, g, traj.y, traj.u, FilterOptions(max_components=cap))
        assert max(len(s.filtered) for s in res.states) <= cap


def test_deterministic():
    model, g = example("example1")
    traj = simulate(model, g, 40, seed=6)
    a = run_filter(model, g, traj.y, traj.u).moments()
    b = run_filter(model, g, traj.y, traj.u).moments()
    assert a[0].tobytes() == b[0].tobytes() and a[1].tobytes() == b[1].tobytes()
