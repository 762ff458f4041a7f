import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy.special import logsumexp as sp_logsumexp
from scipy.stats import multivariate_normal

from wienerqgs.gauss import (
    DegenerateCovarianceError,
    DegenerateInnovationError,
    Gaussian,
    GaussianMixture,
    UnreducibleBackwardFormError,
    backward_form_to_gaussian,
    condition_on_linear_observation,
    joint_gaussian,
    log_gauss_eval,
    logsumexp,
    mixture_moments,
    reduce_by_joining,
)

from conftest import random_spd


def random_mixture(rng, M, n, normalized=True):
    lw = rng.normal(size=M)
    if normalized:
        lw -= sp_logsumexp(lw)
    means = rng.normal(scale=3.0, size=(M, n))
    covs = np.array([random_spd(rng, n, rng.uniform(0.1, 2.0)) for _ in range(M)])
    return GaussianMixture(lw, means, covs, normalized=normalized)


# -- evaluation ---------------------------------------------------------------


def test_log_gauss_eval_standard_normal_mode():
    assert log_gauss_eval([0.0], Gaussian([0.0], [[1.0]])) == pytest.approx(-0.5 * np.log(2 * np.pi), abs=1e-15)


@pytest.mark.parametrize("n", [1, 2, 5])
def test_log_gauss_eval_at_mean(n):
    g = Gaussian(np.arange(n, dtype=float), np.eye(n))
    assert log_gauss_eval(g.mean, g) == pytest.approx(-0.5 * n * np.log(2 * np.pi), abs=1e-14)


def test_log_gauss_eval_scalar_closed_form():
    assert log_gauss_eval([1.0], Gaussian([0.0], [[2.0]])) == pytest.approx(-0.5 * np.log(4 * np.pi) - 0.25, abs=1e-15)


def test_log_gauss_eval_matches_scipy(rng):
    for n in (1, 3, 4):
        S = random_spd(rng, n)
        mu = rng.normal(size=n)
        x = rng.normal(size=n)
        ref = multivariate_normal(mu, S).logpdf(x)
        assert log_gauss_eval(x, Gaussian(mu, S)) == pytest.approx(ref, rel=1e-12)


def test_degenerate_covariance_reports_pivot():
    S = np.diag([1.0, -1.0, 1.0])
    with pytest.raises(DegenerateCovarianceError) as info:
        log_gauss_eval(np.zeros(3), Gaussian(np.zeros(3), S))
    assert info.value.pivot == 1


def test_logsumexp_edge_cases():
    assert logsumexp(np.array([-np.inf, -np.inf])) == -np.inf
    assert logsumexp(np.array([])) == -np.inf
    a = np.array([[1000.0, 1000.0], [-5.0, 3.0]])
    np.testing.assert_allclose(logsumexp(a, axis=1), sp_logsumexp(a, axis=1), rtol=1e-15)


# -- conditioning ----------------------------------------------------------------


def test_scalar_conjugate_update():
    post, le = condition_on_linear_observation(Gaussian([0.0], [[1.0]]), [[1.0]], 0.0, [[1.0]], [1.0])
    assert post.mean[0] == pytest.approx(0.5)
    assert post.cov[0, 0] == pytest.approx(0.5)
    assert le == pytest.approx(multivariate_normal(0.0, 2.0).logpdf(1.0), abs=1e-14)


def test_uninformative_observation():
    prior = Gaussian([1.0, -2.0], [[2.0, 0.3], [0.3, 1.0]])
    post, le = condition_on_linear_observation(prior, np.zeros((1, 2)), 0.5, [[0.7]], [1.3])
    np.testing.assert_array_equal(post.mean, prior.mean)
    np.testing.assert_allclose(post.cov, prior.cov, atol=0)
    assert le == pytest.approx(multivariate_normal(0.5, 0.7).logpdf(1.3), abs=1e-14)


def test_conditioning_matches_schur_complement(rng):
    n, p = 3, 2
    prior = Gaussian(rng.normal(size=n), random_spd(rng, n))
    C = rng.normal(size=(p, n))
    mu = rng.normal(size=p)
    R = random_spd(rng, p, 0.5)
    y = rng.normal(size=p)
    post, le = condition_on_linear_observation(prior, C, mu, R, y)
    J = joint_gaussian(prior, C, mu, R)
    Sxx, Sxy, Syy = J.cov[:n, :n], J.cov[:n, n:], J.cov[n:, n:]
    m = J.mean[:n] + Sxy @ np.linalg.solve(Syy, y - J.mean[n:])
    S = Sxx - Sxy @ np.linalg.solve(Syy, Sxy.T)
    np.testing.assert_allclose(post.mean, m, atol=1e-12)
    np.testing.assert_allclose(post.cov, S, atol=1e-12)
    assert le == pytest.approx(multivariate_normal(J.mean[n:], Syy).logpdf(y), rel=1e-12)


def test_singular_innovation_raises():
    with pytest.raises(DegenerateInnovationError):
        condition_on_linear_observation(Gaussian([0.0], [[0.0]]), [[1.0]], 0.0, [[0.0]], [1.0])


@given(st.integers(0, 10_000))
def test_sequential_conditioning_is_order_independent(seed):
    rng = np.random.default_rng(seed)
    n = 3
    prior = Gaussian(rng.normal(size=n), random_spd(rng, n))
    obs = [(rng.normal(size=(1, n)), rng.normal(), random_spd(rng, 1, 0.3), rng.normal(size=1)) for _ in range(2)]
    a, _ = condition_on_linear_observation(prior, *obs[0])
    a, _ = condition_on_linear_observation(a, *obs[1])
    b, _ = condition_on_linear_observation(prior, *obs[1])
    b, _ = condition_on_linear_observation(b, *obs[0])
    np.testing.assert_allclose(a.mean, b.mean, atol=1e-10)
    np.testing.assert_allclose(a.cov, b.cov, atol=1e-10)


# -- joint --------------------------------------------------------------------------


def test_joint_scalar_blocks():
    J = joint_gaussian(Gaussian([0.0], [[1.0]]), [[1.0]], 0.0, [[1.0]])
    np.testing.assert_array_equal(J.cov, [[1.0, 1.0], [1.0, 2.0]])


def test_joint_with_zero_observation_matrix():
    Q = np.array([[2.0, 0.5], [0.5, 1.0]])
    J = joint_gaussian(Gaussian([0.0, 0.0], Q), np.zeros((1, 2)), 0.0, [[3.0]])
    np.testing.assert_array_equal(J.cov, [[2.0, 0.5, 0.0], [0.5, 1.0, 0.0], [0.0, 0.0, 3.0]])


@given(st.integers(0, 10_000))
def test_joint_marginal_equals_evidence(seed):
    rng = np.random.default_rng(seed)
    n = 2
    prior = Gaussian(rng.normal(size=n), random_spd(rng, n))
    C = rng.normal(size=(1, n))
    mu, R, y = rng.normal(), random_spd(rng, 1, 0.4), rng.normal(size=1)
    J = joint_gaussian(prior, C, mu, R)
    np.testing.assert_array_equal(J.mean[:n], prior.mean)
    np.testing.assert_array_equal(J.cov[:n, :n], prior.cov)
    _, le = condition_on_linear_observation(prior, C, mu, R, y)
    ym = Gaussian(J.mean[n:], J.cov[n:, n:])
    assert log_gauss_eval(y, ym) == pytest.approx(le, abs=1e-12)


def test_joint_second_moments_by_sampling(rng):
    prior = Gaussian([1.0, -1.0], [[1.0, 0.4], [0.4, 0.8]])
    C = np.array([[1.1, 0.3]])
    mu, R = 0.7, np.array([[0.5]])
    J = joint_gaussian(prior, C, mu, R)
    S = 1_000_000
    x = rng.multivariate_normal(prior.mean, prior.cov, size=S)
    y = x @ C.T + mu + np.sqrt(R[0, 0]) * rng.standard_normal((S, 1))
    emp = np.cov(np.hstack([x, y]).T)
    # MC standard error of a covariance entry is about sqrt((s_ii s_jj + s_ij^2) / S)
    d = np.sqrt(np.diag(J.cov))
    se = np.sqrt((np.outer(d, d) ** 2 + J.cov**2) / S)
    assert np.all(np.abs(emp - J.cov) < 5 * se)


# -- backward form --------------------------------------------------------------------


def test_backward_form_identity_matrix(rng):
    S = random_spd(rng, 2)
    y = rng.normal(size=2)
    la, g = backward_form_to_gaussian(np.eye(2), np.zeros(2), S, y)
    assert la == pytest.approx(0.0, abs=1e-12)
    np.testing.assert_allclose(g.mean, y, atol=1e-12)
    np.testing.assert_allclose(g.cov, S, atol=1e-12)


def test_backward_form_scalar():
    la, g = backward_form_to_gaussian([[2.0]], 0.0, [[1.0]], [4.0])
    assert g.mean[0] == pytest.approx(2.0)
    assert g.cov[0, 0] == pytest.approx(0.25)
    # N(4; 2x, 1) = 0.5 N(x; 2, 0.25)
    assert la == pytest.approx(np.log(0.5), abs=1e-14)


@given(st.integers(0, 10_000), st.integers(1, 3))
def test_backward_form_pointwise_exact(seed, n):
    rng = np.random.default_rng(seed)
    p = n + 1
    O = rng.normal(size=(p, n))
    mu = rng.normal(size=p)
    P = random_spd(rng, p, 0.5)
    y = rng.normal(size=p)
    la, g = backward_form_to_gaussian(O, mu, P, y)
    for x in rng.normal(scale=2.0, size=(10, n)):
        lhs = multivariate_normal(O @ x + mu, P).logpdf(y)
        rhs = la + multivariate_normal(g.mean, g.cov).logpdf(x)
        assert lhs == pytest.approx(rhs, abs=1e-9)


def test_backward_form_rank_deficient():
    O = np.array([[1.0, 2.0], [2.0, 4.0]])
    with pytest.raises(UnreducibleBackwardFormError):
        backward_form_to_gaussian(O, np.zeros(2), np.eye(2), np.ones(2))
    with pytest.raises(UnreducibleBackwardFormError):
        backward_form_to_gaussian(np.ones((1, 2)), 0.0, [[1.0]], [1.0])


# -- moments and joining ---------------------------------------------------------------------


def test_moments_single_component():
    m = GaussianMixture([0.0], [[1.0, 2.0]], [[[2.0, 0.1], [0.1, 1.0]]])
    g = mixture_moments(m)
    np.testing.assert_array_equal(g.mean, [1.0, 2.0])
    np.testing.assert_array_equal(g.cov, [[2.0, 0.1], [0.1, 1.0]])


def test_moments_two_symmetric():
    m = GaussianMixture(np.log([0.5, 0.5]), [[-1.0], [1.0]], [[[1.0]], [[1.0]]])
    g = mixture_moments(m)
    assert g.mean[0] == pytest.approx(0.0, abs=1e-15)
    assert g.cov[0, 0] == pytest.approx(2.0)


def test_moments_rejects_unnormalized():
    with pytest.raises(ValueError):
        mixture_moments(GaussianMixture([0.0, 0.0], [[0.0], [1.0]], [[[1.0]], [[1.0]]]))


def test_moments_by_sampling(rng):
    m = random_mixture(rng, 5, 2)
    g = mixture_moments(m)
    S = 1_000_000
    comp = rng.choice(5, size=S, p=m.weights)
    z = rng.standard_normal((S, 2))
    L = np.linalg.cholesky(m.covs)
    x = m.means[comp] + np.einsum("sij,sj->si", L[comp], z)
    se = np.sqrt(np.diag(g.cov) / S)
    assert np.all(np.abs(x.mean(axis=0) - g.mean) < 3 * se)


def test_join_identical_components():
    m = GaussianMixture(np.log([0.3, 0.7]), [[1.0], [1.0]], [[[2.0]], [[2.0]]])
    r = reduce_by_joining(m, 1)
    assert len(r) == 1
    assert r.weights[0] == pytest.approx(1.0)
    assert r.means[0, 0] == pytest.approx(1.0)
    assert r.covs[0, 0, 0] == pytest.approx(2.0)


def test_join_far_pair():
    m = GaussianMixture(np.log([0.5, 0.5]), [[0.0], [10.0]], [[[1.0]], [[1.0]]])
    r = reduce_by_joining(m, 1)
    assert r.means[0, 0] == pytest.approx(5.0)
    assert r.covs[0, 0, 0] == pytest.approx(26.0)


def test_join_noop_when_under_cap(rng):
    m = random_mixture(rng, 3, 2)
    assert reduce_by_joining(m, 3) is m
    with pytest.raises(ValueError):
        reduce_by_joining(m, 0)


def _moments_close(a, b, tol=1e-12):
    ga, gb = mixture_moments(a), mixture_moments(b)
    scale = max(1.0, np.abs(ga.mean).max(), np.abs(ga.cov).max())
    return np.abs(ga.mean - gb.mean).max() <= tol * scale and np.abs(ga.cov - gb.cov).max() <= tol * scale


@given(st.integers(0, 10_000), st.integers(1, 4), st.integers(2, 14))
def test_every_merge_preserves_moments(seed, n, M):
    rng = np.random.default_rng(seed)
    m = random_mixture(rng, M, n)
    prev = m
    for k in range(M - 1, 0, -1):
        cur = reduce_by_joining(prev, k)
        assert len(cur) == k
        assert _moments_close(prev, cur)
        assert cur.log_total_weight() == pytest.approx(0.0, abs=1e-12)
        prev = cur


def test_twelve_to_four_scalar(rng):
    m = random_mixture(rng, 12, 1)
    assert _moments_close(m, reduce_by_joining(m, 4))


@given(st.integers(0, 10_000), st.integers(1, 4))
def test_compiled_matches_reference(seed, n):
    rng = np.random.default_rng(seed)
    m = random_mixture(rng, 25, n, normalized=False)
    a = reduce_by_joining(m, 6, backend="compiled")
    b = reduce_by_joining(m, 6, backend="numpy")
    np.testing.assert_allclose(a.log_weights, b.log_weights, atol=1e-10)
    np.testing.assert_allclose(a.means, b.means, atol=1e-9)
    np.testing.assert_allclose(a.covs, b.covs, atol=1e-9)


def test_join_tie_break_is_lexicographic():
    # three identical components: the (0, 1) pair merges first, survivors keep order
    m = GaussianMixture(np.log([0.2, 0.3, 0.5]), [[0.0], [0.0], [0.0]], [[[1.0]]] * 3)
    r = reduce_by_joining(m, 2, backend="numpy")
    np.testing.assert_allclose(r.weights, [0.5, 0.5])
    r2 = reduce_by_joining(m, 2)
    np.testing.assert_allclose(r2.weights, [0.5, 0.5])


def test_prune_drops_negligible():
    m = GaussianMixture([0.0, -60.0], [[0.0], [1.0]], [[[1.0]], [[1.0]]])
    assert len(m.prune(-46.0)) == 1


def test_mixture_is_immutable():
    m = GaussianMixture([0.0], [[0.0]], [[[1.0]]])
    with pytest.raises(AttributeError):
        m.normalized = False
    with pytest.raises(ValueError):
        m.means[0, 0] = 3.0


@pytest.mark.parametrize("n", [1, 2, 3])
def test_compiled_matches_reference_large(n):
    rng = np.random.default_rng(n)
    m = random_mixture(rng, 200, n, normalized=False)
    a = reduce_by_joining(m, 10, backend="compiled")
    b = reduce_by_joining(m, 10, backend="numpy")
    np.testing.assert_allclose(a.log_weights, b.log_weights, atol=1e-10)
    np.testing.assert_allclose(a.means, b.means, atol=1e-9)
    np.testing.assert_allclose(a.covs, b.covs, atol=1e-9)
