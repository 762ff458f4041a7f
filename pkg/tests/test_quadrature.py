import mpmath as mp
import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy.special import logsumexp

from wienerqgs import nonlinearity as nlm
from wienerqgs.model import WienerModel, example, simulate
from wienerqgs.quadrature import MAX_ORDER, forced_likelihood, legendre_rule, likelihood_mixture

from oracles import likelihood_by_integration


def test_order_one():
    r = legendre_rule(1)
    np.testing.assert_array_equal(r.nodes, [0.0])
    np.testing.assert_array_equal(r.weights, [2.0])


def test_order_two_closed_form():
    r = legendre_rule(2)
    np.testing.assert_allclose(r.nodes, [-1 / np.sqrt(3), 1 / np.sqrt(3)], rtol=0, atol=2e-16)
    np.testing.assert_array_equal(r.weights, [1.0, 1.0])


def test_order_five_degree_eight():
    r = legendre_rule(5)
    assert np.sum(r.weights * r.nodes**8) == pytest.approx(2 / 9, abs=1e-13)


@pytest.mark.parametrize("L", [3, 10, 40, 80])
def test_rule_matches_high_precision(L):
    mp.mp.dps = 40
    r = legendre_rule(L)
    for x, w in zip(r.nodes, r.weights):
        root = mp.findroot(lambda s: mp.legendre(L, s), mp.mpf(float(x)))
        dp = mp.diff(lambda s: mp.legendre(L, s), root)
        weight = 2 / ((1 - root * root) * dp * dp)
        assert abs(float(root) - x) <= 1e-15
        assert abs(float(weight / w) - 1) <= 1e-13


def test_rule_matches_numpy():
    for L in range(1, 41):
        x, w = np.polynomial.legendre.leggauss(L)
        r = legendre_rule(L)
        np.testing.assert_allclose(r.nodes, x, atol=1e-14)
        np.testing.assert_allclose(r.weights, w, rtol=1e-12)


@given(st.integers(1, MAX_ORDER))
def test_rule_invariants(L):
    r = legendre_rule(L)
    assert r.nodes.size == L
    assert np.all(np.diff(r.nodes) > 0)
    assert np.all(np.abs(r.nodes) < 1)
    assert np.all(r.weights > 0)
    np.testing.assert_array_equal(r.nodes, -r.nodes[::-1])
    assert abs(r.weights.sum() - 2.0) <= 1e-12


@pytest.mark.parametrize("L", [0, 201, 2.5, -3])
def test_rule_order_range(L):
    with pytest.raises(ValueError):
        legendre_rule(L)


def _total_log(lik):
    return logsumexp(lik.log_weights)


def test_example1_component_count():
    model, g = example("example1")
    lik = likelihood_mixture(model, g, 4.0, L1=10)
    assert len(lik) <= 20
    assert len(lik) + lik.dropped == 20
    # y - lambda < 0 for nodes with lambda > y
    lik = likelihood_mixture(model, g, -0.5, L1=10)
    assert 0 < len(lik) < 20
    assert set(np.unique(lik.source)) == {0, 1}


def test_pseudo_measurements_stay_in_branch_domain():
    for name in ("example1", "example2", "example3", "saturation", "rectifier"):
        model, _ = example("example3")
        g = nlm.preset(name)
        for y in (-4.0, -0.3, 0.0, 0.2, 1.0, 6.5):
            lik = likelihood_mixture(model, g, y, L1=12, L2=7)
            for src, zeta in zip(lik.source, lik.zeta):
                if src >= 0:
                    assert g.branches[src].domain_contains(zeta)
                else:
                    q = g.quant_sets[-src - 1]
                    assert q.lower < zeta < q.upper or not q.bounded


def test_component_count_bound():
    model, g = example("example3")
    M1, M2 = len(g.branches), len(g.quant_sets)
    for y in np.linspace(-8, 8, 33):
        lik = likelihood_mixture(model, g, y, L1=9, L2=6)
        assert len(lik) <= M1 * 9 + M2 * 6


def test_identity_limit():
    model, _ = example("example1")
    model = model.replace(P=1e-6)
    # an odd order keeps the lambda = 0 node, the only one that survives at this P
    lik = likelihood_mixture(model, nlm.identity_map(), 1.7, L1=41)
    assert len(lik) >= 1
    w = np.exp(lik.log_weights - _total_log(lik))
    assert abs(np.sum(w * lik.zeta) - 1.7) < 1e-3


def test_deadzone_quantization_dominates_at_zero():
    model, g = example("example3")
    lik = likelihood_mixture(model, g, 0.0)
    quant = lik.source < 0
    assert logsumexp(lik.log_weights[quant]) > logsumexp(lik.log_weights[~quant])
    assert np.all((lik.zeta[quant] > -3) & (lik.zeta[quant] < 3))


def test_nonpositive_eta_variance():
    model, g = example("example1")
    with pytest.raises(ValueError, match="eta-noise variance"):
        likelihood_mixture(model.replace(P=0.0), g, 1.0)


def test_forced_likelihood():
    lik = forced_likelihood(2.5)
    assert len(lik) == 1 and lik.zeta[0] == 2.5 and lik.log_weights[0] == 0.0


def test_affine_branch_converges_to_closed_form():
    # identity g: p(y | r) = N(y; r, R + P)
    model = WienerModel(A=0.5, B=1.0, C=1.0, D=0.0, Q=1.0, R=0.7, P=0.4, mu1=0.0, P1=1.0)
    rs = np.array([-2.0, 0.0, 0.9, 3.0])
    exact = -0.5 * (np.log(2 * np.pi * 1.1) + (0.3 - rs) ** 2 / 1.1)
    errs = []
    for L in (10, 20, 40, 80, 120):
        lik = likelihood_mixture(model, nlm.identity_map(), 0.3, L1=L)
        errs.append(np.max(np.abs(lik.log_likelihood(rs, model.R) - exact)))
    assert all(b < a for a, b in zip(errs[:-2], errs[1:-1]))
    assert errs[-1] < 1e-12


def _oracle_errors(name, orders, pairs=20, seed=1):
    model, g = example(name)
    rng = np.random.default_rng(seed)
    traj = simulate(model, g, 200, seed=seed)
    idx = rng.integers(0, 200, size=pairs)
    out = {L: [] for L in orders}
    for t in idx:
        r_mean = traj.r[t] + rng.normal() * np.sqrt(model.R)
        y = traj.y[t]
        ref = likelihood_by_integration(g, y, r_mean, model.R, model.P)
        for L in orders:
            approx = np.exp(likelihood_mixture(model, g, y, L).log_likelihood(r_mean, model.R))
            out[L].append(abs(approx - ref) / ref)
    return {L: np.array(v) for L, v in out.items()}


@pytest.mark.parametrize("name", ["example1", "example2", "example3"])
def test_oracle_agreement_typical(name):
    # the bulk of the (x, y) pairs sit far from image boundaries
    errs = _oracle_errors(name, (40,))
    assert np.median(errs[40]) < 5e-3


def test_oracle_error_decreases_square_map():
    errs = _oracle_errors("example1", (5, 10, 20, 40))
    worst = [errs[L].max() for L in (5, 10, 20, 40)]
    assert all(b <= a for a, b in zip(worst[:-1], worst[1:])), worst


def test_quantization_only_matches_oracle():
    model, _ = example("example3")
    g = nlm.uniform_quantizer(4, 1.5)
    for y, r in ((0.7, 0.2), (-2.0, -1.5), (2.3, 3.0)):
        ref = likelihood_by_integration(g, y, r, model.R, model.P)
        approx = np.exp(likelihood_mixture(model, g, y, 40).log_likelihood(r, model.R))
        assert approx == pytest.approx(ref, rel=1e-6)
