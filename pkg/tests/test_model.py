import numpy as np
import pytest
from hypothesis import given, strategies as st

from wienerqgs import nonlinearity as nlm
from wienerqgs.model import (
    GaussianInput,
    WienerModel,
    example,
    make_rng,
    simulate,
)


def _deterministic_model():
    return WienerModel(
        A=[[0.5, 0.1], [0.0, 0.8]], B=[[1.0], [0.5]], C=[[1.0, -1.0]], D=0.2, Q=np.zeros((2, 2)),
        R=0.0, P=0.0, mu1=[1.0, 2.0], P1=np.zeros((2, 2)),
    )


def test_noise_free_recursion_by_hand():
    model = _deterministic_model()
    g = nlm.square_map()
    u = np.array([[1.0], [-1.0], [0.5], [2.0]])
    traj = simulate(model, g, 4, u, seed=99)
    x = np.array([1.0, 2.0])
    A, B = np.array([[0.5, 0.1], [0.0, 0.8]]), np.array([1.0, 0.5])
    for t in range(4):
        np.testing.assert_array_equal(traj.x[t], x)
        r = x[0] - x[1] + 0.2 * u[t, 0]
        assert traj.r[t] == pytest.approx(r, abs=1e-15)
        assert traj.y[t] == pytest.approx(r * r, abs=1e-14)
        x = A @ x + B * u[t, 0]


def test_example1_output_is_square():
    model, g = example("example1")
    traj = simulate(model, g, 200, seed=3)
    np.testing.assert_array_equal(traj.z, traj.r**2)
    assert (model.A[0, 0], model.B[0, 0], model.C[0, 0], model.D[0, 0]) == (0.9, 2.5, 1.1, 1.5)


@pytest.mark.parametrize("name", ["example1", "example2", "example3"])
def test_z_is_evaluate_of_r(name):
    model, g = example(name)
    traj = simulate(model, g, 100, seed=11)
    np.testing.assert_array_equal(traj.z, nlm.evaluate(g, traj.r))
    np.testing.assert_array_equal(traj.y - traj.z, traj.y - nlm.evaluate(g, traj.r))
    assert traj.x.shape == (100, model.n) and traj.u.shape == (100, model.m)


@given(st.integers(0, 2**64 - 1))
def test_replay_is_bit_identical(seed):
    model, g = example("example2")
    a = simulate(model, g, 30, seed=seed)
    b = simulate(model, g, 30, seed=seed)
    assert a.same_as(b)
    assert a.x.tobytes() == b.x.tobytes() and a.y.tobytes() == b.y.tobytes()


def test_distinct_seeds_differ():
    model, g = example("example1")
    assert not simulate(model, g, 10, seed=1).same_as(simulate(model, g, 10, seed=2))


def test_streams_are_independent_keys():
    a = make_rng(5, 0x3).standard_normal(4)
    b = make_rng(5 ^ 0x3 ^ 0x4, 0x4).standard_normal(4)
    np.testing.assert_array_equal(a, b)
    assert not np.array_equal(make_rng(5, 0x3).standard_normal(4), make_rng(5, 0x4).standard_normal(4))


def test_input_statistics():
    model, g = example("example3")
    traj = simulate(model, g, 20000, GaussianInput(0.0, 2.0), seed=0)
    assert abs(traj.u.mean()) < 4 * np.sqrt(2.0 / traj.u.size)
    assert traj.u.var() == pytest.approx(2.0, rel=0.02)


def test_initial_state_distribution():
    model, g = example("example2")
    x1 = np.array([simulate(model, g, 1, seed=s).x[0] for s in range(3000)])
    np.testing.assert_allclose(x1.mean(axis=0), model.mu1, atol=4 / np.sqrt(3000))


@pytest.mark.parametrize(
    "kw",
    [
        {"B": [[1.0, 2.0, 3.0]]},
        {"C": [[1.0, 2.0]]},
        {"mu1": [1.0, 2.0]},
        {"Q": [[1.0, 2.0], [2.0, 1.0]]},
        {"R": -1.0},
    ],
)
def test_invalid_model(kw):
    model, _ = example("example1")
    with pytest.raises(ValueError):
        model.replace(**kw)


def test_stored_input_shape_checked():
    model, g = example("example3")
    with pytest.raises(ValueError, match="invalid model dims"):
        simulate(model, g, 5, np.zeros((5, 1)))
    with pytest.raises(ValueError):
        simulate(model, g, 0)


def test_model_is_immutable():
    model, _ = example("example1")
    with pytest.raises(ValueError):
        model.A[0, 0] = 2.0
