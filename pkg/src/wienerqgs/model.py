"""Wiener system description, presets and the trajectory simulator."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import nonlinearity as nlmod

# Stream ids for seed derivation: each random source gets seed ^ stream.
STREAM_INPUT = 0x1
STREAM_X1 = 0x2
STREAM_W = 0x3
STREAM_V = 0x4
STREAM_ETA = 0x5
STREAM_PF = 0x10
STREAM_PS = 0x11

_MASK64 = (1 << 64) - 1


def make_rng(seed, stream=0):
    """Philox generator keyed by ``seed XOR stream`` (both 64-bit)."""
    key = (int(seed) ^ int(stream)) & _MASK64
    return np.random.Generator(np.random.Philox(key=key))


def _matrix(a, rows=None, cols=None, name="matrix"):
    a = np.atleast_2d(np.asarray(a, dtype=float))
    if rows is not None and a.shape[0] != rows or cols is not None and a.shape[1] != cols:
        raise ValueError(f"invalid model dims: {name} has shape {a.shape}, expected ({rows}, {cols})")
    return a


def _is_psd(S, tol=1e-10):
    S = np.asarray(S)
    if not np.allclose(S, S.T, rtol=0, atol=tol * max(1.0, np.abs(S).max(initial=0.0))):
        return False
    return np.linalg.eigvalsh(S).min(initial=0.0) >= -tol * max(1.0, np.trace(S))


@dataclass(frozen=True, eq=False)
class WienerModel:
    """Linear block ``(A, B, C, D)``, noise variances ``Q, R, P`` and the
    Gaussian prior ``N(mu1, P1)`` of the first state."""

    A: np.ndarray
    B: np.ndarray
    C: np.ndarray
    D: np.ndarray
    Q: np.ndarray
    R: float
    P: float
    mu1: np.ndarray
    P1: np.ndarray

    def __post_init__(self):
        A = _matrix(self.A, name="A")
        n = A.shape[0]
        if A.shape != (n, n):
            raise ValueError(f"invalid model dims: A has shape {A.shape}")
        B = _matrix(self.B, rows=n, name="B")
        m = B.shape[1]
        C = _matrix(self.C, rows=1, cols=n, name="C")
        D = _matrix(self.D, rows=1, cols=m, name="D")
        Q = _matrix(self.Q, rows=n, cols=n, name="Q")
        P1 = _matrix(self.P1, rows=n, cols=n, name="P1")
        mu1 = np.atleast_1d(np.asarray(self.mu1, dtype=float)).ravel()
        if mu1.size != n:
            raise ValueError(f"invalid model dims: mu1 has {mu1.size} entries, expected {n}")
        R = float(np.asarray(self.R).squeeze())
        P = float(np.asarray(self.P).squeeze())
        if not _is_psd(Q) or not _is_psd(P1):
            raise ValueError("Q and P1 must be symmetric positive semidefinite")
        if R < 0 or P < 0:
            raise ValueError("R and P must be non-negative")
        for name, val in (("A", A), ("B", B), ("C", C), ("D", D), ("Q", Q), ("mu1", mu1), ("P1", P1)):
            val.flags.writeable = False
            object.__setattr__(self, name, val)
        object.__setattr__(self, "R", R)
        object.__setattr__(self, "P", P)

    @property
    def n(self):
        return self.A.shape[0]

    @property
    def m(self):
        return self.B.shape[1]

    def replace(self, **changes):
        fields = {k: getattr(self, k) for k in ("A", "B", "C", "D", "Q", "R", "P", "mu1", "P1")}
        fields.update(changes)
        return WienerModel(**fields)

    def to_dict(self):
        return {
            "A": self.A.tolist(),
            "B": self.B.tolist(),
            "C": self.C.tolist(),
            "D": self.D.tolist(),
            "Q": self.Q.tolist(),
            "R": self.R,
            "P": self.P,
            "mu1": self.mu1.tolist(),
            "P1": self.P1.tolist(),
        }


@dataclass(frozen=True)
class GaussianInput:
    """i.i.d. Gaussian input with per-channel mean and variance."""

    mean: float | tuple = 0.0
    var: float | tuple = 2.0

    def sample(self, rng, N, m):
        mean = np.broadcast_to(np.asarray(self.mean, dtype=float), (m,))
        sd = np.sqrt(np.broadcast_to(np.asarray(self.var, dtype=float), (m,)))
        return mean + sd * rng.standard_normal((N, m))


@dataclass(frozen=True, eq=False)
class Trajectory:
    u: np.ndarray  # (N, m)
    x: np.ndarray  # (N, n)
    r: np.ndarray  # (N,)
    z: np.ndarray  # (N,)
    y: np.ndarray  # (N,)
    seed: int

    @property
    def N(self):
        return self.y.size

    def same_as(self, other):
        return self.seed == other.seed and all(
            np.array_equal(getattr(self, k), getattr(other, k)) for k in ("u", "x", "r", "z", "y")
        )


def chol_psd(S):
    """Factor ``L`` with ``L L' = S`` that tolerates singular PSD ``S``."""
    S = np.asarray(S, dtype=float)
    if not np.any(S):
        return np.zeros_like(S)
    try:
        return np.linalg.cholesky(S)
    except np.linalg.LinAlgError:
        vals, vecs = np.linalg.eigh(S)
        return vecs * np.sqrt(np.clip(vals, 0.0, None))


def draw_noises(model, N, seed):
    """Process, linear-output and output noises ``(w, v, eta)`` for a run."""
    n = model.n
    w = make_rng(seed, STREAM_W).standard_normal((N, n)) @ chol_psd(model.Q).T
    v = np.sqrt(model.R) * make_rng(seed, STREAM_V).standard_normal(N)
    eta = np.sqrt(model.P) * make_rng(seed, STREAM_ETA).standard_normal(N)
    return w, v, eta


def draw_initial_state(model, seed):
    e = make_rng(seed, STREAM_X1).standard_normal(model.n)
    return model.mu1 + chol_psd(model.P1) @ e


def resolve_inputs(model, N, input_spec, seed):
    if isinstance(input_spec, GaussianInput):
        return input_spec.sample(make_rng(seed, STREAM_INPUT), N, model.m)
    u = np.asarray(input_spec, dtype=float)
    if u.ndim == 1 and model.m == 1:
        u = u[:, None]
    if u.shape != (N, model.m):
        raise ValueError(f"invalid model dims: input sequence must have shape ({N}, {model.m})")
    return u


def simulate(model, nl, N, input_spec=None, seed=0):
    """Simulate ``N`` steps of the Wiener system.

    ``input_spec`` is a stored ``(N, m)`` input array or a
    :class:`GaussianInput` (default ``N(0, 2)`` per channel).
    """
    if N < 1:
        raise ValueError("N must be positive")
    seed = int(seed) & _MASK64
    if input_spec is None:
        input_spec = GaussianInput()
    u = resolve_inputs(model, N, input_spec, seed)
    w, v, eta = draw_noises(model, N, seed)
    n = model.n
    x = np.empty((N, n))
    x[0] = draw_initial_state(model, seed)
    for t in range(N - 1):
        x[t + 1] = model.A @ x[t] + model.B @ u[t] + w[t]
    r = x @ model.C[0] + u @ model.D[0] + v
    z = np.asarray(nlmod.evaluate(nl, r), dtype=float).reshape(N)
    y = z + eta
    return Trajectory(u, x, r, z, y, seed)


# -- presets -----------------------------------------------------------------


def example1_model():
    return WienerModel(A=0.9, B=2.5, C=1.1, D=1.5, Q=1.0, R=0.5, P=0.5, mu1=1.0, P1=1.0)


def example2_model():
    return WienerModel(
        A=[[0.9, 0.1], [-0.1, 0.7]],
        B=[[1.5], [2.5]],
        C=[[1.1, 0.3]],
        D=1.2,
        Q=np.eye(2),
        R=0.5,
        P=0.5,
        mu1=[1.0, 1.0],
        P1=np.eye(2),
    )


def example3_model():
    return WienerModel(
        A=[[0.52, 0.4, 0, 0], [-0.4, 0.52, 0, 0], [0, 0, 0.4, 0.6], [0, 0, 0.06, -0.4]],
        B=[[0.56, -0.58], [1.1, 0.5], [5.3, -0.8], [-1.9, -0.45]],
        C=[[0.5, 0.1, 0.5, 0.7]],
        D=[[0.0, 0.0]],
        Q=2.0 * np.eye(4),
        R=1.0,
        P=0.5,
        mu1=np.ones(4),
        P1=np.eye(4),
    )


EXAMPLES = {
    "example1": (example1_model, "example1"),
    "example2": (example2_model, "example2"),
    "example3": (example3_model, "example3"),
}


def example(name):
    """``(model, nonlinearity)`` for one of the three worked examples."""
    try:
        model_fn, nl_name = EXAMPLES[name]
    except KeyError:
        raise KeyError(f"unknown example {name!r}; choose from {list(EXAMPLES)}") from None
    return model_fn(), nlmod.preset(nl_name)
