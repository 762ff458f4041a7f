"""Backward recursion for ``p(y_{t:N} | x_t)``.

The backward function is a weighted sum of Gaussians in stacked
pseudo-measurements,

    p(y_{t:N} | x_t) ~= sum_l eps_l N(zeta_l; O x_t + H u_{t:N}, P_l),

where every component shares ``O`` and ``H`` and only ``eps``, ``zeta`` and
``P`` vary.  Without reduction the stack grows by one row per step and the
component count by a factor ``K``; reduction rewrites each component as a
Gaussian in ``x_t`` (or in the row space of ``O`` when the stack is still
too short) and joins them.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .gauss import (
    GaussianMixture,
    UnreducibleBackwardFormError,
    backward_form_batch,
    logsumexp,
    reduce_by_joining,
    symmetrize,
)
from .qgsf import FilterOptions, NoLikelihoodSupportError, _as_inputs
from .quadrature import likelihood_mixture

log = logging.getLogger(__name__)

LOG_WEIGHT_FLOOR = np.log(1e-300)
RANK_COND_LIMIT = 1e12


class ReductionPostponed(UnreducibleBackwardFormError):
    """The stacked observation matrix does not yet have full column rank."""


@dataclass(frozen=True)
class BackwardComponent:
    log_weight: float
    zeta_stack: np.ndarray
    O: np.ndarray
    H: np.ndarray
    P: np.ndarray


@dataclass(eq=False)
class BackwardState:
    """Backward function at time ``t`` (1-based).

    ``stage`` is ``"update"`` for ``p(y_{t:N} | x_t)`` and ``"predict"`` for
    ``p(y_{t+1:N} | x_t)``.  ``u_stack`` is ``u_{t:N}`` flattened, so the
    common offset is ``H @ u_stack``.
    """

    t: int
    log_eps: np.ndarray  # (S,)
    zeta: np.ndarray  # (S, p)
    O: np.ndarray  # (p, n)
    H: np.ndarray  # (p, m * (N - t + 1))
    P: np.ndarray  # (S, p, p)
    u_stack: np.ndarray
    reduced: bool = False
    stage: str = "update"
    unreduced_count: int = 0
    floored: int = 0

    def __len__(self):
        return self.log_eps.size

    @property
    def stack_length(self):
        return self.O.shape[0]

    @property
    def offset(self):
        return self.H @ self.u_stack

    @property
    def components(self):
        return [
            BackwardComponent(float(e), z, self.O, self.H, P)
            for e, z, P in zip(self.log_eps, self.zeta, self.P)
        ]

    def log_value(self, x):
        """``log p(y | x)`` at points ``x`` of shape (Q, n)."""
        x = np.asarray(x, dtype=float).reshape(-1, self.O.shape[1])
        mean = x @ self.O.T + self.offset  # (Q, p)
        L = np.linalg.cholesky(self.P)  # (S, p, p)
        d = self.zeta[None, :, :] - mean[:, None, :]  # (Q, S, p)
        z = np.linalg.solve(L[None], d[..., None])[..., 0]
        p = self.stack_length
        logdet = 2.0 * np.log(np.diagonal(L, axis1=1, axis2=2)).sum(axis=1)
        comp = -0.5 * (p * np.log(2 * np.pi) + logdet[None] + np.sum(z * z, axis=2))
        return logsumexp(comp + self.log_eps[None], axis=1)


@dataclass
class BackwardOptions(FilterOptions):
    # reduce in the row space of O while it is rank deficient
    subspace: bool = True
    weight_floor: float = LOG_WEIGHT_FLOOR


@dataclass
class BackwardResult:
    predicted: list  # (t|t+1) states, index t-1; entry N-1 is None
    updated: list  # (t|t) states, index t-1

    def __len__(self):
        return len(self.updated)


def backward_init(model, nl, y_N, u_N, opts=None, lik=None, t=1):
    """Backward function at ``t = N``: one component per likelihood term."""
    opts = opts or BackwardOptions()
    if lik is None:
        lik = likelihood_mixture(model, nl, y_N, opts.L1, opts.L2)
    K = len(lik)
    if K == 0:
        raise NoLikelihoodSupportError(f"no likelihood support for y={lik.y!r}")
    u_N = np.atleast_1d(np.asarray(u_N, dtype=float))
    return BackwardState(
        t=int(t),
        log_eps=lik.log_weights.copy(),
        zeta=lik.zeta[:, None].copy(),
        O=model.C.copy(),
        H=model.D.copy(),
        P=np.full((K, 1, 1), model.R),
        u_stack=u_N.copy(),
        unreduced_count=K,
    )


def backward_predict(state, model, u_t):
    """``p(y_{t+1:N} | x_{t+1})`` -> ``p(y_{t+1:N} | x_t)``."""
    u_t = np.atleast_1d(np.asarray(u_t, dtype=float))
    O = state.O
    OQO = O @ model.Q @ O.T
    return BackwardState(
        t=state.t - 1,
        log_eps=state.log_eps,
        zeta=state.zeta,
        O=O @ model.A,
        H=np.hstack([O @ model.B, state.H]),
        P=symmetrize(state.P + OQO),
        u_stack=np.concatenate([u_t, state.u_stack]),
        reduced=False,
        stage="predict",
        unreduced_count=len(state),
    )


def backward_update(state, lik, model, u_t=None):
    """Stack the measurement at ``t`` onto ``p(y_{t+1:N} | x_t)``.

    Component ``l = k*K + tau`` pairs backward component ``k`` with
    pseudo-measurement ``tau``.
    """
    K = len(lik)
    if K == 0:
        raise NoLikelihoodSupportError(f"no likelihood support for y={lik.y!r}")
    S, p = state.zeta.shape
    m = model.m
    log_eps = (state.log_eps[:, None] + lik.log_weights[None, :]).ravel()
    zeta = np.empty((S, K, p + 1))
    zeta[:, :, 0] = lik.zeta[None, :]
    zeta[:, :, 1:] = state.zeta[:, None, :]
    O = np.vstack([model.C, state.O])
    Htop = np.zeros((1, state.H.shape[1]))
    Htop[:, :m] = model.D
    H = np.vstack([Htop, state.H])
    P = np.zeros((S, p + 1, p + 1))
    P[:, 0, 0] = model.R
    P[:, 1:, 1:] = state.P
    P = np.repeat(P, K, axis=0)
    return BackwardState(
        t=state.t,
        log_eps=log_eps,
        zeta=zeta.reshape(S * K, p + 1),
        O=O,
        H=H,
        P=P,
        u_stack=state.u_stack,
        reduced=False,
        stage="update",
        unreduced_count=S * K,
    )


def _row_space(O, P):
    """Orthonormal basis (n, r) of the row space of ``O``; identity when full rank."""
    n = O.shape[1]
    _, s, Vt = np.linalg.svd(O)
    if s.size == 0 or s[0] == 0.0:
        return np.zeros((n, 0))
    r = int(np.count_nonzero(s > s[0] * 1e-10))
    if r == n:
        # cond(O' P^-1 O) over the components
        L = np.linalg.cholesky(P)
        Ow = np.linalg.solve(L, np.broadcast_to(O, P.shape[:1] + O.shape))
        sv = np.linalg.svd(Ow, compute_uv=False)
        if np.all(sv[:, -1] > 0) and np.max((sv[:, 0] / sv[:, -1]) ** 2) < RANK_COND_LIMIT:
            return np.eye(n)
        r = n - 1
    return Vt[:r].T


def backward_reduce(state, max_components, prune_log_weight=None, subspace=False,
                    weight_floor=LOG_WEIGHT_FLOOR):
    """Rewrite the components as Gaussians and join them down to the cap.

    With ``subspace=False`` a rank-deficient ``O`` raises
    :class:`ReductionPostponed`.  With ``subspace=True`` the reduction runs
    in the coordinates ``s = V' x`` spanned by the rows of ``O`` and the
    result carries ``O = V'``.  The returned state is ``reduced`` only when
    ``O`` is the identity.
    """
    n = state.O.shape[1]
    keep = state.log_eps - state.log_eps.max() >= weight_floor
    floored = int(np.count_nonzero(~keep))
    if floored:
        log.debug("backward t=%d: floored %d components", state.t, floored)
    log_eps, zeta, P = state.log_eps[keep], state.zeta[keep], state.P[keep]
    V = _row_space(state.O, P)
    r = V.shape[1]
    if r < n and not subspace:
        raise ReductionPostponed(
            f"reduction postponed: stack of {state.stack_length} rows has rank {r} < {n}"
        )
    if r == 0:
        return state
    Os = state.O @ V  # (p, r)
    S = log_eps.size
    log_alpha, mean, cov = backward_form_batch(
        np.broadcast_to(Os, (S,) + Os.shape), np.broadcast_to(state.offset, (S, Os.shape[0])), P, zeta
    )
    mix = GaussianMixture(log_eps + log_alpha, mean, cov, normalized=False)
    if prune_log_weight is not None and len(mix) > max_components:
        mix = mix.prune(prune_log_weight)
    if len(mix) > max_components:
        mix = reduce_by_joining(mix, max_components)
    q = state.H.shape[1]
    return BackwardState(
        t=state.t,
        log_eps=mix.log_weights.copy(),
        zeta=mix.means.copy(),
        O=V.T.copy(),
        H=np.zeros((r, q)),
        P=mix.covs.copy(),
        u_stack=state.u_stack,
        reduced=r == n,
        stage=state.stage,
        unreduced_count=state.unreduced_count,
        floored=floored,
    )


def run_backward(model, nl, y, u, opts=None, likelihoods=None):
    """Backward pass over ``y``; reduces after each update above the cap.

    ``likelihoods`` optionally supplies precomputed per-step likelihood
    mixtures (as used by the forward pass).
    """
    opts = opts or BackwardOptions()
    subspace = getattr(opts, "subspace", True)
    floor = getattr(opts, "weight_floor", LOG_WEIGHT_FLOOR)
    y = np.asarray(y, dtype=float).ravel()
    N = y.size
    if N < 1:
        raise ValueError("need at least one measurement")
    u = _as_inputs(u, N, model.m)

    def lik_at(t):
        if likelihoods is not None:
            return likelihoods[t]
        if opts.likelihood is not None:
            return opts.likelihood(model, nl, y[t], t)
        return likelihood_mixture(model, nl, y[t], opts.L1, opts.L2)

    def maybe_reduce(state):
        if len(state) <= opts.max_components:
            return state
        try:
            return backward_reduce(state, opts.max_components, opts.prune_log_weight, subspace, floor)
        except ReductionPostponed:
            return state

    updated = [None] * N
    predicted = [None] * N
    t = N - 1
    try:
        state = backward_init(model, nl, y[t], u[t], opts, lik=lik_at(t), t=N)
        state = maybe_reduce(state)
        updated[t] = state
        for t in range(N - 2, -1, -1):
            pred = backward_predict(state, model, u[t])
            predicted[t] = pred
            state = maybe_reduce(backward_update(pred, lik_at(t), model, u[t]))
            updated[t] = state
    except (ValueError, np.linalg.LinAlgError) as exc:
        exc.args = (f"t={t + 1}: {exc}",) + exc.args[1:]
        raise
    return BackwardResult(predicted, updated)
