"""Quadrature Gaussian sum smoother.

The marginal smoother combines the forward prediction ``p(x_t | y_{1:t-1})``
with the backward function ``p(y_{t:N} | x_t)`` by one Kalman update per
component pair.  The joint smoother builds ``p(x_{t+1}, x_t | y_{1:N})``
from the filtered mixture at ``t`` and the smoothed components at ``t+1``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .backward import BackwardOptions, run_backward
from .gauss import GaussianMixture, condition_batch, logsumexp, mixture_moments, symmetrize
from .qgsf import FilterOptions, reduce_filtered, run_filter, time_update


@dataclass(eq=False)
class SmoothedState:
    t: int
    posterior: GaussianMixture
    # components before reduction; None at t = N when not requested
    unreduced: Optional[GaussianMixture] = None


@dataclass(eq=False)
class JointSmoothedState:
    """Mixture over the stacked vector ``(x_{t+1}, x_t)``."""

    t: int
    posterior: GaussianMixture

    def cross_covariances(self):
        n = self.posterior.dim // 2
        return self.posterior.covs[:, :n, n:]


@dataclass
class SmootherResult:
    marginals: list = field(default_factory=list)
    joints: list = field(default_factory=list)

    def moments(self):
        g = [mixture_moments(s.posterior) for s in self.marginals]
        return np.array([x.mean for x in g]), np.array([x.cov for x in g])


def _combine(predicted, backward):
    """Unnormalized smoothed components, ``k = l*M + tau``."""
    M, n = predicted.means.shape
    S = len(backward)
    p = backward.stack_length
    means = np.tile(predicted.means, (S, 1))
    covs = np.tile(predicted.covs, (S, 1, 1))
    R = np.repeat(backward.P, M, axis=0)
    ys = np.repeat(backward.zeta, M, axis=0)
    offset = backward.offset
    try:
        pm, pc, log_ev, _ = condition_batch(means, covs, backward.O, offset[None], R, ys)
    except np.linalg.LinAlgError:
        _locate_degenerate(predicted, backward)
        raise
    lw = (backward.log_eps[:, None] + predicted.log_weights[None, :]).ravel() + log_ev
    return lw, pm, pc


def _locate_degenerate(predicted, backward):
    O = backward.O
    for l in range(len(backward)):
        for tau in range(len(predicted)):
            S = backward.P[l] + O @ predicted.covs[tau] @ O.T
            try:
                np.linalg.cholesky(symmetrize(S))
            except np.linalg.LinAlgError:
                raise np.linalg.LinAlgError(
                    f"degenerate innovation covariance for pair (tau={tau}, l={l})"
                ) from None


def smooth_at(t, predicted, backward, reduce_to=None, prune_log_weight=None):
    """Smoothed mixture at ``t`` from ``p(x_t | y_{1:t-1})`` and ``p(y_{t:N} | x_t)``."""
    if backward.t != t:
        raise ValueError(f"backward state is for t={backward.t}, expected {t}")
    lw, means, covs = _combine(predicted, backward)
    mix = GaussianMixture(lw - logsumexp(lw), means, covs, normalized=True)
    out = mix
    if reduce_to is not None:
        out = reduce_filtered(mix, reduce_to, prune_log_weight)
    return SmoothedState(t, out, mix)


def joint_smooth_at(t, filtered, backward_next, model, u_t, smoothed_next=None):
    """``p(x_{t+1}, x_t | y_{1:N})`` with components ``k = l*M + tau``.

    ``backward_next`` is ``p(y_{t+1:N} | x_{t+1})``.  The smoothed components
    at ``t+1`` are formed from the time update of ``filtered`` unless
    ``smoothed_next`` (an unreduced mixture built the same way) is given.
    Passing ``backward_next=None`` gives the end case ``(x_{N+1}, x_N)``.
    """
    u_t = np.atleast_1d(np.asarray(u_t, dtype=float))
    A, Q = model.A, model.Q
    M, n = filtered.means.shape
    pred = time_update(filtered, model, u_t)
    if backward_next is None:
        S = 1
        lw = filtered.log_weights - logsumexp(filtered.log_weights)
        sm, sc = pred.means, pred.covs
    else:
        if smoothed_next is None:
            lw, sm, sc = _combine(pred, backward_next)
            lw = lw - logsumexp(lw)
        else:
            lw, sm, sc = smoothed_next.log_weights, smoothed_next.means, smoothed_next.covs
        S = len(backward_next)
    if lw.size != S * M:
        raise ValueError("smoothed_next does not match the filtered/backward component counts")
    # K_tau = Sigma A' (Q + A Sigma A')^{-1}, via a solve against the symmetric factor
    SAt = filtered.covs @ A.T  # (M, n, n)
    Spred = pred.covs
    gains = np.swapaxes(np.linalg.solve(Spred, np.swapaxes(SAt, 1, 2)), 1, 2)
    G = np.tile(gains, (S, 1, 1))
    xf = np.tile(filtered.means, (S, 1))
    Sf = np.tile(filtered.covs, (S, 1, 1))
    xp = np.tile(pred.means, (S, 1))
    Sp = np.tile(Spred, (S, 1, 1))
    lower_mean = xf + np.einsum("kij,kj->ki", G, sm - xp)
    cross = sc @ np.swapaxes(G, 1, 2)  # Sigma_{t+1|N} K'
    lower_cov = symmetrize(Sf + G @ (sc - Sp) @ np.swapaxes(G, 1, 2))
    means = np.concatenate([sm, lower_mean], axis=1)
    covs = np.empty((S * M, 2 * n, 2 * n))
    covs[:, :n, :n] = sc
    covs[:, :n, n:] = cross
    covs[:, n:, :n] = np.swapaxes(cross, 1, 2)
    covs[:, n:, n:] = lower_cov
    return JointSmoothedState(t, GaussianMixture(lw, means, covs, normalized=True))


def run_smoother(filter_output, backward_output, model, u, opts=None, joint=True, reduce_joint=False):
    """Marginal (and optionally joint) smoothed mixtures for ``t = 1..N``.

    The marginal at ``t = N`` is the final filtered mixture itself.
    """
    opts = opts or FilterOptions()
    N = len(filter_output.states)
    u = np.asarray(u, dtype=float).reshape(N, model.m)
    out = SmootherResult()
    marg = [None] * N
    for t in range(N - 1):
        try:
            marg[t] = smooth_at(
                t + 1,
                filter_output.states[t].predicted,
                backward_output.updated[t],
                opts.max_components,
                opts.prune_log_weight,
            )
        except (ValueError, np.linalg.LinAlgError) as exc:
            exc.args = (f"t={t + 1}: {exc}",) + exc.args[1:]
            raise
    marg[N - 1] = SmoothedState(N, filter_output.states[N - 1].filtered)
    out.marginals = marg
    if joint:
        for t in range(N - 1):
            nxt = marg[t + 1].unreduced if t + 1 < N - 1 else None
            js = joint_smooth_at(
                t + 1, filter_output.states[t].filtered, backward_output.updated[t + 1], model, u[t], nxt
            )
            if reduce_joint:
                js = JointSmoothedState(
                    js.t, reduce_filtered(js.posterior, opts.max_components, opts.prune_log_weight)
                )
            out.joints.append(js)
    return out


def smooth(model, nl, y, u, opts=None, joint=True):
    """Forward pass, backward pass and smoother in one call."""
    opts = opts or BackwardOptions()
    fwd = run_filter(model, nl, y, u, opts)
    bwd = run_backward(model, nl, y, u, opts)
    return fwd, bwd, run_smoother(fwd, bwd, model, u, opts, joint=joint)
