"""Quadrature Gaussian sum filter.

Each measurement update runs one Kalman update per (prior component,
pseudo-measurement) pair, so the filter is a bank of Kalman filters whose
weights are driven by the innovation likelihoods.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .gauss import GaussianMixture, condition_batch, logsumexp, mixture_moments, reduce_by_joining, symmetrize
from .quadrature import likelihood_mixture

PRUNE_LOG_WEIGHT = -46.0


class NoLikelihoodSupportError(ValueError):
    """The measurement lies outside every branch image and quantization level."""


@dataclass
class UpdateDiagnostics:
    gains: np.ndarray  # (M_pred, n, 1)
    raw_log_weights: np.ndarray  # (M_pred * K,)
    dropped: int = 0


@dataclass
class FilterState:
    t: int
    predicted: GaussianMixture
    filtered: GaussianMixture
    log_evidence_increment: float
    diagnostics: Optional[UpdateDiagnostics] = None
    unreduced_count: int = 0


@dataclass
class FilterOptions:
    L1: int = 10
    L2: Optional[int] = None
    max_components: int = 10
    prune_log_weight: Optional[float] = PRUNE_LOG_WEIGHT
    keep_diagnostics: bool = False
    # likelihood(model, nl, y_t, t) -> LikelihoodMixture; overrides the quadrature
    likelihood: Optional[Callable] = None


@dataclass
class FilterResult:
    states: list = field(default_factory=list)
    log_evidence: float = 0.0

    def __len__(self):
        return len(self.states)

    def moments(self):
        g = [mixture_moments(s.filtered) for s in self.states]
        return np.array([x.mean for x in g]), np.array([x.cov for x in g])


def initial_prediction(model):
    return GaussianMixture([0.0], model.mu1[None], model.P1[None], normalized=True)


def measurement_update(predicted, lik, model, u_t):
    """Cross product of Kalman updates.  Component ``k = l*K + kappa``
    combines prior component ``l`` with pseudo-measurement ``kappa``."""
    K = len(lik)
    if K == 0:
        raise NoLikelihoodSupportError(f"no likelihood support for y={lik.y!r}")
    u_t = np.atleast_1d(np.asarray(u_t, dtype=float))
    M, n = predicted.means.shape
    offset = float(model.D[0] @ u_t)
    r_hat = predicted.means @ model.C[0] + offset
    # per-prior gain and posterior covariance (shared by all kappa)
    _, post_covs, _, gains = condition_batch(
        predicted.means, predicted.covs, model.C, np.full((M, 1), offset), model.R, r_hat[:, None]
    )
    S = model.R + np.einsum("i,lij,j->l", model.C[0], predicted.covs, model.C[0])
    resid = lik.zeta[None, :] - r_hat[:, None]  # (M, K)
    log_ev = -0.5 * (np.log(2 * np.pi) + np.log(S)[:, None] + resid**2 / S[:, None])
    raw = (predicted.log_weights[:, None] + lik.log_weights[None, :] + log_ev).ravel()
    means = (predicted.means[:, None, :] + gains[:, None, :, 0] * resid[:, :, None]).reshape(M * K, n)
    covs = np.repeat(post_covs, K, axis=0)
    log_evidence = float(logsumexp(raw))
    filtered = GaussianMixture(raw - log_evidence, means, covs, normalized=True)
    return filtered, UpdateDiagnostics(gains, raw, lik.dropped), log_evidence


def time_update(filtered, model, u_t):
    u_t = np.atleast_1d(np.asarray(u_t, dtype=float))
    A = model.A
    means = filtered.means @ A.T + model.B @ u_t
    covs = symmetrize(A @ filtered.covs @ A.T + model.Q)
    return GaussianMixture(filtered.log_weights, means, covs, filtered.normalized)


def reduce_filtered(mix, max_components, prune_log_weight=PRUNE_LOG_WEIGHT):
    if prune_log_weight is not None and len(mix) > max_components:
        mix = mix.prune(prune_log_weight)
    if len(mix) > max_components:
        mix = reduce_by_joining(mix, max_components)
    return mix.normalize()


def _as_inputs(u, N, m):
    u = np.asarray(u, dtype=float)
    if u.ndim == 1 and m == 1:
        u = u[:, None]
    if u.shape != (N, m):
        raise ValueError(f"inputs must have shape ({N}, {m}), got {u.shape}")
    return u


def run_filter(model, nl, y, u, opts=None):
    """Run the filter over ``y`` (N,) with inputs ``u`` (N, m)."""
    opts = opts or FilterOptions()
    y = np.asarray(y, dtype=float).ravel()
    N = y.size
    if N < 1:
        raise ValueError("need at least one measurement")
    u = _as_inputs(u, N, model.m)
    result = FilterResult()
    predicted = initial_prediction(model)
    for t in range(N):
        try:
            if opts.likelihood is not None:
                lik = opts.likelihood(model, nl, y[t], t)
            else:
                lik = likelihood_mixture(model, nl, y[t], opts.L1, opts.L2)
            filtered, diag, inc = measurement_update(predicted, lik, model, u[t])
        except (ValueError, np.linalg.LinAlgError) as exc:
            exc.args = (f"t={t + 1}: {exc}",) + exc.args[1:]
            raise
        count = len(filtered)
        filtered = reduce_filtered(filtered, opts.max_components, opts.prune_log_weight)
        result.states.append(
            FilterState(t + 1, predicted, filtered, inc, diag if opts.keep_diagnostics else None, count)
        )
        result.log_evidence += inc
        if t + 1 < N:
            predicted = time_update(filtered, model, u[t])
    return result
