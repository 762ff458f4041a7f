"""Gauss-Legendre rules and the Gaussian-sum form of ``p(y_t | x_t)``.

The output likelihood of a Wiener system is a sum of integrals over the
monotone branches and the flat pieces of ``g``.  Each integral is replaced
by a Gauss-Legendre rule, which turns ``p(y | x)`` into a finite sum of
Gaussians in the linear output ``r = C x + D u``:

    p(y | x) ~= sum_k exp(log_weight_k) N(zeta_k; C x + D u, R).
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .gauss import LOG_2PI, logsumexp

log = logging.getLogger(__name__)

MAX_ORDER = 200
LOG_FLOOR = -745.0


@dataclass(frozen=True)
class QuadratureRule:
    order: int
    nodes: np.ndarray
    weights: np.ndarray


def _legendre_and_derivative(L, x):
    p0 = np.ones_like(x)
    p1 = x.copy()
    for k in range(2, L + 1):
        p0, p1 = p1, ((2 * k - 1) * x * p1 - (k - 1) * p0) / k
    dp = L * (x * p1 - p0) / (x * x - 1.0)
    return p1, dp


@lru_cache(maxsize=None)
def _rule_arrays(L):
    if L == 1:
        return np.array([0.0]), np.array([2.0])
    i = np.arange(1, L + 1)
    x = np.cos(np.pi * (i - 0.25) / (L + 0.5))
    for _ in range(100):
        p, dp = _legendre_and_derivative(L, x)
        dx = p / dp
        x = x - dx
        if np.max(np.abs(dx)) <= 1e-15:
            break
    _, dp = _legendre_and_derivative(L, x)
    w = 2.0 / ((1.0 - x * x) * dp * dp)
    x = x[::-1].copy()
    w = w[::-1].copy()
    # enforce exact mirror symmetry
    x = 0.5 * (x - x[::-1])
    w = 0.5 * (w + w[::-1])
    w *= 2.0 / w.sum()
    if L % 2:
        x[L // 2] = 0.0
    x.flags.writeable = False
    w.flags.writeable = False
    return x, w


def legendre_rule(L):
    """``L``-point Gauss-Legendre rule on ``[-1, 1]``, nodes increasing."""
    if not isinstance(L, (int, np.integer)) or not 1 <= L <= MAX_ORDER:
        raise ValueError(f"quadrature order must be an integer in [1, {MAX_ORDER}], got {L!r}")
    nodes, weights = _rule_arrays(int(L))
    return QuadratureRule(int(L), nodes, weights)


@dataclass(frozen=True)
class LikelihoodComponent:
    log_weight: float
    pseudo_measurement: float


@dataclass(frozen=True, eq=False)
class LikelihoodMixture:
    """Pseudo-measurements ``zeta`` with unnormalized log-weights.

    ``source`` holds the originating piece for each component: branch ``i``
    is stored as ``i`` and quantization set ``j`` as ``-(j + 1)``.
    """

    log_weights: np.ndarray
    zeta: np.ndarray
    y: float
    source: np.ndarray
    dropped: int = 0

    def __len__(self):
        return self.log_weights.size

    @property
    def components(self):
        return [LikelihoodComponent(float(a), float(b)) for a, b in zip(self.log_weights, self.zeta)]

    def log_likelihood(self, r_mean, R):
        """``log sum_k w_k N(zeta_k; r_mean, R)`` for an array of ``r_mean``."""
        r = np.asarray(r_mean, dtype=float)
        flat = r.reshape(-1, 1)
        d = self.zeta[None, :] - flat
        comp = self.log_weights[None, :] - 0.5 * (LOG_2PI + np.log(R) + d * d / R)
        out = logsumexp(comp, axis=1)
        return out.reshape(r.shape)


def forced_likelihood(y):
    """Single pseudo-measurement ``zeta = y`` with unit weight."""
    return LikelihoodMixture(np.array([0.0]), np.array([float(y)]), float(y), np.array([0]))


def _log_normal0(x, var):
    return -0.5 * (LOG_2PI + np.log(var) + x * x / var)


def _branch_components(nl, y, P, rule):
    psi, omega = rule.nodes, rule.weights
    one_m = 1.0 - psi * psi
    lam = psi / one_m
    log_jac = np.log1p(psi * psi) - 2.0 * np.log(one_m)
    base = np.log(omega) + _log_normal0(lam, P) + log_jac
    zarg = y - lam
    lws, zetas, srcs = [], [], []
    dropped = 0
    for i, b in enumerate(nl.branches):
        inside = b.image_contains(zarg)
        with np.errstate(divide="ignore", invalid="ignore"):
            lphi = np.where(inside, b.log_inverse_derivative(np.where(inside, zarg, 1.0)), -np.inf)
        lw = base + lphi
        keep = inside & np.isfinite(lw) & (lw > LOG_FLOOR)
        dropped += int(np.count_nonzero(~keep))
        if keep.any():
            lws.append(lw[keep])
            zetas.append(b.inverse(zarg[keep]))
            srcs.append(np.full(int(keep.sum()), i))
    return lws, zetas, srcs, dropped


def _quant_components(nl, y, P, R, rule):
    psi, omega = rule.nodes, rule.weights
    s = np.sqrt(R) if R > 0 else 1.0
    lws, zetas, srcs = [], [], []
    dropped = 0
    for j, q in enumerate(nl.quant_sets):
        lo, hi = q.lower, q.upper
        if np.isfinite(lo) and np.isfinite(hi):
            zeta = 0.5 * psi * (hi - lo) + 0.5 * (hi + lo)
            log_jac = np.full(psi.shape, np.log(0.5 * (hi - lo)))
        elif np.isfinite(lo):
            zeta = lo + s * (1.0 + psi) / (1.0 - psi)
            log_jac = np.log(2.0 * s) - 2.0 * np.log(1.0 - psi)
        elif np.isfinite(hi):
            zeta = hi - s * (1.0 - psi) / (1.0 + psi)
            log_jac = np.log(2.0 * s) - 2.0 * np.log(1.0 + psi)
        else:
            raise ValueError("quantization set unbounded on both sides")
        lw = np.log(omega) + _log_normal0(y - q.level, P) + log_jac
        keep = lw > LOG_FLOOR
        dropped += int(np.count_nonzero(~keep))
        if keep.any():
            lws.append(lw[keep])
            zetas.append(zeta[keep])
            srcs.append(np.full(int(keep.sum()), -(j + 1)))
    return lws, zetas, srcs, dropped


def likelihood_mixture(model, nl, y, L1=10, L2=None):
    """Quadrature approximation of ``p(y | x)`` as weighted pseudo-measurements.

    Branch components come first (branch-major, node-minor), followed by the
    quantization components.  Weights are not normalized.
    """
    if not model.P > 0:
        raise ValueError("eta-noise variance must be positive for the quadrature form")
    if L2 is None:
        L2 = L1
    y = float(y)
    b = _branch_components(nl, y, model.P, legendre_rule(L1))
    q = _quant_components(nl, y, model.P, model.R, legendre_rule(L2))
    lws, zetas, srcs = b[0] + q[0], b[1] + q[1], b[2] + q[2]
    dropped = b[3] + q[3]
    if dropped:
        log.debug("likelihood_mixture(y=%g): dropped %d components", y, dropped)
    if lws:
        lw = np.concatenate(lws)
        zeta = np.concatenate(zetas).astype(float)
        src = np.concatenate(srcs)
    else:
        lw, zeta, src = np.empty(0), np.empty(0), np.empty(0, dtype=int)
    return LikelihoodMixture(lw, zeta, y, src, dropped)
