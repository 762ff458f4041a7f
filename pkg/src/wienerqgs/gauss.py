"""Gaussian and Gaussian-mixture values, conditioning identities and reduction.

Every filter and smoother step in this package is composed from the
operations defined here.  Mixture weights are always carried in the log
domain; covariances are symmetrized after every update.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.linalg import lapack

LOG_2PI = float(np.log(2.0 * np.pi))

# condition-number ceiling for treating a matrix as invertible
COND_LIMIT = 1e12


class DegenerateCovarianceError(np.linalg.LinAlgError):
    """A covariance matrix that should be positive definite is not.

    ``pivot`` is the (0-based) index of the leading minor that failed the
    Cholesky factorization, or ``None`` when unknown (batched paths).
    """

    def __init__(self, message, pivot=None):
        super().__init__(message)
        self.pivot = pivot


class DegenerateInnovationError(DegenerateCovarianceError):
    """The innovation covariance ``R + C Q C'`` is singular."""


class UnreducibleBackwardFormError(ValueError):
    """The observation matrix of a backward-form density is rank deficient."""


def logsumexp(a, axis=None):
    """``log(sum(exp(a)))`` along ``axis``; all ``-inf`` gives ``-inf``."""
    a = np.asarray(a, dtype=float)
    if a.size == 0:
        return -np.inf if axis is None else np.full(np.delete(a.shape, axis), -np.inf)
    m = np.max(a, axis=axis, keepdims=True)
    m = np.where(np.isfinite(m), m, 0.0)
    with np.errstate(divide="ignore"):
        out = np.log(np.sum(np.exp(a - m), axis=axis, keepdims=True)) + m
    return out.item() if axis is None else np.squeeze(out, axis=axis)


def symmetrize(S):
    """Return ``(S + S') / 2`` over the last two axes."""
    return 0.5 * (S + np.swapaxes(S, -1, -2))


@dataclass(frozen=True)
class Gaussian:
    """Multivariate normal N(mean, cov)."""

    mean: np.ndarray
    cov: np.ndarray

    def __post_init__(self):
        mean = np.atleast_1d(np.asarray(self.mean, dtype=float)).copy()
        cov = np.asarray(self.cov, dtype=float)
        if cov.ndim < 2:
            cov = np.atleast_1d(cov)
            cov = np.diag(cov) if cov.size == mean.size and mean.size > 1 else cov.reshape(mean.size, mean.size)
        cov = cov.copy()
        if mean.ndim != 1 or cov.shape != (mean.size, mean.size):
            raise ValueError(f"shape mismatch: mean {mean.shape}, cov {cov.shape}")
        mean.flags.writeable = False
        cov.flags.writeable = False
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "cov", cov)

    @property
    def dim(self):
        return self.mean.size

    def check(self, tol=1e-10):
        """Raise ``DegenerateCovarianceError`` if the covariance is not a
        symmetric PSD matrix (relative tolerance ``tol``)."""
        check_covariance(self.cov, tol)
        return self

    def logpdf(self, x):
        return log_gauss_eval(x, self)


def check_covariance(cov, tol=1e-10):
    cov = np.asarray(cov, dtype=float)
    scale = max(float(np.max(np.abs(cov))), 1e-300)
    if np.max(np.abs(cov - np.swapaxes(cov, -1, -2))) > tol * scale:
        raise DegenerateCovarianceError("covariance is not symmetric")
    eig = np.linalg.eigvalsh(symmetrize(cov))
    trace = np.trace(cov, axis1=-2, axis2=-1)
    if np.any(eig.min(axis=-1) < -tol * np.maximum(np.abs(trace), 1e-300)):
        raise DegenerateCovarianceError("covariance is not positive semidefinite")


@dataclass(frozen=True)
class WeightedGaussian:
    log_weight: float
    gaussian: Gaussian


class GaussianMixture:
    """Gaussian mixture stored as stacked arrays.

    Parameters
    ----------
    log_weights : (M,) array
        Component log-weights; ``-inf`` is an exact zero weight.
    means : (M, n) array
    covs : (M, n, n) array
    normalized : bool, optional
        Whether the weights sum to one.  Detected automatically when omitted.
    """

    __slots__ = ("log_weights", "means", "covs", "normalized")

    def __init__(self, log_weights, means, covs, normalized=None):
        lw = np.atleast_1d(np.asarray(log_weights, dtype=float)).copy()
        means = np.asarray(means, dtype=float).copy()
        if means.ndim == 1:
            means = means.reshape(lw.size, -1)
        covs = np.asarray(covs, dtype=float)
        n = means.shape[1]
        covs = covs.reshape(lw.size, n, n).copy()
        if means.shape[0] != lw.size:
            raise ValueError("log_weights and means disagree in component count")
        if normalized is None:
            normalized = lw.size > 0 and abs(float(logsumexp(lw))) <= 1e-10
        for a in (lw, means, covs):
            a.flags.writeable = False
        object.__setattr__(self, "log_weights", lw)
        object.__setattr__(self, "means", means)
        object.__setattr__(self, "covs", covs)
        object.__setattr__(self, "normalized", bool(normalized))

    def __setattr__(self, name, value):
        raise AttributeError("GaussianMixture is immutable")

    @classmethod
    def single(cls, gaussian, log_weight=0.0):
        return cls([log_weight], gaussian.mean[None], gaussian.cov[None])

    @classmethod
    def from_components(cls, components):
        components = list(components)
        return cls(
            [c.log_weight for c in components],
            np.array([c.gaussian.mean for c in components]),
            np.array([c.gaussian.cov for c in components]),
        )

    def __len__(self):
        return self.log_weights.size

    def __repr__(self):
        return f"GaussianMixture(components={len(self)}, dim={self.dim}, normalized={self.normalized})"

    @property
    def dim(self):
        return self.means.shape[1]

    @property
    def weights(self):
        return np.exp(self.log_weights)

    @property
    def components(self):
        return [
            WeightedGaussian(float(lw), Gaussian(m, c))
            for lw, m, c in zip(self.log_weights, self.means, self.covs)
        ]

    def log_total_weight(self):
        return float(logsumexp(self.log_weights))

    def normalize(self):
        lw = self.log_weights - logsumexp(self.log_weights)
        return GaussianMixture(lw, self.means, self.covs, normalized=True)

    def prune(self, log_threshold):
        """Drop components whose weight relative to the total is below
        ``exp(log_threshold)``."""
        keep = self.log_weights - logsumexp(self.log_weights) >= log_threshold
        if keep.all():
            return self
        return GaussianMixture(self.log_weights[keep], self.means[keep], self.covs[keep], normalized=False)

    def marginal(self, idx):
        """Mixture over the coordinates ``idx``."""
        idx = np.asarray(idx)
        return GaussianMixture(
            self.log_weights, self.means[:, idx], self.covs[:, idx[:, None], idx[None, :]], self.normalized
        )

    def logpdf(self, x):
        """Log density at points ``x`` of shape (P, n) (or (P,) when n == 1)."""
        x = np.asarray(x, dtype=float)
        scalar = x.ndim == 0
        x = x.reshape(-1, self.dim)
        comp = batch_logpdf(x, self.means, self.covs)  # (P, M)
        out = logsumexp(comp + self.log_weights, axis=1)
        return out[0] if scalar else out

    def pdf(self, x):
        return np.exp(self.logpdf(x))


def batch_logpdf(x, means, covs):
    """``log N(x_p; means_m, covs_m)`` for every point/component pair -> (P, M)."""
    n = means.shape[1]
    try:
        L = np.linalg.cholesky(covs)
    except np.linalg.LinAlgError as exc:
        raise DegenerateCovarianceError("degenerate covariance in mixture evaluation") from exc
    if n == 1:
        sd = L[:, 0, 0]
        z = (x[:, :1] - means[None, :, 0]) / sd
        return -0.5 * (LOG_2PI + z**2) - np.log(sd)
    Linv = np.linalg.inv(L)
    diff = x[:, None, :] - means[None, :, :]
    z = np.einsum("mij,pmj->pmi", Linv, diff)
    logdet = 2.0 * np.log(np.diagonal(L, axis1=1, axis2=2)).sum(axis=1)
    return -0.5 * (n * LOG_2PI + logdet + np.sum(z**2, axis=2))


def _cholesky(S):
    S = np.asarray(S, dtype=float)
    L, info = lapack.dpotrf(S, lower=1, clean=1)
    if info != 0:
        raise DegenerateCovarianceError(
            f"degenerate covariance: Cholesky failed at pivot {info - 1}", pivot=info - 1
        )
    return L


def log_gauss_eval(x, g):
    """Numerically stable ``log N(x; g.mean, g.cov)`` via Cholesky."""
    x = np.atleast_1d(np.asarray(x, dtype=float))
    if x.shape != g.mean.shape:
        raise ValueError(f"dimension mismatch: x {x.shape}, mean {g.mean.shape}")
    L = _cholesky(g.cov)
    z = np.linalg.solve(L, x - g.mean)
    return float(-0.5 * (x.size * LOG_2PI + z @ z) - np.log(np.diag(L)).sum())


def condition_batch(means, covs, C, offsets, R, ys):
    """Batched linear-Gaussian conditioning.

    For each batch element b, the prior ``N(x; means[b], covs[b])`` is
    combined with the observation model ``y = C_b x + offsets[b] + e``,
    ``e ~ N(0, R_b)`` at data ``ys[b]``.

    ``C`` may be (p, n) or (B, p, n); ``R`` may be (p, p) or (B, p, p).

    Returns
    -------
    post_means : (B, n)
    post_covs : (B, n, n)
    log_evidence : (B,)
        ``log N(ys[b]; C_b means[b] + offsets[b], R_b + C_b covs[b] C_b')``
    gains : (B, n, p)
    """
    means = np.asarray(means, dtype=float)
    covs = np.asarray(covs, dtype=float)
    C = np.asarray(C, dtype=float)
    R = np.asarray(R, dtype=float)
    ys = np.asarray(ys, dtype=float)
    offsets = np.asarray(offsets, dtype=float)
    B, n = means.shape
    Cb = np.broadcast_to(C, (B,) + C.shape[-2:])
    p = Cb.shape[1]
    ys = ys.reshape(B, p)
    offsets = np.broadcast_to(offsets, (B, p))
    CS = Cb @ covs  # (B, p, n)
    S = symmetrize(CS @ np.swapaxes(Cb, 1, 2) + R)  # (B, p, p)
    resid = ys - np.einsum("bpn,bn->bp", Cb, means) - offsets
    if p == 1:
        s = S[:, 0, 0]
        if np.any(~(s > 0)):
            raise DegenerateInnovationError("degenerate innovation: non-positive innovation variance")
        K = np.swapaxes(CS, 1, 2) / s[:, None, None]  # (B, n, 1)
        log_ev = -0.5 * (LOG_2PI + np.log(s) + resid[:, 0] ** 2 / s)
    else:
        try:
            L = np.linalg.cholesky(S)
        except np.linalg.LinAlgError as exc:
            raise DegenerateInnovationError("degenerate innovation covariance") from exc
        z = np.linalg.solve(L, resid[..., None])[..., 0]
        logdet = 2.0 * np.log(np.diagonal(L, axis1=1, axis2=2)).sum(axis=1)
        log_ev = -0.5 * (p * LOG_2PI + logdet + np.sum(z**2, axis=1))
        # K' = S^{-1} C Sigma
        K = np.swapaxes(np.linalg.solve(S, CS), 1, 2)
    post_means = means + np.einsum("bnp,bp->bn", K, resid)
    post_covs = symmetrize(covs - K @ CS)
    return post_means, post_covs, log_ev, K


def condition_on_linear_observation(prior, C, offset, R, y):
    """Condition ``prior`` on ``y = C x + offset + e``, ``e ~ N(0, R)``.

    Returns the posterior Gaussian and ``log N(y; C psi + offset, R + C Q C')``.
    """
    n = prior.dim
    C = np.asarray(C, dtype=float).reshape(-1, n)
    p = C.shape[0]
    R = np.asarray(R, dtype=float).reshape(p, p)
    y = np.atleast_1d(np.asarray(y, dtype=float)).reshape(p)
    offset = np.broadcast_to(np.asarray(offset, dtype=float), (p,))
    pm, pc, le, _ = condition_batch(prior.mean[None], prior.cov[None], C, offset[None], R, y[None])
    return Gaussian(pm[0], pc[0]), float(le[0])


def joint_gaussian(prior, C, mu, R):
    """Joint density of ``(x, y)`` for ``x ~ prior`` and ``y | x ~ N(C x + mu, R)``."""
    n = prior.dim
    C = np.asarray(C, dtype=float).reshape(-1, n)
    p = C.shape[0]
    R = np.asarray(R, dtype=float).reshape(p, p)
    mu = np.broadcast_to(np.asarray(mu, dtype=float), (p,))
    Q = prior.cov
    QCt = Q @ C.T
    cov = np.block([[Q, QCt], [QCt.T, symmetrize(R + C @ QCt)]])
    mean = np.concatenate([prior.mean, C @ prior.mean + mu])
    return Gaussian(mean, cov)


def backward_form_to_gaussian(O, mu, P, y):
    """Rewrite ``N(y; O x + mu, P)`` as ``exp(log_alpha) * N(x; m, U)``.

    ``log_alpha`` is fixed by requiring the identity to hold pointwise in x;
    the determinant factor is ``det(2 pi F^{-1})^{1/2}`` with
    ``F = O' P^{-1} O``.

    Raises
    ------
    UnreducibleBackwardFormError
        If ``O`` does not have numerically full column rank.
    """
    y = np.atleast_1d(np.asarray(y, dtype=float))
    p = y.size
    O = np.asarray(O, dtype=float).reshape(p, -1)
    n = O.shape[1]
    P = np.asarray(P, dtype=float).reshape(p, p)
    mu = np.broadcast_to(np.asarray(mu, dtype=float), (p,))
    log_alpha, mean, cov = backward_form_batch(O[None], mu[None], P[None], y[None])
    return float(log_alpha[0]), Gaussian(mean[0], cov[0])


def backward_form_batch(O, mu, P, y):
    """Vectorized :func:`backward_form_to_gaussian` over a leading batch axis.

    Shapes: ``O`` (B, p, n), ``mu`` (B, p), ``P`` (B, p, p), ``y`` (B, p).
    """
    B, p, n = O.shape
    if p < n:
        raise UnreducibleBackwardFormError(f"unreducible backward form: {p} rows for {n} states")
    try:
        L = np.linalg.cholesky(P)
    except np.linalg.LinAlgError as exc:
        raise DegenerateCovarianceError("degenerate covariance in backward form") from exc
    Ow = np.linalg.solve(L, O)  # whitened observation matrix
    yw = np.linalg.solve(L, (y - mu)[..., None])[..., 0]
    Qf, Rf = np.linalg.qr(Ow)  # Rf (B, n, n), F = Rf' Rf
    d = np.abs(np.diagonal(Rf, axis1=1, axis2=2))
    if np.any(d.min(axis=1) <= 0) or np.any((d.max(axis=1) / d.min(axis=1)) ** 2 >= COND_LIMIT):
        raise UnreducibleBackwardFormError("unreducible backward form: observation matrix is rank deficient")
    proj = np.einsum("bpn,bp->bn", Qf, yw)
    resid2 = np.sum(yw**2, axis=1) - np.sum(proj**2, axis=1)
    resid2 = np.maximum(resid2, 0.0)
    mean = np.linalg.solve(Rf, proj[..., None])[..., 0]
    Rinv = np.linalg.inv(Rf)
    cov = symmetrize(Rinv @ np.swapaxes(Rinv, 1, 2))
    logdet_P = 2.0 * np.log(np.diagonal(L, axis1=1, axis2=2)).sum(axis=1)
    logdet_F = 2.0 * np.log(d).sum(axis=1)
    log_alpha = -0.5 * (p * LOG_2PI + logdet_P) + 0.5 * (n * LOG_2PI - logdet_F) - 0.5 * resid2
    return log_alpha, mean, cov


def mixture_moments(m):
    """Overall mean and covariance of a normalized mixture."""
    if not m.normalized:
        raise ValueError("mixture_moments requires a normalized mixture")
    w = m.weights
    mean = w @ m.means
    d = m.means - mean
    cov = np.einsum("k,kij->ij", w, m.covs) + np.einsum("k,ki,kj->ij", w, d, d)
    return Gaussian(mean, symmetrize(cov))


def _logdet(covs):
    if covs.shape[-1] == 1:
        return np.log(covs[..., 0, 0])
    sign, ld = np.linalg.slogdet(covs)
    return np.where(sign > 0, ld, -np.inf)


def _pair_merge(lwi, lwj, mi, mj, Ci, Cj):
    """Moment-matched merge of component pairs (vectorized over leading axis)."""
    lw = np.logaddexp(lwi, lwj)
    fi = np.exp(lwi - lw)
    fj = np.exp(lwj - lw)
    d = mi - mj
    mean = fi[:, None] * mi + fj[:, None] * mj
    cov = fi[:, None, None] * Ci + fj[:, None, None] * Cj + (fi * fj)[:, None, None] * (d[:, :, None] * d[:, None, :])
    return lw, mean, cov


def _pair_cost(w, lw, means, covs, logdet, i, j):
    _, _, cov = _pair_merge(lw[i], lw[j], means[i], means[j], covs[i], covs[j])
    wij = w[i] + w[j]
    return 0.5 * (wij * _logdet(cov) - w[i] * logdet[i] - w[j] * logdet[j])


def reduce_by_joining(m, max_components, backend="compiled"):
    """Greedy KL-bound joining down to at most ``max_components``.

    Repeatedly merges the pair minimizing Runnalls' upper bound on the
    Kullback-Leibler discrimination,

        B(i, j) = 1/2 [(w_i + w_j) log|S_ij| - w_i log|S_i| - w_j log|S_j|],

    where ``S_ij`` is the moment-matched covariance of the merged pair.
    Ties go to the lexicographically smallest (i, j).  The merged component
    takes slot ``i``; the relative order of the survivors is preserved.
    Works for unnormalized mixtures (the bound is scale invariant).

    ``backend="numpy"`` selects the vectorized reference loop; the default
    runs the same greedy rule in compiled code.
    """
    if max_components < 1:
        raise ValueError("max_components must be >= 1")
    if len(m) <= max_components:
        return m
    finite = np.isfinite(m.log_weights)
    lw = m.log_weights[finite].copy()
    means = m.means[finite].copy()
    covs = m.covs[finite].copy()
    M = lw.size
    if M <= max_components:
        return GaussianMixture(lw, means, covs, m.normalized)
    shift = logsumexp(lw)
    w = np.exp(lw - shift)
    if backend == "compiled":
        from ._joining import joining_core

        keep = joining_core(lw, means, covs, w, int(max_components))
        return GaussianMixture(lw[keep], means[keep], covs[keep], m.normalized)
    if backend != "numpy":
        raise ValueError(f"unknown backend {backend!r}")
    logdet = _logdet(covs)
    cost = np.full((M, M), np.inf)
    iu, ju = np.triu_indices(M, 1)
    cost[iu, ju] = _pair_cost(w, lw, means, covs, logdet, iu, ju)
    active = np.ones(M, dtype=bool)
    count = M
    while count > max_components:
        flat = int(np.argmin(cost))
        i, j = divmod(flat, M)
        nlw, nm, nc = _pair_merge(lw[i : i + 1], lw[j : j + 1], means[i : i + 1], means[j : j + 1], covs[i : i + 1], covs[j : j + 1])
        lw[i] = nlw[0]
        means[i] = nm[0]
        covs[i] = symmetrize(nc[0])
        w[i] = w[i] + w[j]
        logdet[i] = _logdet(covs[i : i + 1])[0]
        active[j] = False
        cost[j, :] = np.inf
        cost[:, j] = np.inf
        count -= 1
        others = np.flatnonzero(active)
        others = others[others != i]
        if others.size:
            ii = np.full(others.size, i)
            c = _pair_cost(w, lw, means, covs, logdet, np.minimum(ii, others), np.maximum(ii, others))
            lo = others < i
            cost[others[lo], i] = c[lo]
            cost[i, others[~lo]] = c[~lo]
    keep = np.flatnonzero(active)
    return GaussianMixture(lw[keep], means[keep], covs[keep], m.normalized)
