"""Reference estimators: Kalman filter/RTS smoother, EKF/EKS on the extended
system, and the bootstrap particle filter with a backward-simulation
smoother."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.linalg import cho_factor, cho_solve
from scipy.signal import fftconvolve
from scipy.stats import gaussian_kde

from .gauss import LOG_2PI, DegenerateInnovationError, logsumexp, symmetrize
from .model import STREAM_PF, STREAM_PS, STREAM_V, STREAM_W, chol_psd, draw_initial_state, make_rng
from .nonlinearity import evaluate
from .quadrature import likelihood_mixture


class ParticleDegeneracyError(RuntimeError):
    """All particle weights vanished."""


# -- Kalman filter / RTS smoother -------------------------------------------


@dataclass
class KalmanResult:
    filt_means: np.ndarray  # (N, n)  x_{t|t}
    filt_covs: np.ndarray  # (N, n, n)
    pred_means: np.ndarray  # (N, n)  x_{t|t-1}
    pred_covs: np.ndarray
    gains: np.ndarray  # (N, n, p)
    log_evidence: float


@dataclass
class SmootherResult:
    means: np.ndarray  # (N, n)  x_{t|N}
    covs: np.ndarray
    cross: np.ndarray  # (N, n, n); cross[t] = Cov(x_t, x_{t-1} | y_{1:N}), cross[0] unused
    cross_identity: np.ndarray  # Sigma_{t|N} J_{t-1}'
    gains: np.ndarray  # (N, n, n) smoother gains J_t = Sigma_{t|t} A' Sigma_{t+1|t}^{-1}


def _linear_kf(A, B, C, D, Q, R, mu1, P1, y, u):
    A, B, C, D, Q = (np.atleast_2d(np.asarray(a, dtype=float)) for a in (A, B, C, D, Q))
    R = np.atleast_2d(np.asarray(R, dtype=float))
    y = np.asarray(y, dtype=float).reshape(len(u), -1)
    N, n, p = y.shape[0], A.shape[0], C.shape[0]
    fm, fc = np.empty((N, n)), np.empty((N, n, n))
    pm, pc = np.empty((N, n)), np.empty((N, n, n))
    gains = np.empty((N, n, p))
    m, S = np.asarray(mu1, dtype=float).copy(), np.asarray(P1, dtype=float).copy()
    total = 0.0
    eye = np.eye(n)
    for t in range(N):
        pm[t], pc[t] = m, S
        inn = C @ S @ C.T + R
        try:
            cf = cho_factor(inn)
        except np.linalg.LinAlgError as exc:
            raise DegenerateInnovationError(f"degenerate innovation at t={t + 1}") from exc
        K = cho_solve(cf, C @ S).T
        e = y[t] - C @ m - D @ u[t]
        total += -0.5 * (p * LOG_2PI + 2 * np.log(np.diag(cf[0])).sum() + e @ cho_solve(cf, e))
        m = m + K @ e
        S = symmetrize((eye - K @ C) @ S)
        fm[t], fc[t], gains[t] = m, S, K
        m = A @ m + B @ u[t]
        S = symmetrize(A @ S @ A.T + Q)
    return KalmanResult(fm, fc, pm, pc, gains, total)


def kalman_filter(model, y, u):
    """Classical Kalman filter treating ``y_t = C x_t + D u_t + v_t``."""
    u = np.asarray(u, dtype=float).reshape(len(y), -1)
    return _linear_kf(model.A, model.B, model.C, model.D, model.Q, model.R, model.mu1, model.P1, y, u)


def _rts(kf, A, C):
    N, n = kf.filt_means.shape
    A = np.atleast_2d(A)
    C = np.atleast_2d(C)
    sm, sc = kf.filt_means.copy(), kf.filt_covs.copy()
    J = np.zeros((N, n, n))
    for t in range(N - 1):
        cf = cho_factor(kf.pred_covs[t + 1])
        J[t] = cho_solve(cf, A @ kf.filt_covs[t]).T
    for t in range(N - 2, -1, -1):
        sm[t] = kf.filt_means[t] + J[t] @ (sm[t + 1] - kf.pred_means[t + 1])
        sc[t] = symmetrize(kf.filt_covs[t] + J[t] @ (sc[t + 1] - kf.pred_covs[t + 1]) @ J[t].T)
    cross = np.zeros((N, n, n))
    ident = np.zeros((N, n, n))
    if N >= 2:
        K = kf.gains[N - 1]
        cross[N - 1] = (np.eye(n) - K @ C) @ A @ kf.filt_covs[N - 2]
        for t in range(N - 2, 0, -1):
            cross[t] = kf.filt_covs[t] @ J[t - 1].T + J[t] @ (cross[t + 1] - A @ kf.filt_covs[t]) @ J[t - 1].T
        for t in range(1, N):
            ident[t] = sc[t] @ J[t - 1].T
    return SmootherResult(sm, sc, cross, ident, J)


def kalman_smoother(kf, model):
    """RTS smoother with the lag-one cross-covariance recursion."""
    return _rts(kf, model.A, model.C)


# -- extended system ---------------------------------------------------------


@dataclass(frozen=True, eq=False)
class ExtendedModel:
    """State ``[x_t; r_t]`` driven by ``[u_t; u_{t+1}]``; output ``g(r_t) + eta_t``."""

    A: np.ndarray
    B: np.ndarray
    C: np.ndarray
    D: np.ndarray
    Q: np.ndarray
    P: float
    base: object

    def prior(self, u1):
        mdl = self.base
        u1 = np.atleast_1d(np.asarray(u1, dtype=float))
        mean = np.r_[mdl.mu1, mdl.C[0] @ mdl.mu1 + mdl.D[0] @ u1]
        PC = mdl.P1 @ mdl.C[0]
        cov = np.block([[mdl.P1, PC[:, None]], [PC[None, :], np.array([[mdl.C[0] @ PC + mdl.R]])]])
        return mean, cov


def build_extended_system(model):
    n, m = model.n, model.m
    C, A, B, Q = model.C, model.A, model.B, model.Q
    At = np.block([[A, np.zeros((n, 1))], [C @ A, np.zeros((1, 1))]])
    Bt = np.block([[B, np.zeros((n, m))], [C @ B, model.D]])
    Ct = np.r_[np.zeros(n), 1.0][None, :]
    Dt = np.zeros((1, 2 * m))
    QC = Q @ C.T
    Qt = np.block([[Q, QC], [QC.T, C @ QC + model.R]])
    return ExtendedModel(At, Bt, Ct, Dt, symmetrize(Qt), model.P, model)


def extended_inputs(u):
    """Rows ``[u_t, u_{t+1}]`` with ``u_{N+1} = 0``."""
    u = np.asarray(u, dtype=float)
    if u.ndim == 1:
        u = u[:, None]
    nxt = np.vstack([u[1:], np.zeros((1, u.shape[1]))])
    return np.hstack([u, nxt])


def simulate_extended(ext, u, seed):
    """Extended-state trajectory driven by the same noise streams as
    :func:`wienerqgs.model.simulate` (returns ``(N, n+1)`` states)."""
    mdl = ext.base
    u = np.asarray(u, dtype=float).reshape(-1, mdl.m)
    N, n = u.shape[0], mdl.n
    w = make_rng(seed, STREAM_W).standard_normal((N, n)) @ chol_psd(mdl.Q).T
    v = np.sqrt(mdl.R) * make_rng(seed, STREAM_V).standard_normal(N)
    x1 = draw_initial_state(mdl, seed)
    ut = extended_inputs(u)
    xt = np.empty((N, n + 1))
    xt[0] = np.r_[x1, mdl.C[0] @ x1 + mdl.D[0] @ u[0] + v[0]]
    for t in range(N - 1):
        wt = np.r_[w[t], mdl.C[0] @ w[t] + v[t + 1]]
        xt[t + 1] = ext.A @ xt[t] + ext.B @ ut[t] + wt
    return xt


@dataclass
class EKFResult:
    filt_means: np.ndarray
    filt_covs: np.ndarray
    pred_means: np.ndarray
    pred_covs: np.ndarray
    gains: np.ndarray
    n: int

    def state_means(self):
        return self.filt_means[:, : self.n]


def ekf(ext, nl, y, u):
    """EKF on the extended system with output Jacobian ``[0, ..., g'(r)]``
    (right derivative at kinks)."""
    y = np.asarray(y, dtype=float).ravel()
    N = y.size
    ut = extended_inputs(np.asarray(u, dtype=float).reshape(N, -1))
    m, S = ext.prior(np.asarray(u, dtype=float).reshape(N, -1)[0])
    d = m.size
    fm, fc = np.empty((N, d)), np.empty((N, d, d))
    pm, pc = np.empty((N, d)), np.empty((N, d, d))
    gains = np.empty((N, d, 1))
    for t in range(N):
        pm[t], pc[t] = m, S
        r = m[-1]
        H = np.zeros(d)
        H[-1] = float(nl.derivative(r))
        s = H @ S @ H + ext.P
        K = (S @ H) / s
        m = m + K * (y[t] - float(evaluate(nl, r)))
        S = symmetrize(S - np.outer(K, H @ S))
        fm[t], fc[t], gains[t, :, 0] = m, S, K
        m = ext.A @ m + ext.B @ ut[t]
        S = symmetrize(ext.A @ S @ ext.A.T + ext.Q)
    return EKFResult(fm, fc, pm, pc, gains, ext.base.n)


def eks(ekf_out, ext):
    """RTS pass over the EKF (the extended dynamics are linear)."""
    N, d = ekf_out.filt_means.shape
    sm, sc = ekf_out.filt_means.copy(), ekf_out.filt_covs.copy()
    for t in range(N - 2, -1, -1):
        J = np.linalg.solve(ekf_out.pred_covs[t + 1], ext.A @ ekf_out.filt_covs[t]).T
        sm[t] = ekf_out.filt_means[t] + J @ (sm[t + 1] - ekf_out.pred_means[t + 1])
        sc[t] = symmetrize(ekf_out.filt_covs[t] + J @ (sc[t + 1] - ekf_out.pred_covs[t + 1]) @ J.T)
    return sm, sc


# -- particle filter / smoother ---------------------------------------------


def systematic_resample(weights, offset, count=None):
    """Indices from systematic resampling with a single uniform ``offset``."""
    w = np.asarray(weights, dtype=float)
    count = w.size if count is None else int(count)
    cdf = np.cumsum(w)
    cdf /= cdf[-1]
    pos = (np.arange(count) + offset) / count
    return np.minimum(np.searchsorted(cdf, pos, side="right"), w.size - 1)


@dataclass
class ParticleResult:
    particles: np.ndarray  # (N, Np, n) before resampling
    log_weights: np.ndarray  # (N, Np) normalized
    means: np.ndarray  # (N, n)
    seed: int

    def covs(self):
        w = np.exp(self.log_weights)
        d = self.particles - self.means[:, None, :]
        return np.einsum("tp,tpi,tpj->tij", w, d, d)


def grid_log_likelihood(model, nl, y, r_mean, points_per_sd=200):
    """``log p(y | r_mean)`` by direct convolution over ``r`` on a dense grid.

    ``p(y | rbar) = int N(y; g(r), P) N(r; rbar, R) dr`` is evaluated with the
    trapezoid rule for every grid node at once (FFT convolution) and then
    interpolated at ``r_mean``.  This route never inverts ``g``.
    """
    if not (model.R > 0 and model.P > 0):
        raise ValueError("grid likelihood needs R > 0 and P > 0")
    r_mean = np.asarray(r_mean, dtype=float)
    s = np.sqrt(model.R)
    h = s / points_per_sd
    half = int(np.ceil(9.0 * points_per_sd))
    lo = r_mean.min() - half * h
    count = int(np.ceil((r_mean.max() - r_mean.min()) / h)) + 2 * half + 2
    r = lo + h * np.arange(count)
    z = np.asarray(evaluate(nl, r), dtype=float)
    f = np.exp(-0.5 * (y - z) ** 2 / model.P) / np.sqrt(2 * np.pi * model.P)
    k = h * np.arange(-half, half + 1)
    kern = h * np.exp(-0.5 * k * k / model.R) / (s * np.sqrt(2 * np.pi))
    kern[0] *= 0.5
    kern[-1] *= 0.5
    conv = fftconvolve(f, kern[::-1], mode="valid")  # centres r[half:-half]
    centres = r[half : half + conv.size]
    with np.errstate(divide="ignore"):
        return np.log(np.maximum(np.interp(r_mean, centres, conv), 0.0))


def particle_filter(model, nl, y, u, n_particles=500, seed=0, L=80, likelihood="quadrature"):
    """Bootstrap filter with systematic resampling every step.

    ``likelihood="quadrature"`` weights by an ``L``-point likelihood mixture;
    ``"grid"`` uses :func:`grid_log_likelihood`.
    """
    if likelihood not in ("quadrature", "grid"):
        raise ValueError(f"unknown likelihood {likelihood!r}")
    if n_particles < 2:
        raise ValueError("n_particles must be at least 2")
    y = np.asarray(y, dtype=float).ravel()
    N, n = y.size, model.n
    u = np.asarray(u, dtype=float).reshape(N, -1)
    rng = make_rng(seed, STREAM_PF)
    Lq = chol_psd(model.Q)
    x = model.mu1 + rng.standard_normal((n_particles, n)) @ chol_psd(model.P1).T
    parts = np.empty((N, n_particles, n))
    lws = np.empty((N, n_particles))
    means = np.empty((N, n))
    for t in range(N):
        rbar = x @ model.C[0] + model.D[0] @ u[t]
        if likelihood == "grid":
            lw = grid_log_likelihood(model, nl, y[t], rbar)
        else:
            lik = likelihood_mixture(model, nl, y[t], L)
            if len(lik) == 0:
                raise ParticleDegeneracyError(f"particle degeneracy at t={t + 1}: no likelihood support")
            lw = lik.log_likelihood(rbar, model.R)
        tot = logsumexp(lw)
        if not np.isfinite(tot):
            raise ParticleDegeneracyError(f"particle degeneracy at t={t + 1}")
        lw = lw - tot
        parts[t], lws[t] = x, lw
        w = np.exp(lw)
        means[t] = w @ x
        if t + 1 < N:
            idx = systematic_resample(w, rng.random())
            x = x[idx] @ model.A.T + model.B @ u[t] + rng.standard_normal((n_particles, n)) @ Lq.T
    return ParticleResult(parts, lws, means, int(seed))


@dataclass
class SmoothedParticles:
    paths: np.ndarray  # (n_paths, N, n)

    @property
    def means(self):
        return self.paths.mean(axis=0)


def _exact_backward_choice(logw, pred, nxt, cf, uni, chunk):
    n = pred.shape[1]
    Np = pred.shape[0]
    choice = np.empty(nxt.shape[0], dtype=int)
    for s in range(0, nxt.shape[0], chunk):
        d = nxt[s : s + chunk, None, :] - pred[None, :, :]  # (c, Np, n)
        if n == 1:
            quad = d[..., 0] ** 2 / cf[0][0, 0] ** 2
        else:
            sol = cho_solve(cf, d.reshape(-1, n).T).T.reshape(d.shape)
            quad = np.sum(d * sol, axis=-1)
        lw = logw[None, :] - 0.5 * quad
        mx = lw.max(axis=1, keepdims=True)
        if not np.all(np.isfinite(mx)):
            raise ParticleDegeneracyError("particle smoother degeneracy")
        cdf = np.cumsum(np.exp(lw - mx), axis=1)
        target = uni[s : s + chunk, None] * cdf[:, -1:]
        choice[s : s + chunk] = np.minimum((cdf < target).sum(axis=1), Np - 1)
    return choice


def particle_smoother(pf, model, u, n_paths=None, seed=None, chunk=256, max_tries=32):
    """Backward-simulation smoother over the stored forward ensembles.

    Ancestors are drawn by rejection: propose from the filter weights and
    accept with probability ``exp(-0.5 |x_{t+1} - A x - B u|^2_Q)``.  Paths
    still unassigned after ``max_tries`` rounds are drawn exactly from the
    full backward kernel.  Both routes sample the same distribution.
    """
    N, Np, n = pf.particles.shape
    n_paths = Np if n_paths is None else int(n_paths)
    seed = pf.seed if seed is None else seed
    rng = make_rng(seed, STREAM_PS)
    u = np.asarray(u, dtype=float).reshape(N, -1)
    cf = cho_factor(model.Q)
    paths = np.empty((n_paths, N, n))
    w = np.exp(pf.log_weights[-1])
    paths[:, -1] = pf.particles[-1][rng.permutation(systematic_resample(w, rng.random(), n_paths))]
    for t in range(N - 2, -1, -1):
        pred = pf.particles[t] @ model.A.T + model.B @ u[t]  # (Np, n)
        nxt = paths[:, t + 1]
        cdf = np.cumsum(np.exp(pf.log_weights[t]))
        cdf /= cdf[-1]
        choice = np.full(n_paths, -1)
        todo = np.arange(n_paths)
        for _ in range(max_tries):
            if todo.size == 0:
                break
            prop = np.minimum(np.searchsorted(cdf, rng.random(todo.size), side="right"), Np - 1)
            d = nxt[todo] - pred[prop]
            if n == 1:
                quad = d[:, 0] ** 2 / cf[0][0, 0] ** 2
            else:
                quad = np.sum(d * cho_solve(cf, d.T).T, axis=1)
            ok = rng.random(todo.size) < np.exp(-0.5 * quad)
            choice[todo[ok]] = prop[ok]
            todo = todo[~ok]
        if todo.size:
            try:
                choice[todo] = _exact_backward_choice(
                    pf.log_weights[t], pred, nxt[todo], cf, rng.random(todo.size), chunk
                )
            except ParticleDegeneracyError:
                raise ParticleDegeneracyError(f"particle smoother degeneracy at t={t + 1}") from None
        paths[:, t] = pf.particles[t][choice]
    return SmoothedParticles(paths)


def kde_density(samples, grid, weights=None):
    """Weighted Gaussian KDE (Silverman bandwidth) evaluated on ``grid``."""
    samples = np.asarray(samples, dtype=float).ravel()
    kde = gaussian_kde(samples, bw_method="silverman", weights=weights)
    return kde(np.asarray(grid, dtype=float))
