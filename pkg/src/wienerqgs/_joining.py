"""Compiled greedy joining loop (same merge rule and tie-breaking as the
vectorized reference in :mod:`wienerqgs.gauss`)."""

import numpy as np
from numba import njit


@njit(cache=True)
def _logdet(S, L, n):
    """log det of an SPD matrix via an LDL' sweep (``L`` is scratch)."""
    if n == 1:
        return np.log(S[0, 0]) if S[0, 0] > 0.0 else -np.inf
    prod = 1.0
    for a in range(n):
        for b in range(a + 1):
            s = S[a, b]
            for k in range(b):
                s -= L[a, k] * L[b, k] * L[k, k]
            if a == b:
                if not s > 0.0:
                    return -np.inf
                L[a, a] = 1.0 / s
                prod *= s
            else:
                L[a, b] = s
    return np.log(prod)


@njit(cache=True)
def _batch_costs(I, J, w, means, covs, logdet, out, det):
    """General-``n`` bounds with the pair index innermost: the merged
    covariances are built and LDL'-factored as stacks, so every pass is a
    branch-free loop over pairs."""
    n = means.shape[1]
    T = I.size
    wij = np.empty(T)
    fi = np.empty(T)
    fj = np.empty(T)
    d = np.empty((n, T))
    for t in range(T):
        wij[t] = w[I[t]] + w[J[t]]
        fi[t] = w[I[t]] / wij[t]
        fj[t] = w[J[t]] / wij[t]
    for a in range(n):
        for t in range(T):
            d[a, t] = means[I[t], a] - means[J[t], a]
    S = np.empty((n, n, T))
    for a in range(n):
        for b in range(a + 1):
            for t in range(T):
                S[a, b, t] = fi[t] * covs[I[t], a, b] + fj[t] * covs[J[t], a, b] + fi[t] * fj[t] * d[a, t] * d[b, t]
    inv = np.empty((n, T))
    prod = np.ones(T)
    for t in range(T):
        det[t] = np.inf
    for a in range(n):
        for b in range(a + 1):
            for k in range(b):
                for t in range(T):
                    S[a, b, t] -= S[a, k, t] * S[b, k, t] * inv[k, t]
        for t in range(T):
            piv = S[a, a, t]
            inv[a, t] = 1.0 / piv
            prod[t] *= piv
            det[t] = min(det[t], piv)
    for t in range(T):
        out[t] = 0.5 * (wij[t] * np.log(prod[t]) - w[I[t]] * logdet[I[t]] - w[J[t]] * logdet[J[t]])


@njit(cache=True)
def _pair_costs(I, J, w, means, covs, logdet, out, det):
    """``out[t] = B(I[t], J[t])`` with ``I[t] < J[t]``.

    The loops are branch-free (so they vectorize); invalid merges are
    mapped to ``inf`` in a second pass.
    """
    n = means.shape[1]
    T = I.size
    if n == 1:
        for t in range(T):
            i = I[t]
            j = J[t]
            wij = w[i] + w[j]
            fi = w[i] / wij
            fj = w[j] / wij
            d = means[i, 0] - means[j, 0]
            s = fi * covs[i, 0, 0] + fj * covs[j, 0, 0] + fi * fj * d * d
            det[t] = s
            out[t] = 0.5 * (wij * np.log(s) - w[i] * logdet[i] - w[j] * logdet[j])
    elif n == 2:
        for t in range(T):
            i = I[t]
            j = J[t]
            wij = w[i] + w[j]
            fi = w[i] / wij
            fj = w[j] / wij
            ff = fi * fj
            d0 = means[i, 0] - means[j, 0]
            d1 = means[i, 1] - means[j, 1]
            s00 = fi * covs[i, 0, 0] + fj * covs[j, 0, 0] + ff * d0 * d0
            s10 = fi * covs[i, 1, 0] + fj * covs[j, 1, 0] + ff * d1 * d0
            s11 = fi * covs[i, 1, 1] + fj * covs[j, 1, 1] + ff * d1 * d1
            piv = s11 - s10 * s10 / s00
            det[t] = min(s00, piv)
            out[t] = 0.5 * (wij * np.log(s00 * piv) - w[i] * logdet[i] - w[j] * logdet[j])
    else:
        _batch_costs(I, J, w, means, covs, logdet, out, det)
    for t in range(T):
        c = out[t]
        if not det[t] > 0.0 or c != c:
            out[t] = np.inf


@njit(cache=True)
def _refresh_row(k, active, cost, rowmin, rowarg):
    M = active.shape[0]
    best = np.inf
    arg = -1
    for j in range(k + 1, M):
        if active[j] and (arg == -1 or cost[k, j] < best):
            best = cost[k, j]
            arg = j
    rowmin[k] = best
    rowarg[k] = arg


@njit(cache=True)
def joining_core(lw, means, covs, w, max_components):
    """Greedy joining in place; returns the boolean mask of survivors."""
    M, n = means.shape
    L = np.empty((n, n))
    logdet = np.empty(M)
    for i in range(M):
        logdet[i] = _logdet(covs[i], L, n)
    cost = np.empty((M, M))
    I = np.empty(M, dtype=np.int64)
    J = np.empty(M, dtype=np.int64)
    buf = np.empty(M)
    det = np.empty(M)
    for i in range(M - 1):
        T = M - 1 - i
        for t in range(T):
            I[t] = i
            J[t] = i + 1 + t
        _pair_costs(I[:T], J[:T], w, means, covs, logdet, buf[:T], det[:T])
        for t in range(T):
            cost[i, i + 1 + t] = buf[t]
    active = np.ones(M, dtype=np.bool_)
    rowmin = np.full(M, np.inf)
    rowarg = np.full(M, -1)
    for k in range(M - 1):
        _refresh_row(k, active, cost, rowmin, rowarg)
    count = M
    while count > max_components:
        i = -1
        best = np.inf
        for k in range(M):
            if active[k] and rowarg[k] >= 0 and (i == -1 or rowmin[k] < best):
                best = rowmin[k]
                i = k
        j = rowarg[i]
        hi = max(lw[i], lw[j])
        new_lw = hi + np.log(np.exp(lw[i] - hi) + np.exp(lw[j] - hi))
        fi = np.exp(lw[i] - new_lw)
        fj = np.exp(lw[j] - new_lw)
        ff = fi * fj
        for a in range(n):
            da = means[i, a] - means[j, a]
            for b in range(a + 1):
                v = fi * covs[i, a, b] + fj * covs[j, a, b] + ff * da * (means[i, b] - means[j, b])
                covs[i, a, b] = v
                covs[i, b, a] = v
        for a in range(n):
            means[i, a] = fi * means[i, a] + fj * means[j, a]
        lw[i] = new_lw
        w[i] = w[i] + w[j]
        logdet[i] = _logdet(covs[i], L, n)
        active[j] = False
        rowarg[j] = -1
        count -= 1
        # fresh costs of the merged slot against every active survivor
        T = 0
        for k in range(M):
            if active[k] and k != i:
                I[T] = min(k, i)
                J[T] = max(k, i)
                T += 1
        _pair_costs(I[:T], J[:T], w, means, covs, logdet, buf[:T], det[:T])
        for t in range(T):
            k = I[t] if I[t] != i else J[t]
            c = buf[t]
            if k < i:
                cost[k, i] = c
                if rowarg[k] == i or rowarg[k] == j:
                    _refresh_row(k, active, cost, rowmin, rowarg)
                elif c < rowmin[k] or (c == rowmin[k] and i < rowarg[k]):
                    rowmin[k] = c
                    rowarg[k] = i
            else:
                cost[i, k] = c
        for t in range(T):
            k = J[t]
            if I[t] == i and rowarg[k] == j:
                _refresh_row(k, active, cost, rowmin, rowarg)
        _refresh_row(i, active, cost, rowmin, rowarg)
    return active
