"""Compiled inner loops for the time recursions.

All kernels take the transition coefficients as a dense (N, N, P+1) array
with zero diagonal rows and the covariate path as a (T, P) array; the row at
time t drives the transition into time t. Kept free of Python objects so
numba can compile them; input validation happens in the calling wrappers.
"""

import numpy as np
from numba import njit


@njit(cache=True)
def tpm_at(beta, z):
    """Row-stochastic matrix from dense coefficients at one covariate row."""
    n = beta.shape[0]
    p = z.shape[0]
    out = np.empty((n, n))
    for i in range(n):
        m = 0.0
        for j in range(n):
            if i == j:
                out[i, j] = 0.0
            else:
                e = beta[i, j, 0]
                for q in range(p):
                    e += beta[i, j, q + 1] * z[q]
                out[i, j] = e
            if out[i, j] > m:
                m = out[i, j]
        s = 0.0
        for j in range(n):
            out[i, j] = np.exp(out[i, j] - m)
            s += out[i, j]
        for j in range(n):
            out[i, j] /= s
    return out


@njit(cache=True)
def propagate(beta, z, delta0):
    """State probability path: row t is row t-1 times the TPM at z[t].

    Rows are renormalized each step so sums stay at 1 over long paths.
    """
    t_len = z.shape[0]
    n = delta0.shape[0]
    out = np.empty((t_len, n))
    out[0] = delta0
    cur = delta0.copy()
    nxt = np.empty(n)
    for t in range(1, t_len):
        g = tpm_at(beta, z[t])
        s = 0.0
        for j in range(n):
            acc = 0.0
            for i in range(n):
                acc += cur[i] * g[i, j]
            nxt[j] = acc
            s += acc
        for j in range(n):
            cur[j] = nxt[j] / s
            out[t, j] = cur[j]
    return out


@njit(cache=True)
def forward_scaled(beta, z, logdens, delta0):
    """Scaled forward pass over one segment.

    Returns (loglik, fail_t); fail_t is -1 on success, else the in-segment
    index where every state density vanished.
    """
    t_len = logdens.shape[0]
    n = delta0.shape[0]
    alpha = np.empty(n)
    nxt = np.empty(n)

    c = logdens[0, 0]
    for j in range(1, n):
        if logdens[0, j] > c:
            c = logdens[0, j]
    if not np.isfinite(c):
        return (np.nan, 0)
    s = 0.0
    for j in range(n):
        alpha[j] = delta0[j] * np.exp(logdens[0, j] - c)
        s += alpha[j]
    if not (s > 0.0 and np.isfinite(s)):
        return (np.nan, 0)
    ll = np.log(s) + c
    for j in range(n):
        alpha[j] /= s

    for t in range(1, t_len):
        g = tpm_at(beta, z[t])
        c = logdens[t, 0]
        for j in range(1, n):
            if logdens[t, j] > c:
                c = logdens[t, j]
        if not np.isfinite(c):
            return (np.nan, t)
        s = 0.0
        for j in range(n):
            acc = 0.0
            for i in range(n):
                acc += alpha[i] * g[i, j]
            nxt[j] = acc * np.exp(logdens[t, j] - c)
            s += nxt[j]
        if not (s > 0.0 and np.isfinite(s)):
            return (np.nan, t)
        ll += np.log(s) + c
        for j in range(n):
            alpha[j] = nxt[j] / s
    return (ll, -1)


@njit(cache=True)
def viterbi_path(beta, z, logdens, log_delta0):
    """Most probable state sequence over one segment (log-space DP).

    Ties break toward the lower state index.
    """
    t_len = logdens.shape[0]
    n = log_delta0.shape[0]
    score = np.empty((t_len, n))
    back = np.zeros((t_len, n), dtype=np.int64)
    for j in range(n):
        score[0, j] = log_delta0[j] + logdens[0, j]

    for t in range(1, t_len):
        g = tpm_at(beta, z[t])
        for j in range(n):
            best = -np.inf
            arg = 0
            for i in range(n):
                v = score[t - 1, i] + np.log(g[i, j])
                if v > best:
                    best = v
                    arg = i
            score[t, j] = best + logdens[t, j]
            back[t, j] = arg

    states = np.empty(t_len, dtype=np.int64)
    best = score[t_len - 1, 0]
    arg = 0
    for j in range(1, n):
        if score[t_len - 1, j] > best:
            best = score[t_len - 1, j]
            arg = j
    states[t_len - 1] = arg
    for t in range(t_len - 2, -1, -1):
        states[t] = back[t + 1, states[t + 1]]
    return states


@njit(cache=True)
def sample_states(beta, z, uniforms, s0):
    """Latent chain sample: state at t drawn from the TPM row at z[t]."""
    t_len = z.shape[0]
    states = np.empty(t_len, dtype=np.int64)
    states[0] = s0
    for t in range(1, t_len):
        g = tpm_at(beta, z[t])
        u = uniforms[t]
        acc = 0.0
        s = states[t - 1]
        chosen = g.shape[0] - 1
        for j in range(g.shape[0]):
            acc += g[s, j]
            if u < acc:
                chosen = j
                break
        states[t] = chosen
    return states
