"""Hot inner loops of the estimators, in two interchangeable backends.

Every kernel exists as a vectorized numpy function and as a numba-compiled
loop nest with the same signature. ``ACTIVE`` is the numba backend unless
``CATGRAD_DISABLE_NUMBA`` is set (see ``catgrad._accel``). Both backends
consume the same pre-drawn random numbers, so switching backends never
changes which samples are drawn, only how the arithmetic is scheduled.

Array conventions: ``B`` batch, ``L`` variables, ``n`` categories,
``K`` Monte-Carlo draws.
"""
from collections import namedtuple

import numpy as np

from catgrad._accel import HAS_NUMBA, USE_NUMBA, njit

Backend = namedtuple(
    "Backend",
    ["name", "softmax_jvp", "reinmax_rows", "inverse_cdf", "gr_mc_rows"],
)


# --------------------------------------------------------------------------
# numpy


def _softmax_jvp_np(g, p):
    """Rows of ``g @ (diag(p) - p p^T)``; ``p`` broadcasts against ``g``."""
    return p * (g - np.sum(g * p, axis=-1, keepdims=True))


def _reinmax_rows_np(g, onehot, pi0, pi_tau, w_mid, w_st):
    """``g @ (w_mid * J((D + pi_tau) / 2) - w_st * J(pi0))`` per row."""
    pi1 = 0.5 * (onehot + pi_tau)
    return w_mid * _softmax_jvp_np(g, pi1) - w_st * _softmax_jvp_np(g, pi0)


def _inverse_cdf_np(pi, u):
    """Category index per ``(b, l)`` from one uniform draw each.

    ``pi`` is ``(L, n)``, ``u`` is ``(B, L)``.
    """
    cdf = np.cumsum(pi, axis=-1)
    idx = np.sum(u[..., None] >= cdf[None, :, :], axis=-1)
    return np.minimum(idx, pi.shape[-1] - 1)


def conditional_gumbels_from_exponentials(theta, k, exps):
    """Perturbed logits conditioned on ``argmax == k`` (exponential race).

    ``theta`` has shape ``(..., n)``, ``k`` broadcasts against ``theta[..., 0]``
    and ``exps`` has shape ``(..., n)`` of Exp(1) draws.
    """
    theta = np.asarray(theta, dtype=float)
    k = np.asarray(k)
    mx = np.max(theta, axis=-1, keepdims=True)
    log_z = mx + np.log(np.sum(np.exp(theta - mx), axis=-1, keepdims=True))
    log_e = np.log(exps)
    log_ek = np.take_along_axis(log_e, k[..., None], axis=-1)
    # Others: -log(E_k / Z + E_j / exp(theta_j)), evaluated in log space.
    others = -np.logaddexp(log_ek - log_z, log_e - theta)
    top = log_z - log_ek
    out = others
    np.put_along_axis(out, k[..., None], top, axis=-1)
    return out


def _gr_mc_rows_np(g, theta, idx, exps, tau):
    # exps: (B, L, K, n); the K axis is the Monte-Carlo axis.
    kk = np.broadcast_to(idx[:, :, None], exps.shape[:-1])
    th = np.broadcast_to(theta[None, :, None, :], exps.shape)
    t = conditional_gumbels_from_exponentials(th, kk, exps) / tau
    t = t - np.max(t, axis=-1, keepdims=True)
    s = np.exp(t)
    s /= np.sum(s, axis=-1, keepdims=True)
    rows = _softmax_jvp_np(g[:, :, None, :], s)
    return rows.mean(axis=2) / tau


NUMPY = Backend("numpy", _softmax_jvp_np, _reinmax_rows_np, _inverse_cdf_np, _gr_mc_rows_np)


# --------------------------------------------------------------------------
# numba


@njit
def _softmax_jvp_nb(g, p):
    B, L, n = g.shape
    out = np.empty_like(g)
    for b in range(B):
        for i in range(L):
            dot = 0.0
            for j in range(n):
                dot += g[b, i, j] * p[b, i, j]
            for j in range(n):
                out[b, i, j] = p[b, i, j] * (g[b, i, j] - dot)
    return out


@njit
def _reinmax_rows_nb(g, onehot, pi0, pi_tau, w_mid, w_st):
    B, L, n = g.shape
    out = np.empty_like(g)
    pi1 = np.empty(n)
    for b in range(B):
        for i in range(L):
            dot1 = 0.0
            dot0 = 0.0
            for j in range(n):
                pi1[j] = 0.5 * (onehot[b, i, j] + pi_tau[b, i, j])
                dot1 += g[b, i, j] * pi1[j]
                dot0 += g[b, i, j] * pi0[b, i, j]
            for j in range(n):
                out[b, i, j] = (w_mid * pi1[j] * (g[b, i, j] - dot1)
                                - w_st * pi0[b, i, j] * (g[b, i, j] - dot0))
    return out


@njit
def _inverse_cdf_nb(pi, u):
    B, L = u.shape
    n = pi.shape[1]
    out = np.empty((B, L), dtype=np.int64)
    cdf = np.empty((L, n))
    for i in range(L):
        acc = 0.0
        for j in range(n):
            acc += pi[i, j]
            cdf[i, j] = acc
    for b in range(B):
        for i in range(L):
            k = 0
            for j in range(n):
                if u[b, i] >= cdf[i, j]:
                    k += 1
            out[b, i] = min(k, n - 1)
    return out


@njit
def _gr_mc_rows_nb(g, theta, idx, exps, tau):
    B, L, K, n = exps.shape
    out = np.zeros((B, L, n))
    log_z = np.empty(L)
    for i in range(L):
        mx = theta[i, 0]
        for j in range(1, n):
            mx = max(mx, theta[i, j])
        acc = 0.0
        for j in range(n):
            acc += np.exp(theta[i, j] - mx)
        log_z[i] = mx + np.log(acc)
    t = np.empty(n)
    for b in range(B):
        for i in range(L):
            k = idx[b, i]
            for m in range(K):
                log_ek = np.log(exps[b, i, m, k])
                for j in range(n):
                    if j == k:
                        t[j] = log_z[i] - log_ek
                    else:
                        a = log_ek - log_z[i]
                        c = np.log(exps[b, i, m, j]) - theta[i, j]
                        hi = max(a, c)
                        t[j] = -(hi + np.log1p(np.exp(-abs(a - c))))
                mx = t[0] / tau
                for j in range(n):
                    t[j] = t[j] / tau
                    mx = max(mx, t[j])
                tot = 0.0
                for j in range(n):
                    t[j] = np.exp(t[j] - mx)
                    tot += t[j]
                dot = 0.0
                for j in range(n):
                    t[j] /= tot
                    dot += g[b, i, j] * t[j]
                for j in range(n):
                    out[b, i, j] += t[j] * (g[b, i, j] - dot)
            for j in range(n):
                out[b, i, j] /= K * tau
    return out


if HAS_NUMBA:
    NUMBA = Backend("numba", _softmax_jvp_nb, _reinmax_rows_nb, _inverse_cdf_nb, _gr_mc_rows_nb)
else:  # pragma: no cover
    NUMBA = None

ACTIVE = NUMBA if USE_NUMBA else NUMPY
