"""Hot numeric kernels with a numba path and a pure-numpy path.

The mixture kernels evaluate the isotropic Gaussian mixture convolved with
noise of standard deviation ``sigma``::

    p_sigma(x) = sum_k w_k N(x; mu_k, (v_k + sigma^2) I)

and everything the solvers need from it (noise prediction, class
log-posterior with gradient, posterior mean with Jacobian). The recurrence
kernel iterates ``y[n+1] = b*y[n] + c*y[n-1]``, which is what every
second-order method reduces to on the scalar test equation.

Both variants are always importable (``*_numpy`` / ``*_numba``); the
unsuffixed names are bound according to ``SPLITSOLVE_NUMBA``.
"""

from __future__ import annotations

import math

import numpy as np
from scipy import signal
from scipy.special import logsumexp

from ._accel import HAVE_NUMBA, USE_NUMBA, njit

__all__ = [
    "mixture_eps",
    "class_logpost_grad",
    "posterior_mean_jacobian",
    "linear_recurrence",
    "BACKEND",
]

_LOG_2PI = math.log(2.0 * math.pi)


# ----------------------------------------------------------------------------
# numpy implementations


def _component_terms(x, means, variances, log_weights, sigma):
    tot = variances + sigma * sigma
    diff = x[None, :] - means
    sq = np.einsum("kd,kd->k", diff, diff)
    logp = log_weights - 0.5 * sq / tot - 0.5 * x.shape[0] * (_LOG_2PI + np.log(tot))
    return logp, diff, tot


def mixture_eps_numpy(x, means, variances, log_weights, sigma):
    logp, diff, tot = _component_terms(x, means, variances, log_weights, sigma)
    r = np.exp(logp - logsumexp(logp))
    return sigma * ((r / tot) @ diff)


def class_logpost_grad_numpy(x, means, variances, log_weights, sigma, mask):
    logp, diff, tot = _component_terms(x, means, variances, log_weights, sigma)
    lz = logsumexp(logp)
    lc = logsumexp(logp[mask])
    r = np.exp(logp - lz)
    rc = np.where(mask, np.exp(logp - lc), 0.0)
    # g_k = -(x - mu_k) / tot_k
    grad = -((rc - r) / tot) @ diff
    return lc - lz, grad


def posterior_mean_jacobian_numpy(x, means, variances, log_weights, sigma):
    logp, diff, tot = _component_terms(x, means, variances, log_weights, sigma)
    r = np.exp(logp - logsumexp(logp))
    s2 = sigma * sigma
    g = -diff / tot[:, None]
    gbar = r @ g
    mean = x + s2 * gbar
    hess = (g.T * r) @ g - np.outer(gbar, gbar)
    hess[np.diag_indices_from(hess)] -= np.sum(r / tot)
    jac = np.eye(x.shape[0]) + s2 * hess
    return mean, jac


def linear_recurrence_numpy(b, c, y0, y1, n):
    """Return ``(y[n], max_k |y[k]|)`` for ``y[k+1] = b y[k] + c y[k-1]``."""
    if n <= 1:
        ys = np.array([y0, y1][: n + 1], dtype=float)
        return float(ys[-1]), float(np.max(np.abs(ys)))
    den = [1.0, -b, -c]
    zi = signal.lfiltic([1.0], den, y=[y1, y0])
    with np.errstate(over="ignore", invalid="ignore"):
        tail, _ = signal.lfilter([1.0], den, np.zeros(n - 1), zi=zi)
        mags = np.abs(tail)
        peak = np.inf if np.isnan(mags).any() else max(abs(y0), abs(y1), float(mags.max()))
    return float(tail[-1]), peak


# ----------------------------------------------------------------------------
# numba implementations (explicit loops)


@njit
def mixture_eps_numba(x, means, variances, log_weights, sigma):
    k_count, d = means.shape
    s2 = sigma * sigma
    logp = np.empty(k_count)
    for k in range(k_count):
        tot = variances[k] + s2
        sq = 0.0
        for i in range(d):
            t = x[i] - means[k, i]
            sq += t * t
        logp[k] = log_weights[k] - 0.5 * sq / tot - 0.5 * d * (_LOG_2PI + math.log(tot))
    top = logp.max()
    z = 0.0
    for k in range(k_count):
        logp[k] = math.exp(logp[k] - top)
        z += logp[k]
    out = np.zeros(d)
    for k in range(k_count):
        a = logp[k] / z / (variances[k] + s2)
        for i in range(d):
            out[i] += a * (x[i] - means[k, i])
    for i in range(d):
        out[i] *= sigma
    return out


@njit
def class_logpost_grad_numba(x, means, variances, log_weights, sigma, mask):
    k_count, d = means.shape
    s2 = sigma * sigma
    logp = np.empty(k_count)
    for k in range(k_count):
        tot = variances[k] + s2
        sq = 0.0
        for i in range(d):
            t = x[i] - means[k, i]
            sq += t * t
        logp[k] = log_weights[k] - 0.5 * sq / tot - 0.5 * d * (_LOG_2PI + math.log(tot))
    top = -np.inf
    top_c = -np.inf
    for k in range(k_count):
        top = max(top, logp[k])
        if mask[k]:
            top_c = max(top_c, logp[k])
    z = 0.0
    zc = 0.0
    for k in range(k_count):
        z += math.exp(logp[k] - top)
        if mask[k]:
            zc += math.exp(logp[k] - top_c)
    lz = top + math.log(z)
    lc = top_c + math.log(zc)
    grad = np.zeros(d)
    for k in range(k_count):
        coef = -math.exp(logp[k] - lz)
        if mask[k]:
            coef += math.exp(logp[k] - lc)
        coef /= variances[k] + s2
        for i in range(d):
            grad[i] -= coef * (x[i] - means[k, i])
    return lc - lz, grad


@njit
def posterior_mean_jacobian_numba(x, means, variances, log_weights, sigma):
    k_count, d = means.shape
    s2 = sigma * sigma
    logp = np.empty(k_count)
    for k in range(k_count):
        tot = variances[k] + s2
        sq = 0.0
        for i in range(d):
            t = x[i] - means[k, i]
            sq += t * t
        logp[k] = log_weights[k] - 0.5 * sq / tot - 0.5 * d * (_LOG_2PI + math.log(tot))
    top = logp.max()
    z = 0.0
    for k in range(k_count):
        logp[k] = math.exp(logp[k] - top)
        z += logp[k]
    g = np.empty((k_count, d))
    gbar = np.zeros(d)
    diag = 0.0
    for k in range(k_count):
        r = logp[k] / z
        logp[k] = r
        tot = variances[k] + s2
        diag += r / tot
        for i in range(d):
            g[k, i] = -(x[i] - means[k, i]) / tot
            gbar[i] += r * g[k, i]
    mean = np.empty(d)
    jac = np.zeros((d, d))
    for i in range(d):
        mean[i] = x[i] + s2 * gbar[i]
        for j in range(d):
            h = 0.0
            for k in range(k_count):
                h += logp[k] * g[k, i] * g[k, j]
            h -= gbar[i] * gbar[j]
            jac[i, j] = s2 * h
        jac[i, i] += 1.0 - s2 * diag
    return mean, jac


@njit
def _recurrence_loop(b, c, y0, y1, n):
    prev = y0
    cur = y1
    peak = max(abs(y0), abs(y1))
    if n == 0:
        return y0, abs(y0)
    for _ in range(n - 1):
        nxt = b * cur + c * prev
        prev = cur
        cur = nxt
        a = abs(cur)
        if a != a:
            peak = np.inf
        elif a > peak:
            peak = a
    return cur, peak


def linear_recurrence_numba(b, c, y0, y1, n):
    """Return ``(y[n], max_k |y[k]|)`` for ``y[k+1] = b y[k] + c y[k-1]``."""
    last, peak = _recurrence_loop(float(b), float(c), float(y0), float(y1), int(n))
    return float(last), float(peak)


# ----------------------------------------------------------------------------
# dispatch

if USE_NUMBA:
    BACKEND = "numba"
    mixture_eps = mixture_eps_numba
    class_logpost_grad = class_logpost_grad_numba
    posterior_mean_jacobian = posterior_mean_jacobian_numba
    linear_recurrence = linear_recurrence_numba
else:
    BACKEND = "numpy"
    mixture_eps = mixture_eps_numpy
    class_logpost_grad = class_logpost_grad_numpy
    posterior_mean_jacobian = posterior_mean_jacobian_numpy
    linear_recurrence = linear_recurrence_numpy

if not HAVE_NUMBA:  # pragma: no cover
    mixture_eps_numba = mixture_eps_numpy
    class_logpost_grad_numba = class_logpost_grad_numpy
    posterior_mean_jacobian_numba = posterior_mean_jacobian_numpy
    linear_recurrence_numba = linear_recurrence_numpy
