"""Hot inner loops, each with a numba and a numpy implementation.

All kernels mutate their state arrays in place. The public wrappers dispatch
on :func:`stallsgd._accel.get_backend`. Step sizes are always precomputed by
the caller, so the kernels know nothing about schedules or restarts.
"""

import math

import numpy as np

from . import _accel
from ._accel import njit

SQUARED = 0
CROSS_ENTROPY = 1

N_HIDDEN = 5
BLOCK = 10
N_FEATURES = N_HIDDEN * BLOCK
OUT_W = N_HIDDEN * (BLOCK + 1)
N_PARAMS = OUT_W + N_HIDDEN + 1

# numpy fallback: keep |log| of a running product below this inside a block
_LOG_SPAN = 600.0


# ---------------------------------------------------------------------------
# SGD on the orthonormal-design regression problem
# ---------------------------------------------------------------------------


@njit
def _ideal_sgd_numba(thetas, Qt, cols, ys, alphas):
    n_runs, d = thetas.shape
    m = alphas.shape[0]
    for r in range(n_runs):
        for i in range(m):
            c = cols[r, i]
            xt = 0.0
            for a in range(d):
                xt += Qt[c, a] * thetas[r, a]
            step = alphas[i] * (ys[r, i] - xt)
            for a in range(d):
                thetas[r, a] += step * Qt[c, a]


def _ideal_sgd_numpy(thetas, Qt, cols, ys, alphas):
    for i in range(alphas.shape[0]):
        X = Qt[cols[:, i]]
        resid = ys[:, i] - (X * thetas).sum(axis=1)
        thetas += (alphas[i] * resid)[:, None] * X


def ideal_sgd_batch(thetas, Qt, cols, ys, alphas):
    """Advance ``R`` independent SGD runs by ``m`` steps.

    ``thetas`` is ``(R, d)``; ``Qt`` holds the design vectors as rows; ``cols``
    and ``ys`` are ``(R, m)`` and ``alphas`` is the shared ``(m,)`` step
    sequence. Each step is ``theta += alpha * x * (y - x'theta)``.
    """
    if _accel.get_backend() == "numba":
        _ideal_sgd_numba(thetas, Qt, cols, ys, alphas)
    else:
        _ideal_sgd_numpy(thetas, Qt, cols, ys, alphas)


# ---------------------------------------------------------------------------
# A_k = f_k * A_{k-1} + alpha_k^2 and log prod f_k
# ---------------------------------------------------------------------------


@njit
def _decay_scan_numba(alphas, factors, logf, a_prev, logp_prev, out_a, out_logp):
    a_k = a_prev
    logp = logp_prev
    for i in range(alphas.shape[0]):
        a_k = factors[i] * a_k + alphas[i] * alphas[i]
        logp += logf[i]
        out_a[i] = a_k
        out_logp[i] = logp


def _decay_scan_loop(alphas, factors, logf, a_prev, logp_prev, out_a, out_logp):
    a_k, logp = float(a_prev), float(logp_prev)
    for i in range(alphas.shape[0]):
        a_k = float(factors[i]) * a_k + float(alphas[i]) ** 2
        logp += float(logf[i])
        out_a[i] = a_k
        out_logp[i] = logp


def _decay_scan_numpy(alphas, factors, logf, a_prev, logp_prev, out_a, out_logp):
    if np.any(factors <= 0.0):
        _decay_scan_loop(alphas, factors, logf, a_prev, logp_prev, out_a, out_logp)
        return
    q = alphas * alphas
    out_logp[:] = logp_prev + np.cumsum(logf)
    # split so that exp(+-partial log product) stays finite inside each block
    span = np.cumsum(np.abs(logf))
    start, n = 0, q.shape[0]
    carry = a_prev
    while start < n:
        base = span[start - 1] if start else 0.0
        stop = int(np.searchsorted(span, base + _LOG_SPAN, side="right"))
        stop = min(max(stop, start + 1), n)
        rel = np.cumsum(logf[start:stop])
        block = np.exp(rel) * (carry + np.cumsum(q[start:stop] * np.exp(-rel)))
        out_a[start:stop] = block
        carry = block[-1]
        start = stop


def decay_scan(alphas, factors, log_factors=None, a_prev=0.0, logp_prev=0.0):
    """Run the variance recurrence and the log decay product over a chunk.

    Returns ``(A, logP)`` with ``A[i] = factors[i] * A[i-1] + alphas[i]**2``
    (``A[-1] = a_prev``) and ``logP[i] = logp_prev + sum(log_factors[:i+1])``.
    Factors must be non-negative; a zero factor sends ``logP`` to ``-inf``.
    """
    alphas = np.ascontiguousarray(alphas, dtype=np.float64)
    factors = np.ascontiguousarray(factors, dtype=np.float64)
    if np.any(factors < 0.0):
        raise ValueError("decay factors must be non-negative")
    if log_factors is None:
        with np.errstate(divide="ignore"):
            log_factors = np.log(factors)
    log_factors = np.ascontiguousarray(log_factors, dtype=np.float64)
    out_a = np.empty_like(alphas)
    out_logp = np.empty_like(alphas)
    args = (alphas, factors, log_factors, float(a_prev), float(logp_prev), out_a, out_logp)
    if _accel.get_backend() == "numba":
        _decay_scan_numba(*args)
    else:
        _decay_scan_numpy(*args)
    return out_a, out_logp


# ---------------------------------------------------------------------------
# Two-layer block network: per-example gradient and incremental training
# ---------------------------------------------------------------------------


@njit
def _logistic(t):
    if t >= 0.0:
        return 1.0 / (1.0 + math.exp(-t))
    e = math.exp(t)
    return e / (1.0 + e)


@njit
def _nn_grad_into(params, x, label, loss_code, h, g):
    z = params[N_PARAMS - 1]
    for i in range(N_HIDDEN):
        base = i * (BLOCK + 1)
        t = params[base + BLOCK]
        for j in range(BLOCK):
            t += params[base + j] * x[i * BLOCK + j]
        h[i] = _logistic(t)
        z += params[OUT_W + i] * h[i]
    p = _logistic(z)
    if loss_code == SQUARED:
        delta = 2.0 * (p - label) * p * (1.0 - p)
    else:
        delta = p - label
    g[N_PARAMS - 1] = delta
    for i in range(N_HIDDEN):
        g[OUT_W + i] = delta * h[i]
        dz = delta * params[OUT_W + i] * h[i] * (1.0 - h[i])
        base = i * (BLOCK + 1)
        g[base + BLOCK] = dz
        for j in range(BLOCK):
            g[base + j] = dz * x[i * BLOCK + j]


@njit
def _nn_sgd_numba(params, X, y, order, alphas, loss_code):
    h = np.empty(N_HIDDEN)
    g = np.empty(N_PARAMS)
    for i in range(order.shape[0]):
        n = order[i]
        _nn_grad_into(params, X[n], y[n], loss_code, h, g)
        a = alphas[i]
        for k in range(N_PARAMS):
            params[k] -= a * g[k]


@njit
def _nn_adagrad_numba(params, G, X, y, order, eta, eps_guard, loss_code):
    h = np.empty(N_HIDDEN)
    g = np.empty(N_PARAMS)
    for i in range(order.shape[0]):
        n = order[i]
        _nn_grad_into(params, X[n], y[n], loss_code, h, g)
        for k in range(N_PARAMS):
            G[k] += g[k] * g[k]
            params[k] -= eta * g[k] / math.sqrt(G[k] + eps_guard)


def _nn_sgd_numpy(params, X, y, order, alphas, loss_code):
    from .network import backprop_grad

    kind = "squared" if loss_code == SQUARED else "cross_entropy"
    for i in range(order.shape[0]):
        n = order[i]
        params -= alphas[i] * backprop_grad(params, X[n], y[n], loss=kind)


def _nn_adagrad_numpy(params, G, X, y, order, eta, eps_guard, loss_code):
    from .network import backprop_grad

    kind = "squared" if loss_code == SQUARED else "cross_entropy"
    for i in range(order.shape[0]):
        n = order[i]
        g = backprop_grad(params, X[n], y[n], loss=kind)
        G += g * g
        params -= eta * g / np.sqrt(G + eps_guard)


def nn_sgd(params, X, y, order, alphas, loss_code=SQUARED):
    """SGD over examples ``X[order[i]]`` with step ``alphas[i]``; in place."""
    if _accel.get_backend() == "numba":
        _nn_sgd_numba(params, X, y, order, alphas, loss_code)
    else:
        _nn_sgd_numpy(params, X, y, order, alphas, loss_code)


def nn_adagrad(params, G, X, y, order, eta, eps_guard, loss_code=SQUARED):
    """AdaGrad over examples ``X[order[i]]``; updates ``params`` and ``G`` in place."""
    if _accel.get_backend() == "numba":
        _nn_adagrad_numba(params, G, X, y, order, float(eta), float(eps_guard), loss_code)
    else:
        _nn_adagrad_numpy(params, G, X, y, order, float(eta), float(eps_guard), loss_code)
