"""Hot inner loops: recursive filtering, the nonlinear plant recursion and
row-wise MLP passes.

The filter and plant kernels exist twice. The ``*_numpy`` variant is plain
Python/numpy and is the reference path; the ``*_numba`` variant is the same
loop compiled with ``numba.njit``. The MLP loops have no Python twin: the
vectorized code in :mod:`pgff.neural` is their fallback. The module-level
names (``lfilter_rows``, ``plant_forward``) bind to the compiled variant
unless numba is unavailable or the environment variable ``PGFF_DISABLE_NUMBA``
is set to a non-empty value other than ``0``. The MLP loops are used only when
``PGFF_NUMBA_MLP`` is set as well.
"""
import math
import os

import numpy as np

_flag = os.environ.get("PGFF_DISABLE_NUMBA", "")
_DISABLED = _flag not in ("", "0")

try:
    if _DISABLED:
        raise ImportError
    from numba import njit

    HAVE_NUMBA = True
except ImportError:
    HAVE_NUMBA = False

USING_NUMBA = HAVE_NUMBA and not _DISABLED
# The compiled MLP loops lose to BLAS-backed numpy at the network sizes used
# here (see benchmarks/bench_kernels.py), so they are opt-in.
MLP_KERNEL = os.environ.get("PGFF_NUMBA_MLP", "") not in ("", "0")


# ---------------------------------------------------------------------------
# Recursive filtering, den[0] == 1, zero initial conditions, along axis 1.


def lfilter_rows_numpy(num, den, x):
    """Filter every row of ``x`` with ``num/den``; vectorized over rows."""
    m, n = x.shape
    nb = num.shape[0]
    na = den.shape[0]
    y = np.zeros((m, n))
    for k in range(n):
        acc = num[0] * x[:, k]
        for i in range(1, min(nb, k + 1)):
            acc = acc + num[i] * x[:, k - i]
        for i in range(1, min(na, k + 1)):
            acc = acc - den[i] * y[:, k - i]
        y[:, k] = acc
    return y


def _lfilter_rows_loop(num, den, x):
    m, n = x.shape
    nb = num.shape[0]
    na = den.shape[0]
    y = np.zeros((m, n))
    for r in range(m):
        for k in range(n):
            acc = num[0] * x[r, k]
            for i in range(1, min(nb, k + 1)):
                acc += num[i] * x[r, k - i]
            for i in range(1, min(na, k + 1)):
                acc -= den[i] * y[r, k - i]
            y[r, k] = acc
    return y


# ---------------------------------------------------------------------------
# Stribeck-type damper and the sample-by-sample plant solve.


def _stribeck(v, c1, c2, alpha):
    z = alpha * v
    if abs(z) > 700.0:
        return c1 * v
    return c1 * v + (c2 - c1) * v / math.cosh(z)


def _stribeck_slope(v, c1, c2, alpha):
    z = alpha * v
    if abs(z) > 700.0:
        return c1
    s = 1.0 / math.cosh(z)
    return c1 + (c2 - c1) * s * (1.0 - z * math.tanh(z))


def _make_plant_forward(_stribeck, _stribeck_slope):
    def _plant_forward_loop(a_q, b_q, f, ts, c1, c2, alpha, tol, max_iter):
        """Solve ``A(q) y + B(q) d(delta y) = B(q) f`` sample by sample.

        Returns ``(y, fail_index)`` with ``fail_index == -1`` on success.
        """
        n = f.shape[0]
        na = a_q.shape[0]
        nb = b_q.shape[0]
        y = np.zeros(n)
        v = np.zeros(n)
        d = np.zeros(n)
        a0 = a_q[0]
        b0 = b_q[0]
        for k in range(n):
            known = 0.0
            for i in range(min(nb, k + 1)):
                known += b_q[i] * f[k - i]
            for i in range(1, min(na, k + 1)):
                known -= a_q[i] * y[k - i]
            for i in range(1, min(nb, k + 1)):
                known -= b_q[i] * d[k - i]
            y_prev = y[k - 1] if k >= 1 else 0.0
            step_prev = y_prev - y[k - 2] if k >= 2 else 0.0

            x = y_prev
            width = 10.0 * abs(step_prev) + 1e-12 * (1.0 + abs(y_prev))
            lo = x - width
            hi = x + width
            # expand the bisection bracket until the residual changes sign
            f_lo = a0 * lo + b0 * _stribeck((lo - y_prev) / ts, c1, c2, alpha) - known
            f_hi = a0 * hi + b0 * _stribeck((hi - y_prev) / ts, c1, c2, alpha) - known
            expand = 0
            while f_lo * f_hi > 0.0 and expand < 200:
                width *= 4.0
                lo = x - width
                hi = x + width
                f_lo = a0 * lo + b0 * _stribeck((lo - y_prev) / ts, c1, c2, alpha) - known
                f_hi = a0 * hi + b0 * _stribeck((hi - y_prev) / ts, c1, c2, alpha) - known
                expand += 1
            if f_lo * f_hi > 0.0:
                return y, k
            if f_lo > 0.0:
                lo, hi = hi, lo

            converged = False
            for _ in range(max_iter):
                vel = (x - y_prev) / ts
                res = a0 * x + b0 * _stribeck(vel, c1, c2, alpha) - known
                if res == 0.0:
                    converged = True
                    break
                if res < 0.0:
                    lo = x
                else:
                    hi = x
                slope = a0 + b0 * _stribeck_slope(vel, c1, c2, alpha) / ts
                x_new = x - res / slope if slope != 0.0 else 0.5 * (lo + hi)
                if not (min(lo, hi) <= x_new <= max(lo, hi)):
                    x_new = 0.5 * (lo + hi)
                dx = x_new - x
                x = x_new
                if abs(dx) <= tol * max(1.0, abs(x)):
                    converged = True
                    break
            if not converged:
                return y, k
            y[k] = x
            v[k] = (x - y_prev) / ts
            d[k] = _stribeck(v[k], c1, c2, alpha)
        return y, -1

    return _plant_forward_loop


# ---------------------------------------------------------------------------
# Row-wise MLP passes. ``weights``/``biases`` are tuples with one entry per
# layer (a dummy bias when the head has none); activation 0 is tanh, 1 relu.
# Hidden activations of every row are kept in ``cache`` for the backward pass.


def _mlp_forward_loop(x, weights, biases, act, final_bias, scale, cache):
    n = x.shape[0]
    n_layers = len(weights)
    n_out = weights[n_layers - 1].shape[0]
    width = x.shape[1]
    for l in range(n_layers):
        width = max(width, weights[l].shape[0])
    out = np.zeros((n, n_out))
    h = np.zeros(width)
    z = np.zeros(width)
    for i in range(n):
        n_in = x.shape[1]
        for j in range(n_in):
            h[j] = x[i, j]
        pos = 0
        for l in range(n_layers - 1):
            w = weights[l]
            c = biases[l]
            m = w.shape[0]
            for o in range(m):
                s = c[o]
                for j in range(n_in):
                    s += w[o, j] * h[j]
                if act == 0:
                    z[o] = math.tanh(s)
                else:
                    z[o] = s if s > 0.0 else 0.0
            for o in range(m):
                h[o] = z[o]
                cache[i, pos + o] = z[o]
            pos += m
            n_in = m
        w = weights[n_layers - 1]
        for o in range(n_out):
            s = biases[n_layers - 1][o] if final_bias else 0.0
            for j in range(n_in):
                s += w[o, j] * h[j]
            out[i, o] = scale * s
    return out


def _mlp_backward_loop(x, weights, act, final_bias, scale, cache, cot, grad_w, grad_c):
    """Accumulate parameter gradients of ``sum(cot * out)`` row by row, in row order."""
    n = x.shape[0]
    n_layers = len(weights)
    width = x.shape[1]
    for l in range(n_layers):
        width = max(width, weights[l].shape[0])
    offsets = np.zeros(n_layers, dtype=np.int64)
    for l in range(1, n_layers):
        offsets[l] = offsets[l - 1] + weights[l - 1].shape[0]
    delta = np.zeros(width)
    prev = np.zeros(width)
    for i in range(n):
        last = n_layers - 1
        w = weights[last]
        m = w.shape[0]
        n_in = w.shape[1]
        for o in range(m):
            delta[o] = scale * cot[i, o]
        for l in range(last, -1, -1):
            w = weights[l]
            m = w.shape[0]
            n_in = w.shape[1]
            gw = grad_w[l]
            gc = grad_c[l]
            if l < last or final_bias:
                for o in range(m):
                    gc[o] += delta[o]
            if l == 0:
                for o in range(m):
                    for j in range(n_in):
                        gw[o, j] += delta[o] * x[i, j]
                break
            base = offsets[l]
            for o in range(m):
                for j in range(n_in):
                    gw[o, j] += delta[o] * cache[i, base - n_in + j]
            for j in range(n_in):
                s = 0.0
                for o in range(m):
                    s += w[o, j] * delta[o]
                a = cache[i, base - n_in + j]
                if act == 0:
                    prev[j] = s * (1.0 - a * a)
                else:
                    prev[j] = s if a > 0.0 else 0.0
            for j in range(n_in):
                delta[j] = prev[j]


plant_forward_numpy = _make_plant_forward(_stribeck, _stribeck_slope)

if HAVE_NUMBA:
    lfilter_rows_numba = njit(cache=True)(_lfilter_rows_loop)
    mlp_forward_numba = njit(cache=True)(_mlp_forward_loop)
    mlp_backward_numba = njit(cache=True)(_mlp_backward_loop)
    plant_forward_numba = njit(cache=True)(
        _make_plant_forward(njit(_stribeck), njit(_stribeck_slope))
    )
else:  # pragma: no cover - exercised only without numba
    lfilter_rows_numba = None
    plant_forward_numba = None
    mlp_forward_numba = None
    mlp_backward_numba = None

if USING_NUMBA:
    lfilter_rows = lfilter_rows_numba
    plant_forward = plant_forward_numba
else:
    lfilter_rows = lfilter_rows_numpy
    plant_forward = plant_forward_numpy


def backend():
    """Name of the active kernel backend, ``"numba"`` or ``"numpy"``."""
    return "numba" if USING_NUMBA else "numpy"
