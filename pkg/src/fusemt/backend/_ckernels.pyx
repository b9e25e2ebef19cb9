# cython: boundscheck=False, wraparound=False, cdivision=True
# cython: language_level=3
"""Compiled versions of the hot inner-loop kernels.

Same contracts as fusemt.backend.pykernels; tests/test_backend.py holds
the parity suite that pins the two backends together. All array
arguments must be C-contiguous float32 or float64 (both backends share
that requirement; callers normalize with np.ascontiguousarray).
"""

import numpy as np

cimport cython
from libc.math cimport (exp as c_exp, expf as c_expf, log as c_log,
                        logf as c_logf, sqrt as c_sqrt, sqrtf as c_sqrtf,
                        tanh as c_tanh, tanhf as c_tanhf)

NAME = "c"

ctypedef fused floating:
    float
    double


# Width-matched libm calls: the `floating is float` branch is resolved
# at compile time, so float32 arrays never pay for double-precision
# transcendentals.

cdef inline floating _exp(floating x) noexcept nogil:
    if floating is float:
        return c_expf(x)
    return c_exp(x)


cdef inline floating _log(floating x) noexcept nogil:
    if floating is float:
        return c_logf(x)
    return c_log(x)


cdef inline floating _tanh(floating x) noexcept nogil:
    if floating is float:
        return c_tanhf(x)
    return c_tanh(x)


cdef inline floating _sig(floating x) noexcept nogil:
    # Split by sign so exp never overflows.
    cdef floating ex
    if x >= 0:
        return <floating>(1.0 / (1.0 + _exp(-x)))
    ex = _exp(x)
    return <floating>(ex / (1.0 + ex))


def softmax_rows(floating[:, ::1] x):
    """Row-stabilized softmax over the last axis of a 2-D array."""
    cdef Py_ssize_t n = x.shape[0], m = x.shape[1], i, j
    cdef floating mx, s
    out_np = np.empty((n, m), dtype=np.float32 if floating is float else np.float64)
    cdef floating[:, ::1] out = out_np
    with nogil:
        for i in range(n):
            mx = x[i, 0]
            for j in range(1, m):
                if x[i, j] > mx:
                    mx = x[i, j]
            s = 0.0
            for j in range(m):
                out[i, j] = _exp(x[i, j] - mx)
                s += out[i, j]
            for j in range(m):
                out[i, j] /= s
    return out_np


def softmax_xent(floating[:, ::1] logits, targets):
    """Fused softmax + negative log-likelihood.

    Returns (nll, probs): nll[i] = -log softmax(logits[i])[targets[i]],
    probs saved for the backward pass.
    """
    cdef Py_ssize_t n = logits.shape[0], m = logits.shape[1], i, j
    cdef Py_ssize_t[::1] tgt = np.ascontiguousarray(targets, dtype=np.intp)
    dtype = np.float32 if floating is float else np.float64
    nll_np = np.empty(n, dtype=dtype)
    probs_np = np.empty((n, m), dtype=dtype)
    cdef floating[::1] nll = nll_np
    cdef floating[:, ::1] probs = probs_np
    cdef floating mx, s
    with nogil:
        for i in range(n):
            mx = logits[i, 0]
            for j in range(1, m):
                if logits[i, j] > mx:
                    mx = logits[i, j]
            s = 0.0
            for j in range(m):
                probs[i, j] = _exp(logits[i, j] - mx)
                s += probs[i, j]
            nll[i] = _log(s) - (logits[i, tgt[i]] - mx)
            for j in range(m):
                probs[i, j] /= s
    return nll_np, probs_np


def xent_backward(floating[:, ::1] probs, targets, floating[::1] dnll):
    """Gradient of softmax_xent wrt logits: (probs - onehot) * dnll."""
    cdef Py_ssize_t n = probs.shape[0], m = probs.shape[1], i, j
    cdef Py_ssize_t[::1] tgt = np.ascontiguousarray(targets, dtype=np.intp)
    out_np = np.empty((n, m), dtype=np.float32 if floating is float else np.float64)
    cdef floating[:, ::1] out = out_np
    with nogil:
        for i in range(n):
            for j in range(m):
                out[i, j] = probs[i, j] * dnll[i]
            out[i, tgt[i]] -= dnll[i]
    return out_np


def gru_gates(floating[:, ::1] ax, floating[:, ::1] ah, floating[:, ::1] h_prev):
    """Fused GRU gate arithmetic given the two packed preactivations.

    ax, ah are (B, 3h) matmul results (input and hidden paths, gate
    order z|r|c); h_prev is (B, h). Returns (h_new, z, r, c) with the
    intermediates kept for the backward pass.
    """
    cdef Py_ssize_t n = h_prev.shape[0], h = h_prev.shape[1], i, j
    dtype = np.float32 if floating is float else np.float64
    hn_np = np.empty((n, h), dtype=dtype)
    z_np = np.empty((n, h), dtype=dtype)
    r_np = np.empty((n, h), dtype=dtype)
    c_np = np.empty((n, h), dtype=dtype)
    cdef floating[:, ::1] hn = hn_np, z = z_np, r = r_np, c = c_np
    with nogil:
        for i in range(n):
            for j in range(h):
                z[i, j] = _sig(ax[i, j] + ah[i, j])
                r[i, j] = _sig(ax[i, h + j] + ah[i, h + j])
                c[i, j] = _tanh(ax[i, 2 * h + j] + r[i, j] * ah[i, 2 * h + j])
                hn[i, j] = (1.0 - z[i, j]) * h_prev[i, j] + z[i, j] * c[i, j]
    return hn_np, z_np, r_np, c_np


def gru_gates_backward(floating[:, ::1] dh, floating[:, ::1] z, floating[:, ::1] r,
                       floating[:, ::1] c, floating[:, ::1] ah, floating[:, ::1] h_prev):
    """Backward of gru_gates: returns (dax, dah, dh_prev)."""
    cdef Py_ssize_t n = h_prev.shape[0], h = h_prev.shape[1], i, j
    cdef floating dz, dc, dac, dr, daz, dar
    dtype = np.float32 if floating is float else np.float64
    dax_np = np.empty((n, 3 * h), dtype=dtype)
    dah_np = np.empty((n, 3 * h), dtype=dtype)
    dhp_np = np.empty((n, h), dtype=dtype)
    cdef floating[:, ::1] dax = dax_np, dah = dah_np, dhp = dhp_np
    with nogil:
        for i in range(n):
            for j in range(h):
                dz = (c[i, j] - h_prev[i, j]) * dh[i, j]
                dc = z[i, j] * dh[i, j]
                dhp[i, j] = (1.0 - z[i, j]) * dh[i, j]
                dac = (1.0 - c[i, j] * c[i, j]) * dc
                dr = ah[i, 2 * h + j] * dac
                daz = z[i, j] * (1.0 - z[i, j]) * dz
                dar = r[i, j] * (1.0 - r[i, j]) * dr
                dax[i, j] = daz
                dax[i, h + j] = dar
                dax[i, 2 * h + j] = dac
                dah[i, j] = daz
                dah[i, h + j] = dar
                dah[i, 2 * h + j] = r[i, j] * dac
    return dax_np, dah_np, dhp_np


def adagrad_step(param, grad, accum, double lr, double eps):
    """In-place AdaGrad update: accum += g^2; param -= lr*g/sqrt(accum+eps)."""
    if not (param.flags.c_contiguous and accum.flags.c_contiguous):
        raise ValueError("adagrad_step: param and accum must be C-contiguous")
    grad = np.ascontiguousarray(grad, dtype=param.dtype)
    if param.dtype == np.float32:
        _adagrad_f32(param.reshape(-1), grad.reshape(-1), accum.reshape(-1), lr, eps)
    else:
        _adagrad_f64(param.reshape(-1), grad.reshape(-1), accum.reshape(-1), lr, eps)


cdef void _adagrad_f32(float[::1] p, float[::1] g, float[::1] a, double lr, double eps):
    cdef Py_ssize_t i
    with nogil:
        for i in range(p.shape[0]):
            a[i] += g[i] * g[i]
            p[i] -= <float>lr * g[i] / c_sqrtf(a[i] + <float>eps)


cdef void _adagrad_f64(double[::1] p, double[::1] g, double[::1] a, double lr, double eps):
    cdef Py_ssize_t i
    with nogil:
        for i in range(p.shape[0]):
            a[i] += g[i] * g[i]
            p[i] -= lr * g[i] / c_sqrt(a[i] + eps)
