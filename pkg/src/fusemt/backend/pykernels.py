"""Numpy reference implementations of the hot inner-loop kernels.

These are the fallback backend and the semantic definition the compiled
kernels must match bit-for-bit in structure (see tests/test_backend.py
for the parity suite). All kernels take C-contiguous float32 or float64
arrays and are pure except where documented as in-place.
"""

import numpy as np

NAME = "numpy"


def softmax_rows(x):
    """Row-stabilized softmax over the last axis of a 2-D array."""
    shifted = x - x.max(axis=1, keepdims=True)
    np.exp(shifted, out=shifted)
    shifted /= shifted.sum(axis=1, keepdims=True)
    return shifted


def softmax_xent(logits, targets):
    """Fused softmax + negative log-likelihood.

    Returns (nll, probs): nll[i] = -log softmax(logits[i])[targets[i]],
    probs saved for the backward pass.
    """
    m = logits.max(axis=1, keepdims=True)
    shifted = logits - m
    exps = np.exp(shifted)
    sums = exps.sum(axis=1)
    rows = np.arange(logits.shape[0])
    nll = np.log(sums) - shifted[rows, targets]
    probs = exps / sums[:, None]
    return nll, probs


def xent_backward(probs, targets, dnll):
    """Gradient of softmax_xent wrt logits: (probs - onehot) * dnll."""
    dlogits = probs * dnll[:, None]
    rows = np.arange(probs.shape[0])
    dlogits[rows, targets] -= dnll
    return dlogits


def gru_gates(ax, ah, h_prev):
    """Fused GRU gate arithmetic given the two packed preactivations.

    ax, ah are (B, 3h) matmul results (input and hidden paths, gate
    order z|r|c); h_prev is (B, h). Returns (h_new, z, r, c) with the
    intermediates kept for the backward pass.
    """
    h = h_prev.shape[1]
    z = _sigmoid(ax[:, :h] + ah[:, :h])
    r = _sigmoid(ax[:, h : 2 * h] + ah[:, h : 2 * h])
    c = np.tanh(ax[:, 2 * h :] + r * ah[:, 2 * h :])
    h_new = (1.0 - z) * h_prev + z * c
    return h_new, z, r, c


def gru_gates_backward(dh, z, r, c, ah, h_prev):
    """Backward of gru_gates: returns (dax, dah, dh_prev)."""
    h = h_prev.shape[1]
    dz = (c - h_prev) * dh
    dc = z * dh
    dh_prev = (1.0 - z) * dh

    dac = (1.0 - c * c) * dc
    ah_c = ah[:, 2 * h :]
    dr = ah_c * dac
    daz = z * (1.0 - z) * dz
    dar = r * (1.0 - r) * dr

    dax = np.concatenate([daz, dar, dac], axis=1)
    dah = np.concatenate([daz, dar, r * dac], axis=1)
    return dax, dah, dh_prev


def adagrad_step(param, grad, accum, lr, eps):
    """In-place AdaGrad update: accum += g^2; param -= lr*g/sqrt(accum+eps)."""
    accum += grad * grad
    param -= lr * grad / np.sqrt(accum + eps)


def _sigmoid(x):
    # Split by sign so exp never overflows.
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out
