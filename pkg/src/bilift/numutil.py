"""Small numerically-stable reductions used throughout the estimators."""

import numpy as np


def logsumexp(a, axis=-1, b_log=None, keepdims=False):
    """log(sum(exp(a))) along an axis; ``b_log`` adds per-term log-weights."""
    a = np.asarray(a, dtype=float)
    if b_log is not None:
        a = a + b_log
    amax = np.max(a, axis=axis, keepdims=True)
    amax = np.where(np.isfinite(amax), amax, 0.0)
    out = np.log(np.sum(np.exp(a - amax), axis=axis, keepdims=True)) + amax
    if not keepdims:
        out = np.squeeze(out, axis=axis)
    return out


def logmeanexp(a, axis=-1):
    a = np.asarray(a, dtype=float)
    n = a.shape[axis]
    return logsumexp(a, axis=axis) - np.log(n)


def softmax(a, axis=-1):
    a = np.asarray(a, dtype=float)
    amax = np.max(a, axis=axis, keepdims=True)
    e = np.exp(a - amax)
    return e / np.sum(e, axis=axis, keepdims=True)


def weighted_fold(values, logw, axis):
    """Self-normalized weighted average of ``values`` along ``axis``.

    ``logw`` holds unnormalized log-weights with the same shape as ``values``
    up to trailing component axes of ``values``.
    """
    w = softmax(logw, axis=axis)
    extra = values.ndim - w.ndim
    if extra:
        w = w.reshape(w.shape + (1,) * extra)
    return np.sum(w * values, axis=axis)
