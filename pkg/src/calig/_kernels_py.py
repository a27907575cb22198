"""Pure-numpy reference for the row kernels in ``_kernels.pyx``."""

import numpy as np
from scipy.special import erf

_INV_SQRT_2PI = 0.3989422804014327


def softmax_rows(x, mask=None):
    if mask is None:
        shifted = x - x.max(axis=1, keepdims=True)
        e = np.exp(shifted)
        return e / e.sum(axis=1, keepdims=True)
    keep = mask.astype(bool)
    m = np.where(keep, x, -np.inf).max(axis=1, keepdims=True)
    m = np.where(np.isfinite(m), m, 0.0)
    e = np.where(keep, np.exp(np.where(keep, x - m, 0.0)), 0.0)
    total = e.sum(axis=1, keepdims=True)
    return np.divide(e, total, out=np.zeros_like(e), where=total > 0)


def softmax_rows_backward(y, gy):
    dot = (gy * y).sum(axis=1, keepdims=True)
    return y * (gy - dot)


def layer_norm_rows(x, gamma, beta, eps):
    mean = x.mean(axis=1, keepdims=True)
    centered = x - mean
    var = (centered * centered).mean(axis=1, keepdims=True)
    rstd = 1.0 / np.sqrt(var + eps)
    xhat = centered * rstd
    return xhat * gamma + beta, xhat, rstd[:, 0]


def layer_norm_rows_backward(gy, xhat, rstd, gamma):
    g = gy * gamma
    s1 = g.mean(axis=1, keepdims=True)
    s2 = (g * xhat).mean(axis=1, keepdims=True)
    gx = rstd[:, None] * (g - s1 - xhat * s2)
    return gx, (gy * xhat).sum(axis=0), gy.sum(axis=0)


def gelu(x):
    return 0.5 * x * (1.0 + erf(x / np.sqrt(2.0)))


def gelu_backward(x, gy):
    cdf = 0.5 * (1.0 + erf(x / np.sqrt(2.0)))
    pdf = _INV_SQRT_2PI * np.exp(-0.5 * x * x)
    return gy * (cdf + x * pdf)
