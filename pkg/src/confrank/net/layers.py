"""Dense-array layer kernels with hand-written backward passes.

Arrays are NCHW float64. Every ``*_forward`` returns ``(out, cache)``; the
matching ``*_backward`` takes the upstream gradient and the cache.
"""

from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

LEAKY_SLOPE = 0.1


def conv2d_forward(x, w, b, pad):
    """Stride-1 cross-correlation with zero padding ``pad = (ph, pw)``."""
    bsz, cin, h, wd = x.shape
    cout, _, kh, kw = w.shape
    ph, pw = pad
    xp = np.pad(x, ((0, 0), (0, 0), (ph, ph), (pw, pw)))
    ho, wo = h + 2 * ph - kh + 1, wd + 2 * pw - kw + 1
    cols = sliding_window_view(xp, (kh, kw), axis=(2, 3))
    cols = cols.transpose(0, 2, 3, 1, 4, 5).reshape(bsz * ho * wo, cin * kh * kw)
    out = cols @ w.reshape(cout, -1).T + b
    out = out.reshape(bsz, ho, wo, cout).transpose(0, 3, 1, 2)
    return out, (cols, x.shape, w, pad)


def conv2d_backward(dout, cache):
    cols, x_shape, w, (ph, pw) = cache
    cout, cin, kh, kw = w.shape
    d2 = dout.transpose(0, 2, 3, 1).reshape(-1, cout)
    dw = (d2.T @ cols).reshape(w.shape)
    db = d2.sum(axis=0)
    # input gradient = full correlation with the flipped, transposed kernel
    w_t = np.ascontiguousarray(w[:, :, ::-1, ::-1].transpose(1, 0, 2, 3))
    dx, _ = conv2d_forward(dout, w_t, np.zeros(cin), (kh - 1 - ph, kw - 1 - pw))
    return dx, dw, db


def leaky_relu_forward(x, slope=LEAKY_SLOPE):
    pos = x > 0
    return np.where(pos, x, slope * x), (pos, slope)


def leaky_relu_backward(dout, cache):
    pos, slope = cache
    return np.where(pos, dout, slope * dout)


def avgpool2_forward(x):
    bsz, c, h, w = x.shape
    out = x.reshape(bsz, c, h // 2, 2, w // 2, 2).mean(axis=(3, 5))
    return out, x.shape


def avgpool2_backward(dout, shape):
    up = np.repeat(np.repeat(dout, 2, axis=2), 2, axis=3) * 0.25
    return up[:, :, : shape[2], : shape[3]]


def upsample2_forward(x):
    return np.repeat(np.repeat(x, 2, axis=2), 2, axis=3)


def upsample2_backward(dout):
    bsz, c, h, w = dout.shape
    return dout.reshape(bsz, c, h // 2, 2, w // 2, 2).sum(axis=(3, 5))


def nearest_matrix(n_in: int, n_out: int) -> np.ndarray:
    """``(n_out, n_in)`` one-hot selection matrix of nearest-neighbour resizing."""
    src = np.floor(np.arange(n_out) * (n_in / n_out)).astype(np.intp)
    src = np.minimum(src, n_in - 1)
    m = np.zeros((n_out, n_in))
    m[np.arange(n_out), src] = 1.0
    return m


def resize_nearest_forward(x, size):
    rows = nearest_matrix(x.shape[2], size[0])
    cols = nearest_matrix(x.shape[3], size[1])
    return rows @ x @ cols.T, (rows, cols)


def resize_nearest_backward(dout, cache):
    rows, cols = cache
    return rows.T @ dout @ cols


def gap_forward(x):
    return x.mean(axis=(2, 3)), x.shape


def gap_backward(dout, shape):
    return np.broadcast_to(dout[:, :, None, None] / (shape[2] * shape[3]), shape).copy()


def clamp_forward(u):
    return np.clip(u, 0.0, 1.0), u


def clamp_backward(dout, u):
    """Pass the gradient inside (0, 1); at a bound only when it points inward."""
    inside = (u > 0.0) & (u < 1.0)
    inward = ((u == 0.0) & (dout < 0)) | ((u == 1.0) & (dout > 0))
    return np.where(inside | inward, dout, 0.0)
