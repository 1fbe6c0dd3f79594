"""3D convolution, max-pooling and ReLU with hand-written backward passes.

Activations are channels-last, ``N x T x H x W x C``; convolution weights are
``kT x kH x kW x Cin x Cout``. Every ``*_forward`` returns ``(out, cache)`` and
the matching ``*_backward`` consumes that cache.
"""

from __future__ import annotations

import itertools

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view


def _triple(v) -> tuple[int, int, int]:
    if np.isscalar(v):
        return (int(v),) * 3
    t = tuple(int(a) for a in v)
    if len(t) != 3:
        raise ValueError(f"expected 3 values, got {v!r}")
    return t


def out_extent(n: int, k: int, s: int, p: int) -> int:
    return (n + 2 * p - k) // s + 1


def _pad(x: np.ndarray, p, value=0.0) -> np.ndarray:
    if not any(p):
        return x
    width = [(0, 0)] + [(a, a) for a in p] + [(0, 0)]
    return np.pad(x, width, constant_values=value)


def _unpad(x: np.ndarray, p) -> np.ndarray:
    if not any(p):
        return x
    pt, ph, pw = p
    T, H, W = x.shape[1:4]
    return x[:, pt:T - pt, ph:H - ph, pw:W - pw]


def _windows(xp: np.ndarray, k, s) -> np.ndarray:
    """View of shape N x To x Ho x Wo x C x kT x kH x kW."""
    v = sliding_window_view(xp, k, axis=(1, 2, 3))
    return v[:, ::s[0], ::s[1], ::s[2]]


def conv3d_forward(x, w, b, stride=1, padding=0):
    if x.ndim != 5 or w.ndim != 5:
        raise ValueError(f"conv3d expects 5-D input and weight, got {x.shape}, {w.shape}")
    k = w.shape[:3]
    cin, cout = w.shape[3], w.shape[4]
    if x.shape[-1] != cin:
        raise ValueError(f"input has {x.shape[-1]} channels, weight expects {cin}")
    if b.shape != (cout,):
        raise ValueError(f"bias shape {b.shape} != ({cout},)")
    s, p = _triple(stride), _triple(padding)
    N = x.shape[0]
    out_shape = tuple(out_extent(n, kk, ss, pp) for n, kk, ss, pp in zip(x.shape[1:4], k, s, p))
    if min(out_shape) < 1:
        raise ValueError(f"kernel {k} does not fit input {x.shape[1:4]} with padding {p}")
    w2 = w.reshape(-1, cout)
    if k == (1, 1, 1) and s == (1, 1, 1) and not any(p):
        col = x.reshape(-1, cin)
    else:
        win = _windows(_pad(x, p), k, s)
        col = win.transpose(0, 1, 2, 3, 5, 6, 7, 4).reshape(-1, w2.shape[0])
    out = (col @ w2 + b).reshape(N, *out_shape, cout)
    return out, (x.shape, col, w, s, p)


def conv3d_backward(dout, cache, need_dx=True):
    """Returns ``(dx, dw, db)``; ``dx`` is None when ``need_dx`` is False."""
    x_shape, col, w, s, p = cache
    k = w.shape[:3]
    cin, cout = w.shape[3], w.shape[4]
    d2 = dout.reshape(-1, cout)
    dw = (col.T @ d2).reshape(w.shape)
    db = d2.sum(axis=0)
    if not need_dx:
        return None, dw, db
    dcol = d2 @ w.reshape(-1, cout).T
    if k == (1, 1, 1) and s == (1, 1, 1) and not any(p):
        return dcol.reshape(x_shape), dw, db
    N, To, Ho, Wo = dout.shape[:4]
    dcol = dcol.reshape(N, To, Ho, Wo, *k, cin)
    padded = (N,) + tuple(n + 2 * pp for n, pp in zip(x_shape[1:4], p)) + (cin,)
    dxp = np.zeros(padded)
    for a, bb, c in itertools.product(range(k[0]), range(k[1]), range(k[2])):
        dxp[:, a:a + s[0] * To:s[0], bb:bb + s[1] * Ho:s[1], c:c + s[2] * Wo:s[2]] += dcol[:, :, :, :, a, bb, c]
    return _unpad(dxp, p), dw, db


def maxpool3d_forward(x, window, stride=None, padding=0):
    """Channel-wise windowed maximum; padded cells never win (-inf)."""
    k = _triple(window)
    s = _triple(stride if stride is not None else window)
    p = _triple(padding)
    if any(pp >= kk for pp, kk in zip(p, k)):
        raise ValueError("padding must be smaller than the window")
    if any(out_extent(n, kk, ss, pp) < 1 for n, kk, ss, pp in zip(x.shape[1:4], k, s, p)):
        raise ValueError(f"pool window {k} does not fit input {x.shape[1:4]}")
    win = _windows(_pad(x, p, -np.inf), k, s)
    flat = win.reshape(*win.shape[:5], -1)
    arg = flat.argmax(axis=-1)
    out = np.take_along_axis(flat, arg[..., None], axis=-1)[..., 0]
    return out, (x.shape, arg, k, s, p)


def maxpool3d_backward(dout, cache):
    x_shape, arg, k, s, p = cache
    N, To, Ho, Wo, C = dout.shape
    padded = (N,) + tuple(n + 2 * pp for n, pp in zip(x_shape[1:4], p)) + (C,)
    dxp = np.zeros(padded)
    for o, (a, b, c) in enumerate(itertools.product(range(k[0]), range(k[1]), range(k[2]))):
        hit = arg == o
        if hit.any():
            dxp[:, a:a + s[0] * To:s[0], b:b + s[1] * Ho:s[1], c:c + s[2] * Wo:s[2]] += dout * hit
    return _unpad(dxp, p)


def maxpool3d(x, window, stride=None, padding=0):
    return maxpool3d_forward(x, window, stride, padding)[0]


def relu_forward(x):
    out = np.maximum(x, 0.0)
    return out, out > 0


def relu_backward(dout, mask):
    return dout * mask
