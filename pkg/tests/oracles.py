"""Independent reference implementations used only by the tests.

Each one is written along a different path from the code it checks:
pure-integer SplitMix64, explicit-loop convolution and pooling, and a
direct per-offset network forward that accepts a stack of perturbed
parameter copies (used for finite differences at scale).
"""

import itertools

import numpy as np

M64 = 2**64


def splitmix64_reference(seed, n):
    out, s = [], seed % M64
    for _ in range(n):
        s = (s + 0x9E3779B97F4A7C15) % M64
        z = s
        z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) % M64
        z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) % M64
        out.append(z ^ (z >> 31))
    return out


def conv3d_loops(x, w, b, stride, pad):
    """Six nested loops (plus batch/channel-out) over a zero-padded input."""
    N, T, H, W, Ci = x.shape
    kT, kH, kW, _, Co = w.shape
    xp = np.zeros((N, T + 2 * pad, H + 2 * pad, W + 2 * pad, Ci))
    xp[:, pad:pad + T, pad:pad + H, pad:pad + W] = x
    To = (T + 2 * pad - kT) // stride + 1
    Ho = (H + 2 * pad - kH) // stride + 1
    Wo = (W + 2 * pad - kW) // stride + 1
    out = np.zeros((N, To, Ho, Wo, Co))
    for n, t, i, j, co in itertools.product(range(N), range(To), range(Ho), range(Wo), range(Co)):
        acc = b[co]
        for a in range(kT):
            for c in range(kH):
                for d in range(kW):
                    for ci in range(Ci):
                        acc += xp[n, t * stride + a, i * stride + c, j * stride + d, ci] * w[a, c, d, ci, co]
        out[n, t, i, j, co] = acc
    return out


def maxpool_loops(x, k, s):
    N, T, H, W, C = x.shape
    To, Ho, Wo = ((T - k[0]) // s[0] + 1, (H - k[1]) // s[1] + 1, (W - k[2]) // s[2] + 1)
    out = np.empty((N, To, Ho, Wo, C))
    for t, i, j in itertools.product(range(To), range(Ho), range(Wo)):
        win = x[:, t * s[0]:t * s[0] + k[0], i * s[1]:i * s[1] + k[1], j * s[2]:j * s[2] + k[2]]
        out[:, t, i, j] = win.max(axis=(1, 2, 3))
    return out


def strided_conv2d(block, kernel, stride):
    """Valid-mode 2-D cross-correlation, explicit loops."""
    B, k = block.shape[0], kernel.shape[0]
    P = (B - k) // stride + 1
    out = np.zeros((P, P))
    for i in range(P):
        for j in range(P):
            out[i, j] = (block[i * stride:i * stride + k, j * stride:j * stride + k] * kernel).sum()
    return out


# ------------------------------------------------------------------------
# stacked-parameter forward: every tensor may carry a leading copy axis G

def _sconv(x, w, b, pad):
    """x: (G|1, N, T, H, W, Ci); w: (G|1, k, k, k, Ci, Co); b: (G|1, Co)."""
    k = w.shape[1]
    if pad:
        x = np.pad(x, [(0, 0), (0, 0), (pad, pad), (pad, pad), (pad, pad), (0, 0)])
    G = max(x.shape[0], w.shape[0])
    N, T, H, W = x.shape[1], x.shape[2] - k + 1, x.shape[3] - k + 1, x.shape[4] - k + 1
    out = np.zeros((G, N, T, H, W, w.shape[-1]))
    for a in range(k):
        for c in range(k):
            for d in range(k):
                out += np.matmul(x[:, :, a:a + T, c:c + H, d:d + W], w[:, a, c, d][:, None, None, None])
    return np.maximum(out + b[:, None, None, None, None, :], 0.0)


def _spool(x, k, s, pad):
    if pad:
        x = np.pad(x, [(0, 0), (0, 0), (pad, pad), (pad, pad), (pad, pad), (0, 0)],
                   constant_values=-np.inf)
    T = (x.shape[2] - k[0]) // s[0] + 1
    H = (x.shape[3] - k[1]) // s[1] + 1
    W = (x.shape[4] - k[2]) // s[2] + 1
    out = np.full(x.shape[:2] + (T, H, W, x.shape[-1]), -np.inf)
    for a in range(k[0]):
        for c in range(k[1]):
            for d in range(k[2]):
                out = np.maximum(out, x[:, :, a:a + s[0] * T:s[0], c:c + s[1] * H:s[1], d:d + s[2] * W:s[2]])
    return out


def stacked_forward(params, config, x):
    """Logits (G, N, K); ``params[name]`` is (G|1, *shape)."""
    P = lambda n: (params[n + ".w"], params[n + ".b"])  # noqa: E731
    h = _sconv(x[None], *P("stem"), 1)
    p1, p2 = config.pool_windows()
    if p1:
        h = _spool(h, p1, p1, 0)

    def inception(h, pre):
        a = _sconv(h, *P(pre + ".a"), 0)
        bb = _sconv(_sconv(h, *P(pre + ".b1"), 0), *P(pre + ".b2"), 1)
        cc = _sconv(_sconv(h, *P(pre + ".c1"), 0), *P(pre + ".c2"), 1)
        dd = _sconv(_spool(h, (3, 3, 3), (1, 1, 1), 1), *P(pre + ".d"), 0)
        G = max(v.shape[0] for v in (a, bb, cc, dd))
        return np.concatenate([np.broadcast_to(v, (G,) + v.shape[1:]) for v in (a, bb, cc, dd)], -1)

    h = inception(inception(h, "inc1"), "inc2")
    if p2:
        h = _spool(h, p2, p2, 0)
    h = inception(inception(h, "inc3"), "inc4")
    feats = h.mean(axis=(2, 3, 4))
    return np.matmul(feats, params["head.w"]) + params["head.b"][:, None, :]


def stacked_loss(params, config, x, labels):
    """Mean cross-entropy per copy, shape (G,)."""
    logits = stacked_forward(params, config, x)
    m = logits.max(axis=-1, keepdims=True)
    lse = np.log(np.exp(logits - m).sum(axis=-1)) + m[..., 0]
    picked = np.take_along_axis(logits, labels[None, :, None], axis=-1)[..., 0]
    return (lse - picked).mean(axis=1)


def finite_difference_grads(params, config, x, labels, h=1e-5, chunk=256):
    """Central differences for every scalar of every parameter tensor."""
    base = {k: v[None] for k, v in params.items()}
    grads = {}
    for name, value in params.items():
        flat = value.reshape(-1)
        g = np.empty(flat.size)
        for start in range(0, flat.size, chunk):
            idx = np.arange(start, min(start + chunk, flat.size))
            stack = np.repeat(flat[None], 2 * len(idx), axis=0)
            stack[np.arange(len(idx)), idx] += h
            stack[len(idx) + np.arange(len(idx)), idx] -= h
            trial = dict(base)
            trial[name] = stack.reshape((-1,) + value.shape)
            losses = stacked_loss(trial, config, x, labels)
            g[idx] = (losses[:len(idx)] - losses[len(idx):]) / (2 * h)
        grads[name] = g.reshape(value.shape)
    return grads


def max_relative_error(a, b, floor=1e-6):
    """max |a - b| / max(|a|, |b|, floor), elementwise."""
    a, b = np.asarray(a), np.asarray(b)
    return float((np.abs(a - b) / np.maximum(np.maximum(np.abs(a), np.abs(b)), floor)).max())


def sparse_dct_block(B, K, rng):
    """B x B block with exactly K nonzero orthonormal-DCT coefficients of magnitude in [0.5, 1)."""
    from csprivacy.recon import dct2_inverse
    c = np.zeros(B * B)
    idx = rng.permutation(B * B)[:K]
    c[idx] = rng.signs(K) * (0.5 + 0.5 * rng.uniform(K))
    return dct2_inverse(c.reshape(B, B))


def is_nonincreasing(seq, rtol=1e-13):
    """Every step is <= the previous value up to floating-point resolution of the values."""
    seq = np.asarray(seq, dtype=np.float64)
    return bool(np.all(seq[1:] <= seq[:-1] + rtol * np.abs(seq[:-1])))
