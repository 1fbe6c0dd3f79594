"""Compressed-domain 3D ConvNet built from four inflated Inception blocks.

Layout::

    stem 3x3x3 conv (S) + ReLU
    maxpool 1x2x2
    inception 1, inception 2
    maxpool 2x2x2
    inception 3, inception 4
    global average pool over (T, H, W)
    affine head -> K logits

Pools shrink an axis only when its extent is at least 4, so a 2 x 2 block
grid goes through the same code path as a 14 x 20 one.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..core import Rng
from . import layers

DEFAULT_TABLE = (
    (8, 8, 16, 4, 8, 8),
    (16, 16, 32, 8, 16, 16),
    (16, 16, 32, 8, 16, 16),
    (32, 32, 64, 16, 32, 32),
)

BRANCHES = ("a", "b1", "b2", "c1", "c2", "d")


@dataclass(frozen=True)
class NetworkConfig:
    input_shape: tuple  # (T, Hb, Wb, C)
    num_classes: int = 10
    stem_channels: int = 16
    table: tuple = DEFAULT_TABLE
    pool1: bool = True
    pool2: bool = True

    def __post_init__(self):
        object.__setattr__(self, "input_shape", tuple(int(v) for v in self.input_shape))
        object.__setattr__(self, "table", tuple(tuple(int(v) for v in row) for row in self.table))
        if len(self.input_shape) != 4 or min(self.input_shape) < 1:
            raise ValueError(f"input_shape must be (T, Hb, Wb, C), got {self.input_shape}")
        if len(self.table) != 4 or any(len(row) != 6 for row in self.table):
            raise ValueError("channel table must hold four (a, b1, b2, c1, c2, d) rows")
        if self.stem_channels < 1 or min(min(row) for row in self.table) < 1:
            raise ValueError("all channel counts must be >= 1")
        if self.num_classes < 2:
            raise ValueError("need at least two classes")

    @staticmethod
    def block_out(row) -> int:
        a, _, b2, _, c2, d = row
        return a + b2 + c2 + d

    def to_dict(self) -> dict:
        return {"input_shape": list(self.input_shape), "num_classes": self.num_classes,
                "stem_channels": self.stem_channels, "table": [list(r) for r in self.table],
                "pool1": self.pool1, "pool2": self.pool2}

    @classmethod
    def from_dict(cls, d: dict) -> "NetworkConfig":
        return cls(input_shape=tuple(d["input_shape"]), num_classes=int(d["num_classes"]),
                   stem_channels=int(d.get("stem_channels", 16)),
                   table=tuple(tuple(r) for r in d.get("table", DEFAULT_TABLE)),
                   pool1=bool(d.get("pool1", True)), pool2=bool(d.get("pool2", True)))

    def pool_windows(self):
        """Effective (pool1, pool2) windows, ``None`` where a pool is skipped."""
        t, h, w = self.input_shape[:3]

        def shrink(ext, want):
            return 2 if want and ext >= 4 else 1

        p1 = (1, shrink(h, self.pool1), shrink(w, self.pool1))
        h, w = h // p1[1], w // p1[2]
        p2 = (shrink(t, self.pool2), shrink(h, self.pool2), shrink(w, self.pool2))
        return (p1 if p1 != (1, 1, 1) else None, p2 if p2 != (1, 1, 1) else None)

    def param_shapes(self) -> dict:
        shapes = {}
        cin = self.input_shape[3]
        shapes["stem.w"] = (3, 3, 3, cin, self.stem_channels)
        shapes["stem.b"] = (self.stem_channels,)
        cin = self.stem_channels
        for i, (a, b1, b2, c1, c2, d) in enumerate(self.table, 1):
            pre = f"inc{i}"
            for name, k, ci, co in (("a", 1, cin, a), ("b1", 1, cin, b1), ("b2", 3, b1, b2),
                                    ("c1", 1, cin, c1), ("c2", 3, c1, c2), ("d", 1, cin, d)):
                shapes[f"{pre}.{name}.w"] = (k, k, k, ci, co)
                shapes[f"{pre}.{name}.b"] = (co,)
            cin = a + b2 + c2 + d
        shapes["head.w"] = (cin, self.num_classes)
        shapes["head.b"] = (self.num_classes,)
        return shapes


def init_params(config: NetworkConfig, seed: int) -> dict:
    """He-normal conv weights, 1/fan_in-variance head, zero biases."""
    rng = Rng(seed)
    params = {}
    for name, shape in config.param_shapes().items():
        if name.endswith(".b"):
            params[name] = np.zeros(shape)
            continue
        fan_in = int(np.prod(shape[:-1]))
        gain = 1.0 if name.startswith("head") else 2.0
        params[name] = rng.gaussian(int(np.prod(shape))).reshape(shape) * np.sqrt(gain / fan_in)
    return params


def reinit_head(params: dict, config: NetworkConfig, seed: int) -> dict:
    """Copy of ``params`` with a freshly initialised head sized for ``config``."""
    fresh = init_params(config, seed)
    out = {k: v for k, v in params.items() if not k.startswith("head.")}
    out["head.w"] = fresh["head.w"]
    out["head.b"] = fresh["head.b"]
    return out


def _conv_relu(x, params, name, pad):
    z, cc = layers.conv3d_forward(x, params[name + ".w"], params[name + ".b"], 1, pad)
    out, mask = layers.relu_forward(z)
    return out, (cc, mask)


def _conv_relu_backward(dout, cache, need_dx=True):
    cc, mask = cache
    return layers.conv3d_backward(layers.relu_backward(dout, mask), cc, need_dx)


def inception3d_forward(x, params, prefix):
    """Four ReLU branches concatenated on channels; T, H, W are preserved."""
    p = lambda n: f"{prefix}.{n}"  # noqa: E731
    ya, ca = _conv_relu(x, params, p("a"), 0)
    hb, cb1 = _conv_relu(x, params, p("b1"), 0)
    yb, cb2 = _conv_relu(hb, params, p("b2"), 1)
    hc, cc1 = _conv_relu(x, params, p("c1"), 0)
    yc, cc2 = _conv_relu(hc, params, p("c2"), 1)
    pooled, cpool = layers.maxpool3d_forward(x, 3, 1, 1)
    yd, cd = _conv_relu(pooled, params, p("d"), 0)
    out = np.concatenate([ya, yb, yc, yd], axis=-1)
    splits = np.cumsum([ya.shape[-1], yb.shape[-1], yc.shape[-1]])
    return out, (ca, cb1, cb2, cc1, cc2, cpool, cd, splits)


def inception3d_backward(dout, cache, prefix):
    ca, cb1, cb2, cc1, cc2, cpool, cd, splits = cache
    da, db, dc, dd = np.split(dout, splits, axis=-1)
    grads = {}

    def put(name, dw, dbias):
        grads[f"{prefix}.{name}.w"] = dw
        grads[f"{prefix}.{name}.b"] = dbias

    dx, dw, dbias = _conv_relu_backward(da, ca)
    put("a", dw, dbias)
    dh, dw, dbias = _conv_relu_backward(db, cb2)
    put("b2", dw, dbias)
    dxb, dw, dbias = _conv_relu_backward(dh, cb1)
    put("b1", dw, dbias)
    dx = dx + dxb
    dh, dw, dbias = _conv_relu_backward(dc, cc2)
    put("c2", dw, dbias)
    dxc, dw, dbias = _conv_relu_backward(dh, cc1)
    put("c1", dw, dbias)
    dx = dx + dxc
    dp, dw, dbias = _conv_relu_backward(dd, cd)
    put("d", dw, dbias)
    dx = dx + layers.maxpool3d_backward(dp, cpool)
    return dx, grads


def network_forward(params: dict, config: NetworkConfig, x, keep_cache: bool = False):
    """Logits ``N x K`` for a batch ``N x T x Hb x Wb x C``."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 5 or x.shape[1:] != config.input_shape:
        raise ValueError(f"input {x.shape} does not match N x {config.input_shape}")
    pool1, pool2 = config.pool_windows()
    caches = {}
    h, caches["stem"] = _conv_relu(x, params, "stem", 1)
    if pool1:
        h, caches["pool1"] = layers.maxpool3d_forward(h, pool1)
    h, caches["inc1"] = inception3d_forward(h, params, "inc1")
    h, caches["inc2"] = inception3d_forward(h, params, "inc2")
    if pool2:
        h, caches["pool2"] = layers.maxpool3d_forward(h, pool2)
    h, caches["inc3"] = inception3d_forward(h, params, "inc3")
    h, caches["inc4"] = inception3d_forward(h, params, "inc4")
    caches["gap_shape"] = h.shape
    feats = h.mean(axis=(1, 2, 3))
    caches["feats"] = feats
    logits = feats @ params["head.w"] + params["head.b"]
    if keep_cache:
        return logits, caches
    return logits


def network_backward_from_logits(params: dict, caches: dict, dlogits) -> dict:
    grads = {}
    grads["head.w"] = caches["feats"].T @ dlogits
    grads["head.b"] = dlogits.sum(axis=0)
    dfeat = dlogits @ params["head.w"].T
    N, T, H, W, C = caches["gap_shape"]
    dh = np.broadcast_to(dfeat[:, None, None, None, :] / (T * H * W), (N, T, H, W, C))
    for name in ("inc4", "inc3"):
        dh, g = inception3d_backward(dh, caches[name], name)
        grads.update(g)
    if "pool2" in caches:
        dh = layers.maxpool3d_backward(dh, caches["pool2"])
    for name in ("inc2", "inc1"):
        dh, g = inception3d_backward(dh, caches[name], name)
        grads.update(g)
    if "pool1" in caches:
        dh = layers.maxpool3d_backward(dh, caches["pool1"])
    _, grads["stem.w"], grads["stem.b"] = _conv_relu_backward(dh, caches["stem"], need_dx=False)
    return {k: grads[k] for k in params}


def softmax_cross_entropy(logits, labels):
    """Mean negative log-likelihood and its gradient with respect to the logits."""
    logits = np.asarray(logits, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    n, k = logits.shape
    if labels.shape != (n,) or labels.min(initial=0) < 0 or labels.max(initial=0) >= k:
        raise ValueError(f"labels must be {n} integers in [0, {k})")
    shifted = logits - logits.max(axis=1, keepdims=True)
    logz = np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    logp = shifted - logz
    loss = -logp[np.arange(n), labels].mean()
    dlogits = np.exp(logp)
    dlogits[np.arange(n), labels] -= 1.0
    return float(loss), dlogits / n


def network_backward(params: dict, config: NetworkConfig, x, labels):
    """Loss and exact gradients of mean cross-entropy for every parameter."""
    logits, caches = network_forward(params, config, x, keep_cache=True)
    loss, dlogits = softmax_cross_entropy(logits, labels)
    return loss, network_backward_from_logits(params, caches, dlogits)


@dataclass
class ConvNet3D:
    """Config plus parameters; thin convenience wrapper over the functions above."""

    config: NetworkConfig
    params: dict = field(default_factory=dict)
    seed: int = 0

    @classmethod
    def create(cls, config: NetworkConfig, seed: int = 0) -> "ConvNet3D":
        return cls(config, init_params(config, seed), seed)

    def forward(self, x):
        return network_forward(self.params, self.config, x)

    def loss_and_grads(self, x, labels):
        return network_backward(self.params, self.config, x, labels)

    def predict(self, x, batch_size: int = 64):
        out = [self.forward(x[i:i + batch_size]).argmax(axis=1) for i in range(0, len(x), batch_size)]
        return np.concatenate(out) if out else np.zeros(0, dtype=np.int64)
