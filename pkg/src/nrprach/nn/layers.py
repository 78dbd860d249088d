"""Layers with explicit forward/backward passes.

Every layer keeps the activations it needs for ``backward`` from the last
``forward(x, train=True)`` call.  Parameters and their gradients live in the
``params`` / ``grads`` dicts, keyed by short names ("w", "b", "gamma", ...).
Non-trainable state (BN running statistics) lives in ``buffers``.
"""

from __future__ import annotations

import numpy as np

from . import kernels


class Layer:
    kind = "layer"

    def __init__(self):
        self.params: dict[str, np.ndarray] = {}
        self.grads: dict[str, np.ndarray] = {}
        self.buffers: dict[str, np.ndarray] = {}

    def forward(self, x, train=False):
        raise NotImplementedError

    def backward(self, dy):
        raise NotImplementedError

    def spec(self) -> dict:
        return {"kind": self.kind}


class Conv2D(Layer):
    """'Same'-padded 2-D convolution over channels-last input."""

    kind = "conv2d"

    def __init__(self, in_ch, out_ch, kernel=(3, 2), rng=None, dtype=np.float32):
        super().__init__()
        self.in_ch, self.out_ch = in_ch, out_ch
        self.kh, self.kw = kernel
        rng = rng if rng is not None else np.random.default_rng(0)
        fan_in = self.kh * self.kw * in_ch
        lim = np.sqrt(3.0 / fan_in)
        self.params["w"] = rng.uniform(-lim, lim, (self.kh, self.kw, in_ch, out_ch)).astype(dtype)
        self.params["b"] = np.zeros(out_ch, dtype=dtype)

    def forward(self, x, train=False):
        B, H, W, C = x.shape
        if C != self.in_ch:
            raise ValueError(f"conv2d expects {self.in_ch} input channels, got {C}")
        cols = kernels.im2col(x, self.kh, self.kw)
        w2 = self.params["w"].reshape(-1, self.out_ch)
        y = cols @ w2
        y += self.params["b"]
        if train:
            self._cols, self._shape = cols, x.shape
        return y.reshape(B, H, W, self.out_ch)

    def backward(self, dy):
        dy2 = dy.reshape(-1, self.out_ch)
        self.grads["w"] = (self._cols.T @ dy2).reshape(self.params["w"].shape)
        self.grads["b"] = dy2.sum(axis=0)
        dcols = dy2 @ self.params["w"].reshape(-1, self.out_ch).T
        self._cols = None
        return kernels.col2im(dcols, self._shape, self.kh, self.kw)

    def spec(self):
        return {"kind": self.kind, "in_ch": self.in_ch, "filters": self.out_ch,
                "kernel": [self.kh, self.kw]}


class BatchNorm(Layer):
    """Per-channel batch normalisation with exponential running statistics."""

    kind = "batch_norm"

    def __init__(self, channels, momentum=0.9, eps=1e-3, dtype=np.float32):
        super().__init__()
        self.channels, self.momentum, self.eps = channels, momentum, eps
        self.params["gamma"] = np.ones(channels, dtype=dtype)
        self.params["beta"] = np.zeros(channels, dtype=dtype)
        self.buffers["running_mean"] = np.zeros(channels, dtype=dtype)
        self.buffers["running_var"] = np.ones(channels, dtype=dtype)

    def _update_running(self, mean, var):
        m = self.momentum
        rm, rv = self.buffers["running_mean"], self.buffers["running_var"]
        rm *= m
        rm += (1 - m) * mean.astype(rm.dtype)
        rv *= m
        rv += (1 - m) * var.astype(rv.dtype)

    def forward(self, x, train=False):
        g, b = self.params["gamma"], self.params["beta"]
        if not train:
            inv = 1.0 / np.sqrt(self.buffers["running_var"] + self.eps)
            return ((x - self.buffers["running_mean"]) * (g * inv) + b).astype(x.dtype, copy=False)
        axes = tuple(range(x.ndim - 1))
        mean = x.mean(axis=axes)
        var = x.var(axis=axes)
        xhat = (x - mean) / np.sqrt(var + self.eps)
        self._xhat, self._var = xhat, var
        self._update_running(mean, var)
        return (xhat * g + b).astype(x.dtype, copy=False)

    def backward(self, dy):
        C = self.channels
        dy2 = dy.reshape(-1, C)
        xh2 = self._xhat.reshape(-1, C)
        m = dy2.shape[0]
        self.grads["gamma"] = (dy2 * xh2).sum(axis=0)
        self.grads["beta"] = dy2.sum(axis=0)
        inv = 1.0 / np.sqrt(self._var + self.eps)
        dx = (self.params["gamma"] * inv / m) * (m * dy - self.grads["beta"] - self._xhat * self.grads["gamma"])
        return dx.astype(dy.dtype, copy=False)

    def spec(self):
        return {"kind": self.kind, "channels": self.channels, "momentum": self.momentum, "eps": self.eps}


class BatchNormLeakyReLU(BatchNorm):
    """BN followed by leaky ReLU, run through the fused kernels."""

    kind = "batch_norm+leaky_relu"

    def __init__(self, channels, slope=0.01, momentum=0.9, eps=1e-3, dtype=np.float32):
        super().__init__(channels, momentum, eps, dtype)
        self.slope = slope

    def forward(self, x, train=False):
        g, b = self.params["gamma"], self.params["beta"]
        if not train:
            return kernels.bn_act_apply(x, self.buffers["running_mean"], self.buffers["running_var"],
                                        g, b, self.eps, self.slope)
        y, xhat, mean, var = kernels.bn_act_forward(x, g, b, self.eps, self.slope)
        self._y, self._xhat, self._var = y, xhat, var
        self._update_running(mean, var)
        return y

    def backward(self, dy):
        dx, dg, db = kernels.bn_act_backward(dy, self._y, self._xhat, self.params["gamma"],
                                             self._var, self.eps, self.slope)
        self.grads["gamma"], self.grads["beta"] = dg, db
        self._y = self._xhat = None
        return dx

    def spec(self):
        return {**super().spec(), "slope": self.slope}


class LeakyReLU(Layer):
    kind = "leaky_relu"

    def __init__(self, slope=0.01):
        super().__init__()
        self.slope = slope

    def forward(self, x, train=False):
        if train:
            self._x = x
        return kernels.leaky_relu(x, self.slope)

    def backward(self, dy):
        return kernels.leaky_relu_backward(dy, self._x, self.slope)

    def spec(self):
        return {"kind": self.kind, "slope": self.slope}


class ReLU(Layer):
    kind = "relu"

    def forward(self, x, train=False):
        if train:
            self._mask = x > 0
        return np.maximum(x, 0)

    def backward(self, dy):
        return dy * self._mask


class Dropout(Layer):
    """Inverted dropout: kept units are scaled by 1/(1-p) so eval mode is the identity."""

    kind = "dropout"

    def __init__(self, p=0.4, rng=None):
        super().__init__()
        if not 0 <= p < 1:
            raise ValueError("dropout probability must be in [0, 1)")
        self.p = p
        self.rng = rng if rng is not None else np.random.default_rng(0)

    def forward(self, x, train=False):
        if not train or self.p == 0:
            self._mask = None
            return x
        keep = self.rng.random(x.shape) >= self.p
        self._mask = keep.astype(x.dtype) / (1.0 - self.p)
        return x * self._mask

    def backward(self, dy):
        return dy if self._mask is None else dy * self._mask

    def spec(self):
        return {"kind": self.kind, "p": self.p}


class Flatten(Layer):
    kind = "flatten"

    def forward(self, x, train=False):
        self._shape = x.shape
        return x.reshape(x.shape[0], -1)

    def backward(self, dy):
        return dy.reshape(self._shape)


class Dense(Layer):
    kind = "dense"

    def __init__(self, n_in, n_out, rng=None, dtype=np.float32):
        super().__init__()
        self.n_in, self.n_out = n_in, n_out
        rng = rng if rng is not None else np.random.default_rng(0)
        lim = np.sqrt(3.0 / n_in)
        self.params["w"] = rng.uniform(-lim, lim, (n_in, n_out)).astype(dtype)
        self.params["b"] = np.zeros(n_out, dtype=dtype)

    def forward(self, x, train=False):
        if train:
            self._x = x
        return x @ self.params["w"] + self.params["b"]

    def backward(self, dy):
        self.grads["w"] = self._x.T @ dy
        self.grads["b"] = dy.sum(axis=0)
        return dy @ self.params["w"].T

    def spec(self):
        return {"kind": self.kind, "n_in": self.n_in, "units": self.n_out}


class Add(Layer):
    """Residual join: ``y = a + b``; the gradient flows unchanged to both inputs."""

    kind = "add_residual"

    def forward(self, a, b, train=False):
        if a.shape != b.shape:
            raise ValueError(f"residual add shape mismatch {a.shape} vs {b.shape}")
        return a + b

    def backward(self, dy):
        return dy, dy


def softmax(logits):
    z = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def log_softmax(logits):
    z = logits - logits.max(axis=-1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=-1, keepdims=True))


class SoftmaxCrossEntropy(Layer):
    """Softmax output with mean categorical cross-entropy; gradient is ``(p - t)/B``."""

    kind = "softmax"

    def forward(self, logits, train=False):
        self._p = softmax(logits)
        return self._p

    def loss(self, logits, target):
        """``target`` is either class indices (B,) or one-hot (B, K)."""
        target = np.asarray(target)
        if target.ndim == 1:
            onehot = np.zeros(logits.shape, dtype=logits.dtype)
            onehot[np.arange(len(target)), target] = 1
            target = onehot
        self._p = softmax(logits)
        self._t = target
        return float(-(target * log_softmax(logits)).sum() / len(logits))

    def backward(self, dy=None):
        return ((self._p - self._t) / len(self._p)).astype(self._p.dtype, copy=False)
