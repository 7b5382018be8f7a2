"""Primitive operators: exact forward passes and analytic backward passes.

Each layer caches what its backward needs during forward; backward consumes
the cache (calling it twice, or before forward, is a StateError). Parameter
gradients are exposed through gradients() after backward.
"""

import numpy as np

from . import tensor
from .errors import ShapeError, StateError


class Layer:
    kind = "layer"

    def __init__(self):
        self._cache = None

    def forward(self, x, train=False):
        raise NotImplementedError

    def backward(self, dout):
        raise NotImplementedError

    def parameters(self):
        return {}

    def gradients(self):
        return {}

    def buffers(self):
        return {}

    def _take_cache(self):
        if self._cache is None:
            raise StateError(f"{self.kind}: backward called before forward")
        cache, self._cache = self._cache, None
        return cache


class Conv2d(Layer):
    """Grouped cross-correlation lowered through im2col + one batched matmul.

    groups == cin == cout is depthwise, k == 1 with groups == 1 is pointwise.
    """

    kind = "conv2d"

    def __init__(self, cin, cout, k, stride=1, pad=0, groups=1, bias=True,
                 rng=None, dtype=tensor.DEFAULT_DTYPE):
        super().__init__()
        if cin % groups != 0 or cout % groups != 0:
            raise ShapeError(f"channels ({cin}->{cout}) not divisible by groups={groups}")
        self.cin, self.cout, self.k = cin, cout, k
        self.stride, self.pad, self.groups = stride, pad, groups
        rng = rng if rng is not None else np.random.default_rng(0)
        fan_in = (cin // groups) * k * k
        self.weight = (rng.standard_normal((cout, cin // groups, k, k))
                       * np.sqrt(2.0 / fan_in)).astype(dtype)
        self.bias = np.zeros(cout, dtype=dtype) if bias else None
        self.dweight = None
        self.dbias = None

    def forward(self, x, train=False):
        n, c, h, w = x.shape
        if c != self.cin:
            raise ShapeError(f"conv2d expects {self.cin} channels, got {c}")
        cols = tensor.im2col(x, self.k, self.k, self.stride, self.pad)
        ho = tensor.conv_out_size(h, self.k, self.stride, self.pad)
        wo = tensor.conv_out_size(w, self.k, self.stride, self.pad)
        g = self.groups
        w3 = self.weight.reshape(g, self.cout // g, -1)
        cols3 = cols.reshape(g, -1, n * ho * wo)
        out = np.matmul(w3, cols3).reshape(self.cout, n, ho, wo).transpose(1, 0, 2, 3)
        out = np.ascontiguousarray(out)
        if self.bias is not None:
            out += self.bias[None, :, None, None]
        self._cache = (x.shape, cols)
        return tensor.assert_finite(out, "conv2d")

    def backward(self, dout):
        (n, c, h, w), cols = self._take_cache()
        g = self.groups
        m = dout.shape[0] * dout.shape[2] * dout.shape[3]
        dout3 = dout.transpose(1, 0, 2, 3).reshape(g, self.cout // g, m)
        cols3 = cols.reshape(g, -1, m)
        self.dweight = np.matmul(dout3, cols3.transpose(0, 2, 1)).reshape(self.weight.shape)
        if self.bias is not None:
            self.dbias = dout.sum(axis=(0, 2, 3))
        w3 = self.weight.reshape(g, self.cout // g, -1)
        dcols = np.matmul(w3.transpose(0, 2, 1), dout3).reshape(c * self.k * self.k, m)
        return tensor.col2im(dcols, n, c, h, w, self.k, self.k, self.stride, self.pad)

    def parameters(self):
        p = {"weight": self.weight}
        if self.bias is not None:
            p["bias"] = self.bias
        return p

    def gradients(self):
        g = {"weight": self.dweight}
        if self.bias is not None:
            g["bias"] = self.dbias
        return g


class MaxPool2d(Layer):
    """Max pooling with kernel == stride; odd trailing rows/cols are dropped.

    last_argmax holds, per output, the winning flat index within its window
    (row-major, first occurrence on ties), which routes the backward pass.
    """

    kind = "maxpool2d"

    def __init__(self, k=2, stride=2):
        super().__init__()
        if k != stride:
            raise ShapeError("only kernel == stride pooling is supported")
        self.k = k
        self.last_argmax = None

    def forward(self, x, train=False):
        n, c, h, w = x.shape
        k = self.k
        if h < k or w < k:
            raise ShapeError(f"pool kernel {k} larger than input {h}x{w}")
        ho, wo = h // k, w // k
        win = (x[:, :, :ho * k, :wo * k]
               .reshape(n, c, ho, k, wo, k)
               .transpose(0, 1, 2, 4, 3, 5)
               .reshape(n, c, ho, wo, k * k))
        arg = win.argmax(axis=-1)
        self.last_argmax = arg
        self._cache = (arg, x.shape)
        return win.max(axis=-1)

    def backward(self, dout):
        arg, (n, c, h, w) = self._take_cache()
        k = self.k
        ho, wo = h // k, w // k
        onehot = arg[..., None] == np.arange(k * k)
        dwin = dout[..., None] * onehot.astype(dout.dtype)
        dx = np.zeros((n, c, h, w), dtype=dout.dtype)
        dx[:, :, :ho * k, :wo * k] = (dwin.reshape(n, c, ho, wo, k, k)
                                      .transpose(0, 1, 2, 4, 3, 5)
                                      .reshape(n, c, ho * k, wo * k))
        return dx


class BatchNorm2d(Layer):
    """Per-channel batch normalization over (N, H, W) with running statistics.

    Train mode normalizes by biased batch moments and folds them into the
    running buffers; eval mode is a pure affine map from the running stats.
    """

    kind = "batchnorm2d"

    def __init__(self, c, eps=1e-5, momentum=0.1, dtype=tensor.DEFAULT_DTYPE):
        super().__init__()
        self.c = c
        self.eps = eps
        self.momentum = momentum
        self.gamma = np.ones(c, dtype=dtype)
        self.beta = np.zeros(c, dtype=dtype)
        self.running_mean = np.zeros(c, dtype=dtype)
        self.running_var = np.ones(c, dtype=dtype)
        self.dgamma = None
        self.dbeta = None

    def forward(self, x, train=False):
        if x.ndim != 4 or x.shape[1] != self.c:
            raise ShapeError(f"batchnorm expects [N,{self.c},H,W], got {x.shape}")
        n, _, h, w = x.shape
        m = n * h * w
        if train:
            if m == 1:
                raise ShapeError("degenerate batch: N*H*W == 1 in train mode")
            mu = x.mean(axis=(0, 2, 3))
            var = x.var(axis=(0, 2, 3))
            mom = self.momentum
            self.running_mean = ((1 - mom) * self.running_mean + mom * mu).astype(x.dtype)
            self.running_var = ((1 - mom) * self.running_var + mom * var).astype(x.dtype)
        else:
            mu = self.running_mean
            var = self.running_var
        ivar = 1.0 / np.sqrt(var + self.eps)
        xhat = (x - mu[None, :, None, None]) * ivar[None, :, None, None]
        self._cache = (xhat, ivar, train, m)
        return self.gamma[None, :, None, None] * xhat + self.beta[None, :, None, None]

    def backward(self, dout):
        xhat, ivar, train, m = self._take_cache()
        self.dgamma = (dout * xhat).sum(axis=(0, 2, 3))
        self.dbeta = dout.sum(axis=(0, 2, 3))
        dxhat = dout * self.gamma[None, :, None, None]
        if not train:
            return dxhat * ivar[None, :, None, None]
        # Differentiates through the batch mean and variance.
        s1 = dxhat.sum(axis=(0, 2, 3), keepdims=True)
        s2 = (dxhat * xhat).sum(axis=(0, 2, 3), keepdims=True)
        return (ivar[None, :, None, None] / m) * (m * dxhat - s1 - xhat * s2)

    def parameters(self):
        return {"gamma": self.gamma, "beta": self.beta}

    def gradients(self):
        return {"gamma": self.dgamma, "beta": self.dbeta}

    def buffers(self):
        return {"running_mean": self.running_mean, "running_var": self.running_var}


class ReLU(Layer):
    kind = "relu"

    def forward(self, x, train=False):
        self._cache = x > 0
        return np.maximum(x, 0)

    def backward(self, dout):
        pos = self._take_cache()
        return dout * pos


class HardSwish(Layer):
    """x * clip(x + 3, 0, 6) / 6."""

    kind = "hardswish"

    def forward(self, x, train=False):
        self._cache = x
        return x * np.clip(x + 3.0, 0.0, 6.0) / 6.0

    def backward(self, dout):
        x = self._take_cache()
        d = np.where(x >= 3.0, 1.0, (2.0 * x + 3.0) / 6.0)
        d = np.where(x <= -3.0, 0.0, d).astype(dout.dtype)
        return dout * d


class Sigmoid(Layer):
    kind = "sigmoid"

    def forward(self, x, train=False):
        s = sigmoid(x)
        self._cache = s
        return s

    def backward(self, dout):
        s = self._take_cache()
        return dout * s * (1.0 - s)


def sigmoid(x):
    # Split by sign so exp never overflows.
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


class GlobalAvgPool(Layer):
    kind = "global_avgpool"

    def forward(self, x, train=False):
        self._cache = x.shape
        return x.mean(axis=(2, 3), keepdims=True)

    def backward(self, dout):
        n, c, h, w = self._take_cache()
        return np.broadcast_to(dout / (h * w), (n, c, h, w)).astype(dout.dtype)


class Linear(Layer):
    """y = x W^T + b with weight [K, F]; accepts [N,F] or [N,C,1,1] input."""

    kind = "linear"

    def __init__(self, fin, fout, bias=True, rng=None, dtype=tensor.DEFAULT_DTYPE):
        super().__init__()
        self.fin, self.fout = fin, fout
        rng = rng if rng is not None else np.random.default_rng(0)
        self.weight = (rng.standard_normal((fout, fin)) * np.sqrt(2.0 / fin)).astype(dtype)
        self.bias = np.zeros(fout, dtype=dtype) if bias else None
        self.dweight = None
        self.dbias = None

    def forward(self, x, train=False):
        shape = x.shape
        x2 = x.reshape(shape[0], -1)
        if x2.shape[1] != self.fin:
            raise ShapeError(f"linear expects {self.fin} features, got {x2.shape[1]}")
        self._cache = (x2, shape)
        y = x2 @ self.weight.T
        if self.bias is not None:
            y += self.bias[None, :]
        return y

    def backward(self, dout):
        x2, shape = self._take_cache()
        self.dweight = dout.T @ x2
        if self.bias is not None:
            self.dbias = dout.sum(axis=0)
        return (dout @ self.weight).reshape(shape)

    def parameters(self):
        p = {"weight": self.weight}
        if self.bias is not None:
            p["bias"] = self.bias
        return p

    def gradients(self):
        g = {"weight": self.dweight}
        if self.bias is not None:
            g["bias"] = self.dbias
        return g


class Dropout(Layer):
    """Inverted dropout: survivors are scaled by 1/(1-p); eval is identity."""

    kind = "dropout"

    def __init__(self, p=0.2, rng=None):
        super().__init__()
        if not 0.0 <= p < 1.0:
            raise ValueError(f"dropout probability must be in [0, 1), got {p}")
        self.p = p
        self.rng = rng if rng is not None else np.random.default_rng(0)

    def forward(self, x, train=False):
        if not train or self.p == 0.0:
            self._cache = (None,)
            return x
        mask = (self.rng.random(x.shape) >= self.p).astype(x.dtype)
        scale = 1.0 / (1.0 - self.p)
        self._cache = (mask,)
        return x * mask * scale

    def backward(self, dout):
        (mask,) = self._take_cache()
        if mask is None:
            return dout
        return dout * mask / (1.0 - self.p)


class Identity(Layer):
    kind = "identity"

    def forward(self, x, train=False):
        self._cache = ()
        return x

    def backward(self, dout):
        self._take_cache()
        return dout


def softmax_cross_entropy(logits, labels):
    """Mean negative log-likelihood and the softmax rows it came from.

    Stable via max subtraction; labels are integer class indices.
    """
    n, k = logits.shape
    labels = np.asarray(labels)
    if labels.shape != (n,):
        raise ShapeError(f"expected {n} labels, got shape {labels.shape}")
    if labels.min() < 0 or labels.max() >= k:
        raise ValueError(f"label out of range [0, {k})")
    shifted = logits - logits.max(axis=1, keepdims=True)
    expo = np.exp(shifted)
    denom = expo.sum(axis=1, keepdims=True)
    probs = expo / denom
    logp = shifted - np.log(denom)
    loss = float(-logp[np.arange(n), labels].mean())
    return loss, probs


def softmax_cross_entropy_backward(probs, labels):
    """d(mean NLL)/d(logits) given the forward's softmax rows."""
    n = probs.shape[0]
    d = probs.copy()
    d[np.arange(n), labels] -= 1.0
    return d / n
