"""Layers with hand-written backward passes.

Activations use NHWC layout (batch, height, width, channels); dense layers take
``(N, features)``. Every layer caches what its backward needs during
``forward`` and exposes ``params`` and ``grads`` dicts with matching keys.
"""

import numpy as np
from numpy.lib.stride_tricks import as_strided

from ..errors import InvalidArgumentError, StateError

BN_EPS = 1e-5
BN_MOMENTUM = 0.9


def he_uniform(rng, shape, fan_in):
    limit = np.sqrt(6.0 / fan_in)
    return rng.uniform(-limit, limit, size=shape)


class Layer:
    kind = "layer"

    def __init__(self):
        self.params = {}
        self.grads = {}
        self.buffers = {}
        self._cache = None

    def forward(self, x, train=True):
        raise NotImplementedError

    def backward(self, g):
        raise NotImplementedError

    def _take_cache(self):
        if self._cache is None:
            raise StateError(f"{self.kind}: backward called before forward")
        return self._cache

    def zero_grad(self):
        for k, v in self.params.items():
            self.grads[k] = np.zeros_like(v)

    def astype(self, dtype):
        for d in (self.params, self.grads, self.buffers):
            for k in d:
                d[k] = d[k].astype(dtype)
        return self

    def children(self):
        return []

    def named_layers(self, prefix=""):
        yield prefix, self
        for name, child in self.children():
            yield from child.named_layers(f"{prefix}.{name}" if prefix else name)


class Dense(Layer):
    kind = "dense"

    def __init__(self, n_in, n_out, rng):
        super().__init__()
        self.params = {"W": he_uniform(rng, (n_in, n_out), n_in), "b": np.zeros(n_out)}
        self.zero_grad()

    def forward(self, x, train=True):
        W = self.params["W"]
        if x.ndim != 2 or x.shape[1] != W.shape[0]:
            raise InvalidArgumentError(f"dense expects (N, {W.shape[0]}), got {x.shape}")
        self._cache = x
        return x @ W + self.params["b"]

    def backward(self, g):
        x = self._take_cache()
        self.grads["W"] = x.T @ g
        self.grads["b"] = g.sum(axis=0)
        return g @ self.params["W"].T


def _same_padding(k):
    return (k - 1) // 2, k - 1 - (k - 1) // 2


class Conv2d(Layer):
    """Zero-padded convolution; output size is ``ceil(H / stride)``."""

    kind = "conv2d"

    def __init__(self, c_in, c_out, k, stride, rng, bias=True):
        super().__init__()
        self.k, self.stride, self.c_in, self.c_out = k, stride, c_in, c_out
        fan_in = c_in * k * k
        self.params = {"W": he_uniform(rng, (k * k * c_in, c_out), fan_in)}
        if bias:
            self.params["b"] = np.zeros(c_out)
        self.zero_grad()

    def _im2col(self, x):
        n, h, w, c = x.shape
        k, s = self.k, self.stride
        lo, hi = _same_padding(k)
        xp = np.pad(x, ((0, 0), (lo, hi), (lo, hi), (0, 0)))
        ho = (xp.shape[1] - k) // s + 1
        wo = (xp.shape[2] - k) // s + 1
        sn, sh, sw, sc = xp.strides
        win = as_strided(xp, (n, ho, wo, k, k, c), (sn, sh * s, sw * s, sh, sw, sc), writeable=False)
        return win.reshape(n * ho * wo, k * k * c), xp.shape, (n, ho, wo)

    def forward(self, x, train=True):
        if x.ndim != 4 or x.shape[3] != self.c_in:
            raise InvalidArgumentError(
                f"conv2d expects (N, H, W, {self.c_in}), got {x.shape}"
            )
        cols, padded, (n, ho, wo) = self._im2col(x)
        out = cols @ self.params["W"]
        if "b" in self.params:
            out += self.params["b"]
        self._cache = (cols, padded, x.shape, (n, ho, wo))
        return out.reshape(n, ho, wo, self.c_out)

    def backward(self, g):
        cols, padded, xshape, (n, ho, wo) = self._take_cache()
        gf = g.reshape(-1, self.c_out)
        self.grads["W"] = cols.T @ gf
        if "b" in self.params:
            self.grads["b"] = gf.sum(axis=0)
        dcols = (gf @ self.params["W"].T).reshape(n, ho, wo, self.k, self.k, self.c_in)
        dxp = np.zeros(padded, dtype=g.dtype)
        s = self.stride
        for i in range(self.k):
            for j in range(self.k):
                dxp[:, i : i + s * (ho - 1) + 1 : s, j : j + s * (wo - 1) + 1 : s] += dcols[:, :, :, i, j]
        lo, _ = _same_padding(self.k)
        return dxp[:, lo : lo + xshape[1], lo : lo + xshape[2]]


class Upsample2x(Layer):
    kind = "upsample2x"

    def forward(self, x, train=True):
        self._cache = x.shape
        return x.repeat(2, axis=1).repeat(2, axis=2)

    def backward(self, g):
        n, h, w, c = self._take_cache()
        return g.reshape(n, h, 2, w, 2, c).sum(axis=(2, 4))


class ELU(Layer):
    """ELU with alpha = 1."""

    kind = "elu"

    def forward(self, x, train=True):
        neg = np.expm1(np.minimum(x, 0.0))
        out = np.where(x > 0, x, neg)
        self._cache = (x, neg)
        return out

    def backward(self, g):
        x, neg = self._take_cache()
        return g * np.where(x > 0, 1.0, neg + 1.0)


class BatchNorm(Layer):
    """Per-channel normalization over every axis but the last."""

    kind = "batchnorm"

    def __init__(self, channels):
        super().__init__()
        self.params = {"gamma": np.ones(channels), "beta": np.zeros(channels)}
        self.buffers = {"mean": np.zeros(channels), "var": np.ones(channels)}
        self.zero_grad()

    def forward(self, x, train=True):
        axes = tuple(range(x.ndim - 1))
        if x.shape[-1] != self.params["gamma"].shape[0]:
            raise InvalidArgumentError(
                f"batchnorm expects {self.params['gamma'].shape[0]} channels, got {x.shape}"
            )
        if train:
            mean = x.mean(axis=axes)
            var = x.var(axis=axes)
            m = BN_MOMENTUM
            self.buffers["mean"] = m * self.buffers["mean"] + (1 - m) * mean
            self.buffers["var"] = m * self.buffers["var"] + (1 - m) * var
        else:
            mean, var = self.buffers["mean"], self.buffers["var"]
        inv = 1.0 / np.sqrt(var + BN_EPS)
        xhat = (x - mean) * inv
        self._cache = (xhat, inv, train, axes)
        return xhat * self.params["gamma"] + self.params["beta"]

    def backward(self, g):
        xhat, inv, train, axes = self._take_cache()
        gamma = self.params["gamma"]
        self.grads["gamma"] = (g * xhat).sum(axis=axes)
        self.grads["beta"] = g.sum(axis=axes)
        gx = g * gamma
        if not train:
            return gx * inv
        return inv * (gx - gx.mean(axis=axes) - xhat * (gx * xhat).mean(axis=axes))


class Flatten(Layer):
    kind = "flatten"

    def forward(self, x, train=True):
        self._cache = x.shape
        return x.reshape(x.shape[0], -1)

    def backward(self, g):
        return g.reshape(self._take_cache())


class Reshape(Layer):
    kind = "reshape"

    def __init__(self, shape):
        super().__init__()
        self.shape = tuple(shape)

    def forward(self, x, train=True):
        self._cache = x.shape
        return x.reshape((x.shape[0],) + self.shape)

    def backward(self, g):
        return g.reshape(self._take_cache())


class Sequential(Layer):
    kind = "sequential"

    def __init__(self, layers):
        super().__init__()
        self.layers = list(layers)

    def children(self):
        return [(str(i), layer) for i, layer in enumerate(self.layers)]

    def forward(self, x, train=True):
        for layer in self.layers:
            x = layer.forward(x, train)
        return x

    def backward(self, g):
        for layer in reversed(self.layers):
            g = layer.backward(g)
        return g

    def zero_grad(self):
        for layer in self.layers:
            layer.zero_grad()

    def astype(self, dtype):
        for layer in self.layers:
            layer.astype(dtype)
        return self


class ResidualBlock(Sequential):
    """conv-bn-elu-conv-bn plus identity, followed by ELU."""

    kind = "residual"

    def __init__(self, channels, rng, k=3):
        super().__init__(
            [
                Conv2d(channels, channels, k, 1, rng, bias=False),
                BatchNorm(channels),
                ELU(),
                Conv2d(channels, channels, k, 1, rng, bias=False),
                BatchNorm(channels),
            ]
        )
        self.out_act = ELU()

    def children(self):
        return super().children() + [("act", self.out_act)]

    def forward(self, x, train=True):
        return self.out_act.forward(super().forward(x, train) + x, train)

    def backward(self, g):
        g = self.out_act.backward(g)
        return super().backward(g) + g


class UpsampleConv(Sequential):
    """Nearest 2x resize followed by a 3x3 convolution."""

    kind = "upsample_conv"

    def __init__(self, c_in, c_out, rng, bias=True):
        super().__init__([Upsample2x(), Conv2d(c_in, c_out, 3, 1, rng, bias=bias)])


def iter_params(module):
    """Yield ``(qualified_name, layer, key)`` for every parameter."""
    for name, layer in module.named_layers():
        for key in layer.params:
            yield (f"{name}.{key}" if name else key), layer, key


def iter_buffers(module):
    for name, layer in module.named_layers():
        for key in layer.buffers:
            yield (f"{name}.{key}" if name else key), layer, key


def param_count(module):
    return sum(layer.params[key].size for _, layer, key in iter_params(module))
