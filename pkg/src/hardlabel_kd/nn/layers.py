"""Layers.

Spatial activations are held as ``(C, N, H, W)`` so that im2col copies run
over contiguous rows.  Shapes in specs and ``output_shape`` stay ``(C, H, W)``;
the network moves the batch axis once on the way in and ``Flatten`` moves it
back.
"""
import numpy as np


class Layer:
    """A layer owns views into the network's flat parameter and gradient vectors."""

    def param_shapes(self, input_shape):
        return []

    def output_shape(self, input_shape):
        return input_shape

    def bind(self, params, grads):
        """Receive parameter and gradient views in ``param_shapes`` order."""

    def init(self, rng, params):
        pass

    def forward(self, x, train=False):
        raise NotImplementedError

    def backward(self, grad):
        raise NotImplementedError


def _out_size(size, k, stride, pad):
    return (size + 2 * pad - k) // stride + 1


def _pad_hw(x, pad, value=0.0):
    return np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)), constant_values=value)


def _window(x, i, j, s, ho, wo):
    return x[:, :, i : i + s * ho : s, j : j + s * wo : s]


def _unpad(dx, pad):
    if pad:
        return dx[:, :, pad:-pad, pad:-pad]
    return dx


class Conv2D(Layer):
    def __init__(self, out_channels, kernel, stride=1, padding=0):
        self.out_channels = out_channels
        self.k = kernel
        self.stride = stride
        self.pad = padding

    def param_shapes(self, input_shape):
        return [(self.out_channels, input_shape[0], self.k, self.k), (self.out_channels,)]

    def output_shape(self, input_shape):
        c, h, w = input_shape
        return (self.out_channels, _out_size(h, self.k, self.stride, self.pad), _out_size(w, self.k, self.stride, self.pad))

    def bind(self, params, grads):
        (self.W, self.b), (self.dW, self.db) = params, grads

    def init(self, rng, params):
        W, b = params
        limit = np.sqrt(6.0 / (W.shape[1] * self.k * self.k))
        W[...] = rng.uniform(-limit, limit, size=W.shape)
        b[...] = 0.0

    def forward(self, x, train=False):
        if self.pad:
            x = _pad_hw(x, self.pad)
        c, n, hp, wp = x.shape
        k, s = self.k, self.stride
        ho, wo = (hp - k) // s + 1, (wp - k) // s + 1
        # im2col with rows ordered (c, i, j) to match W.reshape(out, -1)
        cols = np.empty((c, k, k, n, ho, wo), dtype=x.dtype)
        for i in range(k):
            for j in range(k):
                cols[:, i, j] = _window(x, i, j, s, ho, wo)
        cols = cols.reshape(c * k * k, -1)
        out = self.W.reshape(self.out_channels, -1) @ cols
        out += self.b[:, None]
        if train:
            self._cache = (cols, x.shape, ho, wo)
        return out.reshape(self.out_channels, n, ho, wo)

    def backward(self, grad):
        cols, padded_shape, ho, wo = self._cache
        c, n = padded_shape[:2]
        k, s = self.k, self.stride
        g = grad.reshape(self.out_channels, -1)
        self.dW[...] = (g @ cols.T).reshape(self.dW.shape)
        self.db[...] = g.sum(axis=1)
        dcols = (self.W.reshape(self.out_channels, -1).T @ g).reshape(c, k, k, n, ho, wo)
        dx = np.zeros(padded_shape, dtype=grad.dtype)
        for i in range(k):
            for j in range(k):
                _window(dx, i, j, s, ho, wo)[...] += dcols[:, i, j]
        return _unpad(dx, self.pad)


class MaxPool2D(Layer):
    def __init__(self, kernel, stride=None, padding=0):
        self.k = kernel
        self.stride = stride or kernel
        self.pad = padding

    def output_shape(self, input_shape):
        c, h, w = input_shape
        return (c, _out_size(h, self.k, self.stride, self.pad), _out_size(w, self.k, self.stride, self.pad))

    def forward(self, x, train=False):
        if self.pad:
            x = _pad_hw(x, self.pad, -np.inf)
        k, s = self.k, self.stride
        ho, wo = (x.shape[2] - k) // s + 1, (x.shape[3] - k) // s + 1
        out = _window(x, 0, 0, s, ho, wo).copy()
        # first maximum in row-major window order wins ties
        idx = np.zeros(out.shape, dtype=np.int8) if train else None
        for q in range(1, k * k):
            v = _window(x, q // k, q % k, s, ho, wo)
            if train:
                better = v > out
                np.copyto(out, v, where=better)
                idx[better] = q
            else:
                np.maximum(out, v, out=out)
        if train:
            self._cache = (idx, x.shape, ho, wo)
        return out

    def backward(self, grad):
        idx, padded_shape, ho, wo = self._cache
        dx = np.zeros(padded_shape, dtype=grad.dtype)
        k, s = self.k, self.stride
        for q in range(k * k):
            _window(dx, q // k, q % k, s, ho, wo)[...] += np.where(idx == q, grad, 0)
        return _unpad(dx, self.pad)


class Dense(Layer):
    def __init__(self, width):
        self.width = width

    def param_shapes(self, input_shape):
        return [(int(np.prod(input_shape)), self.width), (self.width,)]

    def output_shape(self, input_shape):
        return (self.width,)

    def bind(self, params, grads):
        (self.W, self.b), (self.dW, self.db) = params, grads

    def init(self, rng, params):
        W, b = params
        limit = np.sqrt(6.0 / W.shape[0])
        W[...] = rng.uniform(-limit, limit, size=W.shape)
        b[...] = 0.0

    def forward(self, x, train=False):
        if train:
            self._shape = x.shape
        x = _flatten(x) if x.ndim == 4 else x.reshape(len(x), -1)
        if train:
            self._x = x
        return x @ self.W + self.b

    def backward(self, grad):
        self.dW[...] = self._x.T @ grad
        self.db[...] = grad.sum(axis=0)
        return _unflatten(grad @ self.W.T, self._shape)


class ReLU(Layer):
    def forward(self, x, train=False):
        if train:
            self._mask = x > 0
        return np.maximum(x, 0)

    def backward(self, grad):
        return grad * self._mask


def _flatten(x):
    # (C, N, H, W) -> (N, C*H*W) in channel-major feature order
    return x.transpose(1, 0, 2, 3).reshape(x.shape[1], -1)


def _unflatten(grad, shape):
    if len(shape) == 4:
        c, n, h, w = shape
        return np.ascontiguousarray(grad.reshape(n, c, h, w).transpose(1, 0, 2, 3))
    return grad.reshape(shape)


class Flatten(Layer):
    def output_shape(self, input_shape):
        return (int(np.prod(input_shape)),)

    def forward(self, x, train=False):
        if train:
            self._shape = x.shape
        return _flatten(x) if x.ndim == 4 else x.reshape(len(x), -1)

    def backward(self, grad):
        return _unflatten(grad, self._shape)


def build_layer(desc):
    kind = desc["type"]
    args = {k: v for k, v in desc.items() if k != "type"}
    try:
        cls = {"conv": Conv2D, "maxpool": MaxPool2D, "dense": Dense, "relu": ReLU, "flatten": Flatten}[kind]
    except KeyError:
        raise ValueError(f"unknown layer type {kind!r}") from None
    return cls(**args)
