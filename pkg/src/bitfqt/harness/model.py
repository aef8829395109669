"""Desk-scale models: full-precision first/last layers around binary cores."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..layers import BinaryConv, BinaryLinear, GradMode, unfold, fold, conv_out_size


@dataclass
class DenseLinear:
    """Full-precision affine layer; ``weight`` is ``in x out``."""

    weight: np.ndarray
    bias: np.ndarray
    _x: np.ndarray | None = field(default=None, repr=False)

    @classmethod
    def create(cls, in_features, out_features, rng):
        w = rng.standard_normal((in_features, out_features)) / np.sqrt(in_features)
        return cls(w, np.zeros(out_features))

    def forward(self, x):
        self._x = x
        return x @ self.weight + self.bias

    def backward(self, dy, rng=None):
        return dy @ self.weight.T, [self._x.T @ dy, dy.sum(axis=0)]

    def params(self):
        return [self.weight, self.bias]


@dataclass
class DenseConv:
    """Full-precision 2-D convolution via unfold; ``weight`` is ``(D, C, k, k)``."""

    weight: np.ndarray
    bias: np.ndarray
    pad: int = 0
    _cache: tuple | None = field(default=None, repr=False)

    @classmethod
    def create(cls, in_ch, out_ch, k, rng, pad=0):
        w = rng.standard_normal((out_ch, in_ch, k, k)) / np.sqrt(in_ch * k * k)
        return cls(w, np.zeros(out_ch), pad)

    def forward(self, x):
        n, _, h, w = x.shape
        d, _, k, _ = self.weight.shape
        ho, wo = conv_out_size(h, k, 1, self.pad), conv_out_size(w, k, 1, self.pad)
        xu = unfold(x, k, 1, self.pad)
        self._cache = (x.shape, xu, ho, wo)
        y = xu @ self.weight.reshape(d, -1).T + self.bias
        return y.reshape(n, ho, wo, d).transpose(0, 3, 1, 2)

    def backward(self, dy, rng=None):
        shape, xu, ho, wo = self._cache
        d, _, k, _ = self.weight.shape
        dyu = dy.transpose(0, 2, 3, 1).reshape(-1, d)
        dx = fold(dyu @ self.weight.reshape(d, -1), shape, k, 1, self.pad)
        dw = (dyu.T @ xu).reshape(self.weight.shape)
        return dx, [dw, dyu.sum(axis=0)]

    def params(self):
        return [self.weight, self.bias]


class _BinaryAdapter:
    """Give a binary layer the ``backward -> (dx, grads)`` interface."""

    def __init__(self, layer):
        self.layer = layer

    def forward(self, x):
        return self.layer.forward(x)

    def backward(self, dy, rng=None):
        dx, dw, dscale = self.layer.backward(dy, rng)
        return dx, [dw, dscale]

    def params(self):
        return self.layer.params()


@dataclass
class _Flatten:
    _shape: tuple | None = None

    def forward(self, x):
        self._shape = x.shape
        return x.mean(axis=(2, 3))

    def backward(self, dy, rng=None):
        n, c, h, w = self._shape
        return np.broadcast_to(dy[:, :, None, None] / (h * w), self._shape).copy(), []

    def params(self):
        return []


class Model:
    """A stack of layers trained with softmax cross-entropy."""

    def __init__(self, layers):
        self.layers = layers

    @property
    def binary_layers(self):
        return [l.layer for l in self.layers if isinstance(l, _BinaryAdapter)]

    def set_mode(self, mode: GradMode, bits: int) -> None:
        for b in self.binary_layers:
            b.mode, b.bits = mode, bits

    def forward(self, x):
        for layer in self.layers:
            x = layer.forward(x)
        return x

    def backward(self, dlogits, rng):
        grads = []
        d = dlogits
        for layer in reversed(self.layers):
            d, g = layer.backward(d, rng)
            if not all(np.isfinite(a).all() for a in [d, *g]):
                raise FloatingPointError(f"non-finite gradient in {type(layer).__name__}")
            grads = g + grads
        return grads

    def params(self):
        return [p for layer in self.layers for p in layer.params()]

    def state(self) -> list[np.ndarray]:
        return [p.copy() for p in self.params()]

    def load(self, state) -> None:
        for p, s in zip(self.params(), state):
            p[...] = s


def softmax_xent(logits: np.ndarray, y: np.ndarray):
    """Mean cross-entropy and its gradient with respect to the logits."""
    z = logits - logits.max(axis=1, keepdims=True)
    logp = z - np.log(np.exp(z).sum(axis=1, keepdims=True))
    n = len(y)
    loss = -float(logp[np.arange(n), y].mean())
    d = np.exp(logp)
    d[np.arange(n), y] -= 1.0
    return loss, d / n


def build_mlp(in_features, hidden, classes, rng, mode=GradMode.FULL, bits=4) -> Model:
    """FP ``in -> hidden[0]``, binary layers between consecutive hidden sizes,
    FP ``hidden[-1] -> classes``."""
    if not hidden:
        raise ValueError("need at least one hidden size")
    layers = [DenseLinear.create(in_features, hidden[0], rng)]
    for a, b in zip(hidden[:-1], hidden[1:]):
        core = BinaryLinear.create(a, b, rng, mode, bits)
        core.scale[:] = 1.0 / np.sqrt(a)
        layers.append(_BinaryAdapter(core))
    layers.append(DenseLinear.create(hidden[-1], classes, rng))
    return Model(layers)


def build_conv(in_ch, channels, classes, rng, mode=GradMode.FULL, bits=4, k=3) -> Model:
    """FP conv, binary convs between consecutive channel counts, global mean
    pool, FP linear head."""
    if not channels:
        raise ValueError("need at least one channel count")
    layers = [DenseConv.create(in_ch, channels[0], k, rng, pad=k // 2)]
    for a, b in zip(channels[:-1], channels[1:]):
        core = BinaryConv.create(a, b, k, rng, pad=k // 2, mode=mode, bits=bits)
        core.scale[:] = 1.0 / np.sqrt(a * k * k)
        layers.append(_BinaryAdapter(core))
    layers += [_Flatten(), DenseLinear.create(channels[-1], classes, rng)]
    return Model(layers)
