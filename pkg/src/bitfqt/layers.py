"""Binary layers with selectable gradient quantization.

Forward: ``Y = (sign(H) @ sign(W)) * gamma`` computed with the XNOR kernel.

Backward, with ``G = dY * gamma``:

* ``FULL``   -- dense products with +-1 operands (the QAT reference);
* ``PSQ1`` / ``PSQ8`` -- per-sample quantized ``G``; the activation gradient
  runs on bit planes, the weight gradient needs a dequantized ``G``;
* ``AGP_SCQ`` -- pruned per-sample codes for the activation gradient and
  pruned per-channel codes for the weight gradient, both consumed as packed
  planes, with the scale diagonals applied to the integer results.

Gradients pass through ``sign`` with the clipped straight-through rule
(``1{|x| <= 1}``).
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np

from .agp import scq_prepare, zero_fill
from .binmm import binary_gemm, mixed_gemm_planes
from .bitpack import BitMatrix, bitplane_decompose, sign_encode
from .quant import GroupAxis, counters, dequantize, quantize


class GradMode(enum.Enum):
    FULL = "fp"
    PSQ1 = "psq1"
    PSQ8 = "psq8"
    AGP_SCQ = "agp"


AGP_BITS = (2, 4, 8)


def sign(x: np.ndarray) -> np.ndarray:
    return np.where(x > 0, 1.0, -1.0)


def ste_mask(x: np.ndarray) -> np.ndarray:
    return (np.abs(x) <= 1.0).astype(np.float64)


@dataclass
class _Cache:
    h: np.ndarray
    w: np.ndarray
    h_rows: BitMatrix  # sign(H), N x Din
    w_rows: BitMatrix  # sign(W), Din x Dout; column-packed sign(W)^T
    prod: np.ndarray  # sign(H) sign(W), int32


def binary_forward(h: np.ndarray, w: np.ndarray, scale: np.ndarray):
    """Return ``(sign(h) @ sign(w)) * scale`` and the cache for backward."""
    if h.ndim != 2 or w.ndim != 2 or h.shape[1] != w.shape[0]:
        raise ValueError(f"shape mismatch: input {h.shape}, weight {w.shape}")
    h_rows = sign_encode(h)
    prod = binary_gemm(h_rows, sign_encode(w.T))
    cache = _Cache(h, w, h_rows, sign_encode(w), prod)
    return prod * scale, cache


def binary_backward(
    cache: _Cache,
    dy: np.ndarray,
    scale: np.ndarray,
    mode: GradMode,
    bits: int,
    rng: np.random.Generator | None,
):
    """Gradients w.r.t. the layer input, weight and scale, plus a dict of
    quantizer diagnostics (the scaled output gradient and any prune masks).

    Raises ``FloatingPointError`` if the scaled gradient is not finite.
    """
    if dy.shape != cache.prod.shape:
        raise ValueError(f"gradient shape {dy.shape} != output shape {cache.prod.shape}")
    with np.errstate(over="ignore", invalid="ignore"):
        g = dy * scale
    if not np.isfinite(g).all():
        raise FloatingPointError("non-finite output gradient")
    dscale = (dy * cache.prod).sum(axis=0)
    info = {"grad": g}

    if mode is GradMode.FULL:
        counters["float_gemm"] += 2
        sh, sw = sign(cache.h), sign(cache.w)
        dh = g @ sw.T
        dw = sh.T @ g
    elif mode in (GradMode.PSQ1, GradMode.PSQ8):
        b = 1 if mode is GradMode.PSQ1 else 8
        q = quantize(g, GroupAxis.PER_SAMPLE, b, rng)
        dh = _act_grad(q, cache)
        # the per-sample scale sits between the two operands of sign(H)^T G,
        # so this product has to run on the dequantized gradient
        counters["float_gemm"] += 1
        dw = sign(cache.h).T @ dequantize(q)
    elif mode is GradMode.AGP_SCQ:
        (qs, ms), (qc, mc) = scq_prepare(g, bits, rng)
        info["masks"] = (ms, mc)
        dh = zero_fill(_act_grad(qs, cache), ms)
        dw = zero_fill(_weight_grad(qc, cache), mc)
    else:
        raise ValueError(f"unknown gradient mode {mode}")

    return dh * ste_mask(cache.h), dw * ste_mask(cache.w), dscale, info


def _act_grad(q, cache: _Cache) -> np.ndarray:
    """``dequant(q) @ sign(W)^T`` from per-sample codes, via bit planes."""
    planes = bitplane_decompose(q.codes, q.bits)
    acc = mixed_gemm_planes(planes, cache.w_rows)
    colsum = cache.w_rows.signs().sum(axis=1)
    s, z = q.params.scales, q.params.zeros
    return s[:, None] * acc + np.outer(z, colsum)


def _weight_grad(q, cache: _Cache) -> np.ndarray:
    """``sign(H)^T @ dequant(q)`` from per-channel codes, via bit planes."""
    planes = bitplane_decompose(q.codes.T, q.bits)
    h_cols = cache.h_rows.transpose()
    acc = mixed_gemm_planes(planes, h_cols).T
    rowsum = h_cols.signs().sum(axis=1)
    s, z = q.params.scales, q.params.zeros
    return acc * s[None, :] + np.outer(rowsum, z)


@dataclass
class BinaryLinear:
    """Binary fully connected layer; ``weight`` is ``in x out``."""

    weight: np.ndarray
    scale: np.ndarray
    mode: GradMode = GradMode.FULL
    bits: int = 4
    _cache: _Cache | None = field(default=None, repr=False)
    last_info: dict | None = field(default=None, repr=False)

    @classmethod
    def create(cls, in_features, out_features, rng, mode=GradMode.FULL, bits=4):
        w = rng.uniform(-1.0, 1.0, size=(in_features, out_features)) / np.sqrt(in_features)
        return cls(w, np.ones(out_features), mode, bits)

    def forward(self, h: np.ndarray) -> np.ndarray:
        y, self._cache = binary_forward(h, self.weight, self.scale)
        return y

    def backward(self, dy: np.ndarray, rng: np.random.Generator | None = None):
        if self._cache is None:
            raise RuntimeError("backward called before forward")
        if self.mode is GradMode.AGP_SCQ and self.bits not in AGP_BITS:
            raise ValueError(f"AGP bits must be one of {AGP_BITS}")
        dh, dw, dscale, self.last_info = binary_backward(
            self._cache, dy, self.scale, self.mode, self.bits, rng
        )
        return dh, dw, dscale

    def params(self) -> list[np.ndarray]:
        return [self.weight, self.scale]


def conv_out_size(size: int, k: int, stride: int, pad: int) -> int:
    out = (size + 2 * pad - k) // stride + 1
    if out < 1:
        raise ValueError(f"kernel {k} does not fit input {size} with padding {pad}")
    return out


def unfold(x: np.ndarray, k: int, stride: int = 1, pad: int = 0) -> np.ndarray:
    """im2col: ``(N, C, H, W)`` to ``(N*Ho*Wo, C*k*k)``, rows ordered (n, y, x)
    and columns ordered (c, ky, kx)."""
    if x.ndim != 4:
        raise ValueError("unfold expects an (N, C, H, W) tensor")
    n, c, h, w = x.shape
    ho, wo = conv_out_size(h, k, stride, pad), conv_out_size(w, k, stride, pad)
    img = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    col = np.empty((n, c, k, k, ho, wo), dtype=x.dtype)
    for ky in range(k):
        for kx in range(k):
            col[:, :, ky, kx] = img[
                :, :, ky : ky + stride * ho : stride, kx : kx + stride * wo : stride
            ]
    return col.transpose(0, 4, 5, 1, 2, 3).reshape(n * ho * wo, c * k * k)


def fold(cols: np.ndarray, shape, k: int, stride: int = 1, pad: int = 0) -> np.ndarray:
    """Adjoint of :func:`unfold`; overlapping windows are summed."""
    n, c, h, w = shape
    ho, wo = conv_out_size(h, k, stride, pad), conv_out_size(w, k, stride, pad)
    if cols.shape != (n * ho * wo, c * k * k):
        raise ValueError(f"columns {cols.shape} do not match {shape} with k={k}")
    col = cols.reshape(n, ho, wo, c, k, k).transpose(0, 3, 4, 5, 1, 2)
    img = np.zeros((n, c, h + 2 * pad, w + 2 * pad), dtype=cols.dtype)
    for ky in range(k):
        for kx in range(k):
            img[:, :, ky : ky + stride * ho : stride, kx : kx + stride * wo : stride] += col[
                :, :, ky, kx
            ]
    return img[:, :, pad : pad + h, pad : pad + w]


@dataclass
class BinaryConv:
    """Binary 2-D convolution run as unfold -> binary linear core -> reshape.

    ``weight`` is ``(out_ch, in_ch, k, k)``. Zero padding is binarized like
    any other input, so padded positions enter the product as -1.
    """

    weight: np.ndarray
    scale: np.ndarray
    stride: int = 1
    pad: int = 0
    mode: GradMode = GradMode.FULL
    bits: int = 4
    _cache: tuple | None = field(default=None, repr=False)
    last_info: dict | None = field(default=None, repr=False)

    @classmethod
    def create(cls, in_ch, out_ch, k, rng, stride=1, pad=0, mode=GradMode.FULL, bits=4):
        fan_in = in_ch * k * k
        w = rng.uniform(-1.0, 1.0, size=(out_ch, in_ch, k, k)) / np.sqrt(fan_in)
        return cls(w, np.ones(out_ch), stride, pad, mode, bits)

    @property
    def k(self) -> int:
        return self.weight.shape[-1]

    def forward(self, x: np.ndarray) -> np.ndarray:
        n, _, h, w = x.shape
        d = self.weight.shape[0]
        ho = conv_out_size(h, self.k, self.stride, self.pad)
        wo = conv_out_size(w, self.k, self.stride, self.pad)
        xu = unfold(x, self.k, self.stride, self.pad)
        y, core = binary_forward(xu, self.weight.reshape(d, -1).T, self.scale)
        self._cache = (x.shape, ho, wo, core)
        return y.reshape(n, ho, wo, d).transpose(0, 3, 1, 2)

    def backward(self, dy: np.ndarray, rng: np.random.Generator | None = None):
        if self._cache is None:
            raise RuntimeError("backward called before forward")
        if self.mode is GradMode.AGP_SCQ and self.bits not in AGP_BITS:
            raise ValueError(f"AGP bits must be one of {AGP_BITS}")
        shape, ho, wo, core = self._cache
        d = self.weight.shape[0]
        dyu = dy.transpose(0, 2, 3, 1).reshape(-1, d)
        dxu, dwu, dscale, self.last_info = binary_backward(
            core, dyu, self.scale, self.mode, self.bits, rng
        )
        dx = fold(dxu, shape, self.k, self.stride, self.pad)
        return dx, dwu.T.reshape(self.weight.shape), dscale

    def params(self) -> list[np.ndarray]:
        return [self.weight, self.scale]
