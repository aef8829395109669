"""Stochastic rounding and unbiased per-group gradient quantizers.

A group (the whole tensor, one row, or one column) is mapped affinely onto
``[0, B]`` with ``B = 2**b - 1`` using its own zero point ``Z = min`` and range
``R = max - min``, then stochastically rounded. Dequantizing gives
``code * R/B + Z``, which equals the input in expectation.
"""

from __future__ import annotations

import enum
import math
from collections import Counter
from dataclasses import dataclass
from typing import Callable

import numpy as np

MAX_BITS = 8

# Incremented whenever codes are expanded back to a full-precision matrix.
counters: Counter = Counter()


class GroupAxis(enum.Enum):
    PER_TENSOR = "tensor"
    PER_SAMPLE = "sample"  # one group per row
    PER_CHANNEL = "channel"  # one group per column

    def n_groups(self, shape: tuple[int, int]) -> int:
        if self is GroupAxis.PER_TENSOR:
            return 1
        return shape[0] if self is GroupAxis.PER_SAMPLE else shape[1]

    def group_width(self, shape: tuple[int, int]) -> int:
        """Number of elements in each group."""
        if self is GroupAxis.PER_TENSOR:
            return shape[0] * shape[1]
        return shape[1] if self is GroupAxis.PER_SAMPLE else shape[0]

    def expand(self, v: np.ndarray) -> np.ndarray:
        """Reshape a per-group vector so it broadcasts against the matrix."""
        if self is GroupAxis.PER_SAMPLE:
            return v[:, None]
        if self is GroupAxis.PER_CHANNEL:
            return v[None, :]
        return v.reshape(1, 1)


@dataclass(frozen=True)
class QuantParams:
    bits: int
    ranges: np.ndarray
    zeros: np.ndarray

    @property
    def bins(self) -> int:
        return (1 << self.bits) - 1

    @property
    def scales(self) -> np.ndarray:
        """Per-group step size ``R/B`` (the scale diagonal)."""
        return self.ranges / self.bins


@dataclass(frozen=True)
class QuantizedTensor:
    codes: np.ndarray  # uint8, values in [0, B]
    params: QuantParams
    axis: GroupAxis

    @property
    def shape(self) -> tuple[int, int]:
        return self.codes.shape

    @property
    def bits(self) -> int:
        return self.params.bits


def _check_bits(bits: int) -> None:
    if not 1 <= bits <= MAX_BITS:
        raise ValueError(f"bits must be in [1, {MAX_BITS}], got {bits}")


def stochastic_round(x: float, rng: np.random.Generator) -> int:
    """Round down or up with probability given by the fractional part."""
    if not math.isfinite(x):
        raise ValueError(f"cannot round non-finite value {x}")
    lo = math.floor(x)
    return lo + int(rng.random() < x - lo)


def stochastic_round_array(x: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if not np.isfinite(x).all():
        raise ValueError("cannot round non-finite values")
    lo = np.floor(x)
    return lo + (rng.random(x.shape) < x - lo)


def group_min_max(g: np.ndarray, axis: GroupAxis) -> tuple[np.ndarray, np.ndarray]:
    if axis is GroupAxis.PER_TENSOR:
        return np.array([g.min()]), np.array([g.max()])
    red = 1 if axis is GroupAxis.PER_SAMPLE else 0
    return g.min(axis=red), g.max(axis=red)


def quantize(
    g: np.ndarray, axis: GroupAxis, bits: int, rng: np.random.Generator
) -> QuantizedTensor:
    """Unbiased ``bits``-bit stochastic quantization with one range per group.

    Constant groups (zero range) get code 0 and dequantize exactly.
    """
    _check_bits(bits)
    g = np.asarray(g, dtype=np.float64)
    if g.ndim != 2:
        raise ValueError("quantize expects a 2-D matrix")
    if not np.isfinite(g).all():
        raise ValueError("gradient contains non-finite values")
    bins = (1 << bits) - 1
    if g.size == 0:
        n = axis.n_groups(g.shape)
        params = QuantParams(bits, np.zeros(n), np.zeros(n))
        return QuantizedTensor(np.zeros(g.shape, np.uint8), params, axis)

    lo, hi = group_min_max(g, axis)
    ranges = hi - lo
    # dividing by R (not multiplying by B/R) stays finite for subnormal ranges
    r = np.broadcast_to(axis.expand(ranges), g.shape)
    frac = np.divide(g - axis.expand(lo), r, out=np.zeros_like(g), where=r > 0)
    scaled = np.clip(frac * bins, 0.0, bins)
    codes = stochastic_round_array(scaled, rng)
    np.minimum(codes, bins, out=codes)
    return QuantizedTensor(codes.astype(np.uint8), QuantParams(bits, ranges, lo), axis)


def dequantize(q: QuantizedTensor) -> np.ndarray:
    """Expand codes to ``code * S + Z`` per group."""
    counters["dequantize"] += 1
    s = q.axis.expand(q.params.scales)
    z = q.axis.expand(q.params.zeros)
    return q.codes.astype(np.float64) * s + z


def dequantize_factored(q: QuantizedTensor) -> np.ndarray:
    """Same result as :func:`dequantize`, written as a scale-diagonal product
    plus a rank-one zero-point term: ``diag(S) C + Z 1^T`` for rows,
    ``C diag(S) + 1 Z^T`` for columns."""
    counters["dequantize"] += 1
    c = q.codes.astype(np.float64)
    n, d = c.shape
    s, z = q.params.scales, q.params.zeros
    if q.axis is GroupAxis.PER_SAMPLE:
        return np.diag(s) @ c + np.outer(z, np.ones(d))
    if q.axis is GroupAxis.PER_CHANNEL:
        return c @ np.diag(s) + np.outer(np.ones(n), z)
    return s[0] * c + z[0]


def remap_scale_zero(scale: float, zero: float) -> tuple[float, float]:
    """Turn the affine map of {0,1} codes into the equivalent map of +-1 codes.

    ``(S/2) * x_pm + (Z + S/2) == S * x01 + Z`` whenever ``x01 = (x_pm + 1)/2``.
    """
    half = scale / 2
    return half, zero + half


def variance_bound(ranges, bits: int, width: int) -> float:
    """Worst-case total variance ``width / (4 B^2) * sum(R_g^2)``."""
    _check_bits(bits)
    r = np.asarray(ranges, dtype=np.float64)
    if (r < 0).any():
        raise ValueError("ranges must be nonnegative")
    bins = (1 << bits) - 1
    return float(width / (4 * bins**2) * np.sum(r**2))


Estimator = Callable[[np.ndarray, np.random.Generator], np.ndarray]


def empirical_variance(
    g: np.ndarray, estimator: Estimator, trials: int, rng: np.random.Generator
) -> float:
    """Sum over elements of the unbiased sample variance of ``estimator(g)``.

    ``estimator`` maps a gradient to one random reconstruction of it.
    """
    return float(monte_carlo_moments(g, estimator, trials, rng)[1].sum())


def monte_carlo_moments(
    g: np.ndarray, estimator: Estimator, trials: int, rng: np.random.Generator
) -> tuple[np.ndarray, np.ndarray]:
    """Elementwise sample mean and unbiased sample variance over ``trials``."""
    if trials < 2:
        raise ValueError("need at least 2 trials")
    g = np.asarray(g, dtype=np.float64)
    mean = np.zeros_like(g)
    m2 = np.zeros_like(g)
    for t in range(1, trials + 1):
        x = estimator(g, rng)
        delta = x - mean
        mean += delta / t
        m2 += delta * (x - mean)
    return mean, m2 / (trials - 1)


def quantizer(axis: GroupAxis, bits: int) -> Estimator:
    """Estimator closure for plain per-group quantization."""

    def estimate(g: np.ndarray, rng: np.random.Generator) -> np.ndarray:
        return dequantize(quantize(g, axis, bits, rng))

    return estimate
