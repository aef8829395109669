"""Activation gradient pruning (AGP) and sample-channel joint quantization.

Groups (rows for the activation-gradient path, columns for the weight-gradient
path) are kept with probability proportional to their range under a budget
of ``N/b`` kept groups, reweighted by ``1/p`` and quantized at ``b`` bits.
Dropped groups are restored as zeros, so the estimate stays unbiased while
the average code width stays near one bit per element.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .quant import (
    Estimator,
    GroupAxis,
    QuantizedTensor,
    dequantize,
    group_min_max,
    quantize,
    variance_bound,
)


@dataclass(frozen=True)
class PruneMask:
    axis: GroupAxis
    probs: np.ndarray
    draws: np.ndarray  # bool
    weights: np.ndarray  # draws / probs, 0 where dropped
    target: float  # requested keep count N/b

    @property
    def kept(self) -> np.ndarray:
        return np.flatnonzero(self.draws)

    @property
    def n_groups(self) -> int:
        return self.probs.size


def _check_group_axis(axis: GroupAxis) -> None:
    if axis is GroupAxis.PER_TENSOR:
        raise ValueError("pruning needs a per-sample or per-channel axis")


def group_ranges(g: np.ndarray, axis: GroupAxis) -> np.ndarray:
    """``max - min`` of every row (per-sample) or column (per-channel)."""
    lo, hi = group_min_max(np.asarray(g, dtype=np.float64), axis)
    return hi - lo


def keep_probabilities(ranges, bits: int) -> np.ndarray:
    """Keep probabilities ``p_g = N R_g / (b R_total)``, water-filled to ``<= 1``.

    Mass above 1 is handed back proportionally to the unclipped groups until
    no probability exceeds 1. The total is ``min(N/b, #groups with R > 0)``.
    """
    if bits < 1:
        raise ValueError("bits must be >= 1")
    r = np.asarray(ranges, dtype=np.float64)
    if (r < 0).any():
        raise ValueError("ranges must be nonnegative")
    n = r.size
    probs = np.zeros(n)
    live = r > 0
    n_live = int(live.sum())
    if n_live == 0:
        return probs
    budget = min(n / bits, n_live)
    clipped = np.zeros(n, dtype=bool)
    while True:
        free = np.flatnonzero(live & ~clipped)
        rest = budget - clipped.sum()
        p = rest * r[free] / r[free].sum()
        over = p > 1
        if not over.any():
            probs[free] = p
            break
        clipped[free[over]] = True
    probs[clipped] = 1.0
    return np.minimum(probs, 1.0)


def draw_mask(
    probs, rng: np.random.Generator, axis: GroupAxis = GroupAxis.PER_SAMPLE, target=None
) -> PruneMask:
    """Independent Bernoulli keep decisions with ``1/p`` reweighting."""
    p = np.asarray(probs, dtype=np.float64)
    if ((p < 0) | (p > 1)).any():
        raise ValueError("probabilities must lie in [0, 1]")
    draws = rng.random(p.size) < p
    weights = np.zeros(p.size)
    weights[draws] = 1.0 / p[draws]
    return PruneMask(axis, p, draws, weights, float(p.sum() if target is None else target))


def _take(g: np.ndarray, axis: GroupAxis, idx: np.ndarray, w: np.ndarray) -> np.ndarray:
    if axis is GroupAxis.PER_SAMPLE:
        return g[idx] * w[:, None]
    return g[:, idx] * w[None, :]


def group_keep_probabilities(g: np.ndarray, axis: GroupAxis, bits: int) -> np.ndarray:
    """Keep probabilities for the groups of ``g``.

    As :func:`keep_probabilities`, except that a constant nonzero group (zero
    range) is always kept: dropping it would bias the estimate.
    """
    ranges = group_ranges(g, axis)
    probs = keep_probabilities(ranges, bits)
    lo, _ = group_min_max(g, axis)
    probs[(ranges == 0) & (lo != 0)] = 1.0
    return probs


def agp_quantize(
    g: np.ndarray, axis: GroupAxis, bits: int, rng: np.random.Generator
) -> tuple[QuantizedTensor, PruneMask]:
    """Prune groups of ``g`` at random, reweight the survivors and quantize them.

    Returns the quantized survivors (``kept x D`` for rows, ``N x kept`` for
    columns) and the mask that says where they go.
    """
    _check_group_axis(axis)
    g = np.asarray(g, dtype=np.float64)
    probs = group_keep_probabilities(g, axis, bits)
    mask = draw_mask(probs, rng, axis, target=axis.n_groups(g.shape) / bits)
    kept = mask.kept
    q = quantize(_take(g, axis, kept, mask.weights[kept]), axis, bits, rng)
    return q, mask


def zero_fill(values: np.ndarray, mask: PruneMask, size: int | None = None) -> np.ndarray:
    """Scatter per-kept-group results back to full size, zeros elsewhere.

    ``values`` holds one row (per-sample mask) or one column (per-channel
    mask) per kept group.
    """
    n = mask.n_groups if size is None else size
    kept = mask.kept
    if mask.axis is GroupAxis.PER_SAMPLE:
        out = np.zeros((n, values.shape[1]), dtype=values.dtype)
        out[kept] = values
    else:
        out = np.zeros((values.shape[0], n), dtype=values.dtype)
        out[:, kept] = values
    return out


def reconstruct(q: QuantizedTensor, mask: PruneMask) -> np.ndarray:
    """Dense, zero-filled estimate of the original gradient."""
    return zero_fill(dequantize(q), mask)


def scq_prepare(g: np.ndarray, bits: int, rng: np.random.Generator):
    """Two independent prune+quantize passes over one output gradient.

    The per-sample branch feeds the activation-gradient product, the
    per-channel branch feeds the weight-gradient product.
    """
    psq = agp_quantize(g, GroupAxis.PER_SAMPLE, bits, rng)
    pcq = agp_quantize(g, GroupAxis.PER_CHANNEL, bits, rng)
    return psq, pcq


def agp_variance_bound(ranges, bits: int, width: int) -> float:
    """Variance bound restricted to the ``ceil(N/b)`` largest ranges."""
    r = np.sort(np.asarray(ranges, dtype=np.float64))[::-1]
    top = r[: math.ceil(r.size / bits)]
    return variance_bound(top, bits, width)


def agp_total_variance_bound(g: np.ndarray, axis: GroupAxis, bits: int) -> float:
    """Bound on the total variance of prune + quantize + zero-fill that also
    counts the pruning noise.

    A group kept with probability ``p`` contributes ``(1/p - 1) |g|^2`` from
    the Bernoulli draw (exact) plus at most ``width R^2 / (4 B^2 p)`` from
    quantizing ``g/p``. Groups with ``p = 0`` are all zero and contribute
    nothing.
    """
    _check_group_axis(axis)
    g = np.asarray(g, dtype=np.float64)
    probs = group_keep_probabilities(g, axis, bits)
    ranges = group_ranges(g, axis)
    red = 1 if axis is GroupAxis.PER_SAMPLE else 0
    sq = (g * g).sum(axis=red)
    live = probs > 0
    p = probs[live]
    bins = (1 << bits) - 1
    width = axis.group_width(g.shape)
    prune = np.sum((1.0 / p - 1.0) * sq[live])
    quant = np.sum(width * ranges[live] ** 2 / (4 * bins**2 * p))
    return float(prune + quant)


def agp_quantizer(axis: GroupAxis, bits: int) -> Estimator:
    """Estimator closure for the prune + quantize + zero-fill pipeline."""
    _check_group_axis(axis)

    def estimate(g: np.ndarray, rng: np.random.Generator) -> np.ndarray:
        return reconstruct(*agp_quantize(g, axis, bits, rng))

    return estimate
