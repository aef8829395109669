"""Quantizer variance probes on real layer-gradient snapshots.

Every quantizer sees the same snapshots. Each row pairs the Monte-Carlo
variance with two analytic bounds. ``bound`` is the per-group quantization
bound; for AGP it keeps only the ``ceil(N/b)`` largest ranges and so ignores
pruning noise, which makes it tight only when the dropped groups are small.
``bound_total`` adds the pruning term and holds in general.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..agp import agp_quantizer, agp_total_variance_bound, agp_variance_bound, group_ranges
from ..layers import GradMode
from ..quant import GroupAxis, empirical_variance, quantizer, variance_bound
from ..rng import make_rng
from .config import RunConfig
from .model import softmax_xent
from .train import pretrain

# (name, axis, bits)
QUANTIZERS = (
    ("ptq", GroupAxis.PER_TENSOR, 1),
    ("psq", GroupAxis.PER_SAMPLE, 1),
    ("psq", GroupAxis.PER_SAMPLE, 8),
    ("pcq", GroupAxis.PER_CHANNEL, 1),
    ("agp", GroupAxis.PER_SAMPLE, 2),
    ("agp", GroupAxis.PER_SAMPLE, 4),
    ("agp", GroupAxis.PER_SAMPLE, 8),
    ("agp", GroupAxis.PER_CHANNEL, 4),
)

_SNAPSHOT, _TRIALS = 10, 11


@dataclass
class VarianceRow:
    snapshot: int
    layer: str
    quantizer: str
    axis: str
    bits: int
    groups: int
    range_cv: float  # std/mean of the group ranges; 0 means homogeneous
    empirical: float
    bound: float  # per-group quantization bound (top-ceil(N/b) ranges for agp)
    bound_total: float  # also counts pruning noise; sound for every row


def probe_gradient(g: np.ndarray, snapshot: int, layer: str, trials: int, rng) -> list[VarianceRow]:
    rows = []
    for name, axis, bits in QUANTIZERS:
        ranges = group_ranges(g, axis) if axis is not GroupAxis.PER_TENSOR else np.array([np.ptp(g)])
        width = axis.group_width(g.shape)
        if name == "agp":
            est = agp_quantizer(axis, bits)
            bound = agp_variance_bound(ranges, bits, width)
            total = agp_total_variance_bound(g, axis, bits)
        else:
            est = quantizer(axis, bits)
            bound = variance_bound(ranges, bits, width)
            total = bound
        mean = ranges.mean()
        cv = float(ranges.std() / mean) if mean > 0 else 0.0
        var = empirical_variance(g, est, trials, rng)
        rows.append(VarianceRow(snapshot, layer, name, axis.value, bits, ranges.size, cv, var, bound, total))
    return rows


def gradient_snapshots(cfg: RunConfig):
    """Yield ``(snapshot, layer name, G)`` for every binary layer on
    ``variance_snapshots`` distinct target batches, after phase 1."""
    from .train import datasets

    result = pretrain(cfg)
    model = result.model
    model.set_mode(GradMode.FULL, cfg.bits)
    (_, (train, _)) = datasets(cfg)
    order = make_rng(cfg.seed, _SNAPSHOT).permutation(len(train))
    for s in range(cfg.variance_snapshots):
        idx = order[(s * cfg.batch_size) % len(train) :][: cfg.batch_size]
        _, d = softmax_xent(model.forward(train.x[idx]), train.y[idx])
        model.backward(d, None)
        for i, layer in enumerate(model.binary_layers, 1):
            yield s, f"bin{i}", layer.last_info["grad"]


def variance_probe(cfg: RunConfig) -> list[VarianceRow]:
    rng = make_rng(cfg.seed, _TRIALS)
    rows = []
    for s, name, g in gradient_snapshots(cfg):
        rows += probe_gradient(g, s, name, cfg.variance_trials, rng)
    return rows
