"""GEMM timings: scalar dense float vs packed 1-bit vs average-1-bit planes.

For a shape ``(n, k, m)`` the left operand is ``n x k`` and the right one
``k x m``; the right operand is packed once outside the timed region (it
plays the role of the stored binary weight).

* ``dense``: :func:`dense_gemm` on float64 +-1 matrices.
* ``binary``: ``encode`` (sign packing of the left operand) + ``gemm``.
* ``avg1bit``: ``quantize`` (AGP, b = 4, about ``n/4`` rows kept) +
  ``encode`` (bit-plane packing) + ``gemm`` (:func:`mixed_gemm_planes`) +
  ``dequantize`` (scale diagonal, zero point and zero fill).

Each phase is timed separately; ``seconds`` is the minimum over ``reps``.
"""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from ..agp import agp_quantize, zero_fill
from ..binmm import binary_gemm, dense_gemm, mixed_gemm_planes
from ..bitpack import bitplane_decompose, sign_encode
from ..quant import GroupAxis
from ..rng import make_rng
from .config import RunConfig

AVG_BITS = 4


@dataclass
class BenchRow:
    n: int
    k: int
    m: int
    kernel: str
    phase: str
    seconds: float  # minimum over reps
    median_seconds: float
    reps: int
    kept: int  # left-operand rows that reach the GEMM
    ratio_to_binary_gemm: float


def _time(fn, reps: int):
    fn()  # warm-up, includes JIT compilation on first use
    ts = []
    for _ in range(reps):
        t0 = time.perf_counter()
        out = fn()
        ts.append(time.perf_counter() - t0)
    return min(ts), float(np.median(ts)), out


def time_binary(a: np.ndarray, b_cols, reps: int) -> dict:
    enc = _time(lambda: sign_encode(a), reps)
    a_bits = enc[2]
    gemm = _time(lambda: binary_gemm(a_bits, b_cols), reps)
    return {"encode": enc[:2], "gemm": gemm[:2]}


def time_avg1bit(g: np.ndarray, b_cols, colsum: np.ndarray, reps: int, rng) -> tuple[dict, int]:
    quant = _time(lambda: agp_quantize(g, GroupAxis.PER_SAMPLE, AVG_BITS, rng), reps)
    q, mask = quant[2]
    enc = _time(lambda: bitplane_decompose(q.codes, q.bits), reps)
    planes = enc[2]
    gemm = _time(lambda: mixed_gemm_planes(planes, b_cols), reps)
    acc = gemm[2]
    s, z = q.params.scales, q.params.zeros
    deq = _time(lambda: zero_fill(s[:, None] * acc + np.outer(z, colsum), mask), reps)
    phases = {"quantize": quant[:2], "encode": enc[:2], "gemm": gemm[:2], "dequantize": deq[:2]}
    return phases, int(mask.draws.sum())


def time_dense(a: np.ndarray, w: np.ndarray, reps: int) -> dict:
    return {"gemm": _time(lambda: dense_gemm(a, w), reps)[:2]}


def bench_shape(n: int, k: int, m: int, reps: int, rng, dense: bool = True) -> list[BenchRow]:
    a = np.where(rng.random((n, k)) < 0.5, -1.0, 1.0)
    w = np.where(rng.random((k, m)) < 0.5, -1.0, 1.0)
    # equal row ranges give every row keep probability 1/b
    g = rng.uniform(-1.0, 1.0, size=(n, k))
    g[:, 0], g[:, 1] = -1.0, 1.0
    b_cols = sign_encode(w.T)
    colsum = w.sum(axis=0)

    results = [("binary", time_binary(a, b_cols, reps), n)]
    phases, kept = time_avg1bit(g, b_cols, colsum, reps, rng)
    results.append(("avg1bit", phases, kept))
    if dense:
        results.append(("dense", time_dense(a, w, reps), n))
    base = results[0][1]["gemm"][0]
    rows = []
    for kernel, phases, kept in results:
        total_min = sum(v[0] for v in phases.values())
        total_med = sum(v[1] for v in phases.values())
        for phase, (tmin, tmed) in list(phases.items()) + [("total", (total_min, total_med))]:
            rows.append(BenchRow(n, k, m, kernel, phase, tmin, tmed, reps, kept, tmin / base))
    return rows


def bench(cfg: RunConfig) -> list[BenchRow]:
    rng = make_rng(cfg.seed)
    rows = []
    for n, k, m in cfg.bench_sizes:
        rows += bench_shape(n, k, m, cfg.bench_reps, rng)
    if cfg.bench_dense_size:
        s = cfg.bench_dense_size
        rows += bench_shape(s, s, s, cfg.bench_reps, rng)
    return rows


def gemm_seconds(rows, kernel: str, shape) -> float:
    for r in rows:
        if (r.n, r.k, r.m) == tuple(shape) and r.kernel == kernel and r.phase == "gemm":
            return r.seconds
    raise KeyError(f"no {kernel} gemm row for {shape}")
