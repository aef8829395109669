"""Shared oracles and generators for the test suite."""

from __future__ import annotations

import numpy as np
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp


def pm1(rng, shape) -> np.ndarray:
    """Random +-1 integer matrix."""
    return np.where(rng.random(shape) < 0.5, -1, 1).astype(np.int64)


def bits01(rng, shape) -> np.ndarray:
    return (rng.random(shape) < 0.5).astype(np.int64)


def naive_pack_row(bits) -> list[int]:
    """Oracle packer: shift-or loop, first element ends in the top bit."""
    words = []
    for start in range(0, len(bits), 64):
        chunk = list(bits[start : start + 64])
        w = 0
        for b in chunk:
            w = (w << 1) | int(b)
        w <<= 64 - len(chunk)
        words.append(w)
    return words


def shapes(max_rows=9, max_cols=140):
    return st.tuples(st.integers(0, max_rows), st.integers(0, max_cols))


def finite_matrices(max_rows=9, max_cols=140):
    return shapes(max_rows, max_cols).flatmap(
        lambda s: hnp.arrays(
            np.float64, s, elements=st.floats(-5, 5, allow_nan=False, allow_subnormal=False)
        )
    )


def code_matrices(bits, max_rows=9, max_cols=140):
    return shapes(max_rows, max_cols).flatmap(
        lambda s: hnp.arrays(np.int64, s, elements=st.integers(0, (1 << bits) - 1))
    )


def unbiasedness_gap(g, estimator, trials, rng) -> tuple[float, float]:
    """Return ``(|mean - g|_F, 4 sigma_hat / sqrt(n))`` for a Monte-Carlo run.

    ``sigma_hat^2`` is the summed elementwise sample variance, so the
    threshold is the 4-sigma radius of the Frobenius error of the mean. An
    elementwise 4-sigma test over thousands of entries would fail by chance
    and cannot score entries whose sample variance happens to be zero.
    """
    from bitfqt.quant import monte_carlo_moments

    mean, var = monte_carlo_moments(g, estimator, trials, rng)
    return float(np.linalg.norm(mean - g)), float(4.0 * np.sqrt(var.sum() / trials))
