"""Synthetic labeled datasets, deterministic in their seed."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from sklearn.datasets import make_blobs, make_moons

from ..rng import make_rng

KINDS = ("two-moons", "gaussian-blobs", "synthetic-patches")


@dataclass(frozen=True)
class Split:
    x: np.ndarray
    y: np.ndarray

    def __len__(self) -> int:
        return len(self.y)


def _patches(n: int, noise: float, rng: np.random.Generator, size: int = 8):
    """Single-channel images holding a horizontal (label 0) or vertical
    (label 1) bar at a random offset, plus Gaussian pixel noise."""
    y = rng.integers(0, 2, size=n)
    x = np.zeros((n, 1, size, size))
    pos = rng.integers(1, size - 1, size=n)
    for i in range(n):
        if y[i] == 0:
            x[i, 0, pos[i], 1:-1] = 1.0
        else:
            x[i, 0, 1:-1, pos[i]] = 1.0
    x += noise * rng.standard_normal(x.shape)
    return x - 0.5, y


def make_dataset(
    kind: str, n: int, noise: float, seed: int, test_fraction: float = 0.3, rotate: float = 0.0
) -> tuple[Split, Split]:
    """Build a dataset and split it into disjoint train/test parts.

    ``rotate`` (degrees) rotates 2-D inputs about the origin; used to make
    shifted source tasks for two-phase runs.
    """
    if n < 10:
        raise ValueError("need at least 10 samples")
    if not 0 < test_fraction < 1:
        raise ValueError("test_fraction must be in (0, 1)")
    rng = make_rng(seed)
    if kind == "two-moons":
        x, y = make_moons(n_samples=n, noise=noise, random_state=int(rng.integers(2**31)))
        x = (x - np.array([0.5, 0.25])) / np.array([1.0, 0.5])
    elif kind == "gaussian-blobs":
        x, y = make_blobs(
            n_samples=n, centers=[[-4.0, -4.0], [4.0, 4.0]],
            cluster_std=1.0 + noise, random_state=int(rng.integers(2**31)),
        )
        x = x / 4.0
    elif kind == "synthetic-patches":
        x, y = _patches(n, noise, rng)
    else:
        raise ValueError(f"unknown dataset {kind!r}; expected one of {KINDS}")
    if rotate and x.ndim != 2:
        raise ValueError("rotation applies to 2-D point datasets only")
    if rotate:
        a = np.deg2rad(rotate)
        rot = np.array([[np.cos(a), -np.sin(a)], [np.sin(a), np.cos(a)]])
        x = x @ rot.T
    perm = rng.permutation(n)
    n_test = max(1, int(round(n * test_fraction)))
    te, tr = perm[:n_test], perm[n_test:]
    return Split(x[tr], y[tr].astype(np.int64)), Split(x[te], y[te].astype(np.int64))
