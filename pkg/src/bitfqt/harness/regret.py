"""Regret of SGD and Adam against gradient-noise level.

Each optimizer runs on the same convex quadratic for every noise level
``sigma``. The per-step regret over the second half of the horizon is fitted
against ``sigma`` on log-log axes; theory predicts slope 2 for SGD and 1 for
Adam.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..optim import SGD, Adam, DitherNoise, GaussianNoise, QuadraticProblem, fit_loglog_slope, regret_run
from ..rng import make_rng
from .config import RunConfig


@dataclass
class RegretRow:
    record: str  # run | fit
    optimizer: str
    sigma: float | None
    horizon: int
    total_regret: float | None
    tail_rate: float | None  # mean regret per step over the second half
    slope: float | None  # fit rows: d log(tail_rate) / d log(sigma)


def default_optimizers(cfg: RunConfig) -> dict:
    return {
        "sgd": lambda: SGD(cfg.regret_sgd_lr, schedule=cfg.regret_schedule),
        "adam": lambda: Adam(cfg.regret_adam_lr, schedule=cfg.regret_schedule, lam=cfg.regret_lam),
    }


def regret_sweep(cfg: RunConfig, optimizers: dict | None = None) -> list[RegretRow]:
    """Run every optimizer at every sigma; ``optimizers`` maps a label to a
    zero-argument factory. Runs at the same sigma share one noise stream."""
    optimizers = default_optimizers(cfg) if optimizers is None else optimizers
    d = cfg.regret_dim
    problem = QuadraticProblem(np.ones(d), np.zeros(d))
    noise_type = GaussianNoise if cfg.regret_noise == "gaussian" else DitherNoise
    rows = []
    for label, factory in optimizers.items():
        rates = []
        for i, sigma in enumerate(cfg.regret_sigmas):
            ledger = regret_run(
                problem, factory(), noise_type(float(sigma)), cfg.regret_horizon, make_rng(cfg.seed, i)
            )
            rate = ledger.tail_rate()
            rates.append(rate)
            rows.append(RegretRow("run", label, float(sigma), ledger.horizon, ledger.total, rate, None))
        positive = [(s, r) for s, r in zip(cfg.regret_sigmas, rates) if s > 0 and r > 0]
        slope = fit_loglog_slope(*zip(*positive)) if len(positive) >= 2 else None
        rows.append(RegretRow("fit", label, None, cfg.regret_horizon, None, None, slope))
    return rows


def slopes(rows) -> dict:
    return {r.optimizer: r.slope for r in rows if r.record == "fit"}
