"""SGD and Adam update rules plus online-convex regret instrumentation."""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field

import numpy as np

from .quant import GroupAxis, dequantize, quantize


def sgd_step(theta: np.ndarray, g: np.ndarray, t: int, alpha: float) -> np.ndarray:
    """``theta - alpha / sqrt(t) * g`` (``t`` counts from 1)."""
    if t < 1:
        raise ValueError("step counter starts at 1")
    return theta - (alpha / math.sqrt(t)) * g


@dataclass
class AdamState:
    m: np.ndarray
    v: np.ndarray
    alpha: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    lam: float = 1.0  # beta1 decay: beta1_t = beta1 * lam**(t-1)
    eps: float = 1e-8
    t: int = 0
    schedule: str = "constant"  # or "inv_sqrt": alpha_t = alpha / sqrt(t)

    @classmethod
    def zeros(cls, shape, check_theory: bool = False, **kw) -> AdamState:
        state = cls(np.zeros(shape), np.zeros(shape), **kw)
        if not (0 <= state.beta1 < 1 and 0 <= state.beta2 < 1):
            raise ValueError("beta1 and beta2 must lie in [0, 1)")
        if not 0 < state.lam <= 1:
            raise ValueError("lam must lie in (0, 1]")
        if state.schedule not in ("constant", "inv_sqrt"):
            raise ValueError(f"unknown schedule {state.schedule!r}")
        if check_theory and state.beta1**2 / math.sqrt(state.beta2) >= 1:
            raise ValueError("convergence analysis needs beta1^2 / sqrt(beta2) < 1")
        return state


def adam_step(state: AdamState, theta: np.ndarray, g: np.ndarray) -> np.ndarray:
    """One Adam update; advances ``state`` in place and returns the new theta.

    Bias correction uses ``beta1**t`` even when ``beta1_t`` decays.
    """
    state.t += 1
    t = state.t
    b1t = state.beta1 * state.lam ** (t - 1)
    state.m = b1t * state.m + (1 - b1t) * g
    state.v = state.beta2 * state.v + (1 - state.beta2) * g * g
    m_hat = state.m / (1 - state.beta1**t)
    v_hat = state.v / (1 - state.beta2**t)
    lr = state.alpha / math.sqrt(t) if state.schedule == "inv_sqrt" else state.alpha
    return theta - lr / (np.sqrt(v_hat) + state.eps) * m_hat


class SGD:
    """SGD over a list of arrays, updated in place."""

    name = "sgd"

    def __init__(self, alpha: float, schedule: str = "inv_sqrt"):
        if schedule not in ("constant", "inv_sqrt"):
            raise ValueError(f"unknown schedule {schedule!r}")
        self.alpha = alpha
        self.schedule = schedule
        self.t = 0

    def update(self, params, grads) -> None:
        self.t += 1
        t = self.t if self.schedule == "inv_sqrt" else 1
        for p, g in zip(params, grads):
            p[...] = sgd_step(p, g, t, self.alpha)


class Adam:
    """Adam over a list of arrays, one moment state per array."""

    name = "adam"

    def __init__(self, alpha: float = 1e-3, **kw):
        self.alpha = alpha
        self.kw = kw
        self.states: list[AdamState] = []

    def update(self, params, grads) -> None:
        if not self.states:
            self.states = [AdamState.zeros(p.shape, alpha=self.alpha, **self.kw) for p in params]
        for p, g, s in zip(params, grads, self.states):
            p[...] = adam_step(s, p, g)


def make_optimizer(name: str, alpha: float, **kw):
    if name == "sgd":
        return SGD(alpha, **kw)
    if name == "adam":
        return Adam(alpha, **kw)
    raise ValueError(f"unknown optimizer {name!r}")


@dataclass(frozen=True)
class TheoryParams:
    """Constants of the regret analysis: noise level ``sigma``, gradient-mean
    bound ``e``, parameter diameters ``D`` and ``D_inf``, gradient-norm bounds
    ``G`` and ``G_inf``, dimension ``d``, horizon ``T`` and base step ``alpha``
    (scheduled as ``alpha / sqrt(t)``)."""

    sigma: float
    e: float
    D: float
    D_inf: float
    G: float
    G_inf: float
    d: int
    T: int
    alpha: float

    def __post_init__(self):
        for name, value in vars(self).items():
            if not value >= 0:
                raise ValueError(f"{name} must be nonnegative")

    def step_size(self, t: int) -> float:
        if t < 1:
            raise ValueError("step counter starts at 1")
        return self.alpha / math.sqrt(t)


# -- convex test problems ---------------------------------------------------


@dataclass
class QuadraticProblem:
    """``L(theta) = 0.5 * sum(c * (theta - opt)**2)`` with ``c > 0``."""

    curvature: np.ndarray
    optimum: np.ndarray

    def __post_init__(self):
        self.curvature = np.asarray(self.curvature, dtype=np.float64)
        self.optimum = np.asarray(self.optimum, dtype=np.float64)
        if (self.curvature <= 0).any():
            raise ValueError("quadratic must have positive curvature to be convex")

    def loss(self, theta):
        d = theta - self.optimum
        return 0.5 * float(np.sum(self.curvature * d * d))

    def grad(self, theta):
        return self.curvature * (theta - self.optimum)


@dataclass
class LogisticProblem:
    """Ridge-regularized mean logistic loss with labels in {-1, +1}.

    The minimizer is solved by Newton's method to gradient norm <= 1e-10.
    """

    x: np.ndarray
    y: np.ndarray
    ridge: float = 1e-2
    optimum: np.ndarray = field(init=False)

    def __post_init__(self):
        if self.ridge < 0:
            raise ValueError("negative ridge makes the problem non-convex")
        if not np.isin(self.y, (-1, 1)).all():
            raise ValueError("labels must be -1 or +1")
        self.optimum = self._solve()

    def loss(self, theta):
        z = self.y * (self.x @ theta)
        return float(np.mean(np.logaddexp(0.0, -z)) + 0.5 * self.ridge * theta @ theta)

    def grad(self, theta):
        z = self.y * (self.x @ theta)
        s = -self.y * _sigmoid(-z)
        return self.x.T @ s / len(self.y) + self.ridge * theta

    def _solve(self, tol: float = 1e-10, max_iter: int = 100):
        theta = np.zeros(self.x.shape[1])
        for _ in range(max_iter):
            g = self.grad(theta)
            if np.linalg.norm(g) <= tol:
                return theta
            z = self.y * (self.x @ theta)
            w = _sigmoid(z) * _sigmoid(-z)
            hess = (self.x.T * w) @ self.x / len(self.y) + self.ridge * np.eye(len(theta))
            theta = theta - np.linalg.solve(hess, g)
        if np.linalg.norm(self.grad(theta)) > tol:
            raise RuntimeError("Newton solve did not reach the gradient tolerance")
        return theta


def _sigmoid(z):
    return 0.5 * (1.0 + np.tanh(0.5 * z))


# -- gradient noise -----------------------------------------------------------


@dataclass
class GaussianNoise:
    sigma: float

    def __call__(self, g, rng):
        if self.sigma == 0:
            return g
        return g + self.sigma * rng.standard_normal(g.shape)


@dataclass
class DitherNoise:
    """Stochastic rounding onto a randomly offset grid of step ``sigma*sqrt(6)``.

    Unbiased, and the per-coordinate variance is exactly ``sigma**2``.
    """

    sigma: float

    def __call__(self, g, rng):
        if self.sigma == 0:
            return g
        step = self.sigma * math.sqrt(6.0)
        u = rng.random(g.shape)
        x = g / step + u
        lo = np.floor(x)
        return (lo + (rng.random(g.shape) < x - lo) - u) * step


@dataclass
class QuantizerNoise:
    """Per-tensor ``bits``-bit unbiased quantization of the gradient vector."""

    bits: int

    def __call__(self, g, rng):
        q = quantize(np.atleast_2d(g), GroupAxis.PER_TENSOR, self.bits, rng)
        return dequantize(q).reshape(g.shape)


# -- regret ------------------------------------------------------------------


@dataclass
class RegretLedger:
    losses: np.ndarray
    ref_losses: np.ndarray
    cum_regret: np.ndarray

    @property
    def horizon(self) -> int:
        return len(self.losses)

    @property
    def total(self) -> float:
        return float(self.cum_regret[-1]) if self.horizon else 0.0

    def recompute(self) -> np.ndarray:
        return np.cumsum(self.losses - self.ref_losses)

    def tail_rate(self, frac: float = 0.5) -> float:
        """Average regret per step over the last ``frac`` of the horizon."""
        start = int(self.horizon * (1 - frac))
        before = self.cum_regret[start - 1] if start > 0 else 0.0
        return float((self.cum_regret[-1] - before) / (self.horizon - start))

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["t", "loss", "ref_loss", "cum_regret"])
        for t, (a, b, c) in enumerate(zip(self.losses, self.ref_losses, self.cum_regret), 1):
            w.writerow([t, repr(float(a)), repr(float(b)), repr(float(c))])
        return buf.getvalue()


def regret_run(problem, optimizer, noise, horizon: int, rng, theta0=None) -> RegretLedger:
    """Run ``horizon`` noisy-gradient steps and record the regret against the optimum."""
    if not hasattr(problem, "optimum"):
        raise ValueError("problem must expose a known optimum")
    theta = np.array(problem.optimum if theta0 is None else theta0, dtype=np.float64)
    ref = problem.loss(problem.optimum)
    losses = np.empty(horizon)
    cum = np.empty(horizon)
    total = 0.0
    for t in range(horizon):
        losses[t] = problem.loss(theta)
        total += losses[t] - ref
        cum[t] = total
        optimizer.update([theta], [noise(problem.grad(theta), rng)])
    return RegretLedger(losses, np.full(horizon, ref), cum)


def fit_loglog_slope(x, y) -> float:
    """Least-squares slope of ``log y`` against ``log x``."""
    return float(np.polyfit(np.log(x), np.log(y), 1)[0])
