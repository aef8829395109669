import math

import numpy as np
import pytest
from hypothesis import assume, given
from hypothesis import strategies as st

from bitfqt.optim import (
    SGD,
    Adam,
    AdamState,
    DitherNoise,
    GaussianNoise,
    LogisticProblem,
    QuadraticProblem,
    QuantizerNoise,
    RegretLedger,
    TheoryParams,
    adam_step,
    fit_loglog_slope,
    make_optimizer,
    regret_run,
    sgd_step,
)
from bitfqt.rng import make_rng


def test_sgd_examples():
    theta = np.array([1.0, -2.0])
    np.testing.assert_array_equal(sgd_step(theta, np.zeros(2), 5, 0.3), theta)
    np.testing.assert_array_equal(sgd_step(theta, np.array([1.0, 1.0]), 1, 0.5), [0.5, -2.5])
    with pytest.raises(ValueError):
        sgd_step(theta, theta, 0, 0.1)


def test_sgd_hand_iteration_on_square():
    theta, hand = np.array([1.0]), 1.0
    prev = 1.0
    for t in range(1, 101):
        theta = sgd_step(theta, 2 * theta, t, 0.1)
        hand = hand - 0.1 / math.sqrt(t) * 2 * hand
        assert theta[0] == hand
        assert abs(hand) < prev
        prev = abs(hand)


def test_adam_first_step_is_signed_alpha():
    s = AdamState.zeros(3, alpha=0.01)
    g = np.array([3.0, -0.2, 1e-3])
    out = adam_step(s, np.zeros(3), g)
    np.testing.assert_allclose(out, -0.01 * np.sign(g), rtol=1e-4)


def test_adam_zero_gradient_keeps_theta():
    s = AdamState.zeros(2)
    theta = np.array([0.5, -1.0])
    for _ in range(20):
        theta = adam_step(s, theta, np.zeros(2))
    np.testing.assert_array_equal(theta, [0.5, -1.0])


@pytest.mark.parametrize("lam,schedule", [(1.0, "constant"), (0.9, "constant"), (0.99, "inv_sqrt")])
def test_adam_matches_hand_roll(lam, schedule):
    a, b1, b2, eps = 0.05, 0.9, 0.999, 1e-8
    s = AdamState.zeros(1, alpha=a, beta1=b1, beta2=b2, lam=lam, eps=eps, schedule=schedule)
    theta = np.array([1.0])
    th, m, v = 1.0, 0.0, 0.0
    for t in range(1, 11):
        g = 2 * th + 0.1 * t
        theta = adam_step(s, theta, np.array([g]))
        b1t = b1 * lam ** (t - 1)
        m = b1t * m + (1 - b1t) * g
        v = b2 * v + (1 - b2) * g * g
        mh = m / (1 - b1**t)
        vh = v / (1 - b2**t)
        lr = a / math.sqrt(t) if schedule == "inv_sqrt" else a
        th = th - lr * mh / (math.sqrt(vh) + eps)
        assert abs(theta[0] - th) <= 1e-12
    assert s.t == 10 and (s.v >= 0).all()


@given(st.floats(1e-3, 1e3), st.integers(0, 2**32))
def test_adam_first_step_scale_equivariant(c, seed):
    g = make_rng(seed).standard_normal(5)
    # the update is -alpha g / (|g| + eps): eps shifts it by about alpha eps / |g|
    assume(np.abs(g).min() > 1e-4)
    u1 = adam_step(AdamState.zeros(5), np.zeros(5), g)
    u2 = adam_step(AdamState.zeros(5), np.zeros(5), c * g)
    np.testing.assert_array_equal(np.sign(u1), np.sign(u2))
    np.testing.assert_allclose(u1, u2, rtol=0, atol=1e-6)


def test_adam_state_validation():
    with pytest.raises(ValueError):
        AdamState.zeros(1, beta1=1.0)
    with pytest.raises(ValueError):
        AdamState.zeros(1, lam=0.0)
    with pytest.raises(ValueError):
        AdamState.zeros(1, schedule="cosine")
    with pytest.raises(ValueError):
        AdamState.zeros(1, check_theory=True, beta1=0.99, beta2=0.9)
    AdamState.zeros(1, check_theory=True)


def test_optimizer_wrappers_update_in_place():
    p = [np.ones(2), np.zeros((2, 2))]
    g = [np.ones(2), np.ones((2, 2))]
    SGD(0.5, schedule="constant").update(p, g)
    np.testing.assert_array_equal(p[0], [0.5, 0.5])
    opt = make_optimizer("adam", 0.1)
    ids = [id(a) for a in p]
    opt.update(p, g)
    assert [id(a) for a in p] == ids and len(opt.states) == 2
    with pytest.raises(ValueError):
        make_optimizer("rmsprop", 0.1)
    with pytest.raises(ValueError):
        SGD(0.1, schedule="warmup")


def test_quadratic_and_logistic_problems(rng):
    with pytest.raises(ValueError):
        QuadraticProblem(np.array([1.0, -1.0]), np.zeros(2))
    x = rng.standard_normal((200, 3))
    y = np.where(x @ np.array([1.0, -2.0, 0.5]) + 0.3 * rng.standard_normal(200) > 0, 1, -1)
    prob = LogisticProblem(x, y, ridge=1e-2)
    assert np.linalg.norm(prob.grad(prob.optimum)) <= 1e-10
    theta = rng.standard_normal(3)
    eps = 1e-6
    fd = [(prob.loss(theta + eps * e) - prob.loss(theta - eps * e)) / (2 * eps) for e in np.eye(3)]
    np.testing.assert_allclose(prob.grad(theta), fd, rtol=1e-6, atol=1e-8)
    with pytest.raises(ValueError):
        LogisticProblem(x, (y + 1) // 2)
    with pytest.raises(ValueError):
        LogisticProblem(x, y, ridge=-1.0)


@pytest.mark.parametrize("noise", [GaussianNoise(0.7), DitherNoise(0.7)])
def test_noise_is_unbiased_with_variance_sigma_squared(noise, rng):
    g = np.full(200_000, 0.3)
    out = noise(g, rng)
    assert abs(out.mean() - 0.3) < 4 * 0.7 / math.sqrt(g.size)
    assert abs(out.var() - 0.49) < 0.01


def test_zero_noise_is_identity(rng):
    g = rng.standard_normal(4)
    assert GaussianNoise(0.0)(g, rng) is g and DitherNoise(0.0)(g, rng) is g
    q = QuantizerNoise(8)(g, rng)
    assert q.shape == g.shape and np.abs(q - g).max() <= np.ptp(g) / 255 + 1e-12


def test_regret_zero_noise_at_optimum_is_zero(rng):
    prob = QuadraticProblem(np.ones(4), np.zeros(4))
    for opt in (SGD(0.1), Adam(0.1)):
        ledger = regret_run(prob, opt, GaussianNoise(0.0), 100, rng)
        assert ledger.total == 0.0


def test_regret_noiseless_rate_goes_to_zero(rng):
    prob = QuadraticProblem(np.array([1.0, 2.0]), np.array([0.5, -0.5]))
    ledger = regret_run(prob, SGD(0.3), GaussianNoise(0.0), 2000, rng, theta0=np.array([3.0, 3.0]))
    rate = ledger.cum_regret / np.arange(1, 2001)
    assert rate[-1] < rate[100] < rate[10]
    assert np.all(np.diff(ledger.cum_regret) >= 0)


def test_regret_ledger_recompute_and_csv(rng):
    prob = QuadraticProblem(np.ones(3), np.ones(3))
    ledger = regret_run(prob, Adam(0.05), GaussianNoise(0.5), 300, rng)
    np.testing.assert_array_equal(ledger.recompute(), ledger.cum_regret)
    lines = ledger.to_csv().splitlines()
    assert lines[0] == "t,loss,ref_loss,cum_regret"
    assert len(lines) == 301
    t, loss, ref, cum = lines[-1].split(",")
    assert int(t) == 300 and float(cum) == ledger.total and float(ref) == 0.0
    assert ledger.tail_rate(1.0) == ledger.total / 300


def test_regret_run_is_reproducible():
    prob = QuadraticProblem(np.ones(3), np.zeros(3))
    a = regret_run(prob, SGD(0.1), DitherNoise(1.0), 200, make_rng(4))
    b = regret_run(prob, SGD(0.1), DitherNoise(1.0), 200, make_rng(4))
    assert a.to_csv() == b.to_csv()


def test_regret_requires_known_optimum(rng):
    class NoOpt:
        def loss(self, t):
            return 0.0

    with pytest.raises(ValueError):
        regret_run(NoOpt(), SGD(0.1), GaussianNoise(0.0), 5, rng)


def test_fit_slope():
    x = np.array([0.1, 1.0, 10.0])
    assert math.isclose(fit_loglog_slope(x, 3 * x**2), 2.0)


def test_theory_params():
    p = TheoryParams(1.0, 0.1, 2.0, 1.0, 3.0, 1.0, 10, 100, 0.5)
    assert p.step_size(4) == 0.25
    with pytest.raises(ValueError):
        TheoryParams(-1.0, 0.1, 2.0, 1.0, 3.0, 1.0, 10, 100, 0.5)
    with pytest.raises(ValueError):
        p.step_size(0)
