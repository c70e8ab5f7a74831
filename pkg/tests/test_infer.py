import math

import numpy as np
import pytest
from scipy import stats

from mdev.bounds import normal_cdf
from mdev.geometry import affine_image_gauge, ball, ellipsoid
from mdev.infer import (ConfidenceSpec, EstimatorSpec, TestSpec, confidence_miss, estimate, mle_estimate,
                        normal_quantile_x_alpha, np_critical_value, run_np_test, run_score_test, run_test,
                        score_one_step, score_test_statistic)
from mdev.model import Grid, eval_signal
from mdev.simulate import NoiseStream, simulate_batch, simulate_observation, stream_base, stream_ids

from mcutil import mc_within


def batch(model, theta, eps, n_grid, m, label):
    return simulate_batch(model, theta, eps, Grid(n_grid), 3, stream_ids(stream_base(label), 0, m))


def noiseless(model, theta, grid):
    return simulate_observation(model, theta, 0.0, grid, NoiseStream(0, 0), allow_zero_noise=True)


def test_quantile_examples():
    assert normal_quantile_x_alpha(0.5) == 0.0
    assert normal_quantile_x_alpha(0.05) == pytest.approx(-1.64485, abs=1e-5)
    for a in (1e-8, 1e-4, 0.05, 0.5):
        assert float(normal_cdf(normal_quantile_x_alpha(a))) == pytest.approx(a, rel=1e-12)
    with pytest.raises(ValueError):
        normal_quantile_x_alpha(1.0)


def test_spec_validation():
    with pytest.raises(ValueError):
        TestSpec(0.0, 0.1, 0.0)
    with pytest.raises(ValueError):
        TestSpec(0.0, -0.1, 0.05)
    with pytest.raises(ValueError):
        TestSpec(0.0, 0.0, 0.05, kind="neyman_pearson")
    with pytest.raises(ValueError):
        TestSpec(0.0, 0.1, 0.05, kind="wald")
    with pytest.raises(ValueError):
        EstimatorSpec(kind="bayes")
    with pytest.raises(ValueError):
        ConfidenceSpec(ball(2), 0.0)
    assert TestSpec(1.0, 0.25, 0.1).theta_alt == 1.25


def test_score_test_level(linear):
    spec = TestSpec(0.0, 0.1, 0.05)
    rej = run_score_test(batch(linear, 0.0, 0.02, 16, 100_000, "level"), spec, linear)
    assert abs(rej.mean() - 0.05) <= 3 * math.sqrt(0.05 * 0.95 / 100_000)


def test_score_test_level_off_origin(linear):
    # centering by the null mean keeps the level exact when theta0 != 0
    spec = TestSpec(2.0, 0.1, 0.1)
    rej = run_score_test(batch(linear, 2.0, 0.05, 16, 50_000, "level2"), spec, linear)
    assert mc_within(rej, 0.1, k=4)


def test_score_test_noiseless_never_rejects(linear, sine, grid):
    for model, th in ((linear, 0.5), (sine, 1.0)):
        assert not run_score_test(noiseless(model, th, grid), TestSpec(th, 0.1, 0.2), model)


def test_score_test_power(linear):
    eps, u, alpha = 0.02, 0.05, 0.05
    spec = TestSpec(0.0, u, alpha)
    rej = run_score_test(batch(linear, u, eps, 16, 50_000, "power"), spec, linear)
    assert mc_within(rej, stats.norm.cdf(normal_quantile_x_alpha(alpha) + u / eps))


def test_np_equals_score_on_linear(linear):
    obs = batch(linear, 0.03, 0.02, 64, 5000, "np-eq")
    for alpha in (0.001, 0.05, 0.3):
        score = TestSpec(0.0, 0.05, alpha)
        np_spec = TestSpec(0.0, 0.05, alpha, kind="neyman_pearson")
        assert np.array_equal(run_test(obs, score, linear), run_test(obs, np_spec, linear))


def test_np_critical_value_level(sine):
    eps = 0.05
    spec = TestSpec(1.0, 0.2, 0.05, kind="neyman_pearson")
    rej = run_np_test(batch(sine, 1.0, eps, 64, 50_000, "np-level"), spec, sine)
    # the likelihood ratio is exactly Gaussian for any signal family
    assert mc_within(rej, 0.05)
    assert np.isfinite(np_critical_value(spec, sine, eps, Grid(64)))


def test_rejections_monotone_in_alpha(linear):
    obs = batch(linear, 0.02, 0.02, 32, 5000, "mono")
    prev = None
    for alpha in (0.4, 0.1, 0.01, 1e-4):
        rej = run_score_test(obs, TestSpec(0.0, 0.05, alpha), linear)
        if prev is not None:
            assert np.all(prev | ~rej)
        prev = rej


def test_tests_need_scalar_parameter(ortho, grid):
    obs = noiseless(ortho, [0, 0], grid)
    with pytest.raises(ValueError):
        run_score_test(obs, TestSpec(0.0, 0.1, 0.05), ortho)


def test_mle_linear_closed_form(linear):
    g = Grid(256)
    phi = eval_signal(linear, 1.0, g)
    spec = EstimatorSpec("mle", [0.0], search_box=(-3.0, 3.0))
    for sid in range(5):
        obs = simulate_observation(linear, 0.8, 0.1, g, NoiseStream(4, sid))
        closed = (obs.increments @ phi) / np.dot(g.weights, phi * phi)
        res = mle_estimate(obs, linear, spec)
        assert abs(res.theta[0] - closed) < 1e-8 and not res.boundary_hit
        assert score_one_step(obs, linear, [0.0])[0] == pytest.approx(closed, abs=1e-12)


def test_mle_noiseless_recovers_truth(sine, ortho):
    g = Grid(256)
    res = mle_estimate(noiseless(sine, 1.7, g), sine, EstimatorSpec("mle", [1.0], search_box=(0.0, 3.0)))
    assert res.theta[0] == pytest.approx(1.7, abs=1e-6)
    res2 = mle_estimate(noiseless(ortho, [0.4, -1.2], g), ortho, EstimatorSpec("mle", [0, 0], (-2.0, 2.0)))
    assert np.allclose(res2.theta, [0.4, -1.2], atol=1e-6)


def test_mle_boundary_flag(linear):
    g = Grid(64)
    res = mle_estimate(noiseless(linear, 2.5, g), linear, EstimatorSpec("mle", [0.0], search_box=(-1.0, 1.0)))
    assert res.boundary_hit and res.theta[0] == pytest.approx(1.0)
    with pytest.raises(ValueError):
        mle_estimate(noiseless(linear, 0.0, g), linear, EstimatorSpec("mle", [0.0], search_box=(-20.0, 1.0)))


def test_one_step_noiseless_and_equivariant(linear, ortho, grid):
    assert score_one_step(noiseless(ortho, [0.3, 0.1], grid), ortho, [0.3, 0.1]) == pytest.approx([0.3, 0.1])
    c = 0.75
    for sid in range(3):
        noise = NoiseStream(8, sid)
        a = score_one_step(simulate_observation(linear, 0.2, 0.1, grid, noise), linear, [0.1])
        b = score_one_step(simulate_observation(linear, 0.2 + c, 0.1, grid, noise), linear, [0.1 + c])
        assert b[0] - a[0] == pytest.approx(c, abs=1e-12)


def test_one_step_law_sine(sine):
    eps = 0.01
    est = score_one_step(batch(sine, 1.0, eps, 64, 20_000, "os-law"), sine, [1.0])[:, 0]
    info = np.sum((Grid(64).nodes * np.cos(Grid(64).nodes)) ** 2) / 64
    # centered at the truth with variance eps^2 / I to first order
    assert mc_within(est, 1.0)
    assert est.var() == pytest.approx(eps ** 2 / info, rel=0.05)


def test_estimate_dispatch_and_inflate(linear):
    obs = batch(linear, 0.5, 0.1, 64, 4, "dispatch")
    one = estimate(obs, linear, EstimatorSpec("score_one_step", [0.5]))
    mle = estimate(obs, linear, EstimatorSpec("mle", [0.5], search_box=(-2.0, 3.0)))
    assert one.shape == (4, 1) and np.allclose(one, mle, atol=1e-8)
    wide = estimate(obs, linear, EstimatorSpec("score_one_step", [0.5], inflate=2.0))
    assert np.allclose(wide - 0.5, 2 * (one - 0.5))


def test_confidence_miss_examples(ortho, grid):
    spec = ConfidenceSpec(ball(2), 0.1)
    assert not confidence_miss([0.2, 0.3], [0.2, 0.3], ortho, spec, [0.2, 0.3], grid=grid)
    assert not confidence_miss([0.3, 0.0], [0.2, 0.0], ortho, spec, [0.0, 0.0], grid=grid)
    assert confidence_miss([0.31, 0.0], [0.2, 0.0], ortho, spec, [0.0, 0.0], grid=grid)
    est = ConfidenceSpec(ball(2), 0.1, standardize_at="estimated")
    assert not confidence_miss([[0.25, 0.0]], [0.2, 0.0], ortho, est, [0.0, 0.0], grid=grid)[0]


def test_confidence_miss_rate(ortho):
    eps, u = 0.05, 0.1  # r = 2
    g = Grid(32)
    ests = score_one_step(batch(ortho, [0.0, 0.0], eps, 32, 50_000, "miss"), ortho, [0.0, 0.0])
    miss = confidence_miss(ests, [0.0, 0.0], ortho, ConfidenceSpec(ball(2), u), [0.0, 0.0], grid=g)
    assert mc_within(miss, math.exp(-(u / eps) ** 2 / 2))


def test_confidence_miss_linear_invariance(ortho, grid):
    m = np.array([[1.5, 0.4], [0.0, 0.7]])
    omega = ellipsoid([1.0, 2.0])
    rng = np.random.default_rng(5)
    dev = rng.normal(size=(500, 2)) * 0.1
    base = confidence_miss(dev, np.zeros(2), ortho, ConfidenceSpec(omega, 0.12), [0, 0], grid=grid)
    mapped = confidence_miss(dev @ m.T, np.zeros(2), ortho,
                             ConfidenceSpec(affine_image_gauge(omega, np.linalg.inv(m)), 0.12), [0, 0], grid=grid)
    assert np.array_equal(base, mapped)


def test_score_statistic_standard_normal(sine):
    z = score_test_statistic(batch(sine, 1.0, 0.05, 64, 20_000, "std"), sine, 1.0)
    assert stats.kstest(z, "norm").pvalue > 0.01
