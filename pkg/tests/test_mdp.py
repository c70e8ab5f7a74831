import math
from dataclasses import dataclass

import mpmath as mp
import numpy as np
import pytest
from scipy import integrate, stats

from mdev import bounds
from mdev.geometry import ball, cube, ellipsoid
from mdev.infer import EstimatorSpec, TestSpec
from mdev.mdp import (LowESSWarning, _test_mean_fn, MCConfig, boundary_parameter, bound_comparison_run,
                      estimate_error_probs, estimate_miss_prob, gauss_exceedance, lemma1_tail_ratio,
                      reduce_weighted, theorem4_lattice, tilted_path_probability)
from mdev.model import Grid
from mdev.simulate import statistic_T

from mcutil import within_se

mp.mp.dps = 30
PHI = lambda x: float(mp.ncdf(x))


def cfg(n_rep=20_000, grid_n=16, **kw):
    return MCConfig(n_rep=n_rep, grid_n=grid_n, seed=kw.pop("seed", 99), **kw)


@dataclass
class Sched:
    eps_list: tuple
    a: float = 1.0
    delta: float = 0.8

    def u(self, eps):
        return self.a * eps ** self.delta


def test_config_checks():
    with pytest.raises(ValueError):
        MCConfig(n_rep=50)
    with pytest.raises(ValueError):
        MCConfig(seed=-1)


def test_reduce_weighted_basics():
    hit = np.array([True, False, True, True])
    est = reduce_weighted(hit, np.log([0.5, 9.0, 0.5, 0.5]))
    assert est.p_hat == pytest.approx(0.375) and est.hits == 3
    assert est.ess == pytest.approx(3.0) and est.ess <= est.n_rep
    assert est.se >= est.p_hat / 2  # floor p / sqrt(n)
    none = reduce_weighted(np.zeros(5, bool), np.zeros(5))
    assert none.p_hat == 0.0 and none.log_p == -math.inf


def test_reduce_weighted_clamps():
    with pytest.warns(LowESSWarning):
        est = reduce_weighted(np.ones(200, bool), np.r_[np.log(3000.0), np.zeros(199)])
    assert est.clamped and est.p_hat == 1.0 and est.low_ess


def test_error_probs_linear_asymmetric(linear):
    # x = 5, alpha = Phi(-2.5): beta = Phi(-2.5)
    spec = TestSpec(0.0, 0.1, PHI(-2.5))
    a, b = estimate_error_probs(linear, spec, 0.02, cfg())
    assert within_se(a, PHI(-2.5)) and within_se(b, PHI(-2.5))


def test_error_probs_symmetric_phi5(linear):
    spec = TestSpec(0.0, 0.2, PHI(-5), kind="neyman_pearson")
    a, b = estimate_error_probs(linear, spec, 0.02, cfg(n_rep=100_000))
    truth = 2.8665157187919333e-07
    assert PHI(-5) == pytest.approx(truth, rel=1e-12)
    assert within_se(a, truth) and within_se(b, truth)


def test_degenerate_alternative_complement(linear):
    spec = TestSpec(0.0, 0.0, 0.3)
    a, acc = estimate_error_probs(linear, spec, 0.05, cfg(n_rep=20_000, tilt="none"))
    assert abs(a.p_hat + acc.p_hat - 1) <= 3 * math.hypot(a.se, acc.se)


def test_boundary_parameter_on_threshold(linear, sine):
    spec = TestSpec(0.0, 0.1, 0.01)
    assert boundary_parameter(linear, spec, 0.02, Grid(64)) == pytest.approx(-0.02 * stats.norm.ppf(0.01))
    np_spec = TestSpec(1.0, 0.1, 0.01, "neyman_pearson")
    tb = boundary_parameter(sine, np_spec, 0.02, Grid(64))
    mean, crit = _test_mean_fn(sine, np_spec, 0.02, Grid(64))
    assert tb > 1.0 and mean(np.array([tb])) == pytest.approx(crit, abs=1e-9)


@pytest.mark.parametrize("tilt", ["boundary", "swap", [0.08]])
def test_tilt_invariance(linear, tilt):
    spec = TestSpec(0.0, 0.1, PHI(-2.5))
    ref_a, ref_b = estimate_error_probs(linear, spec, 0.02, cfg(tilt=[0.05], seed=5))
    a, b = estimate_error_probs(linear, spec, 0.02, cfg(tilt=tilt))
    assert abs(a.p_hat - ref_a.p_hat) <= 4 * math.hypot(a.se, ref_a.se)
    assert abs(b.p_hat - ref_b.p_hat) <= 4 * math.hypot(b.se, ref_b.se)


def test_unbiased_over_seeds(linear):
    # P_0(T > 3 eps) with the boundary tilt, 50 independent seeds
    spec = TestSpec(0.0, 0.1, PHI(-3))
    truth = PHI(-3)
    ok = 0
    for seed in range(50):
        a, _ = estimate_error_probs(linear, spec, 0.02, MCConfig(n_rep=1000, grid_n=4, seed=seed))
        ok += abs(a.p_hat - truth) <= 4 * a.se
    assert ok >= 0.99 * 50


@pytest.mark.parametrize("x", [2.0, 5.0, 8.0])
def test_boundary_tilt_ess(linear, x):
    eps = 0.01
    spec = TestSpec(0.0, 2 * x * eps, PHI(-x), kind="neyman_pearson")
    a, _ = estimate_error_probs(linear, spec, eps, cfg(n_rep=10_000))
    assert a.ess >= 0.05 * a.n_rep
    assert within_se(a, PHI(-x))


def test_low_ess_flagged(linear):
    spec = TestSpec(0.0, 0.2, PHI(-5))
    with pytest.warns(LowESSWarning):
        a, _ = estimate_error_probs(linear, spec, 0.02, cfg(n_rep=2000, tilt=[0.4]))
    assert a.low_ess


def test_plain_mc_matches_truth(linear):
    eps = 0.05
    hit = lambda obs: statistic_T(obs, linear, 0.0)[:, 0] > eps
    p = tilted_path_probability(linear, [0.0], [], hit, eps, cfg(n_rep=20_000), "plain")
    assert within_se(p, PHI(-1)) and p.ess == p.hits


def test_miss_prob_linear_x5(linear):
    est = EstimatorSpec("score_one_step", [0.0])
    m = estimate_miss_prob(linear, est, [0.0], 0.1, 0.02, cfg(n_rep=50_000))
    assert within_se(m, 2 * PHI(-5))
    assert 2 * PHI(-5) == pytest.approx(5.733e-7, rel=1e-4)


def test_miss_prob_plain_vs_tilted(linear):
    est = EstimatorSpec("score_one_step", [0.0])
    tilted = estimate_miss_prob(linear, est, [0.3], 0.05, 0.05, cfg())
    plain = estimate_miss_prob(linear, est, [0.3], 0.05, 0.05, cfg(tilt="none", seed=3))
    assert abs(tilted.p_hat - plain.p_hat) <= 3 * math.hypot(tilted.se, plain.se)
    assert within_se(tilted, 2 * PHI(-1))


def test_miss_prob_ball_r5(ortho):
    est = EstimatorSpec("score_one_step", [0.0, 0.0])
    m = estimate_miss_prob(ortho, est, [0.0, 0.0], 0.1, 0.02, cfg(n_rep=50_000), omega=ball(2))
    assert within_se(m, math.exp(-12.5))


def test_miss_prob_needs_body(ortho):
    with pytest.raises(ValueError):
        estimate_miss_prob(ortho, EstimatorSpec("score_one_step", [0, 0]), [0, 0], 0.1, 0.02, cfg())


def test_exceedance_ball_exact():
    c = cfg()
    assert gauss_exceedance(ball(2), 3.0, c).p_hat == pytest.approx(math.exp(-4.5), rel=1e-12)
    assert gauss_exceedance(ball(1), 4.0, c).p_hat == pytest.approx(6.334248366623996e-05, rel=1e-9)
    assert gauss_exceedance(ball(3), 1e-6, c).p_hat == pytest.approx(1.0)
    with pytest.raises(ValueError):
        gauss_exceedance(ball(2), 0.0, c)


def _ellipse_exceed(a, b, r):
    # P(z1^2/a^2 + z2^2/b^2 > r^2) by one-dimensional quadrature
    inner = lambda z: stats.norm.pdf(z) * 2 * stats.norm.sf(b * math.sqrt(max(r * r - (z / a) ** 2, 0.0)))
    val, _ = integrate.quad(inner, -a * r, a * r, epsabs=1e-15, epsrel=1e-12, limit=200)
    return val + 2 * stats.norm.sf(a * r)


def test_exceedance_ellipsoid_vs_quadrature():
    oracle = _ellipse_exceed(1.0, 2.0, 3.0)
    est = gauss_exceedance(ellipsoid([1.0, 2.0]), 3.0, MCConfig(n_rep=20_000, seed=4))
    assert within_se(est, oracle)


def test_exceedance_cube_exact():
    r = 3.5
    truth = 1 - (1 - 2 * stats.norm.sf(r)) ** 2
    assert within_se(gauss_exceedance(cube(2), r, MCConfig(n_rep=20_000, seed=1)), truth)


def test_exceedance_vanishing_body():
    est = gauss_exceedance(ellipsoid([1.0, 2.0]), 1e-4, MCConfig(n_rep=2000, seed=1))
    assert est.p_hat == pytest.approx(1.0, abs=1e-3)


def test_lemma1_examples():
    for c in (0.5, 3.0, 10.0):
        assert lemma1_tail_ratio(0.0, 0.0, c) == 1.0
    oracle = mp.ncdf(-3) / mp.ncdf(-3 / mp.sqrt(1.003))
    assert lemma1_tail_ratio(0.001, 0.001, 3.0) == pytest.approx(float(oracle), rel=1e-12)
    gaps = [abs(lemma1_tail_ratio(g, g, 3.0) - 1) for g in (4e-2, 1e-2, 2.5e-3, 6.25e-4)]
    factors = np.array(gaps[:-1]) / np.array(gaps[1:])
    assert np.all((factors > 3) & (factors < 5))


def test_lemma1_domain():
    with pytest.raises(ValueError):
        lemma1_tail_ratio(0.01, 0.5, 3.0)
    with pytest.raises(ValueError):
        lemma1_tail_ratio(-1.0, 0.0, 3.0)
    with pytest.raises(ValueError):
        lemma1_tail_ratio(0.0, 0.0, 0.0)


def test_theorem4_lattice_inside_window():
    pts = theorem4_lattice(1.0, 0.1, 0.01)
    c = math.log(100)
    assert len(pts) == 9 and pts[4] == 1.0
    assert np.all(np.abs(pts - 1.0) < c * 0.1)


def test_run_empty_schedule(linear):
    assert bound_comparison_run(linear, Sched(()), cfg()) == []


def test_run_theorem3_equality(linear):
    reps = bound_comparison_run(linear, Sched((0.05, 0.02, 0.01)), cfg(n_rep=20_000), "T3")
    for r in reps:
        rel = r.se_combined / r.ratio_or_gap
        assert abs(r.ratio_or_gap - 1) <= 3 * rel and r.meets_bound


def test_run_theorem1_decreasing(linear):
    reps = bound_comparison_run(linear, Sched((0.05, 0.01, 0.002)), cfg(n_rep=20_000), "T1")
    ratios = [r.ratio_or_gap for r in reps]
    assert all(r.meets_bound for r in reps)
    assert ratios[0] > ratios[1] > ratios[2] > 1


def test_run_records_cell_errors(ortho, linear):
    reps = bound_comparison_run(ortho, Sched((0.05, 0.02)), cfg(), "T1")
    assert len(reps) == 2 and all(r.error and not r.meets_bound for r in reps)
    with pytest.raises(ValueError):
        bound_comparison_run(linear, Sched((0.05,)), cfg(), "T7")


def test_run_theorem5_ball(ortho):
    reps = bound_comparison_run(ortho, Sched((0.05,), a=0.16, delta=1.0), cfg(n_rep=10_000), "T5",
                                omega=ball(2))
    assert reps[0].meets_bound and abs(reps[0].ratio_or_gap - 1) < 4 * reps[0].se_combined


def test_theorem5_inflated_estimator(ortho):
    # doubling the estimator noise: P(|2 zeta| > r) / P(|zeta| > r) = exp(3 r^2 / 8)
    r, eps = 3.0, 0.02
    est = EstimatorSpec("score_one_step", [0.0, 0.0], inflate=2.0)
    m = estimate_miss_prob(ortho, est, [0.0, 0.0], r * eps, eps, cfg(n_rep=10_000, tilt="none"), omega=ball(2))
    ratio = bounds.theorem5_ratio(m, gauss_exceedance(ball(2), r, cfg()))
    assert ratio > 1
    assert abs(ratio - math.exp(3 * r * r / 8)) <= 3 * m.rel_se * ratio
