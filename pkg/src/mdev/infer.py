"""Tests, estimators and confidence-set membership for the white-noise model."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .bounds import normal_quantile
from .geometry import OmegaSet
from .model import Grid, SignalModel, eval_score, eval_signal, fisher_information, rho_distance
from .simulate import Observation, log_likelihood_ratio, stochastic_integral

TEST_KINDS = ("score_T", "neyman_pearson")
ESTIMATOR_KINDS = ("mle", "score_one_step")
GOLDEN = (math.sqrt(5) - 1) / 2


def normal_quantile_x_alpha(alpha: float) -> float:
    """``x`` with ``Phi(x) = alpha``; negative below the median."""
    return float(normal_quantile(alpha))


@dataclass
class TestSpec:
    theta0: float
    u_eps: float
    alpha: float
    kind: str = "score_T"

    __test__ = False  # not a pytest class

    def __post_init__(self):
        if not 0 < self.alpha < 1:
            raise ValueError("alpha must lie in (0, 1)")
        if self.kind not in TEST_KINDS:
            raise ValueError(f"unknown test kind {self.kind!r}")
        # u_eps = 0 is only meaningful for the score test (degenerate alternative)
        if self.u_eps < 0 or (self.u_eps == 0 and self.kind == "neyman_pearson"):
            raise ValueError("u_eps must be positive")

    @property
    def theta_alt(self) -> float:
        return self.theta0 + self.u_eps


@dataclass
class EstimatorSpec:
    kind: str = "score_one_step"
    theta_init: np.ndarray = field(default_factory=lambda: np.zeros(1))
    search_box: Optional[tuple] = None
    inflate: float = 1.0  # >1 scales the estimator's deviation from theta_init (deliberately inefficient)

    def __post_init__(self):
        if self.kind not in ESTIMATOR_KINDS:
            raise ValueError(f"unknown estimator {self.kind!r}")
        self.theta_init = np.atleast_1d(np.asarray(self.theta_init, dtype=float))


@dataclass
class ConfidenceSpec:
    omega: OmegaSet
    u_eps: float
    standardize_at: str = "theta0_known"

    def __post_init__(self):
        if not self.u_eps > 0:
            raise ValueError("u_eps must be positive")
        if self.standardize_at not in ("theta0_known", "estimated"):
            raise ValueError("standardize_at is 'theta0_known' or 'estimated'")


def _one_dim(model):
    if model.dim != 1:
        raise ValueError("tests are defined for a one-dimensional parameter")


def score_test_statistic(obs: Observation, model: SignalModel, theta0, fisher=None):
    """Standardized score ``(T - E_theta0 T) / eps``; exactly N(0, 1) under theta0.

    For signals ``theta * phi(t)`` the null mean is ``theta0 * sqrt(I)``.
    """
    fisher = fisher or fisher_information(model, theta0, obs.grid)
    score = eval_score(model, theta0, obs.grid)[0]
    k = fisher.inv_sqrt[0, 0]
    null_mean = k * float(np.dot(obs.grid.weights, score * eval_signal(model, theta0, obs.grid)))
    centered = k * stochastic_integral(obs, score) - null_mean
    if obs.epsilon == 0:  # noiseless oracle paths
        return np.sign(centered) * np.where(centered == 0, 0.0, np.inf)
    return centered / obs.epsilon


def run_score_test(obs: Observation, spec: TestSpec, model: SignalModel):
    """Reject when the standardized score reaches the upper-alpha normal point."""
    _one_dim(model)
    stat = score_test_statistic(obs, model, spec.theta0)
    return stat >= -normal_quantile_x_alpha(spec.alpha)


def np_critical_value(spec: TestSpec, model: SignalModel, epsilon: float, grid) -> float:
    rho = rho_distance(model, spec.theta_alt, spec.theta0, grid)
    return -rho ** 2 / (2 * epsilon ** 2) - normal_quantile_x_alpha(spec.alpha) * rho / epsilon


def run_np_test(obs: Observation, spec: TestSpec, model: SignalModel):
    _one_dim(model)
    llr = log_likelihood_ratio(obs, model, spec.theta_alt, spec.theta0)
    return llr >= np_critical_value(spec, model, obs.epsilon, obs.grid)


def run_test(obs, spec, model):
    return (run_score_test if spec.kind == "score_T" else run_np_test)(obs, spec, model)


@dataclass
class MLEResult:
    theta: np.ndarray
    boundary_hit: bool


def _loglik(model, obs, theta):
    # log-likelihood up to a theta-free constant, times eps^2
    s = eval_signal(model, theta, obs.grid)
    return float(obs.increments @ s) - 0.5 * float(np.dot(obs.grid.weights, s * s))


def _golden_max(f, a, b, tol):
    c, d = b - GOLDEN * (b - a), a + GOLDEN * (b - a)
    fc, fd = f(c), f(d)
    while b - a > tol:
        if fc >= fd:
            b, d, fd = d, c, fc
            c = b - GOLDEN * (b - a)
            fc = f(c)
        else:
            a, c, fc = c, d, fd
            d = a + GOLDEN * (b - a)
            fd = f(d)
    return 0.5 * (a + b)


def _polish(f, x, lo, hi, h=1e-4):
    # one parabolic step; exact for quadratic objectives
    if x - h < lo or x + h > hi:
        return x
    fm, f0, fp = f(x - h), f(x), f(x + h)
    curv = fp - 2 * f0 + fm
    if curv >= 0:
        return x
    step = -h * (fp - fm) / (2 * curv)
    return x + step if abs(step) < h else x


def mle_estimate(obs: Observation, model: SignalModel, spec: EstimatorSpec,
                 tol: float = 1e-10) -> MLEResult:
    """Maximize the likelihood over the search box: 64-point scan, then golden section.

    Two-dimensional models use coordinate-wise golden section.
    """
    if obs.batch:
        raise ValueError("mle_estimate takes a single path; loop over a batch")
    if model.dim > 2:
        raise ValueError("mle_estimate supports d <= 2")
    lo, hi = (np.asarray(v, dtype=float) for v in (spec.search_box or (model.lower, model.upper)))
    lo, hi = np.broadcast_to(lo, (model.dim,)), np.broadcast_to(hi, (model.dim,))
    if np.any(lo < model.lower) or np.any(hi > model.upper):
        raise ValueError("search box must lie inside the model domain")
    axes = [np.linspace(lo[k], hi[k], 64) for k in range(model.dim)]
    mesh = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, model.dim)
    vals = [_loglik(model, obs, th) for th in mesh]
    best = mesh[int(np.argmax(vals))].copy()
    steps = [(hi[k] - lo[k]) / 63 for k in range(model.dim)]

    for _ in range(50):
        prev = best.copy()
        for k in range(model.dim):
            a, b = max(lo[k], best[k] - steps[k]), min(hi[k], best[k] + steps[k])

            def f(v, k=k):
                th = best.copy()
                th[k] = v
                return _loglik(model, obs, th)

            best[k] = _polish(f, _golden_max(f, a, b, tol), lo[k], hi[k])
        if model.dim == 1 or np.max(np.abs(best - prev)) < tol:
            break
        steps = [max(abs(best[k] - prev[k]) * 4, 1e-6) for k in range(model.dim)]
    edge = np.minimum(best - lo, hi - best) < 10 * tol
    return MLEResult(best, bool(edge.any()))


def score_one_step(obs: Observation, model: SignalModel, theta0, fisher=None) -> np.ndarray:
    """``theta0 + I^{-1}(theta0) int S_theta(t, theta0) (dY - S(t, theta0) dt)``."""
    th0 = model.as_theta(theta0)
    fisher = fisher or fisher_information(model, th0, obs.grid)
    score = eval_score(model, th0, obs.grid)
    resid = score @ (eval_signal(model, th0, obs.grid) * obs.grid.cell_width)
    return th0 + (stochastic_integral(obs, score) - resid) @ fisher.inverse.T


def estimate(obs: Observation, model: SignalModel, spec: EstimatorSpec) -> np.ndarray:
    """Dispatch on ``spec.kind``; batches come back as ``(m, d)``."""
    if spec.kind == "score_one_step":
        est = score_one_step(obs, model, spec.theta_init)
    elif obs.batch:
        est = np.array([mle_estimate(Observation(obs.grid, obs.epsilon, row), model, spec).theta
                        for row in obs.increments])
    else:
        est = mle_estimate(obs, model, spec).theta
    if spec.inflate != 1.0:
        est = spec.theta_init + spec.inflate * (est - spec.theta_init)
    return est


def confidence_miss(estimate, truth, model: SignalModel, spec: ConfidenceSpec, theta0,
                    fisher=None, grid: Grid | None = None):
    """True when ``I^{1/2}(theta0) (estimate - truth)`` falls outside ``u_eps * Omega``.

    With ``standardize_at="estimated"`` the information is taken at each
    estimate instead of at ``theta0``.
    """
    grid = grid or Grid()
    est = np.asarray(estimate, dtype=float)
    dev = est - np.asarray(truth, dtype=float)
    if spec.standardize_at == "estimated":
        std = np.array([d @ fisher_information(model, e, grid).sqrt.T
                        for d, e in zip(np.atleast_2d(dev), np.atleast_2d(est))]).reshape(dev.shape)
    else:
        fisher = fisher or fisher_information(model, theta0, grid)
        std = dev @ fisher.sqrt.T
    return spec.omega(std) > spec.u_eps
