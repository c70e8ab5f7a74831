"""Rare-event Monte Carlo for moderate-deviation probabilities.

Paths are simulated under one or more tilted parameters and reweighted to
the target parameter with the exact likelihood ratio of the discretized
model. With several tilts, replicate ``r`` uses tilt ``r mod K`` and is
weighted against the equal mixture of all tilts, so the estimator stays
unbiased for events no single tilt covers (two-sided misses, balls).

Everything is accumulated in log space; probabilities down to ~1e-300
come out with finite ``log_p`` and sensible standard errors.
"""
from __future__ import annotations

import math
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np
from scipy import optimize, stats
from scipy.special import logsumexp

from . import bounds
from .bounds import BoundReport, log_normal_cdf, normal_cdf
from .geometry import OmegaSet, nearest_boundary_point, sphere_directions
from .infer import (ConfidenceSpec, EstimatorSpec, TestSpec, confidence_miss, estimate,
                    normal_quantile_x_alpha, np_critical_value, run_test)
from .model import Grid, SignalModel, eval_score, eval_signal, fisher_information, rho_distance
from .simulate import Observation, normal_block, stream_base, stream_ids

LOW_ESS_FRACTION = 0.01


class LowESSWarning(RuntimeWarning):
    pass


@dataclass
class MCConfig:
    """``tilt``: "boundary" (default), "swap", "none", or an explicit parameter.

    ``chunk`` fixes how replicates are batched; results never depend on
    ``workers``.
    """

    n_rep: int = 100_000
    seed: int = 20240601
    tilt: object = "boundary"
    grid_n: int = 1024
    workers: int = 1
    chunk: int = 2048

    def __post_init__(self):
        if self.n_rep < 100:
            raise ValueError("n_rep must be at least 100")
        if not 0 <= self.seed < 2 ** 64:
            raise ValueError("seed must fit in 64 bits")

    @property
    def grid(self) -> Grid:
        return Grid(self.grid_n)


@dataclass
class RareEventEstimate:
    p_hat: float
    se: float
    log_p: float
    ess: float
    n_rep: int
    hits: int = 0
    clamped: bool = False
    low_ess: bool = False

    @property
    def rel_se(self) -> float:
        return self.se / self.p_hat if self.p_hat > 0 else math.inf

    @classmethod
    def exact(cls, p: float, log_p: float, n_rep: int = 0):
        return cls(float(p), 0.0, float(log_p), float(n_rep), n_rep, n_rep)


def reduce_weighted(hit: np.ndarray, logw: np.ndarray) -> RareEventEstimate:
    """Mean of ``1{hit} * w`` with a delta-method standard error.

    The reported SE is floored at ``p_hat / sqrt(n)``.
    """
    n = len(hit)
    k = int(hit.sum())
    if k == 0:
        return RareEventEstimate(0.0, 0.0, -math.inf, 0.0, n, 0)
    lw = logw[hit]
    shift = lw.max()
    g = np.exp(lw - shift)
    s1, s2 = g.sum(), (g * g).sum()
    mean = s1 / n
    log_p = shift + math.log(mean)
    var = max(s2 / n - mean * mean, 0.0) * n / (n - 1)
    rel = max(math.sqrt(var / n) / mean, 1.0 / math.sqrt(n))
    p = math.exp(log_p)
    clamped = p > 1.0
    if clamped:
        p, log_p = 1.0, 0.0
    ess = s1 * s1 / s2
    low = ess < LOW_ESS_FRACTION * n
    if low:
        warnings.warn(f"effective sample size {ess:.1f} of {n}", LowESSWarning, stacklevel=3)
    return RareEventEstimate(p, float(p * rel), float(log_p), float(ess), n, k, clamped, bool(low))


def _map_chunks(fn, n_rep, chunk, workers):
    bounds_ = [(a, min(a + chunk, n_rep)) for a in range(0, n_rep, chunk)]
    if workers <= 1 or len(bounds_) == 1:
        parts = [fn(a, b) for a, b in bounds_]
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(lambda ab: fn(*ab), bounds_))
    return (np.concatenate([p[0] for p in parts]), np.concatenate([p[1] for p in parts]))


def tilted_path_probability(model: SignalModel, target, proposals: Sequence, event: Callable,
                            epsilon: float, cfg: MCConfig, label) -> RareEventEstimate:
    """``P_target(event)`` from paths drawn under the mixture of ``proposals``.

    ``event`` maps a batch ``Observation`` to a boolean array. An empty
    ``proposals`` list means plain Monte Carlo under ``target``.
    """
    grid = cfg.grid
    target = model.check_domain(target)
    props = np.array([model.check_domain(p) for p in proposals]) if len(proposals) \
        else target[None]
    K = len(props)
    w = grid.cell_width
    s_t = eval_signal(model, target, grid)
    sigs = np.array([eval_signal(model, p, grid) for p in props])
    drift = sigs * w
    diff = sigs - s_t
    quad = (sigs * sigs).sum(axis=1) * w - float(np.dot(s_t, s_t)) * w
    eps2 = epsilon ** 2
    plain = len(proposals) == 0
    base = stream_base(*label) if isinstance(label, tuple) else stream_base(label)
    noise_scale = epsilon * math.sqrt(w)

    def run(a, b):
        z = normal_block(cfg.seed, stream_ids(base, a, b), grid.n)
        comp = np.arange(a, b) % K
        inc = drift[comp] + noise_scale * z
        hit = np.asarray(event(Observation(grid, epsilon, inc)), dtype=bool)
        if plain:
            return hit, np.zeros(b - a)
        llr = inc @ diff.T / eps2 - quad / (2 * eps2)  # log dP_k / dP_target
        return hit, math.log(K) - logsumexp(llr, axis=1)

    hit, logw = _map_chunks(run, cfg.n_rep, cfg.chunk, cfg.workers)
    return reduce_weighted(hit, logw)


# -- tests ---------------------------------------------------------------------

def _test_mean_fn(model, spec: TestSpec, epsilon, grid):
    """Mean of the test statistic under theta, and the rejection threshold."""
    w = grid.weights
    if spec.kind == "score_T":
        fisher = fisher_information(model, spec.theta0, grid)
        score = eval_score(model, spec.theta0, grid)[0]
        k = fisher.inv_sqrt[0, 0]
        null = k * float(np.dot(w, score * eval_signal(model, spec.theta0, grid)))

        def mean(theta):
            return (k * float(np.dot(w, score * eval_signal(model, theta, grid))) - null) / epsilon

        return mean, -normal_quantile_x_alpha(spec.alpha)
    s0 = eval_signal(model, spec.theta0, grid)
    sa = eval_signal(model, spec.theta_alt, grid)
    quad = float(np.dot(w, sa * sa) - np.dot(w, s0 * s0))

    def mean(theta):
        return (float(np.dot(w, (sa - s0) * eval_signal(model, theta, grid))) - quad / 2) / epsilon ** 2

    return mean, np_critical_value(spec, model, epsilon, grid)


def boundary_parameter(model, spec: TestSpec, epsilon, grid) -> float:
    """Parameter whose statistic mean sits exactly on the rejection boundary."""
    mean, crit = _test_mean_fn(model, spec, epsilon, grid)
    f = lambda th: mean(np.array([th])) - crit
    span = max(spec.u_eps, epsilon)
    lo, hi = spec.theta0 - span, spec.theta_alt + span
    for _ in range(60):
        lo_c, hi_c = max(lo, model.lower[0]), min(hi, model.upper[0])
        if f(lo_c) * f(hi_c) <= 0:
            return optimize.brentq(f, lo_c, hi_c, xtol=1e-14, rtol=1e-14)
        if lo_c == model.lower[0] and hi_c == model.upper[0]:
            break
        lo, hi = lo - span, hi + span
        span *= 2
    raise ValueError("no parameter puts the statistic mean on the rejection boundary")


def _test_tilts(model, spec, epsilon, cfg):
    if isinstance(cfg.tilt, str):
        if cfg.tilt == "none":
            return [], []
        if cfg.tilt == "swap":
            return [[spec.theta_alt]], [[spec.theta0]]
        if cfg.tilt == "boundary":
            try:
                tb = boundary_parameter(model, spec, epsilon, cfg.grid)
            except ValueError:
                warnings.warn("boundary tilt unavailable; tilting to the opposite hypothesis")
                return [[spec.theta_alt]], [[spec.theta0]]
            return [[tb]], [[tb]]
        raise ValueError(f"unknown tilt {cfg.tilt!r}")
    t = np.atleast_1d(np.asarray(cfg.tilt, dtype=float))
    return [t], [t]


def estimate_error_probs(model: SignalModel, spec: TestSpec, epsilon: float, cfg: MCConfig,
                         label=("errors",)) -> tuple[RareEventEstimate, RareEventEstimate]:
    """Type I and type II error probabilities of the test ``spec``."""
    if model.dim != 1:
        raise ValueError("tests are defined for a one-dimensional parameter")
    tilt_a, tilt_b = _test_tilts(model, spec, epsilon, cfg)
    reject = lambda obs: run_test(obs, spec, model)
    accept = lambda obs: ~np.asarray(run_test(obs, spec, model))
    lab = tuple(label) + (spec.kind, spec.theta0, spec.u_eps, spec.alpha, epsilon)
    a = tilted_path_probability(model, [spec.theta0], tilt_a, reject, epsilon, cfg, lab + ("alpha",))
    b = tilted_path_probability(model, [spec.theta_alt], tilt_b, accept, epsilon, cfg, lab + ("beta",))
    return a, b


# -- estimator misses ----------------------------------------------------------------

def _n_boundary_dirs(dim, r):
    if dim == 1:
        return 2
    if dim == 2:
        return max(16, int(math.ceil(2 * math.pi * r)))
    return int(min(4096, max(64, math.ceil((2 * r) ** (dim - 1)))))


def _boundary_points(omega: OmegaSet, r: float, seed=0):
    dirs = sphere_directions(omega.dim, _n_boundary_dirs(omega.dim, r), seed)
    if omega.dim == 2:
        ang = 2 * np.pi * (np.arange(len(dirs)) + 0.5) / len(dirs)
        dirs = np.column_stack([np.cos(ang), np.sin(ang)])
    pts = r * dirs / omega(dirs)[:, None]
    if omega.kind == "generic":
        near = nearest_boundary_point(omega, r, seed=seed)
        pts = np.vstack([near, -near, pts])
    return pts


def estimate_miss_prob(model: SignalModel, est: EstimatorSpec, theta, u_eps: float,
                       epsilon: float, cfg: MCConfig, omega: OmegaSet | None = None,
                       theta0=None, label=("miss",)) -> RareEventEstimate:
    """``P_theta(|est - theta| > u_eps)`` (d = 1) or the Omega-miss (d >= 2).

    Tilts sit on the two endpoints (d = 1) or on boundary points of the
    standardized body, spread evenly over the replicates.
    """
    grid = cfg.grid
    theta = model.check_domain(theta)
    theta0 = model.check_domain(est.theta_init if theta0 is None else theta0)
    lab = tuple(label) + (est.kind, tuple(theta), u_eps, epsilon)
    if model.dim == 1 and omega is None:
        event = lambda obs: np.abs(estimate(obs, model, est)[:, 0] - theta[0]) > u_eps
        props = [theta + u_eps, theta - u_eps]
    else:
        if omega is None:
            raise ValueError("a body Omega is needed for d >= 2")
        fisher = fisher_information(model, theta0, grid)
        conf = ConfidenceSpec(omega, u_eps)
        event = lambda obs: confidence_miss(estimate(obs, model, est), theta, model, conf,
                                            theta0, fisher=fisher, grid=grid)
        pts = _boundary_points(omega, u_eps)
        props = [theta + fisher.inv_sqrt @ p for p in pts]
    if cfg.tilt == "none":
        props = []
    elif not isinstance(cfg.tilt, str):
        props = [np.atleast_1d(np.asarray(cfg.tilt, dtype=float))]
    return tilted_path_probability(model, theta, props, event, epsilon, cfg, lab)


def gauss_exceedance(omega: OmegaSet, r: float, cfg: MCConfig, label=("exceed",)) -> RareEventEstimate:
    """``P(zeta not in r * Omega)`` for a standard normal ``zeta`` in R^d.

    Balls are exact (chi-square tail). Other bodies use mixture tilting to
    points on the boundary of ``r * Omega``.
    """
    if not r > 0:
        raise ValueError("r must be positive")
    d = omega.dim
    if omega.kind == "ball":
        return RareEventEstimate.exact(float(stats.chi2.sf(r * r, d)), float(stats.chi2.logsf(r * r, d)),
                                       cfg.n_rep)
    means = _boundary_points(omega, r) if cfg.tilt != "none" else np.zeros((0, d))
    K = len(means)
    half_sq = 0.5 * (means * means).sum(axis=1)
    base = stream_base(*label, omega.label, r)

    def run(a, b):
        z = normal_block(cfg.seed, stream_ids(base, a, b), d)
        if K:
            z = z + means[np.arange(a, b) % K]
            logw = math.log(K) - logsumexp(z @ means.T - half_sq, axis=1)
        else:
            logw = np.zeros(b - a)
        return omega(z) > r, logw

    hit, logw = _map_chunks(run, cfg.n_rep, cfg.chunk, cfg.workers)
    return reduce_weighted(hit, logw)


def lemma1_tail_ratio(var2: float, cov12: float, c: float) -> float:
    """``P(eta1 > c) / P(eta1 + eta2 > c)`` for centered Gaussians with Var eta1 = 1."""
    if not c > 0:
        raise ValueError("c must be positive")
    if var2 < 0 or var2 - cov12 * cov12 < -1e-15:
        raise ValueError("covariance [[1, cov12], [cov12, var2]] is not positive semidefinite")
    if var2 == 0 and cov12 == 0:
        return 1.0
    total = 1.0 + 2.0 * cov12 + var2
    if total <= 0:
        raise ValueError("eta1 + eta2 is degenerate")
    return math.exp(float(log_normal_cdf(-c)) - float(log_normal_cdf(-c / math.sqrt(total))))


# -- bound comparisons ---------------------------------------------------------------

def theorem4_lattice(theta0: float, u_eps: float, epsilon: float, points: int = 9) -> np.ndarray:
    """Points strictly inside ``|theta - theta0| < C_eps u_eps`` with ``C_eps = max(2, ln 1/eps)``."""
    c = max(2.0, math.log(1.0 / epsilon))
    half = (points - 1) // 2
    return theta0 + c * u_eps * np.arange(-half, half + 1) / (half + 1)


def _log_ratio_se(la, lb, rel_a, rel_b, x):
    return math.sqrt(rel_a ** 2 / (2 * abs(la)) + rel_b ** 2 / (2 * abs(lb))) / x


def _run_cell(model, theorem, eps, u, cfg, theta0, alpha, test_kind, estimator, omega, lattice):
    grid = cfg.grid
    th0 = model.check_domain(theta0)
    if theorem == "T5":
        x = u / eps
    else:
        x = u * math.sqrt(fisher_information(model, th0, grid).scalar) / eps
    info = (x * eps / u) ** 2
    est = EstimatorSpec(estimator, th0)
    rep = BoundReport(theorem, eps, u, x)
    lab = (theorem, repr(eps))

    if theorem == "T1":
        rho = rho_distance(model, th0 + u, th0, grid)
        a_t = float(normal_cdf(-rho / (2 * eps)))
        spec = TestSpec(float(th0[0]), u, a_t, "neyman_pearson")
        a, b = estimate_error_probs(model, spec, eps, cfg, lab)
        rep.alpha_target = a_t
        ratio = bounds.theorem1_log_ratio(a.log_p, b.log_p, eps, u, info, log=True)
        # smallest type II error any level-a_t test can reach (exact Gaussian LR)
        lb_opt = float(log_normal_cdf(-normal_quantile_x_alpha(a_t) - rho / eps))
        attainable = bounds.theorem1_log_ratio(math.log(a_t), lb_opt, eps, u, info, log=True)
        se = _log_ratio_se(a.log_p, b.log_p, a.rel_se, b.rel_se, x)
        rep.empirical = {"alpha_hat": a.p_hat, "beta_hat": b.p_hat}
        rep.theoretical = {"attainable_ratio": attainable, "asymptotic_bound": 1.0}
        rep.ratio_or_gap, rep.se_combined = ratio, se
        rep.meets_bound = ratio <= attainable + 3 * se
    elif theorem == "T2":
        scaled, ses, emp = [], [], {}
        for name, th in (("theta0", th0), ("theta0+2u", th0 + 2 * u)):
            m = estimate_miss_prob(model, est, th, u, eps, cfg, label=lab + (name,))
            scaled.append(bounds.theorem2_scaled_log(m.log_p, eps, u, info))
            ses.append(m.rel_se / x ** 2)
            emp[name] = m.p_hat
        i = int(np.argmax(scaled))
        rho2 = rho_distance(model, th0 + 2 * u, th0, grid)
        finite = float(log_normal_cdf(-rho2 / (2 * eps))) / x ** 2
        rep.empirical = {"scaled_theta0": scaled[0], "scaled_theta0_2u": scaled[1]}
        rep.theoretical = {"asymptotic_bound": -0.5, "finite_eps_bound": finite}
        rep.ratio_or_gap, rep.se_combined = scaled[i], ses[i]
        rep.meets_bound = scaled[i] >= finite - 3 * ses[i]
    elif theorem == "T3":
        spec = TestSpec(float(th0[0]), u, alpha, test_kind)
        a, b = estimate_error_probs(model, spec, eps, cfg, lab)
        rep.alpha_target = alpha
        sharp = bounds.theorem3_sharp_beta(alpha, eps, u, info)
        rho = rho_distance(model, th0 + u, th0, grid)
        exact = float(normal_cdf(-normal_quantile_x_alpha(alpha) - rho / eps))
        rep.empirical = {"alpha_hat": a.p_hat, "beta_hat": b.p_hat}
        rep.theoretical = {"sharp_beta": sharp, "np_beta": exact}
        rep.ratio_or_gap = b.p_hat / sharp
        rep.se_combined = b.rel_se * rep.ratio_or_gap
        rep.meets_bound = b.p_hat >= exact * (1 - 3 * b.rel_se)
    elif theorem == "T4":
        best = None
        for j, th in enumerate(theorem4_lattice(float(th0[0]), u, eps, lattice)):
            m = estimate_miss_prob(model, est, [th], u, eps, cfg, label=lab + (j,))
            if best is None or m.p_hat > best.p_hat:
                best = m
        den = bounds.theorem4_denominator(eps, u, info)
        rep.empirical = {"max_miss": best.p_hat}
        rep.theoretical = {"denominator": den, "asymptotic_bound": 1.0}
        rep.ratio_or_gap = best.p_hat / den
        rep.se_combined = best.rel_se * rep.ratio_or_gap
        rep.meets_bound = rep.ratio_or_gap >= 1 - 3 * best.rel_se
    elif theorem == "T5":
        if omega is None:
            raise ValueError("T5 needs a body Omega")
        c = max(2.0, math.log(1.0 / eps))
        pts = [th0] + [th0 + s * 0.5 * c * u * e for e in np.eye(model.dim) for s in (1, -1)]
        best = None
        for j, th in enumerate(pts):
            m = estimate_miss_prob(model, est, th, u, eps, cfg, omega=omega, theta0=th0,
                                   label=lab + (j,))
            if best is None or m.p_hat > best.p_hat:
                best = m
        den = gauss_exceedance(omega, x, cfg, label=lab + ("exceed",))
        ratio = bounds.theorem5_ratio(best, den)
        joint = math.hypot(best.rel_se, den.rel_se)
        rep.empirical = {"max_miss": best.p_hat, "exceedance": den.p_hat}
        rep.theoretical = {"exceedance": den.p_hat, "asymptotic_bound": 1.0}
        rep.ratio_or_gap, rep.se_combined = ratio, joint * ratio
        rep.meets_bound = ratio >= 1 - 3 * joint
    else:
        raise ValueError(f"unknown theorem {theorem!r}")
    return rep


def bound_comparison_run(model: SignalModel, schedule, cfg: MCConfig, theorem: str = "T3", *,
                         theta0=None, alpha: float = 0.05, test_kind: str = "neyman_pearson",
                         estimator: str = "score_one_step", omega: OmegaSet | None = None,
                         lattice: int = 9) -> list[BoundReport]:
    """One ``BoundReport`` per epsilon of ``schedule`` (needs ``eps_list`` and ``u(eps)``).

    A failure in one cell is recorded on its report and the schedule continues.
    """
    if theorem not in bounds.THEOREMS:
        raise ValueError(f"unknown theorem {theorem!r}")
    theta0 = np.zeros(model.dim) if theta0 is None else theta0
    out = []
    for eps in schedule.eps_list:
        u = schedule.u(eps)
        try:
            out.append(_run_cell(model, theorem, eps, u, cfg, theta0, alpha, test_kind,
                                 estimator, omega, lattice))
        except Exception as exc:  # noqa: BLE001 - keep going, report per cell
            out.append(BoundReport(theorem, eps, u, math.nan, meets_bound=False,
                                   error=f"{type(exc).__name__}: {exc}"))
    return out
