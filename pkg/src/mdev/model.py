"""Parametric signal families on (0, 1) and their L2 quantities."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

DEFAULT_GRID_N = 4096
EIG_FLOOR = 1e-10
SLOPE_TOLERANCE = 0.25
MIN_FIT_POINTS = 4
NOISE_FLOOR = 1e-12


class DomainError(ValueError):
    pass


class SingularInformationError(ValueError):
    pass


@dataclass(frozen=True)
class Grid:
    """Uniform midpoint grid; the same nodes serve quadrature and noise cells."""

    n: int = DEFAULT_GRID_N

    def __post_init__(self):
        if int(self.n) != self.n or self.n < 1:
            raise ValueError(f"grid size must be a positive integer, got {self.n!r}")

    @property
    def cell_width(self) -> float:
        return 1.0 / self.n

    @property
    def nodes(self) -> np.ndarray:
        return (np.arange(self.n) + 0.5) / self.n

    @property
    def weights(self) -> np.ndarray:
        return np.full(self.n, 1.0 / self.n)


@dataclass
class SignalModel:
    """A signal ``S(t, theta)`` with optional analytic score ``dS/dtheta``.

    ``signal(t, theta)`` maps an array of times and a length-``dim`` parameter
    to an array shaped like ``t``; ``score(t, theta)`` returns ``(dim, len(t))``.
    """

    dim: int
    lower: np.ndarray
    upper: np.ndarray
    signal: Callable[[np.ndarray, np.ndarray], np.ndarray]
    score: Optional[Callable[[np.ndarray, np.ndarray], np.ndarray]] = None
    lam: float = 1.0
    name: str = "custom"
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        self.lower = np.broadcast_to(np.asarray(self.lower, dtype=float), (self.dim,)).copy()
        self.upper = np.broadcast_to(np.asarray(self.upper, dtype=float), (self.dim,)).copy()
        if np.any(self.lower >= self.upper):
            raise ValueError("empty parameter box")
        if not 0 < self.lam <= 1:
            raise ValueError("smoothness exponent must lie in (0, 1]")

    def as_theta(self, theta) -> np.ndarray:
        th = np.atleast_1d(np.asarray(theta, dtype=float))
        if th.shape != (self.dim,):
            raise DomainError(f"expected parameter of length {self.dim}, got shape {th.shape}")
        return th

    def check_domain(self, theta) -> np.ndarray:
        th = self.as_theta(theta)
        if np.any(th < self.lower) or np.any(th > self.upper) or not np.all(np.isfinite(th)):
            raise DomainError(f"theta={th} outside [{self.lower}, {self.upper}]")
        return th


def fd_step(theta0: np.ndarray) -> np.ndarray:
    return np.maximum(1e-5, 1e-5 * np.abs(theta0))


def eval_signal(model: SignalModel, theta, grid: Grid) -> np.ndarray:
    th = model.check_domain(theta)
    return np.asarray(model.signal(grid.nodes, th), dtype=float)


def eval_score(model: SignalModel, theta0, grid: Grid) -> np.ndarray:
    """Score rows ``dS/dtheta_k`` at the nodes, shape ``(dim, n)``.

    Falls back to central differences when the model has no analytic score.
    """
    th = model.check_domain(theta0)
    t = grid.nodes
    if model.score is not None:
        return np.asarray(model.score(t, th), dtype=float).reshape(model.dim, grid.n)
    h = fd_step(th)
    if np.any(th - h < model.lower) or np.any(th + h > model.upper):
        raise DomainError(f"theta0={th} too close to the boundary for a difference step")
    rows = np.empty((model.dim, grid.n))
    for k in range(model.dim):
        e = np.zeros(model.dim)
        e[k] = h[k]
        rows[k] = (model.signal(t, th + e) - model.signal(t, th - e)) / (2 * h[k])
    return rows


@dataclass(frozen=True)
class FisherMatrix:
    theta0: np.ndarray
    matrix: np.ndarray
    sqrt: np.ndarray
    inv_sqrt: np.ndarray

    @property
    def scalar(self) -> float:
        if self.matrix.shape != (1, 1):
            raise ValueError("Fisher information is not scalar")
        return float(self.matrix[0, 0])

    @property
    def inverse(self) -> np.ndarray:
        return self.inv_sqrt @ self.inv_sqrt


def _gram(score: np.ndarray, grid: Grid) -> np.ndarray:
    m = (score * grid.weights) @ score.T
    return 0.5 * (m + m.T)


def information_matrix(model: SignalModel, theta, grid: Grid) -> np.ndarray:
    """Raw ``int S_theta S_theta' dt``; no positivity check."""
    return _gram(eval_score(model, theta, grid), grid)


def is_positive_definite(matrix: np.ndarray, floor: float = EIG_FLOOR) -> bool:
    eig = np.linalg.eigvalsh(matrix)
    return bool(eig[-1] > 0 and eig[0] > floor * eig[-1])


def fisher_information(model: SignalModel, theta0, grid: Grid, floor: float = EIG_FLOOR) -> FisherMatrix:
    th = model.check_domain(theta0)
    m = information_matrix(model, th, grid)
    eig, vec = np.linalg.eigh(m)
    if not (eig[-1] > 0 and eig[0] > floor * eig[-1]):
        raise SingularInformationError(f"Fisher information at {th} is singular (eigenvalues {eig})")
    root = np.sqrt(eig)
    sqrt = (vec * root) @ vec.T
    inv_sqrt = (vec / root) @ vec.T
    return FisherMatrix(th, m, 0.5 * (sqrt + sqrt.T), 0.5 * (inv_sqrt + inv_sqrt.T))


def rho_distance(model: SignalModel, theta1, theta0, grid: Grid) -> float:
    diff = eval_signal(model, theta1, grid) - eval_signal(model, theta0, grid)
    top = float(np.max(np.abs(diff)))
    if top == 0.0:
        return 0.0
    d = diff / top  # keeps tiny differences from underflowing when squared
    return top * math.sqrt(float(np.dot(grid.weights, d * d)))


def score_shift_covariance(model: SignalModel, theta0, h, u, grid: Grid) -> float:
    """Variance of ``u'(tau - tau_h)``, i.e. ``int (u'(S_theta(t,theta0) - S_theta(t,theta0+h)))^2 dt``.

    The two score integrals are jointly Gaussian, so this is exact; no sampling.
    """
    th = model.as_theta(theta0)
    u = model.as_theta(u)
    d = u @ (eval_score(model, th, grid) - eval_score(model, th + model.as_theta(h), grid))
    return float(np.dot(grid.weights, d * d))


@dataclass
class RegularityReport:
    radii: np.ndarray
    residual_12: np.ndarray
    residual_14: np.ndarray
    residual_15: np.ndarray
    fitted_orders: dict
    passes_a1: bool
    passes_a2: bool
    passes_a3: bool
    lam: float

    @property
    def passes(self) -> bool:
        return self.passes_a1 and self.passes_a2 and self.passes_a3


def probe_directions(dim: int) -> np.ndarray:
    """Signed coordinate axes plus normalized diagonals."""
    eye = np.eye(dim)
    dirs = [eye, -eye]
    if dim > 1:
        diag = np.ones(dim) / math.sqrt(dim)
        dirs += [diag[None], -diag[None]]
    return np.vstack(dirs)


def _fit_order(radii, resid, floor):
    ok = resid > floor
    if ok.sum() < MIN_FIT_POINTS:
        return None
    slope, _ = np.polyfit(np.log(radii[ok]), np.log(resid[ok]), 1)
    return float(slope)


def check_regularity(model: SignalModel, theta0, grid: Grid, radii=None,
                     slope_tolerance: float = SLOPE_TOLERANCE) -> RegularityReport:
    """Probe the linearization, quadratic-form and information-continuity residuals.

    Orders that cannot be resolved above the roundoff floor are reported as
    ``None`` and count as passing.
    """
    th = model.check_domain(theta0)
    if radii is None:
        radii = 0.2 * 0.5 ** np.arange(6)
    radii = np.asarray(radii, dtype=float)
    if radii.ndim != 1 or np.any(radii <= 0) or np.any(np.diff(radii) >= 0):
        raise ValueError("radii must be positive and strictly decreasing")
    dirs = probe_directions(model.dim)
    for r in radii:
        for v in dirs:
            model.check_domain(th + r * v)

    w = grid.weights
    s0 = eval_signal(model, th, grid)
    score0 = eval_score(model, th, grid)
    info0 = _gram(score0, grid)
    r12, r14, r15 = (np.zeros(len(radii)) for _ in range(3))
    for i, r in enumerate(radii):
        for v in dirs:
            step = r * v
            diff = eval_signal(model, th + step, grid) - s0
            lin = diff - step @ score0
            r12[i] = max(r12[i], float(np.dot(w, lin * lin)))
            r14[i] = max(r14[i], abs(float(np.dot(w, diff * diff)) - step @ info0 @ step))
            info_r = information_matrix(model, th + step, grid)
            r15[i] = max(r15[i], abs(v @ info_r @ v - v @ info0 @ v))

    scale = max(float(np.dot(w, s0 * s0)), float(np.trace(info0)), np.finfo(float).tiny)
    floor = NOISE_FLOOR * scale
    orders = {
        "residual_12": _fit_order(radii, r12, floor),
        "residual_14": _fit_order(radii, r14, floor),
        "residual_15": _fit_order(radii, r15, floor),
    }
    need2 = 2 + model.lam - slope_tolerance

    def meets(key, need):
        return orders[key] is None or orders[key] >= need

    return RegularityReport(
        radii=radii, residual_12=r12, residual_14=r14, residual_15=r15,
        fitted_orders=orders,
        passes_a1=is_positive_definite(info0),
        passes_a2=meets("residual_12", need2) and meets("residual_14", need2),
        passes_a3=meets("residual_15", model.lam - slope_tolerance),
        lam=model.lam,
    )


# -- built-in models ---------------------------------------------------------

_SQ2 = math.sqrt(2.0)


def _lin_signal(t, th):
    return th[0] * _SQ2 * np.sin(np.pi * t)


def _lin_score(t, th):
    return (_SQ2 * np.sin(np.pi * t))[None, :]


def _sin_signal(t, th):
    return np.sin(th[0] * t)


def _sin_score(t, th):
    return (t * np.cos(th[0] * t))[None, :]


def _ortho_signal(t, th):
    return th[0] * _SQ2 * np.sin(np.pi * t) + th[1] * _SQ2 * np.sin(2 * np.pi * t)


def _ortho_score(t, th):
    return np.vstack([_SQ2 * np.sin(np.pi * t), _SQ2 * np.sin(2 * np.pi * t)])


class _PowerCusp:
    """|theta|^(1+gamma) * sqrt(2) sin(pi t); picklable for worker pools."""

    def __init__(self, gamma):
        self.gamma = float(gamma)

    def signal(self, t, th):
        return abs(th[0]) ** (1 + self.gamma) * _SQ2 * np.sin(np.pi * t)

    def score(self, t, th):
        g = self.gamma
        return ((1 + g) * abs(th[0]) ** g * np.sign(th[0]) * _SQ2 * np.sin(np.pi * t))[None, :]


def get_model(name: str, **params) -> SignalModel:
    """Look up a built-in model: linear-sin, nonlinear-sin, ortho-2d, power-cusp."""
    lam = float(params.get("lam", params.get("lambda", 1.0)))
    if name == "linear-sin":
        return SignalModel(1, -10.0, 10.0, _lin_signal, _lin_score, lam, name)
    if name == "nonlinear-sin":
        return SignalModel(1, -10.0, 10.0, _sin_signal, _sin_score, lam, name)
    if name == "ortho-2d":
        return SignalModel(2, -10.0, 10.0, _ortho_signal, _ortho_score, lam, name)
    if name == "power-cusp":
        gamma = float(params.get("gamma", 0.2))
        cusp = _PowerCusp(gamma)
        return SignalModel(1, -10.0, 10.0, cusp.signal, cusp.score, lam, name, {"gamma": gamma})
    raise KeyError(f"unknown model {name!r}; known: {', '.join(MODEL_NAMES)}")


MODEL_NAMES = ("linear-sin", "nonlinear-sin", "ortho-2d", "power-cusp")
