"""Discretized white-noise observations and the statistics computed from them.

An observation holds the increments ``dY_i = S(t_i, theta) / n + eps * Z_i / sqrt(n)``.
``increments`` may be one path of shape ``(n,)`` or a batch ``(m, n)``;
every statistic below maps over the leading axis.
"""
from __future__ import annotations

import hashlib
import math
import warnings
from dataclasses import dataclass

import numpy as np
from scipy import special

from .model import Grid, SignalModel, eval_score, eval_signal, fisher_information

_MASK64 = (1 << 64) - 1
LOG_WEIGHT_LIMIT = 700.0


class ExtremeWeightWarning(RuntimeWarning):
    pass


@dataclass(frozen=True)
class NoiseStream:
    """Counter-based normal stream: Philox keyed by ``(seed, stream_id)``.

    The draws for a given key never depend on what else was drawn, so
    replicates can be produced in any order or on any worker.
    """

    seed: int
    stream_id: int

    def normals(self, size: int) -> np.ndarray:
        key = ((self.stream_id & _MASK64) << 64) | (self.seed & _MASK64)
        raw = np.random.Philox(key=key).random_raw(size)
        return uniform_to_normal(raw)


def uniform_to_normal(raw: np.ndarray) -> np.ndarray:
    # top 52 bits plus half a step: the largest value is 1 - 2**-53, still below 1
    u = ((raw >> np.uint64(12)).astype(np.float64) + 0.5) * 2.0 ** -52
    return special.ndtri(u)


def stream_base(*labels) -> int:
    """Stable 64-bit offset for a named experiment cell."""
    text = "|".join(repr(x) for x in labels).encode()
    return int.from_bytes(hashlib.blake2b(text, digest_size=8).digest(), "little")


def stream_ids(base: int, start: int, stop: int) -> list[int]:
    return [(base + r) & _MASK64 for r in range(start, stop)]


def normal_block(seed: int, ids, size: int) -> np.ndarray:
    out = np.empty((len(ids), size))
    for i, sid in enumerate(ids):
        out[i] = NoiseStream(seed, sid).normals(size)
    return out


@dataclass
class Observation:
    grid: Grid
    epsilon: float
    increments: np.ndarray

    def __post_init__(self):
        self.increments = np.asarray(self.increments, dtype=float)
        if self.increments.shape[-1] != self.grid.n:
            raise ValueError("increments do not match the grid")
        if not self.epsilon >= 0:
            raise ValueError("epsilon must be positive")

    @property
    def batch(self) -> bool:
        return self.increments.ndim == 2


def _check_eps(epsilon, allow_zero_noise):
    if epsilon > 0 or (allow_zero_noise and epsilon == 0):
        return float(epsilon)
    raise ValueError(f"epsilon must be positive, got {epsilon!r}")


def observation_from_normals(model, theta, epsilon, grid, z, allow_zero_noise=False) -> Observation:
    eps = _check_eps(epsilon, allow_zero_noise)
    drift = eval_signal(model, theta, grid) * grid.cell_width
    return Observation(grid, eps, drift + eps * math.sqrt(grid.cell_width) * z)


def simulate_observation(model: SignalModel, theta, epsilon: float, grid: Grid,
                         noise: NoiseStream, allow_zero_noise: bool = False) -> Observation:
    """One path; ``allow_zero_noise`` exists only for noiseless test oracles."""
    return observation_from_normals(model, theta, epsilon, grid, noise.normals(grid.n),
                                    allow_zero_noise)


def simulate_batch(model: SignalModel, theta, epsilon: float, grid: Grid, seed: int,
                   ids, allow_zero_noise: bool = False) -> Observation:
    """Stack of paths, row ``i`` driven by ``NoiseStream(seed, ids[i])``."""
    return observation_from_normals(model, theta, epsilon, grid, normal_block(seed, ids, grid.n),
                                    allow_zero_noise)


def stochastic_integral(obs: Observation, f) -> np.ndarray | float:
    """``sum_i f_i dY_i``; ``f`` may also be ``(k, n)`` giving ``k`` integrals."""
    f = np.asarray(f, dtype=float)
    if f.shape[-1] != obs.grid.n:
        raise ValueError(f"integrand length {f.shape[-1]} does not match grid size {obs.grid.n}")
    out = obs.increments @ f.T
    return float(out) if np.ndim(out) == 0 else out


def statistic_T(obs: Observation, model: SignalModel, theta0, fisher=None) -> np.ndarray:
    """``I^{-1/2}(theta0) int S_theta(t, theta0) dY``, shape ``(d,)`` or ``(m, d)``."""
    fisher = fisher or fisher_information(model, theta0, obs.grid)
    return stochastic_integral(obs, eval_score(model, theta0, obs.grid)) @ fisher.inv_sqrt.T


def statistic_xi(obs: Observation, model: SignalModel, theta_a, theta_b):
    diff = eval_signal(model, theta_a, obs.grid) - eval_signal(model, theta_b, obs.grid)
    return stochastic_integral(obs, diff) / obs.epsilon


def log_likelihood_ratio(obs: Observation, model: SignalModel, theta_num, theta_den):
    """``log dP_num/dP_den`` of the discretized path."""
    s_num = eval_signal(model, theta_num, obs.grid)
    s_den = eval_signal(model, theta_den, obs.grid)
    w = obs.grid.weights
    eps2 = obs.epsilon ** 2
    quad = float(np.dot(w, s_num * s_num) - np.dot(w, s_den * s_den))
    return stochastic_integral(obs, s_num - s_den) / eps2 - quad / (2 * eps2)


def importance_weight(obs: Observation, model: SignalModel, target, proposal):
    """``exp L(target, proposal)`` for paths drawn under ``proposal``.

    Weights with ``|log w| > 700`` are clipped to the double range and
    an ``ExtremeWeightWarning`` is raised; use ``log_likelihood_ratio``
    directly when that can happen.
    """
    logw = np.asarray(log_likelihood_ratio(obs, model, target, proposal))
    if np.any(np.abs(logw) > LOG_WEIGHT_LIMIT):
        warnings.warn("importance weight outside double range", ExtremeWeightWarning, stacklevel=2)
        logw = np.clip(logw, -LOG_WEIGHT_LIMIT, LOG_WEIGHT_LIMIT)
    w = np.exp(logw)
    return float(w) if w.ndim == 0 else w
