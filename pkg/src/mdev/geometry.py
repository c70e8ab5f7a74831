"""Convex, centrally symmetric bodies given by their gauge (Minkowski functional)."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
from scipy.stats import qmc
from scipy.special import ndtri


@dataclass
class OmegaSet:
    """``gauge`` acts on the last axis: ``(..., d) -> (...)``."""

    dim: int
    gauge: Callable[[np.ndarray], np.ndarray]
    kind: str = "generic"
    shape: Optional[np.ndarray] = None  # quadratic form A for ellipsoids: gauge^2 = x'Ax
    label: str = ""

    def __call__(self, x):
        return self.gauge(np.asarray(x, dtype=float))


class _Quadratic:
    def __init__(self, a):
        self.a = np.asarray(a, dtype=float)

    def __call__(self, x):
        q = np.einsum("...i,ij,...j->...", x, self.a, x)
        return np.sqrt(np.maximum(q, 0.0))


def _euclid(x):
    return np.linalg.norm(x, axis=-1)


def ball(dim: int) -> OmegaSet:
    return OmegaSet(dim, _euclid, "ball", np.eye(dim), "ball")


def ellipsoid(axes) -> OmegaSet:
    """Axis-aligned ellipsoid with semi-axes ``axes``."""
    axes = np.asarray(axes, dtype=float)
    if np.any(axes <= 0):
        raise ValueError("semi-axes must be positive")
    a = np.diag(1.0 / axes ** 2)
    return OmegaSet(len(axes), _Quadratic(a), "ellipsoid", a,
                    "ellipsoid:" + ",".join(f"{v:g}" for v in axes))


def ellipsoid_from_matrix(a) -> OmegaSet:
    a = np.asarray(a, dtype=float)
    a = 0.5 * (a + a.T)
    if np.linalg.eigvalsh(a)[0] <= 0:
        raise ValueError("shape matrix must be positive definite")
    return OmegaSet(a.shape[0], _Quadratic(a), "ellipsoid", a, "ellipsoid")


def _maxnorm(x):
    return np.max(np.abs(x), axis=-1)


def cube(dim: int) -> OmegaSet:
    """Max-norm unit cube; convex but with flat facets."""
    return OmegaSet(dim, _maxnorm, "generic", None, "cube")


def parse_omega(text: str, dim: int) -> OmegaSet:
    """Config names: ``ball``, ``ellipsoid:a1,...,ad``, ``cube``."""
    text = text.strip()
    if text == "ball":
        return ball(dim)
    if text == "cube":
        return cube(dim)
    if text.startswith("ellipsoid:"):
        axes = [float(v) for v in text.split(":", 1)[1].split(",")]
        if len(axes) != dim:
            raise ValueError(f"ellipsoid has {len(axes)} axes, parameter dimension is {dim}")
        return ellipsoid(axes)
    raise ValueError(f"unknown body {text!r}")


def contains(omega: OmegaSet, x, radius: float):
    if not radius > 0:
        raise ValueError("radius must be positive")
    return omega(x) <= radius


class _Mapped:
    def __init__(self, gauge, m):
        self.gauge, self.m = gauge, m

    def __call__(self, x):
        return self.gauge(x @ self.m.T)


def affine_image_gauge(omega: OmegaSet, m) -> OmegaSet:
    """Body with gauge ``x -> gauge(m x)``, i.e. ``m^{-1} Omega``."""
    m = np.asarray(m, dtype=float)
    if m.shape != (omega.dim, omega.dim) or abs(np.linalg.det(m)) < 1e-300 \
            or np.linalg.cond(m) > 1e14:
        raise ValueError("map must be a nonsingular d x d matrix")
    if omega.shape is not None:
        a = m.T @ omega.shape @ m
        return OmegaSet(omega.dim, _Quadratic(a), "ellipsoid", a, omega.label + "∘map")
    return OmegaSet(omega.dim, _Mapped(omega.gauge, m), "generic", None, omega.label + "∘map")


def sphere_directions(dim: int, n: int, seed: int = 0) -> np.ndarray:
    """Scrambled-Halton points pushed through the normal quantile and normalized."""
    if dim == 1:
        return np.where(np.arange(n) % 2 == 0, 1.0, -1.0)[:, None]
    pts = qmc.Halton(d=dim, scramble=True, seed=seed).random(n)
    z = ndtri(np.clip(pts, 1e-12, 1 - 1e-12))
    return z / np.linalg.norm(z, axis=1, keepdims=True)


@dataclass
class A4Report:
    symmetric: bool
    homogeneous: bool
    convex: bool
    strictly_convex: bool
    bounded: bool
    min_gauge_on_sphere: float
    witnesses: dict = field(default_factory=dict)

    @property
    def passes(self) -> bool:
        return self.symmetric and self.homogeneous and self.convex and self.strictly_convex \
            and self.bounded


def validate_a4(omega: OmegaSet, n_dirs: int = 512, seed: int = 0) -> A4Report:
    """Probe symmetry, homogeneity, convexity and strict convexity of ``omega``.

    Strict convexity is the coordinate-free content of a negatively curved
    C2 boundary: midpoints of two non-parallel boundary points sit strictly
    inside, by more than ``1e-6`` times their mean gauge.
    """
    if n_dirs < 100:
        raise ValueError("need at least 100 probe directions")
    rng = np.random.default_rng(seed)
    dirs = sphere_directions(omega.dim, n_dirs, seed)
    g = omega(dirs)
    witnesses = {}

    bounded = bool(np.all(g > 1e-12) and np.all(np.isfinite(g)))
    if not bounded:
        witnesses["bounded"] = dirs[int(np.argmin(g))]

    gneg = omega(-dirs)
    sym_bad = np.abs(g - gneg) > 1e-12 * np.maximum(1.0, g)
    if sym_bad.any():
        witnesses["symmetric"] = dirs[int(np.argmax(sym_bad))]

    c = rng.uniform(0.0, 10.0, n_dirs)
    hom_bad = np.abs(omega(c[:, None] * dirs) - c * g) > 1e-12 * np.maximum(1.0, c * g)
    if hom_bad.any():
        witnesses["homogeneous"] = (c[int(np.argmax(hom_bad))], dirs[int(np.argmax(hom_bad))])

    x = dirs * rng.uniform(0.1, 2.0, (n_dirs, 1))
    y = x[rng.permutation(n_dirs)]
    lhs, rhs = omega(x + y), omega(x) + omega(y)
    conv_bad = lhs > rhs * (1 + 1e-12)
    if conv_bad.any():
        i = int(np.argmax(conv_bad))
        witnesses["convex"] = (x[i], y[i])

    strict_ok = True
    if bounded and omega.dim > 1:
        b = dirs / g[:, None]  # boundary points
        pairs = np.concatenate([np.column_stack([np.arange(n_dirs), rng.permutation(n_dirs)]),
                                np.column_stack([np.arange(n_dirs), np.roll(np.arange(n_dirs), 1)])])
        cosang = np.einsum("ij,ij->i", dirs[pairs[:, 0]], dirs[pairs[:, 1]])
        pairs = pairs[np.abs(cosang) < 1 - 1e-3]
        bx, by = b[pairs[:, 0]], b[pairs[:, 1]]
        mid = omega(0.5 * (bx + by))
        margin = 1e-6 * 0.5 * (omega(bx) + omega(by))
        strict_bad = mid >= 0.5 * (omega(bx) + omega(by)) - margin
        if strict_bad.any():
            i = int(np.argmax(strict_bad))
            witnesses["strictly_convex"] = (bx[i], by[i])
            strict_ok = False

    return A4Report(
        symmetric=not sym_bad.any(), homogeneous=not hom_bad.any(), convex=not conv_bad.any(),
        strictly_convex=strict_ok, bounded=bounded,
        min_gauge_on_sphere=float(np.min(g)) if len(g) else math.nan, witnesses=witnesses,
    )


def nearest_boundary_point(omega: OmegaSet, r: float, n_starts: int = 256, seed: int = 0):
    """Closest point to the origin on the boundary of ``r * omega``.

    That point is ``r u / gauge(u)`` for the unit ``u`` maximizing the gauge.
    """
    from scipy.optimize import minimize

    dirs = sphere_directions(omega.dim, max(n_starts, 2), seed)
    g = omega(dirs)
    u0 = dirs[int(np.argmax(g))]
    if omega.dim == 1:
        return r * u0 / omega(u0)

    def neg(v):
        nv = np.linalg.norm(v)
        return -float(omega(v / nv)) if nv > 0 else 0.0

    res = minimize(neg, u0, method="Nelder-Mead",
                   options={"xatol": 1e-10, "fatol": 1e-14, "maxiter": 20000})
    if not res.success:
        raise RuntimeError(f"boundary search did not converge: {res.message}")
    u = res.x / np.linalg.norm(res.x)
    if omega(u) < g.max():
        u = u0
    return r * u / omega(u)
