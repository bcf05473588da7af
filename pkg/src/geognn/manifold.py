"""Poincaré ball and Klein model operations with curvature parameter c > 0.

All functions act on the last axis, so a ``(n, d)`` array is treated as ``n``
points. Tangent vectors always live at the origin; there is no parallel
transport.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

EPS_BALL = 1e-5
EPS_ATANH = 1e-7
EPS_ZERO = 1e-12

CURVATURE_GRID = (0.1, 0.3, 0.5, 0.75, 1.0, 1.25, 1.5)


class ManifoldError(ValueError):
    """Invalid input (non-finite values, bad curvature, empty sets)."""


class DomainError(ManifoldError):
    """A point lies outside the ball it is claimed to belong to."""


def check_curvature(c) -> float:
    c = float(c)
    if not math.isfinite(c) or c <= 0:
        raise ManifoldError(f"curvature must be a positive finite number, got {c}")
    return c


def _finite(x) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if not np.all(np.isfinite(x)):
        raise ManifoldError("input contains non-finite values")
    return x


def _norm(x):
    return np.linalg.norm(x, axis=-1, keepdims=True)


def _check_in_ball(x, c, tol=1e-9):
    if np.any(np.sqrt(c) * _norm(x) >= 1.0 + tol):
        raise DomainError(f"point outside the Poincaré ball of curvature {c}")


def max_radius(c) -> float:
    return (1.0 - EPS_BALL) / math.sqrt(c)


def project_to_ball(x, c) -> np.ndarray:
    """Pull points with c|x|^2 >= (1 - EPS_BALL)^2 back onto that radius."""
    c = check_curvature(c)
    x = _finite(x)
    r = max_radius(c)
    n = _norm(x)
    over = n >= r
    if not np.any(over):
        return x.copy()
    scale = np.where(over, r / np.where(over, n, 1.0), 1.0)
    return x * scale


def exp_map0(v, c) -> np.ndarray:
    c = check_curvature(c)
    v = _finite(v)
    sc = math.sqrt(c)
    n = _norm(v)
    small = n < EPS_ZERO
    sn = sc * np.where(small, 1.0, n)
    out = np.where(small, 0.0, np.tanh(sn) / sn * v)
    return project_to_ball(out, c)


def log_map0(x, c) -> np.ndarray:
    c = check_curvature(c)
    x = _finite(x)
    _check_in_ball(x, c)
    sc = math.sqrt(c)
    n = _norm(x)
    small = n < EPS_ZERO
    sn = sc * np.where(small, 1.0, n)
    arg = np.minimum(sn, 1.0 - EPS_ATANH)
    return np.where(small, 0.0, np.arctanh(arg) / sn * x)


def poincare_to_klein(x, c) -> np.ndarray:
    c = check_curvature(c)
    x = _finite(x)
    _check_in_ball(x, c)
    return 2.0 * x / (1.0 + c * np.sum(x * x, axis=-1, keepdims=True))


def klein_to_poincare(k, c) -> np.ndarray:
    c = check_curvature(c)
    k = _finite(k)
    _check_in_ball(k, c)
    inner = np.clip(1.0 - c * np.sum(k * k, axis=-1, keepdims=True), 0.0, None)
    return k / (1.0 + np.sqrt(inner))


def lorentz_factor(k, c) -> np.ndarray:
    inner = np.clip(1.0 - c * np.sum(k * k, axis=-1), 1e-15, None)
    return 1.0 / np.sqrt(inner)


def klein_mean(points, c, mode: str = "unweighted") -> np.ndarray:
    """Average Poincaré points in Klein coordinates and map the mean back.

    ``points`` is ``(m, d)``. ``mode="lorentz_weighted"`` weights each Klein
    point by its Lorentz factor (the Einstein midpoint).
    """
    c = check_curvature(c)
    pts = _finite(points)
    if pts.ndim != 2 or pts.shape[0] == 0:
        raise ManifoldError("klein_mean needs a non-empty (m, d) array of points")
    k = poincare_to_klein(pts, c)
    if mode == "unweighted":
        mean = k.mean(axis=0)
    elif mode == "lorentz_weighted":
        w = lorentz_factor(k, c)
        mean = (w[:, None] * k).sum(axis=0) / w.sum()
    else:
        raise ManifoldError(f"unknown klein_mean mode {mode!r}")
    return project_to_ball(klein_to_poincare(mean, c), c)


def hyperbolic_distance(x, y, c) -> np.ndarray:
    c = check_curvature(c)
    x = _finite(x)
    y = _finite(y)
    _check_in_ball(x, c)
    _check_in_ball(y, c)
    diff2 = np.sum((x - y) ** 2, axis=-1)
    den = (1.0 - c * np.sum(x * x, axis=-1)) * (1.0 - c * np.sum(y * y, axis=-1))
    z = 1.0 + 2.0 * c * diff2 / np.maximum(den, 1e-300)
    return np.arccosh(np.maximum(z, 1.0)) / math.sqrt(c)


@dataclass(frozen=True)
class TangentVector:
    coords: np.ndarray
    c: float

    def __post_init__(self):
        object.__setattr__(self, "c", check_curvature(self.c))
        object.__setattr__(self, "coords", _finite(self.coords))

    def exp0(self) -> "PoincarePoint":
        return PoincarePoint(exp_map0(self.coords, self.c), self.c)


@dataclass(frozen=True)
class PoincarePoint:
    coords: np.ndarray
    c: float

    def __post_init__(self):
        object.__setattr__(self, "c", check_curvature(self.c))
        object.__setattr__(self, "coords", _finite(self.coords))
        _check_in_ball(self.coords, self.c)

    def log0(self) -> TangentVector:
        return TangentVector(log_map0(self.coords, self.c), self.c)

    def to_klein(self) -> "KleinPoint":
        return KleinPoint(poincare_to_klein(self.coords, self.c), self.c)

    def distance(self, other: "PoincarePoint") -> float:
        if other.c != self.c:
            raise ManifoldError("points live on balls with different curvature")
        return float(hyperbolic_distance(self.coords, other.coords, self.c))


@dataclass(frozen=True)
class KleinPoint:
    coords: np.ndarray
    c: float

    def __post_init__(self):
        object.__setattr__(self, "c", check_curvature(self.c))
        object.__setattr__(self, "coords", _finite(self.coords))
        _check_in_ball(self.coords, self.c)

    def to_poincare(self) -> PoincarePoint:
        return PoincarePoint(klein_to_poincare(self.coords, self.c), self.c)
