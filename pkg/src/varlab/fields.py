"""Smooth compactly supported test functions and vector fields.

All fields carry hand-coded gradients/Jacobians so validators never rely on
numerical differentiation of the test data itself.  Evaluation is vectorized
over (N, d) point arrays.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np


def _bump_profile(t: np.ndarray):
    """chi(t) = exp(1 - 1/(1-t)) for t<1, else 0, with derivative."""
    t = np.asarray(t, dtype=float)
    val = np.zeros_like(t)
    dval = np.zeros_like(t)
    inside = t < 1.0
    ti = t[inside]
    v = np.exp(1.0 - 1.0 / (1.0 - ti))
    val[inside] = v
    dval[inside] = -v / (1.0 - ti) ** 2
    return val, dval


def _transition(s: np.ndarray):
    """psi(s) = a(s)/(a(s)+a(1-s)), a(s)=exp(-1/s); 0 for s<=0, 1 for s>=1."""
    s = np.asarray(s, dtype=float)
    val = np.zeros_like(s)
    dval = np.zeros_like(s)
    val[s >= 1.0] = 1.0
    mid = (s > 0.0) & (s < 1.0)
    sm = s[mid]
    a = np.exp(-1.0 / sm)
    b = np.exp(-1.0 / (1.0 - sm))
    da = a / sm**2
    db = b / (1.0 - sm) ** 2
    val[mid] = a / (a + b)
    dval[mid] = (da * b + a * db) / (a + b) ** 2
    return val, dval


@dataclass(frozen=True)
class ScalarField:
    """Scalar test function with analytic gradient and known support ball."""

    value_fn: Callable[[np.ndarray], np.ndarray]
    grad_fn: Callable[[np.ndarray], np.ndarray]
    support_center: np.ndarray
    support_radius: float
    nonnegative: bool = True

    def value(self, points: np.ndarray) -> np.ndarray:
        return self.value_fn(np.atleast_2d(np.asarray(points, dtype=float)))

    def grad(self, points: np.ndarray) -> np.ndarray:
        return self.grad_fn(np.atleast_2d(np.asarray(points, dtype=float)))


@dataclass(frozen=True)
class VectorField:
    """Vector field with analytic Jacobian and known support ball."""

    value_fn: Callable[[np.ndarray], np.ndarray]
    jacobian_fn: Callable[[np.ndarray], np.ndarray]
    support_center: np.ndarray
    support_radius: float

    def value(self, points: np.ndarray) -> np.ndarray:
        return self.value_fn(np.atleast_2d(np.asarray(points, dtype=float)))

    def jacobian(self, points: np.ndarray) -> np.ndarray:
        """Jacobian DX with DX[i, j] = d X_i / d x_j, shape (N, d, d)."""
        return self.jacobian_fn(np.atleast_2d(np.asarray(points, dtype=float)))


def radial_bump(center, radius: float, amplitude: float = 1.0) -> ScalarField:
    """amplitude * chi(|x-c|^2/R^2); C-infinity, supported in B_R(c)."""
    center = np.asarray(center, dtype=float)
    r2 = radius * radius

    def value(pts):
        t = ((pts - center) ** 2).sum(axis=1) / r2
        v, _ = _bump_profile(t)
        return amplitude * v

    def grad(pts):
        diff = pts - center
        t = (diff**2).sum(axis=1) / r2
        _, dv = _bump_profile(t)
        return amplitude * (dv * 2.0 / r2)[:, None] * diff

    return ScalarField(value, grad, center, radius, nonnegative=amplitude >= 0)


def radial_plateau(center, inner: float, outer: float) -> ScalarField:
    """1 on B_inner(c), 0 outside B_outer(c), smooth monotone ramp between."""
    if not 0 < inner < outer:
        raise ValueError("need 0 < inner < outer")
    center = np.asarray(center, dtype=float)
    width = outer - inner

    def value(pts):
        r = np.linalg.norm(pts - center, axis=1)
        v, _ = _transition((outer - r) / width)
        return v

    def grad(pts):
        diff = pts - center
        r = np.linalg.norm(diff, axis=1)
        _, dv = _transition((outer - r) / width)
        safe = r > 1e-300
        coeff = np.zeros_like(r)
        coeff[safe] = -dv[safe] / (width * r[safe])
        return coeff[:, None] * diff

    return ScalarField(value, grad, center, outer)


def bump_vector_field(center, radius: float, direction, amplitude: float = 1.0) -> VectorField:
    """X(x) = amplitude * chi(|x-c|^2/R^2) * v with constant direction v."""
    center = np.asarray(center, dtype=float)
    direction = np.asarray(direction, dtype=float)
    r2 = radius * radius

    def value(pts):
        t = ((pts - center) ** 2).sum(axis=1) / r2
        v, _ = _bump_profile(t)
        return amplitude * v[:, None] * direction[None, :]

    def jacobian(pts):
        diff = pts - center
        t = (diff**2).sum(axis=1) / r2
        _, dv = _bump_profile(t)
        gchi = (dv * 2.0 / r2)[:, None] * diff  # gradient of the cutoff
        return amplitude * direction[None, :, None] * gchi[:, None, :]

    return VectorField(value, jacobian, center, radius)


def random_bump_fields(rng, count: int, center_span: float, radius_range, dim: int):
    """Deterministic batch of bump vector fields for stationarity sweeps."""
    fields = []
    for _ in range(count):
        center = rng.uniform(-center_span, center_span, size=dim)
        radius = rng.uniform(*radius_range)
        direction = rng.normal(size=dim)
        direction /= np.linalg.norm(direction)
        fields.append(bump_vector_field(center, radius, direction))
    return fields
