"""Analytic ground-truth models and the explicit catenoid computations.

Generators produce discrete varifolds with exact parametric area weights so
that validators see pure O(h) tilt/membership error.  The catenoid section
carries two closed forms for the cylinder excess of the classical catenoid
(superposed graphs of +/- arccosh over the plane minus the unit disk):

* "area" convention: integrand rho * (2 - 2 sqrt(rho^2-1)/rho) * rho/sqrt(rho^2-1),
  normalized by pi^2 R^2.  This is the convention behind the asymptotic-ratio
  constants d1..d4 below; the middle factor is twice the pointwise area defect
  1 - cos(tilt angle).
* "projection" convention: the Hilbert-Schmidt tilt |P_T - P_pi0|^2 = 2/rho^2
  integrated with the same area element, normalized by omega_2 R^2 = pi R^2.
  This is what the discrete cylindrical excess measures; closed form
  8 arccosh(R)/R^2.

The conventions differ by a factor tending to 2*pi (integrand factor -> 2,
normalization factor pi); each use site states which one it checks.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np
from scipy import integrate, optimize

from .errors import ResolutionError
from .grassmann import ProjectionPlane
from .varifold import DiscreteVarifold


# ---------------------------------------------------------------------------
# flat and graph models


def generate_plane(m, n, q=1, h=0.05, radius=4.0, plane: ProjectionPlane | None = None,
                   offset=None) -> DiscreteVarifold:
    """Multiplicity-q plane sampled on a lattice in its own coordinates.

    The sample set covers at least the base-projection disk of the given
    radius; weights are exact cell areas h^m.
    """
    d = m + n
    if plane is None:
        plane = ProjectionPlane.axis_aligned(m, d)
    if offset is None:
        offset = np.zeros(d)
    offset = np.asarray(offset, dtype=float)
    # stretch the lattice extent so the base projection still covers `radius`
    base_block = plane.basis[:, :m]
    sv = np.linalg.svd(base_block, compute_uv=False)
    smin = sv[-1] if len(sv) else 1.0
    if smin < 0.2:
        raise ValueError("plane is too steep over the reference coordinates")
    extent = radius / smin + float(np.linalg.norm(offset[:m])) + 2 * h
    k = int(np.floor(extent / h)) + 1
    axes = [np.arange(-k, k + 1)] * m
    grids = np.meshgrid(*axes, indexing="ij")
    coords = np.stack([g.ravel() for g in grids], axis=1)
    u = (coords + 0.5) * h
    u = u[(u**2).sum(axis=1) < extent**2]
    positions = offset[None, :] + u @ plane.basis
    count = len(positions)
    tangents = np.broadcast_to(plane.basis, (count, m, d)).copy()
    weights = np.full(count, float(h) ** m)
    mult = np.full(count, int(q), dtype=np.int64)
    return DiscreteVarifold(m, n, positions, tangents, weights, mult, h)


@dataclass(frozen=True)
class GraphSheet:
    """One scalar sheet of a multigraph over the first m coordinates."""

    fn: Callable[[np.ndarray], np.ndarray]
    grad: Callable[[np.ndarray], np.ndarray]
    multiplicity: int = 1


def _graph_tangents(grads: np.ndarray) -> np.ndarray:
    """Orthonormal tangent bases for graphs (x, u(x)) with scalar u.

    The Householder reflection sending the last axis vector to the unit
    normal carries the first m axis vectors onto a tangent frame.
    """
    count, m = grads.shape
    d = m + 1
    normals = np.concatenate([-grads, np.ones((count, 1))], axis=1)
    normals /= np.linalg.norm(normals, axis=1, keepdims=True)
    kvec = -normals
    kvec[:, -1] += 1.0  # e_d - normal
    knorm = np.linalg.norm(kvec, axis=1)
    flat = knorm < 1e-14
    kvec[flat] = 0.0
    kvec[~flat] /= knorm[~flat, None]
    tangents = np.zeros((count, m, d))
    for i in range(m):
        tangents[:, i, i] = 1.0
        tangents[:, i, :] -= 2.0 * kvec * kvec[:, i][:, None]
    return tangents


def generate_graph(sheets, h=0.02, radius=4.0, m=2) -> DiscreteVarifold:
    """Multigraph varifold over the disk of the given base radius (n = 1).

    Weights are per-cell parametric areas h^m sqrt(1 + |grad u|^2) at the
    cell center.
    """
    k = int(np.floor(radius / h)) + 1
    axes = [np.arange(-k, k + 1)] * m
    grids = np.meshgrid(*axes, indexing="ij")
    coords = np.stack([g.ravel() for g in grids], axis=1)
    base = (coords + 0.5) * h
    base = base[(base**2).sum(axis=1) < radius**2]
    pos_all, tan_all, w_all, mult_all = [], [], [], []
    for sheet in sheets:
        vals = np.asarray(sheet.fn(base), dtype=float).reshape(len(base))
        grads = np.asarray(sheet.grad(base), dtype=float).reshape(len(base), m)
        pos_all.append(np.concatenate([base, vals[:, None]], axis=1))
        tan_all.append(_graph_tangents(grads))
        w_all.append(h**m * np.sqrt(1.0 + (grads**2).sum(axis=1)))
        mult_all.append(np.full(len(base), sheet.multiplicity, dtype=np.int64))
    return DiscreteVarifold(
        m, 1,
        np.concatenate(pos_all), np.concatenate(tan_all),
        np.concatenate(w_all), np.concatenate(mult_all), h,
    )


def graph_truth_at(sheets, base_points: np.ndarray):
    """Ground-truth sheet values/multiplicities at base points: ((N, S), (S,))."""
    base_points = np.atleast_2d(base_points)
    vals = np.stack(
        [np.asarray(s.fn(base_points), dtype=float).reshape(len(base_points))
         for s in sheets],
        axis=1,
    )
    mults = np.array([s.multiplicity for s in sheets], dtype=int)
    return vals, mults


# ---------------------------------------------------------------------------
# catenoids


@dataclass(frozen=True)
class CatenoidSpec:
    """Rotationally symmetric catenoid: graphs of +/- f over |x| >= scale.

    For m = 2 the profile is f = scale * arccosh(|x|/scale); for m >= 3 it
    solves f'(rho) = (rho^{2(m-1)} - 1)^{-1/2} in neck units.
    """

    m: int = 2
    scale: float = 1.0
    r_max: float = 4.0

    def __post_init__(self):
        if self.m < 2:
            raise ValueError("catenoids need m >= 2")
        if not 0 < self.scale < self.r_max:
            raise ValueError("need 0 < scale < r_max")


def generate_catenoid(spec: CatenoidSpec, h: float, circ_h: float | None = None
                      ) -> DiscreteVarifold:
    """Sample both sheets with exact rotational area elements.

    h is the profile arclength spacing; circ_h the circumferential spacing
    (defaults to h; the angular quadrature is exact for rotationally
    invariant integrands, so coarse circ_h is safe for centered sweeps).
    Tangent planes come from the parametrization's Jacobian.
    """
    if spec.m != 2:
        raise NotImplementedError(
            "discrete sampling implemented for m = 2; higher-dimensional "
            "catenoids are covered analytically (higher_catenoid_* functions)"
        )
    a = spec.scale
    if h > a / 2.0:
        raise ResolutionError(f"profile spacing h={h:g} too coarse for neck radius {a:g}")
    circ_h = h if circ_h is None else circ_h
    # neck units: rho = sqrt(1+s^2), z = arcsinh(s), s the profile arclength;
    # s in [-S, S] walks the lower then the upper sheet, no waist double-count
    s_top = math.sqrt((spec.r_max / a) ** 2 - 1.0)
    n_half = max(2, int(math.ceil(s_top / (h / a))))
    edges = np.linspace(-s_top, s_top, 2 * n_half + 1)
    centers = 0.5 * (edges[:-1] + edges[1:])

    def area_anti(s):  # antiderivative of rho ds
        return 0.5 * (s * np.sqrt(1.0 + s * s) + np.arcsinh(s))

    seg = area_anti(edges[1:]) - area_anti(edges[:-1])
    pos, tan, wts = [], [], []
    for s, seg_area in zip(centers, seg):
        rho = math.sqrt(1.0 + s * s)
        count = max(6, int(math.ceil(2 * math.pi * rho * a / circ_h)))
        th = (np.arange(count) + 0.5) * (2 * math.pi / count)
        ct, st = np.cos(th), np.sin(th)
        z = math.asinh(s)
        pos.append(a * np.stack([rho * ct, rho * st, np.full(count, z)], axis=1))
        rp = s / math.sqrt(1.0 + s * s)
        zp = 1.0 / math.sqrt(1.0 + s * s)
        e_th = np.stack([-st, ct, np.zeros(count)], axis=1)
        e_s = np.stack([rp * ct, rp * st, np.full(count, zp)], axis=1)
        tan.append(np.stack([e_th, e_s], axis=1))
        wts.append(np.full(count, a * a * seg_area * (2 * math.pi / count)))
    total = sum(len(p) for p in pos)
    return DiscreteVarifold(
        2, 1, np.concatenate(pos), np.concatenate(tan), np.concatenate(wts),
        np.ones(total, dtype=np.int64), h,
    )


# -- closed forms -----------------------------------------------------------


def catenoid_mass_exact(R: float) -> float:
    """Mass of the unit catenoid inside the radius-R cylinder:
    2*2pi*integral of rho^2/sqrt(rho^2-1) = 2pi*(R sqrt(R^2-1) + arccosh R)."""
    if R <= 1.0:
        return 0.0
    return 2.0 * math.pi * (R * math.sqrt(R * R - 1.0) + math.acosh(R))


def catenoid_excess_exact(R: float, tilt: str = "area") -> float:
    """Exact cylinder excess of the unit catenoid, by convention.

    "area": antiderivative rho sqrt(rho^2-1) + arccosh(rho) - rho^2 of the
    integrand 2 rho^2/sqrt(rho^2-1) - 2 rho, over pi^2 R^2 (with the angular
    and two-sheet factors).  "projection": 8 arccosh(R)/R^2.
    """
    if R <= 1.0:
        raise ValueError(f"need R > 1, got {R:g}")
    if tilt == "area":
        integral = R * math.sqrt(R * R - 1.0) + math.acosh(R) - R * R + 1.0
        return 4.0 / (math.pi * R * R) * integral
    if tilt == "projection":
        return 8.0 * math.acosh(R) / (R * R)
    raise ValueError(f"unknown tilt convention {tilt!r}")


def catenoid_excess_quadrature(R: float, tilt: str = "area") -> float:
    """Independent adaptive-quadrature evaluation of the same excess."""
    if R <= 1.0:
        raise ValueError(f"need R > 1, got {R:g}")
    if tilt == "area":
        integrand = lambda rho: 2.0 * rho * rho / math.sqrt(rho * rho - 1.0) - 2.0 * rho
        norm = 4.0 / (math.pi * R * R)
    elif tilt == "projection":
        integrand = lambda rho: 2.0 / math.sqrt(rho * rho - 1.0)
        norm = 4.0 / (R * R)
    else:
        raise ValueError(f"unknown tilt convention {tilt!r}")
    val, _ = integrate.quad(integrand, 1.0, R, limit=400, points=[1.0] if R < 50 else None)
    return norm * val


def catenoid_height_ratio(R: float) -> float:
    """Scale-invariant height 2 arccosh(R)/R of the catenoid in C_R."""
    return 2.0 * math.acosh(R) / R


def catenoid_r_beta(R: float, beta: float) -> float:
    """Radius R_beta with 1/sqrt(R_beta^2 - 1) = E_R^beta."""
    E = catenoid_excess_exact(R, "area")
    return math.sqrt(1.0 + E ** (-2.0 * beta))


def missed_mass(spec: CatenoidSpec, beta: float, R: float) -> float:
    """Mass of C_{R_beta}, the region any E^beta-Lipschitz two-valued graph
    of the catenoid must skip; rejected when R_beta >= R (R too small)."""
    if not 0.0 < beta < 0.5:
        raise ValueError(f"beta must lie in (0, 1/2), got {beta:g}")
    r_beta = catenoid_r_beta(R, beta)
    if r_beta >= R:
        raise ValueError(f"R_beta={r_beta:.3g} >= R={R:.3g}: R too small for beta={beta:g}")
    return spec.scale**2 * catenoid_mass_exact(r_beta)


def missed_mass_ratio(beta: float, R: float) -> float:
    """Scale-invariant missed mass over the E^{1-2 beta}/|log E| law."""
    E = catenoid_excess_exact(R, "area")
    r_beta = catenoid_r_beta(R, beta)
    return (catenoid_mass_exact(r_beta) / R**2) / (E ** (1.0 - 2.0 * beta) / abs(math.log(E)))


def lp_gradient_growth(beta: float, p: float, R: float) -> float:
    """((1/R^2) integral over B_R minus B_{R_beta} of |Df|^p)^{1/p} for the
    two-valued catenoid graph, in the ratio normalization of the excess."""
    if p <= 2.0:
        raise ValueError(f"need p > 2, got {p:g}")
    r_beta = catenoid_r_beta(R, beta)
    val, _ = integrate.quad(
        lambda rho: rho * rho * (rho * rho - 1.0) ** (-(p + 1.0) / 2.0),
        r_beta, R, limit=400,
    )
    return (4.0 / (math.pi * R * R) * val) ** (1.0 / p)


def lp_growth_ratio(beta: float, p: float, R: float) -> float:
    """lp_gradient_growth over its divergence law
    R^{-2(1+beta(p-2))/p} log(R)^{beta(p-2)/p}."""
    law = R ** (-2.0 * (1.0 + beta * (p - 2.0)) / p) * math.log(R) ** (beta * (p - 2.0) / p)
    return lp_gradient_growth(beta, p, R) / law


# -- higher-dimensional catenoid analytics ----------------------------------


def higher_catenoid_profile_slope(m: int, rho):
    """f'(rho) = (rho^{2(m-1)} - 1)^{-1/2} in neck units."""
    rho = np.asarray(rho, dtype=float)
    return (rho ** (2 * (m - 1)) - 1.0) ** -0.5


def higher_catenoid_profile(m: int, rho: float) -> float:
    """f(rho) by adaptive quadrature; the endpoint singularity is integrable."""
    if rho <= 1.0:
        return 0.0
    # substitute rho = 1 + u^2 to remove the sqrt singularity at the neck
    def integrand(u):
        return 2.0 * u * float(higher_catenoid_profile_slope(m, 1.0 + u * u))
    val, _ = integrate.quad(integrand, 0.0, math.sqrt(rho - 1.0), limit=200)
    return float(val)


def higher_catenoid_height_ratio(m: int, R: float) -> float:
    """(2 f(R)/R) / E_R^{1/m} for the m >= 3 catenoid (a reported ratio;
    whether the m = 2 log correction is needed for m >= 3 is open)."""
    if m < 3:
        raise ValueError("use the explicit d2 machinery for m = 2")
    height = 2.0 * higher_catenoid_profile(m, R) / R
    def integrand(u):  # projection tilt x exact area element, rho = 1 + u^2
        rho = 1.0 + u * u
        fp = float(higher_catenoid_profile_slope(m, rho))
        return 2.0 * u * (2.0 * fp * fp / math.sqrt(1.0 + fp * fp)) * rho ** (m - 1)
    val, _ = integrate.quad(integrand, 0.0, math.sqrt(R - 1.0), limit=400)
    excess = 2.0 * m / R**m * val
    return height / excess ** (1.0 / m)


# -- asymptotic-constant extrapolation ---------------------------------------


@dataclass(frozen=True)
class LimitEstimate:
    """Extrapolated limit with a drift-based error estimate.

    sequence holds the (R, raw ratio) ladder; cutoff_estimates the
    extrapolated values at the trailing half-decade cutoffs (last = value).
    """

    value: float
    error: float
    converged: bool
    sequence: tuple
    cutoff_estimates: tuple


def _correction_basis(Rs: np.ndarray, beta: float | None) -> np.ndarray:
    L = np.log(Rs)
    cols = [np.ones_like(L), 1.0 / L, np.log(L) / L, 1.0 / L**2, np.log(L) / L**2]
    if beta is not None:
        E = np.array([catenoid_excess_exact(R, "area") for R in Rs])
        cols += [E ** (2 * beta) * (-np.log(E)), E ** (2 * beta)]
    return np.stack(cols, axis=1)


def _extrapolate(Rs: np.ndarray, vals: np.ndarray, beta: float | None) -> float:
    A = _correction_basis(Rs, beta)
    scale = np.linalg.norm(A, axis=0)
    coef, *_ = np.linalg.lstsq(A / scale, vals, rcond=None)
    return float(coef[0] / scale[0])


def extrapolated_limit(raw_fn, r_cutoff: float = 1e6, beta: float | None = None,
                       ladder_start: float = 10.0 ** 1.5, per_decade: int = 4
                       ) -> LimitEstimate:
    """Limit of raw_fn(R) as R -> infinity from a geometric R ladder.

    The ladder runs quarter-decades from ladder_start to r_cutoff; the fit
    basis carries the log-log correction terms of the catenoid ratios (plus
    E^{2 beta} terms when beta enters).  The error estimate is the drift
    between the last two half-decade cutoffs, and the result is flagged
    non-converged when the drift grows along the tail.
    """
    k0 = round(per_decade * math.log10(ladder_start))
    k1 = round(per_decade * math.log10(r_cutoff))
    if k1 - k0 < 7:
        raise ValueError("ladder too short: need at least two decades below the cutoff")
    Rs = 10.0 ** (np.arange(k0, k1 + 1) / per_decade)
    vals = np.array([raw_fn(R) for R in Rs])
    cuts = [len(Rs) - per_decade, len(Rs) - per_decade // 2, len(Rs)]
    ests = [_extrapolate(Rs[:c], vals[:c], beta) for c in cuts]
    drifts = [abs(b - a) for a, b in zip(ests, ests[1:])]
    converged = drifts[-1] <= 4.0 * drifts[0] + 1e-12 * abs(ests[-1])
    return LimitEstimate(
        value=float(ests[-1]),
        error=float(drifts[-1]),
        converged=bool(converged),
        sequence=tuple(zip(map(float, Rs), map(float, vals))),
        cutoff_estimates=tuple(map(float, ests)),
    )


@dataclass(frozen=True)
class DConstants:
    d1: LimitEstimate
    d2: LimitEstimate
    d3: LimitEstimate
    d4: LimitEstimate
    beta: float
    p: float


def d1_raw(R: float) -> float:
    return catenoid_excess_exact(R, "area") / (math.log(R) / R**2)


def d2_raw(R: float) -> float:
    E = catenoid_excess_exact(R, "area")
    return catenoid_height_ratio(R) / math.sqrt(-E * math.log(E))


def catenoid_d_constants(beta: float = 0.25, p: float = 4.0, r_cutoff: float = 1e6
                         ) -> DConstants:
    """Extrapolated asymptotic constants of the catenoid ratios:

    d1: excess over log(R)/R^2
    d2: scale-invariant height over sqrt(E |log E|)
    d3: scale-invariant missed mass over E^{1-2 beta}/|log E|
    d4: L^p gradient growth over its R/log R law
    """
    if not 0.0 < beta < 0.5:
        raise ValueError(f"beta must lie in (0, 1/2), got {beta:g}")
    if p <= 2.0:
        raise ValueError(f"need p > 2, got {p:g}")
    return DConstants(
        d1=extrapolated_limit(d1_raw, r_cutoff),
        d2=extrapolated_limit(d2_raw, r_cutoff),
        d3=extrapolated_limit(lambda R: missed_mass_ratio(beta, R), r_cutoff, beta=beta),
        d4=extrapolated_limit(lambda R: lp_growth_ratio(beta, p, R), r_cutoff, beta=beta),
        beta=beta, p=p,
    )


# ---------------------------------------------------------------------------
# Morrey exponent optimization


def morrey_bound(E: float, m: int, q: float) -> float:
    """(q - m)^{-1 + 1/q} E^{1/q} for q in (m, m+1), E below 1/e."""
    if not m < q < m + 1:
        raise ValueError(f"q must lie in ({m}, {m + 1}), got {q:g}")
    if not 0.0 < E < math.exp(-1.0):
        raise ValueError(f"excess must lie in (0, 1/e), got {E:g}")
    return (q - m) ** (-1.0 + 1.0 / q) * E ** (1.0 / q)


@dataclass(frozen=True)
class QOptimum:
    q_rule: float      # m + 1/|log E|, the closed-form choice
    q_numeric: float   # bounded golden-section minimizer over (m, m+1)


def q_optimize(E: float, m: int) -> QOptimum:
    if not 0.0 < E < math.exp(-1.0):
        raise ValueError(f"excess must lie in (0, 1/e), got {E:g}")
    q_rule = m - 1.0 / math.log(E)
    res = optimize.minimize_scalar(
        lambda q: morrey_bound(E, m, q),
        bounds=(m + 1e-9, m + 1 - 1e-9), method="bounded",
        options={"xatol": 1e-10},
    )
    return QOptimum(q_rule=float(q_rule), q_numeric=float(res.x))


def morrey_law_value(E: float, m: int) -> float:
    """The optimized height law |log E|^{1 - 1/m} E^{1/m}."""
    return abs(math.log(E)) ** (1.0 - 1.0 / m) * E ** (1.0 / m)
