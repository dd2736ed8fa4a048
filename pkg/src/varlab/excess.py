"""Tilt excess over cylinders and balls, the dyadic maximal function, and
extraction of the good set.

The continuum maximal function takes a sup over *all* cylinders containing a
point; here that family is replaced by a dyadic one: levels k = 0..K with
radii s_k = outer/2^k down to 8 mesh cells, centers on a per-level grid of
spacing s_k/4, restricted to centers that can both contain a queried point
(|y| <= node_radius + s_k) and fit inside the outer cylinder
(|y| <= outer - s_k).  Every admissible cylinder through a queried point is
covered by a family cylinder of at most 8x its radius, so the discrete sup
is a two-sided surrogate: me_discrete <= me_true <= 8^m me_discrete.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import cKDTree

from .errors import ResolutionError
from .grassmann import BestFitResult, ProjectionPlane, best_fit_plane
from .qvalued import disk_lattice
from .varifold import DiscreteVarifold, unit_ball_volume


@dataclass(frozen=True)
class CylinderSpec:
    """Cylinder over an m-plane: base disk of `radius` at `center` (given in
    reference-plane coordinates), compared against the `comparison` plane."""

    center: np.ndarray
    radius: float
    reference: ProjectionPlane | None = None   # axis plane; None = first-m axes
    comparison: ProjectionPlane | None = None  # tilt reference; None = first-m axes

    def __post_init__(self):
        object.__setattr__(self, "center", np.asarray(self.center, dtype=float))
        if self.radius <= 0:
            raise ValueError("cylinder radius must be positive")


@dataclass(frozen=True)
class ExcessReport:
    value: float
    mass_ratio: float
    plane: ProjectionPlane
    sample_count: int
    trusted: bool = True
    degenerate: bool = False


def _axis_plane(V: DiscreteVarifold, plane: ProjectionPlane | None) -> ProjectionPlane:
    return plane if plane is not None else ProjectionPlane.axis_aligned(V.m, V.ambient_dim)


def _tilt_sq(V: DiscreteVarifold, comparison: ProjectionPlane, idx=None) -> np.ndarray:
    """Per-sample |P_T - P_pi|^2 = 2m - 2 |B_pi B_T^t|_F^2."""
    tangents = V.tangents if idx is None else V.tangents[idx]
    cross = np.einsum("kd,nmd->nmk", comparison.basis, tangents)
    return 2.0 * V.m - 2.0 * (cross**2).sum(axis=(1, 2))


def _cylinder_indices(V: DiscreteVarifold, cyl: CylinderSpec) -> np.ndarray:
    if cyl.reference is None:
        center = np.asarray(cyl.center, dtype=float)[: V.m]
        return V.base_disk_indices(center, cyl.radius)
    c = np.zeros(V.ambient_dim)
    c[: len(cyl.center)] = cyl.center
    proj = (V.positions - c) @ cyl.reference.basis.T
    return np.flatnonzero((proj**2).sum(axis=1) < cyl.radius**2)


def cylindrical_excess(V: DiscreteVarifold, cyl: CylinderSpec) -> ExcessReport:
    """Tilt excess (1/(omega_m r^m)) sum of mass * |P_T - P_pi|^2 over the
    cylinder; the report carries the mass ratio and a trusted flag that is
    cleared when the cylinder pokes outside the sampled base region."""
    comparison = _axis_plane(V, cyl.comparison)
    idx = _cylinder_indices(V, cyl)
    norm = unit_ball_volume(V.m) * cyl.radius**V.m
    masses = V.masses[idx]
    value = float((masses * _tilt_sq(V, comparison, idx)).sum()) / norm
    ratio = float(masses.sum()) / norm
    reach = float(np.linalg.norm(np.asarray(cyl.center)[: V.m])) + cyl.radius
    trusted = reach <= V.base_extent() + 2.0 * V.mesh_scale
    return ExcessReport(value, ratio, comparison, int(len(idx)), trusted)


def spherical_excess(V: DiscreteVarifold, x, r: float) -> ExcessReport:
    """Best-plane excess over the ball B_r(x): the minimizer over rank-m
    projections of the summed tilt is the plane of the m leading eigenvectors
    of the mass-weighted mean tangent projection."""
    if r < 4.0 * V.mesh_scale:
        raise ResolutionError(f"radius {r:g} below resolution floor {4.0 * V.mesh_scale:g}")
    x = np.asarray(x, dtype=float)
    dist_sq = ((V.positions - x) ** 2).sum(axis=1)
    idx = np.flatnonzero(dist_sq < r * r)
    norm = unit_ball_volume(V.m) * r**V.m
    if len(idx) == 0:
        plane = ProjectionPlane.axis_aligned(V.m, V.ambient_dim)
        return ExcessReport(0.0, 0.0, plane, 0)
    masses = V.masses[idx]
    total = float(masses.sum())
    mean_proj = np.einsum("n,nkd,nke->de", masses, V.tangents[idx], V.tangents[idx]) / total
    fit: BestFitResult = best_fit_plane(mean_proj, V.m)
    # sum of tilts = 2m*M - 2 tr(A P*) with tr(A P*) = leading eigenvalue sum
    lead = float(fit.eigenvalues[: V.m].sum())
    value = (2.0 * V.m * total - 2.0 * total * lead) / norm
    return ExcessReport(max(value, 0.0), total / norm, fit.plane, int(len(idx)),
                        degenerate=fit.degenerate)


# ---------------------------------------------------------------------------
# dyadic family and maximal function


class DyadicCylinderFamily:
    """Dyadic cylinders inside C_outer relevant to points of B_node_radius,
    with per-cylinder excesses (vs the fixed reference plane) precomputed."""

    def __init__(self, V: DiscreteVarifold, outer_radius: float = 4.0,
                 node_radius: float = 1.0, comparison: ProjectionPlane | None = None,
                 levels: int | None = None, chunk: int = 4096):
        self.V = V
        self.outer_radius = float(outer_radius)
        self.node_radius = float(node_radius)
        self.comparison = _axis_plane(V, comparison)
        max_levels = int(math.floor(math.log2(outer_radius / (8.0 * V.mesh_scale))))
        self.levels = max_levels if levels is None else min(levels, max_levels)
        if self.levels < 0:
            raise ResolutionError("mesh too coarse for even one family level")
        tilt = _tilt_sq(V, self.comparison) * V.masses
        base = V.positions[:, : V.m]
        tree = cKDTree(base)
        om = unit_ball_volume(V.m)
        self._level_radius = []
        self._level_centers = []
        self._level_excess = []
        self._level_tree = []
        for k in range(self.levels + 1):
            s = outer_radius / 2.0**k
            reach = min(outer_radius - s, node_radius + s)
            if reach < 0:
                self._level_radius.append(s)
                self._level_centers.append(np.zeros((0, V.m)))
                self._level_excess.append(np.zeros(0))
                self._level_tree.append(None)
                continue
            spacing = s / 4.0
            kk = int(math.floor(reach / spacing))
            axes = [np.arange(-kk, kk + 1)] * V.m
            grids = np.meshgrid(*axes, indexing="ij")
            centers = np.stack([g.ravel() for g in grids], axis=1) * spacing
            centers = centers[(centers**2).sum(axis=1) <= reach**2]
            if len(centers) == 0:
                centers = np.zeros((1, V.m))
            exc = np.empty(len(centers))
            for lo in range(0, len(centers), chunk):
                part = centers[lo: lo + chunk]
                hits = tree.query_ball_point(part, s, workers=-1)
                lens = np.fromiter((len(h) for h in hits), dtype=int, count=len(part))
                if lens.sum() == 0:
                    exc[lo: lo + chunk] = 0.0
                    continue
                flat = np.concatenate([np.asarray(h, dtype=int) for h in hits if len(h)])
                sums = np.zeros(len(part))
                nz = lens > 0
                starts = np.concatenate([[0], np.cumsum(lens[nz])[:-1]])
                sums[nz] = np.add.reduceat(tilt[flat], starts)
                exc[lo: lo + chunk] = sums / (om * s**V.m)
            self._level_radius.append(s)
            self._level_centers.append(centers)
            self._level_excess.append(exc)
            self._level_tree.append(cKDTree(centers) if len(centers) else None)

    def members(self):
        """Iterate (level, center, radius, excess) over the whole family."""
        for k in range(self.levels + 1):
            s = self._level_radius[k]
            for c, e in zip(self._level_centers[k], self._level_excess[k]):
                yield k, c, s, e

    def member_count(self) -> int:
        return sum(len(c) for c in self._level_centers)

    def max_excess_at(self, points: np.ndarray) -> np.ndarray:
        """Sup of member excesses over the members containing each point."""
        points = np.atleast_2d(np.asarray(points, dtype=float))[:, : self.V.m]
        out = np.zeros(len(points))
        for k in range(self.levels + 1):
            tree = self._level_tree[k]
            if tree is None:
                continue
            s = self._level_radius[k]
            exc = self._level_excess[k]
            hits = tree.query_ball_point(points, s, workers=-1)
            for i, h in enumerate(hits):
                if h:
                    out[i] = max(out[i], exc[h].max())
        return out


def maximal_excess(V: DiscreteVarifold, x, family: DyadicCylinderFamily) -> float:
    """Discrete non-centered maximal excess at x over the dyadic family."""
    return float(family.max_excess_at(np.asarray(x, dtype=float)[None, :])[0])


@dataclass(frozen=True)
class GoodSet:
    """Grid nodes of B_1 where the maximal excess stays below the threshold.

    bad_measure estimates |B_1 minus K_lambda| by counting (area-weighted)
    bad cells at the grid resolution.
    """

    coords: np.ndarray
    positions: np.ndarray
    cell_weights: np.ndarray
    me_values: np.ndarray
    good: np.ndarray
    lam: float
    grid_h: float
    family: DyadicCylinderFamily = field(repr=False)

    @property
    def bad_measure(self) -> float:
        return float(self.cell_weights[~self.good].sum())

    @property
    def good_count(self) -> int:
        return int(self.good.sum())


def good_set(V: DiscreteVarifold, lam: float, grid_h: float | None = None,
             family: DyadicCylinderFamily | None = None,
             node_radius: float = 1.0) -> GoodSet:
    """Threshold the maximal excess on a cell-centered grid over B_1."""
    if lam <= 0:
        raise ValueError(f"threshold must be positive, got {lam:g}")
    if family is None:
        family = DyadicCylinderFamily(V, node_radius=node_radius)
    if grid_h is None:
        # multiple of the sample lattice, so grid cells tile sample cells
        grid_h = 4.0 * V.mesh_scale
    coords, positions, weights = disk_lattice(node_radius, grid_h, V.m)
    me = family.max_excess_at(positions)
    return GoodSet(coords, positions, weights, me, me <= lam, float(lam),
                   float(grid_h), family)


# ---------------------------------------------------------------------------
# report serialization


def excess_reports_csv(rows) -> str:
    """CSV for (CylinderSpec, ExcessReport) pairs:
    cx, cy, ..., radius, excess, mass_ratio, trusted."""
    if not rows:
        return ""
    m = len(np.atleast_1d(rows[0][0].center))
    header = ", ".join([f"c{ax}" for ax in "xyzw"[:m]] +
                       ["radius", "excess", "mass_ratio", "trusted"])
    lines = [header]
    for cyl, rep in rows:
        cvals = [f"{v:.17g}" for v in np.atleast_1d(cyl.center)]
        lines.append(", ".join(
            cvals + [f"{cyl.radius:.17g}", f"{rep.value:.17g}",
                     f"{rep.mass_ratio:.17g}", str(int(rep.trusted))]
        ))
    return "\n".join(lines) + "\n"
