"""Multivalued calculus on unordered Q-point configurations.

A Q-point is a multiset of Q points in R^n; the metric is the optimal-matching
distance (min over sheet permutations of the summed squared displacements).
Grid functions hold a Q-point per node of a cell-centered lattice over a disk,
with per-sheet Jacobians obtained by matched finite differences: sheets at
neighboring nodes are paired by the optimal permutation, and cells where that
pairing is ambiguous are marked "branching" and excluded from derivative
quadrature, mirroring the decomposition of the domain into pieces where the
function splits into Lipschitz branches.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import linear_sum_assignment

from .errors import DimensionMismatchError
from .fields import ScalarField

BRUTE_FORCE_MAX_Q = 6
AMBIGUITY_TOL = 1e-9
VALUE_TOL = 1e-12


@dataclass(frozen=True)
class QPoint:
    """An unordered multiset of Q points in R^n (stored as a (Q, n) array)."""

    points: np.ndarray

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=float)
        if pts.ndim == 1:
            pts = pts[:, None]
        if pts.ndim != 2 or pts.shape[0] < 1:
            raise ValueError(f"expected a (Q, n) array, got shape {pts.shape}")
        pts = pts.copy()
        pts.setflags(write=False)
        object.__setattr__(self, "points", pts)

    @property
    def q(self) -> int:
        return self.points.shape[0]

    @property
    def n(self) -> int:
        return self.points.shape[1]

    def shuffled(self, rng) -> "QPoint":
        return QPoint(self.points[rng.permutation(self.q)])


def _as_point_array(a) -> np.ndarray:
    if isinstance(a, QPoint):
        return a.points
    pts = np.asarray(a, dtype=float)
    if pts.ndim == 1:
        pts = pts[:, None]
    return pts


def _perm_list(q: int):
    return [np.array(p) for p in itertools.permutations(range(q))]


def match_sheets(a, b, ambiguity_tol: float = AMBIGUITY_TOL):
    """Optimal pairing of the sheets of b to the sheets of a.

    Returns (cost_sq, perm, ambiguous): perm[i] is the index in b matched to
    sheet i of a, cost_sq the summed squared displacements.  `ambiguous` is
    set when a different pairing of *values* comes within `ambiguity_tol` of
    optimal (permutations that merely relabel identical sheets do not count).
    Exhaustive search up to Q=6; Hungarian assignment beyond (exact cost, no
    ambiguity detection).
    """
    pa, pb = _as_point_array(a), _as_point_array(b)
    if pa.shape != pb.shape:
        raise DimensionMismatchError(f"shape mismatch {pa.shape} vs {pb.shape}")
    q = pa.shape[0]
    if q == 1:
        return float(((pa - pb) ** 2).sum()), np.array([0]), False
    if q <= BRUTE_FORCE_MAX_Q:
        perms = _perm_list(q)
        costs = np.array([((pa - pb[p]) ** 2).sum() for p in perms])
        best = int(np.argmin(costs))
        matched = pb[perms[best]]
        ambiguous = False
        for i, p in enumerate(perms):
            if i == best or costs[i] > costs[best] + ambiguity_tol:
                continue
            if np.max(np.abs(pb[p] - matched)) > VALUE_TOL:
                ambiguous = True
                break
        return float(costs[best]), perms[best], ambiguous
    cost_matrix = ((pa[:, None, :] - pb[None, :, :]) ** 2).sum(axis=2)
    rows, cols = linear_sum_assignment(cost_matrix)
    return float(cost_matrix[rows, cols].sum()), cols, False


def g_metric(a, b) -> float:
    """Matching metric: min over permutations of sqrt(sum |a_i - b_sigma(i)|^2)."""
    cost, _, _ = match_sheets(a, b)
    return float(np.sqrt(max(cost, 0.0)))


def eta_average(a) -> np.ndarray:
    """Arithmetic mean of the sheets; the minimizer of c -> sum |a_i - c|^2."""
    return _as_point_array(a).mean(axis=0)


def _batched_match(a: np.ndarray, b: np.ndarray, ambiguity_tol: float = AMBIGUITY_TOL):
    """Vectorized optimal matching for stacks of (K, Q, n) configurations.

    Returns (costs (K,), perm_idx (K, Q), ambiguous (K,)).
    """
    k, q, _ = a.shape
    if q == 1:
        costs = ((a - b) ** 2).sum(axis=(1, 2))
        return costs, np.zeros((k, 1), dtype=int), np.zeros(k, dtype=bool)
    if q > BRUTE_FORCE_MAX_Q:
        costs = np.empty(k)
        perms = np.empty((k, q), dtype=int)
        for i in range(k):
            c, p, _ = match_sheets(a[i], b[i])
            costs[i], perms[i] = c, p
        return costs, perms, np.zeros(k, dtype=bool)
    perms = _perm_list(q)
    all_costs = np.stack([((a - b[:, p, :]) ** 2).sum(axis=(1, 2)) for p in perms])
    best = np.argmin(all_costs, axis=0)
    costs = all_costs[best, np.arange(k)]
    perm_idx = np.stack([perms[j] for j in best])
    matched = np.take_along_axis(b, perm_idx[:, :, None], axis=1)
    ambiguous = np.zeros(k, dtype=bool)
    for j, p in enumerate(perms):
        close = all_costs[j] <= costs + ambiguity_tol
        close &= best != j
        if not close.any():
            continue
        diff = np.max(np.abs(b[close][:, p, :] - matched[close]), axis=(1, 2))
        idx = np.flatnonzero(close)
        ambiguous[idx[diff > VALUE_TOL]] = True
    return costs, perm_idx, ambiguous


def disk_lattice(radius: float, h: float, m: int = 2, subsamples: int = 4):
    """Cell-centered lattice over the disk B_radius in R^m.

    Cells whose center lies inside the disk are kept; boundary-straddling
    cells get the sampled inside-area fraction (subsamples^m points per cell)
    as their quadrature weight factor.
    """
    k = int(np.floor(radius / h)) + 1
    axes = [np.arange(-k, k + 1)] * m
    grids = np.meshgrid(*axes, indexing="ij")
    coords = np.stack([g.ravel() for g in grids], axis=1)
    pos = (coords + 0.5) * h
    keep = (pos**2).sum(axis=1) < radius**2
    coords, pos = coords[keep], pos[keep]
    order = np.lexsort(coords.T[::-1])
    coords, pos = coords[order], pos[order]
    off1 = ((np.arange(subsamples) + 0.5) / subsamples - 0.5) * h
    sub = np.stack([g.ravel() for g in np.meshgrid(*([off1] * m), indexing="ij")], axis=1)
    inside = ((pos[:, None, :] + sub[None, :, :]) ** 2).sum(axis=2) < radius**2
    frac = inside.mean(axis=1)
    return coords, pos, frac * h**m


class QGridFunction:
    """Q-valued function sampled on a cell-centered disk lattice.

    Attributes:
        coords: (N, m) integer lattice coordinates (position = (coords+.5)*h)
        values: (N, Q, n) sheet values
        weights: (N,) quadrature weights (cell area times inside fraction)
        jacobians: (N, Q, n, m) matched finite-difference sheet Jacobians
        deriv_ok: (N,) nodes with usable derivative data
        branching: (N,) nodes where neighbor matching was ambiguous
    """

    def __init__(self, m, n, q, h, radius, coords, values, weights=None,
                 compute_derivatives=True):
        self.m, self.n, self.q = int(m), int(n), int(q)
        self.h, self.radius = float(h), float(radius)
        self.coords = np.asarray(coords, dtype=int)
        self.values = np.asarray(values, dtype=float).reshape(len(self.coords), self.q, self.n)
        if weights is None:
            _, _, w = disk_lattice(radius, h, m)
            if len(w) != len(self.coords):
                raise ValueError("node set does not match the disk lattice; pass weights")
            weights = w
        self.weights = np.asarray(weights, dtype=float)
        self.positions = (self.coords + 0.5) * self.h
        self._index = {tuple(c): i for i, c in enumerate(self.coords)}
        self.jacobians = np.zeros((len(self.coords), self.q, self.n, self.m))
        self.deriv_ok = np.zeros(len(self.coords), dtype=bool)
        self.branching = np.zeros(len(self.coords), dtype=bool)
        if compute_derivatives:
            self._compute_derivatives()

    @classmethod
    def from_callable(cls, fn, radius, h, q, n, m=2, compute_derivatives=True):
        """Sample fn(positions) -> (N, Q, n) on the disk lattice."""
        coords, pos, w = disk_lattice(radius, h, m)
        vals = np.asarray(fn(pos), dtype=float).reshape(len(pos), q, n)
        return cls(m, n, q, h, radius, coords, vals, w, compute_derivatives)

    def node_index(self, coord) -> int | None:
        return self._index.get(tuple(int(c) for c in coord))

    def value_at(self, i: int) -> QPoint:
        return QPoint(self.values[i])

    def neighbor_table(self, offset):
        """Index pairs (i, j) with coords[j] = coords[i] + offset."""
        offset = np.asarray(offset, dtype=int)
        shifted = self.coords + offset
        js = np.fromiter(
            (self._index.get(tuple(c), -1) for c in shifted), dtype=int, count=len(shifted)
        )
        ok = js >= 0
        return np.flatnonzero(ok), js[ok]

    def _compute_derivatives(self):
        n_nodes = len(self.coords)
        self.deriv_ok[:] = True
        ambiguous_any = np.zeros(n_nodes, dtype=bool)
        for ax in range(self.m):
            offset = np.zeros(self.m, dtype=int)
            offset[ax] = 1
            i_plus, j_plus = self.neighbor_table(offset)
            i_minus, j_minus = self.neighbor_table(-offset)
            has_plus = np.zeros(n_nodes, dtype=bool)
            has_minus = np.zeros(n_nodes, dtype=bool)
            plus_val = np.zeros((n_nodes, self.q, self.n))
            minus_val = np.zeros((n_nodes, self.q, self.n))
            if len(i_plus):
                _, perm, amb = _batched_match(self.values[i_plus], self.values[j_plus])
                plus_val[i_plus] = np.take_along_axis(
                    self.values[j_plus], perm[:, :, None], axis=1
                )
                has_plus[i_plus] = True
                ambiguous_any[i_plus] |= amb
            if len(i_minus):
                _, perm, amb = _batched_match(self.values[i_minus], self.values[j_minus])
                minus_val[i_minus] = np.take_along_axis(
                    self.values[j_minus], perm[:, :, None], axis=1
                )
                has_minus[i_minus] = True
                ambiguous_any[i_minus] |= amb
            central = has_plus & has_minus
            only_plus = has_plus & ~has_minus
            only_minus = has_minus & ~has_plus
            self.jacobians[central, :, :, ax] = (
                plus_val[central] - minus_val[central]
            ) / (2.0 * self.h)
            self.jacobians[only_plus, :, :, ax] = (
                plus_val[only_plus] - self.values[only_plus]
            ) / self.h
            self.jacobians[only_minus, :, :, ax] = (
                self.values[only_minus] - minus_val[only_minus]
            ) / self.h
            self.deriv_ok &= has_plus | has_minus
        self.branching = ambiguous_any
        self.deriv_ok &= ~ambiguous_any

    # -- serialization: header "qgrid 1 m n Q h r", then one node per line --

    def dumps(self) -> str:
        lines = [f"qgrid 1 {self.m} {self.n} {self.q} {self.h:.17g} {self.radius:.17g}"]
        for c, v in zip(self.coords, self.values):
            parts = [str(int(x)) for x in c] + [f"{x:.17g}" for x in v.ravel()]
            lines.append(" ".join(parts))
        return "\n".join(lines) + "\n"

    def save(self, path):
        with open(path, "w") as f:
            f.write(self.dumps())

    @classmethod
    def loads(cls, text: str) -> "QGridFunction":
        lines = [ln for ln in text.splitlines() if ln.strip()]
        head = lines[0].split()
        if head[:2] != ["qgrid", "1"]:
            raise ValueError(f"not a qgrid v1 header: {lines[0]!r}")
        m, n, q = int(head[2]), int(head[3]), int(head[4])
        h, radius = float(head[5]), float(head[6])
        coords, values = [], []
        for ln in lines[1:]:
            parts = ln.split()
            coords.append([int(x) for x in parts[:m]])
            values.append([float(x) for x in parts[m:]])
        coords = np.array(coords, dtype=int)
        values = np.array(values, dtype=float).reshape(len(coords), q, n)
        lat_coords, _, w = disk_lattice(radius, h, m)
        if len(lat_coords) == len(coords) and np.array_equal(lat_coords, coords):
            weights = w
        else:
            weights = np.full(len(coords), h**m)
        return cls(m, n, q, h, radius, coords, values, weights)

    @classmethod
    def load(cls, path) -> "QGridFunction":
        with open(path) as f:
            return cls.loads(f.read())


def dirichlet_energy(f: QGridFunction, exponent: float = 2.0) -> float:
    """Sum over usable nodes of sum_i |Df_i|^exponent times cell area."""
    ok = f.deriv_ok
    norms_sq = (f.jacobians[ok] ** 2).sum(axis=(2, 3))
    if exponent == 2.0:
        per_node = norms_sq.sum(axis=1)
    else:
        per_node = (norms_sq ** (exponent / 2.0)).sum(axis=1)
    return float((per_node * f.weights[ok]).sum())


def weak_laplacian_pairing(f: QGridFunction, phi: ScalarField):
    """Quadrature of integral of sum_i grad(phi) . Df_i over the disk.

    phi must be compactly supported strictly inside the grid disk.  Returns a
    float for scalar targets (n=1), an (n,) vector otherwise.
    """
    reach = float(np.linalg.norm(phi.support_center[: f.m])) + phi.support_radius
    if reach >= f.radius:
        raise ValueError(
            f"test function support (reach {reach:.3g}) is not compact in B_{f.radius:g}"
        )
    ok = f.deriv_ok
    grads = phi.grad(f.positions[ok])  # (N, m)
    # sum over sheets of Df_i @ grad(phi): (N, Q, n, m) x (N, m) -> (N, n)
    contrib = np.einsum("kqnm,km->kn", f.jacobians[ok], grads)
    total = (contrib * f.weights[ok][:, None]).sum(axis=0)
    return float(total[0]) if f.n == 1 else total


def lipschitz_constant(f: QGridFunction, mask=None, stencil_radius: int = 2) -> float:
    """Max finite-difference slope of f over node pairs within the stencil.

    An underestimate of the true Lipschitz constant that converges on
    Lipschitz inputs; `mask` restricts the scan to a node subset.
    """
    if mask is None:
        mask = np.ones(len(f.coords), dtype=bool)
    best = 0.0
    offsets = itertools.product(range(-stencil_radius, stencil_radius + 1), repeat=f.m)
    for off in offsets:
        if all(o == 0 for o in off) or off > tuple(-o for o in off):
            continue  # scan each unordered pair once
        i_idx, j_idx = f.neighbor_table(off)
        keep = mask[i_idx] & mask[j_idx]
        if not keep.any():
            continue
        i_idx, j_idx = i_idx[keep], j_idx[keep]
        costs, _, _ = _batched_match(f.values[i_idx], f.values[j_idx])
        dist = np.linalg.norm(np.asarray(off, dtype=float)) * f.h
        best = max(best, float(np.sqrt(costs.max(initial=0.0))) / dist)
    return best
