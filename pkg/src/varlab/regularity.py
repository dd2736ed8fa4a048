"""Harmonic approximation of almost-harmonic grid functions and the
excess-decay experiment.

The harmonic fit projects the sheet average of a Q-valued grid function onto
harmonic polynomials (L^2 over the disk, weighted by the quadrature cells).
The basis is built per degree as the nullspace of the Laplacian acting on
homogeneous polynomial coefficients, so it works in any base dimension and
the fitted function is harmonic by construction, not by solving a boundary
value problem.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
from scipy.linalg import null_space

from .errors import ResolutionError
from .excess import spherical_excess
from .qvalued import QGridFunction
from .varifold import DiscreteVarifold, density_ratio, unit_ball_volume

CONDITION_CAP = 1e12


# ---------------------------------------------------------------------------
# harmonic polynomial basis


def _monomial_exponents(m: int, degree: int) -> np.ndarray:
    if degree == 0:
        return np.zeros((1, m), dtype=int)
    out = []

    def rec(prefix, remaining, slots):
        if slots == 1:
            out.append(prefix + [remaining])
            return
        for k in range(remaining + 1):
            rec(prefix + [k], remaining - k, slots - 1)

    rec([], degree, m)
    return np.array(out, dtype=int)


@lru_cache(maxsize=None)
def harmonic_basis(m: int, max_degree: int):
    """Harmonic polynomial basis up to max_degree: list of (exponents, coeffs).

    Degree-d harmonics are the nullspace of the Laplacian as a linear map on
    homogeneous coefficient vectors; signs and ordering are canonicalized so
    the basis is reproducible.
    """
    basis = []
    for d in range(max_degree + 1):
        exps = _monomial_exponents(m, d)
        if d < 2:
            vecs = np.eye(len(exps))
        else:
            lower = _monomial_exponents(m, d - 2)
            lower_index = {tuple(e): i for i, e in enumerate(lower)}
            lap = np.zeros((len(lower), len(exps)))
            for j, alpha in enumerate(exps):
                for ax in range(m):
                    if alpha[ax] >= 2:
                        beta = alpha.copy()
                        beta[ax] -= 2
                        lap[lower_index[tuple(beta)], j] += alpha[ax] * (alpha[ax] - 1)
            vecs = null_space(lap)
            if vecs.size == 0:
                continue
        for k in range(vecs.shape[1]):
            v = vecs[:, k].copy()
            lead = np.flatnonzero(np.abs(v) > 1e-10)
            if len(lead):
                v *= np.sign(v[lead[0]])
            v[np.abs(v) < 1e-14] = 0.0
            basis.append((exps, v))
    # deterministic ordering: by degree, then by the coefficient signature
    basis.sort(key=lambda t: (int(t[0].sum(axis=1)[0]), tuple(np.round(t[1], 12))))
    return tuple(basis)


def _eval_basis(basis, points: np.ndarray):
    """Values (N, B) and gradients (N, B, m) of the basis at the points."""
    points = np.atleast_2d(points)
    count, m = points.shape
    vals = np.empty((count, len(basis)))
    grads = np.empty((count, len(basis), m))
    for b, (exps, coeffs) in enumerate(basis):
        mono = np.ones((count, len(exps)))
        for ax in range(m):
            mono *= points[:, ax][:, None] ** exps[:, ax][None, :]
        vals[:, b] = mono @ coeffs
        for ax in range(m):
            dm = np.ones((count, len(exps)))
            for a in range(m):
                e = exps[:, a][None, :]
                x = points[:, a][:, None]
                if a == ax:
                    dm *= np.where(e > 0, e * x ** np.maximum(e - 1, 0), 0.0)
                else:
                    dm *= x**e
            grads[:, b, ax] = dm @ coeffs
    return vals, grads


# ---------------------------------------------------------------------------
# harmonic fit


@dataclass(frozen=True)
class HarmonicFit:
    """Least-squares harmonic approximation of the sheet average of f."""

    coefficients: np.ndarray      # (B, n)
    u_values: np.ndarray          # (N, n)
    u_gradients: np.ndarray       # (N, n, m)
    residual: float               # weighted integral of G(f, Q[u])^2
    dirichlet: float              # weighted integral of |grad u|^2
    degree_used: int
    condition: float
    notes: tuple = ()

    def as_qgrid(self, f: QGridFunction) -> QGridFunction:
        """Single-valued grid function carrying u with analytic derivatives."""
        g = QGridFunction(f.m, f.n, 1, f.h, f.radius, f.coords,
                          self.u_values[:, None, :], f.weights,
                          compute_derivatives=False)
        g.jacobians = self.u_gradients[:, None, :, :]
        g.deriv_ok = np.ones(len(f.coords), dtype=bool)
        return g


def harmonic_fit(f: QGridFunction, degree_cap: int = 4) -> HarmonicFit:
    """Weighted L^2 fit of the sheet average of f by harmonic polynomials.

    An ill-conditioned normal system (condition above 1e12) reduces the
    degree cap automatically; the reduction is recorded in `notes`.
    """
    target = f.values.mean(axis=1)  # (N, n) sheet average
    sqw = np.sqrt(f.weights)
    notes = []
    degree = degree_cap
    while True:
        basis = harmonic_basis(f.m, degree)
        vals, grads = _eval_basis(basis, f.positions)
        a = vals * sqw[:, None]
        sv = np.linalg.svd(a, compute_uv=False)
        condition = float(sv[0] / sv[-1]) if sv[-1] > 0 else float("inf")
        if condition <= CONDITION_CAP or degree == 0:
            break
        notes.append(f"degree cap reduced {degree} -> {degree - 1} "
                     f"(condition {condition:.3g})")
        degree -= 1
    coeffs, *_ = np.linalg.lstsq(a, target * sqw[:, None], rcond=None)
    u_vals = vals @ coeffs
    u_grads = np.einsum("nbm,bc->ncm", grads, coeffs)
    resid = float((((f.values - u_vals[:, None, :]) ** 2).sum(axis=(1, 2)) * f.weights).sum())
    dir_u = float(((u_grads**2).sum(axis=(1, 2)) * f.weights).sum())
    return HarmonicFit(coeffs, u_vals, u_grads, resid, dir_u, degree,
                       condition, tuple(notes))


# ---------------------------------------------------------------------------
# decay profiles


@dataclass(frozen=True)
class DecayProfile:
    radii: np.ndarray
    excess: np.ndarray
    fitted_exponent: float
    fit_residual: float
    included: np.ndarray
    flat: bool

    def csv(self) -> str:
        lines = ["r, excess, excess_over_r2, included_in_fit"]
        for r, e, inc in zip(self.radii, self.excess, self.included):
            over = e / (r * r)
            lines.append(f"{r:.17g}, {e:.17g}, {over:.17g}, {int(inc)}")
        return "\n".join(lines) + "\n"


def decay_profile(V: DiscreteVarifold, x, r0: float, levels: int,
                  q: int | None = None) -> DecayProfile:
    """Spherical excess at radii r0 * 2^-k, k = 0..levels, with a log-log
    slope fit over the radii above the discretization floor (excess > h^2
    entries only; excluded radii are flagged in the profile)."""
    x = np.asarray(x, dtype=float)
    if r0 / 2.0**levels < 8.0 * V.mesh_scale:
        raise ResolutionError(
            f"finest radius {r0 / 2.0 ** levels:g} below 8 mesh cells"
        )
    if q is not None:
        dens = density_ratio(V, x, max(8.0 * V.mesh_scale, r0 / 2.0**levels))
        if round(dens) != q:
            raise ValueError(f"density at the center is {dens:.3f}, expected {q}")
    radii = r0 * 2.0 ** -np.arange(levels + 1)
    exc = np.array([spherical_excess(V, x, r).value for r in radii])
    flat = bool((exc <= 1e-14).all())
    floor = V.mesh_scale**2
    included = exc > floor
    if flat or included.sum() < 2:
        return DecayProfile(radii, exc, float("nan"), float("nan"), included, flat)
    logs_r = np.log(radii[included])
    logs_e = np.log(exc[included])
    slope, intercept = np.polyfit(logs_r, logs_e, 1)
    resid = float(np.sqrt(np.mean((logs_e - (slope * logs_r + intercept)) ** 2)))
    return DecayProfile(radii, exc, float(slope), resid, included, flat)


# ---------------------------------------------------------------------------
# one decay step


@dataclass(frozen=True)
class PredecayReport:
    eta_used: float
    lhs: float
    rhs: float
    passed: bool
    applicable: bool
    failed_hypotheses: tuple
    hypotheses: dict = field(repr=False)
    margins: tuple = ()  # (eta, lhs, rhs) per grid point

    def csv(self) -> str:
        keys = sorted(self.hypotheses)
        lines = ["eta, lhs, rhs, passed, applicable, " + ", ".join(keys)]
        hyp = ", ".join(f"{self.hypotheses[k]:.17g}" for k in keys)
        lines.append(
            f"{self.eta_used:.17g}, {self.lhs:.17g}, {self.rhs:.17g}, "
            f"{int(self.passed)}, {int(self.applicable)}, {hyp}"
        )
        return "\n".join(lines) + "\n"


def _low_density_area(V: DiscreteVarifold, q: int, radius: float,
                      max_probes: int = 1500) -> float:
    """Estimated area of the region where the local density ratio (at scale
    16 mesh cells) rounds below q, inside B_radius."""
    from scipy.spatial import cKDTree

    in_ball = (V.positions**2).sum(axis=1) < radius**2
    idx = np.flatnonzero(in_ball)
    if len(idx) == 0:
        return 0.0
    stride = max(1, len(idx) // max_probes)
    probes = idx[::stride]
    r = 16.0 * V.mesh_scale
    tree = cKDTree(V.positions)
    hits = tree.query_ball_point(V.positions[probes], r, workers=-1)
    om = unit_ball_volume(V.m)
    local = np.array([V.masses[h].sum() for h in hits]) / (om * r**V.m)
    flagged = local < q - 0.5
    w_probe = V.weights[probes]
    total_area = float(V.weights[idx].sum())
    sampled_area = float(w_probe.sum())
    if sampled_area == 0.0:
        return 0.0
    return float(w_probe[flagged].sum()) * total_area / sampled_area


def predecay_step(V: DiscreteVarifold, delta: float, q: int,
                  eta_grid=(0.05, 0.1, 0.2), hyp_epsilon: float = 0.3
                  ) -> PredecayReport:
    """One excess-decay step at the best eta from the grid.

    Measures E(B_{5 eta}) against eta^{2-2 delta} E(B_5); hypothesis
    quantities (initial excess, low-density area fraction, mass-ratio
    pinching, center density) are computed and reported, never assumed.  A
    step whose hypotheses fail is "not applicable", which is distinct from a
    failed inequality.
    """
    if not 0.0 < delta < 1.0:
        raise ValueError(f"delta must lie in (0, 1), got {delta:g}")
    om = unit_ball_volume(V.m)
    e5 = spherical_excess(V, np.zeros(V.ambient_dim), 5.0).value
    mass_b1 = density_ratio(V, np.zeros(V.ambient_dim), 1.0)
    mass_b5 = density_ratio(V, np.zeros(V.ambient_dim), 5.0)
    dens0 = density_ratio(V, np.zeros(V.ambient_dim), 16.0 * V.mesh_scale)
    low_area = _low_density_area(V, q, 5.0)
    low_fraction = low_area / (om * 5.0**V.m)
    hyp = {
        "excess_b5": e5,
        "low_density_fraction": low_fraction,
        "mass_ratio_b1": mass_b1,
        "mass_ratio_b5": mass_b5,
        "density_at_center": dens0,
    }
    failed = []
    if e5 >= hyp_epsilon:
        failed.append("excess_smallness")
    if low_fraction >= hyp_epsilon:
        failed.append("low_density_fraction")
    if not (q - 0.5 < mass_b5 < q + 0.5 and q - 0.5 < mass_b1):
        failed.append("mass_ratio_pinching")
    if round(dens0) != q:
        failed.append("center_density")
    margins = []
    for eta in eta_grid:
        lhs = spherical_excess(V, np.zeros(V.ambient_dim), 5.0 * eta).value
        rhs = eta ** (2.0 - 2.0 * delta) * e5
        margins.append((float(eta), float(lhs), float(rhs)))
    def margin(t):
        _, lhs, rhs = t
        return lhs / rhs if rhs > 0 else (0.0 if lhs == 0 else float("inf"))
    eta_used, lhs, rhs = min(margins, key=margin)
    passed = lhs <= rhs
    return PredecayReport(eta_used, lhs, rhs, bool(passed), not failed,
                          tuple(failed), hyp, tuple(margins))
