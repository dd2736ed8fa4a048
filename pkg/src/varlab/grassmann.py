"""m-planes in R^{m+n} as orthonormal bases, with the projection metric.

A plane is stored by m orthonormal basis rows plus an offset point; the
induced projection matrix is materialized on demand.  Distances between
(linear parts of) planes are Frobenius distances between their projection
matrices.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DimensionMismatchError

ORTHO_TOL = 1e-12


def _orthonormality_defect(basis: np.ndarray) -> float:
    gram = basis @ basis.T
    return float(np.max(np.abs(gram - np.eye(basis.shape[0]))))


@dataclass(frozen=True)
class ProjectionPlane:
    """An affine m-plane in R^{m+n}, linear part given by orthonormal rows."""

    basis: np.ndarray
    offset: np.ndarray = None

    def __post_init__(self):
        basis = np.atleast_2d(np.asarray(self.basis, dtype=float))
        offset = self.offset
        if offset is None:
            offset = np.zeros(basis.shape[1])
        offset = np.asarray(offset, dtype=float)
        if offset.shape != (basis.shape[1],):
            raise DimensionMismatchError(
                f"offset shape {offset.shape} does not match ambient dimension {basis.shape[1]}"
            )
        defect = _orthonormality_defect(basis)
        if defect > 1e-9:
            raise ValueError(f"basis rows are not orthonormal (defect {defect:.2e})")
        if defect > ORTHO_TOL:
            # fixable round-off: re-orthonormalize via QR, keep orientation
            q, r = np.linalg.qr(basis.T)
            basis = (q * np.sign(np.diag(r))).T
        basis.setflags(write=False)
        offset.setflags(write=False)
        object.__setattr__(self, "basis", basis)
        object.__setattr__(self, "offset", offset)

    @property
    def m(self) -> int:
        return self.basis.shape[0]

    @property
    def ambient_dim(self) -> int:
        return self.basis.shape[1]

    def projection_matrix(self) -> np.ndarray:
        return self.basis.T @ self.basis

    def project(self, points: np.ndarray) -> np.ndarray:
        """Orthogonal projection of points onto the linear part."""
        pts = np.asarray(points, dtype=float)
        return (pts @ self.basis.T) @ self.basis

    def coords(self, points: np.ndarray) -> np.ndarray:
        """In-plane coordinates of the projections of (points - offset)."""
        return (np.asarray(points, dtype=float) - self.offset) @ self.basis.T

    @classmethod
    def axis_aligned(cls, m: int, ambient_dim: int, offset=None) -> "ProjectionPlane":
        """The reference plane spanned by the first m coordinate axes."""
        return cls(np.eye(ambient_dim)[:m], offset)

    @classmethod
    def spanning(cls, rows, offset=None) -> "ProjectionPlane":
        """Plane spanned by the given (not necessarily orthonormal) rows."""
        rows = np.atleast_2d(np.asarray(rows, dtype=float))
        q, r = np.linalg.qr(rows.T)
        signs = np.sign(np.diag(r))
        signs[signs == 0] = 1.0
        return cls((q * signs).T, offset)


def hs_distance(a: ProjectionPlane, b: ProjectionPlane) -> float:
    """Frobenius distance between the projection matrices of two planes.

    Zero iff the linear parts coincide; offsets are ignored.
    """
    if a.ambient_dim != b.ambient_dim or a.m != b.m:
        raise DimensionMismatchError(
            f"incompatible planes: ({a.m}, {a.ambient_dim}) vs ({b.m}, {b.ambient_dim})"
        )
    # the entrywise difference avoids the sqrt(eps) cancellation floor of the
    # 2m - 2 tr(Pa Pb) shortcut near zero distance
    diff = a.projection_matrix() - b.projection_matrix()
    return float(np.linalg.norm(diff))


def _canonical_sign(v: np.ndarray) -> np.ndarray:
    for x in v:
        if abs(x) > 1e-10:
            return v if x > 0 else -v
    return v


@dataclass(frozen=True)
class BestFitResult:
    plane: ProjectionPlane
    eigenvalues: np.ndarray
    degenerate: bool = False


def best_fit_plane(A: np.ndarray, m: int) -> BestFitResult:
    """Rank-m plane maximizing trace(A P) over rank-m projections P.

    A must be symmetric PSD (e.g. a mass-weighted mean of tangent
    projections); the maximizer is spanned by the m leading eigenvectors,
    which also minimizes the summed squared projection distances since
    |P_T - P|^2 = 2m - 2 trace(P_T P).  A tie between eigenvalues m and
    m+1 (within 1e-12) is reported through the `degenerate` flag; ordering
    stays deterministic (eigenvalue descending, then lexicographically
    smallest sign-fixed eigenvector first).
    """
    A = np.asarray(A, dtype=float)
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise DimensionMismatchError(f"expected a square matrix, got shape {A.shape}")
    if not 0 < m < A.shape[0]:
        raise ValueError(f"rank m={m} out of range for ambient dimension {A.shape[0]}")
    if np.max(np.abs(A - A.T)) > 1e-9 * max(1.0, np.max(np.abs(A))):
        raise ValueError("matrix is not symmetric")
    w, v = np.linalg.eigh(0.5 * (A + A.T))
    w = w[::-1]
    v = v[:, ::-1]
    vecs = [_canonical_sign(v[:, i].copy()) for i in range(v.shape[1])]
    # stable re-ordering inside near-equal eigenvalue groups
    order = sorted(
        range(len(w)), key=lambda i: (-np.round(w[i], 12), tuple(np.round(vecs[i], 12)))
    )
    w = w[order]
    vecs = [vecs[i] for i in order]
    degenerate = bool(abs(w[m - 1] - w[m]) <= 1e-12)
    basis = np.stack(vecs[:m])
    return BestFitResult(ProjectionPlane(basis), w.copy(), degenerate)
