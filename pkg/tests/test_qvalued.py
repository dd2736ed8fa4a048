import math

import numpy as np
import pytest
from scipy import integrate

from varlab.errors import DimensionMismatchError
from varlab.fields import ScalarField, radial_bump
from varlab.qvalued import (
    QGridFunction,
    QPoint,
    dirichlet_energy,
    disk_lattice,
    eta_average,
    g_metric,
    lipschitz_constant,
    match_sheets,
    weak_laplacian_pairing,
)


def test_metric_identity():
    a = QPoint(np.array([[0.3, -1.2], [2.0, 0.1], [0.0, 0.0]]))
    assert g_metric(a, a) == 0.0


def test_metric_matched_pair():
    a = QPoint([[0.0, 0.0], [0.0, 0.0]])
    b = QPoint([[3.0, 4.0], [0.0, 0.0]])
    assert g_metric(a, b) == pytest.approx(5.0, abs=1e-14)


def test_metric_multiset_equality():
    a = QPoint(np.array([[0.0], [1.0]]))
    b = QPoint(np.array([[1.0], [0.0]]))
    assert g_metric(a, b) == 0.0


def test_metric_rejects_mismatched_q():
    with pytest.raises(DimensionMismatchError):
        g_metric(QPoint([[0.0]]), QPoint([[0.0], [1.0]]))


def test_triangle_inequality_exhaustive():
    rng = np.random.default_rng(5)
    for _ in range(1000):
        a, b, c = (rng.normal(size=(3, 2)) for _ in range(3))
        assert g_metric(a, c) <= g_metric(a, b) + g_metric(b, c) + 1e-12


def test_permutation_invariance():
    rng = np.random.default_rng(9)
    for _ in range(50):
        a = QPoint(rng.normal(size=(4, 2)))
        b = QPoint(rng.normal(size=(4, 2)))
        assert g_metric(a.shuffled(rng), b.shuffled(rng)) == pytest.approx(
            g_metric(a, b), abs=1e-12)


def test_hungarian_path_matches_brute_force():
    rng = np.random.default_rng(13)
    a = rng.normal(size=(7, 2))  # Q = 7 goes through the assignment solver
    b = rng.normal(size=(7, 2))
    exact = min(
        math.sqrt(((a - b[list(p)]) ** 2).sum())
        for p in __import__("itertools").permutations(range(7))
    )
    assert g_metric(a, b) == pytest.approx(exact, abs=1e-12)


def test_variance_identity():
    rng = np.random.default_rng(2)
    for _ in range(20):
        a = rng.normal(size=(5, 3))
        mean = eta_average(a)
        lhs = g_metric(a, np.tile(mean, (5, 1))) ** 2
        assert lhs == pytest.approx(((a - mean) ** 2).sum(), abs=1e-12)


def test_eta_examples():
    assert eta_average(np.array([[1.0], [3.0]]))[0] == pytest.approx(2.0)
    assert np.allclose(eta_average(np.tile([[0.7, -0.3]], (4, 1))), [0.7, -0.3])
    sym = np.array([[1.0, 0.0], [0.0, 1.0], [-1.0, -1.0]])
    assert np.allclose(eta_average(sym), [0.0, 0.0], atol=1e-15)


def test_match_ambiguity_detection():
    a = np.array([[-1.0], [1.0]])
    b = np.array([[0.0], [1e-10]])
    _, _, ambiguous = match_sheets(a, b)
    assert ambiguous
    # identical sheets permute freely but the matched values coincide
    _, _, amb2 = match_sheets(a, np.array([[0.5], [0.5]]))
    assert not amb2


# ---------------------------------------------------------------------------
# grid functions


def const_grid(value, q=2, h=1 / 16):
    def fn(pts):
        return np.tile(np.asarray(value, dtype=float), (len(pts), q, 1))
    return QGridFunction.from_callable(fn, radius=1.0, h=h, q=q, n=1)


def test_dirichlet_constant_zero():
    f = const_grid([0.7])
    assert dirichlet_energy(f) == 0.0


def test_dirichlet_linear_single_valued():
    A = np.array([1.3, -0.7])

    def fn(pts):
        return (pts @ A)[:, None, None]

    f = QGridFunction.from_callable(fn, radius=1.0, h=1 / 64, q=1, n=1)
    exact = float(A @ A) * math.pi
    assert dirichlet_energy(f) == pytest.approx(exact, rel=0.02)


def test_dirichlet_two_sheets_doubles():
    A = np.array([0.8, 0.5])

    def fn(pts):
        u = pts @ A
        return np.stack([u, -u], axis=1)[:, :, None]

    f = QGridFunction.from_callable(fn, radius=1.0, h=1 / 64, q=2, n=1)
    exact = 2.0 * float(A @ A) * math.pi
    assert dirichlet_energy(f) == pytest.approx(exact, rel=0.02)


def test_dirichlet_invariances():
    rng = np.random.default_rng(21)

    def fn(pts):
        u = 0.3 * pts[:, 0] + 0.1 * pts[:, 1] ** 2
        return np.stack([u, -0.5 * u], axis=1)[:, :, None]

    f = QGridFunction.from_callable(fn, radius=1.0, h=1 / 32, q=2, n=1)
    base = dirichlet_energy(f)
    # relabeling sheets per node
    vals = f.values.copy()
    for i in range(len(vals)):
        vals[i] = vals[i][rng.permutation(2)]
    g = QGridFunction(2, 1, 2, f.h, f.radius, f.coords, vals, f.weights)
    assert dirichlet_energy(g) == pytest.approx(base, abs=1e-12)
    # adding a constant to all sheets
    h2 = QGridFunction(2, 1, 2, f.h, f.radius, f.coords, f.values + 3.7, f.weights)
    assert dirichlet_energy(h2) == pytest.approx(base, abs=1e-10)


def test_pairing_constant_zero():
    f = const_grid([2.0])
    phi = radial_bump(np.zeros(2), 0.7)
    assert weak_laplacian_pairing(f, phi) == 0.0


def test_pairing_rejects_uncontained_support():
    f = const_grid([0.0])
    phi = radial_bump(np.array([0.8, 0.0]), 0.5)
    with pytest.raises(ValueError):
        weak_laplacian_pairing(f, phi)


def test_pairing_harmonic_refinement():
    # degree-5 harmonic: the finite-difference error field has nonzero
    # divergence, so the pairing shows a residual that dies under refinement
    def fn(pts):
        x, y = pts[:, 0], pts[:, 1]
        return (x**5 - 10 * x**3 * y**2 + 5 * x * y**4)[:, None, None]

    phi = radial_bump(np.array([0.15, 0.0]), 0.6)
    res = []
    for h in (1 / 32, 1 / 64, 1 / 128):
        f = QGridFunction.from_callable(fn, radius=1.0, h=h, q=1, n=1)
        res.append(abs(weak_laplacian_pairing(f, phi)))
    assert res[0] <= 0.5 * (1 / 32)
    assert res[0] / res[1] >= 1.5
    assert res[1] / res[2] >= 1.5


def test_pairing_saddle_small():
    def fn(pts):
        return (pts[:, 0] ** 2 - pts[:, 1] ** 2)[:, None, None]

    f = QGridFunction.from_callable(fn, radius=1.0, h=1 / 64, q=1, n=1)
    phi = radial_bump(np.zeros(2), 0.7)
    assert abs(weak_laplacian_pairing(f, phi)) <= 1 / 64


def test_pairing_laplacian_oracle():
    # f = |x|^2 has constant Laplacian 2m, so the pairing equals -2m int(phi),
    # evaluated independently by radial quadrature
    def fn(pts):
        return (pts**2).sum(axis=1)[:, None, None]

    radius = 0.8
    f = QGridFunction.from_callable(fn, radius=1.0, h=1 / 128, q=1, n=1)
    phi = radial_bump(np.zeros(2), radius)
    val = weak_laplacian_pairing(f, phi)
    profile = lambda r: math.exp(1.0 - 1.0 / (1.0 - (r / radius) ** 2)) if r < radius else 0.0
    integral, _ = integrate.quad(lambda r: profile(r) * 2 * math.pi * r, 0, radius)
    assert val == pytest.approx(-4.0 * integral, rel=0.02)


def test_pairing_linear_in_test_function():
    def fn(pts):
        u = np.sin(pts[:, 0]) * pts[:, 1]
        return np.stack([u, 0.2 * u**2], axis=1)[:, :, None]

    f = QGridFunction.from_callable(fn, radius=1.0, h=1 / 32, q=2, n=1)
    rng = np.random.default_rng(4)
    p1 = radial_bump(np.array([0.1, 0.0]), 0.6)
    p2 = radial_bump(np.array([-0.2, 0.1]), 0.5)
    for _ in range(5):
        a, b = rng.normal(size=2)
        combo = ScalarField(
            value_fn=lambda x, a=a, b=b: a * p1.value(x) + b * p2.value(x),
            grad_fn=lambda x, a=a, b=b: a * p1.grad(x) + b * p2.grad(x),
            support_center=np.zeros(2), support_radius=0.75,
        )
        lhs = weak_laplacian_pairing(f, combo)
        rhs = a * weak_laplacian_pairing(f, p1) + b * weak_laplacian_pairing(f, p2)
        assert lhs == pytest.approx(rhs, abs=1e-12)


def test_lipschitz_constant_zero_for_constant():
    assert lipschitz_constant(const_grid([1.0])) == 0.0


def test_lipschitz_single_valued_linear():
    A = np.array([0.6, -0.3])

    def fn(pts):
        return (pts @ A)[:, None, None]

    f = QGridFunction.from_callable(fn, radius=1.0, h=1 / 64, q=1, n=1)
    op_norm = float(np.linalg.norm(A))
    assert lipschitz_constant(f) == pytest.approx(op_norm, rel=0.05)


def test_lipschitz_two_sheet_fold():
    c = 0.4

    def fn(pts):
        u = c * pts[:, 0]
        return np.stack([u, -u], axis=1)[:, :, None]

    f = QGridFunction.from_callable(fn, radius=1.0, h=1 / 64, q=2, n=1)
    # matched sheets across the fold give sqrt(2)*c (regression value)
    assert lipschitz_constant(f) == pytest.approx(math.sqrt(2) * c, rel=0.05)


def test_branching_cells_excluded():
    vals = {(-1, 0): [[-1.0], [1.0]], (0, 0): [[0.0], [1e-10]], (1, 0): [[-1.0], [1.0]]}

    def fn(pts):
        out = np.zeros((len(pts), 2, 1))
        for i, p in enumerate(pts):
            key = (int(np.floor(p[0] / 0.25)), int(np.floor(p[1] / 0.25)))
            out[i] = np.asarray(vals.get(key, [[5.0], [-5.0]]))
        return out

    f = QGridFunction.from_callable(fn, radius=1.0, h=0.25, q=2, n=1)
    assert f.branching.any()
    assert not f.deriv_ok[f.branching].any()


def test_qgrid_serialization_roundtrip(tmp_path):
    def fn(pts):
        u = pts[:, 0] * 0.3
        return np.stack([u, u + 1.0], axis=1)[:, :, None]

    f = QGridFunction.from_callable(fn, radius=0.5, h=1 / 16, q=2, n=1)
    path = tmp_path / "f.qgrid"
    f.save(path)
    g = QGridFunction.load(path)
    assert g.dumps() == f.dumps()
    assert np.array_equal(g.coords, f.coords)
    assert np.array_equal(g.values, f.values)
    assert np.allclose(g.jacobians, f.jacobians)


def test_disk_lattice_weights_cover_disk():
    _, _, w = disk_lattice(1.0, 1 / 64, 2)
    assert w.sum() == pytest.approx(math.pi, rel=0.005)
