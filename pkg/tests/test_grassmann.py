import math

import numpy as np
import pytest

from varlab.errors import DimensionMismatchError
from varlab.grassmann import ProjectionPlane, best_fit_plane, hs_distance


def line(theta):
    return ProjectionPlane(np.array([[math.cos(theta), math.sin(theta)]]))


def random_plane(rng, m, d):
    return ProjectionPlane.spanning(rng.normal(size=(m, d)))


def test_identity_distance_zero():
    a = ProjectionPlane.axis_aligned(1, 2)
    assert hs_distance(a, a) == 0.0


def test_orthogonal_lines_distance_sqrt2():
    assert hs_distance(line(0.0), line(math.pi / 2)) == pytest.approx(math.sqrt(2), abs=1e-12)


def test_quarter_turn_distance_one():
    # |P_a - P_b|^2 = 2 sin^2(theta) for lines at angle theta
    assert hs_distance(line(0.0), line(math.pi / 4)) == pytest.approx(1.0, abs=1e-12)


def test_dimension_mismatch_rejected():
    with pytest.raises(DimensionMismatchError):
        hs_distance(ProjectionPlane.axis_aligned(1, 2), ProjectionPlane.axis_aligned(1, 3))
    with pytest.raises(DimensionMismatchError):
        hs_distance(ProjectionPlane.axis_aligned(1, 3), ProjectionPlane.axis_aligned(2, 3))


def test_metric_properties_random_triples():
    rng = np.random.default_rng(7)
    for _ in range(200):
        a, b, c = (random_plane(rng, 2, 4) for _ in range(3))
        dab, dbc, dac = hs_distance(a, b), hs_distance(b, c), hs_distance(a, c)
        assert dab >= 0
        assert dab == pytest.approx(hs_distance(b, a), abs=1e-13)
        assert dac <= dab + dbc + 1e-12


def test_projection_idempotent():
    rng = np.random.default_rng(3)
    for _ in range(50):
        plane = random_plane(rng, 2, 5)
        v = rng.normal(size=(10, 5))
        once = plane.project(v)
        assert np.max(np.abs(plane.project(once) - once)) < 1e-12


def test_non_orthonormal_basis_rejected():
    with pytest.raises(ValueError):
        ProjectionPlane(np.array([[1.0, 1.0], [0.0, 1.0]]))


def test_best_fit_recovers_single_plane():
    plane = ProjectionPlane.spanning([[1.0, 0.3, -0.2], [0.1, 1.0, 0.4]])
    res = best_fit_plane(plane.projection_matrix(), 2)
    assert hs_distance(res.plane, plane) < 1e-9
    assert not res.degenerate


def test_best_fit_symmetric_tilts_gives_midplane():
    # equal and opposite tilts about the x-axis in R^3 average to the flat plane
    theta = 0.4
    up = ProjectionPlane.spanning(
        [[1.0, 0.0, 0.0], [0.0, math.cos(theta), math.sin(theta)]])
    down = ProjectionPlane.spanning(
        [[1.0, 0.0, 0.0], [0.0, math.cos(theta), -math.sin(theta)]])
    avg = 0.5 * (up.projection_matrix() + down.projection_matrix())
    res = best_fit_plane(avg, 2)
    flat = ProjectionPlane.axis_aligned(2, 3)
    assert hs_distance(res.plane, flat) < 1e-12
    # brute-force check over a tilt grid: no plane beats the midplane
    best_trace = np.trace(avg @ flat.projection_matrix())
    for phi in np.linspace(-1.2, 1.2, 41):
        cand = ProjectionPlane.spanning(
            [[1.0, 0.0, 0.0], [0.0, math.cos(phi), math.sin(phi)]])
        assert np.trace(avg @ cand.projection_matrix()) <= best_trace + 1e-12


def test_best_fit_weighted_lines():
    e1 = ProjectionPlane(np.array([[1.0, 0.0]]))
    e2 = ProjectionPlane(np.array([[0.0, 1.0]]))
    mix = 0.6 * e1.projection_matrix() + 0.4 * e2.projection_matrix()
    res = best_fit_plane(mix, 1)
    assert hs_distance(res.plane, e1) < 1e-12


def test_best_fit_beats_random_candidates():
    rng = np.random.default_rng(11)
    planes = [random_plane(rng, 2, 4) for _ in range(6)]
    weights = rng.uniform(0.1, 1.0, size=6)
    A = sum(w * p.projection_matrix() for w, p in zip(weights, planes))
    A /= weights.sum()
    res = best_fit_plane(A, 2)
    best_trace = np.trace(A @ res.plane.projection_matrix())
    for _ in range(200):
        cand = random_plane(rng, 2, 4)
        assert np.trace(A @ cand.projection_matrix()) <= best_trace + 1e-12


def test_best_fit_flags_degenerate_spectrum():
    res = best_fit_plane(np.eye(3), 2)
    assert res.degenerate
    assert res.plane.m == 2


def test_best_fit_deterministic_under_degeneracy():
    a = best_fit_plane(np.eye(4), 2)
    b = best_fit_plane(np.eye(4), 2)
    assert np.array_equal(a.plane.basis, b.plane.basis)
