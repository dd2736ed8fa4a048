import math

import numpy as np
import pytest

from varlab.errors import ResolutionError
from varlab.excess import CylinderSpec, cylindrical_excess
from varlab.fields import bump_vector_field
from varlab.grassmann import ProjectionPlane
from varlab.models import (
    CatenoidSpec,
    catenoid_d_constants,
    catenoid_excess_exact,
    catenoid_excess_quadrature,
    catenoid_mass_exact,
    d1_raw,
    extrapolated_limit,
    generate_catenoid,
    generate_plane,
    higher_catenoid_height_ratio,
    higher_catenoid_profile,
    lp_growth_ratio,
    missed_mass,
    missed_mass_ratio,
    morrey_bound,
    morrey_law_value,
    q_optimize,
)
from varlab.varifold import Cylinder, DiscreteVarifold, density_ratio, first_variation, mass


# -- plane generator -----------------------------------------------------------


def test_plane_mass(plane_q1):
    assert mass(plane_q1, Cylinder(np.zeros(2), 1.5)) == pytest.approx(
        math.pi * 1.5**2, rel=0.01)


def test_plane_multiplicity_density(plane_q3):
    for x in ([0.0, 0.0, 0.0], [0.5, -0.3, 0.0]):
        assert density_ratio(plane_q3, np.asarray(x), 0.4) == pytest.approx(3.0, rel=0.02)


def test_tilted_plane_excess_oracle():
    theta = 0.3
    plane = ProjectionPlane.spanning(
        [[math.cos(theta), 0, math.sin(theta)], [0, 1, 0]])
    V = generate_plane(2, 1, h=1 / 64, radius=1.5, plane=plane)
    rep = cylindrical_excess(V, CylinderSpec(np.zeros(2), 1.0))
    oracle = 2 * math.sin(theta) ** 2 / math.cos(theta)
    assert rep.value == pytest.approx(oracle, rel=0.01)


# -- catenoid generator ---------------------------------------------------------


def test_catenoid_mass_matches_antiderivative(catenoid_small):
    # interior radii cut cells, so the membership error is O(h); the full
    # truncation radius is cell-aligned and exact up to float summation
    for R in (2.0, 3.5):
        assert mass(catenoid_small, Cylinder(np.zeros(2), R)) == pytest.approx(
            catenoid_mass_exact(R), rel=0.01)
    assert catenoid_small.total_mass == pytest.approx(catenoid_mass_exact(4.0), rel=1e-12)


def test_catenoid_reflection_symmetry(catenoid_small):
    z = catenoid_small.positions[:, 2]
    up = catenoid_small.masses[z > 0].sum()
    down = catenoid_small.masses[z < 0].sum()
    assert up == pytest.approx(down, abs=1e-12)


def test_catenoid_rejects_coarse_mesh():
    with pytest.raises(ResolutionError):
        generate_catenoid(CatenoidSpec(scale=0.1, r_max=1.0), h=0.2)


def test_catenoid_stationary_under_refinement():
    X = bump_vector_field(np.array([1.2, 0.1, 0.2]), 0.7, np.array([0.3, 0.1, 1.0]))
    res = {}
    for h in (1 / 32, 1 / 64):
        V = generate_catenoid(CatenoidSpec(r_max=4.0), h=h)
        res[h] = abs(first_variation(V, X))
    assert res[1 / 32] / res[1 / 64] >= 1.5


# -- exact excess ----------------------------------------------------------------


def test_excess_vanishes_at_waist_radius():
    assert catenoid_excess_exact(1.0 + 1e-12, "area") == pytest.approx(0.0, abs=1e-5)


def test_excess_quadrature_cross_check():
    for tilt in ("area", "projection"):
        exact = catenoid_excess_exact(10.0, tilt)
        quad = catenoid_excess_quadrature(10.0, tilt)
        assert quad == pytest.approx(exact, rel=1e-9)


def test_excess_monotone_decreasing():
    Rs = np.logspace(1, 6, 40)
    vals = [catenoid_excess_exact(R, "area") for R in Rs]
    assert all(b < a for a, b in zip(vals, vals[1:]))


def test_d1_extrapolation_drift_small_cutoffs():
    est3 = extrapolated_limit(d1_raw, r_cutoff=1e3, ladder_start=10.0)
    est4 = extrapolated_limit(d1_raw, r_cutoff=1e4, ladder_start=10.0)
    assert abs(est4.value - est3.value) / est4.value < 0.01


# -- asymptotic constants ----------------------------------------------------------


@pytest.fixture(scope="module")
def dconst():
    return catenoid_d_constants(beta=0.25, p=4.0, r_cutoff=1e6)


def test_d_constants_positive_finite(dconst):
    for name in ("d1", "d2", "d3", "d4"):
        est = getattr(dconst, name)
        assert np.isfinite(est.value) and est.value > 0
        assert est.converged


def test_d_constants_stable_between_cutoffs(dconst):
    for name in ("d1", "d2", "d3", "d4"):
        est5 = getattr(catenoid_d_constants(beta=0.25, p=4.0, r_cutoff=1e5), name)
        est6 = getattr(dconst, name)
        assert abs(est6.value - est5.value) / abs(est6.value) < 1e-3


def test_d3_converges_across_beta():
    for beta in (0.1, 0.4):
        est = catenoid_d_constants(beta=beta, r_cutoff=1e6).d3
        assert est.converged and est.value > 0


# -- missed mass ----------------------------------------------------------------


def test_missed_mass_small_beta_is_neck_mass():
    # beta -> 0+: the skipped radius tends to sqrt(2), i.e. the bare neck
    got = missed_mass(CatenoidSpec(), 0.005, 1e4)
    r0 = math.sqrt(2.0)
    assert got == pytest.approx(catenoid_mass_exact(r0), rel=0.15)


def test_missed_mass_ratio_cauchy():
    a = missed_mass_ratio(0.25, 1e4)
    b = missed_mass_ratio(0.25, 1e5)
    assert abs(a - b) / b < 0.05


def test_missed_mass_below_total():
    spec = CatenoidSpec()
    for R in (1e3, 1e5):
        assert missed_mass(spec, 0.25, R) < catenoid_mass_exact(R)


def test_missed_mass_rejects_small_R():
    with pytest.raises(ValueError):
        missed_mass(CatenoidSpec(r_max=1.1), 0.49, 1.1)


def test_lp_growth_diverges():
    vals = [lp_growth_ratio(0.25, 4.0, R) for R in (1e2, 1e4, 1e6)]
    assert all(np.isfinite(v) and v > 0 for v in vals)


# -- higher-dimensional catenoids ---------------------------------------------------


def test_higher_profile_monotone_bounded():
    f3 = [higher_catenoid_profile(3, r) for r in (1.5, 3.0, 10.0, 100.0)]
    assert all(b > a for a, b in zip(f3, f3[1:]))
    assert f3[-1] < 2.0  # finite height for m >= 3


def test_higher_height_ratio_reported_stable():
    vals = [higher_catenoid_height_ratio(3, R) for R in (1e2, 1e3, 1e4)]
    assert all(np.isfinite(v) and v > 0 for v in vals)
    assert abs(vals[-1] - vals[-2]) / vals[-1] < 0.05


# -- Morrey optimization -----------------------------------------------------------


def test_q_rule_matches_displayed_choice():
    res = q_optimize(math.exp(-10.0), 2)
    assert res.q_rule == pytest.approx(2.1, abs=1e-12)


def test_bound_at_rule_below_law():
    for E in (math.exp(-5), math.exp(-10), math.exp(-20)):
        res = q_optimize(E, 2)
        bound = morrey_bound(E, 2, res.q_rule)
        assert bound <= 1.5 * morrey_law_value(E, 2)  # recorded constant


def test_rule_within_factor_two_of_numeric_optimum():
    for E in (math.exp(-5), math.exp(-10), math.exp(-20)):
        res = q_optimize(E, 2)
        num = morrey_bound(E, 2, res.q_numeric)
        rule = morrey_bound(E, 2, res.q_rule)
        assert num <= rule <= 2.0 * num


def test_morrey_rejects_out_of_range():
    with pytest.raises(ValueError):
        morrey_bound(0.5, 2, 2.5)
    with pytest.raises(ValueError):
        morrey_bound(math.exp(-5), 2, 3.5)
    with pytest.raises(ValueError):
        q_optimize(0.9, 2)


# -- file output ------------------------------------------------------------------


def test_generator_writes_varf(tmp_path, catenoid_small):
    path = tmp_path / "cat.varf"
    catenoid_small.save(path)
    back = DiscreteVarifold.load(path)
    assert back.total_mass == catenoid_small.total_mass
