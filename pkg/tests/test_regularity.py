import math

import numpy as np
import pytest

from varlab.errors import ResolutionError
from varlab.fields import radial_bump
from varlab.models import generate_graph, generate_plane
from varlab.qvalued import QGridFunction, dirichlet_energy, weak_laplacian_pairing
from varlab.regularity import (
    _eval_basis,
    decay_profile,
    harmonic_basis,
    harmonic_fit,
    predecay_step,
)

from conftest import harmonic_sheets


# -- basis -----------------------------------------------------------------


def test_harmonic_basis_dimensions_2d():
    basis = harmonic_basis(2, 4)
    degrees = [int(exps.sum(axis=1)[0]) for exps, _ in basis]
    counts = {d: degrees.count(d) for d in range(5)}
    assert counts == {0: 1, 1: 2, 2: 2, 3: 2, 4: 2}


def test_harmonic_basis_annihilated_by_laplacian():
    rng = np.random.default_rng(6)
    pts = rng.uniform(-0.7, 0.7, size=(20, 2))
    eps = 1e-4
    basis = harmonic_basis(2, 4)
    vals, _ = _eval_basis(basis, pts)
    for shift, sign in (((eps, 0), 1), ((-eps, 0), 1), ((0, eps), 1), ((0, -eps), 1)):
        v, _ = _eval_basis(basis, pts + np.asarray(shift))
        vals = vals - 0.25 * 0 + 0 * v  # keep flake quiet; laplacian below
    lap = np.zeros_like(vals)
    for ax in range(2):
        for sgn in (1, -1):
            shift = np.zeros(2)
            shift[ax] = sgn * eps
            v, _ = _eval_basis(basis, pts + shift)
            lap += v
    lap -= 4 * _eval_basis(basis, pts)[0]
    lap /= eps**2
    assert np.max(np.abs(lap)) < 1e-4


def test_basis_gradients_match_finite_differences():
    rng = np.random.default_rng(8)
    pts = rng.uniform(-0.5, 0.5, size=(10, 2))
    basis = harmonic_basis(2, 3)
    _, grads = _eval_basis(basis, pts)
    eps = 1e-6
    for ax in range(2):
        shift = np.zeros(2)
        shift[ax] = eps
        plus, _ = _eval_basis(basis, pts + shift)
        minus, _ = _eval_basis(basis, pts - shift)
        fd = (plus - minus) / (2 * eps)
        assert np.max(np.abs(fd - grads[:, :, ax])) < 1e-6


# -- harmonic fit -------------------------------------------------------------


def saddle_grid(scale=1.0, q=2, h=1 / 32, noise=None):
    def fn(pts):
        u = scale * (pts[:, 0] ** 2 - pts[:, 1] ** 2)
        vals = np.tile(u[:, None, None], (1, q, 1))
        return vals

    f = QGridFunction.from_callable(fn, radius=1.0, h=h, q=q, n=1)
    if noise is not None:
        f.values = f.values + noise
    return f


def test_fit_recovers_exact_harmonic():
    f = saddle_grid(0.4)
    fit = harmonic_fit(f, degree_cap=4)
    assert fit.residual <= 1e-10
    assert fit.dirichlet <= dirichlet_energy(f) / f.q + 1e-8


def test_fit_tolerates_sparse_perturbation():
    base = saddle_grid(0.4)
    rng = np.random.default_rng(14)
    noise = np.zeros_like(base.values)
    bad = rng.choice(len(noise), size=max(1, len(noise) // 100), replace=False)
    noise[bad] = 0.3
    f = QGridFunction(2, 1, 2, base.h, base.radius, base.coords,
                      base.values + noise, base.weights)
    fit = harmonic_fit(f, degree_cap=4)
    perturb_mass = float((((noise) ** 2).sum(axis=(1, 2)) * f.weights).sum())
    assert fit.residual <= perturb_mass + 1e-10


def test_fit_residual_tracks_defect_sequence():
    rng = np.random.default_rng(15)
    residuals = []
    for k in range(3):
        base = saddle_grid(0.4)
        noise = np.zeros_like(base.values)
        count = max(1, len(noise) // (50 * 2**k))
        bad = rng.choice(len(noise), size=count, replace=False)
        noise[bad, 0] = 0.2 * 2.0**-k
        f = QGridFunction(2, 1, 2, base.h, base.radius, base.coords,
                          base.values + noise, base.weights)
        residuals.append(harmonic_fit(f, degree_cap=4).residual)
    assert residuals[0] > residuals[1] > residuals[2]


def test_fit_output_is_discretely_harmonic():
    f = saddle_grid(0.3, q=1)
    fit = harmonic_fit(f, degree_cap=4)
    u = fit.as_qgrid(f)
    phi = radial_bump(np.zeros(2), 0.7)
    assert abs(weak_laplacian_pairing(u, phi)) <= f.h


def test_fit_reduces_degree_when_ill_conditioned():
    def fn(pts):
        return (0.1 * pts[:, 0])[:, None, None]

    f = QGridFunction.from_callable(fn, radius=1e-4, h=1e-4 / 6, q=1, n=1)
    fit = harmonic_fit(f, degree_cap=8)
    assert fit.degree_used < 8
    assert fit.notes


# -- decay profiles -----------------------------------------------------------


def test_profile_flat_plane():
    V = generate_plane(2, 1, h=1 / 128, radius=1.3)
    prof = decay_profile(V, np.zeros(3), 1.0, 3)
    assert prof.flat
    assert math.isnan(prof.fitted_exponent)


def test_profile_saddle_graph_exponent_two():
    V = generate_graph(harmonic_sheets(0.05), h=1 / 128, radius=1.3)
    prof = decay_profile(V, np.zeros(3), 1.0, 4, q=1)
    assert prof.fitted_exponent == pytest.approx(2.0, abs=0.1)
    assert (~prof.included).sum() <= 1


def test_profile_resolution_guard():
    V = generate_plane(2, 1, h=1 / 32, radius=1.3)
    with pytest.raises(ResolutionError):
        decay_profile(V, np.zeros(3), 1.0, 5)


def test_profile_catenoid_smooth_point():
    from varlab.models import CatenoidSpec, generate_catenoid
    V = generate_catenoid(CatenoidSpec(r_max=3.0), h=1 / 256)
    x = np.array([1.0, 0.0, 0.0])
    prof = decay_profile(V, x, 0.25, 3, q=1)
    assert prof.fitted_exponent == pytest.approx(2.0, abs=0.35)


def test_profile_csv_columns():
    V = generate_graph(harmonic_sheets(0.05), h=1 / 128, radius=1.3)
    prof = decay_profile(V, np.zeros(3), 1.0, 3)
    lines = prof.csv().strip().splitlines()
    assert lines[0] == "r, excess, excess_over_r2, included_in_fit"
    assert len(lines) == 5


# -- predecay -----------------------------------------------------------------


def small_saddle_b5(eps, h=1 / 160):
    return generate_graph(harmonic_sheets(eps), h=h, radius=5.2)


def test_predecay_flat_plane_trivially_passes():
    V = generate_plane(2, 1, h=1 / 24, radius=5.2)
    rep = predecay_step(V, 0.25, 1)
    assert rep.passed and rep.applicable
    assert rep.lhs == 0.0 and rep.rhs == 0.0


@pytest.fixture(scope="module")
def saddle_b5():
    return small_saddle_b5(0.05)


def test_predecay_saddle_passes_with_margin(saddle_b5):
    rep = predecay_step(saddle_b5, 0.25, 1)
    assert rep.applicable
    assert rep.passed
    assert rep.lhs < 0.5 * rep.rhs


def test_predecay_margin_does_not_degrade_for_smaller_eps(saddle_b5):
    small = small_saddle_b5(0.02)
    rep_large = predecay_step(saddle_b5, 0.25, 1)
    rep_small = predecay_step(small, 0.25, 1)
    margin_large = rep_large.lhs / rep_large.rhs
    margin_small = rep_small.lhs / rep_small.rhs
    assert margin_small <= margin_large * 1.1


def test_predecay_scale_equivariant(saddle_b5):
    rep = predecay_step(saddle_b5, 0.25, 1)
    scaled = saddle_b5.rescale(2.0).rescale(0.5)  # exact round trip
    rep2 = predecay_step(scaled, 0.25, 1)
    assert rep2.lhs / rep2.rhs == pytest.approx(rep.lhs / rep.rhs, abs=1e-10)


def test_predecay_transverse_cone_fails_with_diagnosis():
    from varlab.cli import crossing_planes
    V = crossing_planes(0.2, 1 / 64, 5.3)
    rep = predecay_step(V, 0.25, 2)
    assert not rep.passed
    assert not rep.applicable
    assert "low_density_fraction" in rep.failed_hypotheses
    assert "mass_ratio_pinching" not in rep.failed_hypotheses


def test_exponent_beats_decay_laws(saddle_b5):
    prof = decay_profile(saddle_b5, np.zeros(3), 1.6, 5, q=1)
    for delta in (0.1, 0.25, 0.5):
        assert prof.fitted_exponent >= 2.0 - 2.0 * delta


def test_predecay_csv_has_hypothesis_columns(saddle_b5):
    rep = predecay_step(saddle_b5, 0.25, 1)
    header = rep.csv().splitlines()[0]
    for key in ("excess_b5", "low_density_fraction", "mass_ratio_b1"):
        assert key in header
