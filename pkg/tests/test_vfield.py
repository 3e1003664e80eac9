import numpy as np
import pytest

from onelap.grid import Grid, ScalarField, VectorField, gradient
from onelap.nonlin import SingularGap
from onelap.plap import DEFAULT_SCHEDULE, ContractError, PlapConfig, identity_absorption, radial_load, solve
from onelap.vfield import (
    InvalidCertificate,
    PenalizedProblem,
    boundary_defect,
    boundary_flux,
    certificate_field,
    flux_field,
    pairing_defect,
    penalized_minimize,
    project_unit,
    total_variation,
)


def random_field(grid, seed, zero_trace=True):
    rng = np.random.default_rng(seed)
    u = ScalarField(grid, rng.standard_normal(grid.shape))
    return u.with_zero_trace() if zero_trace else u


def gradient_measure(grid):
    return grid.gradient_cells.size * grid.cell_volume


# -- fluxes -------------------------------------------------------------------


def test_flux_at_p2_is_gradient():
    g = Grid.box((9, 9), 0.1)
    u = random_field(g, 0)
    np.testing.assert_allclose(flux_field(u, 2.0, 1e-3).components, gradient(u).components)


def test_projection_bounds_and_keeps_short_vectors():
    g = Grid.box((7, 7), 0.2)
    u = random_field(g, 1)
    z = flux_field(u, 1.5, 0.0)
    zp = project_unit(z)
    assert zp.sup_norm() <= 1 + 1e-15
    short = z.magnitude() <= 1
    np.testing.assert_array_equal(zp.components[:, short], z.components[:, short])


def test_raw_flux_bounded_where_gradient_is_small():
    # |z| = |g|_delta^(p-1) stays below 1 + 10 delta when |g| <= 1
    g = Grid.box((9, 9), 1.0)
    u = random_field(g, 2) * 0.2
    delta = 1e-3
    assert flux_field(u, 1.05, delta).sup_norm() <= 1 + 10 * delta


# -- pairing ------------------------------------------------------------------


def test_pairing_of_zero_field_is_regularization_floor():
    g = Grid.ball(2, 1.0, 32)
    delta = 1e-4
    u = ScalarField.zeros(g)
    d = pairing_defect(VectorField(g, np.zeros((2,) + g.shape)), u, delta)
    assert d == pytest.approx(delta * gradient_measure(g), rel=1e-12)
    # the gradient cells are the domain plus part of its collar
    assert d == pytest.approx(delta * g.volume, rel=0.15)


@pytest.mark.parametrize("seed", range(5))
def test_pairing_of_aligned_field_below_delta_floor(seed):
    g = Grid.box((12, 10), 0.1)
    delta = 1e-3
    u = random_field(g, seed)
    gr = gradient(u).components
    z = VectorField(g, gr / np.sqrt(np.sum(gr**2, axis=0) + delta**2))
    d = pairing_defect(z, u, delta)
    assert 0 <= d <= delta * gradient_measure(g)


def test_pairing_of_orthogonal_field_is_full_mass():
    g = Grid.box((20, 20), 0.05)
    x = g.coords()
    u = ScalarField(g, x[0])
    z = VectorField(g, np.stack([np.zeros(g.shape), np.ones(g.shape)]))
    d = pairing_defect(z, u, 1e-8)
    # every cell owning an active face in direction 0 has |grad u| = 1 there
    owners = g.face_active[0]
    assert d == pytest.approx(owners.sum() * g.cell_volume, rel=1e-6)
    assert d == pytest.approx(g.volume, rel=0.1)


def test_pairing_rejects_oversized_field():
    g = Grid.box((5, 5), 0.2)
    z = VectorField(g, np.full((2,) + g.shape, 0.9))
    with pytest.raises(InvalidCertificate):
        pairing_defect(z, ScalarField.zeros(g), 1e-6)


def test_pairing_grid_mismatch():
    a, b = Grid.box((5, 5), 0.2), Grid.box((6, 5), 0.2)
    with pytest.raises(ContractError):
        pairing_defect(VectorField(a, np.zeros((2,) + a.shape)), ScalarField.zeros(b))


# -- boundary -----------------------------------------------------------------


def test_boundary_defect_zero_trace_collar():
    g = Grid.box((6, 6), 0.2)
    u = random_field(g, 3)
    z = project_unit(flux_field(u, 1.2, 0.0))
    assert boundary_defect(z, u) == 0.0


def test_boundary_defect_of_zero_field_counts_collar_faces():
    n, h = 6, 0.2
    g = Grid.box((n + 2, n + 2), h)
    u = ScalarField(g, np.where(g.boundary, 1.5, 0.0))
    z = VectorField(g, np.zeros((2,) + g.shape))
    assert boundary_defect(z, u) == pytest.approx(4 * n * 1.5 * h, rel=1e-14)
    assert boundary_flux(z).size == 4 * n


def test_boundary_defect_nonnegative_for_face_weights():
    g = Grid.ball(2, 1.0, 20)
    for seed in range(5):
        u = random_field(g, seed, zero_trace=False)
        z = project_unit(flux_field(u, 1.1, 1e-6))
        assert boundary_defect(z, u, "collar") >= -1e-12
        assert boundary_defect(z, u, "inner") >= -1e-12


def test_flux_weighted_boundary_defect_vanishes_for_aligned_field():
    g = Grid.ball(2, 1.0, 24)
    u = random_field(g, 4)
    delta = 1e-6
    gr = gradient(u).components
    z = VectorField(g, gr / np.sqrt(np.sum(gr**2, axis=0) + delta**2))
    assert abs(boundary_defect(z, u, "inner", "flux", delta)) <= 1e-10
    assert boundary_defect(z, u, "inner", "face") > 0.1


def test_boundary_trace_mode_validation():
    g = Grid.box((4, 4), 0.25)
    z = VectorField(g, np.zeros((2,) + g.shape))
    with pytest.raises(ValueError):
        boundary_defect(z, ScalarField.zeros(g), "outer")
    with pytest.raises(ValueError):
        boundary_defect(z, ScalarField.zeros(g), "inner", "area")


def test_radial_solution_has_inward_normal_flux():
    # u jumps from about 2 to 0 across the sphere, so [z, nu] is about -1
    g = Grid.ball(3, 1.0, 20)
    cfg = PlapConfig(1.05, 1e-6, 1e-5, 300, DEFAULT_SCHEDULE)
    rep = solve(cfg, identity_absorption(), radial_load(g, 4.0))
    z = certificate_field(rep.u, 1.05, 1e-6)
    zn = boundary_flux(z)
    assert np.all(zn < 0)
    assert np.mean(zn) < -0.5
    vals = rep.u.values[g.interior]
    surface = 4 * np.pi * np.mean(vals[g.radius_from()[g.interior] > 0.85])
    defect = boundary_defect(z, rep.u, "inner", "flux", 1e-6)
    assert 0 <= defect <= (g.spacing + 1e-6) * surface


# -- penalized minimization ---------------------------------------------------


def test_penalized_problem_validation():
    g = Grid.box((5, 5), 0.2)
    zero = ScalarField.zeros(g)
    with pytest.raises(ContractError):
        PenalizedProblem(zero, zero, 0.0)
    with pytest.raises(ContractError):
        PenalizedProblem(zero, zero, 1.5)
    with pytest.raises(ContractError):
        PenalizedProblem(ScalarField(g, np.ones(g.shape)), zero, 0.5)
    assert PenalizedProblem(zero, zero, 0.5).q == 2.0


def test_penalized_zero_case():
    g = Grid.ball(2, 1.0, 16)
    zero = ScalarField.zeros(g)
    rep = penalized_minimize(PenalizedProblem(zero, zero, 0.2), PlapConfig(tol_grad=1e-10))
    assert np.all(rep.u_eps.values == 0)
    assert rep.mu_eps == 0.0
    assert rep.converged
    assert "mu_eps: 0.0" in rep.to_text()


def test_total_variation_of_indicator_matches_isotropic_count():
    n = 8
    g = Grid.box((n + 2, n + 2), 0.125)
    u = ScalarField(g, g.interior.astype(float))
    # unit jumps on 4n - 2 faces plus one corner cell where two jumps share |g| = sqrt(2)/h
    assert total_variation(u) == pytest.approx(0.125 * (4 * n - 2 + np.sqrt(2)), rel=1e-12)


def certified_pair(cells=24):
    # u solves -Delta_p u + u = 4/|x| at p = 1.05; then f = 4/|x| - u is -div z
    g = Grid.ball(2, 1.0, cells)
    cfg = PlapConfig(1.05, 1e-6, 1e-6, 300, DEFAULT_SCHEDULE)
    load = radial_load(g, 4.0)
    rep = solve(cfg, identity_absorption(), load)
    f = ScalarField.from_interior(g, load.interior_values - rep.u.interior_values)
    return g, rep.u, f


def test_penalized_mu_nonpositive_for_certified_pair():
    g, u, f = certified_pair()
    prob = PenalizedProblem(u, f, 0.05)
    rep = penalized_minimize(prob, PlapConfig(1.05, 1e-6, 1e-6, 300, DEFAULT_SCHEDULE))
    assert rep.converged or rep.grad_norm < 1e-4
    assert rep.mu_eps <= 1e-6


def test_penalized_fidelity_trend():
    g, u, f = certified_pair()
    cfg = PlapConfig(1.05, 1e-6, 1e-6, 300, DEFAULT_SCHEDULE)
    prev = None
    for eps in (0.5, 0.2, 0.1, 0.05):
        rep = penalized_minimize(PenalizedProblem(u, f, eps), cfg)
        if prev is not None:
            assert rep.fidelity_error <= prev * 1.05
        prev = rep.fidelity_error
        assert len(rep.zq_norms) == 4


def test_singular_gap_term():
    t = SingularGap(2.0, 0.5, 1.0)
    assert t.value(0.0) == 0.0
    assert t.derivative(0.0) == pytest.approx(2.0 / 0.25)
    assert t.primitive(-0.6) == np.inf
    # primitive matches quadrature
    s = np.linspace(0, 1, 2001)
    vals = t.value(s)
    trap = np.sum((vals[1:] + vals[:-1]) / 2) * (s[1] - s[0])
    assert t.primitive(1.0) == pytest.approx(trap, rel=1e-6)
    sub = SingularGap(1.0, 0.5, 0.5)
    assert np.isfinite(sub.primitive(-0.49)) and sub.primitive(-0.5) == np.inf
