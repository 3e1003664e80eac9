import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.optimize import minimize_scalar

from onelap.grid import Grid, ScalarField, VectorField, read_mask, write_mask
from onelap.plap import DEFAULT_SCHEDULE, ContractError, PlapConfig
from onelap.cheeger import (
    cheeger_ratio,
    eigen_certificate,
    estimate_lambda1,
    exact_ball_estimate,
    lambda1_ball,
    set_perimeter,
    superlevel_sweep,
)


def cfg_at(p):
    return PlapConfig(p, 1e-6, 1e-8, 500, DEFAULT_SCHEDULE)


@pytest.fixture(scope="module")
def disk_sweep():
    g = Grid.ball(2, 1.0, 64)
    return g, {p: estimate_lambda1(g, cfg_at(p)) for p in (1.1, 1.05, 1.02)}


# -- exact ball values ----------------------------------------------------------


@given(n=st.sampled_from([2, 3]), radius=st.floats(1e-3, 1e3))
@settings(max_examples=100, deadline=None)
def test_lambda1_ball_is_n_over_radius(n, radius):
    assert lambda1_ball(n, radius) == n / radius
    assert lambda1_ball(n, 2 * radius) == pytest.approx(lambda1_ball(n, radius) / 2, rel=1e-15)


def test_lambda1_ball_examples_and_errors():
    assert lambda1_ball(2, 1.0) == 2.0
    assert lambda1_ball(3, 0.5) == 6.0
    for n, r in [(1, 1.0), (2.5, 1.0), (2, 0.0), (3, -1.0)]:
        with pytest.raises(ContractError):
            lambda1_ball(n, r)
    est = exact_ball_estimate(3, 0.5)
    assert est.lambda1 == 6.0 and est.method == "exact_ball"


# -- ratios ---------------------------------------------------------------------


@pytest.mark.parametrize("dim", [2, 3])
def test_single_cell_ratio(dim):
    h = 0.1
    g = Grid.box((5,) * dim, h)
    mask = np.zeros(g.shape, dtype=bool)
    mask[(2,) * dim] = True
    assert cheeger_ratio(g, mask) == pytest.approx(2 * dim / h, rel=1e-14)


def test_full_unit_square_ratio_is_four():
    n = 40
    g = Grid.box((n + 2, n + 2), 1.0 / n)
    assert cheeger_ratio(g, g.interior) == pytest.approx(4.0, rel=1e-12)


def test_disk_face_ratio_tends_to_l1_perimeter():
    # face counting measures the l1 perimeter, which is 8 on the unit circle
    g = Grid.ball(2, 1.0, 256)
    assert cheeger_ratio(g, g.interior) == pytest.approx(8 / np.pi, rel=0.01)
    iso = cheeger_ratio(g, g.interior, "isotropic")
    assert 2.0 < iso < cheeger_ratio(g, g.interior)


def test_ratio_contract():
    g = Grid.ball(2, 1.0, 16)
    with pytest.raises(ContractError):
        cheeger_ratio(g, np.zeros(g.shape, dtype=bool))
    outside = np.zeros(g.shape, dtype=bool)
    outside[0, 0] = True
    with pytest.raises(ContractError):
        cheeger_ratio(g, outside)
    with pytest.raises(ContractError):
        cheeger_ratio(g, g.closure, "isotropic")
    with pytest.raises(ValueError):
        set_perimeter(g, g.interior, "euclid")


def test_isotropic_perimeter_never_exceeds_face_count():
    g = Grid.box((14, 14), 0.1)
    rng = np.random.default_rng(0)
    for _ in range(20):
        mask = (rng.random(g.shape) < 0.4) & g.interior
        if mask.any():
            assert set_perimeter(g, mask, "isotropic") <= set_perimeter(g, mask) + 1e-12


# -- estimates ------------------------------------------------------------------


def square_cheeger_oracle():
    """Best rounded-corner subset of the unit square."""
    ratio = lambda r: (4 - 8 * r + 2 * np.pi * r) / (1 - 4 * r**2 + np.pi * r**2)
    return minimize_scalar(ratio, bounds=(0.0, 0.5), method="bounded", options={"xatol": 1e-12}).fun


def test_square_oracle_value():
    assert square_cheeger_oracle() == pytest.approx(2 + np.sqrt(np.pi), rel=1e-9)


def test_unit_square_estimate_within_ten_percent():
    n = 64
    g = Grid.box((n + 2, n + 2), 1.0 / n)
    est = estimate_lambda1(g, cfg_at(1.05))
    assert est.converged
    assert est.lambda1 == pytest.approx(square_cheeger_oracle(), rel=0.10)


def test_disk_estimate_within_ten_percent_at_fine_spacing():
    # h = R/64
    est = estimate_lambda1(Grid.ball(2, 1.0, 128), cfg_at(1.05))
    assert est.lambda1 == pytest.approx(lambda1_ball(2, 1.0), rel=0.10)


def test_estimate_fields_are_consistent(disk_sweep, tmp_path):
    g, ests = disk_sweep
    for est in ests.values():
        assert est.lambda1 > 0
        assert est.lambda1 == min(est.rayleigh_value, est.superlevel_value)
        assert est.method in ("rayleigh_tv", "superlevel_sweep")
        assert est.superlevel_value >= est.rayleigh_value - 1e-9
        assert est.candidate_set.shape == g.shape
        assert "lambda1:" in est.to_text()
    write_mask(tmp_path / "set.txt", g, est.candidate_set)
    np.testing.assert_array_equal(read_mask(tmp_path / "set.txt")[0].astype(bool), est.candidate_set)


def test_estimate_decreases_toward_two_as_p_drops(disk_sweep):
    _, ests = disk_sweep
    vals = [ests[p].lambda1 for p in (1.1, 1.05, 1.02)]
    assert vals[0] > vals[1] > vals[2] > 2.0


def test_ball_eigenfunction_nearly_constant(disk_sweep):
    _, ests = disk_sweep
    u = ests[1.02].eigenfunction.interior_values
    assert np.std(u) / np.mean(u) <= 0.10


@given(st.integers(0, 2**32 - 1), st.floats(0.02, 0.9))
@settings(max_examples=40, deadline=None)
def test_infimum_property_random_masks(disk_sweep, seed, density):
    g, ests = disk_sweep
    rng = np.random.default_rng(seed)
    mask = (rng.random(g.shape) < density) & g.closure
    if not mask.any():
        mask = g.interior
    for est in ests.values():
        assert est.lambda1 <= cheeger_ratio(g, mask) + 1e-9


def test_superlevel_sweep_prefers_larger_set_on_ties():
    g = Grid.box((8, 8), 0.1)
    u = g.interior.astype(float)
    ratio, mask = superlevel_sweep(ScalarField(g, u))
    np.testing.assert_array_equal(mask, g.interior)
    assert ratio == pytest.approx(4 / 0.6)


# -- eigen certificate ----------------------------------------------------------


def test_zero_certificate_residual_is_lambda1(disk_sweep):
    g, ests = disk_sweep
    est = ests[1.05]
    zero = VectorField(g, np.zeros((2,) + g.shape))
    cert = eigen_certificate(g, est, cfg_at(1.05), z=zero)
    assert cert.residual == pytest.approx(est.lambda1, rel=1e-14)


def test_certificate_defects_nonnegative_and_residual_trend(disk_sweep):
    g, ests = disk_sweep
    certs = [eigen_certificate(g, ests[p], cfg_at(p)) for p in (1.1, 1.05, 1.02)]
    for c in certs:
        assert c.pairing >= 0 and c.boundary >= 0
        assert c.z_sup <= 1 + 1e-12
    res = [c.residual for c in certs]
    assert res[0] > res[1] > res[2]
