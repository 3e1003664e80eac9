import numpy as np
import pytest

from onelap.grid import Grid, ScalarField, sobolev_constants
from onelap.nonlin import Constant, Generic, Linear, Power
from onelap.plap import DEFAULT_SCHEDULE, AbsorptionSpec, ContractError, PlapConfig, identity_absorption, solve
from onelap.sattinger import (
    MonotonicityError,
    NonlinearSpec,
    OrderedPair,
    OrderingError,
    certificate_sweep,
    check_order,
    iterate,
    linf_threshold,
    validate_pair,
)

CFG = PlapConfig(1.05, 1e-6, 1e-8, 500, DEFAULT_SCHEDULE)


def constant_field(grid, c):
    return ScalarField(grid, np.where(grid.interior, c, 0.0))


def damped_problem(cells=32, load=4.0, damping=0.5):
    """-Delta_1 u + damping u = load, split as F = load - damping s, l = s."""
    g = Grid.ball(2, 1.0, cells)
    spec = NonlinearSpec(Constant(load) - Linear(damping), Linear(1.0))
    # v solves -Delta_p v + damping v = load + 1, a strict supersolution
    v = solve(CFG, AbsorptionSpec(Linear(damping), "increasing"), constant_field(g, load + 1.0)).u
    return g, spec, OrderedPair(ScalarField.zeros(g), v)


# -- hypotheses -----------------------------------------------------------------


def test_spec_check_accepts_valid_splitting():
    NonlinearSpec(Constant(1.0) - Linear(0.5), Linear(1.0)).check(5)


@pytest.mark.parametrize(
    "F, l",
    [
        (Constant(0.0), Linear(-1.0)),  # l decreasing
        (Linear(-2.0), Linear(1.0)),  # F + l decreasing
        (Constant(0.0), Generic(lambda s: s + 1.0)),  # l s < 0 near 0
        (Constant(0.0), Generic(np.arctan)),  # |l| bounded
    ],
)
def test_spec_check_rejects(F, l):
    with pytest.raises(ContractError):
        NonlinearSpec(F, l).check(5)


def test_ordering_error_lists_worst_cells():
    g = Grid.box((6, 6), 0.25)
    w = constant_field(g, 1.0)
    v = ScalarField(g, np.where(g.interior, 0.5, 0.0))
    with pytest.raises(OrderingError) as err:
        check_order(w, v)
    assert len(err.value.worst_cells) == 5
    assert all(gap == pytest.approx(0.5) for _, gap in err.value.worst_cells)
    assert check_order(v, w) == 0.0


# -- pair validation ----------------------------------------------------------


def test_zero_is_subsolution_for_nonnegative_source():
    g, spec, pair = damped_problem(16)
    diag = validate_pair(pair, spec, 1.05)
    assert diag.sub_residual <= 0
    # v solves with load + 1, so its residual is about +1
    assert diag.super_residual >= 1 - 1e-4
    assert diag.z_sup <= 1 + 10e-6
    assert diag.pairing["w"] == pytest.approx(1e-6 * g.gradient_cells.size * g.cell_volume)
    assert "sub_residual" in diag.to_text()


# -- iteration ----------------------------------------------------------------


def test_source_independent_of_state_takes_one_effective_step():
    # F = f - s with l = s: the first step already solves -Delta_p u + u = f
    g = Grid.ball(2, 1.0, 32)
    f = constant_field(g, 4.0)
    spec = NonlinearSpec(Constant(f.interior_values) - Linear(1.0), Linear(1.0))
    v = solve(CFG, identity_absorption(), constant_field(g, 5.0)).u
    u, trace = iterate(OrderedPair(ScalarField.zeros(g), v), spec, CFG)
    direct = solve(CFG, identity_absorption(), f).u
    assert np.max(np.abs(u.values - direct.values)) <= 1e-8
    assert trace.n_steps == 2
    assert trace.rows[-1]["L1_increment"] <= 1e-8 * g.volume


def test_zero_data_stays_zero():
    g = Grid.box((8, 8), 0.2)
    spec = NonlinearSpec(Constant(0.0), Linear(1.0))
    zero = ScalarField.zeros(g)
    u, trace = iterate(OrderedPair(zero, zero), spec, CFG)
    assert np.all(u.values == 0)
    assert trace.n_steps == 1


def test_iteration_monotone_sandwiched_and_bounded():
    g, spec, pair = damped_problem()
    u, trace = iterate(pair, spec, CFG)
    assert trace.converged
    assert trace.monotone_defect >= -1e-8
    assert trace.sandwich_defect >= -1e-8
    k_star = linf_threshold(spec, pair, sobolev_constants(2))
    assert trace.max_sup <= k_star + 1e-8
    maxes = [r["max_u"] for r in trace.rows]
    assert all(b >= a - 1e-8 for a, b in zip(maxes, maxes[1:]))


def test_super_start_decreases_and_dominates():
    g, spec, pair = damped_problem(24)
    low, _ = iterate(pair, spec, CFG)
    high, trace = iterate(pair, spec, CFG, start="super")
    maxes = [r["max_u"] for r in trace.rows]
    assert all(b <= a + 1e-8 for a, b in zip(maxes, maxes[1:]))
    assert trace.monotone_defect >= -1e-8
    assert np.min(high.values - low.values) >= -1e-7


def test_trace_csv_format(tmp_path):
    g, spec, pair = damped_problem(16)
    _, trace = iterate(pair, spec, CFG)
    text = trace.to_csv(tmp_path / "trace.csv")
    lines = text.split("\n")
    assert lines[0] == "n,min_u,max_u,L1_increment,inner_iters"
    assert len(lines) == trace.n_steps + 3  # header, rows, trailing newline
    assert (tmp_path / "trace.csv").read_bytes() == text.encode()
    assert "\r" not in text


def test_iteration_is_deterministic():
    g, spec, pair = damped_problem(16)
    a = iterate(pair, spec, CFG)[1].to_csv()
    b = iterate(pair, spec, CFG)[1].to_csv()
    assert a == b


def test_non_monotone_splitting_aborts():
    # F + l = -2 s is decreasing, so iterates oscillate in sign
    g = Grid.box((10, 10), 0.1)
    spec = NonlinearSpec(Constant(30.0) - Linear(3.0), Linear(1.0), sum_monotone=False)
    v = constant_field(g, 100.0)
    with pytest.raises(MonotonicityError) as err:
        iterate(OrderedPair(ScalarField.zeros(g), v), spec, CFG)
    assert err.value.trace.monotone_defect < -1e-6


def test_certificate_pairing_decreases_along_schedule():
    g, spec, pair = damped_problem(24)
    u, _ = iterate(pair, spec, CFG)
    _, rows = certificate_sweep(u, spec, CFG, schedule=(1.1, 1.05, 1.02, 1.01))
    pairings = [r["pairing"] for r in rows]
    assert all(b < a for a, b in zip(pairings, pairings[1:]))
    assert all(r["z_sup"] <= 1 + 10 * CFG.delta for r in rows)


# -- uniform bound ------------------------------------------------------------


def test_threshold_zero_source():
    g = Grid.box((6, 6), 0.2)
    spec = NonlinearSpec(Constant(0.0), Linear(1.0))
    zero = ScalarField.zeros(g)
    assert linf_threshold(spec, OrderedPair(zero, zero), sobolev_constants(2)) == 0.0


def test_threshold_bounded_source_identity_absorption():
    # Ft = h0 everywhere with a large tail norm, so h = h0 and k = h0
    g = Grid.ball(2, 1.0, 16)
    h0 = 3.0
    spec = NonlinearSpec(Constant(h0) - Linear(1.0), Linear(1.0))
    zero = ScalarField.zeros(g)
    k = linf_threshold(spec, OrderedPair(zero, constant_field(g, 1.0)), sobolev_constants(2))
    assert k == pytest.approx(h0, rel=1e-12)


def test_threshold_cubic_absorption_and_small_source():
    g = Grid.ball(2, 1.0, 16)
    consts = sobolev_constants(2)
    zero = ScalarField.zeros(g)
    pair = OrderedPair(zero, zero)
    cubic = NonlinearSpec(Constant(8.0) - Power(1.0, 3), Power(1.0, 3))
    assert linf_threshold(cubic, pair, consts) == pytest.approx(2.0, rel=1e-12)
    # a source small in L^N needs no level at all
    tiny = NonlinearSpec(Constant(0.1), Linear(1.0))
    assert linf_threshold(tiny, pair, consts) == 0.0


def test_threshold_rejects_infinite_source():
    g = Grid.box((5, 5), 0.2)
    spec = NonlinearSpec(Constant(np.inf), Linear(1.0))
    zero = ScalarField.zeros(g)
    with pytest.raises(ContractError):
        linf_threshold(spec, OrderedPair(zero, zero), sobolev_constants(2))
