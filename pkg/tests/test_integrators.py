import math
import warnings

import numpy as np
import pytest

from odeblocks.integrators import (
    ButcherTableau,
    SCHEME_NAMES,
    StageOverflowError,
    TimeGrid,
    Trajectory,
    global_error,
    order_fit,
    solve,
    step,
    tableau,
)
from odeblocks.pendulum import PendulumConfig, pendulum_energy, pendulum_exact, true_rhs

CFG = PendulumConfig()
X0 = np.array([CFG.rho0, 0.0])


def pendulum_oracle(t):
    return np.array(pendulum_exact(t, CFG))


def pendulum_f(x, t):
    return true_rhs(x, CFG)


# --- tableau coefficients against the order-condition oracle ----------------

def order_conditions_satisfied(tab: ButcherTableau) -> list[str]:
    """Check the Butcher order conditions up to the nominal order."""
    a = np.array(tab.a)
    b = np.array(tab.b)
    c = np.array(tab.c)
    failures = []

    def check(name, value, target):
        if abs(value - target) > 1e-14:
            failures.append(f"{name}: {value} != {target}")

    check("sum b", b.sum(), 1.0)
    if tab.nominal_order >= 2:
        check("sum b c", b @ c, 1 / 2)
    if tab.nominal_order >= 3:
        check("sum b c^2", b @ c**2, 1 / 3)
        check("sum b a c", b @ (a @ c), 1 / 6)
    if tab.nominal_order >= 4:
        check("sum b c^3", b @ c**3, 1 / 4)
        check("sum b c a c", b @ (c * (a @ c)), 1 / 8)
        check("sum b a c^2", b @ (a @ c**2), 1 / 12)
        check("sum b a a c", b @ (a @ (a @ c)), 1 / 24)
    return failures


@pytest.mark.parametrize("scheme", SCHEME_NAMES)
def test_tableau_satisfies_order_conditions(scheme):
    tab = tableau(scheme)
    assert order_conditions_satisfied(tab) == []


def test_euler_tableau():
    tab = tableau("euler")
    assert tab.stages == 1
    assert tab.b == (1.0,)
    assert tab.nominal_order == 1


def test_rk4_classic_weights():
    tab = tableau("rk4")
    assert tab.b == (1 / 6, 1 / 3, 1 / 3, 1 / 6)
    assert tab.nominal_order == 4


def test_rk4_38_weights():
    tab = tableau("rk4-38")
    assert tab.b == (1 / 8, 3 / 8, 3 / 8, 1 / 8)
    assert tab.nominal_order == 4


@pytest.mark.parametrize("scheme", SCHEME_NAMES)
def test_consistency_and_row_sums(scheme):
    tab = tableau(scheme)
    assert abs(sum(tab.b) - 1.0) <= 1e-14
    for i, row in enumerate(tab.a):
        assert abs(sum(row) - tab.c[i]) <= 1e-14
        for j in range(i, tab.stages):
            assert row[j] == 0.0


def test_scheme_aliases_and_unknown():
    assert tableau("RK4-Classic").name == "rk4"
    with pytest.raises(ValueError):
        tableau("adams")


# --- single steps on a linear problem (hand/symbolic expansions) ------------

def test_euler_step_linear():
    out = step(tableau("euler"), lambda x, t: x, np.array([1.0]), 0.0, 0.1)
    assert abs(out[0] - 1.1) <= 1e-15


def test_midpoint_step_linear():
    # expansion of the midpoint rule for xdot = x: x (1 + h + h^2/2)
    out = step(tableau("midpoint"), lambda x, t: x, np.array([1.0]), 0.0, 0.1)
    assert abs(out[0] - 1.105) <= 1e-15


@pytest.mark.parametrize("scheme", ["rk4", "rk4-38"])
def test_rk4_step_linear_is_degree_four_taylor(scheme):
    # any 4-stage order-4 explicit scheme reproduces the degree-4 Taylor
    # polynomial of e^h on a linear problem
    h = 0.1
    taylor4 = 1 + h + h**2 / 2 + h**3 / 6 + h**4 / 24
    assert abs(taylor4 - 1.1051708333333332) < 1e-15
    out = step(tableau(scheme), lambda x, t: x, np.array([1.0]), 0.0, h)
    assert abs(out[0] - 1.1051708333333332) <= 1e-14


def test_euler_step_equals_resnet_unit_form():
    rng = np.random.default_rng(5)
    x = rng.normal(size=4)
    fval = rng.normal(size=4)
    out = step(tableau("euler"), lambda s, t: fval, x, 0.0, 0.25)
    np.testing.assert_array_equal(out, x + 0.25 * fval)


def test_step_rejects_bad_dt():
    with pytest.raises(ValueError):
        step(tableau("euler"), lambda x, t: x, np.array([1.0]), 0.0, 0.0)


def test_step_overflow_names_stage():
    def exploding(x, t):
        return np.array([np.inf])

    with pytest.raises(StageOverflowError, match="stage 1"):
        step(tableau("rk4"), exploding, np.array([1.0]), 0.0, 0.1)


# --- full solves -------------------------------------------------------------

def test_solve_single_step_matches_step():
    grid = TimeGrid(0.3, 1)
    traj = solve(tableau("midpoint"), pendulum_f, X0, grid)
    expected = step(tableau("midpoint"), pendulum_f, X0, 0.0, 0.3)
    assert len(traj) == 2
    np.testing.assert_array_equal(traj.states[-1], expected)


def test_solve_zero_field_is_constant():
    traj = solve(tableau("rk4"), lambda x, t: np.zeros_like(x), X0, TimeGrid(1.0, 10))
    for state in traj.states:
        np.testing.assert_array_equal(state, X0)


def test_euler_large_step_gains_energy():
    # the known forward-Euler instability on the pendulum
    traj = solve(tableau("euler"), pendulum_f, X0, TimeGrid(10.0, 50))
    e0 = pendulum_energy(traj.states[0], CFG)
    e1 = pendulum_energy(traj.states[-1], CFG)
    assert e1 > e0 + 1.0


def test_trajectory_times_strictly_increasing():
    traj = Trajectory()
    traj.append(0.0, X0)
    with pytest.raises(ValueError):
        traj.append(0.0, X0)


def test_time_grid_validation():
    with pytest.raises(ValueError):
        TimeGrid(1.0, 0)
    assert TimeGrid(1.0, 4).dt == 0.25


# --- global error and measured convergence orders ---------------------------

def test_global_error_zero_for_exact_endpoint():
    traj = Trajectory()
    traj.append(0.0, X0)
    assert global_error(traj, lambda t: X0) == 0.0


def _errors(scheme, horizon, ks):
    tab = tableau(scheme)
    out = []
    for k in ks:
        dt = 0.1 * 2.0**-k
        nt = max(1, round(horizon / dt))
        traj = solve(tab, pendulum_f, X0, TimeGrid(horizon, nt))
        out.append((horizon / nt, global_error(traj, pendulum_oracle)))
    return out


def test_euler_error_roughly_halves_with_dt():
    errs = _errors("euler", 1.0, range(4))
    for (_, e1), (_, e2) in zip(errs, errs[1:]):
        assert 1.5 <= e1 / e2 <= 2.6


def test_rk4_error_drops_sixteenfold_with_dt():
    errs = _errors("rk4", 1.0, range(4))
    for (_, e1), (_, e2) in zip(errs, errs[1:]):
        assert 9.0 <= e1 / e2 <= 25.0


@pytest.mark.parametrize(
    "scheme,band",
    [("euler", (0.85, 1.15)), ("midpoint", (1.8, 2.2)), ("rk4", (3.8, 4.2)), ("rk4-38", (3.8, 4.2))],
)
def test_measured_order_matches_nominal(scheme, band):
    # smooth pendulum problem over a horizon where all schemes are in the
    # asymptotic regime for dt in [1e-3, 1e-1]
    samples = _errors(scheme, 1.0, range(7))
    slope, _ = order_fit(samples, state_scale=float(np.linalg.norm(X0)))
    assert band[0] <= slope <= band[1]


def test_rk4_variants_agree_at_fourth_order():
    diffs = []
    for k in range(6):
        dt = 0.1 * 2.0**-k
        nt = round(1.0 / dt)
        grid = TimeGrid(1.0, nt)
        a = solve(tableau("rk4"), pendulum_f, X0, grid).states[-1]
        b = solve(tableau("rk4-38"), pendulum_f, X0, grid).states[-1]
        diffs.append((grid.dt, float(np.linalg.norm(a - b))))
    slope, _ = order_fit(diffs)
    assert slope >= 4.0


# --- order_fit behavior ------------------------------------------------------

def test_order_fit_exact_power_law():
    samples = [(dt, 3.0 * dt) for dt in (0.1, 0.05, 0.025, 0.0125)]
    slope, intercept = order_fit(samples)
    assert abs(slope - 1.0) <= 1e-12
    assert abs(math.exp(intercept) - 3.0) <= 1e-12


def test_order_fit_excludes_floor_samples_with_warning():
    samples = [(0.1, 1e-1), (0.05, 5e-2), (0.025, 2.5e-2), (0.0125, 1e-18)]
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        slope, _ = order_fit(samples)
    assert any("floor" in str(w.message) for w in caught)
    assert abs(slope - 1.0) <= 1e-9


def test_order_fit_needs_three_usable_samples():
    with pytest.raises(ValueError):
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            order_fit([(0.1, 1.0), (0.05, 0.5), (0.025, 0.0)])


def test_order_fit_rejects_non_positive_dt():
    with pytest.raises(ValueError):
        order_fit([(0.1, 1.0), (0.0, 0.5), (0.025, 0.25)])
