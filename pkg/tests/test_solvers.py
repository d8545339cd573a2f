import math

import numpy as np
import pytest
from scipy.integrate import solve_ivp

from urnflow.grid import GridFunction, NumericalError
from urnflow.model import build_preset, make_model
from urnflow.operators import HydroOperators
from urnflow.solve import (
    DensityTrajectory,
    evolve_test_function,
    fluctuation_variance,
    solve_density,
    solve_hydro,
    solve_second_moment,
    step_count,
)

DT = 1e-3


# ---------------------------------------------------------------------------
# step bookkeeping
# ---------------------------------------------------------------------------

def test_step_count():
    assert step_count(1.0, DT) == 1000
    assert step_count(0.0, 0.1) == 0
    with pytest.raises(ValueError):
        step_count(1.0, 0.0)
    with pytest.raises(ValueError):
        step_count(1.0, -0.1)
    with pytest.raises(ValueError):
        step_count(-1.0, 0.1)
    with pytest.raises(ValueError):
        step_count(0.35, 0.1)


def test_trajectory_indexing():
    traj = solve_density(HydroOperators(build_preset("voter", lam="1"), 8), 0.5, 0.1)
    assert traj.steps == 5
    assert traj.horizon == pytest.approx(0.5)
    assert traj.index_of(0.3) == 3
    assert np.array_equal(traj.rho_at(0).values, traj.rho[0])
    with pytest.raises(ValueError):
        traj.index_of(0.35)
    with pytest.raises(ValueError):
        traj.index_of(0.6)
    with pytest.raises(ValueError):
        traj.vartheta_at(0)  # no second-moment component yet


# ---------------------------------------------------------------------------
# density equation against closed forms
# ---------------------------------------------------------------------------

def test_copy_dynamics_relax_exponentially_to_the_mean():
    # uniform rate, copy update: d rho / dt = mean(rho) - rho, so
    # rho(t) = mean(phi) + exp(-t) (phi - mean(phi)) node by node
    ops = HydroOperators(build_preset("voter", lam="1", phi="0.4 + 0.2*u"), 64)
    traj = solve_density(ops, 2.0, DT)
    pbar = float(ops.phi.mean())
    worst = 0.0
    for k in (0, 500, 1000, 2000):
        exact = pbar + math.exp(-k * DT) * (ops.phi - pbar)
        worst = max(worst, float(np.abs(traj.rho[k] - exact).max()))
    assert worst <= 1e-12  # measured 1.9e-15


def test_absorb_reset_density_grows_exponentially():
    # b = 1/2, c = 0, unit rate with additive coupling: flat profiles obey
    # rho' = rho / 2, hence rho(1) = phi exp(1/2)
    ops = HydroOperators(build_preset("bcpp", lam="1", b="0.5", phi="0.5"), 64)
    traj = solve_density(ops, 1.0, DT)
    assert np.abs(traj.rho[-1] - 0.5 * math.exp(0.5)).max() <= 1e-12


def test_density_matches_reference_integrator():
    spec = make_model(
        b="u", c="0.5", lam="(1 + u) * (2 - v) / 2", a1="0.3", a2="0.7",
        a3="0.2 + u/10", a4="0.9", phi="0.25 + 0.5*u",
    )
    ops = HydroOperators(spec, 32)
    traj = solve_density(ops, 1.0, DT)
    mat = ops.mean_drift_adjoint_matrix
    sol = solve_ivp(
        lambda _, y: mat @ y, (0.0, 1.0), ops.phi,
        rtol=1e-10, atol=1e-12, dense_output=True,
    )
    assert sol.success
    for t in (0.25, 0.5, 1.0):
        gap = np.abs(traj.rho[step_count(t, DT)] - sol.sol(t)).max()
        assert gap <= 1e-8


# ---------------------------------------------------------------------------
# second-moment equation
# ---------------------------------------------------------------------------

def test_absorb_reset_second_moment_hand_value():
    # flat profiles give vt' = vt/2 + exp(t)/2, vt(0)=1/2, so
    # vt(1) = e - sqrt(e)/2; the profile stays flat
    ops = HydroOperators(build_preset("bcpp", lam="1", b="0.5", phi="0.5"), 256)
    traj = solve_hydro(ops, 1.0, DT)
    ref = math.e - 0.5 * math.sqrt(math.e)
    assert np.abs(traj.vartheta[-1] - ref).max() <= 1e-6  # measured 4.5e-8
    assert np.ptp(traj.vartheta[-1]) <= 1e-13  # measured 6.7e-16


def test_second_moment_matches_reference_integrator():
    spec = make_model(
        b="u", c="0.5", lam="(1 + u) * (2 - v) / 2", a1="0.3", a2="0.7",
        a3="0.2 + u/10", a4="0.9", phi="0.25 + 0.5*u",
    )
    ops = HydroOperators(spec, 24)
    traj = solve_hydro(ops, 1.0, DT)
    m = ops.m
    qmat = ops.second_moment_drift_adjoint_matrix
    lmat = ops.mean_drift_adjoint_matrix

    def rhs(_, y):
        rho, vt = y[:m], y[m:]
        dvt = qmat @ vt + ops.interaction_source_density(rho).values
        return np.concatenate([lmat @ rho, dvt])

    sol = solve_ivp(
        rhs, (0.0, 1.0), np.concatenate([ops.phi, ops.phi]),
        rtol=1e-10, atol=1e-12,
    )
    assert sol.success
    assert np.abs(traj.vartheta[-1] - sol.y[m:, -1]).max() <= 1e-8


def test_second_moment_input_validation():
    ops = HydroOperators(build_preset("voter", lam="1"), 16)
    rho_traj = solve_density(ops, 0.5, 0.1)
    other = HydroOperators(build_preset("voter", lam="1"), 8)
    with pytest.raises(ValueError):
        solve_second_moment(other, rho_traj, 0.5, 0.1)
    with pytest.raises(ValueError):
        solve_second_moment(ops, rho_traj, 0.5, 0.05)
    with pytest.raises(ValueError):
        solve_second_moment(ops, rho_traj, 1.0, 0.1)


def test_runaway_growth_raises_numerical_error():
    # b (c - 1) = 200 with dt = 1/2 overflows RK4 almost immediately
    spec = make_model(b="100", c="3", lam="0", phi="0.5")
    ops = HydroOperators(spec, 8)
    with pytest.raises(NumericalError):
        solve_density(ops, 50.0, 0.5)


# ---------------------------------------------------------------------------
# test-function evolution
# ---------------------------------------------------------------------------

def test_evolve_test_function_path():
    ops = HydroOperators(build_preset("exclusion", lam="1 + u*v"), 32)
    f = GridFunction.from_callable(lambda u: u, 32)
    path = evolve_test_function(ops, f, 0.2, DT, keep_path=True)
    assert path.shape == (201, 32)
    assert np.array_equal(path[0], f.values)
    terminal = evolve_test_function(ops, f, 0.2, DT)
    assert np.array_equal(terminal.values, path[-1])
    with pytest.raises(ValueError):
        evolve_test_function(ops, np.zeros(16), 0.2, DT)


def test_constants_are_invariant_under_swap_dynamics():
    ops = HydroOperators(build_preset("exclusion", lam="(1 + u) * (2 - v) / 2"), 32)
    out = evolve_test_function(ops, np.ones(32), 1.0, DT)
    assert np.abs(out.values - 1.0).max() <= 1e-12


# ---------------------------------------------------------------------------
# fluctuation variance against hand-derived values
# ---------------------------------------------------------------------------

def _preset_ops_traj(name, m=256):
    if name == "bcpp":
        spec = build_preset("bcpp", lam="1", b="0.5", phi="0.5")
    else:
        spec = build_preset(name, lam="1", phi="0.5")
    ops = HydroOperators(spec, m)
    return ops, solve_hydro(ops, 1.0, DT)


def test_variance_copy_constant_test_function():
    # g stays 1, densities stay 1/2: static 1/4 plus one unit of rate 1/2
    ops, traj = _preset_ops_traj("voter")
    val = fluctuation_variance(ops, np.ones(256), 1.0, DT, traj)
    assert abs(val - 0.75) <= 1e-12  # measured 2.2e-16


def test_variance_copy_linear_test_function():
    # g_t = 1/2 + exp(-t)(u - 1/2) gives 5/24 at t = 1
    ops, traj = _preset_ops_traj("voter")
    val = fluctuation_variance(ops, ops.nodes, 1.0, DT, traj)
    assert abs(val - 5.0 / 24.0) <= 1e-6  # measured 3.1e-7 (quadrature)


def test_variance_swap_linear_test_function():
    # g_t = 1/2 + exp(-2t)(u - 1/2) gives 1/12 at t = 1
    ops, traj = _preset_ops_traj("exclusion")
    val = fluctuation_variance(ops, ops.nodes, 1.0, DT, traj)
    assert abs(val - 1.0 / 12.0) <= 1e-6  # measured 2.9e-7 (quadrature)


def test_variance_absorb_reset_constant_test_function():
    # g_tau = exp(tau/2) and [1,1]_s = 3 vt(s)/2 give e/4 + 3 sqrt(e)/2
    ops, traj = _preset_ops_traj("bcpp")
    val = fluctuation_variance(ops, np.ones(256), 1.0, DT, traj)
    ref = math.e / 4.0 + 1.5 * math.sqrt(math.e)
    assert abs(val - ref) <= 1e-7  # measured 2.8e-9


def test_variance_at_time_zero_is_bernoulli_static_term():
    ops, traj = _preset_ops_traj("voter", m=64)
    f = ops.nodes**2
    val = fluctuation_variance(ops, f, 0.0, DT, traj)
    ref = float((f**2 * ops.phi * (1.0 - ops.phi)).mean())
    assert val == ref


def test_variance_input_validation():
    ops, traj = _preset_ops_traj("voter", m=32)
    rho_only = solve_density(ops, 1.0, DT)
    with pytest.raises(ValueError):
        fluctuation_variance(ops, np.ones(32), 1.0, DT, rho_only)
    with pytest.raises(ValueError):
        fluctuation_variance(ops, np.ones(32), 2.0, DT, traj)
    other = HydroOperators(build_preset("voter", lam="1"), 16)
    with pytest.raises(ValueError):
        fluctuation_variance(other, np.ones(16), 1.0, DT, traj)
    with pytest.raises(ValueError):
        fluctuation_variance(ops, np.ones(32), 1.0, 2e-3, traj)
