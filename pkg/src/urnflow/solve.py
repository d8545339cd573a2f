"""Time integration of the hydrodynamic equations.

The density rho and the second-moment density vartheta satisfy

    d rho / dt      = (mean drift, adjoint) rho,            rho(0) = phi
    d vartheta / dt = (square drift, adjoint) vartheta
                      + interaction source(rho(t)),         vartheta(0) = phi

Both are integrated by classical RK4 with a fixed step; the source at RK4
half-steps uses linearly interpolated rho.  Test functions evolve forward
under the mean drift (the semigroup side); the terminal fluctuation
variance combines an evolved test function with the noise quadratic form
along the trajectory.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .grid import GridFunction, NumericalError
from .operators import HydroOperators

__all__ = [
    "DensityTrajectory",
    "solve_density",
    "solve_second_moment",
    "solve_hydro",
    "evolve_test_function",
    "fluctuation_variance",
]


def step_count(horizon: float, dt: float) -> int:
    """Number of RK4 steps; the horizon must be an integer multiple of dt."""
    if dt <= 0.0:
        raise ValueError(f"dt must be positive, got {dt}")
    if horizon < 0.0:
        raise ValueError(f"horizon must be nonnegative, got {horizon}")
    steps = int(round(horizon / dt))
    if abs(steps * dt - horizon) > 1e-9 * max(1.0, abs(horizon)):
        raise ValueError(
            f"horizon {horizon} is not an integer multiple of dt {dt}"
        )
    return steps


@dataclass(frozen=True)
class DensityTrajectory:
    """Densities stored at every multiple of dt on an m-node grid.

    ``rho[k]`` (and ``vartheta[k]`` when present) holds the grid values at
    time ``times[k] = k * dt``.
    """

    m: int
    dt: float
    times: np.ndarray
    rho: np.ndarray
    vartheta: np.ndarray | None = None

    @property
    def steps(self) -> int:
        return len(self.times) - 1

    @property
    def horizon(self) -> float:
        return float(self.times[-1])

    def rho_at(self, k: int) -> GridFunction:
        return GridFunction(self.m, self.rho[k])

    def vartheta_at(self, k: int) -> GridFunction:
        if self.vartheta is None:
            raise ValueError("trajectory has no second-moment component")
        return GridFunction(self.m, self.vartheta[k])

    def index_of(self, t: float) -> int:
        k = int(round(t / self.dt))
        if not 0 <= k <= self.steps or abs(k * self.dt - t) > 1e-9 * max(1.0, t):
            raise ValueError(f"time {t} is not stored in this trajectory")
        return k


def _check_finite(y: np.ndarray, what: str, k: int) -> None:
    if not np.all(np.isfinite(y)):
        raise NumericalError(f"{what} became non-finite at step {k}")


def _rk4_linear(mat: np.ndarray, y0: np.ndarray, steps: int, dt: float, what: str):
    """RK4 for y' = mat @ y, storing every step.  Returns (steps+1, m)."""
    out = np.empty((steps + 1, y0.size))
    out[0] = y = y0.copy()
    # overflow surfaces as a NumericalError below, not as a warning
    with np.errstate(over="ignore", invalid="ignore"):
        for k in range(steps):
            k1 = mat @ y
            k2 = mat @ (y + 0.5 * dt * k1)
            k3 = mat @ (y + 0.5 * dt * k2)
            k4 = mat @ (y + dt * k3)
            y = y + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
            _check_finite(y, what, k + 1)
            out[k + 1] = y
    return out


def solve_density(ops: HydroOperators, horizon: float, dt: float) -> DensityTrajectory:
    """Integrate the density equation from rho(0) = phi."""
    steps = step_count(horizon, dt)
    rho = _rk4_linear(
        ops.mean_drift_adjoint_matrix, ops.phi, steps, dt, "density"
    )
    return DensityTrajectory(
        m=ops.m, dt=dt, times=np.arange(steps + 1) * dt, rho=rho
    )


def solve_second_moment(
    ops: HydroOperators, rho_traj: DensityTrajectory, horizon: float, dt: float
) -> DensityTrajectory:
    """Integrate the second-moment equation from vartheta(0) = phi.

    ``rho_traj`` must come from :func:`solve_density` with the same grid and
    step and must cover ``horizon``; the interaction source at RK4
    half-steps evaluates on linearly interpolated rho.
    """
    if rho_traj.m != ops.m:
        raise ValueError("rho trajectory grid does not match the operator grid")
    if rho_traj.dt != dt:
        raise ValueError("rho trajectory step does not match dt")
    steps = step_count(horizon, dt)
    if steps > rho_traj.steps:
        raise ValueError("rho trajectory does not cover the requested horizon")

    mat = ops.second_moment_drift_adjoint_matrix
    source = lambda r: ops.interaction_source_density(r).values  # noqa: E731
    vt = np.empty((steps + 1, ops.m))
    vt[0] = y = ops.phi.copy()
    with np.errstate(over="ignore", invalid="ignore"):
        for k in range(steps):
            rho_k = rho_traj.rho[k]
            rho_next = rho_traj.rho[k + 1]
            s_k = source(rho_k)
            s_half = source(0.5 * (rho_k + rho_next))
            s_next = source(rho_next)
            k1 = mat @ y + s_k
            k2 = mat @ (y + 0.5 * dt * k1) + s_half
            k3 = mat @ (y + 0.5 * dt * k2) + s_half
            k4 = mat @ (y + dt * k3) + s_next
            y = y + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
            _check_finite(y, "second-moment density", k + 1)
            vt[k + 1] = y
    return DensityTrajectory(
        m=ops.m,
        dt=dt,
        times=np.arange(steps + 1) * dt,
        rho=rho_traj.rho[: steps + 1].copy(),
        vartheta=vt,
    )


def solve_hydro(ops: HydroOperators, horizon: float, dt: float) -> DensityTrajectory:
    """Convenience: solve rho, then vartheta, over the same horizon."""
    rho_traj = solve_density(ops, horizon, dt)
    return solve_second_moment(ops, rho_traj, horizon, dt)


def evolve_test_function(
    ops: HydroOperators,
    f: GridFunction | np.ndarray,
    t: float,
    dt: float,
    keep_path: bool = False,
):
    """Evolve a test function forward under the mean drift for time t.

    With ``keep_path`` the whole sweep is returned as an array of shape
    (steps+1, m); otherwise just the terminal GridFunction.
    """
    steps = step_count(t, dt)
    f0 = f.values if isinstance(f, GridFunction) else np.asarray(f, dtype=float)
    if f0.shape != (ops.m,):
        raise ValueError(f"test function must have {ops.m} values")
    path = _rk4_linear(ops.mean_drift_matrix, f0, steps, dt, "test function")
    if keep_path:
        return path
    return GridFunction(ops.m, path[-1])


def fluctuation_variance(
    ops: HydroOperators,
    f: GridFunction | np.ndarray,
    t: float,
    dt: float,
    rho_traj: DensityTrajectory,
    vartheta_traj: DensityTrajectory | None = None,
) -> float:
    """Asymptotic variance of the fluctuation field paired with f at time t:

        Int (g_t)^2 phi (1 - phi) du
        + Int_0^t [g_{t-s}, g_{t-s}]_s ds,      g_tau = f evolved for tau

    The time integral uses the composite trapezoid rule on the trajectory
    grid; the evolved test function comes from one forward sweep with every
    step cached.
    """
    if vartheta_traj is None:
        vartheta_traj = rho_traj
    if vartheta_traj.vartheta is None:
        raise ValueError("vartheta trajectory required (solve_second_moment)")
    for traj in (rho_traj, vartheta_traj):
        if traj.m != ops.m:
            raise ValueError("trajectory grid does not match the operator grid")
        if traj.dt != dt:
            raise ValueError("trajectory step does not match dt")
    steps = step_count(t, dt)
    if steps > rho_traj.steps or steps > vartheta_traj.steps:
        raise ValueError("trajectory does not cover the requested time")

    g_path = evolve_test_function(ops, f, t, dt, keep_path=True)
    g_final = g_path[-1]
    static = float((g_final**2 * ops.phi * (1.0 - ops.phi)).mean())

    # integrand at s_k = k dt pairs g_{t - s_k} with the kernels at s_k
    integrand = np.empty(steps + 1)
    for k in range(steps + 1):
        integrand[k] = ops.noise_form(
            g_path[steps - k], rho_traj.rho[k], vartheta_traj.vartheta[k]
        )
    if steps == 0:
        dynamic = 0.0
    else:
        dynamic = float(np.trapezoid(integrand, dx=dt))
    total = static + dynamic
    scale = max(1.0, float(np.max(np.abs(g_path[-1]))) ** 2)
    if total < -1e-10 * scale:
        raise NumericalError(
            f"fluctuation variance came out negative ({total!r})"
        )
    return total
