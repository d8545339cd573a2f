"""Ensemble verification: laws of large numbers and fluctuation laws.

Replica r of an ensemble always uses the substream keyed by (seed, r), and
results are reduced in replica order, so output depends only on the seed
and replica count -- never on how the work is distributed over processes.

The module verifies three layers of the theory against simulation:

* empirical fields concentrate on the solved densities (LLN; mean-squared
  error decreasing along an n-ladder),
* the centered field V = (1/sqrt n) sum (x(i) - E x(i)) f(i/n) has variance
  given by the terminal fluctuation variance,
* the limit fluctuation process itself can be sampled as a scalar Gaussian
  time integral (Euler-Maruyama) whose instantaneous variance comes from
  the preset noise operators.
"""

from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .expressions import CoefficientExpr, parse_coefficient
from .grid import GridFunction, NumericalError
from .model import ModelSpec, model_from_json, model_to_json
from .moments import evolve_means
from .operators import HydroOperators
from .rng import substream
from .simulate import build_rate_table, simulate, urn_positions
from .solve import DensityTrajectory, evolve_test_function, step_count

__all__ = [
    "TestFunctionSet",
    "EnsembleStats",
    "run_ensemble",
    "LlnRow",
    "LlnReport",
    "lln_report",
    "VarianceCheck",
    "fluctuation_variance_check",
    "empirical_noise_form",
    "sample_limit_fluctuation",
]

_UNARY_QUANTITIES = ("density", "second_moment", "fluctuation")


@dataclass(frozen=True)
class TestFunctionSet:
    """Named unary test functions f(u) and pair functions H(u, v)."""

    unary: tuple[tuple[str, CoefficientExpr], ...]
    binary: tuple[tuple[str, CoefficientExpr], ...] = ()

    @classmethod
    def from_sources(cls, unary, binary=()) -> "TestFunctionSet":
        return cls(
            unary=tuple((src, parse_coefficient(src, 1)) for src in unary),
            binary=tuple((src, parse_coefficient(src, 2)) for src in binary),
        )

    @classmethod
    def default(cls) -> "TestFunctionSet":
        return cls.from_sources(["1", "u", "u*u"], ["u*v"])


@dataclass(frozen=True)
class EnsembleStats:
    """Per-(time, test function, quantity) replica samples and statistics."""

    n: int
    replicas: int
    seed: int
    times: tuple[float, ...]
    samples: dict[tuple[float, str, str], np.ndarray] = field(repr=False)

    def mean(self, time: float, testfn: str, quantity: str) -> float:
        return float(self.samples[(time, testfn, quantity)].mean())

    def variance(self, time: float, testfn: str, quantity: str) -> float:
        data = self.samples[(time, testfn, quantity)]
        return float(data.var(ddof=1))

    def stderr(self, time: float, testfn: str, quantity: str) -> float:
        data = self.samples[(time, testfn, quantity)]
        return float(math.sqrt(data.var(ddof=1) / data.size))


def _ensemble_chunk(payload: dict) -> tuple[np.ndarray, np.ndarray]:
    """Simulate replicas [r0, r1) and return their observable arrays."""
    spec = model_from_json(payload["model"])
    n = payload["n"]
    times = payload["times"]
    horizon = times[-1] if times else 0.0
    table = build_rate_table(spec, n)
    pos = urn_positions(n)
    f_values = [
        np.broadcast_to(np.asarray(parse_coefficient(src, 1)(pos), float), (n,))
        for src in payload["unary"]
    ]
    h_values = [
        np.broadcast_to(
            np.asarray(
                parse_coefficient(src, 2)(pos[:, None], pos[None, :]), float
            ),
            (n, n),
        )
        for src in payload["binary"]
    ]
    means = payload["means"]  # (times, n) or None
    r0, r1 = payload["range"]
    seed = payload["seed"]
    sqrt_n = math.sqrt(n)

    unary_out = np.full((r1 - r0, len(times), len(f_values), 3), np.nan)
    binary_out = np.full((r1 - r0, len(times), len(h_values)), np.nan)
    for r in range(r0, r1):
        snaps = simulate(spec, n, horizon, seed, times, replica=r, table=table)
        for ti, snap in enumerate(snaps):
            x = snap.values
            xx = x * x
            for fi, fv in enumerate(f_values):
                unary_out[r - r0, ti, fi, 0] = float(x @ fv) / n
                unary_out[r - r0, ti, fi, 1] = float(xx @ fv) / n
                if means is not None:
                    centered = x - means[ti]
                    unary_out[r - r0, ti, fi, 2] = float(centered @ fv) / sqrt_n
            for hi, hm in enumerate(h_values):
                binary_out[r - r0, ti, hi] = float(x @ hm @ x) / n**2
    return unary_out, binary_out


def run_ensemble(
    spec: ModelSpec,
    n: int,
    replicas: int,
    times,
    fs: TestFunctionSet,
    seed: int,
    center: bool = True,
    workers: int = 1,
    mean_dt: float = 1e-3,
) -> EnsembleStats:
    """Simulate ``replicas`` trajectories and collect the empirical fields.

    With ``center`` the fluctuation field is computed against the exact
    finite-n means (integrated to ``mean_dt`` accuracy).  ``workers`` > 1
    distributes replica ranges over processes; the reduction is by replica
    index either way.
    """
    times = [float(t) for t in times]
    if replicas < 2:
        raise ValueError("need at least two replicas for ensemble statistics")
    means = None
    if center:
        by_time = evolve_means(spec, n, times, dt=mean_dt)
        means = np.stack([by_time[t] for t in times])
    payload = {
        "model": model_to_json(spec),
        "n": n,
        "times": times,
        "unary": [name for name, _ in fs.unary],
        "binary": [name for name, _ in fs.binary],
        "means": means,
        "seed": seed,
    }
    workers = max(1, int(workers))
    if workers == 1 or replicas < 4 * workers:
        payload["range"] = (0, replicas)
        unary_out, binary_out = _ensemble_chunk(payload)
    else:
        bounds = np.linspace(0, replicas, workers + 1).astype(int)
        payloads = []
        for w in range(workers):
            p = dict(payload)
            p["range"] = (int(bounds[w]), int(bounds[w + 1]))
            payloads.append(p)
        with ProcessPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(_ensemble_chunk, payloads))
        unary_out = np.concatenate([p[0] for p in parts], axis=0)
        binary_out = np.concatenate([p[1] for p in parts], axis=0)

    samples: dict[tuple[float, str, str], np.ndarray] = {}
    for ti, t in enumerate(times):
        for fi, (name, _) in enumerate(fs.unary):
            samples[(t, name, "density")] = unary_out[:, ti, fi, 0].copy()
            samples[(t, name, "second_moment")] = unary_out[:, ti, fi, 1].copy()
            if center:
                samples[(t, name, "fluctuation")] = unary_out[:, ti, fi, 2].copy()
        for hi, (name, _) in enumerate(fs.binary):
            samples[(t, name, "pair_product")] = binary_out[:, ti, hi].copy()
    return EnsembleStats(
        n=n, replicas=replicas, seed=seed, times=tuple(times), samples=samples
    )


# ---------------------------------------------------------------------------
# Law of large numbers
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class LlnRow:
    n: int
    replicas: int
    time: float
    testfn: str
    quantity: str
    empirical: float
    reference: float
    stderr: float
    mse: float


@dataclass(frozen=True)
class LlnReport:
    rows: tuple[LlnRow, ...]

    def mse_ladder(self, time: float, testfn: str, quantity: str) -> list[tuple[int, float]]:
        ladder = [
            (row.n, row.mse)
            for row in self.rows
            if row.time == time and row.testfn == testfn and row.quantity == quantity
        ]
        return sorted(ladder)

    def mse_decreasing(self, time: float, testfn: str, quantity: str) -> bool:
        ladder = self.mse_ladder(time, testfn, quantity)
        return all(b[1] < a[1] for a, b in zip(ladder, ladder[1:]))


def lln_report(
    stats_by_n: dict[int, EnsembleStats],
    ops: HydroOperators,
    trajectory: DensityTrajectory,
    fs: TestFunctionSet,
) -> LlnReport:
    """Empirical means of the fields against their macroscopic references.

    References pair the solved densities with the test functions by grid
    quadrature; the reported mean-squared error is the mean over replicas
    of the squared deviation from the reference.
    """
    if trajectory.vartheta is None:
        raise ValueError("trajectory must include the second-moment density")
    nodes = ops.nodes
    rows: list[LlnRow] = []
    for n, stats in sorted(stats_by_n.items()):
        for t in stats.times:
            k = trajectory.index_of(t)
            rho = trajectory.rho[k]
            vartheta = trajectory.vartheta[k]
            for name, expr in fs.unary:
                fv = np.broadcast_to(np.asarray(expr(nodes), float), nodes.shape)
                for quantity, ref in (
                    ("density", float((rho * fv).mean())),
                    ("second_moment", float((vartheta * fv).mean())),
                ):
                    key = (t, name, quantity)
                    if key not in stats.samples:
                        continue
                    data = stats.samples[key]
                    emp = float(data.mean())
                    mse = float(np.mean((data - ref) ** 2))
                    rows.append(
                        LlnRow(
                            n=n,
                            replicas=stats.replicas,
                            time=t,
                            testfn=name,
                            quantity=quantity,
                            empirical=emp,
                            reference=ref,
                            stderr=stats.stderr(t, name, quantity),
                            mse=mse,
                        )
                    )
            for name, expr in fs.binary:
                hm = np.asarray(expr(nodes[:, None], nodes[None, :]), float)
                if hm.shape != (ops.m, ops.m):
                    hm = np.broadcast_to(hm, (ops.m, ops.m))
                ref = float(rho @ hm @ rho) / ops.m**2
                key = (t, name, "pair_product")
                if key not in stats.samples:
                    continue
                data = stats.samples[key]
                rows.append(
                    LlnRow(
                        n=n,
                        replicas=stats.replicas,
                        time=t,
                        testfn=name,
                        quantity="pair_product",
                        empirical=float(data.mean()),
                        reference=ref,
                        stderr=stats.stderr(t, name, "pair_product"),
                        mse=float(np.mean((data - ref) ** 2)),
                    )
                )
    return LlnReport(rows=tuple(rows))


# ---------------------------------------------------------------------------
# Fluctuation variance
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class VarianceCheck:
    n: int
    replicas: int
    time: float
    testfn: str
    empirical: float
    reference: float
    stderr: float  # standard error of a normal sample variance at the reference
    zscore: float


def variance_check_from_samples(
    samples: np.ndarray, reference: float, n: int, time: float, testfn: str
) -> VarianceCheck:
    replicas = samples.size
    empirical = float(samples.var(ddof=1))
    se = abs(reference) * math.sqrt(2.0 / (replicas - 1))
    z = (empirical - reference) / se if se > 0 else math.inf
    return VarianceCheck(
        n=n,
        replicas=replicas,
        time=time,
        testfn=testfn,
        empirical=empirical,
        reference=reference,
        stderr=se,
        zscore=z,
    )


def fluctuation_variance_check(
    spec: ModelSpec,
    n: int,
    replicas: int,
    time: float,
    testfn: tuple[str, CoefficientExpr],
    seed: int,
    ops: HydroOperators,
    rho_traj: DensityTrajectory,
    vartheta_traj: DensityTrajectory,
    dt: float,
    workers: int = 1,
) -> VarianceCheck:
    """Compare the ensemble variance of the centered field with the
    asymptotic fluctuation variance."""
    from .solve import fluctuation_variance

    name, expr = testfn
    fs = TestFunctionSet(unary=((name, expr),))
    stats = run_ensemble(
        spec, n, replicas, [time], fs, seed, center=True, workers=workers
    )
    f_grid = GridFunction.from_callable(expr, ops.m)
    reference = fluctuation_variance(ops, f_grid, time, dt, rho_traj, vartheta_traj)
    samples = stats.samples[(time, name, "fluctuation")]
    return variance_check_from_samples(samples, reference, n, time, name)


def empirical_noise_form(spec: ModelSpec, state, f) -> float:
    """Instantaneous jump-variance form of the centered field at one state:

        sum_i b(i/n) [f(i/n)(c(i/n)-1) x(i)/sqrt(n)]^2
        + (1/n) sum_{i != j} lam(i/n, j/n) [
              (f(i/n)/sqrt(n)) ((a1-1) x(i) + a2 x(j))
            + (f(j/n)/sqrt(n)) ((a4-1) x(j) + a3 x(i)) ]^2

    Nonnegative by construction (a sum of squares).
    """
    n = state.n
    pos = urn_positions(n)
    x = state.values
    fv = np.broadcast_to(np.asarray(f(pos), float), (n,))
    bv = np.broadcast_to(np.asarray(spec.b(pos), float), (n,))
    cv = np.broadcast_to(np.asarray(spec.c(pos), float), (n,))
    uu, vv = pos[:, None], pos[None, :]

    def kernel(expr):
        values = np.asarray(expr(uu, vv), float)
        return np.broadcast_to(values, (n, n)) if values.shape != (n, n) else values

    lam = kernel(spec.lam)
    a1, a2 = kernel(spec.a1), kernel(spec.a2)
    a3, a4 = kernel(spec.a3), kernel(spec.a4)
    sqrt_n = math.sqrt(n)

    refresh = float((bv * (fv * (cv - 1.0) * x / sqrt_n) ** 2).sum())
    jump_i = (fv[:, None] / sqrt_n) * ((a1 - 1.0) * x[:, None] + a2 * x[None, :])
    jump_j = (fv[None, :] / sqrt_n) * ((a4 - 1.0) * x[None, :] + a3 * x[:, None])
    pair_sq = lam * (jump_i + jump_j) ** 2
    np.fill_diagonal(pair_sq, 0.0)
    return refresh + float(pair_sq.sum()) / n


# ---------------------------------------------------------------------------
# Limit fluctuation process (scalar Gaussian sampler)
# ---------------------------------------------------------------------------

def _noise_rate(
    preset: str,
    ops: HydroOperators,
    g: np.ndarray,
    rho: np.ndarray,
    vartheta: np.ndarray,
) -> float:
    """Squared noise-operator norm applied to g, per preset."""
    lam = ops.lam
    m = ops.m
    if preset == "voter":
        mix = lam @ rho / m
        q = rho * lam.mean(axis=1) + mix - 2.0 * rho * mix
        return float((g**2 * q).mean())
    if preset == "exclusion":
        weight = lam * (rho[:, None] + rho[None, :] - 2.0 * np.outer(rho, rho))
        diff = g[:, None] - g[None, :]
        return float((weight * diff**2).sum()) / m**2
    if preset == "bcpp":
        intensity = vartheta * ops.b + lam @ vartheta / m
        return float((g**2 * intensity).mean())
    raise ValueError(f"no noise operator for preset {preset!r}")


def sample_limit_fluctuation(
    spec: ModelSpec,
    ops: HydroOperators,
    rho_traj: DensityTrajectory,
    vartheta_traj: DensityTrajectory,
    f: tuple[str, CoefficientExpr],
    horizon: float,
    dt: float,
    replicas: int,
    seed: int,
) -> np.ndarray:
    """Draw replicas of the limit fluctuation field paired with f at time t.

    The scalar M_s, the field paired with the backward-evolved test
    function, is an additive Gaussian process: its drift cancels and its
    increment variance is the squared preset noise-operator norm.  Sampling
    is Euler-Maruyama on [0, t] plus an exact Gaussian initial condition
    with variance Int f_t^2 phi (1 - phi).
    """
    if spec.preset is None:
        raise ValueError("the limit sampler needs a preset model")
    if vartheta_traj.vartheta is None:
        raise ValueError("vartheta trajectory required")
    steps = step_count(horizon, dt)
    if steps > rho_traj.steps or steps > vartheta_traj.steps:
        raise ValueError("trajectory does not cover the requested horizon")
    name, expr = f
    f_grid = GridFunction.from_callable(expr, ops.m)
    g_path = evolve_test_function(ops, f_grid, horizon, dt, keep_path=True)

    rng = substream(seed, 0)
    sigma0 = math.sqrt(
        max(0.0, float((g_path[steps] ** 2 * ops.phi * (1.0 - ops.phi)).mean()))
    )
    draws = sigma0 * rng.standard_normal(replicas)
    for k in range(steps):
        rate = _noise_rate(
            spec.preset,
            ops,
            g_path[steps - k],
            rho_traj.rho[k],
            vartheta_traj.vartheta[k],
        )
        if rate < -1e-10:
            raise NumericalError(f"negative noise rate {rate!r} at step {k}")
        draws = draws + math.sqrt(max(rate, 0.0) * dt) * rng.standard_normal(replicas)
    return draws
