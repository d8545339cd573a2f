"""End-to-end verification suite.

Twelve numbered checks confront every layer of the package with an
independent prediction: closed-form densities, exact moment ODEs,
ensemble statistics at pinned seeds, operator identities, hand-derived
matrix entries, conservation laws, solver convergence orders and the
limit fluctuation sampler.  Seeds and tolerances are fixed so the suite
is deterministic.
"""

from __future__ import annotations

import json
import math
import time as _time
from dataclasses import dataclass, field

import numpy as np

from .ensemble import (
    TestFunctionSet,
    run_ensemble,
    sample_limit_fluctuation,
)
from .expressions import parse_coefficient
from .grid import GridFunction
from .model import ModelSpec, build_preset
from .moments import (
    build_mean_product_generator,
    build_second_moment_generator,
    covariance_gap_scan,
    evolve_moments,
)
from .operators import HydroOperators
from .rng import substream
from .simulate import build_rate_table, simulate
from .solve import (
    DensityTrajectory,
    fluctuation_variance,
    solve_density,
    solve_hydro,
)

__all__ = [
    "BASE_SEED",
    "CheckResult",
    "CriterionResult",
    "VerificationReport",
    "VerificationSuite",
    "run_verification",
    "CRITERION_TITLES",
]

BASE_SEED = 20250815
GRID_M = 256
DT = 1e-3

CRITERION_TITLES = {
    1: "stationary density (pure-copy preset)",
    2: "closed-form exponential density (absorb-reset preset)",
    3: "moment engine vs simulator moments",
    4: "covariance gap decay across n",
    5: "law-of-large-numbers MSE ladders",
    6: "fluctuation field variance vs limit variance",
    7: "noise quadratic form nonnegativity",
    8: "operator identities",
    9: "moment generator golden entries and null vectors",
    10: "swap dynamics mass conservation",
    11: "solver convergence orders",
    12: "limit fluctuation sampler variance",
}


@dataclass(frozen=True)
class CheckResult:
    name: str
    measured: float
    bound: float
    passed: bool

    def as_dict(self) -> dict:
        return {
            "name": self.name,
            "measured": self.measured,
            "bound": self.bound,
            "passed": self.passed,
        }


@dataclass(frozen=True)
class CriterionResult:
    index: int
    title: str
    runtime_s: float
    checks: tuple[CheckResult, ...]

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks)

    def summary_line(self) -> str:
        verdict = "PASS" if self.passed else "FAIL"
        worst = max(
            self.checks, key=lambda c: (not c.passed, abs(c.measured))
        )
        return (
            f"[{verdict}] criterion {self.index:2d}: {self.title} "
            f"({len(self.checks)} checks, worst |measured| {worst.measured:.3g} "
            f"vs bound {worst.bound:.3g}, {self.runtime_s:.1f}s)"
        )


@dataclass(frozen=True)
class VerificationReport:
    criteria: tuple[CriterionResult, ...]

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.criteria)

    def to_text(self) -> str:
        lines = [c.summary_line() for c in self.criteria]
        verdict = "ALL CHECKS PASSED" if self.passed else "VERIFICATION FAILED"
        lines.append(verdict)
        return "\n".join(lines) + "\n"

    def to_json(self) -> str:
        return json.dumps(
            {
                "passed": self.passed,
                "criteria": [
                    {
                        "index": c.index,
                        "title": c.title,
                        "runtime_s": c.runtime_s,
                        "passed": c.passed,
                        "checks": [chk.as_dict() for chk in c.checks],
                    }
                    for c in self.criteria
                ],
            },
            indent=2,
        )


def _preset_model(name: str) -> ModelSpec:
    if name == "bcpp":
        return build_preset("bcpp", lam="1", b="0.5", phi="0.5")
    return build_preset(name, lam="1", phi="0.5")


class VerificationSuite:
    """Runs the numbered checks, caching the expensive shared artifacts."""

    def __init__(self, workers: int = 1):
        self.workers = max(1, int(workers))
        self._hydro_cache: dict[str, tuple[HydroOperators, DensityTrajectory]] = {}
        self._ensemble_cache: dict[str, object] = {}

    # -- shared artifacts ---------------------------------------------------

    def hydro(self, preset: str) -> tuple[HydroOperators, DensityTrajectory]:
        """Operators and solved (rho, vartheta) on [0, 1] for a preset."""
        if preset not in self._hydro_cache:
            ops = HydroOperators(_preset_model(preset), GRID_M)
            traj = solve_hydro(ops, 1.0, DT)
            self._hydro_cache[preset] = (ops, traj)
        return self._hydro_cache[preset]

    def fluctuation_ensemble(self, preset: str):
        """The n=256, R=10^4 centered ensemble at t=1 for a preset."""
        if preset not in self._ensemble_cache:
            fs = TestFunctionSet.from_sources(["1", "u", "u*u"])
            self._ensemble_cache[preset] = run_ensemble(
                _preset_model(preset),
                n=256,
                replicas=10_000,
                times=[1.0],
                fs=fs,
                seed=BASE_SEED + 6,
                center=True,
                workers=self.workers,
            )
        return self._ensemble_cache[preset]

    # -- criteria -------------------------------------------------------------

    def criterion_1(self) -> CriterionResult:
        """Constant initial density is stationary for the pure-copy preset."""
        start = _time.perf_counter()
        ops = HydroOperators(_preset_model("voter"), GRID_M)
        traj = solve_density(ops, 2.0, DT)
        dev = float(np.abs(traj.rho - 0.5).max())
        checks = (
            CheckResult("sup |rho - 0.5| on [0,2]", dev, 1e-10, dev <= 1e-10),
        )
        return CriterionResult(
            1, CRITERION_TITLES[1], _time.perf_counter() - start, checks
        )

    def criterion_2(self) -> CriterionResult:
        """Constant-rate absorb-reset density grows like 0.5 e^{t/2}."""
        start = _time.perf_counter()
        ops = HydroOperators(_preset_model("bcpp"), GRID_M)
        traj = solve_density(ops, 1.0, DT)
        expected = 0.5 * math.exp(0.5)
        dev = float(np.abs(traj.rho[-1] - expected).max())
        checks = (
            CheckResult("sup |rho(1) - 0.5 e^0.5|", dev, 1e-6, dev <= 1e-6),
        )
        return CriterionResult(
            2, CRITERION_TITLES[2], _time.perf_counter() - start, checks
        )

    def criterion_3(self) -> CriterionResult:
        """Simulator moment estimates agree with the exact moment ODEs."""
        start = _time.perf_counter()
        spec = _preset_model("voter")
        n, horizon, replicas = 32, 1.0, 10_000
        seed = BASE_SEED + 3
        table = build_rate_table(spec, n)
        acc_x = np.zeros(n)
        acc_x2 = np.zeros(n)
        acc_o = np.zeros((n, n))
        acc_o2 = np.zeros((n, n))
        for r in range(replicas):
            snap = simulate(
                spec, n, horizon, seed, [horizon], replica=r, table=table
            )[0]
            x = snap.values
            outer = np.outer(x, x)
            acc_x += x
            acc_x2 += x * x
            acc_o += outer
            acc_o2 += outer * outer
        mean_est = acc_x / replicas
        mean_se = np.sqrt(
            np.maximum(acc_x2 / replicas - mean_est**2, 0.0)
            * replicas
            / (replicas - 1)
            / replicas
        )
        pair_est = acc_o / replicas
        pair_se = np.sqrt(
            np.maximum(acc_o2 / replicas - pair_est**2, 0.0)
            * replicas
            / (replicas - 1)
            / replicas
        )

        exact = evolve_moments(spec, n, horizon, DT, snapshot_times=[horizon])[-1]

        def zscores(est, se, ref):
            z = np.full(est.shape, np.inf)
            ok = se > 0
            z[ok] = np.abs(est[ok] - ref[ok]) / se[ok]
            z[~ok] = np.where(np.abs(est[~ok] - ref[~ok]) <= 1e-12, 0.0, np.inf)
            return z

        z_all = np.concatenate(
            [
                zscores(mean_est, mean_se, exact.mean),
                zscores(pair_est, pair_se, exact.second_moment).ravel(),
            ]
        )
        frac3 = float(np.mean(z_all > 3.0))
        checks = (
            CheckResult("max z over all moments", float(z_all.max()), 4.0,
                        bool(z_all.max() <= 4.0)),
            CheckResult("fraction above 3 SE", frac3, 0.01, frac3 <= 0.01),
        )
        return CriterionResult(
            3, CRITERION_TITLES[3], _time.perf_counter() - start, checks
        )

    def criterion_4(self) -> CriterionResult:
        """The off-diagonal covariance gap shrinks like 1/n."""
        start = _time.perf_counter()
        scan = covariance_gap_scan(
            _preset_model("voter"), [8, 16, 32, 64], 1.0, DT
        )
        ok = -1.3 <= scan.slope <= -0.7
        checks = (
            CheckResult("log-log slope of covariance gap", scan.slope, -1.0, ok),
        )
        return CriterionResult(
            4, CRITERION_TITLES[4], _time.perf_counter() - start, checks
        )

    def criterion_5(self) -> CriterionResult:
        """Empirical MSEs against the solved densities fall along an n-ladder."""
        start = _time.perf_counter()
        fs = TestFunctionSet.from_sources(["u"], ["u*v"])
        checks = []
        for preset in ("voter", "exclusion", "bcpp"):
            spec = _preset_model(preset)
            ops, traj = self.hydro(preset)
            k = traj.index_of(1.0)
            fv = ops.nodes  # f(u) = u
            hm = np.outer(ops.nodes, ops.nodes)  # H(u, v) = u v
            refs = {
                "density": float((traj.rho[k] * fv).mean()),
                "second_moment": float((traj.vartheta[k] * fv).mean()),
                "pair_product": float(traj.rho[k] @ hm @ traj.rho[k]) / ops.m**2,
            }
            mses: dict[str, list[float]] = {q: [] for q in refs}
            for n in (32, 64, 128):
                stats = run_ensemble(
                    spec,
                    n,
                    replicas=2000,
                    times=[1.0],
                    fs=fs,
                    seed=BASE_SEED + 5,
                    center=False,
                    workers=self.workers,
                )
                for quantity, ref in refs.items():
                    name = "u*v" if quantity == "pair_product" else "u"
                    data = stats.samples[(1.0, name, quantity)]
                    mses[quantity].append(float(np.mean((data - ref) ** 2)))
            for quantity, ladder in mses.items():
                drops = [b < a for a, b in zip(ladder, ladder[1:])]
                ratio = ladder[-1] / ladder[0]
                checks.append(
                    CheckResult(
                        f"{preset} {quantity} MSE strictly decreasing "
                        f"({', '.join(f'{v:.3e}' for v in ladder)})",
                        ratio,
                        1.0,
                        all(drops),
                    )
                )
        return CriterionResult(
            5, CRITERION_TITLES[5], _time.perf_counter() - start, tuple(checks)
        )

    def criterion_6(self) -> CriterionResult:
        """Variance of the centered field matches the limit variance."""
        start = _time.perf_counter()
        replicas = 10_000
        se_factor = math.sqrt(2.0 / (replicas - 1))
        checks = []
        for preset in ("voter", "exclusion", "bcpp"):
            ops, traj = self.hydro(preset)
            stats = self.fluctuation_ensemble(preset)
            for src in ("1", "u", "u*u"):
                f_grid = GridFunction.from_callable(
                    parse_coefficient(src, 1), ops.m
                )
                ref = fluctuation_variance(ops, f_grid, 1.0, DT, traj, traj)
                emp = float(
                    stats.samples[(1.0, src, "fluctuation")].var(ddof=1)
                )
                tol = 0.05 * ref + 4.0 * ref * se_factor
                checks.append(
                    CheckResult(
                        f"{preset} f={src}: |var - {ref:.5f}|",
                        abs(emp - ref),
                        tol,
                        abs(emp - ref) <= tol,
                    )
                )
        ops, traj = self.hydro("voter")
        hand = fluctuation_variance(
            ops, GridFunction.constant(1.0, ops.m), 1.0, DT, traj, traj
        )
        checks.append(
            CheckResult(
                "voter f=1 limit variance vs hand value 0.75",
                abs(hand - 0.75),
                1e-3,
                abs(hand - 0.75) <= 1e-3,
            )
        )
        return CriterionResult(
            6, CRITERION_TITLES[6], _time.perf_counter() - start, tuple(checks)
        )

    def criterion_7(self) -> CriterionResult:
        """The noise quadratic form stays nonnegative along the solutions."""
        start = _time.perf_counter()
        worst = math.inf
        passed = True
        for pi, preset in enumerate(("voter", "exclusion", "bcpp")):
            ops, traj = self.hydro(preset)
            rng = substream(BASE_SEED + 7, pi)
            fns = rng.standard_normal((100, ops.m))
            sup_sq = (np.abs(fns).max(axis=1)) ** 2
            for t_idx in range(10):
                k = traj.index_of(round(t_idx * 0.1, 10))
                k1, k2 = ops.noise_kernels(traj.rho[k], traj.vartheta[k])
                diag = (k1.values * fns**2).mean(axis=1)
                cross = np.einsum("ri,ij,rj->r", fns, k2.values, fns) / ops.m**2
                forms = diag + cross
                margin = float((forms / sup_sq).min())
                worst = min(worst, margin)
                passed = passed and bool(np.all(forms >= -1e-10 * sup_sq))
        checks = (
            CheckResult(
                "min [f,f] / sup|f|^2 over presets, times, 100 f",
                worst,
                -1e-10,
                passed,
            ),
        )
        return CriterionResult(
            7, CRITERION_TITLES[7], _time.perf_counter() - start, checks
        )

    def criterion_8(self) -> CriterionResult:
        """Square-field drift: exact term-sum identity, and equality with the
        mean drift for the three presets."""
        start = _time.perf_counter()
        rng = substream(BASE_SEED + 8, 0)
        checks = []
        for preset in ("voter", "exclusion", "bcpp"):
            ops, _ = self.hydro(preset)
            exact_sum = True
            worst = 0.0
            for _ in range(20):
                f = rng.standard_normal(ops.m)
                combined = ops.second_moment_drift(f).values
                parts = ops.second_moment_term(1, f).values
                for k in range(2, 6):
                    parts = parts + ops.second_moment_term(k, f).values
                exact_sum = exact_sum and bool(np.array_equal(combined, parts))
                gap = float(
                    np.abs(combined - ops.mean_drift(f).values).max()
                ) / float(np.abs(f).max())
                worst = max(worst, gap)
            checks.append(
                CheckResult(
                    f"{preset}: term-sum identity exact", 0.0, 0.0, exact_sum
                )
            )
            checks.append(
                CheckResult(
                    f"{preset}: square drift equals mean drift / sup|f|",
                    worst,
                    1e-12,
                    worst <= 1e-12,
                )
            )
        return CriterionResult(
            8, CRITERION_TITLES[8], _time.perf_counter() - start, tuple(checks)
        )

    def criterion_9(self) -> CriterionResult:
        """Hand-derived generator entries at n=2 and conservation nulls."""
        start = _time.perf_counter()
        spec = _preset_model("voter")
        gen = build_mean_product_generator(spec, 2)
        entries = (
            gen.entry((0, 1), (0, 0)),
            gen.entry((0, 1), (1, 1)),
            gen.entry((0, 1), (0, 1)),
        )
        golden = (0.5, 0.5, -1.0)
        exact = entries == golden
        checks = [
            CheckResult(
                f"n=2 row (1,2) entries {entries} == {golden}",
                float(max(abs(e - g) for e, g in zip(entries, golden))),
                0.0,
                exact,
            )
        ]
        worst = 0.0
        for n in (2, 3, 8):
            ones = np.ones((n, n))
            for builder in (
                build_mean_product_generator,
                build_second_moment_generator,
            ):
                residual = float(np.abs(builder(spec, n).apply(ones)).max())
                worst = max(worst, residual)
        checks.append(
            CheckResult(
                "null vector residual at n in {2,3,8}", worst, 1e-12, worst <= 1e-12
            )
        )
        return CriterionResult(
            9, CRITERION_TITLES[9], _time.perf_counter() - start, tuple(checks)
        )

    def criterion_10(self) -> CriterionResult:
        """Swap dynamics conserve total mass exactly, path by path."""
        start = _time.perf_counter()
        spec = _preset_model("exclusion")
        n, horizon = 64, 2.0
        times = [0.0, 0.5, 1.0, 1.5, 2.0]
        table = build_rate_table(spec, n)
        seed = BASE_SEED + 10
        violations = 0
        for r in range(1000):
            snaps = simulate(
                spec, n, horizon, seed, times, replica=r, table=table
            )
            total0 = float(snaps[0].values.sum())
            for snap in snaps[1:]:
                if float(snap.values.sum()) != total0:
                    violations += 1
        checks = (
            CheckResult(
                "trajectories with a mass-sum change", float(violations), 0.0,
                violations == 0
            ),
        )
        return CriterionResult(
            10, CRITERION_TITLES[10], _time.perf_counter() - start, checks
        )

    def criterion_11(self) -> CriterionResult:
        """RK4 is fourth order in dt; midpoint quadrature second order in m."""
        start = _time.perf_counter()
        ops = HydroOperators(_preset_model("bcpp"), 64)
        expected = 0.5 * math.exp(0.5)
        errs = []
        for dt in (0.1, 0.05):
            traj = solve_density(ops, 1.0, dt)
            errs.append(float(np.abs(traj.rho[-1] - expected).max()))
        rk4_ratio = errs[0] / errs[1]

        quad_errs = [
            abs(GridFunction.from_callable(lambda u: u**3, m).integral() - 0.25)
            for m in (8, 16)
        ]
        quad_ratio = quad_errs[0] / quad_errs[1]
        checks = (
            CheckResult("RK4 error ratio under dt halving", rk4_ratio, 12.0,
                        rk4_ratio >= 12.0),
            CheckResult("midpoint error ratio under m doubling", quad_ratio, 3.5,
                        quad_ratio >= 3.5),
        )
        return CriterionResult(
            11, CRITERION_TITLES[11], _time.perf_counter() - start, checks
        )

    def criterion_12(self) -> CriterionResult:
        """The sampled limit fluctuation variance matches the computed one."""
        start = _time.perf_counter()
        replicas = 10_000
        se_factor = math.sqrt(2.0 / (replicas - 1))
        checks = []
        for preset in ("voter", "exclusion", "bcpp"):
            spec = _preset_model(preset)
            ops, traj = self.hydro(preset)
            for src in ("1", "u"):
                expr = parse_coefficient(src, 1)
                samples = sample_limit_fluctuation(
                    spec, ops, traj, traj, (src, expr), 1.0, DT,
                    replicas, BASE_SEED + 12
                )
                f_grid = GridFunction.from_callable(expr, ops.m)
                ref = fluctuation_variance(ops, f_grid, 1.0, DT, traj, traj)
                tol = 4.0 * ref * se_factor
                emp = float(samples.var(ddof=1))
                checks.append(
                    CheckResult(
                        f"{preset} f={src}: |sampled var - {ref:.5f}|",
                        abs(emp - ref),
                        tol,
                        abs(emp - ref) <= tol,
                    )
                )
        return CriterionResult(
            12, CRITERION_TITLES[12], _time.perf_counter() - start, tuple(checks)
        )

    def run(self, only=None) -> VerificationReport:
        indices = sorted(only) if only else range(1, 13)
        results = []
        for idx in indices:
            if idx not in CRITERION_TITLES:
                raise ValueError(f"no criterion {idx}")
            results.append(getattr(self, f"criterion_{idx}")())
        return VerificationReport(criteria=tuple(results))


def run_verification(workers: int = 1, only=None) -> VerificationReport:
    return VerificationSuite(workers=workers).run(only=only)
