"""Command-line interface.

Subcommands
-----------
simulate   event-driven trajectories; per-replica snapshots and fields
hydro      macroscopic densities and noise kernels on the grid
moments    exact finite-n moment tables and the covariance-gap ladder
fluct      statistical comparison of simulation against the limit laws
verify     the twelve-criterion verification suite

Exit codes: 0 success, 2 configuration error, 3 numerical failure,
4 verification failure.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

import numpy as np

from ._version import __version__
from .config import ConfigError, ExperimentConfig
from .ensemble import (
    TestFunctionSet,
    lln_report,
    run_ensemble,
    sample_limit_fluctuation,
    variance_check_from_samples,
)
from .expressions import ExpressionError
from .grid import GridFunction, NumericalError
from .model import ModelError
from .moments import MAX_URNS, covariance_gap_scan, evolve_means, evolve_moments
from .operators import HydroOperators
from . import report as rpt
from .simulate import build_rate_table, observe, simulate, urn_positions
from .solve import fluctuation_variance, solve_hydro
from .verify import run_verification

__all__ = ["main"]

Z_LIMIT = 4.0


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="urnflow",
        description="simulation and numerical verification of n-urn linear systems",
    )
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)
    for name, doc in (
        ("simulate", "run event-driven trajectories and export snapshots"),
        ("hydro", "solve the macroscopic equations and export densities"),
        ("moments", "integrate the exact moment tables and the decay ladder"),
        ("fluct", "compare ensembles against the limit laws"),
        ("verify", "run the verification suite"),
    ):
        p = sub.add_parser(name, help=doc, description=doc)
        p.add_argument("--config", metavar="PATH", help="JSON config file")
        p.add_argument(
            "--set",
            metavar="KEY=VALUE",
            action="append",
            default=[],
            help="override a config field (dotted path, JSON value); repeatable",
        )
        p.add_argument("--seed", type=int, help="master seed (unsigned 64-bit)")
        p.add_argument("--threads", type=int, help="worker processes for ensembles")
        p.add_argument("--out", metavar="DIR", help="output directory")
        p.add_argument(
            "--deterministic",
            action="store_true",
            help="suppress timestamped comment headers in CSV output",
        )
        p.add_argument(
            "--no-plots", action="store_true", help="skip figure rendering"
        )
        if name == "verify":
            p.add_argument(
                "--only",
                metavar="LIST",
                help="comma-separated criterion numbers to run (default: all)",
            )
    return parser


def _load_config(args) -> ExperimentConfig:
    overrides = {
        "seed": args.seed,
        "threads": args.threads,
        "out_dir": args.out,
        "plots": False if args.no_plots else None,
    }
    return ExperimentConfig.load(args.config, args.set, overrides)


# ---------------------------------------------------------------------------
# simulate
# ---------------------------------------------------------------------------

def cmd_simulate(cfg: ExperimentConfig, out: Path, deterministic: bool) -> int:
    fs = TestFunctionSet.from_sources(cfg.test_functions, cfg.test_bifunctions)
    times = list(cfg.snapshot_times)
    for n in cfg.n_list:
        table = build_rate_table(cfg.model, n)
        positions = urn_positions(n)
        means = None
        if n <= MAX_URNS:
            by_time = evolve_means(cfg.model, n, times, dt=cfg.dt)
            means = {t: by_time[t] for t in times}
        pair_mats = {
            name: np.asarray(
                np.broadcast_to(
                    expr(positions[:, None], positions[None, :]), (n, n)
                ),
                float,
            )
            for name, expr in fs.binary
        }

        traj_rows = []
        obs_rows = []
        profile_sums = {t: np.zeros(n) for t in times}
        acc: dict[tuple[str, str], tuple[np.ndarray, np.ndarray]] = {}

        def tally(quantity: str, name: str, ti: int, value: float) -> None:
            if (quantity, name) not in acc:
                acc[(quantity, name)] = (
                    np.zeros(len(times)),
                    np.zeros(len(times)),
                )
            s, s2 = acc[(quantity, name)]
            s[ti] += value
            s2[ti] += value * value

        for r in range(cfg.replicas):
            snaps = simulate(
                cfg.model, n, cfg.horizon, cfg.seed, times, replica=r, table=table
            )
            for ti, snap in enumerate(snaps):
                profile_sums[snap.time] += snap.values
                for i in range(n):
                    traj_rows.append((r, snap.time, i + 1, snap.values[i]))
                mean_vec = means[snap.time] if means is not None else None
                for name, expr in fs.unary:
                    obs = observe(snap, expr, None, mean_vec)
                    obs_rows.append((r, snap.time, "density", name, obs.density))
                    tally("density", name, ti, obs.density)
                    obs_rows.append(
                        (r, snap.time, "second_moment", name, obs.second_moment)
                    )
                    tally("second_moment", name, ti, obs.second_moment)
                    if obs.fluctuation is not None:
                        obs_rows.append(
                            (r, snap.time, "fluctuation", name, obs.fluctuation)
                        )
                        tally("fluctuation", name, ti, obs.fluctuation)
                x = snap.values
                for name, hm in pair_mats.items():
                    value = float(x @ hm @ x) / n**2
                    obs_rows.append((r, snap.time, "pair_product", name, value))
                    tally("pair_product", name, ti, value)

        rpt.write_csv(
            out / f"trajectory_n{n}.csv",
            ["replica", "time", "urn", "value"],
            traj_rows,
            deterministic,
        )
        rpt.write_csv(
            out / f"observables_n{n}.csv",
            ["replica", "time", "observable", "testfn", "value"],
            obs_rows,
            deterministic,
        )
        if cfg.plots:
            rpt.figure_trajectory(
                out / f"trajectory_n{n}.png",
                positions,
                {t: profile_sums[t] / cfg.replicas for t in times},
            )
            series = {}
            for (quantity, name), (s, s2) in acc.items():
                mean = s / cfg.replicas
                var = np.maximum(s2 / cfg.replicas - mean**2, 0.0)
                se = np.sqrt(var / cfg.replicas)
                series[(quantity, name)] = (mean, se)
            rpt.figure_observables(out / f"observables_n{n}.png", times, series)
    return 0


# ---------------------------------------------------------------------------
# hydro
# ---------------------------------------------------------------------------

def cmd_hydro(cfg: ExperimentConfig, out: Path, deterministic: bool) -> int:
    ops = HydroOperators(cfg.model, cfg.grid_m)
    traj = solve_hydro(ops, cfg.horizon, cfg.dt)
    nodes = ops.nodes

    density_rows = []
    by_time = {}
    for t in cfg.snapshot_times:
        k = traj.index_of(t)
        by_time[t] = (traj.rho[k], traj.vartheta[k])
        for idx in range(ops.m):
            density_rows.append(
                (t, nodes[idx], traj.rho[k][idx], traj.vartheta[k][idx])
            )
    rpt.write_csv(
        out / "density.csv",
        ["time", "node", "rho", "vartheta"],
        density_rows,
        deterministic,
    )

    k_final = traj.index_of(cfg.snapshot_times[-1])
    k1, k2 = ops.noise_kernels(traj.rho[k_final], traj.vartheta[k_final])
    rpt.write_csv(
        out / "kernel_k1.csv",
        ["node", "K1"],
        [(nodes[i], k1.values[i]) for i in range(ops.m)],
        deterministic,
    )
    rpt.write_csv(
        out / "kernel_k2.csv",
        ["node_u", "node_v", "K2"],
        (
            (nodes[i], nodes[j], k2.values[i, j])
            for i in range(ops.m)
            for j in range(ops.m)
        ),
        deterministic,
    )
    if cfg.plots:
        rpt.figure_density(out / "density.png", nodes, by_time)
        rpt.figure_kernels(out / "kernels.png", nodes, k1.values, k2.values)
    return 0


# ---------------------------------------------------------------------------
# moments
# ---------------------------------------------------------------------------

def cmd_moments(cfg: ExperimentConfig, out: Path, deterministic: bool) -> int:
    last_table = None
    for n in cfg.n_list:
        tables = evolve_moments(
            cfg.model, n, cfg.horizon, cfg.dt, snapshot_times=cfg.snapshot_times
        )
        rows = []
        for table in tables:
            diff = table.second_moment - table.mean_product
            for i in range(n):
                for j in range(n):
                    rows.append(
                        (
                            table.time,
                            i + 1,
                            j + 1,
                            table.mean_product[i, j],
                            table.second_moment[i, j],
                            diff[i, j],
                        )
                    )
        rpt.write_csv(
            out / f"moments_n{n}.csv",
            ["time", "i", "j", "F", "Fhat", "diff"],
            rows,
            deterministic,
        )
        last_table = tables[-1]

    scan = None
    if len(cfg.n_list) >= 2:
        scan = covariance_gap_scan(cfg.model, cfg.n_list, cfg.horizon, cfg.dt)
        rpt.write_csv(
            out / "decay.csv",
            ["n", "sup_offdiag_diff", "fitted_slope"],
            [(n, g, scan.slope) for n, g in zip(scan.ns, scan.gaps)],
            deterministic,
        )
    if cfg.plots and last_table is not None:
        rpt.figure_moment_gap(
            out / "moment_gap.png",
            last_table.second_moment - last_table.mean_product,
            last_table.time,
        )
        if scan is not None:
            rpt.figure_decay(out / "decay.png", scan.ns, scan.gaps, scan.slope)
    return 0


# ---------------------------------------------------------------------------
# fluct
# ---------------------------------------------------------------------------

def cmd_fluct(cfg: ExperimentConfig, out: Path, deterministic: bool) -> int:
    fs = TestFunctionSet.from_sources(cfg.test_functions, cfg.test_bifunctions)
    ops = HydroOperators(cfg.model, cfg.grid_m)
    traj = solve_hydro(ops, cfg.horizon, cfg.dt)
    times = list(cfg.snapshot_times)

    rows = []
    stats_by_n = {}
    for n in cfg.n_list:
        stats_by_n[n] = run_ensemble(
            cfg.model,
            n,
            cfg.replicas,
            times,
            fs,
            cfg.seed,
            center=n <= MAX_URNS,
            workers=cfg.threads,
        )

    lln = lln_report(stats_by_n, ops, traj, fs)
    for row in lln.rows:
        gap = abs(row.empirical - row.reference)
        tol = Z_LIMIT * row.stderr + 2.0 / row.n  # finite-size allowance
        z = (row.empirical - row.reference) / row.stderr if row.stderr > 0 else 0.0
        rows.append(
            (
                row.n,
                row.replicas,
                row.time,
                row.testfn,
                row.quantity,
                row.empirical,
                row.reference,
                row.stderr,
                z,
                gap <= tol,
            )
        )

    references = {}
    for name, expr in fs.unary:
        f_grid = GridFunction.from_callable(expr, ops.m)
        for t in times:
            references[(name, t)] = fluctuation_variance(
                ops, f_grid, t, cfg.dt, traj, traj
            )

    for n, stats in stats_by_n.items():
        for name, _ in fs.unary:
            for t in times:
                key = (t, name, "fluctuation")
                if key not in stats.samples:
                    continue
                check = variance_check_from_samples(
                    stats.samples[key], references[(name, t)], n, t, name
                )
                rows.append(
                    (
                        n,
                        cfg.replicas,
                        t,
                        name,
                        "fluctuation_variance",
                        check.empirical,
                        check.reference,
                        check.stderr,
                        check.zscore,
                        abs(check.zscore) <= Z_LIMIT,
                    )
                )

    if cfg.model.preset is not None:
        # the n -> infinity process itself; reported with n = 0
        for name, expr in fs.unary:
            for t in times:
                samples = sample_limit_fluctuation(
                    cfg.model,
                    ops,
                    traj,
                    traj,
                    (name, expr),
                    t,
                    cfg.dt,
                    cfg.replicas,
                    cfg.seed,
                )
                check = variance_check_from_samples(
                    samples, references[(name, t)], 0, t, name
                )
                rows.append(
                    (
                        0,
                        cfg.replicas,
                        t,
                        name,
                        "limit_sampler_variance",
                        check.empirical,
                        check.reference,
                        check.stderr,
                        check.zscore,
                        abs(check.zscore) <= Z_LIMIT,
                    )
                )

    rpt.write_csv(
        out / "fluct.csv",
        [
            "n",
            "R",
            "t",
            "testfn",
            "quantity",
            "empirical",
            "reference",
            "stderr",
            "zscore",
            "pass",
        ],
        rows,
        deterministic,
    )
    if cfg.plots:
        labels = [f"n={r[0]} t={r[2]:g} {r[4]} {r[3]}" for r in rows]
        rpt.figure_zscores(
            out / "fluct_zscores.png", labels, [float(r[8]) for r in rows]
        )
        if len(cfg.n_list) >= 2:
            ladders: dict[tuple[str, str], list[tuple[int, float]]] = {}
            for row in lln.rows:
                ladders.setdefault((row.quantity, row.testfn), []).append(
                    (row.n, row.mse)
                )
            rpt.figure_mse_ladders(out / "fluct_mse.png", ladders)
    return 0


# ---------------------------------------------------------------------------
# verify
# ---------------------------------------------------------------------------

def cmd_verify(
    cfg: ExperimentConfig, out: Path, deterministic: bool, only
) -> int:
    report = run_verification(workers=cfg.threads, only=only)
    (out / "verification.txt").write_text(report.to_text())
    (out / "verification.json").write_text(report.to_json() + "\n")
    if cfg.plots:
        rpt.figure_verification(out / "verification.png", report)
    sys.stdout.write(report.to_text())
    return 0 if report.passed else 4


# ---------------------------------------------------------------------------
# entry point
# ---------------------------------------------------------------------------

def main(argv=None) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    try:
        cfg = _load_config(args)
        only = None
        if args.command == "verify" and args.only:
            try:
                only = sorted({int(part) for part in args.only.split(",")})
            except ValueError:
                raise ConfigError(f"--only expects numbers, got {args.only!r}")
            bad = [i for i in only if not 1 <= i <= 12]
            if bad:
                raise ConfigError(f"criterion numbers out of range: {bad}")
        out = cfg.out_dir
        out.mkdir(parents=True, exist_ok=True)
        cfg.echo(out)
        if args.command == "simulate":
            return cmd_simulate(cfg, out, args.deterministic)
        if args.command == "hydro":
            return cmd_hydro(cfg, out, args.deterministic)
        if args.command == "moments":
            return cmd_moments(cfg, out, args.deterministic)
        if args.command == "fluct":
            return cmd_fluct(cfg, out, args.deterministic)
        if args.command == "verify":
            return cmd_verify(cfg, out, args.deterministic, only)
        raise AssertionError(f"unhandled command {args.command}")
    except (ConfigError, ModelError, ExpressionError) as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return 2
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 3
    except ValueError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
