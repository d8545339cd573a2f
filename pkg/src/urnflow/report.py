"""Delimited output and figures.

Every CSV uses a comma separator, ``.`` decimal point, LF line endings and
a mandatory header row.  Floats are written with ``repr`` so equal inputs
produce byte-identical files; a leading ``#`` comment line carries the
generation timestamp and is suppressed in deterministic mode.  Figures are
rendered with the Agg backend next to the CSV they illustrate.
"""

from __future__ import annotations

import csv
import datetime
from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from ._version import __version__  # noqa: E402

__all__ = ["write_csv", "format_cell"]


def format_cell(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        return repr(float(value))
    return str(value)


def write_csv(path: Path, header, rows, deterministic: bool = False) -> Path:
    """Write one CSV file; see the module docstring for the format rules."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        if not deterministic:
            stamp = datetime.datetime.now(datetime.timezone.utc).strftime(
                "%Y-%m-%dT%H:%M:%SZ"
            )
            fh.write(f"# urnflow {__version__} generated {stamp}\n")
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        for row in rows:
            writer.writerow([format_cell(v) for v in row])
    return path


# ---------------------------------------------------------------------------
# Figures
# ---------------------------------------------------------------------------

def _finish(fig, path: Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.tight_layout()
    fig.savefig(path, dpi=130)
    plt.close(fig)
    return path


def figure_density(path, nodes, by_time: dict) -> Path:
    """Density and second-moment profiles, one curve per snapshot time."""
    fig, axes = plt.subplots(1, 2, figsize=(9, 3.5), sharex=True)
    for t, (rho, vartheta) in sorted(by_time.items()):
        axes[0].plot(nodes, rho, label=f"t={t:g}")
        axes[1].plot(nodes, vartheta, label=f"t={t:g}")
    axes[0].set_title("density")
    axes[1].set_title("second-moment density")
    for ax in axes:
        ax.set_xlabel("u")
        ax.legend(fontsize=8)
    return _finish(fig, path)


def figure_kernels(path, nodes, k1: np.ndarray, k2: np.ndarray) -> Path:
    fig, axes = plt.subplots(1, 2, figsize=(9, 3.5))
    axes[0].plot(nodes, k1)
    axes[0].set_xlabel("u")
    axes[0].set_title("diagonal noise kernel K1")
    im = axes[1].imshow(
        k2, origin="lower", extent=(0, 1, 0, 1), aspect="auto", cmap="RdBu_r"
    )
    fig.colorbar(im, ax=axes[1], shrink=0.85)
    axes[1].set_xlabel("v")
    axes[1].set_ylabel("u")
    axes[1].set_title("cross noise kernel K2")
    return _finish(fig, path)


def figure_trajectory(path, positions, profiles: dict) -> Path:
    """Mean urn profile (over replicas) at each snapshot time."""
    fig, ax = plt.subplots(figsize=(6, 3.5))
    for t, profile in sorted(profiles.items()):
        ax.plot(positions, profile, marker=".", lw=1, label=f"t={t:g}")
    ax.set_xlabel("urn position i/n")
    ax.set_ylabel("mean value")
    ax.set_title("replica-averaged urn profile")
    ax.legend(fontsize=8)
    return _finish(fig, path)


def figure_observables(path, times, series: dict) -> Path:
    """Ensemble mean with 2-stderr band per (quantity, test function)."""
    fig, ax = plt.subplots(figsize=(6.5, 4))
    for (quantity, name), (mean, se) in sorted(series.items()):
        mean = np.asarray(mean)
        se = np.asarray(se)
        line, = ax.plot(times, mean, marker="o", ms=3, label=f"{quantity} f={name}")
        ax.fill_between(
            times, mean - 2 * se, mean + 2 * se, alpha=0.2, color=line.get_color()
        )
    ax.set_xlabel("time")
    ax.set_ylabel("ensemble mean")
    ax.set_title("empirical fields over time")
    ax.legend(fontsize=7)
    return _finish(fig, path)


def figure_moment_gap(path, diff: np.ndarray, time: float) -> Path:
    fig, ax = plt.subplots(figsize=(5, 4))
    lim = max(float(np.abs(diff).max()), 1e-300)
    im = ax.imshow(diff, origin="lower", cmap="RdBu_r", vmin=-lim, vmax=lim)
    fig.colorbar(im, ax=ax, shrink=0.85)
    ax.set_title(f"second moment minus mean product, t={time:g}")
    ax.set_xlabel("j")
    ax.set_ylabel("i")
    return _finish(fig, path)


def figure_decay(path, ns, gaps, slope: float) -> Path:
    fig, ax = plt.subplots(figsize=(5, 4))
    ax.loglog(ns, gaps, marker="o", label="off-diagonal gap")
    if np.isfinite(slope) and len(ns) >= 2:
        anchor = gaps[0] * (np.asarray(ns, float) / ns[0]) ** slope
        ax.loglog(ns, anchor, "--", label=f"fit slope {slope:.3f}")
    ax.set_xlabel("n")
    ax.set_ylabel("sup off-diagonal |difference|")
    ax.set_title("covariance gap vs system size")
    ax.legend(fontsize=8)
    return _finish(fig, path)


def figure_zscores(path, labels, zscores, limit: float = 4.0) -> Path:
    fig, ax = plt.subplots(figsize=(7, max(2.5, 0.28 * len(labels))))
    y = np.arange(len(labels))
    colors = ["tab:blue" if abs(z) <= limit else "tab:red" for z in zscores]
    ax.barh(y, zscores, color=colors)
    ax.axvline(-limit, color="gray", ls="--", lw=1)
    ax.axvline(limit, color="gray", ls="--", lw=1)
    ax.set_yticks(y, labels, fontsize=7)
    ax.set_xlabel("z-score")
    ax.set_title("statistical checks")
    return _finish(fig, path)


def figure_mse_ladders(path, ladders: dict) -> Path:
    """log-log MSE against n, one line per (quantity, test function)."""
    fig, ax = plt.subplots(figsize=(6, 4))
    for (quantity, name), points in sorted(ladders.items()):
        pts = sorted(points)
        ax.loglog(
            [p[0] for p in pts],
            [max(p[1], 1e-300) for p in pts],
            marker="o",
            label=f"{quantity} {name}",
        )
    ax.set_xlabel("n")
    ax.set_ylabel("MSE vs macroscopic reference")
    ax.set_title("law-of-large-numbers ladders")
    ax.legend(fontsize=7)
    return _finish(fig, path)


def figure_verification(path, report) -> Path:
    fig, ax = plt.subplots(figsize=(7, 4.2))
    indices = [c.index for c in report.criteria]
    y = np.arange(len(indices))
    colors = ["tab:green" if c.passed else "tab:red" for c in report.criteria]
    runtimes = [c.runtime_s for c in report.criteria]
    ax.barh(y, runtimes, color=colors)
    ax.set_yticks(
        y, [f"{c.index}: {c.title}" for c in report.criteria], fontsize=7
    )
    ax.set_xlabel("runtime (s)")
    ax.set_title("verification suite (green = pass)")
    ax.invert_yaxis()
    return _finish(fig, path)
