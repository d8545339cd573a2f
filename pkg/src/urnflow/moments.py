"""Exact finite-n moment evolution.

For n urns the means E x(i), the products of means E x(i) E x(j) and the
joint second moments E[x(i) x(j)] all satisfy closed linear ODE systems.
The mean obeys an n-dimensional ODE; the two n^2-dimensional tables evolve
under sparse generators (at most 2n - 1 nonzeros per row) that are
assembled entry by entry from the model coefficients at the urn positions
i/n.  Everything is integrated with fixed-step RK4.

The gap between the joint moment table and the product-of-means table is
the finite-size covariance; its sup-norm over off-diagonal pairs decays
like 1/n, which :func:`covariance_gap_scan` measures across an n-ladder.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import cached_property

import numpy as np
import scipy.sparse as sp

from .grid import NumericalError
from .model import ModelSpec
from .simulate import urn_positions
from .solve import step_count

__all__ = [
    "MAX_URNS",
    "MomentTable",
    "SparseMomentMatrix",
    "MomentEngine",
    "mean_rate",
    "build_mean_product_generator",
    "build_second_moment_generator",
    "initial_table",
    "evolve_moments",
    "evolve_means",
    "covariance_gap_scan",
    "DecayScan",
]

# hard cap: the moment tables and generators are O(n^2) and O(n^3) objects
MAX_URNS = 512


@dataclass(frozen=True)
class MomentTable:
    """Exact moments at one time: means, products of means, joint moments.

    ``mean_product[i, j] = E x(i) * E x(j)`` and
    ``second_moment[i, j] = E[x(i) x(j)]`` (diagonal: E[x(i)^2]).
    """

    n: int
    time: float
    mean: np.ndarray
    mean_product: np.ndarray
    second_moment: np.ndarray

    def covariance_gap(self) -> float:
        """sup over off-diagonal pairs of |second_moment - mean_product|."""
        diff = np.abs(self.second_moment - self.mean_product)
        np.fill_diagonal(diff, 0.0)
        return float(diff.max())


@dataclass(frozen=True)
class SparseMomentMatrix:
    """Row-indexed sparse generator acting on raveled (n, n) tables."""

    n: int
    matrix: sp.csr_matrix

    def entry(self, row: tuple[int, int], col: tuple[int, int]) -> float:
        """Entry for row pair (i, j) and column pair (l, k), 0-based."""
        i, j = row
        l, k = col
        return float(self.matrix[i * self.n + j, l * self.n + k])

    def apply(self, table: np.ndarray) -> np.ndarray:
        return (self.matrix @ table.ravel()).reshape(self.n, self.n)

    def row_nnz(self) -> np.ndarray:
        return np.diff(self.matrix.indptr)


class MomentEngine:
    """Model coefficients sampled at the urn positions of an n-urn system."""

    def __init__(self, spec: ModelSpec, n: int):
        if n < 2:
            raise ValueError(f"need at least two urns, got n={n}")
        if n > MAX_URNS:
            raise ValueError(
                f"n={n} exceeds the moment-engine cap of {MAX_URNS} urns"
            )
        self.spec = spec
        self.n = n
        pos = urn_positions(n)
        self.pos = pos
        self.bv = np.broadcast_to(np.asarray(spec.b(pos), float), (n,)).copy()
        self.cv = np.broadcast_to(np.asarray(spec.c(pos), float), (n,)).copy()
        self.phiv = np.broadcast_to(np.asarray(spec.phi(pos), float), (n,)).copy()
        uu, vv = pos[:, None], pos[None, :]

        def kernel(expr):
            values = np.asarray(expr(uu, vv), dtype=float)
            if values.shape != (n, n):
                values = np.broadcast_to(values, (n, n)).copy()
            return values

        self.lam = kernel(spec.lam)
        self.a1 = kernel(spec.a1)
        self.a2 = kernel(spec.a2)
        self.a3 = kernel(spec.a3)
        self.a4 = kernel(spec.a4)

    @cached_property
    def transfer(self) -> np.ndarray:
        """transfer[j, k]: coefficient of mean(k) in d mean(j) / dt, k != j."""
        w = (self.lam * self.a2 + (self.lam * self.a3).T) / self.n
        np.fill_diagonal(w, 0.0)
        return w

    @cached_property
    def decay(self) -> np.ndarray:
        """decay[i]: coefficient of mean(i) in d mean(i) / dt."""
        g4 = self.lam * (self.a4 - 1.0)
        g1 = self.lam * (self.a1 - 1.0)
        col = g4.sum(axis=0) - np.diag(g4)
        row = g1.sum(axis=1) - np.diag(g1)
        return self.bv * (self.cv - 1.0) + (col + row) / self.n

    def mean_rate(self, mean: np.ndarray) -> np.ndarray:
        """Right-hand side of the exact mean ODE:

        d E x(i) / dt = b_i (c_i - 1) E x(i)
          + (E x(i)/n) sum_{j != i} lam(j/n, i/n) (a4(j/n, i/n) - 1)
          + (E x(i)/n) sum_{j != i} lam(i/n, j/n) (a1(i/n, j/n) - 1)
          + (1/n) sum_{j != i} lam(i/n, j/n) a2(i/n, j/n) E x(j)
          + (1/n) sum_{j != i} lam(j/n, i/n) a3(j/n, i/n) E x(j)
        """
        n = self.n
        g4 = self.lam * (self.a4 - 1.0)
        g1 = self.lam * (self.a1 - 1.0)
        incoming_decay = (g4.sum(axis=0) - np.diag(g4)) / n
        outgoing_decay = (g1.sum(axis=1) - np.diag(g1)) / n
        k2 = self.lam * self.a2
        k3 = (self.lam * self.a3).T
        gain = (
            k2 @ mean - np.diag(k2) * mean + (k3 @ mean - np.diag(k3) * mean)
        ) / n
        return (
            self.bv * (self.cv - 1.0) * mean
            + mean * incoming_decay
            + mean * outgoing_decay
            + gain
        )


def mean_rate(spec: ModelSpec, n: int, mean: np.ndarray) -> np.ndarray:
    return MomentEngine(spec, n).mean_rate(np.asarray(mean, dtype=float))


# ---------------------------------------------------------------------------
# Sparse generator assembly
# ---------------------------------------------------------------------------

def _assemble(n: int, fill_row) -> SparseMomentMatrix:
    rows: list[np.ndarray] = []
    cols: list[np.ndarray] = []
    vals: list[np.ndarray] = []
    for i in range(n):
        for j in range(n):
            c, v = fill_row(i, j)
            rows.append(np.full(c.size, i * n + j))
            cols.append(c)
            vals.append(v)
    matrix = sp.coo_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
        shape=(n * n, n * n),
    ).tocsr()
    return SparseMomentMatrix(n=n, matrix=matrix)


def build_mean_product_generator(spec: ModelSpec, n: int) -> SparseMomentMatrix:
    """Generator of the product-of-means table E x(i) E x(j).

    Row (i, j), i != j:
      column (i, k), k != j:  lam(j,k) a2(j,k)/n + lam(k,j) a3(k,j)/n
      column (l, j), l != i:  lam(i,l) a2(i,l)/n + lam(l,i) a3(l,i)/n
      column (i, j):          decay(i) + decay(j)
    Row (i, i):
      column (i, k), k != i:  2 lam(i,k) a2(i,k)/n + 2 lam(k,i) a3(k,i)/n
      column (i, i):          2 decay(i)
    (rate arguments are urn positions; all other entries vanish)
    """
    eng = MomentEngine(spec, n)
    w = eng.transfer
    d = eng.decay
    arange = np.arange(n)

    def fill_row(i: int, j: int):
        if i != j:
            k = arange[arange != j]
            l = arange[arange != i]
            cols = np.concatenate([i * n + k, l * n + j, [i * n + j]])
            vals = np.concatenate([w[j, k], w[i, l], [d[i] + d[j]]])
            return cols, vals
        k = arange[arange != i]
        cols = np.concatenate([i * n + k, [i * n + i]])
        vals = np.concatenate([2.0 * w[i, k], [2.0 * d[i]]])
        return cols, vals

    return _assemble(n, fill_row)


def build_second_moment_generator(spec: ModelSpec, n: int) -> SparseMomentMatrix:
    """Generator of the joint second-moment table E[x(i) x(j)].

    Off-diagonal rows agree with the product-of-means generator except at
    the columns (i, j), (i, i) and (j, j), which pick up the within-event
    quadratic corrections; diagonal rows (i, i) track E[x(i)^2] directly:

    Row (i, j), i != j:
      column (i, k), k not in {i, j}: as product-of-means
      column (l, j), l not in {i, j}: as product-of-means
      column (i, i): lam(i,j) a1(i,j) a3(i,j)/n + lam(j,i) a2(j,i) a4(j,i)/n
      column (j, j): lam(j,i) a1(j,i) a3(j,i)/n + lam(i,j) a2(i,j) a4(i,j)/n
      column (i, j): product-of-means diagonal
          - lam(i,j)(a4(i,j)-1)/n - lam(j,i)(a1(j,i)-1)/n
          - lam(j,i)(a4(j,i)-1)/n - lam(i,j)(a1(i,j)-1)/n
          + lam(i,j)(a1 a4 + a2 a3 - 1)(i,j)/n
          + lam(j,i)(a1 a4 + a2 a3 - 1)(j,i)/n
    Row (i, i):
      column (i, i): b_i (c_i^2 - 1) + sum_{k != i} lam(i,k)(a1^2(i,k)-1)/n
                     + sum_{k != i} lam(k,i)(a4^2(k,i)-1)/n
      column (i, k), k != i: 2 lam(i,k) a1(i,k) a2(i,k)/n
                             + 2 lam(k,i) a3(k,i) a4(k,i)/n
      column (k, k), k != i: lam(i,k) a2^2(i,k)/n + lam(k,i) a3^2(k,i)/n
    """
    eng = MomentEngine(spec, n)
    w = eng.transfer
    d = eng.decay
    lam, a1, a2, a3, a4 = eng.lam, eng.a1, eng.a2, eng.a3, eng.a4
    arange = np.arange(n)

    def fill_row(i: int, j: int):
        if i != j:
            k = arange[(arange != i) & (arange != j)]
            diag = (
                d[i]
                + d[j]
                - lam[i, j] * (a4[i, j] - 1.0) / n
                - lam[j, i] * (a1[j, i] - 1.0) / n
                - lam[j, i] * (a4[j, i] - 1.0) / n
                - lam[i, j] * (a1[i, j] - 1.0) / n
                + lam[i, j] * (a1[i, j] * a4[i, j] + a2[i, j] * a3[i, j] - 1.0) / n
                + lam[j, i] * (a1[j, i] * a4[j, i] + a2[j, i] * a3[j, i] - 1.0) / n
            )
            own = lam[i, j] * a1[i, j] * a3[i, j] / n + lam[j, i] * a2[j, i] * a4[j, i] / n
            other = lam[j, i] * a1[j, i] * a3[j, i] / n + lam[i, j] * a2[i, j] * a4[i, j] / n
            cols = np.concatenate(
                [i * n + k, k * n + j, [i * n + i, j * n + j, i * n + j]]
            )
            vals = np.concatenate([w[j, k], w[i, k], [own, other, diag]])
            return cols, vals
        k = arange[arange != i]
        lam_out = lam[i, k]  # lam(i/n, k/n)
        lam_in = lam[k, i]  # lam(k/n, i/n)
        diag = (
            eng.bv[i] * (eng.cv[i] ** 2 - 1.0)
            + float((lam_out * (a1[i, k] ** 2 - 1.0)).sum()) / n
            + float((lam_in * (a4[k, i] ** 2 - 1.0)).sum()) / n
        )
        mixed = 2.0 * lam_out * a1[i, k] * a2[i, k] / n + 2.0 * lam_in * a3[k, i] * a4[k, i] / n
        squares = lam_out * a2[i, k] ** 2 / n + lam_in * a3[k, i] ** 2 / n
        cols = np.concatenate([[i * n + i], i * n + k, k * n + k])
        vals = np.concatenate([[diag], mixed, squares])
        return cols, vals

    return _assemble(n, fill_row)


# ---------------------------------------------------------------------------
# Evolution
# ---------------------------------------------------------------------------

def initial_table(spec: ModelSpec, n: int) -> MomentTable:
    """Moments of the Bernoulli(phi) initial data (x^2 = x on {0, 1})."""
    eng = MomentEngine(spec, n)
    mean = eng.phiv.copy()
    product = np.outer(mean, mean)
    second = product.copy()
    np.fill_diagonal(second, mean)
    return MomentTable(
        n=n, time=0.0, mean=mean, mean_product=product, second_moment=second
    )


def _rk4_tables(mat_apply, y, dt):
    k1 = mat_apply(y)
    k2 = mat_apply(y + 0.5 * dt * k1)
    k3 = mat_apply(y + 0.5 * dt * k2)
    k4 = mat_apply(y + dt * k3)
    return y + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


def evolve_moments(
    spec: ModelSpec,
    n: int,
    horizon: float,
    dt: float = 1e-3,
    snapshot_times=None,
) -> list[MomentTable]:
    """Integrate means and both moment tables; returns requested snapshots.

    After every step the tables are checked for symmetry (to 1e-10) and the
    product table is cross-checked against the outer product of the evolved
    means (to 1e-8) -- a failure there means a generator-assembly bug.
    """
    steps = step_count(horizon, dt)
    if snapshot_times is None:
        snapshot_times = [0.0, horizon] if horizon > 0 else [0.0]
    wanted: dict[int, float] = {}
    for t in snapshot_times:
        k = int(round(t / dt)) if dt > 0 else 0
        if not 0 <= k <= steps or abs(k * dt - t) > 1e-9 * max(1.0, abs(t)):
            raise ValueError(f"snapshot time {t} is not a multiple of dt in range")
        wanted[k] = float(t)

    eng = MomentEngine(spec, n)
    gen_product = build_mean_product_generator(spec, n)
    gen_second = build_second_moment_generator(spec, n)
    table = initial_table(spec, n)
    mean = table.mean.copy()
    product = table.mean_product.copy()
    second = table.second_moment.copy()

    out: list[MomentTable] = []

    def record(k: int):
        if k in wanted:
            out.append(
                MomentTable(
                    n=n,
                    time=wanted[k],
                    mean=mean.copy(),
                    mean_product=product.copy(),
                    second_moment=second.copy(),
                )
            )

    record(0)
    for k in range(steps):
        mean = _rk4_tables(eng.mean_rate, mean, dt)
        product = _rk4_tables(gen_product.apply, product, dt)
        second = _rk4_tables(gen_second.apply, second, dt)
        if not (np.all(np.isfinite(mean)) and np.all(np.isfinite(second))):
            raise NumericalError(f"moment evolution diverged at step {k + 1}")
        scale = max(1.0, float(np.abs(product).max()), float(np.abs(second).max()))
        if float(np.abs(product - product.T).max()) > 1e-10 * scale:
            raise NumericalError("product-of-means table lost symmetry")
        if float(np.abs(second - second.T).max()) > 1e-10 * scale:
            raise NumericalError("second-moment table lost symmetry")
        gap = float(np.abs(product - np.outer(mean, mean)).max())
        if gap > 1e-8 * scale:
            raise NumericalError(
                "product-of-means table disagrees with the evolved means "
                f"(gap {gap:.3e}); generator assembly is inconsistent"
            )
        record(k + 1)
    return out


def evolve_means(
    spec: ModelSpec, n: int, times, dt: float = 1e-3
) -> dict[float, np.ndarray]:
    """Exact finite-n means at the requested times (each a multiple of dt)."""
    times = sorted(float(t) for t in times)
    if times and times[0] < 0.0:
        raise ValueError("times must be nonnegative")
    horizon = times[-1] if times else 0.0
    steps = step_count(horizon, dt)
    wanted: dict[int, float] = {}
    for t in times:
        k = int(round(t / dt))
        if abs(k * dt - t) > 1e-9 * max(1.0, t):
            raise ValueError(f"time {t} is not a multiple of dt {dt}")
        wanted[k] = t
    eng = MomentEngine(spec, n)
    mean = eng.phiv.copy()
    out: dict[float, np.ndarray] = {}
    if 0 in wanted:
        out[wanted[0]] = mean.copy()
    for k in range(steps):
        mean = _rk4_tables(eng.mean_rate, mean, dt)
        if k + 1 in wanted:
            if not np.all(np.isfinite(mean)):
                raise NumericalError(f"mean evolution diverged at step {k + 1}")
            out[wanted[k + 1]] = mean.copy()
    return out


# ---------------------------------------------------------------------------
# Covariance-gap ladder
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class DecayScan:
    """Covariance gaps across an n-ladder and the fitted log-log slope."""

    ns: tuple[int, ...]
    gaps: tuple[float, ...]
    slope: float


def covariance_gap_scan(
    spec: ModelSpec, n_list, horizon: float, dt: float = 1e-3
) -> DecayScan:
    """Evolve the moment tables for each n and fit log(gap) vs log(n)."""
    ns = sorted(int(n) for n in n_list)
    if len(ns) < 2:
        raise ValueError("need at least two system sizes to fit a slope")
    gaps = []
    for n in ns:
        final = evolve_moments(spec, n, horizon, dt, snapshot_times=[horizon])[-1]
        gaps.append(final.covariance_gap())
    if min(gaps) <= 0.0:
        slope = math.nan
    else:
        slope = float(np.polyfit(np.log(ns), np.log(gaps), 1)[0])
    return DecayScan(ns=tuple(ns), gaps=tuple(gaps), slope=slope)
