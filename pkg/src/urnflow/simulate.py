"""Exact event-driven simulation of the N-urn dynamics.

Event rates never depend on the state, so the event clock is a homogeneous
Poisson process with intensity ``total_rate`` and the event category is an
independent categorical draw.  Categories are sampled in O(1) via an alias
table over the combined event set: n refresh events (urn i at rate b(i/n))
followed by the n(n-1) ordered pairs (i, j), i != j, each at rate
lam(i/n, j/n)/n.

A refresh multiplies urn i by c(i/n); a pair event applies the linear
two-urn update

    x(i) <- a1 x(i) + a2 x(j)
    x(j) <- a3 x(i) + a4 x(j)

with both right-hand sides reading pre-update values.  Snapshots record the
state after the last event at or before the requested time.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .model import ModelSpec
from .rng import substream

__all__ = [
    "AliasTable",
    "RateTable",
    "UrnState",
    "Observables",
    "build_rate_table",
    "initial_state",
    "simulate",
    "observe",
    "urn_positions",
]


def urn_positions(n: int) -> np.ndarray:
    """Scaled positions i/n for urns i = 1..n (0-based index k -> (k+1)/n)."""
    return np.arange(1, n + 1) / n


# ---------------------------------------------------------------------------
# Alias method
# ---------------------------------------------------------------------------

class AliasTable:
    """Vose alias table: O(K) construction, O(1) categorical sampling."""

    def __init__(self, weights: np.ndarray):
        weights = np.asarray(weights, dtype=float)
        if weights.ndim != 1 or weights.size == 0:
            raise ValueError("weights must be a nonempty 1-d array")
        if np.any(weights < 0.0) or not np.all(np.isfinite(weights)):
            raise ValueError("weights must be finite and nonnegative")
        total = float(math.fsum(weights.tolist()))
        if total <= 0.0:
            raise ValueError("at least one weight must be positive")
        k = weights.size
        scaled = weights * (k / total)
        prob = np.ones(k)
        alias = np.arange(k)
        small = [i for i in range(k) if scaled[i] < 1.0]
        large = [i for i in range(k) if scaled[i] >= 1.0]
        scaled = scaled.tolist()
        while small and large:
            s = small.pop()
            g = large.pop()
            prob[s] = scaled[s]
            alias[s] = g
            scaled[g] = (scaled[g] + scaled[s]) - 1.0
            if scaled[g] < 1.0:
                small.append(g)
            else:
                large.append(g)
        # remaining buckets are full up to rounding
        for i in small + large:
            prob[i] = 1.0
        self.size = k
        self.total = total
        self.prob = prob
        self.alias = alias

    def sample(self, rng: np.random.Generator, size: int) -> np.ndarray:
        """Vectorized draws of category indices."""
        idx = rng.integers(0, self.size, size=size)
        accept = rng.random(size) < self.prob[idx]
        return np.where(accept, idx, self.alias[idx])


# ---------------------------------------------------------------------------
# Rate table
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class RateTable:
    """All event rates and update coefficients for an n-urn model.

    Events are indexed 0..n-1 (refresh at urn e) then n..n+n(n-1)-1 (ordered
    pairs in row-major order with the diagonal skipped).  ``total_rate`` is
    the compensated (fsum) total of all rates.
    """

    n: int
    refresh_rates: np.ndarray  # (n,)   b(i/n)
    pair_rates: np.ndarray  # (n, n) lam(i/n, j/n)/n off-diagonal, 0 on it
    total_rate: float
    alias: AliasTable | None = field(repr=False)
    event_i: np.ndarray = field(repr=False)
    event_j: np.ndarray = field(repr=False)  # -1 for refresh events
    refresh_mult: np.ndarray = field(repr=False)  # c(i/n) per event
    pair_coeffs: np.ndarray = field(repr=False)  # (events, 4) a1..a4 per event

    @property
    def event_count(self) -> int:
        return self.n + self.n * (self.n - 1)


def build_rate_table(spec: ModelSpec, n: int) -> RateTable:
    if n < 2:
        raise ValueError(f"need at least two urns, got n={n}")
    pos = urn_positions(n)
    refresh = np.broadcast_to(np.asarray(spec.b(pos), dtype=float), (n,)).copy()
    if np.any(refresh < 0.0):
        raise ValueError("negative refresh rate")
    uu, vv = pos[:, None], pos[None, :]

    def kernel(expr):
        values = np.asarray(expr(uu, vv), dtype=float)
        if values.shape != (n, n):
            values = np.broadcast_to(values, (n, n)).copy()
        return values

    lam = kernel(spec.lam)
    if np.any(lam < 0.0):
        raise ValueError("negative pair rate")
    pair = lam / n
    np.fill_diagonal(pair, 0.0)

    off = ~np.eye(n, dtype=bool)
    ii, jj = np.nonzero(off)  # row-major enumeration of ordered pairs
    weights = np.concatenate([refresh, pair[ii, jj]])
    total = float(math.fsum(weights.tolist()))

    event_i = np.concatenate([np.arange(n), ii])
    event_j = np.concatenate([np.full(n, -1), jj])
    cvals = np.broadcast_to(np.asarray(spec.c(pos), dtype=float), (n,)).copy()
    refresh_mult = np.concatenate([cvals, np.zeros(ii.size)])
    coeffs = np.zeros((weights.size, 4))
    for col, expr in enumerate((spec.a1, spec.a2, spec.a3, spec.a4)):
        coeffs[n:, col] = kernel(expr)[ii, jj]

    alias = AliasTable(weights) if total > 0.0 else None
    return RateTable(
        n=n,
        refresh_rates=refresh,
        pair_rates=pair,
        total_rate=total,
        alias=alias,
        event_i=event_i,
        event_j=event_j,
        refresh_mult=refresh_mult,
        pair_coeffs=coeffs,
    )


# ---------------------------------------------------------------------------
# State, trajectories and observables
# ---------------------------------------------------------------------------

@dataclass
class UrnState:
    """State of the n urns at a point in time."""

    n: int
    time: float
    values: np.ndarray

    def copy(self) -> "UrnState":
        return UrnState(self.n, self.time, self.values.copy())


def initial_state(spec: ModelSpec, n: int, rng: np.random.Generator) -> UrnState:
    """Independent Bernoulli(phi(i/n)) occupation numbers."""
    phi = np.broadcast_to(
        np.asarray(spec.phi(urn_positions(n)), dtype=float), (n,)
    )
    values = (rng.random(n) < phi).astype(float)
    return UrnState(n=n, time=0.0, values=values)


def simulate(
    spec: ModelSpec,
    n: int,
    horizon: float,
    seed: int,
    snapshot_times: Sequence[float],
    replica: int = 0,
    table: RateTable | None = None,
) -> list[UrnState]:
    """One trajectory; returns a snapshot per requested time.

    Snapshot times must be sorted and lie in [0, horizon].  The state at
    time t is the state after the last event at or before t; a zero total
    rate yields a frozen trajectory.
    """
    if horizon < 0.0:
        raise ValueError("horizon must be nonnegative")
    times = [float(t) for t in snapshot_times]
    if any(t1 > t2 for t1, t2 in zip(times, times[1:])):
        raise ValueError("snapshot times must be sorted")
    if times and (times[0] < 0.0 or times[-1] > horizon):
        raise ValueError("snapshot times must lie within [0, horizon]")
    if table is None:
        table = build_rate_table(spec, n)
    elif table.n != n:
        raise ValueError("rate table size does not match n")

    rng = substream(seed, replica)
    state = initial_state(spec, n, rng)
    values = state.values.tolist()
    snapshots: list[UrnState] = []

    if table.total_rate <= 0.0:
        return [UrnState(n, t, np.array(values)) for t in times]

    # hot loop on plain Python floats; rng consumed in fixed-size blocks
    prob = table.alias.prob.tolist()
    alias = table.alias.alias.tolist()
    ev_i = table.event_i.tolist()
    ev_j = table.event_j.tolist()
    cmul = table.refresh_mult.tolist()
    a1v, a2v, a3v, a4v = (table.pair_coeffs[:, k].tolist() for k in range(4))
    k_events = table.event_count
    scale = 1.0 / table.total_rate

    block = max(64, min(1 << 14, int(table.total_rate * horizon * 1.25) + 64))
    waits: list[float] = []
    cats: list[int] = []
    accepts: list[float] = []
    cursor = block  # force an initial refill

    t = 0.0
    snap_idx = 0
    n_times = len(times)
    while True:
        if cursor >= len(waits):
            waits = rng.exponential(scale, size=block).tolist()
            cats = rng.integers(0, k_events, size=block).tolist()
            accepts = rng.random(block).tolist()
            cursor = 0
        t_next = t + waits[cursor]
        while snap_idx < n_times and times[snap_idx] < t_next:
            snapshots.append(UrnState(n, times[snap_idx], np.array(values)))
            snap_idx += 1
        if t_next > horizon:
            break
        t = t_next
        k = cats[cursor]
        e = k if accepts[cursor] < prob[k] else alias[k]
        cursor += 1
        i = ev_i[e]
        j = ev_j[e]
        if j < 0:
            values[i] *= cmul[e]
        else:
            xi = values[i]
            xj = values[j]
            values[i] = a1v[e] * xi + a2v[e] * xj
            values[j] = a3v[e] * xi + a4v[e] * xj
    while snap_idx < n_times:
        snapshots.append(UrnState(n, times[snap_idx], np.array(values)))
        snap_idx += 1
    return snapshots


@dataclass(frozen=True)
class Observables:
    """Empirical fields of one state paired with one test function.

    density        (1/n)      sum_i x(i)   f(i/n)
    second_moment  (1/n)      sum_i x(i)^2 f(i/n)
    pair_product   (1/n^2)    sum_i sum_j x(i) x(j) H(i/n, j/n)  (diagonal in)
    fluctuation    (1/sqrt n) sum_i (x(i) - mean_i) f(i/n)
    """

    density: float
    second_moment: float
    pair_product: float | None
    fluctuation: float | None


def observe(
    state: UrnState,
    f: Callable,
    pair_fn: Callable | None = None,
    means: np.ndarray | None = None,
) -> Observables:
    """Evaluate the empirical fields of ``state`` against a test function.

    ``f`` is evaluated at the urn positions i/n; ``pair_fn`` (if given) on
    their Cartesian product including the diagonal.  ``means`` are the exact
    finite-n expectations used to center the fluctuation field.
    """
    n = state.n
    pos = urn_positions(n)
    fv = np.broadcast_to(np.asarray(f(pos), dtype=float), (n,))
    x = state.values
    density = float(x @ fv) / n
    second = float((x * x) @ fv) / n
    pair = None
    if pair_fn is not None:
        hm = np.asarray(pair_fn(pos[:, None], pos[None, :]), dtype=float)
        if hm.shape != (n, n):
            hm = np.broadcast_to(hm, (n, n))
        pair = float(x @ hm @ x) / n**2
    fluct = None
    if means is not None:
        fluct = float((x - means) @ fv) / math.sqrt(n)
    return Observables(
        density=density,
        second_moment=second,
        pair_product=pair,
        fluctuation=fluct,
    )
