import math

import numpy as np
import pytest

from urnflow.model import build_preset, make_model
from urnflow.rng import substream
from urnflow.simulate import (
    AliasTable,
    build_rate_table,
    initial_state,
    observe,
    simulate,
    urn_positions,
)


def test_urn_positions_are_scaled_indices():
    assert np.array_equal(urn_positions(4), [0.25, 0.5, 0.75, 1.0])
    assert urn_positions(3)[-1] == 1.0


# ---------------------------------------------------------------------------
# rate table
# ---------------------------------------------------------------------------

def test_rate_table_two_urn_hand_values():
    # positions 1/2 and 1; every number below is an exact dyadic
    spec = make_model(b="u", c="0.5", lam="u + 2*v", phi="0.5")
    table = build_rate_table(spec, 2)
    assert np.array_equal(table.refresh_rates, [0.5, 1.0])
    assert np.array_equal(table.pair_rates, [[0.0, 1.25], [1.0, 0.0]])
    assert table.total_rate == 3.75
    assert table.event_count == 4
    # refresh events first, then ordered pairs in row-major order
    assert table.event_i.tolist() == [0, 1, 0, 1]
    assert table.event_j.tolist() == [-1, -1, 1, 0]
    assert table.refresh_mult[:2].tolist() == [0.5, 0.5]
    # default update coefficients leave both urns unchanged
    assert table.pair_coeffs[2:].tolist() == [[1, 0, 0, 1], [1, 0, 0, 1]]


def test_rate_table_rejects_bad_input():
    with pytest.raises(ValueError):
        build_rate_table(build_preset("voter", lam="1"), 1)
    with pytest.raises(ValueError):
        build_rate_table(make_model(lam="u - 2", phi="0.5"), 4)
    with pytest.raises(ValueError):
        build_rate_table(make_model(b="-1", lam="1", phi="0.5"), 4)


def test_zero_rate_table_has_no_alias():
    table = build_rate_table(make_model(b="0", lam="0", phi="0.5"), 3)
    assert table.total_rate == 0.0
    assert table.alias is None


# ---------------------------------------------------------------------------
# alias sampling
# ---------------------------------------------------------------------------

def test_alias_table_reproduces_weights():
    weights = np.array([0.5, 1.0, 1.25, 1.0])
    table = AliasTable(weights)
    assert table.total == 3.75
    assert np.all((0.0 <= table.prob) & (table.prob <= 1.0))
    draws = table.sample(substream(4242), 1_000_000)
    freq = np.bincount(draws, minlength=4) / 1e6
    p = weights / weights.sum()
    se = np.sqrt(p * (1.0 - p) / 1e6)
    assert np.all(np.abs(freq - p) <= 4.0 * se)


def test_alias_table_rejects_bad_weights():
    with pytest.raises(ValueError):
        AliasTable(np.array([]))
    with pytest.raises(ValueError):
        AliasTable(np.array([1.0, -0.5]))
    with pytest.raises(ValueError):
        AliasTable(np.array([0.0, 0.0]))
    with pytest.raises(ValueError):
        AliasTable(np.array([1.0, np.inf]))


# ---------------------------------------------------------------------------
# trajectories
# ---------------------------------------------------------------------------

def test_simulation_is_reproducible_per_replica():
    spec = build_preset("exclusion", lam="1 + u*v")
    a = simulate(spec, 8, 2.0, seed=7, snapshot_times=[0.5, 2.0], replica=3)
    b = simulate(spec, 8, 2.0, seed=7, snapshot_times=[0.5, 2.0], replica=3)
    c = simulate(spec, 8, 2.0, seed=7, snapshot_times=[0.5, 2.0], replica=4)
    for sa, sb in zip(a, b):
        assert sa.time == sb.time
        assert np.array_equal(sa.values, sb.values)
    assert any(
        not np.array_equal(sa.values, sc.values) for sa, sc in zip(a, c)
    )


def test_copy_dynamics_keep_occupation_numbers_binary():
    spec = build_preset("voter", lam="1 + u")
    for snap in simulate(spec, 16, 3.0, seed=11, snapshot_times=[0.0, 1.5, 3.0]):
        assert set(np.unique(snap.values)) <= {0.0, 1.0}


def test_swap_dynamics_conserve_the_configuration():
    spec = build_preset("exclusion", lam="(1 + u) * (2 - v) / 2")
    snaps = simulate(spec, 32, 4.0, seed=13, snapshot_times=[0.0, 2.0, 4.0])
    first = np.sort(snaps[0].values)
    for snap in snaps[1:]:
        assert np.array_equal(np.sort(snap.values), first)


def test_absorb_without_reset_is_monotone():
    # x(i) <- x(i) + x(j) with no refresh: every urn is nondecreasing
    spec = build_preset("bcpp", lam="1", b="0")
    snaps = simulate(spec, 8, 1.0, seed=17, snapshot_times=[0.0, 0.25, 0.5, 1.0])
    for earlier, later in zip(snaps, snaps[1:]):
        assert np.all(later.values >= earlier.values)


def test_nonnegative_coefficients_keep_state_nonnegative():
    spec = make_model(
        b="0.3", c="0.7", lam="1 + u*v", a1="0.6", a2="0.4",
        a3="0.1", a4="0.8", phi="0.5",
    )
    for snap in simulate(spec, 16, 2.0, seed=19, snapshot_times=[1.0, 2.0]):
        assert np.all(snap.values >= 0.0)


def test_zero_total_rate_freezes_the_trajectory():
    spec = make_model(b="0", lam="0", phi="1")
    snaps = simulate(spec, 5, 10.0, seed=23, snapshot_times=[0.0, 5.0, 10.0])
    assert [s.time for s in snaps] == [0.0, 5.0, 10.0]
    for snap in snaps:
        assert np.array_equal(snap.values, np.ones(5))


def test_snapshot_validation():
    spec = build_preset("voter", lam="1")
    with pytest.raises(ValueError):
        simulate(spec, 4, 1.0, seed=1, snapshot_times=[0.5, 0.2])
    with pytest.raises(ValueError):
        simulate(spec, 4, 1.0, seed=1, snapshot_times=[0.5, 1.5])
    with pytest.raises(ValueError):
        simulate(spec, 4, -1.0, seed=1, snapshot_times=[])
    table = build_rate_table(spec, 8)
    with pytest.raises(ValueError):
        simulate(spec, 4, 1.0, seed=1, snapshot_times=[0.5], table=table)


def test_initial_state_follows_occupation_profile():
    ones = initial_state(make_model(lam="1", phi="1"), 50, substream(1))
    assert np.array_equal(ones.values, np.ones(50))
    zeros = initial_state(make_model(lam="1", phi="0"), 50, substream(1))
    assert np.array_equal(zeros.values, np.zeros(50))
    half = initial_state(make_model(lam="1", phi="0.5"), 10_000, substream(2))
    assert abs(half.values.mean() - 0.5) <= 4.0 * 0.5 / 100.0


# ---------------------------------------------------------------------------
# observables
# ---------------------------------------------------------------------------

def test_observe_two_urn_hand_values():
    spec = build_preset("voter", lam="1", phi="1")
    snaps = simulate(spec, 2, 0.0, seed=3, snapshot_times=[0.0])
    state = snaps[0]
    state.values = np.array([1.0, 0.0])
    obs = observe(
        state,
        f=lambda u: u,
        pair_fn=lambda u, v: u * v,
        means=np.array([0.5, 0.5]),
    )
    assert obs.density == 0.25
    assert obs.second_moment == 0.25
    assert obs.pair_product == 0.0625
    assert obs.fluctuation == -0.25 / math.sqrt(2.0)


def test_observe_optional_fields_default_to_none():
    spec = build_preset("voter", lam="1", phi="1")
    state = simulate(spec, 4, 0.0, seed=5, snapshot_times=[0.0])[0]
    obs = observe(state, f=lambda u: np.ones_like(u))
    assert obs.density == 1.0
    assert obs.pair_product is None
    assert obs.fluctuation is None
