import math

import numpy as np
import pytest

from urnflow.grid import NumericalError
from urnflow.model import build_preset, make_model
from urnflow.moments import (
    MAX_URNS,
    MomentEngine,
    build_mean_product_generator,
    build_second_moment_generator,
    covariance_gap_scan,
    evolve_means,
    evolve_moments,
    initial_table,
    mean_rate,
)
from urnflow.simulate import urn_positions

GENERIC = make_model(
    b="u", c="0.5", lam="(1 + u) * (2 - v) / 2", a1="0.3", a2="0.7",
    a3="0.2 + u/10", a4="0.9", phi="0.5",
)

MODELS = {
    "voter": build_preset("voter", lam="(1 + u) * (2 - v) / 2"),
    "exclusion": build_preset("exclusion", lam="1 + u*v"),
    "bcpp": build_preset("bcpp", lam="1 + u", b="0.5"),
    "generic": GENERIC,
}


# ---------------------------------------------------------------------------
# independent oracle: assemble the generators from the per-event linear maps
# ---------------------------------------------------------------------------

def _event_maps(spec, n):
    """(rate, map) pairs: refresh urn i scales row i by c; the ordered pair
    (i, j) rewrites rows i and j from the update coefficients."""
    pos = urn_positions(n)
    b = np.broadcast_to(np.asarray(spec.b(pos), float), (n,))
    c = np.broadcast_to(np.asarray(spec.c(pos), float), (n,))
    uu, vv = pos[:, None], pos[None, :]

    def kernel(expr):
        vals = np.asarray(expr(uu, vv), dtype=float)
        return np.broadcast_to(vals, (n, n))

    lam = kernel(spec.lam)
    a1, a2, a3, a4 = (kernel(e) for e in (spec.a1, spec.a2, spec.a3, spec.a4))

    events = []
    for i in range(n):
        mat = np.eye(n)
        mat[i, i] = c[i]
        events.append((float(b[i]), mat))
    for i in range(n):
        for j in range(n):
            if i == j:
                continue
            mat = np.eye(n)
            mat[i, i] = a1[i, j]
            mat[i, j] = a2[i, j]
            mat[j, i] = a3[i, j]
            mat[j, j] = a4[i, j]
            events.append((float(lam[i, j]) / n, mat))
    return events


def _oracle_mean_matrix(spec, n):
    gen = np.zeros((n, n))
    for rate, mat in _event_maps(spec, n):
        gen += rate * (mat - np.eye(n))
    return gen


def _oracle_second_moment_generator(spec, n):
    # x -> A x sends the table S = E[x x^T] to A S A^T, i.e. row-major
    # vec(S) to kron(A, A) vec(S)
    eye = np.eye(n * n)
    gen = np.zeros((n * n, n * n))
    for rate, mat in _event_maps(spec, n):
        gen += rate * (np.kron(mat, mat) - eye)
    return gen


def _random_symmetric(rng, n):
    raw = rng.standard_normal((n, n))
    return (raw + raw.T) / 2.0


@pytest.mark.parametrize("name", sorted(MODELS))
@pytest.mark.parametrize("n", [2, 3, 5, 7])
def test_mean_rate_matches_event_map_oracle(name, n):
    spec = MODELS[name]
    eng = MomentEngine(spec, n)
    oracle = _oracle_mean_matrix(spec, n)
    rng = np.random.default_rng(101)
    for _ in range(5):
        v = rng.standard_normal(n)
        gap = np.abs(eng.mean_rate(v) - oracle @ v).max()
        assert gap <= 1e-12 * max(1.0, np.abs(v).max())
    # decomposition used by the generators agrees with the oracle matrix
    built = np.diag(eng.decay) + eng.transfer
    assert np.abs(built - oracle).max() <= 1e-13


@pytest.mark.parametrize("name", sorted(MODELS))
@pytest.mark.parametrize("n", [2, 3, 5, 7])
def test_second_moment_generator_matches_kron_oracle(name, n):
    spec = MODELS[name]
    gen = build_second_moment_generator(spec, n)
    oracle = _oracle_second_moment_generator(spec, n)
    rng = np.random.default_rng(211)
    for _ in range(5):
        table = _random_symmetric(rng, n)
        got = gen.apply(table)
        want = (oracle @ table.ravel()).reshape(n, n)
        scale = max(1.0, float(np.abs(table).max()))
        assert np.abs(got - want).max() <= 1e-12 * scale


@pytest.mark.parametrize("name", sorted(MODELS))
@pytest.mark.parametrize("n", [2, 3, 5, 7])
def test_mean_product_generator_matches_sylvester_oracle(name, n):
    # d(m m^T)/dt = M (m m^T) + (m m^T) M^T extends to symmetric tables
    spec = MODELS[name]
    gen = build_mean_product_generator(spec, n)
    oracle = _oracle_mean_matrix(spec, n)
    rng = np.random.default_rng(307)
    for _ in range(5):
        table = _random_symmetric(rng, n)
        got = gen.apply(table)
        want = oracle @ table + table @ oracle.T
        scale = max(1.0, float(np.abs(table).max()))
        assert np.abs(got - want).max() <= 1e-12 * scale


def test_module_level_mean_rate_wrapper():
    v = np.array([0.2, 0.4, 0.6])
    spec = MODELS["generic"]
    assert np.array_equal(
        mean_rate(spec, 3, v), MomentEngine(spec, 3).mean_rate(v)
    )


# ---------------------------------------------------------------------------
# evolution against closed forms
# ---------------------------------------------------------------------------

def test_two_urn_copy_joint_moment_frozen_values():
    # matrix-exponential references computed once from the 4x4 joint system
    spec = build_preset("voter", lam="1 + u", phi="0.5")
    final = evolve_moments(spec, 2, 1.0, snapshot_times=[1.0])[-1]
    assert abs(final.second_moment[0, 1] - 0.4565565141373887) <= 1e-12

    spec = build_preset("voter", lam="1", phi="0.5")
    final = evolve_moments(spec, 2, 1.0, snapshot_times=[1.0])[-1]
    # uniform-rate case solvable by hand: 1/2 - exp(-t)/4 at t = 1
    ref = 0.5 - 0.25 / math.e
    assert abs(ref - 0.4080301397071394) <= 1e-16
    assert abs(final.second_moment[0, 1] - ref) <= 1e-12


def test_refresh_only_moments_are_independent_exponentials():
    # no pair events: urn i scales by c at rate 1, so
    # E x = phi exp((c-1) t), E x^2 = phi exp((c^2-1) t), cross moments split
    spec = make_model(b="1", c="0.5", lam="0", phi="0.8")
    final = evolve_moments(spec, 3, 1.0, snapshot_times=[1.0])[-1]
    assert np.abs(final.mean - 0.8 * math.exp(-0.5)).max() <= 1e-10
    second = final.second_moment
    assert np.abs(np.diag(second) - 0.8 * math.exp(-0.75)).max() <= 1e-10
    off = second[~np.eye(3, dtype=bool)]
    assert np.abs(off - 0.64 * math.exp(-1.0)).max() <= 1e-10
    assert np.abs(final.mean_product - np.outer(final.mean, final.mean)).max() <= 1e-12


def test_swap_dynamics_preserve_symmetric_functionals():
    spec = build_preset("exclusion", lam="1 + u*v", phi="0.5")
    tables = evolve_moments(spec, 2, 1.0, snapshot_times=[0.0, 0.5, 1.0])
    t0 = tables[0]
    for table in tables[1:]:
        assert abs(table.second_moment[0, 1] - t0.second_moment[0, 1]) <= 1e-12
        assert abs(
            np.trace(table.second_moment) - np.trace(t0.second_moment)
        ) <= 1e-12
        assert abs(table.mean.sum() - t0.mean.sum()) <= 1e-12


def test_swap_dynamics_conserve_total_mean_rate():
    spec = build_preset("exclusion", lam="(1 + u) * (2 - v) / 2")
    eng = MomentEngine(spec, 9)
    rng = np.random.default_rng(401)
    for _ in range(5):
        v = rng.standard_normal(9)
        assert abs(eng.mean_rate(v).sum()) <= 1e-12 * max(1.0, np.abs(v).max())


def test_initial_table_matches_bernoulli_moments():
    spec = make_model(lam="1", phi="0.25 + 0.5*u")
    table = initial_table(spec, 4)
    phi = np.asarray(spec.phi(urn_positions(4)), dtype=float)
    assert np.array_equal(table.mean, phi)
    assert np.array_equal(np.diag(table.second_moment), phi)  # x^2 = x on {0,1}
    assert np.array_equal(table.mean_product, np.outer(phi, phi))


def test_evolve_means_matches_full_evolution():
    spec = MODELS["generic"]
    means = evolve_means(spec, 6, [0.0, 0.5, 1.0])
    tables = evolve_moments(spec, 6, 1.0, snapshot_times=[0.0, 0.5, 1.0])
    for table in tables:
        assert np.array_equal(means[table.time], table.mean)


# ---------------------------------------------------------------------------
# sparsity structure
# ---------------------------------------------------------------------------

@pytest.mark.parametrize("builder", [
    build_mean_product_generator, build_second_moment_generator,
])
def test_generator_rows_are_sparse_and_local(builder):
    n = 8
    gen = builder(GENERIC, n)
    assert gen.row_nnz().max() <= 2 * n - 1
    coo = gen.matrix.tocoo()
    for row, col, val in zip(coo.row, coo.col, coo.data):
        if val == 0.0:
            continue
        i, j = divmod(int(row), n)
        l, k = divmod(int(col), n)
        # every coupling involves one of the row's urns or a diagonal pair
        assert l == k or {l, k} & {i, j}


# ---------------------------------------------------------------------------
# guards
# ---------------------------------------------------------------------------

def test_engine_size_limits():
    spec = build_preset("voter", lam="1")
    with pytest.raises(ValueError):
        MomentEngine(spec, 1)
    with pytest.raises(ValueError):
        MomentEngine(spec, MAX_URNS + 1)


def test_evolution_guards():
    spec = build_preset("voter", lam="1")
    with pytest.raises(ValueError):
        evolve_moments(spec, 4, 1.0, snapshot_times=[0.3333])
    with pytest.raises(ValueError):
        evolve_moments(spec, 4, 1.0, snapshot_times=[2.0])
    with pytest.raises(ValueError):
        evolve_means(spec, 4, [-1.0])
    blowup = make_model(b="100", c="3", lam="0", phi="0.5")
    with pytest.raises(NumericalError):
        evolve_moments(blowup, 3, 50.0, dt=0.5)


def test_covariance_gap_scan_decays():
    scan = covariance_gap_scan(
        build_preset("voter", lam="1", phi="0.5"), [4, 8], 0.5
    )
    assert scan.ns == (4, 8)
    assert scan.gaps[0] > scan.gaps[1] > 0.0
    assert scan.slope < -0.5
    with pytest.raises(ValueError):
        covariance_gap_scan(build_preset("voter", lam="1"), [4], 0.5)
