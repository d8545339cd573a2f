"""Acceptance gate: the twelve end-to-end verification criteria.

Each test runs one numbered criterion of the verification suite, prints
its pass/fail summary line and asserts both the verdict and the runtime
budget.  The same code path backs ``urnflow verify``.
"""


def _check(result, budget_s: float):
    print(result.summary_line())
    for chk in result.checks:
        assert chk.passed, (
            f"criterion {result.index} failed: {chk.name} "
            f"(measured {chk.measured!r}, bound {chk.bound!r})"
        )
    assert result.runtime_s < budget_s, (
        f"criterion {result.index} exceeded its runtime budget: "
        f"{result.runtime_s:.1f}s >= {budget_s}s"
    )


def test_criterion_01_stationary_density(suite):
    _check(suite.criterion_1(), 5.0)


def test_criterion_02_closed_form_density(suite):
    _check(suite.criterion_2(), 5.0)


def test_criterion_03_simulator_vs_moment_engine(suite):
    _check(suite.criterion_3(), 120.0)


def test_criterion_04_covariance_gap_decay(suite):
    _check(suite.criterion_4(), 120.0)


def test_criterion_05_lln_mse_ladders(suite):
    _check(suite.criterion_5(), 600.0)


def test_criterion_06_fluctuation_variance(suite):
    _check(suite.criterion_6(), 900.0)


def test_criterion_07_noise_form_nonnegative(suite):
    _check(suite.criterion_7(), 60.0)


def test_criterion_08_operator_identities(suite):
    _check(suite.criterion_8(), 10.0)


def test_criterion_09_generator_golden_entries(suite):
    _check(suite.criterion_9(), 1.0)


def test_criterion_10_mass_conservation(suite):
    _check(suite.criterion_10(), 30.0)


def test_criterion_11_convergence_orders(suite):
    _check(suite.criterion_11(), 10.0)


def test_criterion_12_limit_sampler(suite):
    _check(suite.criterion_12(), 120.0)
