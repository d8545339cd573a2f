"""urnflow: simulation and numerical verification of n-urn linear systems.

A population of n urns carries nonnegative values.  Single urns refresh
(multiply by a profile c at rate b); ordered pairs interact at kernel rate
lam/n by applying a linear map with coefficients a1..a4 to the pair.  The
package simulates these chains exactly, integrates the macroscopic density
equations and exact finite-n moment tables they concentrate on, computes
the asymptotic fluctuation variance, and verifies each layer against the
others.
"""

from ._version import __version__
from .config import ConfigError, ExperimentConfig
from .ensemble import (
    EnsembleStats,
    LlnReport,
    TestFunctionSet,
    VarianceCheck,
    empirical_noise_form,
    fluctuation_variance_check,
    lln_report,
    run_ensemble,
    sample_limit_fluctuation,
)
from .expressions import (
    ArityError,
    CoefficientExpr,
    ExpressionError,
    ParseError,
    UnknownIdentifierError,
    parse_coefficient,
)
from .grid import GridBiFunction, GridFunction, NumericalError, midpoint_nodes
from .model import (
    PRESETS,
    ModelError,
    ModelSpec,
    ValidationReport,
    build_preset,
    load_model,
    make_model,
    model_from_json,
    model_to_json,
    save_model,
    validate_model,
)
from .moments import (
    MAX_URNS,
    DecayScan,
    MomentTable,
    SparseMomentMatrix,
    build_mean_product_generator,
    build_second_moment_generator,
    covariance_gap_scan,
    evolve_means,
    evolve_moments,
    initial_table,
    mean_rate,
)
from .operators import HydroOperators
from .rng import substream
from .simulate import (
    AliasTable,
    Observables,
    RateTable,
    UrnState,
    build_rate_table,
    initial_state,
    observe,
    simulate,
    urn_positions,
)
from .solve import (
    DensityTrajectory,
    evolve_test_function,
    fluctuation_variance,
    solve_density,
    solve_hydro,
    solve_second_moment,
    step_count,
)
from .verify import (
    VerificationReport,
    VerificationSuite,
    run_verification,
)

__all__ = [
    "__version__",
    # model definition
    "ModelSpec",
    "ModelError",
    "ValidationReport",
    "PRESETS",
    "make_model",
    "build_preset",
    "validate_model",
    "model_to_json",
    "model_from_json",
    "load_model",
    "save_model",
    # coefficient expressions
    "CoefficientExpr",
    "parse_coefficient",
    "ExpressionError",
    "ParseError",
    "UnknownIdentifierError",
    "ArityError",
    # grid calculus
    "midpoint_nodes",
    "GridFunction",
    "GridBiFunction",
    "NumericalError",
    # hydrodynamic operators and solvers
    "HydroOperators",
    "DensityTrajectory",
    "solve_density",
    "solve_second_moment",
    "solve_hydro",
    "evolve_test_function",
    "fluctuation_variance",
    "step_count",
    # event-driven simulation
    "substream",
    "urn_positions",
    "AliasTable",
    "RateTable",
    "build_rate_table",
    "UrnState",
    "initial_state",
    "simulate",
    "Observables",
    "observe",
    # exact moment tables
    "MAX_URNS",
    "MomentTable",
    "SparseMomentMatrix",
    "build_mean_product_generator",
    "build_second_moment_generator",
    "initial_table",
    "mean_rate",
    "evolve_moments",
    "evolve_means",
    "DecayScan",
    "covariance_gap_scan",
    # ensembles and fluctuation laws
    "TestFunctionSet",
    "EnsembleStats",
    "run_ensemble",
    "LlnReport",
    "lln_report",
    "VarianceCheck",
    "fluctuation_variance_check",
    "empirical_noise_form",
    "sample_limit_fluctuation",
    # configuration and verification
    "ConfigError",
    "ExperimentConfig",
    "VerificationReport",
    "VerificationSuite",
    "run_verification",
]
