"""Model definition for N-urn linear systems.

A model is a set of coefficient profiles on [0,1] (refresh rate ``b``,
refresh multiplier ``c``, initial occupation probability ``phi``) together
with interaction-kernel coefficients on [0,1]^2 (pair rate ``lam`` and the
four linear-update entries ``a1..a4``).

Dynamics on ``n`` urns with state x in [0,inf)^n:

* refresh at urn i with rate b(i/n):      x(i) <- c(i/n) x(i)
* ordered pair (i,j), i != j, with rate lam(i/n, j/n)/n:
      x(i) <- a1 x(i) + a2 x(j)
      x(j) <- a3 x(i) + a4 x(j)      (both read pre-update values)

Initial data is independent Bernoulli(phi(i/n)) per urn.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .expressions import CoefficientExpr, parse_coefficient

__all__ = [
    "ModelError",
    "ModelSpec",
    "ValidationReport",
    "build_preset",
    "make_model",
    "validate_model",
    "model_to_json",
    "model_from_json",
    "load_model",
    "save_model",
    "PRESETS",
]

PRESETS = ("voter", "exclusion", "bcpp")

# Pinned coefficient sources per preset; ``None`` means "taken from input".
_PRESET_PINS = {
    # pure copy: x(i) <- x(j), refresh disabled
    "voter": {"b": "0", "c": "1", "a1": "0", "a2": "1", "a3": "0", "a4": "1"},
    # swap: x(i) <-> x(j), refresh disabled
    "exclusion": {"b": "0", "c": "1", "a1": "0", "a2": "1", "a3": "1", "a4": "0"},
    # absorb-and-reset: x(i) <- x(i) + x(j), refresh kills the urn
    "bcpp": {"b": None, "c": "0", "a1": "1", "a2": "1", "a3": "0", "a4": "1"},
}


class ModelError(ValueError):
    """Invalid model definition (bad preset name, malformed file, ...)."""


@dataclass(frozen=True)
class ModelSpec:
    """Complete coefficient set; unary fields have arity 1, binary arity 2."""

    b: CoefficientExpr
    c: CoefficientExpr
    lam: CoefficientExpr
    a1: CoefficientExpr
    a2: CoefficientExpr
    a3: CoefficientExpr
    a4: CoefficientExpr
    phi: CoefficientExpr
    preset: str | None = None

    def unary_fields(self) -> dict[str, CoefficientExpr]:
        return {"b": self.b, "c": self.c, "phi": self.phi}

    def binary_fields(self) -> dict[str, CoefficientExpr]:
        return {
            "lambda": self.lam,
            "a1": self.a1,
            "a2": self.a2,
            "a3": self.a3,
            "a4": self.a4,
        }


def _unary(source: str) -> CoefficientExpr:
    return parse_coefficient(source, 1)


def _binary(source: str) -> CoefficientExpr:
    return parse_coefficient(source, 2)


def make_model(
    b: str = "0",
    c: str = "1",
    lam: str = "1",
    a1: str = "1",
    a2: str = "0",
    a3: str = "0",
    a4: str = "1",
    phi: str = "0.5",
    preset: str | None = None,
) -> ModelSpec:
    """Build a ModelSpec from coefficient source strings."""
    return ModelSpec(
        b=_unary(b),
        c=_unary(c),
        lam=_binary(lam),
        a1=_binary(a1),
        a2=_binary(a2),
        a3=_binary(a3),
        a4=_binary(a4),
        phi=_unary(phi),
        preset=preset,
    )


def build_preset(
    name: str, lam: str = "1", b: str = "0", phi: str = "0.5"
) -> ModelSpec:
    """Instantiate a named preset with the given rate kernel and initial law.

    ``b`` only takes effect for ``bcpp``; voter and exclusion pin the refresh
    rate to zero along with their update coefficients.
    """
    if name not in PRESETS:
        raise ModelError(f"unknown preset {name!r}; choose one of {PRESETS}")
    pins = _PRESET_PINS[name]
    return make_model(
        b=pins["b"] if pins["b"] is not None else b,
        c=pins["c"],
        lam=lam,
        a1=pins["a1"],
        a2=pins["a2"],
        a3=pins["a3"],
        a4=pins["a4"],
        phi=phi,
        preset=name,
    )


# ---------------------------------------------------------------------------
# Validation
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ValidationReport:
    """Minima of every coefficient over the validation grid, plus verdict."""

    grid_points: int
    minima: dict[str, float]
    phi_max: float
    failures: tuple[str, ...]

    @property
    def ok(self) -> bool:
        return not self.failures


def validate_model(spec: ModelSpec, grid_points: int = 512) -> ValidationReport:
    """Check nonnegativity of all coefficients and phi in [0,1].

    Coefficients are evaluated on a uniform grid of ``grid_points`` points
    per axis (the Cartesian product for binary coefficients).
    """
    u = np.linspace(0.0, 1.0, grid_points)
    minima: dict[str, float] = {}
    failures: list[str] = []
    for name, expr in spec.unary_fields().items():
        values = expr(u)
        minima[name] = float(np.min(values))
        if minima[name] < 0.0:
            failures.append(f"{name} takes negative value {minima[name]:.6g}")
    uu, vv = u[:, None], u[None, :]
    for name, expr in spec.binary_fields().items():
        values = expr(uu, vv)
        minima[name] = float(np.min(values))
        if minima[name] < 0.0:
            failures.append(f"{name} takes negative value {minima[name]:.6g}")
    phi_max = float(np.max(spec.phi(u)))
    if phi_max > 1.0:
        failures.append(f"phi exceeds 1 (max {phi_max:.6g})")
    return ValidationReport(
        grid_points=grid_points,
        minima=minima,
        phi_max=phi_max,
        failures=tuple(failures),
    )


# ---------------------------------------------------------------------------
# JSON serialization
# ---------------------------------------------------------------------------

_JSON_FIELDS = ("b", "c", "lambda", "a1", "a2", "a3", "a4", "phi")


def model_to_json(spec: ModelSpec) -> dict:
    """Plain-dict form: coefficient sources keyed by field name."""
    return {
        "preset": spec.preset,
        "b": spec.b.source,
        "c": spec.c.source,
        "lambda": spec.lam.source,
        "a1": spec.a1.source,
        "a2": spec.a2.source,
        "a3": spec.a3.source,
        "a4": spec.a4.source,
        "phi": spec.phi.source,
    }


def model_from_json(data: dict) -> ModelSpec:
    """Inverse of :func:`model_to_json`.

    A non-null ``preset`` overrides whatever pinned fields the preset fixes;
    the remaining fields (always ``lambda`` and ``phi``, plus ``b`` for
    ``bcpp``) are read from the document.  Missing non-pinned fields fall
    back to neutral defaults.
    """
    if not isinstance(data, dict):
        raise ModelError("model document must be a JSON object")
    unknown = set(data) - set(_JSON_FIELDS) - {"preset"}
    if unknown:
        raise ModelError(f"unknown model fields: {sorted(unknown)}")
    preset = data.get("preset")
    try:
        if preset is not None:
            return build_preset(
                preset,
                lam=str(data.get("lambda", "1")),
                b=str(data.get("b", "0")),
                phi=str(data.get("phi", "0.5")),
            )
        return make_model(
            b=str(data.get("b", "0")),
            c=str(data.get("c", "1")),
            lam=str(data.get("lambda", "1")),
            a1=str(data.get("a1", "1")),
            a2=str(data.get("a2", "0")),
            a3=str(data.get("a3", "0")),
            a4=str(data.get("a4", "1")),
            phi=str(data.get("phi", "0.5")),
        )
    except ModelError:
        raise
    except ValueError as exc:
        raise ModelError(f"bad coefficient in model document: {exc}") from exc


def load_model(path) -> ModelSpec:
    with open(path, "r", encoding="utf-8") as fh:
        try:
            data = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ModelError(f"malformed model file {path}: {exc}") from exc
    return model_from_json(data)


def save_model(spec: ModelSpec, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(model_to_json(spec), fh, indent=2)
        fh.write("\n")
