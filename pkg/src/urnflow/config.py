"""Experiment configuration: JSON file, dotted overrides, CLI flags.

Precedence, lowest to highest: built-in defaults, the ``--config`` JSON
file, ``--set KEY=VALUE`` overrides (dotted paths into the document), then
the dedicated command-line flags.  The fully resolved document is echoed
into every output directory as ``effective_config.json`` so a run can be
reproduced from its artifacts alone.
"""

from __future__ import annotations

import copy
import json
import os
from dataclasses import dataclass
from pathlib import Path

from .expressions import ExpressionError, parse_coefficient
from .model import ModelError, ModelSpec, model_from_json, validate_model
from .solve import step_count

__all__ = ["ConfigError", "ExperimentConfig", "DEFAULT_CONFIG"]

THREADS_ENV = "URNFLOW_THREADS"

DEFAULT_CONFIG: dict = {
    "model": {"preset": "voter", "lambda": "1", "phi": "0.5"},
    "n_list": [32],
    "horizon": 1.0,
    "snapshot_times": [0.0, 0.5, 1.0],
    "grid_m": 256,
    "dt": 1e-3,
    "replicas": 200,
    "seed": 20250815,
    "threads": None,
    "test_functions": ["1", "u", "u*u"],
    "test_bifunctions": ["u*v"],
    "out_dir": "out",
    "plots": True,
}


class ConfigError(ValueError):
    """Invalid configuration (bad file, bad override, bad field value)."""


def _parse_set(item: str) -> tuple[list[str], object]:
    """Parse one KEY=VALUE override; values are JSON with string fallback."""
    key, sep, raw = item.partition("=")
    key = key.strip()
    if not sep or not key:
        raise ConfigError(f"--set expects KEY=VALUE, got {item!r}")
    try:
        value = json.loads(raw)
    except json.JSONDecodeError:
        value = raw
    return key.split("."), value


def _apply_set(doc: dict, path: list[str], value: object) -> None:
    node = doc
    for part in path[:-1]:
        nxt = node.get(part)
        if not isinstance(nxt, dict):
            nxt = {}
            node[part] = nxt
        node = nxt
    node[path[-1]] = value


def _require(cond: bool, message: str) -> None:
    if not cond:
        raise ConfigError(message)


@dataclass(frozen=True)
class ExperimentConfig:
    """A validated experiment description."""

    document: dict
    model: ModelSpec
    n_list: tuple[int, ...]
    horizon: float
    snapshot_times: tuple[float, ...]
    grid_m: int
    dt: float
    replicas: int
    seed: int
    threads: int
    test_functions: tuple[str, ...]
    test_bifunctions: tuple[str, ...]
    out_dir: Path
    plots: bool

    @classmethod
    def load(
        cls,
        config_path: str | None = None,
        sets: list[str] | None = None,
        overrides: dict | None = None,
    ) -> "ExperimentConfig":
        """Resolve defaults, file, --set items and flag overrides, in order."""
        doc = copy.deepcopy(DEFAULT_CONFIG)
        if config_path is not None:
            try:
                loaded = json.loads(Path(config_path).read_text())
            except FileNotFoundError:
                raise ConfigError(f"config file not found: {config_path}")
            except json.JSONDecodeError as exc:
                raise ConfigError(f"config file is not valid JSON: {exc}")
            if not isinstance(loaded, dict):
                raise ConfigError("config file must hold a JSON object")
            unknown = set(loaded) - set(DEFAULT_CONFIG)
            if unknown:
                raise ConfigError(
                    f"unknown config fields: {sorted(unknown)}"
                )
            for key, value in loaded.items():
                doc[key] = value
        for item in sets or []:
            path, value = _parse_set(item)
            if path[0] not in DEFAULT_CONFIG:
                raise ConfigError(f"unknown config field {path[0]!r} in --set")
            _apply_set(doc, path, value)
        for key, value in (overrides or {}).items():
            if value is not None:
                doc[key] = value
        return cls.from_document(doc)

    @classmethod
    def from_document(cls, doc: dict) -> "ExperimentConfig":
        try:
            model = model_from_json(doc["model"])
        except (ModelError, ExpressionError) as exc:
            raise ConfigError(f"bad model: {exc}")
        report = validate_model(model)
        if not report.ok:
            raise ConfigError(
                "model validation failed: " + "; ".join(report.failures)
            )

        n_list = doc["n_list"]
        if isinstance(n_list, int):
            n_list = [n_list]
        _require(
            isinstance(n_list, list) and len(n_list) > 0,
            "n_list must be a nonempty list of integers",
        )
        ns = []
        for n in n_list:
            _require(
                isinstance(n, int) and not isinstance(n, bool) and n >= 2,
                f"system sizes must be integers >= 2, got {n!r}",
            )
            ns.append(n)

        horizon = doc["horizon"]
        _require(
            isinstance(horizon, (int, float)) and horizon >= 0,
            f"horizon must be a nonnegative number, got {horizon!r}",
        )
        horizon = float(horizon)
        dt = doc["dt"]
        _require(
            isinstance(dt, (int, float)) and dt > 0,
            f"dt must be a positive number, got {dt!r}",
        )
        dt = float(dt)
        try:
            step_count(horizon, dt)
        except ValueError as exc:
            raise ConfigError(str(exc))

        snaps = doc["snapshot_times"]
        _require(
            isinstance(snaps, list) and len(snaps) > 0,
            "snapshot_times must be a nonempty list",
        )
        times = []
        for t in snaps:
            _require(
                isinstance(t, (int, float)),
                f"snapshot times must be numbers, got {t!r}",
            )
            t = float(t)
            _require(
                0.0 <= t <= horizon,
                f"snapshot time {t} outside [0, {horizon}]",
            )
            k = int(round(t / dt))
            _require(
                abs(k * dt - t) <= 1e-9 * max(1.0, t),
                f"snapshot time {t} is not a multiple of dt={dt}",
            )
            times.append(t)
        _require(
            all(a <= b for a, b in zip(times, times[1:])),
            "snapshot_times must be sorted",
        )

        grid_m = doc["grid_m"]
        _require(
            isinstance(grid_m, int) and not isinstance(grid_m, bool) and grid_m >= 2,
            f"grid_m must be an integer >= 2, got {grid_m!r}",
        )
        replicas = doc["replicas"]
        _require(
            isinstance(replicas, int)
            and not isinstance(replicas, bool)
            and replicas >= 1,
            f"replicas must be a positive integer, got {replicas!r}",
        )
        seed = doc["seed"]
        _require(
            isinstance(seed, int)
            and not isinstance(seed, bool)
            and 0 <= seed < 2**64,
            f"seed must be an integer in [0, 2^64), got {seed!r}",
        )

        threads = doc.get("threads")
        if threads is None:
            env = os.environ.get(THREADS_ENV)
            if env is not None:
                try:
                    threads = int(env)
                except ValueError:
                    raise ConfigError(
                        f"{THREADS_ENV} must be an integer, got {env!r}"
                    )
            else:
                threads = 1
        _require(
            isinstance(threads, int) and not isinstance(threads, bool) and threads >= 1,
            f"threads must be a positive integer, got {threads!r}",
        )

        for arity, key in ((1, "test_functions"), (2, "test_bifunctions")):
            sources = doc[key]
            _require(
                isinstance(sources, list),
                f"{key} must be a list of expression strings",
            )
            for src in sources:
                try:
                    parse_coefficient(str(src), arity)
                except ExpressionError as exc:
                    raise ConfigError(f"bad entry {src!r} in {key}: {exc}")
        _require(
            len(doc["test_functions"]) > 0,
            "test_functions must contain at least one expression",
        )

        plots = doc["plots"]
        _require(
            isinstance(plots, bool), f"plots must be a boolean, got {plots!r}"
        )

        resolved = copy.deepcopy(doc)
        resolved["threads"] = threads
        return cls(
            document=resolved,
            model=model,
            n_list=tuple(ns),
            horizon=horizon,
            snapshot_times=tuple(times),
            grid_m=grid_m,
            dt=dt,
            replicas=replicas,
            seed=seed,
            threads=threads,
            test_functions=tuple(str(s) for s in doc["test_functions"]),
            test_bifunctions=tuple(str(s) for s in doc["test_bifunctions"]),
            out_dir=Path(doc["out_dir"]),
            plots=plots,
        )

    def echo(self, directory: Path) -> Path:
        """Write the resolved document into an output directory."""
        directory.mkdir(parents=True, exist_ok=True)
        path = directory / "effective_config.json"
        path.write_text(json.dumps(self.document, indent=2, sort_keys=True) + "\n")
        return path
