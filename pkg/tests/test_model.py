import json

import numpy as np
import pytest

from urnflow.model import (
    PRESETS,
    ModelError,
    build_preset,
    load_model,
    make_model,
    model_from_json,
    model_to_json,
    save_model,
    validate_model,
)


def test_preset_names():
    assert PRESETS == ("voter", "exclusion", "bcpp")
    with pytest.raises(ModelError):
        build_preset("zero-range")


def test_preset_pins_exact_values():
    rng = np.random.default_rng(7)
    u = rng.random(100)
    v = rng.random(100)
    voter = build_preset("voter")
    excl = build_preset("exclusion")
    bcpp = build_preset("bcpp", b="0.5")
    for spec, coeffs in (
        (voter, {"b": 0.0, "c": 1.0, "a1": 0.0, "a2": 1.0, "a3": 0.0, "a4": 1.0}),
        (excl, {"b": 0.0, "c": 1.0, "a1": 0.0, "a2": 1.0, "a3": 1.0, "a4": 0.0}),
        (bcpp, {"b": 0.5, "c": 0.0, "a1": 1.0, "a2": 1.0, "a3": 0.0, "a4": 1.0}),
    ):
        assert np.all(spec.b(u) == coeffs["b"])
        assert np.all(spec.c(u) == coeffs["c"])
        for name in ("a1", "a2", "a3", "a4"):
            assert np.all(getattr(spec, name)(u, v) == coeffs[name])


def test_preset_takes_rate_and_initial_law():
    spec = build_preset("voter", lam="u+v", phi="0.25")
    assert spec.lam(0.25, 0.5) == 0.75
    assert spec.phi(0.9) == 0.25
    assert spec.preset == "voter"


def test_refresh_rate_only_affects_bcpp():
    # voter and exclusion pin b to zero no matter what was passed
    assert np.all(build_preset("voter", b="7").b(np.linspace(0, 1, 9)) == 0.0)
    assert build_preset("bcpp", b="7").b(0.5) == 7.0


def test_validate_model_accepts_presets():
    for name in PRESETS:
        assert validate_model(build_preset(name, b="1")).ok


def test_validate_model_rejects_negative_coefficients():
    report = validate_model(make_model(b="-1"))
    assert not report.ok
    assert any("b" in f for f in report.failures)

    report = validate_model(make_model(lam="u - 2"))
    assert not report.ok
    assert report.minima["lambda"] == pytest.approx(-2.0)


def test_validate_model_rejects_phi_above_one():
    report = validate_model(make_model(phi="1.5"))
    assert not report.ok
    assert any("phi" in f for f in report.failures)
    assert report.phi_max == pytest.approx(1.5)


def test_json_round_trip_generic_model():
    spec = make_model(
        b="u", c="0.5", lam="(1+u)*(2-v)/2", a1="0.3", a2="0.7",
        a3="0.2", a4="0.9", phi="0.5*u",
    )
    doc = model_to_json(spec)
    restored = model_from_json(doc)
    assert model_to_json(restored) == doc
    u, v = 0.3, 0.8
    assert restored.lam(u, v) == spec.lam(u, v)


def test_json_round_trip_preset():
    spec = build_preset("bcpp", lam="1+u*v", b="0.25", phi="0.75")
    restored = model_from_json(model_to_json(spec))
    assert restored.preset == "bcpp"
    assert restored.c(0.4) == 0.0
    assert restored.b(0.4) == 0.25
    assert restored.lam(0.5, 0.5) == 1.25


def test_model_from_json_rejects_unknown_fields():
    with pytest.raises(ModelError):
        model_from_json({"preset": "voter", "gamma": "1"})


def test_model_from_json_rejects_bad_sources():
    with pytest.raises(ModelError):
        model_from_json({"lambda": "1 +"})
    with pytest.raises(ModelError):
        model_from_json({"b": "v"})  # unary field cannot use v


def test_model_from_json_rejects_non_object():
    with pytest.raises(ModelError):
        model_from_json(["voter"])


def test_save_and_load(tmp_path):
    path = tmp_path / "model.json"
    spec = build_preset("exclusion", lam="2")
    save_model(spec, path)
    loaded = load_model(path)
    assert loaded.preset == "exclusion"
    assert loaded.lam(0.1, 0.9) == 2.0


def test_load_model_malformed_file(tmp_path):
    path = tmp_path / "broken.json"
    path.write_text("{not json")
    with pytest.raises(ModelError):
        load_model(path)


def test_default_model_is_inert():
    # a1=1, a2=0, a3=0, a4=1, b=0: every event leaves the state unchanged
    spec = make_model()
    assert json.dumps(model_to_json(spec))  # serializable
    assert spec.a1(0.5, 0.5) == 1.0
    assert spec.a2(0.5, 0.5) == 0.0
