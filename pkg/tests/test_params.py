import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from wirehop.geometry import GeometryModel, check_workspace
from wirehop.params import (ConfigError, RobotParams, SimState, WireVector, default_params,
                            load_config, params_to_dict, validate_params)


def test_default_masses_and_inertias():
    p = default_params()
    assert p.body_mass == 9.8
    assert p.leg_mass == 0.5
    assert p.body_inertia == 0.225
    assert p.leg_inertia == 0.074


def test_default_total_mass_is_sum():
    p = validate_params({})
    assert p.total_mass == p.body_mass + p.leg_mass
    assert p.total_mass == pytest.approx(10.3, abs=1e-12)


def test_default_limits():
    p = default_params()
    assert p.slide_range == (0.0, 0.8)
    assert p.roll_range == (-0.79, 0.79) and p.pitch_range == (-0.79, 0.79)
    assert p.f_max == 230.0 and p.wire_speed_max == 10.7
    assert p.gear_ratio == 2.5 and p.pulley_radius == 0.010
    assert p.f_min > 0.0


def test_max_slide_force_is_three_wires():
    p = validate_params({"f_min": 5, "f_max": 230})
    assert p.max_slide_force == pytest.approx(690.0)


def test_default_anchors_pass_workspace_check():
    p = default_params()
    report = check_workspace(GeometryModel.from_params(p), p, grid_n=5)
    assert report.ok


def test_six_anchor_pairs():
    p = default_params()
    assert p.body_anchor_array.shape == (6, 3)
    assert p.leg_anchor_array.shape == (6, 3)


@pytest.mark.parametrize("raw, message", [
    ({"anchors_body": [[0, 0, 0]] * 5}, "anchor count"),
    ({"anchors_leg": [[0, 0, 0]] * 7}, "anchor count"),
    ({"body_mass": 0.0}, "body_mass"),
    ({"leg_mass": -1.0}, "leg_mass"),
    ({"slide_range": [0.8, 0.0]}, "inverted"),
    ({"roll_range": [0.5, -0.5]}, "inverted"),
    ({"f_min": 230.0, "f_max": 230.0}, "f_min"),
    ({"f_min": 0.0}, "f_min"),
    ({"mystery": 1}, "unknown"),
    ({"gravity": "heavy"}, "number"),
])
def test_validate_rejects(raw, message):
    with pytest.raises(ConfigError, match=message):
        validate_params(raw)


range_pair = st.tuples(st.floats(0.0, 0.3), st.floats(0.4, 1.0))


@settings(max_examples=50, deadline=None)
@given(
    body_mass=st.floats(1.0, 50.0),
    leg_mass=st.floats(0.1, 5.0),
    f_min=st.floats(0.5, 20.0),
    f_max=st.floats(50.0, 500.0),
    slide=range_pair,
)
def test_round_trip_through_json(body_mass, leg_mass, f_min, f_max, slide):
    raw = {"body_mass": body_mass, "leg_mass": leg_mass, "f_min": f_min, "f_max": f_max,
           "slide_range": list(slide)}
    p = validate_params(raw)
    again = validate_params(json.loads(json.dumps(params_to_dict(p))))
    assert again == p
    assert again.total_mass == body_mass + leg_mass


def test_load_config_sections(tmp_path):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"robot": {"body_mass": 9.0}, "run": {"seed": 3}}))
    raw = load_config(cfg)
    assert raw["robot"] == {"body_mass": 9.0}
    assert raw["controller"] == {}
    assert validate_params(raw["robot"]).body_mass == 9.0


def test_load_config_errors(tmp_path):
    with pytest.raises(ConfigError):
        load_config(tmp_path / "missing.json")
    bad = tmp_path / "bad.json"
    bad.write_text("{not json")
    with pytest.raises(ConfigError):
        load_config(bad)
    extra = tmp_path / "extra.json"
    extra.write_text(json.dumps({"robots": {}}))
    with pytest.raises(ConfigError, match="section"):
        load_config(extra)


def test_wire_vector_checks():
    assert WireVector(np.arange(6)).shape == (6,)
    with pytest.raises(ValueError):
        WireVector(np.ones(5))
    with pytest.raises(ValueError):
        WireVector([1, 2, 3, -1, 0, 0], tension=True)


def test_sim_state_generalized_round_trip():
    from wirehop.params import JointState
    ss = SimState(np.array([1.0, 2.0, 3.0]), np.array([0.1, 0.2, 0.3]), np.array([0.01, -0.02]),
                  np.array([0.5, -0.5]), JointState(np.array([0.1, 0.2, 0.4]),
                                                   np.array([1.0, 2.0, 3.0])), 1.5)
    qg, vg = ss.generalized()
    back = SimState.from_generalized(qg, vg, ss.time)
    assert np.array_equal(back.generalized()[0], qg)
    assert np.array_equal(back.generalized()[1], vg)
    assert np.array_equal(back.v_horizontal, [0.1, 0.2])
    assert math.isclose(back.time, 1.5)


def test_params_frozen():
    p = RobotParams()
    with pytest.raises(Exception):
        p.body_mass = 1.0
