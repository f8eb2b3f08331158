import csv
from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from scenarios import deweight_trial, static_pose_convergence
from wirehop.ekf import (LOWER_CHANNELS, EkfConfig, EkfState, JointEstimator, ekf_predict,
                         ekf_update, make_ekf, observation_jacobian, observe, run_offline,
                         touchdown_deweight)
from wirehop.geometry import GeometryModel
from wirehop.params import default_params

PARAMS = default_params()
GEOM = GeometryModel.from_params(PARAMS)


class IdentityWire:
    """One joint, one wire, length equal to the joint coordinate."""

    def evaluate(self, q):
        return np.array([q[0]]), np.array([[1.0]])


def test_predict_keeps_position_at_zero_velocity():
    s = make_ekf([0.1, -0.2, 0.5])
    out = ekf_predict(s, 1e-3)
    assert np.array_equal(out.q, s.q)


def test_predict_integrates_velocity():
    s = make_ekf(np.zeros(3), [1.0, -2.0, 3.0])
    out = ekf_predict(s, 0.01)
    assert np.allclose(out.q, [0.01, -0.02, 0.03])


def test_predict_covariance_from_zero():
    s = make_ekf(np.zeros(3))
    s = replace(s, P=np.zeros((6, 6)), Q=np.eye(6) * 1e-6)
    assert np.allclose(ekf_predict(s, 1e-3).P, np.eye(6) * 1e-6)


def test_predict_rejects_bad_step():
    with pytest.raises(ValueError):
        ekf_predict(make_ekf(np.zeros(3)), 0.0)


def test_zero_innovation_keeps_state_and_shrinks_covariance():
    s = make_ekf([0.1, 0.2, 0.5], [0.3, -0.1, 1.0], p0=1e-2)
    z = observe(s.x, GEOM)
    out = ekf_update(s, z, GEOM)
    assert np.allclose(out.x, s.x, atol=1e-14)
    assert np.trace(out.P) < np.trace(s.P)


def test_scalar_gain_of_one_half():
    s = EkfState(x=np.array([0.3, 0.0]), P=np.diag([1.0, 1.0]), Q=np.zeros((2, 2)),
                 R_meas=np.diag([1.0, 1e12]))
    # length channel: g(q) = q, P = 1, R = 1; the speed channel is switched off
    z = np.array([1.3, 0.0])
    out = ekf_update(s, z, IdentityWire())
    assert out.x[0] == pytest.approx(0.8, abs=1e-9)


def test_observation_jacobian_blocks():
    x = np.array([0.1, -0.2, 0.5, 0.4, -0.3, 1.2])
    H = observation_jacobian(x, GEOM)
    _, J = GEOM.evaluate(x[:3])
    assert np.allclose(H[:6, :3], J) and np.allclose(H[6:, 3:], J)
    assert np.array_equal(H[:6, 3:], np.zeros((6, 3)))
    # lower-left block against a coarser independent difference of h
    step = 1e-5
    for j in range(3):
        dx = np.zeros(6)
        dx[j] = step
        col = (observe(x + dx, GEOM) - observe(x - dx, GEOM))[6:] / (2 * step)
        assert np.allclose(H[6:, j], col, atol=1e-6)


def test_singular_innovation_skips_update():
    s = make_ekf(np.zeros(3))
    s = replace(s, P=np.zeros((6, 6)), R_meas=np.zeros((12, 12)), R_nominal=np.zeros((12, 12)))
    z = observe(s.x, GEOM) + 1.0
    out = ekf_update(s, z, GEOM)
    assert out.skipped_updates == 1
    assert np.array_equal(out.x, s.x)


def test_rejects_non_finite_measurement():
    s = make_ekf(np.zeros(3))
    z = np.full(12, np.nan)
    with pytest.raises(ValueError):
        ekf_update(s, z, GEOM)


def test_covariance_stays_symmetric_psd():
    rng = np.random.default_rng(0)
    est = JointEstimator(GEOM, [0.0, 0.0, 0.4])
    q = np.array([0.0, 0.0, 0.4])
    worst = np.inf
    for k in range(100_000):
        q = np.clip(q + rng.normal(0.0, 1e-3, 3), PARAMS.joint_lower, PARAMS.joint_upper)
        lengths, J = GEOM.evaluate(q)
        s = est.step(lengths + rng.normal(0, 1e-3, 6), rng.normal(0, 0.1, 6), 1e-3,
                     touched_down=(k % 500 == 0))
        if k % 100 == 0:
            assert np.array_equal(s.P, s.P.T)
            worst = min(worst, float(np.linalg.eigvalsh(s.P).min()))
    assert worst >= -1e-9


def test_exact_on_constant_velocity_motion():
    q0 = np.array([-0.2, 0.1, 0.3])
    qd = np.array([0.2, -0.1, 0.3])
    cfg = EkfConfig(q_pos=0.0, q_vel=0.0, r_length=0.0, r_speed=0.0)
    est = JointEstimator(GEOM, q0, cfg, p0=0.0, deweight=False)
    est.state.x[3:] = qd
    for k in range(1, 501):
        q = q0 + qd * k * 1e-3
        lengths, J = GEOM.evaluate(q)
        s = est.step(lengths, J @ qd, 1e-3)
    assert np.allclose(s.x, np.concatenate([q, qd]), atol=1e-12)


def test_static_convergence_from_roll_error():
    times, errors = static_pose_convergence()
    assert times[-1] == pytest.approx(0.5)
    assert errors[-1] <= 1e-3


def test_no_touchdown_leaves_noise_unchanged():
    s = make_ekf(np.zeros(3))
    out = touchdown_deweight(s, False, 1e-3)
    assert np.array_equal(out.R_meas, s.R_meas)


def test_deweight_inside_window():
    s = touchdown_deweight(make_ekf(np.zeros(3)), True)
    for _ in range(50):
        s = touchdown_deweight(s, False, 1e-3)
    assert s.t_since_touchdown == pytest.approx(0.05)
    ratio = np.diag(s.R_meas) / np.diag(s.R_nominal)
    expected = np.ones(12)
    expected[list(LOWER_CHANNELS)] = 100.0
    assert np.allclose(ratio, expected)
    assert LOWER_CHANNELS == (3, 4, 5, 9, 10, 11)


def test_deweight_restored_after_window():
    s = touchdown_deweight(make_ekf(np.zeros(3)), True)
    for _ in range(110):
        s = touchdown_deweight(s, False, 1e-3)
    assert s.t_since_touchdown == pytest.approx(0.11)
    assert np.array_equal(s.R_meas, s.R_nominal)


@pytest.mark.parametrize("seed", range(20))
def test_deweighting_reduces_peak_error(seed):
    assert deweight_trial(seed, deweight=True) < deweight_trial(seed, deweight=False)


@settings(max_examples=30, deadline=None)
@given(st.tuples(st.floats(-0.7, 0.7), st.floats(-0.7, 0.7), st.floats(0.1, 0.7)).map(np.array))
def test_tracks_static_pose_anywhere(q):
    est = JointEstimator(GEOM, q + np.array([0.02, -0.02, 0.01]))
    lengths, _ = GEOM.evaluate(q)
    for _ in range(300):
        s = est.step(lengths, np.zeros(6), 1e-3)
    assert np.max(np.abs(s.q - q)) <= 1e-4


def test_offline_mode_round_trip(tmp_path):
    q = np.array([0.1, -0.1, 0.5])
    lengths, _ = GEOM.evaluate(q)
    src = tmp_path / "wires.csv"
    with open(src, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["t"] + [f"l{i}" for i in range(6)] + [f"ld{i}" for i in range(6)])
        for k in range(300):
            w.writerow([k * 1e-3] + list(lengths) + [0.0] * 6)
    out = tmp_path / "joints.csv"
    assert run_offline(src, out, GEOM, q + 0.01) == 300
    rows = list(csv.reader(open(out)))
    assert rows[0][:4] == ["t", "roll", "pitch", "slide"]
    assert np.allclose([float(v) for v in rows[-1][1:4]], q, atol=1e-4)
