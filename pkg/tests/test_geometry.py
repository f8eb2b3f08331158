import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import finite_difference_jacobian
from wirehop.geometry import (GeometryModel, check_workspace, gravity_compensation,
                              muscle_jacobian, wire_lengths, wire_velocities,
                              wire_velocity_jacobian)
from wirehop.params import RobotParams, default_params

PARAMS = default_params()
GEOM = GeometryModel.from_params(PARAMS)

joint_q = st.tuples(st.floats(-0.79, 0.79), st.floats(-0.79, 0.79), st.floats(0.0, 0.8)).map(
    np.array)


def _rot_x(a):
    c, s = np.cos(a), np.sin(a)
    return np.array([[1, 0, 0], [0, c, -s], [0, s, c]])


def _rot_y(a):
    c, s = np.cos(a), np.sin(a)
    return np.array([[c, 0, s], [0, 1, 0], [-s, 0, c]])


def _reference_lengths(q):
    """Homogeneous-transform evaluation, written independently of the kernel."""
    T = np.eye(4)
    T[:3, :3] = _rot_x(q[0]) @ _rot_y(q[1])
    shift = np.eye(4)
    shift[2, 3] = -q[2]
    T = T @ shift
    out = []
    for b, a in zip(PARAMS.body_anchor_array, PARAMS.leg_anchor_array):
        p = T @ np.append(a, 1.0)
        out.append(np.linalg.norm(p[:3] - b))
    return np.array(out)


def test_symmetric_pose_equal_lengths_per_ring():
    lengths = wire_lengths(np.array([0.0, 0.0, 0.4]), GEOM)
    assert np.ptp(lengths[:3]) < 1e-12
    assert np.ptp(lengths[3:]) < 1e-12


def test_lengths_match_hand_computation():
    # upper: ring radius 0.27 in the gimbal plane to a collar of radius 0.02 at
    # 1.07 - 0.4 above the gimbal on the same azimuth
    upper = np.hypot(0.27 - 0.02, 0.67)
    # lower: ring radius 0.27 at +0.10 to the foot 0.4 below the gimbal, same azimuth
    lower = np.hypot(0.27 - 0.02, 0.50)
    lengths = wire_lengths(np.array([0.0, 0.0, 0.4]), GEOM)
    assert np.allclose(lengths[:3], upper, atol=1e-12)
    assert np.allclose(lengths[3:], lower, atol=1e-12)


@settings(max_examples=100, deadline=None)
@given(joint_q)
def test_lengths_match_transform_reference(q):
    assert np.allclose(wire_lengths(q, GEOM), _reference_lengths(q), atol=1e-12)


def _mirror_permutation():
    """Index map i -> j with anchor j the y-reflection of anchor i."""
    flip = np.array([1.0, -1.0, 1.0])
    body = PARAMS.body_anchor_array
    perm = []
    for i in range(6):
        j = int(np.argmin(np.linalg.norm(body - body[i] * flip, axis=1)))
        assert np.allclose(body[j], body[i] * flip)
        assert np.allclose(PARAMS.leg_anchor_array[j], PARAMS.leg_anchor_array[i] * flip)
        perm.append(j)
    return np.array(perm)


@settings(max_examples=50, deadline=None)
@given(joint_q)
def test_roll_mirror_permutes_lengths(q):
    perm = _mirror_permutation()
    mirrored = q * np.array([-1.0, 1.0, 1.0])
    assert np.allclose(wire_lengths(mirrored, GEOM), wire_lengths(q, GEOM)[perm], atol=1e-12)
    # Jacobian: rows permute, roll column flips sign
    J = muscle_jacobian(q, GEOM)
    Jm = muscle_jacobian(mirrored, GEOM)
    assert np.allclose(Jm, J[perm] * np.array([-1.0, 1.0, 1.0]), atol=1e-12)


@settings(max_examples=200, deadline=None)
@given(joint_q)
def test_jacobian_matches_finite_differences(q):
    J = muscle_jacobian(q, GEOM)
    J_fd = finite_difference_jacobian(lambda x: wire_lengths(x, GEOM), q, 1e-6)
    rel = np.max(np.abs(J - J_fd)) / max(1.0, np.max(np.abs(J)))
    assert rel <= 1e-6


def test_slide_column_is_axial_projection():
    q = np.array([0.0, 0.0, 0.5])
    J = muscle_jacobian(q, GEOM)
    body, leg = PARAMS.body_anchor_array, PARAMS.leg_anchor_array
    for i in range(6):
        p = leg[i] - np.array([0.0, 0.0, q[2]])
        d = (p - body[i]) / np.linalg.norm(p - body[i])
        # extending the slide moves every leg point along -Z
        assert J[i, 2] == pytest.approx(-d[2], abs=1e-12)
    # lower wires lengthen, upper wires shorten when the slide extends
    assert np.all(J[3:, 2] > 0.0) and np.all(J[:3, 2] < 0.0)


def test_zero_velocity_maps_to_zero():
    q = np.array([0.2, -0.3, 0.5])
    assert np.array_equal(wire_velocities(q, np.zeros(3), GEOM), np.zeros(6))


def test_slide_basis_velocity_is_slide_column():
    q = np.array([0.2, -0.3, 0.5])
    assert np.allclose(wire_velocities(q, [0, 0, 1.0], GEOM), muscle_jacobian(q, GEOM)[:, 2])


@settings(max_examples=100, deadline=None)
@given(joint_q, st.tuples(*[st.floats(-3.0, 3.0)] * 3).map(np.array))
def test_wire_velocity_directional_difference(q, q_dot):
    h = 1e-6
    fd = (wire_lengths(q + q_dot * h, GEOM) - wire_lengths(q - q_dot * h, GEOM)) / (2 * h)
    v = wire_velocities(q, q_dot, GEOM)
    assert np.max(np.abs(v - fd)) <= 1e-5 * max(1.0, np.max(np.abs(v)))


@settings(max_examples=50, deadline=None)
@given(joint_q, st.tuples(*[st.floats(-3.0, 3.0)] * 6).map(np.array), st.floats(-2.0, 2.0))
def test_wire_velocity_is_linear(q, qd, alpha):
    a, b = qd[:3], qd[3:]
    lhs = wire_velocities(q, a + alpha * b, GEOM)
    rhs = wire_velocities(q, a, GEOM) + alpha * wire_velocities(q, b, GEOM)
    assert np.allclose(lhs, rhs, atol=1e-12)


@settings(max_examples=200, deadline=None)
@given(joint_q)
def test_lengths_within_envelope(q):
    lengths = wire_lengths(q, GEOM)
    assert np.all(lengths >= 0.05) and np.all(lengths <= 2.0)


def test_velocity_jacobian_block():
    q = np.array([0.1, 0.2, 0.5])
    qd = np.array([0.5, -1.0, 2.0])
    block = wire_velocity_jacobian(q, qd, GEOM)
    fd = finite_difference_jacobian(lambda x: muscle_jacobian(x, GEOM) @ qd, q, 1e-5)
    assert np.allclose(block, fd, atol=1e-6)


def test_workspace_default_grid_all_feasible():
    report = check_workspace(GEOM, PARAMS, grid_n=9)
    assert len(report.points) == 729
    assert report.n_infeasible == 0


def test_workspace_degenerate_bounds():
    from dataclasses import replace
    # f_max == f_min only works where uniform minimum tension is the exact answer
    tight = replace(PARAMS, f_max=PARAMS.f_min + 1e-12)
    report = check_workspace(GEOM, tight, grid_n=3)
    assert report.n_infeasible == len(report.points)


def test_workspace_single_point():
    report = check_workspace(GEOM, PARAMS, points=[np.zeros(3)])
    assert report.ok and len(report.points) == 1


def test_workspace_rejects_tiny_grid():
    with pytest.raises(ValueError):
        check_workspace(GEOM, PARAMS, grid_n=1)


def test_workspace_csv(tmp_path):
    report = check_workspace(GEOM, PARAMS, grid_n=2)
    path = tmp_path / "ws.csv"
    report.to_csv(path)
    lines = path.read_text().splitlines()
    assert lines[0].startswith("roll,pitch,slide,feasible")
    assert len(lines) == 9


def test_gravity_compensation_level_leg():
    tau = gravity_compensation([0.0, 0.0, 0.5], PARAMS)
    assert tau[0] == 0.0 and tau[1] == 0.0
    assert tau[2] == pytest.approx(PARAMS.body_mass * PARAMS.gravity)


def test_custom_geometry_is_used():
    p = RobotParams(anchors_body=tuple((x * 2, y * 2, z) for x, y, z in PARAMS.anchors_body))
    g = GeometryModel.from_params(p)
    assert not np.allclose(wire_lengths([0, 0, 0.4], g), wire_lengths([0, 0, 0.4], GEOM))
