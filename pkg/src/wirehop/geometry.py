"""Straight-line wire model: lengths g(q), muscle Jacobian J_m(q), workspace check.

Wire i runs from body anchor i to leg anchor i. Positive tension shortens the
wire, so the joint force produced by tensions f is ``-J_m(q).T @ f``.
"""

from __future__ import annotations

import csv
import itertools
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from numba import njit

from .params import RobotParams


@njit(cache=True)
def lengths_and_jacobian(q, anchors_body, anchors_leg):
    """Wire lengths (6,) and d(length)/dq (6, 3) for joint position q."""
    cr, sr = math.cos(q[0]), math.sin(q[0])
    cp, sp = math.cos(q[1]), math.sin(q[1])
    s = q[2]
    n = anchors_body.shape[0]
    lengths = np.empty(n)
    jac = np.empty((n, 3))
    for i in range(n):
        ax = anchors_leg[i, 0]
        ay = anchors_leg[i, 1]
        az = anchors_leg[i, 2] - s
        # Ry(pitch) @ a
        yx = cp * ax + sp * az
        yy = ay
        yz = -sp * ax + cp * az
        # Rx(roll) @ (Ry a)
        px = yx
        py = cr * yy - sr * yz
        pz = sr * yy + cr * yz
        dx = px - anchors_body[i, 0]
        dy = py - anchors_body[i, 1]
        dz = pz - anchors_body[i, 2]
        length = math.sqrt(dx * dx + dy * dy + dz * dz)
        lengths[i] = length
        ex, ey, ez = dx / length, dy / length, dz / length
        # d/droll: dRx @ (Ry a)
        jac[i, 0] = ey * (-sr * yy - cr * yz) + ez * (cr * yy - sr * yz)
        # d/dpitch: Rx @ dRy @ a
        tx = -sp * ax + cp * az
        tz = -cp * ax - sp * az
        jac[i, 1] = ex * tx + ey * (-sr * tz) + ez * (cr * tz)
        # d/dslide: Rx @ Ry @ (0, 0, -1)
        jac[i, 2] = ex * (-sp) + ey * (sr * cp) + ez * (-cr * cp)
    return lengths, jac


@dataclass(frozen=True)
class GeometryModel:
    anchors_body: np.ndarray
    anchors_leg: np.ndarray

    @classmethod
    def from_params(cls, params: RobotParams) -> "GeometryModel":
        return cls(params.body_anchor_array, params.leg_anchor_array)

    def evaluate(self, q) -> tuple[np.ndarray, np.ndarray]:
        return lengths_and_jacobian(np.asarray(q, dtype=float), self.anchors_body, self.anchors_leg)


def wire_lengths(q, geom: GeometryModel) -> np.ndarray:
    lengths, _ = geom.evaluate(q)
    assert np.all(lengths > 0.0), "degenerate wire length"
    return lengths


def muscle_jacobian(q, geom: GeometryModel) -> np.ndarray:
    return geom.evaluate(q)[1]


def wire_velocities(q, q_dot, geom: GeometryModel) -> np.ndarray:
    return muscle_jacobian(q, geom) @ np.asarray(q_dot, dtype=float)


def wire_velocity_jacobian(q, q_dot, geom: GeometryModel, step: float = 1e-6) -> np.ndarray:
    """d(J_m(q) q_dot)/dq by central differences, shape (6, 3)."""
    q = np.asarray(q, dtype=float)
    q_dot = np.asarray(q_dot, dtype=float)
    out = np.empty((len(geom.anchors_body), 3))
    for j in range(3):
        dq = np.zeros(3)
        dq[j] = step
        jp = muscle_jacobian(q + dq, geom)
        jm = muscle_jacobian(q - dq, geom)
        out[:, j] = (jp - jm) @ q_dot / (2.0 * step)
    return out


def gravity_compensation(q, params: RobotParams) -> np.ndarray:
    """Joint force holding the leg's weight (roll, pitch) with the body level
    while the slide carries the body's weight through a planted foot."""
    roll, pitch, slide = (float(v) for v in q)
    m_l, g = params.leg_mass, params.gravity
    # leg CoG sits (slide - leg_cog) below the gimbal along the leg axis
    d = slide - params.leg_cog
    # CoG height = -d * cos(roll) * cos(pitch); torque to hold = dV/dq
    tau_roll = m_l * g * d * math.sin(roll) * math.cos(pitch)
    tau_pitch = m_l * g * d * math.cos(roll) * math.sin(pitch)
    tau_slide = params.body_mass * g
    return np.array([tau_roll, tau_pitch, tau_slide])


@dataclass
class FeasibilityReport:
    grid_n: int
    points: list = field(default_factory=list)  # (q, feasible, min f, max f)

    @property
    def infeasible(self) -> list:
        return [p for p in self.points if not p[1]]

    @property
    def n_infeasible(self) -> int:
        return len(self.infeasible)

    @property
    def ok(self) -> bool:
        return self.n_infeasible == 0

    def to_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["roll", "pitch", "slide", "feasible", "f_lo", "f_hi"])
            for q, ok, lo, hi in self.points:
                writer.writerow([f"{q[0]:.6f}", f"{q[1]:.6f}", f"{q[2]:.6f}", int(ok),
                                 f"{lo:.6f}", f"{hi:.6f}"])


def _axis(lo: float, hi: float, n: int) -> np.ndarray:
    if n == 1:
        return np.array([0.5 * (lo + hi)])
    return np.linspace(lo, hi, n)


def check_workspace(geom: GeometryModel, params: RobotParams, grid_n: int = 9,
                    points=None) -> FeasibilityReport:
    """Solve the tension QP for gravity compensation over the joint box.

    ``points`` overrides the grid with explicit joint positions.
    """
    from .tension import solve_tensions

    if points is None:
        if grid_n < 2:
            raise ValueError("grid_n must be >= 2")
        axes = [_axis(lo, hi, grid_n) for lo, hi in zip(params.joint_lower, params.joint_upper)]
        points = [np.array(p) for p in itertools.product(*axes)]
    report = FeasibilityReport(grid_n=grid_n)
    for q in points:
        q = np.asarray(q, dtype=float)
        tau = gravity_compensation(q, params)
        sol = solve_tensions(tau, muscle_jacobian(q, geom), params.f_min, params.f_max)
        if sol.optimal:
            report.points.append((q, True, float(sol.f.min()), float(sol.f.max())))
        else:
            report.points.append((q, False, math.nan, math.nan))
    return report
