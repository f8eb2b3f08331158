"""Two-body hopping robot simulation: body + leg joined by roll/pitch/slide joints.

Generalized coordinates (8): body position (x, y, z), body roll and pitch
(yaw fixed at zero), joint roll, joint pitch, slide. The body CoG sits at the
gimbal; the leg CoG sits ``leg_cog`` above the foot on the leg axis.

Integration is semi-implicit Euler on the generalized momentum p = M(q) v:

    p+  = p + dt * (dT/dq + Q)
    q+  = q + dt * M(q)^-1 p+
    v+  = M(q+)^-1 p+

Writing the update on momentum keeps the cyclic (horizontal) momentum exact
in flight. dT/dq is taken by central differences of the kinetic energy; the
mass matrix is assembled from the point/angular Jacobians of both bodies.
"""

from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass

import numpy as np
from numba import njit

from .geometry import lengths_and_jacobian
from .params import JointState, RobotParams, SimState

N_GEN = 8

# layout of the packed physics vector handed to the kernels
_MB, _ML, _IB, _ILT, _ILA, _LCOG, _G = 0, 1, 2, 3, 4, 5, 6
_KG, _CG, _MU, _CT = 7, 8, 9, 10
_FMAX, _VMAX, _MOTOR_ON = 11, 12, 13
_JLO, _JHI = 14, 17
_KSR, _CSR, _KSS, _CSS = 20, 21, 22, 23
_PHYS_LEN = 24


@dataclass(frozen=True)
class GroundModel:
    stiffness: float = 1.0e5
    damping: float | None = None  # None: critical, 2 * sqrt(k * total mass)
    friction_mu: float = 0.8
    # viscous regularisation of Coulomb friction, capped at mu * normal
    tangential_damping: float = 1500.0

    def damping_for(self, params: RobotParams) -> float:
        if self.damping is not None:
            return self.damping
        return 2.0 * math.sqrt(self.stiffness * params.total_mass)


@dataclass(frozen=True)
class MotorModel:
    f_max: float = 230.0
    wire_speed_max: float = 10.7
    derating: bool = True  # linear torque-speed derating; False = ideal motors

    @classmethod
    def from_params(cls, params: RobotParams, derating: bool = True) -> "MotorModel":
        return cls(params.f_max, params.wire_speed_max, derating)


@dataclass(frozen=True)
class JointStops:
    rot_stiffness: float = 2000.0
    rot_damping: float = 20.0
    slide_stiffness: float = 1.0e5
    slide_damping: float = 400.0


def pack_physics(params: RobotParams, ground: GroundModel, motor: MotorModel,
                 stops: JointStops = JointStops()) -> np.ndarray:
    phys = np.zeros(_PHYS_LEN)
    phys[_MB] = params.body_mass
    phys[_ML] = params.leg_mass
    phys[_IB] = params.body_inertia
    phys[_ILT] = params.leg_inertia
    phys[_ILA] = params.leg_axial_inertia
    phys[_LCOG] = params.leg_cog
    phys[_G] = params.gravity
    phys[_KG] = ground.stiffness
    phys[_CG] = ground.damping_for(params)
    phys[_MU] = ground.friction_mu
    phys[_CT] = ground.tangential_damping
    phys[_FMAX] = motor.f_max
    phys[_VMAX] = motor.wire_speed_max
    phys[_MOTOR_ON] = 1.0 if motor.derating else 0.0
    phys[_JLO:_JLO + 3] = params.joint_lower
    phys[_JHI:_JHI + 3] = params.joint_upper
    phys[_KSR] = stops.rot_stiffness
    phys[_CSR] = stops.rot_damping
    phys[_KSS] = stops.slide_stiffness
    phys[_CSS] = stops.slide_damping
    return phys


# ---------------------------------------------------------------------------
# kernels


@njit(cache=True)
def _cross(a, b):
    return np.array([a[1] * b[2] - a[2] * b[1],
                     a[2] * b[0] - a[0] * b[2],
                     a[0] * b[1] - a[1] * b[0]])


@njit(cache=True)
def _rx(a):
    c, s = math.cos(a), math.sin(a)
    return np.array([[1.0, 0.0, 0.0], [0.0, c, -s], [0.0, s, c]])


@njit(cache=True)
def _ry(a):
    c, s = math.cos(a), math.sin(a)
    return np.array([[c, 0.0, s], [0.0, 1.0, 0.0], [-s, 0.0, c]])


@njit(cache=True)
def _frames(qg):
    """Body and leg rotations plus the four rotation axes in world frame."""
    rb = _rx(qg[3]) @ _ry(qg[4])
    rj = _rx(qg[5])
    rl = rb @ rj @ _ry(qg[6])
    axes = np.empty((4, 3))
    axes[0, 0] = 1.0
    axes[0, 1] = 0.0
    axes[0, 2] = 0.0
    axes[1, 0] = 0.0
    axes[1, 1] = math.cos(qg[3])
    axes[1, 2] = math.sin(qg[3])
    axes[2, :] = rb[:, 0]
    axes[3, :] = rb @ np.ascontiguousarray(rj[:, 1])
    return rb, rl, axes


@njit(cache=True)
def _leg_point_jacobian(axes, u, r):
    """Jacobian of a leg point at offset r from the gimbal (r already includes -s*u)."""
    jac = np.zeros((3, N_GEN))
    for i in range(3):
        jac[i, i] = 1.0
    for k in range(4):
        c = _cross(axes[k], r)
        jac[0, 3 + k] = c[0]
        jac[1, 3 + k] = c[1]
        jac[2, 3 + k] = c[2]
    jac[0, 7] = -u[0]
    jac[1, 7] = -u[1]
    jac[2, 7] = -u[2]
    return jac


@njit(cache=True)
def _body_point_jacobian(axes, r):
    jac = np.zeros((3, N_GEN))
    for i in range(3):
        jac[i, i] = 1.0
    for k in range(2):
        c = _cross(axes[k], r)
        jac[0, 3 + k] = c[0]
        jac[1, 3 + k] = c[1]
        jac[2, 3 + k] = c[2]
    return jac


@njit(cache=True)
def _mass_matrix(qg, phys):
    rb, rl, axes = _frames(qg)
    u = np.ascontiguousarray(rl[:, 2])
    r_cog = (phys[_LCOG] - qg[7]) * u
    jv = _leg_point_jacobian(axes, u, r_cog)
    jw_b = np.zeros((3, N_GEN))
    jw_l = np.zeros((3, N_GEN))
    for k in range(2):
        jw_b[:, 3 + k] = axes[k]
    for k in range(4):
        jw_l[:, 3 + k] = axes[k]
    il_local = np.diag(np.array([phys[_ILT], phys[_ILT], phys[_ILA]]))
    il = rl @ il_local @ rl.T
    m = phys[_ML] * (jv.T @ jv) + jw_l.T @ (il @ jw_l) + phys[_IB] * (jw_b.T @ jw_b)
    for i in range(3):
        m[i, i] += phys[_MB]
    return m


@njit(cache=True)
def _kinetic(qg, vg, phys):
    """Kinetic energy from body/leg velocities directly (cheaper than v.M.v)."""
    rb, rl, axes = _frames(qg)
    w_b = vg[3] * axes[0] + vg[4] * axes[1]
    w_l = w_b + vg[5] * axes[2] + vg[6] * axes[3]
    u = np.ascontiguousarray(rl[:, 2])
    r = (phys[_LCOG] - qg[7]) * u
    v_l = vg[0:3] + _cross(w_l, r) - vg[7] * u
    w_axial = w_l @ u
    t = phys[_MB] * (vg[0:3] @ vg[0:3]) + phys[_IB] * (w_b @ w_b)
    t += phys[_ML] * (v_l @ v_l)
    t += phys[_ILT] * (w_l @ w_l - w_axial * w_axial) + phys[_ILA] * w_axial * w_axial
    return 0.5 * t


@njit(cache=True)
def _dkinetic_dq(qg, vg, phys):
    out = np.zeros(N_GEN)
    h = 1e-6
    for j in range(3, N_GEN):
        qp = qg.copy()
        qm = qg.copy()
        qp[j] += h
        qm[j] -= h
        out[j] = (_kinetic(qp, vg, phys) - _kinetic(qm, vg, phys)) / (2.0 * h)
    return out


@njit(cache=True)
def _potential(qg, phys):
    rb, rl, axes = _frames(qg)
    z_leg = qg[2] + (phys[_LCOG] - qg[7]) * rl[2, 2]
    return phys[_G] * (phys[_MB] * qg[2] + phys[_ML] * z_leg)


@njit(cache=True)
def motor_limit_kernel(f_cmd, l_dot, f_max, v_max, enabled):
    out = np.empty(f_cmd.shape[0])
    for i in range(f_cmd.shape[0]):
        f = max(f_cmd[i], 0.0)
        if enabled:
            shorten = max(0.0, -l_dot[i])
            cap = f_max * max(0.0, 1.0 - shorten / v_max)
            f = min(f, cap)
        out[i] = f
    return out


@njit(cache=True)
def _contact(p_world, v_world, phys):
    """Penalty normal force with capped viscous friction; returns (force, normal)."""
    force = np.zeros(3)
    pen = -p_world[2]
    if pen <= 0.0:
        return force, 0.0
    fn = phys[_KG] * pen - phys[_CG] * v_world[2]
    if fn <= 0.0:
        return force, 0.0
    fx = -phys[_CT] * v_world[0]
    fy = -phys[_CT] * v_world[1]
    ft = math.sqrt(fx * fx + fy * fy)
    cap = phys[_MU] * fn
    if ft > cap:
        fx *= cap / ft
        fy *= cap / ft
    force[0] = fx
    force[1] = fy
    force[2] = fn
    return force, fn


@njit(cache=True)
def _generalized_forces(qg, vg, f_cmd, tau_extra, phys, anchors_body, anchors_leg,
                        landing):
    """Applied generalized forces. Returns (Q, foot normal, body normal, f_actual, l_dot)."""
    q_out = np.zeros(N_GEN)
    rb, rl, axes = _frames(qg)
    u = np.ascontiguousarray(rl[:, 2])
    g = phys[_G]

    # gravity
    q_out[2] -= phys[_MB] * g
    r_cog = (phys[_LCOG] - qg[7]) * u
    jv = _leg_point_jacobian(axes, u, r_cog)
    for j in range(N_GEN):
        q_out[j] -= jv[2, j] * phys[_ML] * g

    # wires: internal, act on the joint coordinates only
    jq = qg[5:8].copy()
    jqd = vg[5:8].copy()
    lengths, jm = lengths_and_jacobian(jq, anchors_body, anchors_leg)
    l_dot = jm @ jqd
    f_act = motor_limit_kernel(f_cmd, l_dot, phys[_FMAX], phys[_VMAX], phys[_MOTOR_ON] > 0.5)
    tau_w = -(jm.T @ f_act)
    for j in range(3):
        q_out[5 + j] += tau_w[j] + tau_extra[j]

    # joint range stops
    for j in range(3):
        k = phys[_KSS] if j == 2 else phys[_KSR]
        c = phys[_CSS] if j == 2 else phys[_CSR]
        lo = phys[_JLO + j]
        hi = phys[_JHI + j]
        if jq[j] < lo:
            q_out[5 + j] += max(0.0, k * (lo - jq[j]) - c * jqd[j])
        elif jq[j] > hi:
            q_out[5 + j] -= max(0.0, k * (jq[j] - hi) + c * jqd[j])

    # foot contact
    r_foot = -qg[7] * u
    jf = _leg_point_jacobian(axes, u, r_foot)
    p_foot = qg[0:3] + r_foot
    v_foot = jf @ vg
    force, foot_n = _contact(p_foot, v_foot, phys)
    if foot_n > 0.0:
        q_out += jf.T @ force

    # body landing points
    body_n = 0.0
    for i in range(landing.shape[0]):
        r = rb @ landing[i]
        jb = _body_point_jacobian(axes, r)
        pb = qg[0:3] + r
        vb = jb @ vg
        force, fn = _contact(pb, vb, phys)
        if fn > 0.0:
            q_out += jb.T @ force
            body_n += fn
    return q_out, foot_n, body_n, f_act, l_dot


@njit(cache=True)
def integrate(qg, vg, f_cmd, tau_extra, dt, n_steps, phys, anchors_body, anchors_leg,
              landing):
    """Advance n_steps of size dt with wire tension commands held constant.

    Returns (q, v, foot normal, body normal, f_actual, wire work, max foot penetration).
    """
    q = qg.copy()
    v = vg.copy()
    m = _mass_matrix(q, phys)
    foot_n = 0.0
    body_n = 0.0
    f_act = np.zeros(f_cmd.shape[0])
    work = 0.0
    max_pen = 0.0
    for _ in range(n_steps):
        forces, foot_n, body_n, f_act, l_dot = _generalized_forces(
            q, v, f_cmd, tau_extra, phys, anchors_body, anchors_leg, landing)
        work -= dt * (f_act @ l_dot)
        p = m @ v + dt * (_dkinetic_dq(q, v, phys) + forces)
        v_mid = np.linalg.solve(m, p)
        q = q + dt * v_mid
        m = _mass_matrix(q, phys)
        v = np.linalg.solve(m, p)
        rb, rl, axes = _frames(q)
        pen = -(q[2] - q[7] * rl[2, 2])
        if pen > max_pen:
            max_pen = pen
    return q, v, foot_n, body_n, f_act, work, max_pen


# ---------------------------------------------------------------------------
# Python-level API


def apply_motor_limits(f_cmd, l_dot, mm: MotorModel) -> np.ndarray:
    """Cap commanded tensions by the linear torque-speed curve of each winch."""
    return motor_limit_kernel(np.asarray(f_cmd, dtype=float), np.asarray(l_dot, dtype=float),
                              mm.f_max, mm.wire_speed_max, mm.derating)


def wire_joint_force(f, J) -> np.ndarray:
    return -np.asarray(J, dtype=float).T @ np.asarray(f, dtype=float)


def motor_to_wire(motor_torque: float, motor_speed: float,
                  params: RobotParams) -> tuple[float, float]:
    """Motor shaft torque/speed to wire tension/speed through belt reduction and pulley."""
    if params.pulley_radius <= 0.0:
        raise ValueError("pulley radius must be positive")
    tension = motor_torque * params.gear_ratio / params.pulley_radius
    speed = motor_speed * params.pulley_radius / params.gear_ratio
    return tension, speed


def mass_matrix(qg, params: RobotParams) -> np.ndarray:
    phys = pack_physics(params, GroundModel(), MotorModel.from_params(params))
    return _mass_matrix(np.asarray(qg, dtype=float), phys)


def mechanical_energy(state: SimState, params: RobotParams) -> float:
    qg, vg = state.generalized()
    phys = pack_physics(params, GroundModel(), MotorModel.from_params(params))
    return float(_kinetic(qg, vg, phys) + _potential(qg, phys))


def cog_position(state: SimState, params: RobotParams) -> np.ndarray:
    qg, _ = state.generalized()
    rl = _rx(qg[3]) @ _ry(qg[4]) @ _rx(qg[5]) @ _ry(qg[6])
    leg = qg[0:3] + (params.leg_cog - qg[7]) * rl[:, 2]
    return (params.body_mass * qg[0:3] + params.leg_mass * leg) / params.total_mass


def cog_velocity(state: SimState, params: RobotParams) -> np.ndarray:
    qg, vg = state.generalized()
    rb, rl, axes = _frames(qg)
    u = rl[:, 2]
    jv = _leg_point_jacobian(axes, u, (params.leg_cog - qg[7]) * u)
    return (params.body_mass * vg[0:3] + params.leg_mass * (jv @ vg)) / params.total_mass


def foot_position(state: SimState) -> np.ndarray:
    qg, _ = state.generalized()
    rl = _rx(qg[3]) @ _ry(qg[4]) @ _rx(qg[5]) @ _ry(qg[6])
    return qg[0:3] - qg[7] * rl[:, 2]


class DivergenceError(RuntimeError):
    """Raised when the integration blows up."""


@dataclass
class StepInfo:
    foot_normal: float
    body_normal: float
    f_actual: np.ndarray
    wire_work: float
    max_penetration: float


class Simulator:
    """Owns the simulation state and advances it in control-rate chunks."""

    def __init__(self, params: RobotParams, state: SimState, ground: GroundModel = GroundModel(),
                 motor: MotorModel | None = None, dt: float = 1e-4,
                 stops: JointStops = JointStops()):
        if dt > 2e-4:
            raise ValueError("physics step must be <= 2e-4 s")
        self.params = params
        self.ground = ground
        self.motor = motor or MotorModel.from_params(params)
        self.dt = dt
        self.phys = pack_physics(params, ground, self.motor, stops)
        self.anchors_body = params.body_anchor_array
        self.anchors_leg = params.leg_anchor_array
        self.landing = params.landing_point_array
        self.qg, self.vg = state.generalized()
        self.time = state.time
        self.injected_work = 0.0
        self.max_penetration = 0.0  # deepest ground penetration seen so far
        self.initial_energy = self.energy()

    @property
    def state(self) -> SimState:
        return SimState.from_generalized(self.qg, self.vg, self.time)

    def energy(self) -> float:
        return float(_kinetic(self.qg, self.vg, self.phys) + _potential(self.qg, self.phys))

    def advance(self, f_cmd, duration: float, tau_extra=None) -> StepInfo:
        n = max(1, int(round(duration / self.dt)))
        f_cmd = np.asarray(f_cmd, dtype=float)
        extra = np.zeros(3) if tau_extra is None else np.asarray(tau_extra, dtype=float)
        q, v, foot_n, body_n, f_act, work, pen = integrate(
            self.qg, self.vg, f_cmd, extra, self.dt, n, self.phys,
            self.anchors_body, self.anchors_leg, self.landing)
        self.qg, self.vg = q, v
        self.time += n * self.dt
        self.injected_work += max(work, 0.0)
        self.max_penetration = max(self.max_penetration, pen)
        if not (np.all(np.isfinite(q)) and np.all(np.isfinite(v))):
            raise DivergenceError(f"non-finite state at t={self.time:.4f}")
        budget = 10.0 * (abs(self.initial_energy) + self.injected_work) + 100.0
        if self.energy() > budget:
            raise DivergenceError(
                f"energy {self.energy():.1f} J exceeds budget {budget:.1f} J at t={self.time:.4f}")
        return StepInfo(foot_n, body_n, f_act, work, pen)


def dynamics_step(ss: SimState, f_actual, dt: float, params: RobotParams,
                  ground: GroundModel = GroundModel()) -> SimState:
    """One integration step with the given (already motor-limited) tensions."""
    if dt > 2e-4:
        raise ValueError("physics step must be <= 2e-4 s")
    motor = MotorModel(params.f_max, params.wire_speed_max, derating=False)
    phys = pack_physics(params, ground, motor)
    qg, vg = ss.generalized()
    q, v, *_ = integrate(qg, vg, np.asarray(f_actual, dtype=float), np.zeros(3), dt, 1, phys,
                         params.body_anchor_array, params.leg_anchor_array,
                         params.landing_point_array)
    return SimState.from_generalized(q, v, ss.time + dt)


def seated_state(params: RobotParams) -> SimState:
    """Resting on the landing points, leg vertical, foot touching the ground."""
    lp = params.landing_point_array
    height = -float(lp[:, 2].min())
    return SimState(
        body_pos=np.array([0.0, 0.0, height]),
        body_vel=np.zeros(3),
        body_rpy=np.zeros(2),
        body_ang_vel=np.zeros(2),
        joints=JointState(np.array([0.0, 0.0, height]), np.zeros(3)),
    )


# ---------------------------------------------------------------------------
# sensors


@dataclass(frozen=True)
class NoiseConfig:
    sigma_length: float = 0.0  # m
    sigma_wire_speed: float = 0.0  # m/s
    sigma_rpy: float = 0.0  # rad
    sigma_ang_vel: float = 0.0  # rad/s
    sigma_v_h: float = 0.0  # m/s
    v_h_delay_ticks: int = 0


@dataclass
class SensorBundle:
    joints_est: JointState
    body_rpy: np.ndarray
    body_ang_vel: np.ndarray
    v_h: np.ndarray


class SensorSynth:
    """Synthetic encoders, IMU attitude and odometry velocity."""

    def __init__(self, params: RobotParams, noise: NoiseConfig = NoiseConfig(),
                 rng: np.random.Generator | None = None):
        self.noise = noise
        self.rng = rng or np.random.default_rng(0)
        self.anchors_body = params.body_anchor_array
        self.anchors_leg = params.leg_anchor_array
        self._vh_buffer: deque = deque()

    def _gauss(self, sigma: float, n: int) -> np.ndarray:
        if sigma <= 0.0:
            return np.zeros(n)
        return self.rng.normal(0.0, sigma, n)

    def sample(self, ss: SimState):
        """Returns (bundle without joint estimate, wire lengths, wire speeds)."""
        nz = self.noise
        lengths, jm = lengths_and_jacobian(ss.joints.q, self.anchors_body, self.anchors_leg)
        l_dot = jm @ ss.joints.q_dot
        lengths = lengths + self._gauss(nz.sigma_length, 6)
        l_dot = l_dot + self._gauss(nz.sigma_wire_speed, 6)
        rpy = ss.body_rpy + self._gauss(nz.sigma_rpy, 2)
        omega = ss.body_ang_vel + self._gauss(nz.sigma_ang_vel, 2)
        v_true = ss.v_horizontal
        self._vh_buffer.append(v_true)
        if len(self._vh_buffer) > nz.v_h_delay_ticks + 1:
            self._vh_buffer.popleft()
        v_h = self._vh_buffer[0] + self._gauss(nz.sigma_v_h, 2)
        bundle = SensorBundle(JointState(np.full(3, np.nan), np.full(3, np.nan)), rpy, omega, v_h)
        return bundle, lengths, l_dot


def synth_sensors(ss: SimState, noise_cfg: NoiseConfig, params: RobotParams,
                  synth: SensorSynth | None = None):
    """Functional wrapper around SensorSynth for one-off samples."""
    synth = synth or SensorSynth(params, noise_cfg)
    return synth.sample(ss)
