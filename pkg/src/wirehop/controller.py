"""Hopping state machine: launch, continuous hopping, stop.

Stance: body-levelling PD on the rotational joints, and on the slide a
constant thrust plus an energy-shaping term. Flight: slide held at the
flight length, leg swung to a Raibert-style foot target. Every joint-force
command is turned into wire tensions by the least-norm tension QP.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from enum import Enum

import numpy as np

from .geometry import GeometryModel
from .params import JointState, RobotParams
from .sim import SensorBundle
from .tension import solve_tensions, solve_with_fallback

PHASE_LATCH = 0.010  # s; minimum dwell before the phase may flip again
SLIDE_HEADROOM = 0.9


class Phase(str, Enum):
    STANCE = "stance"
    FLIGHT = "flight"


class Mode(str, Enum):
    LAUNCH = "launch"
    HOP = "hop"
    STOP = "stop"


@dataclass(frozen=True)
class ControllerConfig:
    foot_gain: float = 0.16  # s, foot offset per unit horizontal speed
    kp_rot: float = 200.0
    kd_rot: float = 10.0
    kp_flight: float = 150.0
    kd_flight: float = 8.0
    # the slide must stop within the phase band after takeoff, so it is stiffer
    kp_slide_flight: float = 3000.0
    kd_slide_flight: float = 120.0
    k_energy: float = 10.0
    thrust_ff: float = 300.0
    t_launch: float = 0.15
    epsilon: float = 0.01
    x0: float = 0.7
    d_stop: float = 400.0
    command_height: float = 0.3
    # "compression": energy measured from the flight length (regulates height);
    # "literal": slide extension used directly
    energy_convention: str = "compression"
    # scale takeoff slide speed so the CoG, after picking up the leg, hits the target
    leg_pickup_correction: bool = True
    fall_angle: float = 0.6  # rad of body tilt that triggers Stop
    max_hops: int = 0  # 0 = unlimited; Stop after this many flights
    qp_upper_bound: bool = False

    def __post_init__(self):
        if not 0.0 < self.epsilon < 0.8:
            raise ValueError("epsilon must lie inside the slide stroke")
        for name in ("kp_rot", "kd_rot", "kp_flight", "kd_flight", "kp_slide_flight",
                     "kd_slide_flight", "k_energy", "thrust_ff", "t_launch", "d_stop",
                     "command_height", "foot_gain"):
            value = getattr(self, name)
            if not math.isfinite(value) or value < 0.0:
                raise ValueError(f"{name} must be finite and non-negative")
        if self.energy_convention not in ("compression", "literal"):
            raise ValueError("energy_convention must be 'compression' or 'literal'")


@dataclass
class ControllerState:
    cfg: ControllerConfig
    mode: Mode = Mode.LAUNCH
    phase: Phase = Phase.STANCE
    x_dot_des: float = 0.0
    mode_start: float = 0.0
    last_phase_change: float = -math.inf
    flight_count: int = 0
    touchdown: bool = False  # set on the tick a Flight -> Stance change happens
    fall_detected: bool = False
    qp_fallback: bool = False
    qp_scale: float = 1.0
    tau_cmd: np.ndarray = field(default_factory=lambda: np.zeros(3))
    f_cmd: np.ndarray = field(default_factory=lambda: np.zeros(6))

    @property
    def x0(self) -> float:
        return self.cfg.x0

    @property
    def epsilon(self) -> float:
        return self.cfg.epsilon


def takeoff_speed(height: float, params: RobotParams, leg_pickup: bool = True) -> float:
    """Slide extension speed at takeoff for a CoG rise of ``height``.

    After takeoff the body shares its momentum with the leg it lifts, so the
    CoG leaves at m_B/M of the slide speed.
    """
    v = math.sqrt(2.0 * params.gravity * max(height, 0.0))
    if leg_pickup:
        v *= params.total_mass / params.body_mass
    return v


def make_controller(params: RobotParams, cfg: ControllerConfig = ControllerConfig(),
                    t0: float = 0.0) -> ControllerState:
    if not params.slide_range[0] <= cfg.x0 <= params.slide_range[1]:
        raise ValueError("x0 outside slide range")
    return ControllerState(cfg=cfg, mode_start=t0,
                           x_dot_des=takeoff_speed(cfg.command_height, params,
                                                   cfg.leg_pickup_correction))


def raw_phase(x: float, x0: float, epsilon: float) -> Phase:
    return Phase.FLIGHT if abs(x - x0) < epsilon else Phase.STANCE


def detect_phase(x: float, cs: ControllerState, t: float | None = None) -> Phase:
    """Phase from slide position; a change is held off until the latch expires."""
    candidate = raw_phase(x, cs.cfg.x0, cs.cfg.epsilon)
    if t is not None and candidate != cs.phase and t - cs.last_phase_change < PHASE_LATCH:
        return cs.phase
    return candidate


def mechanical_energy(x: float, x_dot: float, cs: ControllerState, params: RobotParams) -> float:
    m_b, g, f_ff = params.body_mass, params.gravity, cs.cfg.thrust_ff
    if cs.cfg.energy_convention == "literal":
        return 0.5 * m_b * x_dot ** 2 + f_ff * x - m_b * g * (x - cs.cfg.x0)
    # compression below the length at which the phase detector ends stance
    c = cs.cfg.x0 - cs.cfg.epsilon - x
    return 0.5 * m_b * x_dot ** 2 + f_ff * c - m_b * g * c


def desired_energy(cs: ControllerState, params: RobotParams) -> float:
    return 0.5 * params.body_mass * cs.x_dot_des ** 2


def energy_feedback(x: float, x_dot: float, cs: ControllerState, params: RobotParams) -> float:
    error = desired_energy(cs, params) - mechanical_energy(x, x_dot, cs, params)
    return cs.cfg.k_energy * error * x_dot


def _level_body(sb: SensorBundle, cfg: ControllerConfig) -> np.ndarray:
    # with the foot planted, joint torque reacts on the body with opposite
    # sign, so the joint command follows the body error directly
    return cfg.kp_rot * np.asarray(sb.body_rpy) + cfg.kd_rot * np.asarray(sb.body_ang_vel)


def _clamp_slide(force: float, params: RobotParams) -> float:
    return min(max(force, 0.0), SLIDE_HEADROOM * params.max_slide_force)


def stance_control(sb: SensorBundle, cs: ControllerState, params: RobotParams,
                   feedback: bool = True) -> np.ndarray:
    tau = np.zeros(3)
    tau[:2] = _level_body(sb, cs.cfg)
    force = cs.cfg.thrust_ff
    if feedback:
        force += energy_feedback(sb.joints_est.slide, sb.joints_est.slide_rate, cs, params)
    tau[2] = _clamp_slide(force, params)
    return tau


def foot_target(v_h, k: float, x0: float = 0.7, max_angle: float = 0.79) -> np.ndarray:
    p0 = k * np.asarray(v_h, dtype=float)
    return np.clip(p0, -x0 * math.sin(max_angle), x0 * math.sin(max_angle))


def foot_angles(p0, body_rpy, x0: float, max_angle: float = 0.79) -> np.ndarray:
    """Joint (roll, pitch) putting the foot at horizontal offset p0 below the gimbal.

    Positive joint roll swings the foot to +Y, positive pitch swings it to -X.
    """
    lim = math.sin(max_angle)
    sx = min(max(p0[0] / x0, -lim), lim)
    sy = min(max(p0[1] / x0, -lim), lim)
    roll = math.asin(sy) - body_rpy[0]
    pitch = -math.asin(sx) - body_rpy[1]
    return np.array([roll, pitch])


def _max_angle(params: RobotParams) -> float:
    return min(params.roll_range[1], -params.roll_range[0],
               params.pitch_range[1], -params.pitch_range[0])


def flight_control(sb: SensorBundle, cs: ControllerState, params: RobotParams) -> np.ndarray:
    cfg = cs.cfg
    q, q_dot = sb.joints_est.q, sb.joints_est.q_dot
    amax = _max_angle(params)
    p0 = foot_target(sb.v_h, cfg.foot_gain, cfg.x0, amax)
    target = foot_angles(p0, sb.body_rpy, cfg.x0, amax)
    target = np.clip(target, params.joint_lower[:2], params.joint_upper[:2])
    tau = np.zeros(3)
    tau[:2] = cfg.kp_flight * (target - q[:2]) - cfg.kd_flight * q_dot[:2]
    tau[2] = cfg.kp_slide_flight * (cfg.x0 - q[2]) - cfg.kd_slide_flight * q_dot[2]
    return tau


def stop_control(sb: SensorBundle, cs: ControllerState, params: RobotParams) -> np.ndarray:
    cfg = cs.cfg
    q, q_dot = sb.joints_est.q, sb.joints_est.q_dot
    tau = np.zeros(3)
    tau[:2] = -cfg.kp_flight * q[:2] - cfg.kd_flight * q_dot[:2]
    tau[2] = -cfg.d_stop * q_dot[2]
    return tau


def tensions_for(tau, q, geom: GeometryModel, params: RobotParams, cs: ControllerState):
    """Map joint force to tensions; on infeasibility shrink tau until it fits."""
    J = geom.evaluate(np.asarray(q, dtype=float))[1]
    f_max = params.f_max if cs.cfg.qp_upper_bound else None
    sol = solve_tensions(tau, J, params.f_min, f_max)
    if sol.optimal:
        return sol.f, 1.0, False
    sol, scale = solve_with_fallback(tau, J, params.f_min, f_max)
    return sol.f, scale, True


def controller_step(cs: ControllerState, sb: SensorBundle, t: float, dt: float,
                    geom: GeometryModel, params: RobotParams):
    """One control tick. Returns (tensions, updated state)."""
    if dt <= 0.0:
        raise ValueError("dt must be positive")
    cfg = cs.cfg
    cs = replace(cs, touchdown=False, qp_fallback=False, qp_scale=1.0)
    x = sb.joints_est.slide

    rpy = np.asarray(sb.body_rpy)
    if cs.mode != Mode.STOP and np.max(np.abs(rpy)) > cfg.fall_angle:
        cs = replace(cs, mode=Mode.STOP, mode_start=t, fall_detected=True)

    phase = detect_phase(x, cs, t)
    if phase != cs.phase:
        cs = replace(cs, phase=phase, last_phase_change=t,
                     touchdown=phase == Phase.STANCE)
        if phase == Phase.FLIGHT:
            cs = replace(cs, flight_count=cs.flight_count + 1)
            if cs.mode == Mode.LAUNCH:
                cs = replace(cs, mode=Mode.HOP, mode_start=t)
    if (cs.mode == Mode.HOP and cfg.max_hops > 0 and cs.flight_count >= cfg.max_hops
            and cs.phase == Phase.STANCE):
        cs = replace(cs, mode=Mode.STOP, mode_start=t)

    # corrupt sensor values may produce NaN here; they are zeroed just below
    with np.errstate(invalid="ignore", over="ignore"):
        if cs.mode == Mode.LAUNCH:
            if cs.phase == Phase.FLIGHT:
                tau = flight_control(sb, cs, params)
            else:
                tau = stance_control(sb, cs, params, feedback=t - cs.mode_start >= cfg.t_launch)
        elif cs.mode == Mode.HOP:
            if cs.phase == Phase.STANCE:
                tau = stance_control(sb, cs, params)
            else:
                tau = flight_control(sb, cs, params)
        else:
            tau = stop_control(sb, cs, params)

    tau = np.where(np.isfinite(tau), tau, 0.0)
    f, scale, fallback = tensions_for(tau, sb.joints_est.q, geom, params, cs)
    f = np.maximum(np.where(np.isfinite(f), f, params.f_min), params.f_min)
    cs = replace(cs, tau_cmd=tau, f_cmd=f, qp_fallback=fallback, qp_scale=scale)
    return f, cs


def bundle_from_estimate(q, q_dot, body_rpy, body_ang_vel, v_h) -> SensorBundle:
    return SensorBundle(JointState(np.asarray(q, float), np.asarray(q_dot, float)),
                        np.asarray(body_rpy, float), np.asarray(body_ang_vel, float),
                        np.asarray(v_h, float))
