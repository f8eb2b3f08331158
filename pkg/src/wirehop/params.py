"""Physical parameters, shared state types and config handling.

Conventions: SI units, world Z up, body frame origin at the gimbal centre.
The leg frame has its origin at the foot with the leg axis along +Z (foot to
top); the joint transform ``Rx(roll) @ Ry(pitch) @ Trans(0, 0, -slide)`` maps
leg-frame points into the body frame, so ``slide`` is the gimbal-to-foot
distance.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, fields, replace
from pathlib import Path
from typing import Any, Mapping

import numpy as np

N_WIRES = 6
UPPER_WIRES = (0, 1, 2)
LOWER_WIRES = (3, 4, 5)


class ConfigError(ValueError):
    """Raised when a configuration cannot be turned into valid parameters."""


def _ring(radius: float, height: float, azimuths_deg: tuple[float, ...]) -> tuple:
    return tuple(
        (
            round(radius * math.cos(math.radians(a)), 12),
            round(radius * math.sin(math.radians(a)), 12),
            height,
        )
        for a in azimuths_deg
    )


# Upper wires run from a ring in the gimbal plane up to the top of the leg
# (extension / thrust); lower wires run from a ring above the gimbal down to
# the foot (retraction). Keeping the upper ring in the gimbal plane means the
# leg axis always passes through it, so the wires straddle the leg at any
# tilt. Azimuth sets are symmetric under y -> -y.
UPPER_AZIMUTHS = (0.0, 120.0, 240.0)
LOWER_AZIMUTHS = (60.0, 180.0, 300.0)
DEFAULT_ANCHORS_BODY = _ring(0.27, 0.0, UPPER_AZIMUTHS) + _ring(0.27, 0.10, LOWER_AZIMUTHS)
DEFAULT_ANCHORS_LEG = _ring(0.02, 1.07, UPPER_AZIMUTHS) + _ring(0.02, 0.0, LOWER_AZIMUTHS)
DEFAULT_LANDING_POINTS = (
    (0.20, 0.0, -0.25),
    (-0.20, 0.0, -0.25),
    (0.0, 0.20, -0.25),
    (0.0, -0.20, -0.25),
)


@dataclass(frozen=True)
class RobotParams:
    body_mass: float = 9.8
    leg_mass: float = 0.5
    body_inertia: float = 0.225
    leg_inertia: float = 0.074
    # not published; a thin pipe has almost no inertia about its own axis
    leg_axial_inertia: float = 0.002
    # leg CoG height above the foot, leg frame
    leg_cog: float = 0.55
    slide_range: tuple[float, float] = (0.0, 0.8)
    roll_range: tuple[float, float] = (-0.79, 0.79)
    pitch_range: tuple[float, float] = (-0.79, 0.79)
    f_min: float = 5.0
    f_max: float = 230.0
    wire_speed_max: float = 10.7
    # documentation only; the motor model caps at wire_speed_max
    slide_speed_no_load: float = 15.0
    gear_ratio: float = 2.5
    pulley_radius: float = 0.010
    gravity: float = 9.81
    anchors_body: tuple = DEFAULT_ANCHORS_BODY
    anchors_leg: tuple = DEFAULT_ANCHORS_LEG
    landing_points: tuple = DEFAULT_LANDING_POINTS

    @property
    def total_mass(self) -> float:
        return self.body_mass + self.leg_mass

    @property
    def max_slide_force(self) -> float:
        """Upper wires pulling in parallel along the slide axis."""
        return len(UPPER_WIRES) * self.f_max

    @property
    def body_anchor_array(self) -> np.ndarray:
        return np.array(self.anchors_body, dtype=float)

    @property
    def leg_anchor_array(self) -> np.ndarray:
        return np.array(self.anchors_leg, dtype=float)

    @property
    def landing_point_array(self) -> np.ndarray:
        return np.array(self.landing_points, dtype=float)

    @property
    def joint_lower(self) -> np.ndarray:
        return np.array([self.roll_range[0], self.pitch_range[0], self.slide_range[0]])

    @property
    def joint_upper(self) -> np.ndarray:
        return np.array([self.roll_range[1], self.pitch_range[1], self.slide_range[1]])


@dataclass
class JointState:
    q: np.ndarray  # (roll rad, pitch rad, slide m)
    q_dot: np.ndarray

    @property
    def slide(self) -> float:
        return float(self.q[2])

    @property
    def slide_rate(self) -> float:
        return float(self.q_dot[2])


class WireVector(np.ndarray):
    """Six per-wire values (lengths, rates or tensions)."""

    def __new__(cls, values, tension: bool = False):
        arr = np.asarray(values, dtype=float).reshape(-1)
        if arr.shape != (N_WIRES,):
            raise ValueError(f"wire vector needs {N_WIRES} entries, got {arr.size}")
        if tension and np.any(arr < 0.0):
            raise ValueError("tensions must be non-negative")
        return arr.view(cls)


@dataclass
class SimState:
    body_pos: np.ndarray
    body_vel: np.ndarray
    body_rpy: np.ndarray  # (roll, pitch); yaw is fixed at zero
    body_ang_vel: np.ndarray  # (roll rate, pitch rate)
    joints: JointState
    time: float = 0.0

    def generalized(self) -> tuple[np.ndarray, np.ndarray]:
        """Pack into the 8 generalized coordinates and their rates."""
        qg = np.concatenate([self.body_pos, self.body_rpy, self.joints.q])
        vg = np.concatenate([self.body_vel, self.body_ang_vel, self.joints.q_dot])
        return qg, vg

    @classmethod
    def from_generalized(cls, qg: np.ndarray, vg: np.ndarray, time: float) -> "SimState":
        qg = np.asarray(qg, dtype=float)
        vg = np.asarray(vg, dtype=float)
        return cls(
            body_pos=qg[0:3].copy(),
            body_vel=vg[0:3].copy(),
            body_rpy=qg[3:5].copy(),
            body_ang_vel=vg[3:5].copy(),
            joints=JointState(qg[5:8].copy(), vg[5:8].copy()),
            time=float(time),
        )

    @property
    def v_horizontal(self) -> np.ndarray:
        return self.body_vel[:2].copy()


def _as_range(name: str, value: Any) -> tuple[float, float]:
    try:
        lo, hi = (float(v) for v in value)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{name}: expected [min, max]") from exc
    if not lo < hi:
        raise ConfigError(f"{name}: inverted range [{lo}, {hi}]")
    return lo, hi


def _as_points(name: str, value: Any, count: int | None) -> tuple:
    try:
        pts = tuple(tuple(float(c) for c in p) for p in value)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{name}: expected a list of 3D points") from exc
    if count is not None and len(pts) != count:
        raise ConfigError(f"{name}: anchor count must be {count}, got {len(pts)}")
    if any(len(p) != 3 for p in pts):
        raise ConfigError(f"{name}: every point needs 3 coordinates")
    if not np.all(np.isfinite(pts)):
        raise ConfigError(f"{name}: non-finite coordinate")
    return pts


_POSITIVE = (
    "body_mass", "leg_mass", "body_inertia", "leg_inertia", "leg_axial_inertia",
    "f_max", "wire_speed_max", "slide_speed_no_load", "gear_ratio",
    "pulley_radius", "gravity",
)


def validate_params(raw: Mapping[str, Any] | None) -> RobotParams:
    """Build RobotParams from a parsed config mapping; missing keys take defaults."""
    raw = dict(raw or {})
    known = {f.name for f in fields(RobotParams)}
    unknown = set(raw) - known
    if unknown:
        raise ConfigError(f"unknown robot parameter(s): {sorted(unknown)}")

    kw: dict[str, Any] = {}
    for name in known & set(raw):
        value = raw[name]
        if name in ("slide_range", "roll_range", "pitch_range"):
            kw[name] = _as_range(name, value)
        elif name in ("anchors_body", "anchors_leg"):
            kw[name] = _as_points(name, value, N_WIRES)
        elif name == "landing_points":
            kw[name] = _as_points(name, value, None)
        else:
            try:
                kw[name] = float(value)
            except (TypeError, ValueError) as exc:
                raise ConfigError(f"{name}: expected a number") from exc
            if not math.isfinite(kw[name]):
                raise ConfigError(f"{name}: must be finite")

    params = replace(RobotParams(), **kw)
    for name in _POSITIVE:
        if getattr(params, name) <= 0.0:
            raise ConfigError(f"{name} must be positive")
    if params.f_min <= 0.0:
        raise ConfigError("f_min must be positive")
    if params.f_min >= params.f_max:
        raise ConfigError("f_min must be below f_max")
    if params.slide_range[0] < 0.0:
        raise ConfigError("slide_range must be non-negative")
    return params


def default_params() -> RobotParams:
    return RobotParams()


def params_to_dict(params: RobotParams) -> dict[str, Any]:
    out = asdict(params)
    for key, value in out.items():
        if isinstance(value, tuple):
            out[key] = json.loads(json.dumps(value))
    return out


# ---------------------------------------------------------------------------
# Config files: {"robot": {...}, "controller": {...}, "ekf": {...},
# "sim": {...}, "run": {...}}; every section and key is optional.

CONFIG_SECTIONS = ("robot", "controller", "ekf", "sim", "run")


def load_config(path: str | Path | None) -> dict[str, dict[str, Any]]:
    if path is None:
        return {s: {} for s in CONFIG_SECTIONS}
    try:
        raw = json.loads(Path(path).read_text())
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config {path} is not valid JSON: {exc}") from exc
    if not isinstance(raw, dict):
        raise ConfigError("config root must be an object")
    extra = set(raw) - set(CONFIG_SECTIONS)
    if extra:
        raise ConfigError(f"unknown config section(s): {sorted(extra)}")
    out = {s: dict(raw.get(s) or {}) for s in CONFIG_SECTIONS}
    return out


def dataclass_from_section(cls, section: Mapping[str, Any], label: str):
    """Overlay a config section on a (non-nested) dataclass's defaults."""
    names = {f.name: f for f in fields(cls)}
    unknown = set(section) - set(names)
    if unknown:
        raise ConfigError(f"unknown {label} key(s): {sorted(unknown)}")
    kw = {}
    base = cls()
    for key, value in section.items():
        current = getattr(base, key)
        try:
            if isinstance(current, bool):
                kw[key] = bool(value)
            elif isinstance(current, tuple):
                kw[key] = tuple(float(v) for v in value)
            elif isinstance(current, (int, float)) and not isinstance(current, bool):
                kw[key] = type(current)(value)
            else:
                kw[key] = value
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"{label}.{key}: bad value {value!r}") from exc
    return replace(base, **kw)


__all__ = [
    "ConfigError", "JointState", "LOWER_WIRES", "N_WIRES", "RobotParams",
    "SimState", "UPPER_WIRES", "WireVector", "default_params", "load_config",
    "params_to_dict", "validate_params", "dataclass_from_section",
]
