"""Closed-loop experiment runner, trajectory log, jump metrics and plots."""

from __future__ import annotations

import csv
import io
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .controller import (ControllerConfig, Mode, Phase, bundle_from_estimate,
                         controller_step, make_controller)
from .ekf import EkfConfig, JointEstimator
from .geometry import GeometryModel
from .params import (ConfigError, JointState, RobotParams, SimState, dataclass_from_section,
                     load_config, validate_params)
from .sim import (DivergenceError, GroundModel, JointStops, MotorModel, NoiseConfig,
                  SensorSynth, Simulator, cog_position, cog_velocity, seated_state)

log = logging.getLogger(__name__)

SCHEMA_VERSION = 1
COLUMNS = (
    ["t"]
    + [f"body_{a}" for a in "xyz"] + [f"body_v{a}" for a in "xyz"]
    + ["body_roll", "body_pitch", "body_roll_rate", "body_pitch_rate"]
    + ["q_roll", "q_pitch", "q_slide", "qd_roll", "qd_pitch", "qd_slide"]
    + ["est_roll", "est_pitch", "est_slide", "est_roll_rate", "est_pitch_rate", "est_slide_rate"]
    + ["phase", "mode"]
    + ["tau_roll", "tau_pitch", "tau_slide"]
    + [f"f_cmd_{i}" for i in range(6)] + [f"f_act_{i}" for i in range(6)]
    + ["foot_normal", "body_normal", "v_h_x", "v_h_y"]
    + ["cog_x", "cog_y", "cog_z", "cog_vz", "qp_fallback", "fall"]
)
_COL = {name: i for i, name in enumerate(COLUMNS)}
_TEXT_COLUMNS = ("phase", "mode")
MAX_DURATION = 300.0

# noise profile scaled by the --noise flag
DEFAULT_NOISE = NoiseConfig(sigma_length=1e-4, sigma_wire_speed=1e-3, sigma_rpy=2e-3,
                            sigma_ang_vel=1e-2, sigma_v_h=2e-2, v_h_delay_ticks=5)


@dataclass(frozen=True)
class SimConfig:
    dt: float = 1e-4
    control_dt: float = 1e-3
    ground_stiffness: float = 1.0e5
    ground_damping: float = -1.0  # negative: critical damping from total mass
    friction_mu: float = 0.8
    motor_derating: bool = True
    noise_scale: float = 0.0
    use_ekf: bool = True
    initial_height: float = 0.0  # extra drop height for the seated start
    initial_v_h: tuple = (0.0, 0.0)


@dataclass(frozen=True)
class RunConfig:
    seed: int = 0
    duration: float = 20.0


@dataclass
class Experiment:
    params: RobotParams
    controller: ControllerConfig
    ekf: EkfConfig
    sim: SimConfig
    run: RunConfig


def build_experiment(config_path=None, **overrides) -> Experiment:
    """Read a JSON config (all optional) and apply keyword overrides.

    Overrides take the form ``section__key=value``, e.g. ``controller__command_height=0.5``.
    """
    raw = load_config(config_path)
    for key, value in overrides.items():
        section, _, name = key.partition("__")
        if section not in raw or not name:
            raise ConfigError(f"bad override {key}")
        raw[section][name] = value
    params = validate_params(raw["robot"])
    try:
        ctrl = dataclass_from_section(ControllerConfig, raw["controller"], "controller")
        ekf = dataclass_from_section(EkfConfig, raw["ekf"], "ekf")
        sim = dataclass_from_section(SimConfig, raw["sim"], "sim")
        run = dataclass_from_section(RunConfig, raw["run"], "run")
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    if not 0.0 <= run.duration <= MAX_DURATION:
        raise ConfigError(f"duration must be within [0, {MAX_DURATION}] s")
    if sim.dt > 2e-4 or sim.dt <= 0.0:
        raise ConfigError("sim.dt must be in (0, 2e-4]")
    if sim.control_dt < sim.dt:
        raise ConfigError("sim.control_dt must not be below sim.dt")
    return Experiment(params, ctrl, ekf, sim, run)


@dataclass
class TrajectoryLog:
    """Per-control-tick records; numeric columns in ``data``, phase/mode as text."""

    data: np.ndarray = field(default_factory=lambda: np.zeros((0, len(COLUMNS))))
    text: list = field(default_factory=list)  # (phase, mode) per row
    diverged: str | None = None

    def __len__(self) -> int:
        return self.data.shape[0]

    def column(self, name: str) -> np.ndarray:
        if name in _TEXT_COLUMNS:
            k = _TEXT_COLUMNS.index(name)
            return np.array([row[k] for row in self.text], dtype=object)
        return self.data[:, _COL[name]]

    @property
    def fall_detected(self) -> bool:
        return bool(len(self) and self.data[-1, _COL["fall"]] > 0.5)

    def to_csv(self, path_or_buf) -> None:
        own = isinstance(path_or_buf, (str, Path))
        fh = open(path_or_buf, "w", newline="") if own else path_or_buf
        try:
            fh.write(f"# wirehop trajectory schema {SCHEMA_VERSION}\n")
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(COLUMNS)
            for row, (phase, mode) in zip(self.data, self.text):
                out = [repr(float(v)) for v in row]
                out[_COL["phase"]] = phase
                out[_COL["mode"]] = mode
                w.writerow(out)
        finally:
            if own:
                fh.close()

    def to_csv_text(self) -> str:
        buf = io.StringIO()
        self.to_csv(buf)
        return buf.getvalue()

    @classmethod
    def from_csv(cls, path) -> "TrajectoryLog":
        with open(path, newline="") as fh:
            first = fh.readline()
            if not first.startswith("# wirehop trajectory schema"):
                raise ValueError("missing schema header")
            version = int(first.split()[-1])
            if version != SCHEMA_VERSION:
                raise ValueError(f"unsupported schema version {version}")
            reader = csv.reader(fh)
            header = next(reader)
            if tuple(header) != tuple(COLUMNS):
                raise ValueError("column layout does not match schema")
            rows, text = [], []
            for r in reader:
                phase, mode = r[_COL["phase"]], r[_COL["mode"]]
                r[_COL["phase"]] = "nan"
                r[_COL["mode"]] = "nan"
                rows.append([float(v) for v in r])
                text.append((phase, mode))
        data = np.array(rows, dtype=float).reshape(-1, len(COLUMNS))
        return cls(data, text)

    @classmethod
    def from_columns(cls, t, cog_z, foot_normal, **extra) -> "TrajectoryLog":
        """Build a log from a few columns (the rest zero); handy for fixtures."""
        t = np.asarray(t, dtype=float)
        data = np.zeros((t.size, len(COLUMNS)))
        data[:, _COL["t"]] = t
        data[:, _COL["cog_z"]] = cog_z
        data[:, _COL["foot_normal"]] = foot_normal
        for name, values in extra.items():
            data[:, _COL[name]] = values
        phases = ["stance" if fn > 0 else "flight" for fn in np.asarray(foot_normal)]
        return cls(data, [(p, "hop") for p in phases])


@dataclass
class HopRecord:
    takeoff_time: float
    takeoff_height: float
    apex_height: float
    takeoff_speed: float
    landed: bool

    @property
    def jump_height(self) -> float:
        return self.apex_height - self.takeoff_height


@dataclass
class JumpMetrics:
    cog_takeoff_height: float
    cog_apex_height: float
    cog_jump_height: float
    hop_count: int
    takeoff_speed: float
    fall_detected: bool
    hops: list = field(default_factory=list)


def find_hops(log: TrajectoryLog, min_flight: float = 0.02) -> list[HopRecord]:
    """Airborne intervals of the foot contact force.

    Takeoff is the first tick with zero foot force after a loaded tick. Gaps
    shorter than ``min_flight`` (contact chatter at impact) are not hops.
    """
    if len(log) == 0:
        return []
    t = log.column("t")
    z = log.column("cog_z")
    vz = log.column("cog_vz")
    fn = log.column("foot_normal")
    loaded = fn > 0.0
    hops = []
    i = 1
    n = len(t)
    while i < n:
        if loaded[i - 1] and not loaded[i]:
            j = i
            while j < n and not loaded[j]:
                j += 1
            if t[min(j, n - 1)] - t[i] >= min_flight or j == n:
                apex = float(np.max(z[i:j]))
                hops.append(HopRecord(float(t[i]), float(z[i]), apex, float(vz[i]), j < n))
            i = j
        else:
            i += 1
    return hops


def analyze_jump(log: TrajectoryLog) -> JumpMetrics:
    hops = find_hops(log)
    fall = log.fall_detected
    if not hops:
        return JumpMetrics(0.0, 0.0, 0.0, 0, 0.0, fall, [])
    best = max(hops, key=lambda h: h.jump_height)
    return JumpMetrics(best.takeoff_height, best.apex_height, best.jump_height, len(hops),
                       best.takeoff_speed, fall, hops)


def theoretical_apex(v: float, g: float = 9.81) -> float:
    if v < 0.0:
        raise ValueError("speed must be non-negative")
    return v * v / (2.0 * g)


def initial_state(exp: Experiment) -> SimState:
    ss = seated_state(exp.params)
    ss.body_pos[2] += exp.sim.initial_height
    ss.body_vel[:2] = exp.sim.initial_v_h
    return ss


def run_experiment(exp: Experiment, seed: int | None = None,
                   duration: float | None = None, initial: SimState | None = None,
                   hook=None, start_mode: Mode | None = None) -> TrajectoryLog:
    """Sim -> sensors -> EKF -> controller -> tensions, at the control rate.

    ``hook(t, sim, cs)`` is called every tick (tests use it to inject faults).
    """
    seed = exp.run.seed if seed is None else seed
    duration = exp.run.duration if duration is None else duration
    if not 0.0 <= duration <= MAX_DURATION:
        raise ConfigError(f"duration must be within [0, {MAX_DURATION}] s")
    params, sc = exp.params, exp.sim
    ground = GroundModel(sc.ground_stiffness, None if sc.ground_damping < 0 else sc.ground_damping,
                         sc.friction_mu)
    motor = MotorModel.from_params(params, derating=sc.motor_derating)
    ss0 = initial if initial is not None else initial_state(exp)
    sim = Simulator(params, ss0, ground, motor, sc.dt, JointStops())
    geom = GeometryModel.from_params(params)
    rng = np.random.default_rng(seed)
    s = sc.noise_scale
    noise = NoiseConfig(DEFAULT_NOISE.sigma_length * s, DEFAULT_NOISE.sigma_wire_speed * s,
                        DEFAULT_NOISE.sigma_rpy * s, DEFAULT_NOISE.sigma_ang_vel * s,
                        DEFAULT_NOISE.sigma_v_h * s, DEFAULT_NOISE.v_h_delay_ticks if s > 0 else 0)
    synth = SensorSynth(params, noise, rng)
    est = JointEstimator(geom, ss0.joints.q, exp.ekf)
    cs = make_controller(params, exp.controller, ss0.time)
    if start_mode is not None:
        cs.mode = Mode(start_mode)

    n_ticks = int(round(duration / sc.control_dt))
    rows = np.zeros((n_ticks, len(COLUMNS)))
    text = []
    out = TrajectoryLog(rows, text)
    touchdown = False
    for k in range(n_ticks):
        ss = sim.state
        bundle, lengths, speeds = synth.sample(ss)
        if sc.use_ekf:
            e = est.step(lengths, speeds, sc.control_dt, touchdown)
            q_hat, qd_hat = e.q, e.q_dot
        else:
            q_hat, qd_hat = ss.joints.q.copy(), ss.joints.q_dot.copy()
        sb = bundle_from_estimate(q_hat, qd_hat, bundle.body_rpy, bundle.body_ang_vel, bundle.v_h)
        f_cmd, cs = controller_step(cs, sb, ss.time, sc.control_dt, geom, params)
        touchdown = cs.touchdown
        if hook is not None:
            hook(ss.time, sim, cs)
        try:
            info = sim.advance(f_cmd, sc.control_dt)
        except DivergenceError as exc:
            out.data = rows[:k]
            out.diverged = str(exc)
            raise
        _fill_row(rows[k], sim, params, q_hat, qd_hat, cs, f_cmd, info, sb.v_h)
        text.append((cs.phase.value, cs.mode.value))
    return out


def _fill_row(row, sim, params, q_hat, qd_hat, cs, f_cmd, info, v_h):
    ss = sim.state
    row[0] = ss.time
    row[1:4] = ss.body_pos
    row[4:7] = ss.body_vel
    row[7:9] = ss.body_rpy
    row[9:11] = ss.body_ang_vel
    row[11:14] = ss.joints.q
    row[14:17] = ss.joints.q_dot
    row[17:20] = q_hat
    row[20:23] = qd_hat
    row[25:28] = cs.tau_cmd
    row[28:34] = f_cmd
    row[34:40] = info.f_actual
    row[40] = info.foot_normal
    row[41] = info.body_normal
    row[42:44] = v_h
    row[44:47] = cog_position(ss, params)
    row[47] = cog_velocity(ss, params)[2]
    row[48] = float(cs.qp_fallback)
    row[49] = float(cs.fall_detected)


def run_simulation(config_path=None, seed: int | None = None, duration: float | None = None,
                   out: str | Path | None = None, **overrides) -> TrajectoryLog:
    exp = build_experiment(config_path, **overrides)
    result = run_experiment(exp, seed, duration)
    if out is not None:
        result.to_csv(out)
    return result


# ---------------------------------------------------------------------------
# plots


def _flight_bands(log: TrajectoryLog) -> list[tuple[float, float]]:
    return [(h.takeoff_time, _landing_time(log, h)) for h in find_hops(log)]


def _landing_time(log: TrajectoryLog, hop: HopRecord) -> float:
    t = log.column("t")
    fn = log.column("foot_normal")
    after = np.nonzero((t > hop.takeoff_time) & (fn > 0.0))[0]
    return float(t[after[0]]) if after.size else float(t[-1])


def emit_plots(log: TrajectoryLog, out_dir: str | Path) -> list[Path]:
    """CoG height and phase-shaded slide plots as SVG, plus the CSV slice they show."""
    out_dir = Path(out_dir)
    try:
        out_dir.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise PermissionError(f"cannot create {out_dir}: {exc}") from exc
    if len(log) == 0:
        log_msg = "empty log: no plots written"
        logging.getLogger(__name__).warning(log_msg)
        return []

    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    matplotlib.rcParams["svg.hashsalt"] = "wirehop"
    t = log.column("t")
    bands = _flight_bands(log)
    written = []

    fig, ax = plt.subplots(figsize=(8, 3.5))
    ax.plot(t, log.column("cog_z"), lw=1.0, color="k")
    for a, b in bands:
        ax.axvspan(a, b, color="tab:blue", alpha=0.2, lw=0)
    ax.set_xlabel("time [s]")
    ax.set_ylabel("CoG height [m]")
    ax.set_title(f"{len(bands)} flight phases")
    fig.tight_layout()
    path = out_dir / "cog_height.svg"
    fig.savefig(path, format="svg", metadata={"Date": None})
    plt.close(fig)
    written.append(path)

    fig, ax = plt.subplots(figsize=(8, 3.5))
    ax.plot(t, log.column("q_slide"), lw=1.0, label="slide")
    ax.plot(t, log.column("est_slide"), lw=0.8, ls="--", label="slide (estimate)")
    stance = np.array([p == Phase.STANCE.value for p, _ in log.text])
    ax.fill_between(t, 0, 1, where=stance, transform=ax.get_xaxis_transform(),
                    color="tab:orange", alpha=0.15, lw=0, label="stance")
    ax.set_xlabel("time [s]")
    ax.set_ylabel("slide [m]")
    ax.legend(loc="upper right")
    fig.tight_layout()
    path = out_dir / "slide_phase.svg"
    fig.savefig(path, format="svg", metadata={"Date": None})
    plt.close(fig)
    written.append(path)

    slice_path = out_dir / "cog_height.csv"
    with open(slice_path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["t", "cog_z", "q_slide", "foot_normal", "phase"])
        for i in range(len(log)):
            w.writerow([repr(float(t[i])), repr(float(log.column("cog_z")[i])),
                        repr(float(log.column("q_slide")[i])),
                        repr(float(log.column("foot_normal")[i])), log.text[i][0]])
    written.append(slice_path)
    return written
