"""Joint-state EKF: x = [q; q_dot] from wire lengths and wire speeds.

Constant-velocity process model; the observation is h(x) = [g(q); J_m(q) q_dot].
After a touchdown the lower-wire channels are deweighted for a short window,
because impact loads stretch those wires and their encoders read slack.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .geometry import GeometryModel
from .params import LOWER_WIRES, N_WIRES

LOWER_CHANNELS = tuple(LOWER_WIRES) + tuple(i + N_WIRES for i in LOWER_WIRES)
COND_LIMIT = 1e12


@dataclass(frozen=True)
class EkfConfig:
    q_pos: float = 1e-8
    q_vel: float = 1e-4
    r_length: float = 1e-6
    r_speed: float = 1e-4
    deweight_factor: float = 100.0
    deweight_window: float = 0.1
    fd_step: float = 1e-6


@dataclass
class EkfState:
    x: np.ndarray
    P: np.ndarray
    Q: np.ndarray
    R_meas: np.ndarray
    t_since_touchdown: float | None = None
    R_nominal: np.ndarray = field(default=None, repr=False)
    skipped_updates: int = 0

    def __post_init__(self):
        if self.R_nominal is None:
            self.R_nominal = self.R_meas.copy()

    @property
    def n_joints(self) -> int:
        return self.x.size // 2

    @property
    def q(self) -> np.ndarray:
        return self.x[:self.n_joints].copy()

    @property
    def q_dot(self) -> np.ndarray:
        return self.x[self.n_joints:].copy()


def make_ekf(q0, q_dot0=None, cfg: EkfConfig = EkfConfig(), p0: float = 1e-4) -> EkfState:
    x = np.concatenate([np.asarray(q0, dtype=float),
                        np.zeros(3) if q_dot0 is None else np.asarray(q_dot0, dtype=float)])
    Q = np.diag([cfg.q_pos] * 3 + [cfg.q_vel] * 3)
    R = np.diag([cfg.r_length] * N_WIRES + [cfg.r_speed] * N_WIRES)
    return EkfState(x=x, P=np.eye(6) * p0, Q=Q, R_meas=R)


def transition(dt: float, n_joints: int = 3) -> np.ndarray:
    F = np.eye(2 * n_joints)
    F[:n_joints, n_joints:] = np.eye(n_joints) * dt
    return F


def ekf_predict(s: EkfState, dt: float) -> EkfState:
    if dt <= 0.0:
        raise ValueError("dt must be positive")
    F = transition(dt, s.x.size // 2)
    P = F @ s.P @ F.T + s.Q
    return replace(s, x=F @ s.x, P=0.5 * (P + P.T))


def observe(x, geom) -> np.ndarray:
    """h(x) = [lengths(q); J_m(q) q_dot]. ``geom`` needs ``evaluate(q) -> (lengths, J_m)``."""
    n = x.size // 2
    lengths, jm = geom.evaluate(x[:n])
    return np.concatenate([lengths, jm @ x[n:]])


def observation_jacobian(x, geom, step: float = 1e-6) -> np.ndarray:
    """dh/dx; the d(J_m q_dot)/dq block by central differences."""
    n = x.size // 2
    q, q_dot = x[:n], x[n:]
    _, jm = geom.evaluate(q)
    m = jm.shape[0]
    H = np.zeros((2 * m, 2 * n))
    H[:m, :n] = jm
    H[m:, n:] = jm
    for j in range(n):
        dq = np.zeros(n)
        dq[j] = step
        jp = geom.evaluate(q + dq)[1]
        jn = geom.evaluate(q - dq)[1]
        H[m:, j] = (jp - jn) @ q_dot / (2.0 * step)
    return H


def ekf_update(s: EkfState, z, geom, step: float = 1e-6) -> EkfState:
    z = np.asarray(z, dtype=float)
    if z.shape != (s.R_meas.shape[0],) or not np.all(np.isfinite(z)):
        raise ValueError(f"measurement must be {s.R_meas.shape[0]} finite values")
    H = observation_jacobian(s.x, geom, step)
    innovation = z - observe(s.x, geom)
    S = H @ s.P @ H.T + s.R_meas
    S = 0.5 * (S + S.T)
    if np.linalg.cond(S) > COND_LIMIT:
        return replace(s, skipped_updates=s.skipped_updates + 1)
    K = np.linalg.solve(S, H @ s.P).T
    x = s.x + K @ innovation
    # Joseph form keeps P symmetric PSD under rounding
    I_KH = np.eye(s.x.size) - K @ H
    P = I_KH @ s.P @ I_KH.T + K @ s.R_meas @ K.T
    return replace(s, x=x, P=0.5 * (P + P.T))


def touchdown_deweight(s: EkfState, touched_down: bool, dt: float = 0.0,
                       factor: float = 100.0, window: float = 0.1) -> EkfState:
    """Advance the touchdown timer by dt and set R_meas for the current window.

    A touchdown event restarts the timer at zero. Inside the window the lower
    wire length and speed channels are inflated by ``factor``.
    """
    t = s.t_since_touchdown
    if touched_down:
        t = 0.0
    elif t is not None:
        t = t + dt
    R = s.R_nominal.copy()
    if t is not None and t <= window:
        for c in LOWER_CHANNELS:
            R[c, c] *= factor
    return replace(s, R_meas=R, t_since_touchdown=t)


class JointEstimator:
    """Predict/update loop at a fixed rate with touchdown deweighting."""

    def __init__(self, geom: GeometryModel, q0, cfg: EkfConfig = EkfConfig(), p0: float = 1e-4,
                 deweight: bool = True):
        self.geom = geom
        self.cfg = cfg
        self.deweight = deweight
        self.state = make_ekf(q0, cfg=cfg, p0=p0)

    def step(self, lengths, speeds, dt: float, touched_down: bool = False) -> EkfState:
        s = ekf_predict(self.state, dt)
        if self.deweight:
            s = touchdown_deweight(s, touched_down, dt, self.cfg.deweight_factor,
                                   self.cfg.deweight_window)
        s = ekf_update(s, np.concatenate([lengths, speeds]), self.geom, self.cfg.fd_step)
        self.state = s
        return s


def run_offline(csv_in: str | Path, csv_out: str | Path, geom: GeometryModel, q0,
                cfg: EkfConfig = EkfConfig()) -> int:
    """Filter a CSV of ``t, l0..l5, ld0..ld5`` rows; writes ``t, q*, qd*``. Returns row count."""
    with open(csv_in, newline="") as fh:
        rows = [r for r in csv.reader(fh) if r and not r[0].startswith("#")]
    if rows and not _is_number(rows[0][0]):
        rows = rows[1:]
    est = JointEstimator(geom, q0, cfg)
    t_prev = None
    with open(csv_out, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["t", "roll", "pitch", "slide", "roll_rate", "pitch_rate", "slide_rate"])
        for r in rows:
            vals = [float(v) for v in r]
            t = vals[0]
            dt = 1e-3 if t_prev is None else t - t_prev
            t_prev = t
            s = est.step(np.array(vals[1:7]), np.array(vals[7:13]), dt)
            w.writerow([f"{t:.6f}"] + [f"{v:.9g}" for v in s.x])
    return len(rows)


def _is_number(text: str) -> bool:
    try:
        float(text)
    except ValueError:
        return False
    return True
