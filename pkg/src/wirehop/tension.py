"""Computed muscle control: least-norm wire tensions for a desired joint force.

    minimize ||f||^2  subject to  -J_m^T f = tau,  f >= f_min  (, f <= f_max)

Solved with a dense dual active-set method (Goldfarb-Idnani). Starting from
the unconstrained minimum f = 0 it adds violated constraints one at a time;
the objective increases strictly, so no working set repeats and the solver
visits at most 2^6 of them.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

_Z_TOL = 1e-9


@dataclass
class TensionSolution:
    f: np.ndarray
    active_set: tuple[int, ...]
    objective: float
    status: str  # "optimal" | "infeasible"
    eq_multipliers: np.ndarray
    bound_multipliers: np.ndarray  # lower-bound minus upper-bound multipliers
    iterations: int = 0

    @property
    def optimal(self) -> bool:
        return self.status == "optimal"


def _infeasible(n: int, m: int, iterations: int) -> TensionSolution:
    return TensionSolution(
        f=np.full(n, np.nan), active_set=(), objective=np.inf, status="infeasible",
        eq_multipliers=np.full(m, np.nan), bound_multipliers=np.full(n, np.nan),
        iterations=iterations,
    )


def _step_directions(normals: list, n_p: np.ndarray):
    if not normals:
        return n_p.copy(), np.zeros(0)
    N = np.column_stack(normals)
    r = np.linalg.lstsq(N, n_p, rcond=None)[0]
    return n_p - N @ r, r


def solve_tensions(tau, J, f_min: float, f_max: float | None = None,
                   max_iter: int = 200) -> TensionSolution:
    """Least-norm non-negative tensions realising ``tau = -J.T @ f``."""
    tau = np.asarray(tau, dtype=float)
    J = np.asarray(J, dtype=float)
    n, m = J.shape
    A = -J.T
    if f_max is not None and f_max < f_min:
        raise ValueError("f_max must not be below f_min")

    scale = max(1.0, float(np.max(np.abs(tau))) if tau.size else 1.0, abs(f_min))
    tol = 1e-10 * scale

    if f_max is not None and f_max - f_min <= tol:
        f = np.full(n, float(f_min))
        if np.max(np.abs(A @ f - tau)) > 1e-8 * max(1.0, np.max(np.abs(tau))):
            return _infeasible(n, m, 0)
        lam, *_ = np.linalg.lstsq(A.T, f, rcond=None)
        return TensionSolution(f, tuple(range(n)), float(f @ f), "optimal", lam,
                               f - A.T @ lam, 0)

    # constraint k: normal_k . f >= rhs_k ; equalities first, then bounds
    eye = np.eye(n)
    ineq_normals = [eye[i] for i in range(n)]
    ineq_rhs = [float(f_min)] * n
    if f_max is not None:
        ineq_normals += [-eye[i] for i in range(n)]
        ineq_rhs += [-float(f_max)] * n
    ineq_normals = np.array(ineq_normals)
    ineq_rhs = np.array(ineq_rhs)

    x = np.zeros(n)
    active: list[tuple[str, int]] = []  # ("eq"|"in", index)
    normals: list[np.ndarray] = []
    u: list[float] = []
    iterations = 0

    def add_constraint(n_p, b_p, tag, equality):
        nonlocal x, iterations
        u_p = 0.0
        while True:
            iterations += 1
            if iterations > max_iter:
                return False
            s_p = float(n_p @ x - b_p)
            z, r = _step_directions(normals, n_p)
            independent = np.linalg.norm(z) > _Z_TOL * np.linalg.norm(n_p)
            if s_p >= -tol:
                # satisfied; pin equalities (and loaded bounds) in the working set
                if independent and (equality or u_p > 0.0):
                    normals.append(n_p)
                    active.append(tag)
                    u.append(u_p)
                return True
            t1, k = np.inf, -1
            for j, (kind, _) in enumerate(active):
                if kind == "in" and r[j] > 0.0:
                    ratio = u[j] / r[j]
                    if ratio < t1:
                        t1, k = ratio, j
            t2 = -s_p / float(z @ n_p) if independent else np.inf
            if not np.isfinite(t1) and not np.isfinite(t2):
                return False
            if not np.isfinite(t2):
                # dual step only: free up the blocking constraint
                for j in range(len(u)):
                    u[j] -= t1 * r[j]
                u_p += t1
                del normals[k], active[k], u[k]
                continue
            t = min(t1, t2)
            x = x + t * z
            for j in range(len(u)):
                u[j] -= t * r[j]
            u_p += t
            if t == t2:
                normals.append(n_p)
                active.append(tag)
                u.append(u_p)
                return True
            del normals[k], active[k], u[k]

    eq_sign = np.ones(m)
    for i in range(m):
        n_p, b_p = A[i].copy(), float(tau[i])
        if float(n_p @ x - b_p) > 0.0:
            n_p, b_p = -n_p, -b_p
            eq_sign[i] = -1.0
        if not add_constraint(n_p, b_p, ("eq", i), True):
            return _infeasible(n, m, iterations)

    while True:
        slack = ineq_normals @ x - ineq_rhs
        for kind, idx in active:
            if kind == "in":
                slack[idx] = np.inf
        p = int(np.argmin(slack))
        if slack[p] >= -tol:
            break
        if not add_constraint(ineq_normals[p], float(ineq_rhs[p]), ("in", p), False):
            return _infeasible(n, m, iterations)

    lam = np.zeros(m)
    mu = np.zeros(n)
    for (kind, idx), u_k in zip(active, u):
        if kind == "eq":
            lam[idx] += eq_sign[idx] * u_k
        elif idx < n:
            mu[idx] += u_k
        else:
            mu[idx - n] -= u_k
    bound_active = tuple(sorted(idx % n for kind, idx in active if kind == "in"))
    return TensionSolution(x, bound_active, float(x @ x), "optimal", lam, mu, iterations)


def kkt_residual(sol: TensionSolution, tau, J, f_min: float,
                 f_max: float | None = None) -> tuple[float, float, float]:
    """Max-norm residuals (stationarity N, primal N, complementarity N^2).

    Stationarity is written for the 1/2 ||f||^2 scaling of the objective;
    sign-violating multipliers count against it.
    """
    f = np.asarray(sol.f, dtype=float)
    J = np.asarray(J, dtype=float)
    tau = np.asarray(tau, dtype=float)
    mu = sol.bound_multipliers
    A = -J.T
    grad = f - A.T @ sol.eq_multipliers - mu
    mu_lo = np.maximum(mu, 0.0)
    mu_hi = np.maximum(-mu, 0.0)
    if f_max is None:
        sign_violation = float(np.max(mu_hi, initial=0.0))
    else:
        sign_violation = 0.0
    stationarity = max(float(np.max(np.abs(grad))), sign_violation)
    primal = max(
        float(np.max(np.abs(A @ f - tau))),
        float(np.max(np.maximum(f_min - f, 0.0))),
        float(np.max(np.maximum(f - f_max, 0.0))) if f_max is not None else 0.0,
    )
    comp = float(np.max(np.abs(mu_lo * (f - f_min))))
    if f_max is not None:
        comp = max(comp, float(np.max(np.abs(mu_hi * (f_max - f)))))
    return stationarity, primal, comp


def solve_with_fallback(tau, J, f_min: float, f_max: float | None = None,
                        max_bisections: int = 20) -> tuple[TensionSolution, float]:
    """Solve; if infeasible, shrink tau along its direction by bisection.

    Returns the solution and the scale actually applied (1.0 when no fallback).
    """
    tau = np.asarray(tau, dtype=float)
    sol = solve_tensions(tau, J, f_min, f_max)
    if sol.optimal:
        return sol, 1.0
    lo_sol = solve_tensions(np.zeros_like(tau), J, f_min, f_max)
    if not lo_sol.optimal:
        n = np.asarray(J).shape[0]
        f = np.full(n, float(f_min))
        return TensionSolution(f, tuple(range(n)), float(f @ f), "infeasible",
                               np.zeros(len(tau)), np.zeros(n)), 0.0
    lo, hi = 0.0, 1.0
    best = lo_sol
    for _ in range(max_bisections):
        mid = 0.5 * (lo + hi)
        trial = solve_tensions(mid * tau, J, f_min, f_max)
        if trial.optimal:
            lo, best = mid, trial
        else:
            hi = mid
    return best, lo
