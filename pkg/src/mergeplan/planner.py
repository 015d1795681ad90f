"""Quintic-polynomial merge trajectory generation via small convex QPs.

For each sampled terminal time Te a lateral and a longitudinal quadratic
program are assembled over the polynomial coefficients and solved; the
candidate with the lowest comfort-plus-time cost wins. Objectives integrate
squared acceleration and jerk exactly (Gram matrices of the monomial basis);
tracking terms against the non-polynomial gap midpoint use trapezoid
quadrature on the same 0.1 s grid that carries the rate and acceleration
bounds.

After the equality rows (initial state plus terminal pins) are eliminated,
exactly one polynomial coefficient stays free, so each QP reduces to a
scalar quadratic clipped to the interval the inequalities induce. That path
is exact and fast; anything degenerate falls back to the active-set solver.
Everything that depends only on Te is cached across calls, which is what
keeps the 26-sample sweep inside the real-time budget.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from typing import Callable, Optional, Tuple

import numpy as np

from .core import Polynomial, ReferenceLine, Trajectory, frenet_to_cartesian
from .opportunity import MergeScenario
from .prediction import TargetMotion, gap_midpoint
from .qpsolve import QpProblem, QpStatus, solve

_EQ_TOL = 1e-9
_INEQ_TOL = 1e-8
_TIKHONOV = 1e-10


class LongitudinalMode(enum.Enum):
    DISTANCE = "distance"
    VELOCITY = "velocity"


@dataclass(frozen=True)
class LateralSpec:
    """Initial lateral state, road geometry, bounds and comfort weights."""

    d0: float
    d0_dot: float = 0.0
    d0_ddot: float = 0.0
    road_width: float = 3.75
    rate_bounds: Tuple[float, float] = (-2.0, 2.0)
    accel_bounds: Tuple[float, float] = (-1.5, 1.5)
    k_accel: float = 1.0
    k_jerk: float = 1.0
    k_offset: float = 0.1

    def __post_init__(self):
        if not self.road_width > 0.0:
            raise ValueError("road_width must be positive")
        for lo, hi in (self.rate_bounds, self.accel_bounds):
            if not lo < hi:
                raise ValueError("bounds must be ordered")


@dataclass(frozen=True)
class LongitudinalSpec:
    """Initial longitudinal state plus the mode-specific targets and weights."""

    s0: float
    s0_dot: float
    s0_ddot: float = 0.0
    mode: LongitudinalMode = LongitudinalMode.DISTANCE
    s_target_fn: Optional[Callable] = None
    v_set: Optional[float] = None
    v_terminal_bounds: Tuple[float, float] = (0.0, 33.3)
    rate_bounds: Tuple[float, float] = (0.0, 33.3)
    accel_bounds: Tuple[float, float] = (-2.5, 2.5)
    k_accel: float = 1.0
    k_jerk: float = 1.0
    k_track: float = 0.7

    def __post_init__(self):
        if self.mode is LongitudinalMode.DISTANCE and self.s_target_fn is None:
            raise ValueError("distance mode needs a gap-midpoint evaluator")
        if self.mode is LongitudinalMode.VELOCITY and self.v_set is None:
            raise ValueError("velocity mode needs a set speed")
        for lo, hi in (self.rate_bounds, self.accel_bounds, self.v_terminal_bounds):
            if not lo < hi:
                raise ValueError("bounds must be ordered")


@dataclass(frozen=True)
class PlannerConfig:
    te_min: float = 4.5
    te_max: float = 7.0
    te_step: float = 0.1
    phi_step: float = 0.1
    k_time: float = 0.05
    traj_dt: float = 0.1
    lateral_rate_bounds: Tuple[float, float] = (-2.0, 2.0)
    lateral_accel_bounds: Tuple[float, float] = (-1.5, 1.5)
    lon_rate_bounds: Tuple[float, float] = (0.0, 33.3)
    lon_accel_bounds: Tuple[float, float] = (-2.5, 2.5)
    k_accel: float = 1.0
    k_jerk: float = 1.0
    k_offset: float = 0.1
    # Strong enough that the plan arrests the residual gap drift (about
    # half the speed mismatch times Te) instead of riding it past the
    # midpoint.
    k_track: float = 0.7

    def terminal_times(self) -> np.ndarray:
        n = int(round((self.te_max - self.te_min) / self.te_step))
        return np.round(self.te_min + self.te_step * np.arange(n + 1), 9)


@dataclass(frozen=True)
class PlanResult:
    te: float
    lateral: Polynomial
    longitudinal: Polynomial
    cost_tilde: float
    cost_total: float
    trajectory: Trajectory
    n_feasible: int = 0


def _derivative_row(t: float, order: int, n: int) -> np.ndarray:
    """Row r with r @ coeffs = order-th derivative of the polynomial at t."""
    row = np.zeros(n)
    for i in range(order, n):
        fac = 1.0
        for k in range(order):
            fac *= i - k
        row[i] = fac * t ** (i - order)
    return row


def gram_matrix(order: int, n: int, te: float) -> np.ndarray:
    """Gram matrix of order-th monomial derivatives integrated over [0, te]."""
    g = np.zeros((n, n))
    for i in range(order, n):
        fi = math.prod(range(i - order + 1, i + 1))
        for j in range(order, n):
            fj = math.prod(range(j - order + 1, j + 1))
            power = i + j - 2 * order
            g[i, j] = fi * fj * te ** (power + 1) / (power + 1)
    return g


class _Workspace:
    """Per-(Te, basis size) cache of grids, Gram matrices and basis rows."""

    def __init__(self, te: float, n: int, phi_step: float):
        self.te = te
        self.n = n
        m = max(int(round(te / phi_step)), 1)
        self.tgrid = np.linspace(0.0, te, m + 1)
        spacing = te / m   # equals phi_step whenever te is a grid multiple
        self.w_trap = np.full(m + 1, spacing)
        self.w_trap[0] = self.w_trap[-1] = 0.5 * spacing
        self.phi0 = np.vander(self.tgrid, n, increasing=True)
        self.phi1 = np.stack([_derivative_row(t, 1, n) for t in self.tgrid])
        self.phi2 = np.stack([_derivative_row(t, 2, n) for t in self.tgrid])
        self.g0 = gram_matrix(0, n, te)
        self.g2 = gram_matrix(2, n, te)
        self.g3 = gram_matrix(3, n, te)
        self.row0_start = _derivative_row(0.0, 0, n)
        self.row1_start = _derivative_row(0.0, 1, n)
        self.row2_start = _derivative_row(0.0, 2, n)
        self.row0_end = _derivative_row(te, 0, n)
        self.row1_end = _derivative_row(te, 1, n)
        self.row2_end = _derivative_row(te, 2, n)
        # Equality blocks: initial triple + terminal rate/accel (quintic) or
        # initial triple + terminal accel (quartic velocity planning).
        if n == 6:
            self.aeq = np.vstack([self.row0_start, self.row1_start,
                                  self.row2_start, self.row1_end, self.row2_end])
        else:
            self.aeq = np.vstack([self.row0_start, self.row1_start,
                                  self.row2_start, self.row2_end])
        self.pinv_eq = np.linalg.pinv(self.aeq)
        _, sv, vh = np.linalg.svd(self.aeq)
        rank = int(np.sum(sv > max(self.aeq.shape) * np.finfo(float).eps * sv[0]))
        self.z = vh[rank:].T
        # Rate/acceleration grid rows, stacked once.
        self.grid_ineq = np.vstack([self.phi1, -self.phi1, self.phi2, -self.phi2])


_WORKSPACES: dict = {}
_SOLVERS: dict = {}


def _workspace(te: float, n: int, phi_step: float) -> _Workspace:
    key = (round(te, 9), n, round(phi_step, 9))
    ws = _WORKSPACES.get(key)
    if ws is None:
        ws = _Workspace(te, n, phi_step)
        _WORKSPACES[key] = ws
    return ws


def _grid_bounds_vector(ws: _Workspace, rate_bounds, accel_bounds) -> np.ndarray:
    m = len(ws.tgrid)
    return np.concatenate([
        np.full(m, rate_bounds[0]), np.full(m, -rate_bounds[1]),
        np.full(m, accel_bounds[0]), np.full(m, -accel_bounds[1]),
    ])


class _ReducedSolver:
    """One-DOF exact QP solve for a fixed Te and parameter set.

    The constraint geometry, the quadratic form and the null-space data are
    all Te-dependent constants, so a sweep re-solves in a handful of vector
    operations per call.
    """

    def __init__(self, ws: _Workspace, h: np.ndarray, terminal_rows: np.ndarray,
                 grid_b: np.ndarray):
        self.ws = ws
        self.h = h
        self.z = ws.z[:, 0]
        reg = _TIKHONOV * (1.0 + np.abs(h).max())
        self.curv = float(self.z @ h @ self.z) + reg
        self.zh = self.z @ h
        self.aieq = np.vstack([terminal_rows, ws.grid_ineq])
        coef = self.aieq @ self.z
        self.coef = coef
        self.idx_lower = np.where(coef > 1e-12)[0]
        self.idx_upper = np.where(coef < -1e-12)[0]
        self.idx_fixed = np.where(np.abs(coef) <= 1e-12)[0]
        self.inv_lower = 1.0 / coef[self.idx_lower]
        self.inv_upper = 1.0 / coef[self.idx_upper]
        self.grid_b = grid_b
        self._bieq = np.concatenate([np.zeros(len(terminal_rows)), grid_b])
        self._n_terminal = len(terminal_rows)
        self._grid_b_absmax = float(np.abs(grid_b).max()) if grid_b.size else 0.0

    def solve(self, beq: np.ndarray, terminal_b: np.ndarray,
              f: Optional[np.ndarray] = None) -> Optional[np.ndarray]:
        x_p = self.ws.pinv_eq @ beq
        rhs = self.zh @ x_p
        if f is not None:
            rhs += self.z @ f
        q_unc = -float(rhs) / self.curv

        bieq = self._bieq
        bieq[:self._n_terminal] = terminal_b
        resid = bieq - self.aieq @ x_p
        tb_max = max(abs(float(terminal_b[0])), abs(float(terminal_b[-1])))
        tol = _INEQ_TOL * (1.0 + max(self._grid_b_absmax, tb_max))
        if self.idx_fixed.size and resid[self.idx_fixed].max() > tol:
            return None
        lo, hi = -np.inf, np.inf
        if self.idx_lower.size:
            lo = float((resid[self.idx_lower] * self.inv_lower).max())
        if self.idx_upper.size:
            hi = float((resid[self.idx_upper] * self.inv_upper).min())
        if lo > hi + 1e-12:
            return None
        q = min(max(q_unc, lo), hi)
        return x_p + q * self.z


def _lateral_solver(spec: LateralSpec, te: float, phi_step: float) -> _ReducedSolver:
    key = ("lat", round(te, 9), round(phi_step, 9), spec.road_width,
           spec.rate_bounds, spec.accel_bounds,
           spec.k_accel, spec.k_jerk, spec.k_offset)
    solver = _SOLVERS.get(key)
    if solver is None:
        ws = _workspace(te, 6, phi_step)
        h = 2.0 * (spec.k_accel * ws.g2 + spec.k_jerk * ws.g3
                   + spec.k_offset * ws.g0)
        rows = np.vstack([ws.row0_end, -ws.row0_end])
        grid_b = _grid_bounds_vector(ws, spec.rate_bounds, spec.accel_bounds)
        solver = _ReducedSolver(ws, h, rows, grid_b)
        half = 0.5 * spec.road_width
        solver.terminal_b = np.array([-half, -half])
        _SOLVERS[key] = solver
    return solver


def _distance_solver(spec: LongitudinalSpec, te: float, phi_step: float):
    key = ("dist", round(te, 9), round(phi_step, 9), spec.rate_bounds,
           spec.accel_bounds, spec.k_accel, spec.k_jerk, spec.k_track)
    solver = _SOLVERS.get(key)
    if solver is None:
        ws = _workspace(te, 6, phi_step)
        wphi = ws.w_trap[:, None] * ws.phi0
        h = 2.0 * (spec.k_accel * ws.g2 + spec.k_jerk * ws.g3
                   + spec.k_track * ws.phi0.T @ wphi)
        rows = np.vstack([ws.row0_end, -ws.row0_end])
        grid_b = _grid_bounds_vector(ws, spec.rate_bounds, spec.accel_bounds)
        solver = _ReducedSolver(ws, h, rows, grid_b)
        solver.f_matrix = 2.0 * spec.k_track * wphi.T      # f = -f_matrix @ g
        _SOLVERS[key] = solver
    return solver


def _spec_key(kind, spec):
    if kind == "lat":
        return (spec.road_width, spec.rate_bounds, spec.accel_bounds,
                spec.k_accel, spec.k_jerk, spec.k_offset)
    if kind == "dist":
        return (spec.rate_bounds, spec.accel_bounds, spec.k_accel,
                spec.k_jerk, spec.k_track)
    return (spec.rate_bounds, spec.accel_bounds, spec.v_terminal_bounds,
            spec.v_set, spec.k_accel, spec.k_jerk, spec.k_track)


def _sweep_solvers(kind, spec, config: PlannerConfig):
    """Per-Te solver tuple for one sweep, cached on the parameter set."""
    factory = {"lat": _lateral_solver, "dist": _distance_solver,
               "vel": _velocity_solver}[kind]
    key = ("sweep", kind, _spec_key(kind, spec), config.te_min,
           config.te_max, config.te_step, config.phi_step)
    hit = _SOLVERS.get(key)
    if hit is None:
        hit = tuple((float(te), factory(spec, float(te), config.phi_step))
                    for te in config.terminal_times())
        _SOLVERS[key] = hit
    return hit


def _velocity_solver(spec: LongitudinalSpec, te: float, phi_step: float):
    key = ("vel", round(te, 9), round(phi_step, 9), spec.rate_bounds,
           spec.accel_bounds, spec.v_terminal_bounds, spec.v_set,
           spec.k_accel, spec.k_jerk, spec.k_track)
    solver = _SOLVERS.get(key)
    if solver is None:
        ws = _workspace(te, 5, phi_step)
        wphi = ws.w_trap[:, None] * ws.phi1
        h = 2.0 * (spec.k_accel * ws.g2 + spec.k_jerk * ws.g3
                   + spec.k_track * ws.phi1.T @ wphi)
        rows = np.vstack([ws.row1_end, -ws.row1_end])
        grid_b = _grid_bounds_vector(ws, spec.rate_bounds, spec.accel_bounds)
        solver = _ReducedSolver(ws, h, rows, grid_b)
        vmin, vmax = spec.v_terminal_bounds
        solver.terminal_b = np.array([vmin, -vmax])
        solver.f_const = -2.0 * spec.k_track * spec.v_set * (wphi.T @ np.ones(len(ws.tgrid)))
        solver.cost_const = spec.k_track * spec.v_set**2 * float(ws.w_trap.sum())
        _SOLVERS[key] = solver
    return solver


def build_lateral_qp(spec: LateralSpec, te: float, phi_step: float = 0.1) -> QpProblem:
    """Assemble the lateral QP for one terminal-time sample.

    Decision vector: the six quintic coefficients of the lateral offset.
    Initial offset/rate/acceleration and zero terminal rate/acceleration are
    equalities; the terminal offset stays inside the road and the 0.1 s grid
    carries the rate and acceleration bounds.
    """
    _check_te(te)
    solver = _lateral_solver(spec, te, phi_step)
    beq = np.array([spec.d0, spec.d0_dot, spec.d0_ddot, 0.0, 0.0])
    bieq = np.concatenate([solver.terminal_b, solver.grid_b])
    return QpProblem(H=solver.h, f=np.zeros(6), Aeq=solver.ws.aeq, beq=beq,
                     Aieq=solver.aieq, bieq=bieq)


def build_longitudinal_qp(spec: LongitudinalSpec, te: float,
                          phi_step: float = 0.1) -> QpProblem:
    """Assemble the longitudinal QP (quintic distance / quartic velocity mode)."""
    _check_te(te)
    if spec.mode is LongitudinalMode.DISTANCE:
        solver = _distance_solver(spec, te, phi_step)
        g_pos, g_vel, g_acc = spec.s_target_fn(solver.ws.tgrid)
        f = -(solver.f_matrix @ g_pos)
        beq = np.array([spec.s0, spec.s0_dot, spec.s0_ddot,
                        float(g_vel[-1]), float(g_acc[-1])])
        lo, hi = sorted((0.8 * float(g_pos[-1]), 1.2 * float(g_pos[-1])))
        bieq = np.concatenate([[lo, -hi], solver.grid_b])
    else:
        solver = _velocity_solver(spec, te, phi_step)
        f = solver.f_const
        beq = np.array([spec.s0, spec.s0_dot, spec.s0_ddot, 0.0])
        bieq = np.concatenate([solver.terminal_b, solver.grid_b])
    return QpProblem(H=solver.h, f=f, Aeq=solver.ws.aeq, beq=beq,
                     Aieq=solver.aieq, bieq=bieq)


def _check_te(te: float) -> None:
    if not 4.5 - 1e-9 <= te <= 7.0 + 1e-9:
        raise ValueError(f"terminal time {te} outside the sampling range [4.5, 7.0]")


def _solve_or_fallback(solver: _ReducedSolver, beq, terminal_b, f=None):
    """Reduced solve plus an equality-residual guard with generic fallback."""
    x = solver.solve(beq, terminal_b, f)
    if x is None:
        return None
    if np.abs(solver.ws.aeq @ x - beq).max() > _EQ_TOL * (1.0 + np.abs(beq).max()):
        f_full = np.zeros(solver.ws.n) if f is None else f
        bieq = np.concatenate([terminal_b, solver.grid_b])
        problem = QpProblem(H=solver.h, f=f_full, Aeq=solver.ws.aeq, beq=beq,
                            Aieq=solver.aieq, bieq=bieq)
        sol = solve(problem, tol=1e-8, max_iter=200)
        return sol.x if sol.status is QpStatus.OPTIMAL else None
    return x


def select_mode(scenario: MergeScenario) -> LongitudinalMode:
    """Distance planning against any real gap; velocity keeping on open road."""
    return LongitudinalMode.DISTANCE if scenario.has_real_target \
        else LongitudinalMode.VELOCITY


@dataclass(frozen=True)
class EgoPlanState:
    """Ego state at the moment the merge trajectory is requested."""

    d0: float
    s0_dot: float
    d0_dot: float = 0.0
    d0_ddot: float = 0.0
    s0: float = 0.0
    s0_ddot: float = 0.0


def plan(ego: EgoPlanState, gap: Optional[Tuple[TargetMotion, TargetMotion]],
         config: PlannerConfig = PlannerConfig(),
         mode: LongitudinalMode = LongitudinalMode.DISTANCE,
         v_set: Optional[float] = None,
         ref: ReferenceLine = ReferenceLine()) -> Optional[PlanResult]:
    """Sweep terminal times, solve both QPs per sample, keep the cheapest.

    Returns None when every terminal-time sample is infeasible. The returned
    trajectory is sampled at config.traj_dt and mapped through the reference
    line; costs are evaluated directly from the solution polynomials.
    """
    lat_spec = LateralSpec(
        d0=ego.d0, d0_dot=ego.d0_dot, d0_ddot=ego.d0_ddot,
        road_width=ref.lane_width,
        rate_bounds=config.lateral_rate_bounds,
        accel_bounds=config.lateral_accel_bounds,
        k_accel=config.k_accel, k_jerk=config.k_jerk, k_offset=config.k_offset)
    beq_lat = np.array([ego.d0, ego.d0_dot, ego.d0_ddot, 0.0, 0.0])

    distance = mode is LongitudinalMode.DISTANCE
    if distance:
        if gap is None:
            raise ValueError("distance mode needs the bounding target pair")
        front, rear = gap
        lon_spec = LongitudinalSpec(
            s0=ego.s0, s0_dot=ego.s0_dot, s0_ddot=ego.s0_ddot,
            mode=mode, s_target_fn=lambda t: gap_midpoint(front, rear, t),
            rate_bounds=config.lon_rate_bounds, accel_bounds=config.lon_accel_bounds,
            k_accel=config.k_accel, k_jerk=config.k_jerk, k_track=config.k_track)
        # Gap midpoint on the master grid; per-Te grids are its prefixes.
        ws_master = _workspace(config.te_max, 6, config.phi_step)
        g_pos_all, g_vel_all, g_acc_all = gap_midpoint(front, rear, ws_master.tgrid)
    else:
        if v_set is None:
            raise ValueError("velocity mode needs a set speed")
        lon_spec = LongitudinalSpec(
            s0=ego.s0, s0_dot=ego.s0_dot, s0_ddot=ego.s0_ddot,
            mode=mode, v_set=v_set,
            v_terminal_bounds=config.lon_rate_bounds,
            rate_bounds=config.lon_rate_bounds, accel_bounds=config.lon_accel_bounds,
            k_accel=config.k_accel, k_jerk=config.k_jerk, k_track=config.k_track)
    beq_lon_head = np.array([ego.s0, ego.s0_dot, ego.s0_ddot])

    best = None
    n_feasible = 0
    lat_solvers = _sweep_solvers("lat", lat_spec, config)
    lon_solvers = _sweep_solvers("dist" if distance else "vel", lon_spec, config)
    for (te, lat), (_, lon) in zip(lat_solvers, lon_solvers):
        x_lat = _solve_or_fallback(lat, beq_lat, lat.terminal_b)
        if x_lat is None:
            continue

        if distance:
            m = len(lon.ws.tgrid)
            # The master-grid prefix only matches while Te sits on the
            # phi-step lattice; otherwise evaluate on the local grid.
            if abs(te / config.phi_step - round(te / config.phi_step)) < 1e-9:
                g_pos = g_pos_all[:m]
                g_vel_end, g_acc_end = g_vel_all[m - 1], g_acc_all[m - 1]
            else:
                g_pos, g_vel_loc, g_acc_loc = gap_midpoint(front, rear, lon.ws.tgrid)
                g_vel_end, g_acc_end = g_vel_loc[-1], g_acc_loc[-1]
            beq = np.concatenate([beq_lon_head, [g_vel_end, g_acc_end]])
            target_end = float(g_pos[-1])
            lo, hi = sorted((0.8 * target_end, 1.2 * target_end))
            f = -(lon.f_matrix @ g_pos)
            x_lon = _solve_or_fallback(lon, beq, np.array([lo, -hi]), f)
            if x_lon is None:
                continue
            track_const = lon_spec.k_track * float(lon.ws.w_trap @ (g_pos * g_pos))
            cost_lon = 0.5 * float(x_lon @ lon.h @ x_lon) + float(f @ x_lon) \
                + track_const
        else:
            beq = np.concatenate([beq_lon_head, [0.0]])
            x_lon = _solve_or_fallback(lon, beq, lon.terminal_b, lon.f_const)
            if x_lon is None:
                continue
            cost_lon = 0.5 * float(x_lon @ lon.h @ x_lon) \
                + float(lon.f_const @ x_lon) + lon.cost_const

        n_feasible += 1
        cost = 0.5 * float(x_lat @ lat.h @ x_lat) + cost_lon
        total = cost + config.k_time * te
        if best is None or total < best[0] - 1e-12:
            best = (total, cost, te, x_lat, x_lon)

    if best is None:
        return None

    total, cost_tilde, te, x_lat, x_lon = best
    lateral = Polynomial(tuple(x_lat), te)
    longitudinal = Polynomial(tuple(x_lon), te)
    trajectory = assemble_trajectory(lateral, longitudinal, ref, config.traj_dt)
    return PlanResult(te=float(te), lateral=lateral, longitudinal=longitudinal,
                      cost_tilde=cost_tilde, cost_total=total,
                      trajectory=trajectory, n_feasible=n_feasible)


def assemble_trajectory(lateral: Polynomial, longitudinal: Polynomial,
                        ref: ReferenceLine, dt: float) -> Trajectory:
    """Sample both motion profiles and map them into the plane.

    Heading, curvature, speed and tangential acceleration come from the
    analytic derivatives of the two polynomials.
    """
    te = lateral.horizon
    n = int(math.floor(te / dt + 1e-9))
    t = dt * np.arange(n + 1)
    s = longitudinal.eval(t)
    sd = longitudinal.eval(t, 1)
    sdd = longitudinal.eval(t, 2)
    d = lateral.eval(t)
    dd = lateral.eval(t, 1)
    ddd = lateral.eval(t, 2)
    x, y = frenet_to_cartesian(ref, s, d)
    v = np.hypot(sd, dd)
    v_safe = np.maximum(v, 1e-9)
    heading = ref.heading + np.arctan2(dd, sd)
    curvature = (sd * ddd - dd * sdd) / v_safe**3
    accel = (sd * sdd + dd * ddd) / v_safe
    return Trajectory.from_arrays(dt, t, s, d, x, y, heading, curvature, v, accel)
