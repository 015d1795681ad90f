"""Randomized oracle suites and the performance benchmark harness.

These routines back both `mergeplan selftest` and the acceptance tests:
the QP solver is cross-checked against a projected-gradient oracle on
seeded random box-constrained problems, the smoother's analytic gradients
against central finite differences, and the planning/smoothing hot paths
are timed over many repetitions.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass
from typing import Callable, List, Tuple

import numpy as np

from . import smoother
from .core import Polynomial, ReferenceLine
from .opportunity import CostWeights, SamplingConfig, decide
from .planner import EgoPlanState, LongitudinalMode, PlannerConfig, plan
from .prediction import EgoMotion, TargetMotion
from .qpsolve import QpProblem, QpStatus, kkt_check, solve


@dataclass(frozen=True)
class SuiteResult:
    name: str
    n_cases: int
    n_failures: int
    worst: float
    detail: str = ""

    @property
    def passed(self) -> bool:
        return self.n_failures == 0


def random_box_qp(rng: np.random.Generator) -> QpProblem:
    """Strictly convex QP with box inequalities, feasible by construction."""
    n = int(rng.integers(2, 11))
    q, _ = np.linalg.qr(rng.normal(size=(n, n)))
    eigs = rng.uniform(0.5, 10.0, size=n)
    h = q @ np.diag(eigs) @ q.T
    h = 0.5 * (h + h.T)
    f = rng.normal(scale=2.0, size=n)
    lb = rng.uniform(-2.0, -0.1, size=n)
    ub = rng.uniform(0.1, 2.0, size=n)
    aieq = np.vstack([np.eye(n), -np.eye(n)])
    bieq = np.concatenate([lb, -ub])
    return QpProblem(H=h, f=f, Aieq=aieq, bieq=bieq)


def projected_gradient_box(h, f, lb, ub, tol=1e-12, max_iter=200_000):
    """Accelerated projected gradient on a box; independent solver route."""
    lip = float(np.linalg.eigvalsh(h).max())
    eta = 1.0 / lip
    x = np.clip(np.zeros_like(f), lb, ub)
    y = x.copy()
    t_mom = 1.0
    for _ in range(max_iter):
        x_new = np.clip(y - eta * (h @ y + f), lb, ub)
        t_new = 0.5 * (1.0 + math.sqrt(1.0 + 4.0 * t_mom * t_mom))
        y = x_new + (t_mom - 1.0) / t_new * (x_new - x)
        step = np.abs(x_new - x).max()
        x, t_mom = x_new, t_new
        if step < tol:
            # Monotone restart guard: confirm stationarity of the projection.
            if np.abs(x - np.clip(x - eta * (h @ x + f), lb, ub)).max() < tol:
                break
    return x


def qp_objective(p: QpProblem, x) -> float:
    return float(0.5 * x @ p.H @ x + p.f @ x)


def qp_oracle_suite(n_problems: int = 200, seed: int = 0,
                    obj_tol: float = 1e-6, kkt_tol: float = 1e-8) -> SuiteResult:
    """Solver objective vs projected gradient, KKT residual on every instance."""
    rng = np.random.default_rng(seed)
    failures = 0
    worst = 0.0
    detail = ""
    for idx in range(n_problems):
        p = random_box_qp(rng)
        sol = solve(p, tol=1e-10, max_iter=300)
        n = p.n
        lb, ub = p.bieq[:n], -p.bieq[n:]
        x_pg = projected_gradient_box(p.H, p.f, lb, ub)
        gap = abs(qp_objective(p, sol.x) - qp_objective(p, x_pg))
        resid = kkt_check(p, sol.x).max_residual
        worst = max(worst, gap, resid)
        if sol.status is not QpStatus.OPTIMAL or gap > obj_tol or resid > kkt_tol:
            failures += 1
            if not detail:
                detail = f"first failure at case {idx}: gap={gap:.3e} kkt={resid:.3e}"
    return SuiteResult("qp_oracle", n_problems, failures, worst, detail)


def random_polyline(rng: np.random.Generator, n_points: int) -> np.ndarray:
    """Wiggly unit-step polyline; headings drift so curvature stays active."""
    headings = np.cumsum(rng.uniform(-0.25, 0.25, size=n_points - 1)) \
        + rng.uniform(0.0, 2.0 * math.pi)
    steps = np.column_stack([np.cos(headings), np.sin(headings)]) \
        * rng.uniform(0.5, 1.5, size=(n_points - 1, 1))
    return np.vstack([[0.0, 0.0], np.cumsum(steps, axis=0)])


def _fd_gradient(objective: Callable, pts: np.ndarray, i: int,
                 h: float = 1e-6) -> np.ndarray:
    grad = np.zeros(2)
    for axis in range(2):
        plus = pts.copy()
        minus = pts.copy()
        plus[i, axis] += h
        minus[i, axis] -= h
        grad[axis] = (objective(plus) - objective(minus)) / (2.0 * h)
    return grad


def _smoothness_sum(pts):
    sd = np.diff(pts, axis=0)
    sd = np.diff(sd, axis=0)
    return 0.5 * float(np.sum(sd * sd))


def _straightness_sum(pts):
    seg = np.diff(pts, axis=0)
    return 0.5 * float(np.sum(seg * seg))


def _curvature_sum(pts, c_max):
    total = 0.0
    for j in range(1, len(pts) - 1):
        k = smoother._vertex_curvature(pts, j)
        if k > c_max:
            total += (k - c_max) ** 2
    return total


def gradient_oracle_suite(n_polylines: int = 100, seed: int = 1,
                          rtol: float = 1e-5, atol: float = 1e-8) -> SuiteResult:
    """All three analytic gradients vs central finite differences."""
    rng = np.random.default_rng(seed)
    failures = 0
    worst = 0.0
    detail = ""
    c_max = 1e-4
    for case in range(n_polylines):
        n = int(rng.integers(20, 201))
        pts = np.ascontiguousarray(random_polyline(rng, n))
        for i in rng.integers(2, n - 2, size=3):
            i = int(i)
            checks = (
                (smoother.smoothness_gradient(pts, i), _smoothness_sum),
                (smoother.straightness_gradient(pts, i), _straightness_sum),
                (smoother.curvature_gradient(pts, i, c_max),
                 lambda q: _curvature_sum(q, c_max)),
            )
            for analytic, objective in checks:
                fd = _fd_gradient(objective, pts, i)
                err = np.abs(analytic - fd).max()
                bound = atol + rtol * max(np.abs(fd).max(), np.abs(analytic).max())
                worst = max(worst, err / max(bound, 1e-300) * rtol)
                if err > bound:
                    failures += 1
                    if not detail:
                        detail = (f"case {case} i={i}: analytic={analytic} fd={fd}")
    return SuiteResult("gradient_oracle", n_polylines, failures, worst, detail)


def benchmark_snapshot():
    """Merge snapshot used by the planning-cycle benchmark."""
    ego = EgoMotion(v0=7.5)
    targets = [TargetMotion(s0=-14.0, v0=10.0), TargetMotion(s0=6.0, v0=10.0)]
    return ego, targets


def bench_planning_cycle(reps: int = 100) -> Tuple[float, List[float]]:
    """Mean seconds for one opportunity grid plus the full 26-Te QP sweep."""
    ego, targets = benchmark_snapshot()
    weights = CostWeights()
    grid = SamplingConfig()
    cfg = PlannerConfig()
    ref = ReferenceLine()
    front = max(targets, key=lambda m: m.s0)
    rear = min(targets, key=lambda m: m.s0)
    state = EgoPlanState(d0=3.75, s0_dot=ego.v0)

    def cycle():
        decide(ego, targets, weights, grid)
        result = plan(state, (front, rear), cfg,
                      mode=LongitudinalMode.DISTANCE, ref=ref)
        assert result is not None

    cycle()  # warm caches
    times = []
    for _ in range(reps):
        t0 = time.perf_counter()
        cycle()
        times.append(time.perf_counter() - t0)
    return float(np.mean(times)), times


def lane_change_fixture_polynomials(lateral_offset: float = 3.5,
                                    lon_distance: float = 65.0,
                                    te: float = 6.5):
    """Bare rest-to-rest quintic transfer (no lead-in/out stretches)."""
    u = lateral_offset
    lat = Polynomial((u, 0.0, 0.0, -10.0 * u / te**3, 15.0 * u / te**4,
                      -6.0 * u / te**5), te)
    lon = Polynomial((0.0, lon_distance / te, 0.0, 0.0, 0.0, 0.0), te)
    return lat, lon


def lane_change_fixture(lateral: float = 3.5, transfer: float = 65.0,
                        margin: float = 32.5, te: float = 6.5,
                        n_points: int = 131):
    """Lane-change trajectory used by the smoother studies.

    A 3.5 m quintic transfer over 65 m, embedded in a constant-speed
    trajectory with straight lead-in and lead-out stretches (a merge plan
    spends part of its horizon nearly straight; the smoother needs that
    room to spread the bends, otherwise no path through the buffer band can
    reach the satisfactory curvature).
    """
    from .core import Trajectory

    total = transfer + 2.0 * margin
    v = total / te
    t = np.linspace(0.0, te, n_points)
    s = v * t
    u = np.clip((s - margin) / transfer, 0.0, 1.0)
    ramp = 10.0 * u**3 - 15.0 * u**4 + 6.0 * u**5
    d = lateral * (1.0 - ramp)
    inside = (u > 0.0) & (u < 1.0)
    du = np.where(inside, (30.0 * u**2 - 60.0 * u**3 + 30.0 * u**4) / transfer * v, 0.0)
    ddu = np.where(inside, (60.0 * u - 180.0 * u**2 + 120.0 * u**3) / transfer**2 * v * v, 0.0)
    d_dot = -lateral * du
    d_ddot = -lateral * ddu
    heading = np.arctan2(d_dot, v)
    speed = np.hypot(v, d_dot)
    curvature = (v * d_ddot) / np.maximum(speed, 1e-9) ** 3
    accel = (d_dot * d_ddot) / np.maximum(speed, 1e-9)
    return Trajectory.from_arrays(t[1] - t[0], t, s, d, s, d, heading,
                                  curvature, speed, accel)


def bench_smoothing(reps: int = 100) -> Tuple[float, List[float]]:
    """Mean seconds to smooth the ~130-point lane-change fixture."""
    from .smoother import SmootherConfig, smooth

    traj = lane_change_fixture()
    cfg = SmootherConfig()
    smooth(traj, cfg)  # warm the jit kernels
    times = []
    for _ in range(reps):
        t0 = time.perf_counter()
        smooth(traj, cfg)
        times.append(time.perf_counter() - t0)
    return float(np.mean(times)), times


def run_selftest(seed: int = 0, verbose_print: Callable = print) -> bool:
    """Run both oracle suites and report one line per suite."""
    ok = True
    for result in (qp_oracle_suite(seed=seed), gradient_oracle_suite(seed=seed + 1)):
        status = "PASS" if result.passed else "FAIL"
        verbose_print(f"[{status}] {result.name}: {result.n_cases} cases, "
                      f"{result.n_failures} failures, worst={result.worst:.3e}"
                      + (f" ({result.detail})" if result.detail else ""))
        ok = ok and result.passed
    return ok
