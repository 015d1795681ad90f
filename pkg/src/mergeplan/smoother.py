"""Iterative per-point trajectory smoothing by gradient descent.

Each interior point descends the weighted sum of three terms: a one-sided
curvature penalty (active above the satisfactory curvature), a straightness
term on segment lengths (keeps the gradient from vanishing on long merge
trajectories), and a smoothness term on consecutive segment differences.
Step sizes are modulated by a Gaussian profile over the point index so the
ends barely move, and a buffer band around the original trajectory stops the
descent before it can wander (and keeps the collision-free certificate).

Points are updated in place, in index order, so each update sees its already
updated neighbours (Gauss-Seidel); the sweep order is part of the contract.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from typing import Optional, Tuple

import numpy as np
from numba import njit

from .core import (DegenerateGeometryError, ReferenceLine, Trajectory,
                   polyline_headings_curvatures)

_MIN_SEGMENT = 1e-9


class StopReason(enum.Enum):
    MAX_ITER = "max_iter"
    CURVATURE_SATISFIED = "curvature_satisfied"
    BUFFER_EXCEEDED = "buffer_exceeded"


@dataclass(frozen=True)
class SmootherConfig:
    w_curv: float = 1.0
    w_straight: float = 1.0
    w_smooth: float = 1.0
    step_smooth: float = 0.15
    step_straight: float = 0.15
    # The curvature step must stay below ~spacing^4/12 or the in-place sweep
    # amplifies point-to-point kinks instead of damping them.
    step_curv: float = 0.01
    sigma: Optional[float] = None      # None: L / 4 at run time
    buffer: float = 0.5
    c_max: float = 0.002
    max_iter: int = 400
    resample_spacing: float = 2.0      # 0 disables the arc-length resampling

    def __post_init__(self):
        if min(self.w_curv, self.w_straight, self.w_smooth,
               self.step_smooth, self.step_straight, self.step_curv) < 0.0:
            raise ValueError("weights and step sizes must be non-negative")
        if self.max_iter < 1:
            raise ValueError("max_iter must be at least 1")
        if not self.buffer > 0.0:
            raise ValueError("buffer must be positive")


@dataclass(frozen=True)
class SmoothReport:
    iterations_run: int
    stop_reason: StopReason
    max_curvature_before: float
    max_curvature_after: float
    max_heading_before: float
    max_heading_after: float
    max_offset: float
    degenerate: bool = False
    history: np.ndarray = field(repr=False, default=None)


@njit(cache=True)
def _smoothness_stencil(pts, i):
    gx = pts[i - 2, 0] - 4.0 * pts[i - 1, 0] + 6.0 * pts[i, 0] \
        - 4.0 * pts[i + 1, 0] + pts[i + 2, 0]
    gy = pts[i - 2, 1] - 4.0 * pts[i - 1, 1] + 6.0 * pts[i, 1] \
        - 4.0 * pts[i + 1, 1] + pts[i + 2, 1]
    return gx, gy


@njit(cache=True)
def _straightness_stencil(pts, i):
    gx = 2.0 * pts[i, 0] - pts[i - 1, 0] - pts[i + 1, 0]
    gy = 2.0 * pts[i, 1] - pts[i - 1, 1] - pts[i + 1, 1]
    return gx, gy


@njit(cache=True)
def _vertex_curvature(pts, j):
    """Turn angle over incoming segment length at vertex j (non-negative)."""
    d1x = pts[j, 0] - pts[j - 1, 0]
    d1y = pts[j, 1] - pts[j - 1, 1]
    d2x = pts[j + 1, 0] - pts[j, 0]
    d2y = pts[j + 1, 1] - pts[j, 1]
    l1 = math.sqrt(d1x * d1x + d1y * d1y)
    l2 = math.sqrt(d2x * d2x + d2y * d2y)
    if l1 < _MIN_SEGMENT or l2 < _MIN_SEGMENT:
        return -1.0
    u = (d1x * d2x + d1y * d2y) / (l1 * l2)
    if u > 1.0:
        u = 1.0
    elif u < -1.0:
        u = -1.0
    return math.acos(u) / l1


@njit(cache=True)
def _vertex_curvature_grads(pts, j):
    """Curvature at vertex j and its gradients w.r.t. the three points.

    Returns (k, ga, gb, gc) where ga/gb/gc are the 2-vectors of dk/dx for
    x_{j-1}, x_j, x_{j+1}. A negative k flags degenerate geometry.
    """
    zero = (0.0, 0.0)
    ax, ay = pts[j - 1, 0], pts[j - 1, 1]
    bx, by = pts[j, 0], pts[j, 1]
    cx, cy = pts[j + 1, 0], pts[j + 1, 1]
    d1x, d1y = bx - ax, by - ay
    d2x, d2y = cx - bx, cy - by
    l1 = math.sqrt(d1x * d1x + d1y * d1y)
    l2 = math.sqrt(d2x * d2x + d2y * d2y)
    if l1 < _MIN_SEGMENT or l2 < _MIN_SEGMENT:
        return -1.0, zero, zero, zero
    dot = d1x * d2x + d1y * d2y
    u = dot / (l1 * l2)
    if u > 1.0:
        u = 1.0
    elif u < -1.0:
        u = -1.0
    phi = math.acos(u)
    k = phi / l1

    root = math.sqrt(max(1.0 - u * u, 1e-12))
    dphi_du = -1.0 / root

    inv_l12 = 1.0 / (l1 * l2)
    # du/da, du/db, du/dc
    dua_x = -d2x * inv_l12 + u * d1x / (l1 * l1)
    dua_y = -d2y * inv_l12 + u * d1y / (l1 * l1)
    dub_x = (d2x - d1x) * inv_l12 - u * (d1x / (l1 * l1) - d2x / (l2 * l2))
    dub_y = (d2y - d1y) * inv_l12 - u * (d1y / (l1 * l1) - d2y / (l2 * l2))
    duc_x = d1x * inv_l12 - u * d2x / (l2 * l2)
    duc_y = d1y * inv_l12 - u * d2y / (l2 * l2)
    # dl1/da = -D1/l1, dl1/db = D1/l1, dl1/dc = 0
    ga = ((dphi_du * dua_x) / l1 - (phi / (l1 * l1)) * (-d1x / l1),
          (dphi_du * dua_y) / l1 - (phi / (l1 * l1)) * (-d1y / l1))
    gb = ((dphi_du * dub_x) / l1 - (phi / (l1 * l1)) * (d1x / l1),
          (dphi_du * dub_y) / l1 - (phi / (l1 * l1)) * (d1y / l1))
    gc = ((dphi_du * duc_x) / l1, (dphi_du * duc_y) / l1)
    return k, ga, gb, gc


@njit(cache=True)
def _curvature_gradient_point(pts, i, c_max):
    """Gradient at x_i of the one-sided curvature penalties it influences."""
    L = pts.shape[0]
    gx = 0.0
    gy = 0.0
    degenerate = False
    for j in range(max(1, i - 1), min(L - 2, i + 1) + 1):
        k, ga, gb, gc = _vertex_curvature_grads(pts, j)
        if k < 0.0:
            degenerate = True
            continue
        if k <= c_max:
            continue
        scale = 2.0 * (k - c_max)
        if i == j - 1:
            gx += scale * ga[0]
            gy += scale * ga[1]
        elif i == j:
            gx += scale * gb[0]
            gy += scale * gb[1]
        else:
            gx += scale * gc[0]
            gy += scale * gc[1]
    return gx, gy, degenerate


@njit(cache=True)
def _sweep(pts, gw, alpha, beta, gamma, c_max):
    """One in-place Gauss-Seidel pass over the movable points."""
    L = pts.shape[0]
    degenerate = False
    for i in range(2, L - 2):
        gsx, gsy = _smoothness_stencil(pts, i)
        gtx, gty = _straightness_stencil(pts, i)
        gcx, gcy, bad = _curvature_gradient_point(pts, i, c_max)
        if bad:
            degenerate = True
        w = gw[i]
        pts[i, 0] -= w * (alpha * gsx + beta * gtx + gamma * gcx)
        pts[i, 1] -= w * (alpha * gsy + beta * gty + gamma * gcy)
    return degenerate


@njit(cache=True)
def _polyline_metrics(pts, orig):
    """(max vertex curvature, max per-index offset, min segment length)."""
    L = pts.shape[0]
    kmax = 0.0
    min_seg = 1e300
    for j in range(1, L - 1):
        k = _vertex_curvature(pts, j)
        if k > kmax:
            kmax = k
    for j in range(L - 1):
        dx = pts[j + 1, 0] - pts[j, 0]
        dy = pts[j + 1, 1] - pts[j, 1]
        seg = math.sqrt(dx * dx + dy * dy)
        if seg < min_seg:
            min_seg = seg
    dmax = 0.0
    for j in range(L):
        dx = pts[j, 0] - orig[j, 0]
        dy = pts[j, 1] - orig[j, 1]
        off = math.sqrt(dx * dx + dy * dy)
        if off > dmax:
            dmax = off
    return kmax, dmax, min_seg


def gaussian_weight(i: int, sigma: float, length: int) -> float:
    """Step-size modulation over the point index: 1 mid-trajectory, small at ends."""
    if not 0 <= i < length:
        raise ValueError(f"index {i} outside 0..{length - 1}")
    mid = (length - 1) / 2.0
    return math.exp(-((i - mid) ** 2) / (2.0 * sigma * sigma))


def smoothness_gradient(points: np.ndarray, i: int) -> np.ndarray:
    """Gradient at x_i of half the summed squared segment differences.

    Zero for points whose five-point stencil leaves the polyline.
    """
    pts = np.ascontiguousarray(points, dtype=float)
    if not 2 <= i <= len(pts) - 3:
        return np.zeros(2)
    return np.array(_smoothness_stencil(pts, i))


def straightness_gradient(points: np.ndarray, i: int) -> np.ndarray:
    """Gradient at x_i of half the summed squared segment lengths."""
    pts = np.ascontiguousarray(points, dtype=float)
    if not 1 <= i <= len(pts) - 2:
        return np.zeros(2)
    return np.array(_straightness_stencil(pts, i))


def curvature_gradient(points: np.ndarray, i: int,
                       c_max: float = SmootherConfig.c_max) -> np.ndarray:
    """Gradient at x_i of the one-sided curvature penalties around it.

    The penalty at a vertex is (k - c_max)^2 and only active while its
    curvature exceeds c_max, so straight stretches are left alone.
    """
    pts = np.ascontiguousarray(points, dtype=float)
    if not 1 <= i <= len(pts) - 2:
        return np.zeros(2)
    gx, gy, degenerate = _curvature_gradient_point(pts, i, c_max)
    if degenerate:
        raise DegenerateGeometryError("coincident points in curvature stencil")
    return np.array([gx, gy])


def smoothing_objective(points: np.ndarray, cfg: SmootherConfig) -> float:
    """Weighted objective value: curvature + straightness + smoothness terms."""
    pts = np.asarray(points, dtype=float)
    seg = np.diff(pts, axis=0)
    straight = 0.5 * float(np.sum(seg * seg))
    sd = np.diff(seg, axis=0)
    smooth = 0.5 * float(np.sum(sd * sd))
    _, curv = polyline_headings_curvatures(pts)
    k = np.abs(curv[1:-1])
    excess = np.maximum(k - cfg.c_max, 0.0)
    curvature = float(np.sum(excess * excess))
    return cfg.w_curv * curvature + cfg.w_straight * straight + cfg.w_smooth * smooth


def resample_polyline(xy: np.ndarray, spacing: float) -> np.ndarray:
    """Resample a polyline to (approximately) uniform arc-length spacing."""
    xy = np.asarray(xy, dtype=float)
    seg = np.linalg.norm(np.diff(xy, axis=0), axis=1)
    arc = np.concatenate([[0.0], np.cumsum(seg)])
    total = arc[-1]
    n = max(int(round(total / spacing)), 4)
    targets = np.linspace(0.0, total, n + 1)
    return np.column_stack([np.interp(targets, arc, xy[:, 0]),
                            np.interp(targets, arc, xy[:, 1])])


def smooth_polyline(xy: np.ndarray, cfg: SmootherConfig
                    ) -> Tuple[np.ndarray, SmoothReport]:
    """Run the descent on a raw polyline; the first and last two points stay put."""
    pts = np.array(xy, dtype=float)
    if pts.ndim != 2 or pts.shape[1] != 2 or len(pts) < 5:
        raise ValueError("need an (L, 2) polyline with at least 5 points")
    orig = pts.copy()
    length = len(pts)
    sigma = cfg.sigma if cfg.sigma is not None else length / 4.0
    mid = (length - 1) / 2.0
    idx = np.arange(length)
    gw = np.exp(-((idx - mid) ** 2) / (2.0 * sigma * sigma))

    heading0, curv0 = polyline_headings_curvatures(orig)
    kmax_before = float(np.abs(curv0).max())
    hmax_before = float(np.abs(heading0).max())

    history = []
    stop = StopReason.MAX_ITER
    degenerate = False
    sweeps = 0
    kmax = kmax_before
    dmax = 0.0
    for sweeps in range(1, cfg.max_iter + 1):
        backup = pts.copy()
        bad = _sweep(pts, gw, cfg.step_smooth, cfg.step_straight,
                     cfg.step_curv, cfg.c_max)
        kmax, dmax, min_seg = _polyline_metrics(pts, orig)
        if bad or min_seg < _MIN_SEGMENT:
            pts = backup
            kmax, dmax, _ = _polyline_metrics(pts, orig)
            degenerate = True
            stop = StopReason.MAX_ITER
            history.append((sweeps, kmax, dmax))
            break
        history.append((sweeps, kmax, dmax))
        if dmax > cfg.buffer:
            pts = backup
            kmax, dmax, _ = _polyline_metrics(pts, orig)
            stop = StopReason.BUFFER_EXCEEDED
            break
        if kmax < cfg.c_max:
            stop = StopReason.CURVATURE_SATISFIED
            break
    else:
        stop = StopReason.MAX_ITER

    heading1, _ = polyline_headings_curvatures(pts)
    report = SmoothReport(
        iterations_run=sweeps,
        stop_reason=stop,
        max_curvature_before=kmax_before,
        max_curvature_after=float(kmax),
        max_heading_before=hmax_before,
        max_heading_after=float(np.abs(heading1).max()),
        max_offset=float(dmax),
        degenerate=degenerate,
        history=np.array(history),
    )
    return pts, report


def smooth(traj: Trajectory, cfg: SmootherConfig = SmootherConfig(),
           ref: ReferenceLine = ReferenceLine()
           ) -> Tuple[Trajectory, SmoothReport]:
    """Smooth a trajectory's geometry while preserving its time law.

    The planar path is resampled to roughly uniform arc-length spacing,
    smoothed, then re-parameterized against the original arc-length-vs-time
    mapping and sampled back onto the original time grid. Speeds and
    accelerations are carried over from the original profile; headings and
    curvatures are recomputed from the smoothed geometry.
    """
    if len(traj) < 5:
        raise ValueError("need at least 5 trajectory points to smooth")
    xy = traj.xy()
    working = resample_polyline(xy, cfg.resample_spacing) \
        if cfg.resample_spacing > 0.0 else xy.copy()
    smoothed, report = smooth_polyline(working, cfg)

    t_orig = traj.column("t")
    seg_orig = np.linalg.norm(np.diff(xy, axis=0), axis=1)
    arc_orig = np.concatenate([[0.0], np.cumsum(seg_orig)])
    seg_new = np.linalg.norm(np.diff(smoothed, axis=0), axis=1)
    arc_new = np.concatenate([[0.0], np.cumsum(seg_new)])
    # Normalized arc fraction ties each smoothed point to an original time.
    frac_new = arc_new / arc_new[-1]
    t_new = np.interp(frac_new, arc_orig / arc_orig[-1], t_orig)

    x_out = np.interp(t_orig, t_new, smoothed[:, 0])
    y_out = np.interp(t_orig, t_new, smoothed[:, 1])
    ct, st = math.cos(ref.heading), math.sin(ref.heading)
    dx, dy = x_out - ref.origin[0], y_out - ref.origin[1]
    s_out = dx * ct + dy * st
    d_out = -dx * st + dy * ct
    heading, curvature = polyline_headings_curvatures(np.column_stack([x_out, y_out]))
    out = Trajectory.from_arrays(traj.dt, t_orig, s_out, d_out, x_out, y_out,
                                 heading, curvature,
                                 traj.column("v"), traj.column("a"))
    return out, report
