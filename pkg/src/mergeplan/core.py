"""Polynomial motion profiles, Frenet-frame geometry and trajectory containers."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, replace

import numpy as np

TRAJECTORY_CSV_COLUMNS = ("t", "s", "d", "x", "y", "heading", "curvature", "v", "a")

# Standard lane width in China (used as the default everywhere a road width is needed).
DEFAULT_LANE_WIDTH = 3.75


class DegenerateGeometryError(ValueError):
    """Raised when consecutive trajectory points coincide and angles are undefined."""


@dataclass(frozen=True)
class Polynomial:
    """Monomial-basis motion profile over the time window [0, horizon].

    coefficients are ordered constant-term first; length 5 (quartic) or 6
    (quintic).
    """

    coefficients: tuple
    horizon: float

    def __post_init__(self):
        coeffs = tuple(float(c) for c in self.coefficients)
        object.__setattr__(self, "coefficients", coeffs)
        if len(coeffs) not in (5, 6):
            raise ValueError(f"expected 5 or 6 coefficients, got {len(coeffs)}")
        if not (self.horizon > 0.0 and math.isfinite(self.horizon)):
            raise ValueError(f"horizon must be positive and finite, got {self.horizon}")

    def eval(self, t, order: int = 0):
        """Evaluate the order-th derivative (order 0..3) at time t.

        t may be a scalar or an array; every value must lie in [0, horizon].
        """
        if order not in (0, 1, 2, 3):
            raise ValueError(f"derivative order must be in 0..3, got {order}")
        t_arr = np.asarray(t, dtype=float)
        tol = 1e-9 * max(1.0, self.horizon)
        if np.any(t_arr < -tol) or np.any(t_arr > self.horizon + tol):
            raise ValueError(f"t={t} outside [0, {self.horizon}]")
        t_arr = np.clip(t_arr, 0.0, self.horizon)
        c = np.polynomial.polynomial.polyder(np.array(self.coefficients), m=order) \
            if order else np.array(self.coefficients)
        out = np.polynomial.polynomial.polyval(t_arr, c)
        return float(out) if np.isscalar(t) or t_arr.ndim == 0 else out


@dataclass(frozen=True)
class ReferenceLine:
    """Straight lane-aligned reference: origin point, heading and lane width."""

    origin: tuple = (0.0, 0.0)
    heading: float = 0.0
    lane_width: float = DEFAULT_LANE_WIDTH

    def __post_init__(self):
        object.__setattr__(self, "origin", (float(self.origin[0]), float(self.origin[1])))
        if not self.lane_width > 0.0:
            raise ValueError(f"lane_width must be positive, got {self.lane_width}")


def frenet_to_cartesian(ref: ReferenceLine, s, d):
    """Map lane coordinates (s along, d left of the reference) to the plane.

    Returns (x, y) scalars for scalar input, arrays for array input.
    """
    ct, st = math.cos(ref.heading), math.sin(ref.heading)
    x = ref.origin[0] + np.asarray(s) * ct - np.asarray(d) * st
    y = ref.origin[1] + np.asarray(s) * st + np.asarray(d) * ct
    if np.isscalar(s) and np.isscalar(d):
        return float(x), float(y)
    return x, y


@dataclass(frozen=True)
class TrajectoryPoint:
    t: float
    s: float
    d: float
    x: float
    y: float
    heading: float
    curvature: float
    v: float
    a: float


@dataclass(frozen=True)
class Trajectory:
    """Uniformly time-sampled sequence of trajectory points."""

    points: tuple
    dt: float

    def __post_init__(self):
        object.__setattr__(self, "points", tuple(self.points))
        if len(self.points) < 4:
            raise ValueError(f"trajectory needs at least 4 points, got {len(self.points)}")
        if not self.dt > 0.0:
            raise ValueError(f"dt must be positive, got {self.dt}")
        ts = np.array([p.t for p in self.points])
        steps = np.diff(ts)
        if np.any(steps <= 0.0):
            raise ValueError("trajectory times must be strictly increasing")
        if np.any(np.abs(steps - self.dt) > 1e-4 * self.dt):
            raise ValueError("trajectory points must be uniformly spaced in t")

    def __len__(self):
        return len(self.points)

    def column(self, name: str) -> np.ndarray:
        return np.array([getattr(p, name) for p in self.points])

    def xy(self) -> np.ndarray:
        """Planar positions as an (L, 2) array."""
        return np.column_stack([self.column("x"), self.column("y")])

    @classmethod
    def from_arrays(cls, dt, t, s, d, x, y, heading, curvature, v, a) -> "Trajectory":
        cols = [np.asarray(c, dtype=float) for c in (t, s, d, x, y, heading, curvature, v, a)]
        points = tuple(TrajectoryPoint(*row) for row in zip(*cols))
        return cls(points=points, dt=float(dt))

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(TRAJECTORY_CSV_COLUMNS)
            for p in self.points:
                writer.writerow([format(getattr(p, c), ".6g") for c in TRAJECTORY_CSV_COLUMNS])

    @classmethod
    def from_csv(cls, path) -> "Trajectory":
        with open(path, newline="") as fh:
            reader = csv.reader(fh)
            header = next(reader)
            if tuple(h.strip() for h in header) != TRAJECTORY_CSV_COLUMNS:
                raise ValueError(f"unexpected trajectory CSV header: {header}")
            rows = [[float(v) for v in row] for row in reader if row]
        if len(rows) < 4:
            raise ValueError("trajectory CSV needs at least 4 data rows")
        arr = np.array(rows)
        dt = arr[1, 0] - arr[0, 0]
        return cls.from_arrays(dt, *arr.T)


def polyline_headings_curvatures(xy: np.ndarray):
    """Discrete heading and signed curvature of a planar polyline.

    Heading at each point is the direction of its forward difference; the
    curvature at an interior point is the turn angle between the incoming and
    outgoing segments divided by the incoming segment length, signed by the
    turn direction. Endpoints copy the nearest interior value.
    """
    xy = np.asarray(xy, dtype=float)
    n = len(xy)
    seg = np.diff(xy, axis=0)
    seg_len = np.hypot(seg[:, 0], seg[:, 1])
    if np.any(seg_len == 0.0):
        raise DegenerateGeometryError("coincident consecutive points")

    heading = np.empty(n)
    heading[:-1] = np.arctan2(seg[:, 1], seg[:, 0])
    heading[-1] = heading[-2]
    heading[0] = heading[1]

    curvature = np.zeros(n)
    d1, d2 = seg[:-1], seg[1:]
    cos_phi = np.einsum("ij,ij->i", d1, d2) / (seg_len[:-1] * seg_len[1:])
    # Rounding can push the cosine of parallel segments below 1 by ~1e-16,
    # which arccos would amplify to a spurious ~1e-8 turn; snap those to 0.
    phi = np.where(cos_phi >= 1.0 - 1e-12, 0.0,
                   np.arccos(np.clip(cos_phi, -1.0, 1.0)))
    cross = d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0]
    k_interior = np.where(cross >= 0.0, phi, -phi) / seg_len[:-1]
    curvature[1:-1] = k_interior
    curvature[0] = curvature[1]
    curvature[-1] = curvature[-2]
    return heading, curvature


def annotate(traj: Trajectory) -> Trajectory:
    """Fill heading and curvature of every point from the discrete geometry."""
    heading, curvature = polyline_headings_curvatures(traj.xy())
    points = tuple(
        replace(p, heading=float(h), curvature=float(k))
        for p, h, k in zip(traj.points, heading, curvature)
    )
    return Trajectory(points=points, dt=traj.dt)
