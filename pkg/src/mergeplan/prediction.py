"""Motion prediction models for the ego vehicle and surrounding traffic.

The ego vehicle follows a constant-acceleration model; target vehicles follow
an exponentially decaying acceleration model (highway traffic tends back to
constant speed). Predicted speeds are clamped at zero: a braking vehicle
stops instead of reversing.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

# Default decay time constant: a target sheds ~95% of its initial
# acceleration within 6 s, in line with highway driving.
DEFAULT_DECAY_TIME = 2.0


@dataclass(frozen=True)
class EgoMotion:
    """Constant-acceleration state: speed v0 and commanded acceleration a0."""

    v0: float
    a0: float = 0.0

    def __post_init__(self):
        if self.v0 < 0.0:
            raise ValueError(f"ego speed must be non-negative, got {self.v0}")


@dataclass(frozen=True)
class TargetMotion:
    """Target-vehicle state in the ego frame.

    s0 is the signed longitudinal offset from the ego, A0 the current
    acceleration and T the exponential decay time constant.
    """

    s0: float
    v0: float
    A0: float = 0.0
    T: float = DEFAULT_DECAY_TIME

    def __post_init__(self):
        if not self.T > 0.0:
            raise ValueError(f"decay time constant must be positive, got {self.T}")
        if self.v0 < 0.0:
            raise ValueError(f"target speed must be non-negative, got {self.v0}")


def predict_ego(m: EgoMotion, t):
    """Position and speed of the ego at time t >= 0 (scalar or array).

    Braking to standstill freezes the position: for t past the stopping time
    the speed is 0 and s stays at the stopping point.
    """
    t = np.asarray(t, dtype=float)
    if np.any(t < 0.0):
        raise ValueError("prediction time must be non-negative")
    if m.a0 < 0.0:
        t_stop = m.v0 / -m.a0
        t_eff = np.minimum(t, t_stop)
    else:
        t_eff = t
    s = m.v0 * t_eff + 0.5 * m.a0 * t_eff * t_eff
    v = np.maximum(m.v0 + m.a0 * t_eff, 0.0)
    if t.ndim == 0:
        return float(s), float(v)
    return s, v


def _target_stop_time(m: TargetMotion):
    """Time at which the decaying-acceleration model reaches v = 0, or inf."""
    if m.A0 >= 0.0:
        return math.inf
    # v(t) = v0 + A0*T*(1 - e^(-t/T)) hits zero only if the terminal speed
    # v0 + A0*T is negative.
    arg = 1.0 + m.v0 / (m.A0 * m.T)
    if arg <= 0.0:
        return math.inf
    return -m.T * math.log(arg)


def predict_target(m: TargetMotion, t):
    """Position, speed and acceleration of a target at time t >= 0.

    Closed form of the exponential-decay model:
        a(t) = A0 e^(-t/T)
        v(t) = v0 + A0 T (1 - e^(-t/T))
        s(t) = s0 + v0 t + A0 T t - A0 T^2 (1 - e^(-t/T))
    with the same stop-and-freeze clamp as the ego model.
    """
    t = np.asarray(t, dtype=float)
    if np.any(t < 0.0):
        raise ValueError("prediction time must be non-negative")
    t_stop = _target_stop_time(m)
    t_eff = np.minimum(t, t_stop) if math.isfinite(t_stop) else t

    decay = np.exp(-t_eff / m.T)
    a = m.A0 * decay
    v = m.v0 + m.A0 * m.T * (1.0 - decay)
    s = m.s0 + m.v0 * t_eff + m.A0 * m.T * t_eff - m.A0 * m.T**2 * (1.0 - decay)

    stopped = t >= t_stop if math.isfinite(t_stop) else np.zeros_like(t, dtype=bool)
    v = np.where(stopped, 0.0, np.maximum(v, 0.0))
    a = np.where(stopped, 0.0, a)
    if t.ndim == 0:
        return float(s), float(v), float(a)
    return s, v, a


def gap_midpoint(a: TargetMotion, b: TargetMotion, t):
    """Kinematics of the midpoint of the gap between two targets at time t.

    Position, velocity and acceleration are each the arithmetic mean of the
    two targets' predictions.
    """
    sa, va, aa = predict_target(a, t)
    sb, vb, ab = predict_target(b, t)
    return 0.5 * (sa + sb), 0.5 * (va + vb), 0.5 * (aa + ab)
