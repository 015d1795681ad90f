"""Merge-opportunity search: sampled speed-adjustment maneuvers scored by cost.

Candidate ego accelerations and adjustment durations are evaluated against
the predicted traffic. Four regularized cost terms (gap position, time to
collision, total time, acceleration effort) are combined by weights; the
cheapest candidate drives the speed-adjustment phase, and the merge phase is
triggered once the current state itself is safe and well placed in the gap.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .prediction import EgoMotion, TargetMotion, predict_target

# A time to collision of at least 3 s to both gap neighbours counts as safe.
TTC_SAFE = 3.0
# Fractional gap position window that allows triggering the merge. Kept
# tight: the relative drift still present at the trigger carries the ego a
# further ~0.15 of the gap before the planned profile arrests it.
MERGE_WINDOW = (0.4, 0.6)
# Virtual companion offset: 3 s headway at ego speed plus a 20 m margin.
VIRTUAL_HEADWAY_TIME = 3.0
VIRTUAL_HEADWAY_MARGIN = 20.0


class ScenarioKind(enum.Enum):
    MERGE_BEHIND = "merge_behind"
    MERGE_BETWEEN = "merge_between"
    MERGE_AHEAD = "merge_ahead"


class Phase(enum.IntEnum):
    ADJUSTING = 0
    MERGING = 1


@dataclass(frozen=True)
class MergeScenario:
    """Classified merge situation with the bounding pair of the target gap.

    target_a is the vehicle ahead (larger offset), target_b the one behind;
    either may be a synthesized companion when fewer than two real vehicles
    are present. Offsets are relative to the ego, whose current speed is
    kept for prediction.
    """

    kind: ScenarioKind
    target_a: Optional[TargetMotion]
    target_b: Optional[TargetMotion]
    ego_v0: float = 0.0
    a_is_virtual: bool = False
    b_is_virtual: bool = False

    def __post_init__(self):
        if self.target_a is None or self.target_b is None:
            raise ValueError("scenario requires a bounding pair (synthesize missing ones)")
        if not self.target_a.s0 > self.target_b.s0:
            raise ValueError("target_a must be ahead of target_b")
        if self.kind is not ScenarioKind.MERGE_BETWEEN and self.a_is_virtual and self.b_is_virtual:
            raise ValueError(f"{self.kind} requires at least one real target")

    @property
    def has_real_target(self) -> bool:
        return not (self.a_is_virtual and self.b_is_virtual)


@dataclass(frozen=True)
class CostWeights:
    w_dist: float = 1.0
    w_ttc: float = 1.0
    w_time: float = 0.5
    w_acc: float = 0.3

    def __post_init__(self):
        ws = (self.w_dist, self.w_ttc, self.w_time, self.w_acc)
        if any(w < 0.0 for w in ws):
            raise ValueError("cost weights must be non-negative")
        if not any(w > 0.0 for w in ws):
            raise ValueError("at least one cost weight must be positive")


@dataclass(frozen=True)
class SamplingConfig:
    """Acceleration and adjustment-time grid for candidate maneuvers."""

    a_min: float = -2.0
    a_max: float = 2.0
    a_step: float = 0.25
    t_min: float = 1.0
    t_max: float = 12.0
    t_step: float = 0.5

    def __post_init__(self):
        if not (self.a_max > self.a_min and self.t_max > self.t_min > 0.0):
            raise ValueError("sampling bounds must be ordered")
        if not (self.a_step > 0.0 and self.t_step > 0.0):
            raise ValueError("sampling steps must be positive")

    def accelerations(self) -> np.ndarray:
        n = int(round((self.a_max - self.a_min) / self.a_step))
        return self.a_min + self.a_step * np.arange(n + 1)

    def times(self) -> np.ndarray:
        n = int(round((self.t_max - self.t_min) / self.t_step))
        return self.t_min + self.t_step * np.arange(n + 1)


@dataclass(frozen=True)
class CandidateManeuver:
    a0: float
    t_adjust: float


@dataclass(frozen=True)
class CostBreakdown:
    c_dist: float
    c_ttc: float
    c_time: float
    c_acc: float
    total: float

    def __post_init__(self):
        for name in ("c_dist", "c_ttc", "c_time", "c_acc"):
            v = getattr(self, name)
            if not -1e-9 <= v <= 1.0 + 1e-9:
                raise ValueError(f"{name}={v} outside [0, 1]")


@dataclass(frozen=True)
class OpportunityDecision:
    phase: Phase
    command_a0: float
    chosen: CandidateManeuver
    breakdown: CostBreakdown


def _virtual_companion(anchor: TargetMotion, ego_speed: float, ahead: bool) -> TargetMotion:
    offset = VIRTUAL_HEADWAY_TIME * ego_speed + VIRTUAL_HEADWAY_MARGIN
    s0 = anchor.s0 + offset if ahead else anchor.s0 - offset
    return TargetMotion(s0=s0, v0=anchor.v0, A0=0.0, T=anchor.T)


def classify(ego: EgoMotion, targets: Sequence[TargetMotion]) -> MergeScenario:
    """Classify the merge situation and complete the gap's bounding pair.

    Offsets in `targets` are relative to the ego. With two vehicles the gap
    is the space between them and the kind reflects which side the ego
    approaches from; with one vehicle (or none) virtual companions are
    synthesized so the downstream gap arithmetic is uniform.
    """
    targets = list(targets)
    if len(targets) > 2:
        raise ValueError("at most two target vehicles are supported")

    if not targets:
        anchor = TargetMotion(s0=0.0, v0=ego.v0, A0=0.0)
        return MergeScenario(
            kind=ScenarioKind.MERGE_BETWEEN,
            target_a=_virtual_companion(anchor, ego.v0, ahead=True),
            target_b=_virtual_companion(anchor, ego.v0, ahead=False),
            ego_v0=ego.v0, a_is_virtual=True, b_is_virtual=True)

    if len(targets) == 1:
        real = targets[0]
        if real.s0 >= 0.0:
            return MergeScenario(
                kind=ScenarioKind.MERGE_BEHIND, target_a=real,
                target_b=_virtual_companion(real, ego.v0, ahead=False),
                ego_v0=ego.v0, b_is_virtual=True)
        return MergeScenario(
            kind=ScenarioKind.MERGE_AHEAD,
            target_a=_virtual_companion(real, ego.v0, ahead=True),
            target_b=real, ego_v0=ego.v0, a_is_virtual=True)

    rear, front = sorted(targets, key=lambda m: m.s0)
    if rear.s0 > 0.0:
        kind = ScenarioKind.MERGE_BEHIND
    elif front.s0 < 0.0:
        kind = ScenarioKind.MERGE_AHEAD
    else:
        kind = ScenarioKind.MERGE_BETWEEN
    return MergeScenario(kind=kind, target_a=front, target_b=rear, ego_v0=ego.v0)


def _p_dist(s_ego, s_front, s_rear):
    """Fractional ego position inside the gap, 0 at the rear vehicle."""
    width = np.asarray(s_front - s_rear, dtype=float)
    safe = np.where(width > 1e-9, width, 1.0)
    return np.where(width > 1e-9, (s_ego - s_rear) / safe, np.inf)


def _ttc(gap, closing):
    """Time to collision: gap over closing speed, inf when opening, 0 on overlap."""
    gap = np.asarray(gap, dtype=float)
    closing = np.asarray(closing, dtype=float)
    raw = np.where(closing > 0.0, gap / np.where(closing > 0.0, closing, 1.0), np.inf)
    return np.where(gap <= 0.0, 0.0, raw)


def _ttc_cost(ttc):
    with np.errstate(invalid="ignore"):
        return np.clip(1.0 - np.asarray(ttc) / TTC_SAFE, 0.0, 1.0)


def _dist_cost(p_dist):
    with np.errstate(invalid="ignore"):
        dev = np.where(np.isfinite(p_dist), np.abs(np.asarray(p_dist) - 0.5), 1.0)
        return np.minimum(1.0, (2.0 * dev) ** 2)


def _predict_ego_grid(v0, accel, t):
    """Clamped constant-acceleration prediction broadcast over a grid."""
    accel = np.asarray(accel, dtype=float)
    t = np.asarray(t, dtype=float)
    with np.errstate(divide="ignore"):
        t_stop = np.where(accel < 0.0, v0 / np.maximum(-accel, 1e-300), np.inf)
    t_eff = np.minimum(t, t_stop)
    s = v0 * t_eff + 0.5 * accel * t_eff**2
    v = np.maximum(v0 + accel * t_eff, 0.0)
    return s, v


def _gap_costs(scenario: MergeScenario, s_ego, v_ego, t):
    """c_dist and c_ttc of the ego state against the gap pair at time t."""
    s_f, v_f, _ = predict_target(scenario.target_a, t)
    s_r, v_r, _ = predict_target(scenario.target_b, t)
    p = _p_dist(s_ego, s_f, s_r)
    ttc_front = _ttc(s_f - s_ego, v_ego - v_f)
    ttc_rear = _ttc(s_ego - s_r, v_r - v_ego)
    c_ttc = 0.5 * (_ttc_cost(ttc_rear) + _ttc_cost(ttc_front))
    return _dist_cost(p), c_ttc, p, ttc_front, ttc_rear


def score(candidate: CandidateManeuver, scenario: MergeScenario,
          weights: CostWeights, grid: SamplingConfig = SamplingConfig()) -> CostBreakdown:
    """Cost of one sampled maneuver against the predicted gap.

    The ego runs the candidate acceleration for t_adjust seconds; the gap
    neighbours follow their decay model. Gap position and safety are judged
    at the end of the adjustment, time and effort by the candidate itself.
    """
    t = candidate.t_adjust
    s_e, v_e = _predict_ego_grid(scenario.ego_v0, candidate.a0, t)
    c_dist, c_ttc, _, _, _ = _gap_costs(scenario, s_e, v_e, t)
    c_time = min(1.0, max(0.0, (t - grid.t_min) / (grid.t_max - grid.t_min)))
    c_acc = min(1.0, (abs(candidate.a0) / max(abs(grid.a_min), abs(grid.a_max))) ** 2)
    total = (weights.w_dist * float(c_dist) + weights.w_ttc * float(c_ttc)
             + weights.w_time * c_time + weights.w_acc * c_acc)
    return CostBreakdown(float(c_dist), float(c_ttc), c_time, c_acc, total)


def merge_ready(scenario: MergeScenario) -> bool:
    """True when the current state already satisfies the merge trigger.

    Requires a time to collision of at least TTC_SAFE to both gap
    neighbours and a fractional gap position inside MERGE_WINDOW.
    """
    _, _, p, ttc_front, ttc_rear = _gap_costs(scenario, 0.0, scenario.ego_v0, 0.0)
    return (float(ttc_front) >= TTC_SAFE and float(ttc_rear) >= TTC_SAFE
            and MERGE_WINDOW[0] <= float(p) <= MERGE_WINDOW[1])


def decide(ego: EgoMotion, targets: Sequence[TargetMotion], weights: CostWeights,
           grid: SamplingConfig = SamplingConfig()) -> OpportunityDecision:
    """Pick the cheapest candidate on the sampling grid, or trigger the merge.

    When the ego's current state already meets the safety and gap-position
    conditions the decision is MERGING and the chosen maneuver is "now"
    (zero acceleration, zero adjustment time). Otherwise every candidate on
    the acceleration x time grid is scored and the minimum-cost one is
    returned, ties broken by smaller |a0|, then smaller t_adjust, then
    smaller a0. Never raises on an all-unsafe grid: the cheapest candidate
    still wins.
    """
    scenario = classify(ego, targets)

    if merge_ready(scenario):
        c_dist, c_ttc, _, _, _ = _gap_costs(scenario, 0.0, scenario.ego_v0, 0.0)
        total = weights.w_dist * float(c_dist) + weights.w_ttc * float(c_ttc)
        breakdown = CostBreakdown(float(c_dist), float(c_ttc), 0.0, 0.0, total)
        return OpportunityDecision(phase=Phase.MERGING, command_a0=0.0,
                                   chosen=CandidateManeuver(0.0, 0.0),
                                   breakdown=breakdown)

    accels = grid.accelerations()
    times = grid.times()
    a_mesh = accels[:, None]
    t_mesh = times[None, :]
    s_e, v_e = _predict_ego_grid(scenario.ego_v0, a_mesh, t_mesh)
    c_dist, c_ttc, _, _, _ = _gap_costs(scenario, s_e, v_e, t_mesh)
    c_time = np.clip((t_mesh - grid.t_min) / (grid.t_max - grid.t_min),
                     0.0, 1.0) * np.ones_like(a_mesh)
    a_norm = max(abs(grid.a_min), abs(grid.a_max))
    c_acc = np.minimum(1.0, (np.abs(a_mesh) / a_norm) ** 2) * np.ones_like(t_mesh)
    total = (weights.w_dist * c_dist + weights.w_ttc * c_ttc
             + weights.w_time * c_time + weights.w_acc * c_acc)

    a_flat = np.broadcast_to(a_mesh, total.shape).ravel()
    t_flat = np.broadcast_to(t_mesh, total.shape).ravel()
    order = np.lexsort((a_flat, t_flat, np.abs(a_flat), total.ravel()))
    best = order[0]
    i, j = np.unravel_index(best, total.shape)
    chosen = CandidateManeuver(float(accels[i]), float(times[j]))
    breakdown = CostBreakdown(float(c_dist[i, j]), float(c_ttc[i, j]),
                              float(c_time[i, j]), float(c_acc[i, j]),
                              float(total[i, j]))
    return OpportunityDecision(phase=Phase.ADJUSTING, command_a0=chosen.a0,
                               chosen=chosen, breakdown=breakdown)
