"""Closed-loop kinematic replay of merge scenarios.

Target vehicles follow their decay-model closed forms exactly. The ego runs
the opportunity finder's acceleration command while adjusting (phase 0); once
the merge triggers, a trajectory is planned, smoothed, and tracked perfectly
(phase 1). There is no feedback controller in the loop: the point is to
exercise the planning stack, not tracking.
"""

from __future__ import annotations

import csv
import dataclasses
import math
from dataclasses import dataclass, field
from typing import List, Optional, Tuple

import numpy as np

from .core import ReferenceLine, Trajectory
from .opportunity import (CostWeights, MergeScenario, Phase, SamplingConfig,
                          classify, decide)
from .planner import (EgoPlanState, LongitudinalMode, PlannerConfig,
                      PlanResult, plan, select_mode)
from .prediction import EgoMotion, TargetMotion, predict_target
from .smoother import SmootherConfig, SmoothReport, smooth

MAX_STEP_DT = 0.05
SETTLE_P_WINDOW = (0.4, 0.6)
SETTLE_SPEED_TOL = 0.5
SETTLE_HOLD = 2.0


@dataclass(frozen=True)
class EgoStart:
    s: float = 0.0
    d: float = 3.75
    v: float = 8.333
    a: float = 0.0
    set_speed: float = 10.0


@dataclass(frozen=True)
class LaneConfig:
    lane_width: float = 3.75
    lane_count: int = 2

    def __post_init__(self):
        if not self.lane_width > 0.0 or self.lane_count < 1:
            raise ValueError("invalid lane geometry")


@dataclass(frozen=True)
class SimParams:
    dt: float = 0.02
    duration: float = 40.0
    replan_period: float = 0.5
    replan_in_merge: bool = False

    def __post_init__(self):
        if not 0.0 < self.dt <= MAX_STEP_DT:
            raise ValueError(f"dt must be in (0, {MAX_STEP_DT}]")
        if not self.duration > 0.0:
            raise ValueError("duration must be positive")
        if not self.replan_period > 0.0:
            raise ValueError("replan_period must be positive")


@dataclass(frozen=True)
class ScenarioConfig:
    """Full scenario description; target offsets are relative to the ego start."""

    ego: EgoStart = EgoStart()
    targets: Tuple[TargetMotion, ...] = ()
    lane: LaneConfig = LaneConfig()
    weights: CostWeights = CostWeights()
    sampling: SamplingConfig = SamplingConfig()
    planner: PlannerConfig = PlannerConfig()
    smoother: SmootherConfig = SmootherConfig()
    sim: SimParams = SimParams()

    def world_targets(self) -> Tuple[TargetMotion, ...]:
        """Targets with offsets shifted into the world frame."""
        return tuple(dataclasses.replace(t, s0=t.s0 + self.ego.s) for t in self.targets)


@dataclass(frozen=True)
class ActivePlan:
    t_start: float
    result: PlanResult
    trajectory: Trajectory          # smoothed, world frame
    smooth_report: SmoothReport

    def sample(self, tau: float):
        """(s, d, v_lon, v_lat, a) of the tracked trajectory at plan time tau."""
        traj = self.trajectory
        t = traj.column("t")
        if tau >= t[-1]:
            last = traj.points[-1]
            hd = last.heading
            v_lon = last.v * math.cos(hd)
            return (last.x + v_lon * (tau - t[-1]), last.y,
                    v_lon, 0.0, 0.0)
        x = float(np.interp(tau, t, traj.column("x")))
        y = float(np.interp(tau, t, traj.column("y")))
        v = float(np.interp(tau, t, traj.column("v")))
        a = float(np.interp(tau, t, traj.column("a")))
        hd = float(np.interp(tau, t, traj.column("heading")))
        return x, y, v * math.cos(hd), v * math.sin(hd), a


@dataclass(frozen=True)
class World:
    t: float
    ego_s: float
    ego_d: float
    ego_v: float
    ego_a_cmd: float
    phase: Phase
    plan: Optional[ActivePlan] = None

    def ego_state(self):
        """(s, d, v_lon, v_lat, a) at the current instant."""
        if self.phase is Phase.MERGING and self.plan is not None:
            return self.plan.sample(self.t - self.plan.t_start)
        return self.ego_s, self.ego_d, self.ego_v, 0.0, self.ego_a_cmd


def step(world: World, dt: float) -> World:
    """Advance the world by one step of at most 0.05 s.

    Phase 0 integrates the commanded acceleration (exact for constant
    commands, speed clamped at zero with the position frozen); phase 1 just
    advances time, the ego state being read off the tracked trajectory.
    """
    if not 0.0 < dt <= MAX_STEP_DT:
        raise ValueError(f"dt must be in (0, {MAX_STEP_DT}]")
    t_new = world.t + dt
    if world.phase is Phase.MERGING:
        return dataclasses.replace(world, t=t_new)
    a = world.ego_a_cmd
    v0 = world.ego_v
    v1 = v0 + a * dt
    if a < 0.0 and v1 < 0.0:
        t_stop = v0 / -a
        s_new = world.ego_s + v0 * t_stop + 0.5 * a * t_stop * t_stop
        v1 = 0.0
    else:
        s_new = world.ego_s + 0.5 * (v0 + v1) * dt
    return dataclasses.replace(world, t=t_new, ego_s=s_new, ego_v=v1)


@dataclass
class SimLog:
    columns: Tuple[str, ...]
    rows: List[Tuple[float, ...]] = field(default_factory=list)
    events: dict = field(default_factory=dict)

    def column(self, name: str) -> np.ndarray:
        idx = self.columns.index(name)
        return np.array([row[idx] for row in self.rows])

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(self.columns)
            for row in self.rows:
                writer.writerow([format(v, ".6g") for v in row])


def _relative_scenario(cfg: ScenarioConfig, world: World, t: float) -> MergeScenario:
    """Classify the live situation in the ego-relative frame."""
    ego_s, _, ego_v, _, _ = world.ego_state()
    rel = []
    for tgt in cfg.world_targets():
        s, v, a = predict_target(tgt, t)
        rel.append(TargetMotion(s0=s - ego_s, v0=v, A0=a, T=tgt.T))
    return classify(EgoMotion(v0=max(ego_v, 0.0)), rel)


def run(cfg: ScenarioConfig) -> SimLog:
    """Run the scenario to completion.

    The opportunity finder is consulted every replan period while adjusting.
    When it reports the merge is on, the trajectory is planned and smoothed
    once and tracked to its end (a planning failure keeps the ego adjusting).
    The run ends at the configured duration, or two seconds after the ego has
    settled near the middle of the gap with matched speed.
    """
    n_targets = len(cfg.targets)
    columns = ["t", "ego_s", "ego_d", "ego_v_lon", "ego_v_lat", "ego_a",
               "phase", "s_a", "s_b", "p_dist"]
    for i in range(n_targets):
        columns += [f"target{i + 1}_s", f"target{i + 1}_v"]
    log = SimLog(columns=tuple(columns))
    log.events = {"merge_trigger_time": None, "settle_time": None,
                  "planning_failures": [], "plan": None, "smooth": None,
                  "merge_replans": 0}

    world = World(t=0.0, ego_s=cfg.ego.s, ego_d=cfg.ego.d, ego_v=cfg.ego.v,
                  ego_a_cmd=cfg.ego.a, phase=Phase.ADJUSTING)
    dt = cfg.sim.dt
    next_replan = 0.0
    settle_since = None
    n_steps = int(round(cfg.sim.duration / dt))

    for k in range(n_steps + 1):
        t = k * dt
        world = dataclasses.replace(world, t=t)

        if world.phase is Phase.ADJUSTING and t >= next_replan - 1e-9:
            next_replan += cfg.sim.replan_period
            scenario = _relative_scenario(cfg, world, t)
            decision = decide(EgoMotion(v0=max(world.ego_v, 0.0)),
                              _live_targets(cfg, world, t),
                              cfg.weights, cfg.sampling)
            if decision.phase is Phase.MERGING:
                active = _plan_merge(cfg, world, t, scenario)
                if active is None:
                    log.events["planning_failures"].append(t)
                    world = dataclasses.replace(world, ego_a_cmd=0.0)
                else:
                    world = dataclasses.replace(world, phase=Phase.MERGING,
                                                plan=active)
                    log.events["merge_trigger_time"] = t
                    log.events["plan"] = {
                        "te": active.result.te,
                        "cost_tilde": active.result.cost_tilde,
                        "cost_total": active.result.cost_total,
                        "n_feasible": active.result.n_feasible,
                    }
                    rep = active.smooth_report
                    log.events["smooth"] = {
                        "iterations": rep.iterations_run,
                        "stop_reason": rep.stop_reason.value,
                        "max_curvature_before": rep.max_curvature_before,
                        "max_curvature_after": rep.max_curvature_after,
                    }
            else:
                world = dataclasses.replace(world, ego_a_cmd=decision.command_a0)

        elif (world.phase is Phase.MERGING and cfg.sim.replan_in_merge
                and t >= next_replan - 1e-9 and world.plan is not None):
            next_replan += cfg.sim.replan_period
            tau = t - world.plan.t_start
            if tau < world.plan.trajectory.points[-1].t:
                scenario = _relative_scenario(cfg, world, t)
                refreshed = _plan_merge(cfg, world, t, scenario,
                                        ego_state=_tracked_plan_state(world, tau))
                if refreshed is None:
                    log.events["planning_failures"].append(t)
                else:
                    world = dataclasses.replace(world, plan=refreshed)
                    log.events["merge_replans"] += 1

        row, p_dist, v_gap_mean = _log_row(cfg, world, t, n_targets)
        log.rows.append(row)

        if world.phase is Phase.MERGING:
            ego_v_mag = math.hypot(row[3], row[4])
            # Settled means the lane change is over (no lateral motion) and
            # the ego sits mid-gap at matched speed.
            settled_now = (abs(row[4]) <= 0.05
                           and SETTLE_P_WINDOW[0] <= p_dist <= SETTLE_P_WINDOW[1]
                           and abs(ego_v_mag - v_gap_mean) <= SETTLE_SPEED_TOL)
            if settled_now:
                if settle_since is None:
                    settle_since = t
                elif t - settle_since >= SETTLE_HOLD:
                    log.events["settle_time"] = t
                    break
            else:
                settle_since = None

        if k < n_steps:
            world = step(world, dt)
    return log


def _live_targets(cfg: ScenarioConfig, world: World, t: float) -> List[TargetMotion]:
    ego_s, _, _, _, _ = world.ego_state()
    out = []
    for tgt in cfg.world_targets():
        s, v, a = predict_target(tgt, t)
        out.append(TargetMotion(s0=s - ego_s, v0=v, A0=a, T=tgt.T))
    return out


def _tracked_plan_state(world: World, tau: float) -> EgoPlanState:
    """Ego state mid-plan, with lateral derivatives from the plan profile."""
    _, ego_d, v_lon, v_lat, a_lon = world.ego_state()
    tau = min(tau, world.plan.result.te)
    d_ddot = world.plan.result.lateral.eval(tau, 2)
    return EgoPlanState(d0=ego_d, d0_dot=v_lat, d0_ddot=d_ddot,
                        s0=0.0, s0_dot=max(v_lon, 0.0), s0_ddot=a_lon)


def _plan_merge(cfg: ScenarioConfig, world: World, t: float,
                scenario: MergeScenario,
                ego_state: Optional[EgoPlanState] = None) -> Optional[ActivePlan]:
    ego_s, ego_d, ego_v, _, ego_a = world.ego_state()
    ref = ReferenceLine(origin=(ego_s, 0.0), heading=0.0,
                        lane_width=cfg.lane.lane_width)
    mode = select_mode(scenario)
    gap = (scenario.target_a, scenario.target_b) \
        if mode is LongitudinalMode.DISTANCE else None
    if ego_state is None:
        ego_state = EgoPlanState(d0=ego_d, s0_dot=max(ego_v, 0.0), s0=0.0,
                                 s0_ddot=ego_a, d0_dot=0.0, d0_ddot=0.0)
    result = plan(ego_state, gap, cfg.planner, mode=mode,
                  v_set=cfg.ego.set_speed, ref=ref)
    if result is None:
        return None
    smoothed, report = smooth(result.trajectory, cfg.smoother, ref)
    return ActivePlan(t_start=t, result=result, trajectory=smoothed,
                      smooth_report=report)


def _log_row(cfg: ScenarioConfig, world: World, t: float, n_targets: int):
    ego_s, ego_d, v_lon, v_lat, a = world.ego_state()
    states = [predict_target(tgt, t) for tgt in cfg.world_targets()]

    if n_targets >= 2:
        order = sorted(range(n_targets), key=lambda i: states[i][0])
        rear, front = states[order[0]], states[order[-1]]
        pair = (front[0], front[1], rear[0], rear[1])
    else:
        scenario = _relative_scenario(cfg, world, t)
        pair = (ego_s + scenario.target_a.s0, scenario.target_a.v0,
                ego_s + scenario.target_b.s0, scenario.target_b.v0)
    s_front, v_front, s_rear, v_rear = pair
    width = s_front - s_rear
    p_dist = (ego_s - s_rear) / width if width > 1e-9 else math.inf
    v_gap_mean = 0.5 * (v_front + v_rear)

    row = [t, ego_s, ego_d, v_lon, v_lat, a, float(world.phase),
           s_front - ego_s, s_rear - ego_s, p_dist]
    for s, v, _ in states:
        row += [s, v]
    return tuple(row), p_dist, v_gap_mean
