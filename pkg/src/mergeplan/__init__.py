"""Merge planning toolkit: opportunity finding, QP trajectory generation,
gradient-descent smoothing and closed-loop simulation."""

from .core import (DegenerateGeometryError, Polynomial, ReferenceLine,
                   Trajectory, TrajectoryPoint, annotate, frenet_to_cartesian)
from .opportunity import (CandidateManeuver, CostBreakdown, CostWeights,
                          MergeScenario, OpportunityDecision, Phase,
                          SamplingConfig, ScenarioKind, classify, decide,
                          score)
from .planner import (EgoPlanState, LateralSpec, LongitudinalMode,
                      LongitudinalSpec, PlannerConfig, PlanResult,
                      build_lateral_qp, build_longitudinal_qp, plan,
                      select_mode)
from .prediction import (EgoMotion, TargetMotion, gap_midpoint, predict_ego,
                         predict_target)
from .qpsolve import KktReport, QpProblem, QpSolution, QpStatus, kkt_check, solve
from .simulator import (EgoStart, LaneConfig, ScenarioConfig, SimLog,
                        SimParams, World, run, step)
from .smoother import (SmoothReport, SmootherConfig, StopReason,
                       curvature_gradient, gaussian_weight, smooth,
                       smoothness_gradient, straightness_gradient)

__all__ = [name for name in dir() if not name.startswith("_")]
