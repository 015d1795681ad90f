"""Command-line entry point: scenario ingestion and reproducible pipeline runs.

Commands:
    plan      opportunity + trajectory generation (+ smoothing) on a snapshot
    smooth    smooth a trajectory CSV
    simulate  closed-loop scenario replay
    sweep     vary one parameter, one summary row per value
    selftest  randomized oracle suites (QP solver, smoother gradients)

Exit codes: 0 ok, 2 usage, 3 scenario schema, 4 planning infeasible,
5 internal error.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import sys
from dataclasses import dataclass
from importlib.metadata import PackageNotFoundError, version as _pkg_version
from pathlib import Path
from typing import List, Optional

import numpy as np

from .core import ReferenceLine, Trajectory
from .opportunity import CostWeights, SamplingConfig, classify, decide
from .planner import EgoPlanState, PlannerConfig, plan, select_mode
from .prediction import EgoMotion, TargetMotion
from .simulator import (EgoStart, LaneConfig, ScenarioConfig, SimLog,
                        SimParams, run)
from .smoother import SmootherConfig, smooth

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_SCHEMA = 3
EXIT_INFEASIBLE = 4
EXIT_INTERNAL = 5

try:
    VERSION = _pkg_version("mergeplan")
except PackageNotFoundError:  # running from a checkout
    VERSION = "0.1.0"


class ScenarioError(ValueError):
    """Scenario file or override violates the schema."""


@dataclass(frozen=True)
class RunManifest:
    command: str
    scenario: Optional[str]
    out_dir: str
    seed: int
    overrides: dict

    def write(self, out_dir: Path, resolved: dict) -> None:
        payload = {
            "version": VERSION,
            "command": self.command,
            "scenario": self.scenario,
            "out_dir": self.out_dir,
            "seed": self.seed,
            "overrides": self.overrides,
            "resolved": resolved,
        }
        _write_json(out_dir / "manifest.json", payload)


_SECTIONS = {
    "ego": EgoStart,
    "lane": LaneConfig,
    "weights": CostWeights,
    "sampling": SamplingConfig,
    "planner": PlannerConfig,
    "smoother": SmootherConfig,
    "sim": SimParams,
}


def _build_dataclass(cls, data, where):
    if not isinstance(data, dict):
        raise ScenarioError(f"{where} must be an object")
    names = [f.name for f in dataclasses.fields(cls)]
    unknown = sorted(set(data) - set(names))
    if unknown:
        raise ScenarioError(f"unknown key(s) {unknown} in {where}")
    kwargs = {}
    for f in dataclasses.fields(cls):
        if f.name not in data:
            continue
        value = data[f.name]
        if isinstance(value, list):
            value = tuple(value)
        kwargs[f.name] = value
    try:
        return cls(**kwargs)
    except (ValueError, TypeError) as exc:
        raise ScenarioError(f"{where}: {exc}") from exc


def config_from_dict(data: dict) -> ScenarioConfig:
    """Validate a scenario dictionary and fill every default."""
    if not isinstance(data, dict):
        raise ScenarioError("scenario root must be an object")
    known = set(_SECTIONS) | {"targets"}
    unknown = sorted(set(data) - known)
    if unknown:
        raise ScenarioError(f"unknown key(s) {unknown} in scenario root")
    kwargs = {}
    for key, cls in _SECTIONS.items():
        if key in data:
            kwargs[key] = _build_dataclass(cls, data[key], key)
    targets = []
    for i, entry in enumerate(data.get("targets", [])):
        targets.append(_build_dataclass(TargetMotion, entry, f"targets[{i}]"))
    kwargs["targets"] = tuple(targets)
    return ScenarioConfig(**kwargs)


def config_to_dict(cfg: ScenarioConfig) -> dict:
    out = {key: dataclasses.asdict(getattr(cfg, key)) for key in _SECTIONS}
    out["targets"] = [dataclasses.asdict(t) for t in cfg.targets]
    return out


def load_scenario(path, overrides: Optional[List[str]] = None) -> ScenarioConfig:
    """Read, override and validate a scenario file (JSON, hierarchical keys)."""
    try:
        with open(path) as fh:
            data = json.load(fh)
    except OSError as exc:
        raise ScenarioError(f"cannot read scenario file {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ScenarioError(f"{path}:{exc.lineno}: invalid JSON ({exc.msg})") from exc
    for item in overrides or []:
        _apply_override(data, item)
    return config_from_dict(data)


def _parse_value(text: str):
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def _apply_override(data: dict, item: str) -> None:
    if "=" not in item:
        raise ScenarioError(f"override '{item}' is not of the form key=value")
    key, _, raw = item.partition("=")
    parts = key.strip().split(".")
    node = data
    for depth, part in enumerate(parts[:-1]):
        if part.isdigit() and isinstance(node, list):
            idx = int(part)
            if idx >= len(node):
                raise ScenarioError(f"override '{key}': index {idx} out of range")
            node = node[idx]
            continue
        if not isinstance(node, dict):
            raise ScenarioError(f"override '{key}': '{part}' is not a section")
        node = node.setdefault(part, {})
    leaf = parts[-1]
    if isinstance(node, list):
        raise ScenarioError(f"override '{key}': missing field name after index")
    node[leaf] = _parse_value(raw.strip())


def _write_json(path: Path, payload) -> None:
    with open(path, "w") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _simulate_summary(log: SimLog) -> dict:
    p = log.column("p_dist")
    v_lon = log.column("ego_v_lon")
    v_lat = log.column("ego_v_lat")
    acc = log.column("ego_a")
    return {
        "events": log.events,
        "final_p_dist": float(p[-1]),
        "final_speed": float(np.hypot(v_lon[-1], v_lat[-1])),
        "peak_abs_accel": float(np.abs(acc).max()),
        "peak_abs_lateral_velocity": float(np.abs(v_lat).max()),
        "steps": len(log.rows),
        "end_time": float(log.column("t")[-1]),
    }


def _cmd_simulate(cfg: ScenarioConfig, out: Path, args) -> int:
    log = run(cfg)
    log.to_csv(out / "simlog.csv")
    _write_json(out / "summary.json", _simulate_summary(log))
    return EXIT_OK


def _cmd_plan(cfg: ScenarioConfig, out: Path, args) -> int:
    targets = [dataclasses.replace(t) for t in cfg.targets]
    ego = EgoMotion(v0=cfg.ego.v)
    decision = decide(ego, targets, cfg.weights, cfg.sampling)
    scenario = classify(ego, targets)
    ref = ReferenceLine(origin=(cfg.ego.s, 0.0), heading=0.0,
                        lane_width=cfg.lane.lane_width)
    mode = select_mode(scenario)
    gap = (scenario.target_a, scenario.target_b)
    state = EgoPlanState(d0=cfg.ego.d, s0_dot=cfg.ego.v, s0=0.0, s0_ddot=cfg.ego.a)
    result = plan(state, gap if mode.value == "distance" else None, cfg.planner,
                  mode=mode, v_set=cfg.ego.set_speed, ref=ref)
    payload = {
        "decision": {
            "phase": int(decision.phase),
            "command_a0": decision.command_a0,
            "chosen": dataclasses.asdict(decision.chosen),
            "breakdown": dataclasses.asdict(decision.breakdown),
        },
        "scenario_kind": scenario.kind.value,
        "mode": mode.value,
    }
    if result is None:
        payload["plan"] = None
        _write_json(out / "plan.json", payload)
        print("planning infeasible: every terminal-time sample was rejected",
              file=sys.stderr)
        return EXIT_INFEASIBLE
    result.trajectory.to_csv(out / "trajectory.csv")
    smoothed, report = smooth(result.trajectory, cfg.smoother, ref)
    smoothed.to_csv(out / "trajectory_smoothed.csv")
    payload["plan"] = {
        "te": result.te,
        "cost_tilde": result.cost_tilde,
        "cost_total": result.cost_total,
        "n_feasible": result.n_feasible,
    }
    payload["smooth"] = _report_dict(report)
    _write_json(out / "plan.json", payload)
    return EXIT_OK


def _report_dict(report) -> dict:
    return {
        "iterations_run": report.iterations_run,
        "stop_reason": report.stop_reason.value,
        "max_curvature_before": report.max_curvature_before,
        "max_curvature_after": report.max_curvature_after,
        "max_heading_before": report.max_heading_before,
        "max_heading_after": report.max_heading_after,
        "max_offset": report.max_offset,
        "degenerate": report.degenerate,
    }


def _cmd_smooth(cfg: ScenarioConfig, out: Path, args) -> int:
    traj = Trajectory.from_csv(args.input)
    smoothed, report = smooth(traj, cfg.smoother)
    smoothed.to_csv(out / "smoothed.csv")
    _write_json(out / "smooth_report.json", _report_dict(report))
    if args.diagnostics and report.history is not None:
        with open(out / "diagnostics.csv", "w") as fh:
            fh.write("iteration,max_curvature,max_offset\n")
            for sweep, kmax, dmax in report.history:
                fh.write(f"{int(sweep)},{kmax:.6g},{dmax:.6g}\n")
    return EXIT_OK


_SWEEP_METRICS = {
    "simulate": ("merge_trigger_time", "settle_time", "final_p_dist",
                 "peak_abs_accel", "peak_abs_lateral_velocity"),
    "smooth": ("iterations_run", "stop_reason", "max_curvature_after",
               "max_heading_after", "max_offset"),
    "plan": ("te", "cost_tilde", "cost_total", "n_feasible"),
}


def _cmd_sweep(base_data: dict, out: Path, args) -> int:
    values = [v for v in args.values.split(",") if v]
    metrics = _SWEEP_METRICS[args.base]
    rows = []
    for raw in values:
        data = json.loads(json.dumps(base_data))
        _apply_override(data, f"{args.param}={raw}")
        cfg = config_from_dict(data)
        run_dir = out / f"run_{args.param.replace('.', '_')}_{raw}"
        run_dir.mkdir(parents=True, exist_ok=True)
        if args.base == "simulate":
            log = run(cfg)
            log.to_csv(run_dir / "simlog.csv")
            summary = _simulate_summary(log)
            summary.update(summary.pop("events"))
        elif args.base == "smooth":
            traj = Trajectory.from_csv(args.input)
            smoothed, report = smooth(traj, cfg.smoother)
            smoothed.to_csv(run_dir / "smoothed.csv")
            summary = _report_dict(report)
        else:
            code = _cmd_plan(cfg, run_dir, args)
            if code != EXIT_OK:
                summary = {m: "" for m in metrics}
            else:
                with open(run_dir / "plan.json") as fh:
                    summary = json.load(fh)["plan"]
        rows.append((raw, [summary.get(m, "") for m in metrics]))

    with open(out / "sweep.csv", "w") as fh:
        fh.write(",".join([args.param] + list(metrics)) + "\n")
        for raw, vals in rows:
            fh.write(",".join([raw] + [_csv_cell(v) for v in vals]) + "\n")
    return EXIT_OK


def _csv_cell(v) -> str:
    if v is None or v == "":
        return ""
    if isinstance(v, float):
        return format(v, ".6g")
    return str(v)


def _cmd_selftest(out: Optional[Path], args) -> int:
    from .selftest import run_selftest
    ok = run_selftest(seed=args.seed)
    if out is not None:
        _write_json(out / "selftest.json", {"passed": ok, "seed": args.seed})
    return EXIT_OK if ok else EXIT_INTERNAL


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="mergeplan", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)
    for name in ("plan", "smooth", "simulate", "sweep", "selftest"):
        cmd = sub.add_parser(name)
        cmd.add_argument("input", nargs="?", default=None,
                         help="scenario JSON (plan/simulate/sweep) or trajectory CSV (smooth)")
        cmd.add_argument("--scenario", default=None, help="alternative to the positional input")
        cmd.add_argument("--out", default="out", help="output directory")
        cmd.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                         dest="overrides", help="override a scenario parameter (repeatable)")
        cmd.add_argument("--seed", type=int, default=0)
        cmd.add_argument("--diagnostics", action="store_true",
                         help="write per-sweep smoother diagnostics")
        if name == "sweep":
            cmd.add_argument("--param", required=True, help="dotted parameter path")
            cmd.add_argument("--values", required=True, help="comma-separated values")
            cmd.add_argument("--base", choices=("plan", "smooth", "simulate"),
                             default="simulate")
    return parser


def parse_and_dispatch(argv) -> int:
    try:
        args = _build_parser().parse_args(argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code else EXIT_OK

    try:
        args.input = args.input or args.scenario
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)

        if args.command == "selftest":
            manifest = RunManifest(args.command, None, str(out), args.seed, {})
            manifest.write(out, {})
            return _cmd_selftest(out, args)

        if args.input is None:
            print("error: a scenario/input file is required", file=sys.stderr)
            return EXIT_USAGE

        if args.command == "smooth":
            cfg = ScenarioConfig()
            data = config_to_dict(cfg)
            for item in args.overrides:
                _apply_override(data, item)
            cfg = config_from_dict(data)
        elif args.command == "sweep":
            with open(args.input) as fh:
                data = json.load(fh)
            for item in args.overrides:
                _apply_override(data, item)
            cfg = config_from_dict(data)   # validates before the sweep starts
        else:
            cfg = load_scenario(args.input, args.overrides)
            data = None

        resolved = config_to_dict(cfg)
        _write_json(out / "resolved_config.json", resolved)
        manifest = RunManifest(args.command, str(args.input), str(out),
                               args.seed, {"set": list(args.overrides)})
        manifest.write(out, resolved)

        if args.command == "simulate":
            return _cmd_simulate(cfg, out, args)
        if args.command == "plan":
            return _cmd_plan(cfg, out, args)
        if args.command == "smooth":
            return _cmd_smooth(cfg, out, args)
        if args.command == "sweep":
            return _cmd_sweep(data, out, args)
        return EXIT_USAGE
    except ScenarioError as exc:
        print(f"scenario error: {exc}", file=sys.stderr)
        return EXIT_SCHEMA
    except json.JSONDecodeError as exc:
        print(f"scenario error: invalid JSON at line {exc.lineno}: {exc.msg}",
              file=sys.stderr)
        return EXIT_SCHEMA
    except Exception as exc:  # pragma: no cover - defensive
        print(f"internal error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_INTERNAL


def main() -> None:
    sys.exit(parse_and_dispatch(sys.argv[1:]))


if __name__ == "__main__":
    main()
