"""Command-line entry point, run configuration and file formats.

Exit codes: 0 success, 1 validation failure, 2 infeasible path, 3 config
error, 4 IO error. Errors are reported on stderr as one JSON object.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, fields
from pathlib import Path

import numpy as np
import yaml

from . import feasibility_map as fm
from .dp_planner import InfeasiblePathError, LossConfigError, LossParams, Plan, solve
from .interpolator import CommandStream, InterpolationError, cycle_ratio
from .kinematics import load_robot_model
from .path_model import PathError, PathSpec, SampledPath, build_param_grid, sample_path
from .sim_validator import (cartesian_error, oracle_agrees, random_tiny_instance, replay,
                            validate_constraints)
from .start_optimizer import NotCircularError, optimize_start

log = logging.getLogger("redres")

EXIT_OK, EXIT_FAIL, EXIT_INFEASIBLE, EXIT_CONFIG, EXIT_IO = 0, 1, 2, 3, 4


class ConfigError(ValueError):
    pass


def fmt(x) -> str:
    """Shortest round-trip float text (at most 17 significant digits)."""
    return repr(float(x))


# --- configuration -----------------------------------------------------------------

@dataclass
class RunConfig:
    path: str = "test1"
    tmax: float | None = 10.0
    t0: float = 0.01
    t0_cycle: float = 0.001
    m: int = 1000
    M: float | None = None
    robot: str | None = None
    out: str = "out"
    workers: int = 1
    seed: int = 0
    trials: int = 200
    tail: int = 0

    def validate(self):
        if self.m < 2:
            raise ConfigError("m must be at least 2")
        if self.t0 <= 0 or self.t0_cycle <= 0:
            raise ConfigError("sample and cycle intervals must be positive")
        if self.workers < 1:
            raise ConfigError("workers must be at least 1")
        try:
            cycle_ratio(self.t0, self.t0_cycle)
        except ValueError as exc:
            raise ConfigError(str(exc)) from None


def load_config(path: str | Path) -> dict:
    """Key-value YAML; keys are RunConfig field names (`rate` is accepted for 1/t0)."""
    with open(path) as fh:
        data = yaml.safe_load(fh) or {}
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: expected a key-value mapping")
    if "rate" in data:
        data["t0"] = 1.0 / float(data.pop("rate"))
    known = {f.name for f in fields(RunConfig)}
    unknown = set(data) - known
    if unknown:
        raise ConfigError(f"{path}: unknown keys {sorted(unknown)}")
    return data


def build_config(args: argparse.Namespace) -> RunConfig:
    values = load_config(args.config) if args.config else {}
    if args.rate is not None and args.t0 is not None:
        raise ConfigError("give either --rate or --t0, not both")
    if args.rate is not None:
        if args.rate <= 0:
            raise ConfigError("rate must be positive")
        values["t0"] = 1.0 / args.rate
    if args.t0 is not None:
        values["t0"] = args.t0
    if args.cycle is not None:
        values["t0_cycle"] = args.cycle
    for key in ("path", "tmax", "m", "M", "robot", "out", "workers", "seed", "trials", "tail"):
        val = getattr(args, key, None)
        if val is not None:
            values[key] = val
    cfg = RunConfig(**values)
    cfg.validate()
    return cfg


# --- file formats --------------------------------------------------------------------

PLAN_HEADER = ["i", "t", "q1", "q2", "q3", "q4", "q5", "q6", "q7", "cont"]


def write_plan_csv(plan: Plan, path: str | Path, meta: dict | None = None):
    """Rows `i,t,q1..q7,cont`; cont = 0 marks a break just before the sample."""
    lines = [f"# loss={fmt(plan.loss)}", f"# breakpoints={plan.breakpoints}", f"# t0={fmt(plan.t0)}"]
    for k, v in (meta or {}).items():
        lines.append(f"# {k}={v}")
    lines.append(",".join(PLAN_HEADER))
    for i, q in enumerate(plan.joints):
        cont = 1 if i == 0 or plan.cont[i - 1] else 0
        lines.append(",".join([str(i), fmt(i * plan.t0), *map(fmt, q), str(cont)]))
    Path(path).write_text("\n".join(lines) + "\n")


def read_plan_csv(path: str | Path) -> Plan:
    meta, rows = {}, []
    for line in Path(path).read_text().splitlines():
        if line.startswith("#"):
            key, _, val = line[1:].strip().partition("=")
            meta[key] = val
        elif line and not line.startswith("i,"):
            rows.append(line.split(","))
    if not rows:
        raise ValueError(f"{path}: no plan rows")
    data = np.array([[float(x) for x in r] for r in rows])
    joints, cont = data[:, 2:9], data[1:, 9] == 1
    t0 = float(meta["t0"]) if "t0" in meta else float(data[1, 1] - data[0, 1])
    loss = float(meta.get("loss", "nan"))
    n = len(joints) - 1
    rows = (int(meta["start"]) + np.arange(n + 1)) % n if "start" in meta else None
    return Plan(joints=joints, indices=np.full(len(joints), -1), cont=cont, loss=loss,
                breakpoints=int(np.count_nonzero(~cont)), t0=t0, rows=rows)


def write_stream_csv(stream: CommandStream, plan: Plan, path: str | Path):
    """Rows `cycle,t,q1..q7`; segments follow each other, t restarts at each
    segment's first plan sample time."""
    lines = ["cycle,t,q1,q2,q3,q4,q5,q6,q7"]
    cycle, tc = 0, stream.t0_cycle
    for seg in stream.segments:
        t_start = seg.first_sample * plan.t0
        for c, q in enumerate(seg.q):
            lines.append(",".join([str(cycle), fmt(t_start + c * tc), *map(fmt, q)]))
            cycle += 1
    Path(path).write_text("\n".join(lines) + "\n")


def write_extrema_csv(extrema: dict, path: str | Path):
    lines = ["joint,v_min,v_max,a_min,a_max,j_min,j_max"]
    for i in range(7):
        vals = [extrema[k][i, c] for k in ("v", "a", "j") for c in (0, 1)]
        lines.append(",".join([str(i + 1), *map(fmt, vals)]))
    Path(path).write_text("\n".join(lines) + "\n")


def write_errors_csv(stats, plan: Plan, path: str | Path):
    lines = ["i,t,translation,rotation"]
    for i, (e, r) in enumerate(zip(stats.translation, stats.rotation)):
        lines.append(",".join([str(i), fmt(i * plan.t0), fmt(e), fmt(r)]))
    Path(path).write_text("\n".join(lines) + "\n")


# --- commands ------------------------------------------------------------------------

def _setup(cfg: RunConfig):
    model = load_robot_model(cfg.robot)
    spec = PathSpec(cfg.path, cfg.t0, cfg.tmax)
    path = sample_path(spec)
    grid = build_param_grid(path, cfg.m, model)
    lp = LossParams.auto(grid.n, model.limits, cfg.t0) if cfg.M is None else LossParams(cfg.M, cfg.t0)
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    return model, path, grid, lp, out


def cmd_plan(cfg: RunConfig) -> int:
    model, path, grid, lp, out = _setup(cfg)
    plan = solve(grid, model.limits, lp)
    write_plan_csv(plan, out / "plan.csv", {"path": path.name, "m": cfg.m})
    note = " (discontinuous: re-orientation needed)" if plan.breakpoints else ""
    summary = f"loss={fmt(plan.loss)} breakpoints={plan.breakpoints}{note}"
    (out / "summary.txt").write_text(summary + "\n")
    print(summary)
    return EXIT_OK


def cmd_plan_circular(cfg: RunConfig) -> int:
    model, path, grid, lp, out = _setup(cfg)
    if not path.circular:
        raise NotCircularError(f"path {path.name} is not closed")
    res = optimize_start(grid, model.limits, lp)
    write_plan_csv(res.baseline, out / "baseline_plan.csv", {"path": path.name, "m": cfg.m})
    write_plan_csv(res.plan, out / "plan.csv",
                   {"path": path.name, "m": cfg.m, "start": res.new_start_index})
    summary = (f"baseline_breaks={res.baseline_breaks}, improved={str(res.improved).lower()}, "
               f"new_start={res.new_start_index}")
    (out / "summary.txt").write_text(summary + "\n")
    print(summary)
    return EXIT_OK


def cmd_feasibility(cfg: RunConfig) -> int:
    model, path, grid, lp, out = _setup(cfg)
    fg = fm.compute_feasibility(grid, path.name)
    fm.write_csv(fg, out / "feasibility.csv")
    fm.write_pgm(fg, out / "feasibility.pgm")
    band = fm.corridor_band(model.limits, cfg.t0, grid.step)
    ok = fm.has_band_corridor(fg, band)
    summary = (f"rows={fg.shape[0]} cols={fg.shape[1]} feasible={int(fg.bits.sum())} "
               f"band={band} corridor={str(ok).lower()}")
    (out / "summary.txt").write_text(summary + "\n")
    print(summary)
    return EXIT_OK


def cmd_simulate(cfg: RunConfig, plan_file: str | None = None) -> int:
    model, path, grid, lp, out = _setup(cfg)
    plan = read_plan_csv(plan_file) if plan_file else solve(grid, model.limits, lp)
    if plan_file and len(plan.joints) != len(path):
        raise ConfigError("plan length does not match the sampled path")
    if plan.rows is not None:  # re-based plan: compare against the rotated path
        path = SampledPath(path.times, path.poses[plan.rows], path.t0, path.circular, path.name)
    trace = replay(plan, model.limits, cfg.t0_cycle, model, tail=cfg.tail)
    report = validate_constraints(trace, model.limits)
    stats = cartesian_error(trace, path)
    write_stream_csv(trace.stream, plan, out / "commands.csv")
    write_extrema_csv(report.extrema, out / "extrema.csv")
    write_errors_csv(stats, plan, out / "errors.csv")
    summary = (f"cycles={trace.cycles} breakpoints={plan.breakpoints} "
               f"violations={len(report.violations)} mean_error={fmt(stats.mean)} "
               f"max_error={fmt(stats.max)}")
    (out / "summary.txt").write_text(summary + "\n")
    print(summary)
    return EXIT_OK if report.ok else EXIT_FAIL


def _oracle_trial(args) -> tuple[int, bool]:
    seed, k = args
    limits = load_robot_model().limits
    grid = random_tiny_instance(np.random.default_rng([seed, k]), limits)
    return k, oracle_agrees(grid, limits, LossParams.auto(grid.n, limits, grid.t0))


def cmd_validate(cfg: RunConfig) -> int:
    """DP against the brute-force oracle on seeded random tiny instances."""
    jobs = [(cfg.seed, k) for k in range(cfg.trials)]
    if cfg.workers > 1:
        with ProcessPoolExecutor(cfg.workers) as pool:
            results = list(pool.map(_oracle_trial, jobs, chunksize=16))
    else:
        results = [_oracle_trial(j) for j in jobs]
    bad = [k for k, ok in sorted(results) if not ok]
    print(f"trials={cfg.trials} seed={cfg.seed} mismatches={len(bad)}")
    for k in bad:
        print(f"mismatch trial={k}")
    return EXIT_OK if not bad else EXIT_FAIL


# --- argument parsing -------------------------------------------------------------------

def make_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="YAML file with RunConfig keys")
    common.add_argument("--path", help="test1, test2 or a waypoint CSV (t,x,y,z,qw,qx,qy,qz)")
    common.add_argument("--tmax", type=float, help="path duration in seconds")
    common.add_argument("--rate", type=float, help="plan samples per second")
    common.add_argument("--t0", type=float, help="plan sample interval in seconds")
    common.add_argument("--cycle", type=float, help="communication interval in seconds")
    common.add_argument("--m", type=int, help="q7 grid size")
    common.add_argument("--M", type=float, help="breakpoint penalty (default: automatic)")
    common.add_argument("--robot", help="robot model YAML")
    common.add_argument("--out", help="output directory")
    common.add_argument("--workers", type=int, help="worker processes (results do not depend on it)")
    common.add_argument("--seed", type=int, help="seed for randomized checks")
    common.add_argument("-v", "--verbose", action="store_true")
    parser = argparse.ArgumentParser(prog="redres", description="Redundancy-resolution path planner")
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("plan", parents=[common], help="minimum-loss plan for a path")
    sub.add_parser("plan-circular", parents=[common], help="plan a closed path with start-point search")
    sub.add_parser("feasibility", parents=[common], help="export the IK feasibility map")
    p = sub.add_parser("simulate", parents=[common], help="follow a plan at the communication rate")
    p.add_argument("--plan", dest="plan_file", help="plan CSV to follow (default: plan the path)")
    p.add_argument("--tail", type=int, help="extra settling cycles after each segment")
    p = sub.add_parser("validate", parents=[common], help="check the DP against the brute-force oracle")
    p.add_argument("--trials", type=int, help="number of random instances")
    return parser


def main(argv=None) -> int:
    args = make_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = build_config(args)
        log.info("config %s", json.dumps(asdict(cfg)))
        if args.command == "plan":
            return cmd_plan(cfg)
        if args.command == "plan-circular":
            return cmd_plan_circular(cfg)
        if args.command == "feasibility":
            return cmd_feasibility(cfg)
        if args.command == "simulate":
            return cmd_simulate(cfg, args.plan_file)
        return cmd_validate(cfg)
    except InfeasiblePathError as exc:
        return _fail(EXIT_INFEASIBLE, "infeasible", str(exc), sample=exc.sample)
    except (ConfigError, LossConfigError, PathError, NotCircularError, TypeError) as exc:
        return _fail(EXIT_CONFIG, "config", str(exc))
    except InterpolationError as exc:
        return _fail(EXIT_FAIL, "interpolation", str(exc))
    except OSError as exc:
        return _fail(EXIT_IO, "io", str(exc))
    except (ValueError, yaml.YAMLError) as exc:
        return _fail(EXIT_CONFIG, "config", str(exc))


def _fail(code: int, kind: str, message: str, **extra) -> int:
    print(json.dumps({"error": kind, "message": message, **extra}), file=sys.stderr)
    return code


if __name__ == "__main__":
    sys.exit(main())
