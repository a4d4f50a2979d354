"""Cartesian paths: the two analytic circle paths, waypoint CSV ingestion,
fixed-interval sampling and the q7 parameter grid with its cached IK table."""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.spatial.transform import Rotation, Slerp

from .kinematics import RobotModel, default_model, ik_batch


class PathError(ValueError):
    pass


def _circle_pose(theta: float) -> np.ndarray:
    c, s = math.cos(theta), math.sin(theta)
    return np.array([
        [c, s, 0.0, 0.6 + 0.1 * c],
        [s, -c, 0.0, 0.1 * s],
        [0.0, 0.0, -1.0, 0.1],
        [0.0, 0.0, 0.0, 1.0],
    ])


def _check_time(t, t_max):
    if t_max <= 0:
        raise PathError("t_max must be positive")
    if not 0.0 <= t <= t_max:
        raise PathError(f"t={t} outside [0, {t_max}]")


def test_path_1(t: float, t_max: float) -> np.ndarray:
    """Circle traversed with a smooth start/stop, starting at x = 0.5."""
    _check_time(t, t_max)
    u = 2 * math.pi * t / t_max
    return _circle_pose(u - math.sin(u) - math.pi)


def test_path_2(t: float, t_max: float) -> np.ndarray:
    """Same circle at constant angular rate, starting at x = 0.7."""
    _check_time(t, t_max)
    return _circle_pose(2 * math.pi * t / t_max)


# pytest would otherwise try to collect these as tests
test_path_1.__test__ = False
test_path_2.__test__ = False

ANALYTIC_PATHS = {"test1": test_path_1, "test2": test_path_2}


@dataclass(frozen=True)
class PathSpec:
    source: str  # "test1", "test2" or a waypoint CSV path
    t0: float
    t_max: float | None = None  # required for analytic paths

    @property
    def is_analytic(self) -> bool:
        return self.source in ANALYTIC_PATHS


@dataclass
class SampledPath:
    times: np.ndarray  # (n+1,)
    poses: np.ndarray  # (n+1, 4, 4)
    t0: float
    circular: bool
    name: str = ""

    @property
    def n(self) -> int:
        return len(self.times) - 1

    def __len__(self):
        return len(self.times)


def sample_count(t_max: float, t0: float) -> int:
    """n = t_max / t0, which must be an integer (up to float noise)."""
    if t0 <= 0 or t_max <= 0:
        raise PathError("t_max and t0 must be positive")
    ratio = t_max / t0
    n = round(ratio)
    if n < 1 or abs(ratio - n) > 1e-9 * max(1.0, ratio):
        raise PathError(f"t_max/t0 = {ratio} is not an integer")
    return n


def read_waypoints(path: str | Path) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Parse a `t,x,y,z,qw,qx,qy,qz` CSV -> (times, positions, quats wxyz)."""
    expected = ["t", "x", "y", "z", "qw", "qx", "qy", "qz"]
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise PathError(f"{path}: empty waypoint file") from None
        if header != expected:
            raise PathError(f"{path}: header must be {','.join(expected)}")
        rows = []
        for lineno, row in enumerate(reader, start=2):
            if not row or row[0].startswith("#"):
                continue
            if len(row) != 8:
                raise PathError(f"{path}:{lineno}: expected 8 columns")
            try:
                rows.append([float(v) for v in row])
            except ValueError:
                raise PathError(f"{path}:{lineno}: non-numeric value") from None
    if len(rows) < 2:
        raise PathError(f"{path}: need at least two waypoints")
    data = np.array(rows)
    t = data[:, 0]
    if np.any(np.diff(t) <= 0):
        raise PathError(f"{path}: waypoint times must be strictly increasing")
    quats = data[:, 4:8]
    norms = np.linalg.norm(quats, axis=1)
    if np.any(norms < 1e-9):
        raise PathError(f"{path}: zero quaternion")
    return t, data[:, 1:4], quats / norms[:, None]


def _hemisphere_continuous(quats: np.ndarray) -> np.ndarray:
    out = quats.copy()
    for i in range(1, len(out)):
        if np.dot(out[i], out[i - 1]) < 0:
            out[i] = -out[i]
    return out


def _waypoint_sampler(path):
    t, pos, quats = read_waypoints(path)
    quats = _hemisphere_continuous(quats)
    rots = Rotation.from_quat(quats[:, [1, 2, 3, 0]])  # scipy wants xyzw
    slerp = Slerp(t, rots)

    def pose_at(times: np.ndarray) -> np.ndarray:
        P = np.stack([np.interp(times, t, pos[:, k]) for k in range(3)], -1)
        T = np.zeros((len(times), 4, 4))
        T[:, :3, :3] = slerp(times).as_matrix()
        T[:, :3, 3] = P
        T[:, 3, 3] = 1.0
        return T

    return t[0], t[-1], pose_at


def sample_path(spec: PathSpec) -> SampledPath:
    if spec.is_analytic:
        if spec.t_max is None:
            raise PathError("analytic paths need t_max")
        n = sample_count(spec.t_max, spec.t0)
        fn = ANALYTIC_PATHS[spec.source]
        # t = i * t0 directly; clamp the last sample against float overshoot
        times = np.array([min(i * spec.t0, spec.t_max) for i in range(n)] + [spec.t_max])
        poses = np.stack([fn(t, spec.t_max) for t in times])
        name = spec.source
    else:
        t_start, t_end, pose_at = _waypoint_sampler(spec.source)
        duration = t_end - t_start if spec.t_max is None else spec.t_max
        if duration > t_end - t_start + 1e-12:
            raise PathError("t_max exceeds the waypoint time span")
        n = sample_count(duration, spec.t0)
        rel = np.array([i * spec.t0 for i in range(n)] + [duration])
        poses = pose_at(np.minimum(t_start + rel, t_end))
        times = rel
        name = Path(spec.source).stem
    circular = bool(np.max(np.abs(poses[0] - poses[-1])) <= 1e-12)
    return SampledPath(times=times, poses=poses, t0=spec.t0, circular=circular, name=name)


@dataclass
class ParamGrid:
    """Uniform q7 grid plus the IK table q(i, j); absent cells are NaN rows."""

    values: np.ndarray  # (m,)
    ik: np.ndarray  # (n+1, m, 7), NaN where absent
    t0: float

    @property
    def m(self) -> int:
        return len(self.values)

    @property
    def n(self) -> int:
        return self.ik.shape[0] - 1

    @property
    def present(self) -> np.ndarray:
        return ~np.isnan(self.ik[:, :, 0])

    @property
    def step(self) -> float:
        return float(self.values[1] - self.values[0]) if self.m > 1 else 0.0

    def cell(self, i: int, j: int) -> np.ndarray | None:
        q = self.ik[i, j]
        return None if np.isnan(q[0]) else q


def q7_values(m: int, model: RobotModel) -> np.ndarray:
    if m < 2:
        raise PathError("m must be at least 2")
    lo, hi = model.limits.q_min[6], model.limits.q_max[6]
    vals = lo + (hi - lo) * np.arange(m) / (m - 1)
    vals[-1] = hi
    return vals


def build_param_grid(path: SampledPath, m: int, model: RobotModel | None = None) -> ParamGrid:
    model = model or default_model()
    vals = q7_values(m, model)
    ik = np.empty((len(path), m, 7))
    for i, pose in enumerate(path.poses):
        ik[i] = ik_batch(pose, vals, model.canonical, model)
    return ParamGrid(values=vals, ik=ik, t0=path.t0)
