"""Replay, independent constraint checks, tracking error, the greedy local
baseline and the brute-force optimality oracle."""
from __future__ import annotations

import itertools
from dataclasses import dataclass, field

import numpy as np

from .dp_planner import (InfeasiblePathError, LossParams, Plan, acceleration_bound, make_plan,
                         velocity_bound)
from .interpolator import CommandStream, follow
from .kinematics import JointLimits, RobotModel, default_model, forward_kinematics
from .path_model import ParamGrid, SampledPath

BRUTE_FORCE_LIMIT = 10 ** 7
TERMINAL_TOL = 1e-9


# --- replay ------------------------------------------------------------------------

@dataclass
class Trace:
    stream: CommandStream
    sample_q: np.ndarray  # (n+1, 7) commanded q at each plan sample time
    sample_poses: np.ndarray  # (n+1, 4, 4)
    t0_cycle: float

    @property
    def cycles(self) -> int:
        return self.stream.cycles


def replay(plan: Plan, limits: JointLimits, t0_cycle: float, model: RobotModel | None = None,
           tail: int = 0) -> Trace:
    """Execute the interpolator commands exactly and record the arm at every plan sample."""
    model = model or default_model()
    stream = follow(plan, limits, t0_cycle, tail=tail)
    sample_q = np.empty_like(plan.joints)
    for seg in stream.segments:
        sample_q[seg.first_sample:seg.last_sample + 1] = seg.q[seg.sample_rows()]
    return Trace(stream, sample_q, forward_kinematics(sample_q, model), t0_cycle)


# --- constraint re-check -------------------------------------------------------------

@dataclass(frozen=True)
class Violation:
    segment: int
    cycle: int
    joint: int  # 0-based
    kind: str  # "q", "v", "a" or "j"
    value: float
    limit: float


@dataclass
class ConstraintReport:
    violations: list[Violation] = field(default_factory=list)
    # normalized extrema: kind -> (7, 2) array of (min, max) of value / limit
    extrema: dict[str, np.ndarray] = field(default_factory=dict)
    terminal: list[tuple[float, float]] = field(default_factory=list)  # per segment max |v|, |a|

    @property
    def ok(self) -> bool:
        return not self.violations and all(v <= TERMINAL_TOL and a <= TERMINAL_TOL
                                           for v, a in self.terminal)


def finite_differences(q: np.ndarray, tc: float) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """v, a, j of a position stream that starts and ends at rest (held before
    and after); row c of each refers to the step into stream row c."""
    pad = np.vstack([q[:1], q[:1], q[:1], q, q[-1:], q[-1:]])
    v = np.diff(pad, axis=0) / tc
    a = np.diff(v, axis=0) / tc
    j = np.diff(a, axis=0) / tc
    # align: drop the leading rest entries so index c means "into row c"
    return v[2:], a[1:], j


def validate_constraints(trace: Trace | CommandStream, limits: JointLimits) -> ConstraintReport:
    stream = trace.stream if isinstance(trace, Trace) else trace
    tc = stream.t0_cycle
    report = ConstraintReport()
    bounds = {"v": limits.v_max, "a": limits.a_max, "j": limits.j_max}
    ext = {k: np.zeros((7, 2)) for k in ("v", "a", "j")}
    for s, seg in enumerate(stream.segments):
        q = seg.q
        if len(q) == 0:
            continue
        lo = np.argwhere((q < limits.q_min) | (q > limits.q_max))
        for c, i in lo:
            lim = limits.q_min[i] if q[c, i] < limits.q_min[i] else limits.q_max[i]
            report.violations.append(Violation(s, int(c), int(i), "q", float(q[c, i]), float(lim)))
        v, a, j = finite_differences(q, tc)
        for kind, arr in (("v", v), ("a", a), ("j", j)):
            lim = bounds[kind]
            norm = arr / lim
            ext[kind][:, 0] = np.minimum(ext[kind][:, 0], norm.min(axis=0))
            ext[kind][:, 1] = np.maximum(ext[kind][:, 1], norm.max(axis=0))
            for c, i in np.argwhere(np.abs(arr) > lim):
                report.violations.append(Violation(s, int(c), int(i), kind, float(arr[c, i]),
                                                   float(lim[i])))
        report.terminal.append((float(np.abs(seg.v[-1]).max()), float(np.abs(seg.a[-1]).max())))
    report.extrema = ext
    return report


# --- tracking error ------------------------------------------------------------------

@dataclass
class ErrorStats:
    translation: np.ndarray  # per sample, meters
    rotation: np.ndarray  # per sample geodesic angle, radians
    mean: float
    max: float
    extrema: dict[str, np.ndarray] = field(default_factory=dict)


def cartesian_error(trace: Trace, path: SampledPath, limits: JointLimits | None = None) -> ErrorStats:
    if len(trace.sample_poses) != len(path):
        raise ValueError("trace does not cover the path")
    T, P = trace.sample_poses, path.poses
    trans = np.linalg.norm(T[:, :3, 3] - P[:, :3, 3], axis=1)
    rel = np.einsum("nji,njk->nik", P[:, :3, :3], T[:, :3, :3])
    cos = np.clip((np.trace(rel, axis1=1, axis2=2) - 1) / 2, -1.0, 1.0)
    ext = validate_constraints(trace, limits).extrema if limits is not None else {}
    return ErrorStats(trans, np.arccos(cos), float(trans.mean()), float(trans.max()), ext)


# --- greedy local baseline -----------------------------------------------------------

@dataclass
class GreedyResult:
    completed: bool
    halted_at: int | None  # first sample with no admissible neighbour
    indices: np.ndarray  # visited columns
    plan: Plan | None


def greedy_baseline(grid: ParamGrid, limits: JointLimits, start: int, t0: float | None = None,
                    M: float = np.inf) -> GreedyResult:
    """Walk forward taking, at each sample, the admissible cell closest to the
    current configuration (velocity, and acceleration after the first step);
    never plans ahead and never breaks."""
    t0 = grid.t0 if t0 is None else t0
    vT, aT2 = velocity_bound(limits, t0), acceleration_bound(limits, t0)
    if not grid.present[0, start]:
        raise ValueError(f"start column {start} has no IK solution")
    idx = [start]
    for i in range(1, grid.n + 1):
        cur = grid.ik[i - 1, idx[-1]]
        cand = grid.ik[i]
        diff = cand - cur
        ok = ~np.isnan(cand[:, 0]) & np.all(np.abs(diff) <= vT, axis=1)
        if i >= 2:
            prev = grid.ik[i - 2, idx[-2]]
            ok &= np.all(np.abs(diff - (cur - prev)) <= aT2, axis=1)
        if not ok.any():
            return GreedyResult(False, i, np.array(idx), None)
        cost = np.where(ok, np.sum(np.nan_to_num(diff) ** 2, axis=1), np.inf)
        idx.append(int(np.argmin(cost)))
    idx = np.array(idx)
    cont = np.ones(grid.n, dtype=bool)
    plan = make_plan(grid, np.arange(grid.n + 1), idx, cont, M, t0)
    return GreedyResult(True, None, idx, plan)


# --- brute-force oracle ---------------------------------------------------------------

class InstanceTooLarge(ValueError):
    pass


def _chunk_losses(grid, seqs, masks, vT, aT2, M):
    n = seqs.shape[1] - 1
    Q = grid.ik[np.arange(n + 1)[None, :], seqs]  # (S, n+1, 7)
    d = np.diff(Q, axis=1)
    vel_ok = np.all(np.abs(d) <= vT, axis=2)
    acc_ok = np.all(np.abs(np.diff(d, axis=1)) <= aT2, axis=2)
    cost = np.zeros(d.shape[:2])
    for c in range(7):  # same summation order as the DP
        cost = cost + d[:, :, c] * d[:, :, c]
    brk = masks[None, :, :]
    valid = np.all(brk | vel_ok[:, None, :], axis=2)
    if n >= 2:
        both = ~brk[:, :, 1:] & ~brk[:, :, :-1]
        valid &= np.all(~both | acc_ok[:, None, :], axis=2)
    loss = np.zeros((len(seqs), len(masks)))
    for i in range(n):
        loss = loss + np.where(brk[:, :, i], M, cost[:, None, i])
    loss[~valid] = np.inf
    return loss


def brute_force_solve(grid: ParamGrid, limits: JointLimits, lp: LossParams,
                      start: int | None = None, chunk: int = 1 << 21) -> Plan:
    """Exhaustive minimum over every index sequence and break pattern, with the
    same cost model and tie-break as the DP."""
    n, m = grid.n, grid.m
    if m ** (n + 1) > BRUTE_FORCE_LIMIT:
        raise InstanceTooLarge(f"m^(n+1) = {m ** (n + 1)} exceeds {BRUTE_FORCE_LIMIT}")
    cols = [np.flatnonzero(grid.present[i]) for i in range(n + 1)]
    if start is not None:
        cols[0] = cols[0][cols[0] == start]
    for i, c in enumerate(cols):
        if len(c) == 0:
            raise InfeasiblePathError(i)
    vT, aT2 = velocity_bound(limits, lp.t0), acceleration_bound(limits, lp.t0)
    masks = np.array(list(itertools.product((False, True), repeat=n)), dtype=bool).reshape(-1, n)
    per = max(1, chunk // len(masks))
    best, cand_seq, cand_mask = np.inf, [], []
    it = itertools.product(*cols)
    while True:
        block = list(itertools.islice(it, per))
        if not block:
            break
        seqs = np.array(block, dtype=np.int64).reshape(-1, n + 1)
        loss = _chunk_losses(grid, seqs, masks, vT, aT2, lp.M)
        lo = loss.min()
        if lo > best or not np.isfinite(lo):
            continue
        if lo < best:
            best, cand_seq, cand_mask = lo, [], []
        s_idx, b_idx = np.nonzero(loss == lo)
        cand_seq.append(seqs[s_idx])
        cand_mask.append(masks[b_idx])
    if not np.isfinite(best):
        raise InfeasiblePathError(n, "no admissible plan")
    seqs, brk = np.concatenate(cand_seq), np.concatenate(cand_mask)
    # reversed key (j_n, b_n, j_{n-1}, ..., b_1, j_0); lexsort takes the primary key last
    keys = []
    for i in range(n + 1):
        keys.append(seqs[:, i])
        if i < n:
            keys.append(brk[:, i].astype(np.int64))
    pick = np.lexsort(keys)[0]
    return make_plan(grid, np.arange(n + 1), seqs[pick], ~brk[pick], lp.M, lp.t0)


# --- random tiny instances --------------------------------------------------------------

def random_instance(rng: np.random.Generator, n: int, m: int, limits: JointLimits,
                    t0: float = 0.01, density: float = 0.7, roughness: float = 0.5,
                    banded: bool = False, circular: bool = False) -> ParamGrid:
    """Random grid: each cell present with probability `density`; joint values
    drift at a random fraction of the velocity bound plus per-cell noise of
    `roughness` times the acceleration bound. With banded=True the joint-7
    column equals the q7 grid, so DP band pruning is active. With circular=True
    the last sample repeats the first (closed path)."""
    lo, hi = limits.q_min[6], limits.q_max[6]
    values = np.linspace(lo, hi, m)
    if banded:
        # q7 spacing of 1/1.5 velocity bands, so neighbouring cells are reachable
        values = lo + np.arange(m) * (limits.v_max[6] * t0 / 1.5)
    vT, aT2 = velocity_bound(limits, t0), acceleration_bound(limits, t0)
    drift = rng.uniform(-0.7, 0.7, 7) * vT * (not circular)
    base = rng.uniform(limits.q_min, limits.q_max)
    ik = np.empty((n + 1, m, 7))
    for i in range(n + 1):
        ik[i] = base + i * drift + rng.normal(0.0, roughness, (m, 7)) * aT2
    if banded:
        ik[:, :, 6] = values
    present = rng.random((n + 1, m)) < density
    for i in range(n + 1):
        if not present[i].any():
            present[i, rng.integers(m)] = True
    if circular:
        ik[n], present[n] = ik[0], present[0]
    ik[~present] = np.nan
    return ParamGrid(values=values, ik=ik, t0=t0)


def random_tiny_instance(rng: np.random.Generator, limits: JointLimits, budget: float = 1e6,
                         max_n: int = 6, max_m: int = 8, circular: bool = False) -> ParamGrid:
    """Instance with n <= max_n, m <= max_m, shrinking m until the brute-force
    work m^(n+1) * 2^n fits the budget."""
    n = int(rng.integers(2 if circular else 1, max_n + 1))
    m = int(rng.integers(2, max_m + 1))
    while m > 2 and m ** (n + 1) * 2 ** n > budget:
        m -= 1
    return random_instance(rng, n, m, limits, roughness=float(rng.choice([0.1, 0.3, 1.0, 2.0])),
                           density=float(rng.choice([0.5, 0.8, 1.0])),
                           banded=bool(rng.integers(2)), circular=circular)


def oracle_agrees(grid: ParamGrid, limits: JointLimits, lp: LossParams) -> bool:
    """DP and brute force agree on loss, breakpoints, indices and break flags."""
    from .dp_planner import solve
    a, b = solve(grid, limits, lp), brute_force_solve(grid, limits, lp)
    return (a.loss == b.loss and a.breakpoints == b.breakpoints
            and np.array_equal(a.indices, b.indices) and np.array_equal(a.cont, b.cont))
