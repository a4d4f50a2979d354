"""Globally optimal q7-index sequence by dynamic programming with
M-penalized breakpoints.

Cost model (shared with the brute-force oracle in ``sim_validator``):

* a plan is an index sequence j_0..j_n over present grid cells plus, for
  each step i = 1..n, a flag saying whether the step is continuous;
* a continuous step costs ||q_i - q_{i-1}||^2 and must satisfy the velocity
  bound; two consecutive continuous steps must also satisfy the acceleration
  bound on their second difference;
* a broken step costs M. The arm stops, re-orients offline and restarts from
  rest, so the first step after a break is checked for velocity only.

The DP state after step i is either C(i, j, k) (last step k -> j continuous)
or S(i, j) (last step broken, at rest on j). S(0, j) = 0 for every present j.
C states are stored in a band |j - k| <= w around the diagonal; with a real
q7 grid the joint-7 velocity row alone excludes anything outside the band,
and the joint-7 acceleration row narrows predecessors p to |j - 2k + p| <= h
cells. Both prunings carry slack and every surviving transition is still
checked exactly.

Ties: states at a step are ordered by (j, continuous-before-break, k) and
parents are picked as the first minimum in that order, so the returned plan
is the optimal plan whose reversed key (j_n, b_n, j_{n-1}, b_{n-1}, ...) is
lexicographically smallest.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numba
import numpy as np

from .kinematics import JointLimits
from .path_model import ParamGrid

BOUND_RTOL = 1e-12


class InfeasiblePathError(RuntimeError):
    def __init__(self, sample: int, message: str | None = None):
        self.sample = sample
        super().__init__(message or f"no inverse kinematics solution at sample {sample}")


class LossConfigError(ValueError):
    pass


def velocity_bound(limits: JointLimits, t0: float) -> np.ndarray:
    return limits.v_max * t0 * (1.0 + BOUND_RTOL)


def acceleration_bound(limits: JointLimits, t0: float) -> np.ndarray:
    return limits.a_max * (t0 * t0) * (1.0 + BOUND_RTOL)


def check_velocity(q_a, q_b, limits: JointLimits, t0: float) -> bool:
    d = np.asarray(q_b, dtype=float) - np.asarray(q_a, dtype=float)
    return bool(np.all(np.abs(d) <= velocity_bound(limits, t0)))


def check_acceleration(q_a, q_b, q_c, limits: JointLimits, t0: float) -> bool:
    q_a, q_b, q_c = (np.asarray(x, dtype=float) for x in (q_a, q_b, q_c))
    dd = (q_c - q_b) - (q_b - q_a)
    return bool(np.all(np.abs(dd) <= acceleration_bound(limits, t0)))


def step_cost(q_a, q_b) -> float:
    """Squared joint distance, summed joint by joint in index order."""
    s = 0.0
    for c in range(len(q_a)):
        d = q_b[c] - q_a[c]
        s = s + d * d
    return s


def breakpoint_count(loss: float, M: float) -> int:
    if not math.isfinite(loss):
        raise ValueError("loss must be finite")
    return int(math.floor(loss / M))


@dataclass(frozen=True)
class LossParams:
    M: float
    t0: float

    @classmethod
    def auto(cls, n: int, limits: JointLimits, t0: float, factor: float = 1.01) -> "LossParams":
        """M = factor * 2n * ||q_max - q_min||^2, large enough for a doubled run too."""
        return cls(M=factor * 2 * n * limits.span_sq, t0=t0)

    def validate(self, n: int, limits: JointLimits, steps: int | None = None):
        steps = n if steps is None else steps
        bound = steps * limits.span_sq
        if not self.M > bound:
            raise LossConfigError(f"M={self.M} must exceed {steps}*||q_max-q_min||^2 = {bound}")
        if self.t0 <= 0:
            raise LossConfigError("t0 must be positive")


@dataclass
class Plan:
    joints: np.ndarray  # (n+1, 7)
    indices: np.ndarray  # (n+1,) grid column per sample
    cont: np.ndarray  # (n,) True where step i -> i+1 is continuous
    loss: float
    breakpoints: int
    t0: float
    rows: np.ndarray | None = None  # grid row per sample (path index)

    @property
    def n(self) -> int:
        return len(self.joints) - 1

    @property
    def times(self) -> np.ndarray:
        return np.arange(len(self.joints)) * self.t0

    def segments(self) -> list[tuple[int, int]]:
        """Inclusive (start, end) sample ranges of the continuous pieces."""
        out, start = [], 0
        for i, ok in enumerate(self.cont, start=1):
            if not ok:
                out.append((start, i - 1))
                start = i
        out.append((start, self.n))
        return out


@dataclass
class DPTables:
    """Parent pointers of one DP run.

    ``par_c[i, j, d]`` for C(i, j, k = j + d - w): predecessor offset e
    (C(i-1, k, k + e - w)), -1 for S(i-1, k), -2 for an unreachable state.
    ``par_s[i]`` is the (j, d) of the best state at step i-1 (d = -1: S).
    """

    par_c: np.ndarray
    par_s: np.ndarray
    w: int
    rows: np.ndarray
    final: tuple[int, int]
    final_value: float
    M: float
    found: tuple[int, int, int] | None = None  # (i, j, d) of a detected start state
    found_value: float = math.inf
    extra: dict = field(default_factory=dict)


# --- kernel -----------------------------------------------------------------------

@numba.njit(cache=True)
def _dp_kernel(Q, P, rows, start_mask, vT, aT2, w, h, mode, M, W, n_base, z_base, par_c, par_s):
    N = rows.shape[0] - 1
    m = Q.shape[1]
    B = 2 * w + 1
    inf = np.inf
    c_prev = np.full((m, B), inf)
    c_cur = np.full((m, B), inf)
    s_prev = np.full(m, inf)
    s_cur = np.full(m, inf)
    r0 = rows[0]
    for j in range(m):
        if P[r0, j] and start_mask[j]:
            s_prev[j] = 0.0
    best_val = inf
    best_j = -1
    best_d = -1
    for j in range(m):
        if s_prev[j] < best_val:
            best_val = s_prev[j]
            best_j = j
    found_i = -1
    found_j = -1
    found_d = -1
    found_val = inf
    for i in range(1, N + 1):
        r = rows[i]
        rp = rows[i - 1]
        rpp = rows[i - 2] if i >= 2 else rows[0]
        if mode == 0:
            sval = best_val + M
        elif best_val < W:
            sval = best_val + W + i * M
        else:
            sval = best_val + W
        par_s[i, 0] = best_j
        par_s[i, 1] = best_d
        for j in range(m):
            if not P[r, j]:
                for d in range(B):
                    c_cur[j, d] = inf
                    par_c[i, j, d] = -2
                s_cur[j] = inf
                continue
            s_cur[j] = sval
            for d in range(B):
                c_cur[j, d] = inf
                par_c[i, j, d] = -2
                k = j + d - w
                if k < 0 or k >= m or not P[rp, k]:
                    continue
                ok = True
                dist = 0.0
                for c in range(7):
                    diff = Q[r, j, c] - Q[rp, k, c]
                    if abs(diff) > vT[c]:
                        ok = False
                        break
                    dist = dist + diff * diff
                if not ok:
                    continue
                bv = inf
                arg = -2
                if i >= 2:
                    center = 2 * k - j
                    lo = max(center - h, k - w, 0)
                    hi = min(center + h, k + w, m - 1)
                    for p in range(lo, hi + 1):
                        e = p - k + w
                        v = c_prev[k, e]
                        if v < bv:
                            good = True
                            for c in range(7):
                                dd = (Q[r, j, c] - Q[rp, k, c]) - (Q[rp, k, c] - Q[rpp, p, c])
                                if abs(dd) > aT2[c]:
                                    good = False
                                    break
                            if good:
                                bv = v
                                arg = e
                if s_prev[k] < bv:
                    bv = s_prev[k]
                    arg = -1
                if bv < inf:
                    c_cur[j, d] = bv + dist
                    par_c[i, j, d] = arg
        # ordered scan: (j, continuous by k, then break)
        best_val = inf
        best_j = -1
        best_d = -1
        for j in range(m):
            for d in range(B):
                if c_cur[j, d] < best_val:
                    best_val = c_cur[j, d]
                    best_j = j
                    best_d = d
            if s_cur[j] < best_val:
                best_val = s_cur[j]
                best_j = j
                best_d = -1
        if mode == 1 and i > n_base and found_i < 0:
            limit = W * (z_base + 1)
            for j in range(m):
                for d in range(B + 1):
                    v = c_cur[j, d] if d < B else s_cur[j]
                    if not v < limit:
                        continue
                    b = math.floor(v / W)
                    z = math.floor((v - b * W) / M)
                    if b >= 1 and z + n_base == i and v < found_val:
                        found_val = v
                        found_i = i
                        found_j = j
                        found_d = d if d < B else -1
            if found_i >= 0:
                return best_val, best_j, best_d, found_i, found_j, found_d, found_val
        tmp = c_prev
        c_prev = c_cur
        c_cur = tmp
        tmp1 = s_prev
        s_prev = s_cur
        s_cur = tmp1
    return best_val, best_j, best_d, found_i, found_j, found_d, found_val


# --- driver -----------------------------------------------------------------------

def _prune_widths(grid: ParamGrid, limits: JointLimits, t0: float) -> tuple[int, int]:
    """Band half-width w and acceleration window h in grid cells; falls back
    to no pruning if the joint-7 column is not the grid value."""
    m = grid.m
    present = grid.present
    col = grid.ik[:, :, 6]
    consistent = np.array_equal(np.where(present, col, 0.0),
                                np.where(present, np.broadcast_to(grid.values, col.shape), 0.0))
    if not consistent or m < 2:
        return m - 1, 2 * m
    step = grid.step
    w = int(math.floor(limits.v_max[6] * t0 / step * (1 + 1e-9) + 1e-9)) + 1
    h = int(math.floor(limits.a_max[6] * t0 * t0 / step * (1 + 1e-9) + 1e-9)) + 1
    return min(w, m - 1), min(h, m)


def band_width(grid: ParamGrid, limits: JointLimits, t0: float) -> int:
    """floor(v_max7 * t0 / delta_a): the joint-7 velocity band in cells."""
    return int(math.floor(limits.v_max[6] * t0 / grid.step))


def run_tables(grid: ParamGrid, limits: JointLimits, lp: LossParams, rows=None, *,
               mode: int = 0, W: float = 0.0, n_base: int = 0, z_base: int = 0,
               start: int | None = None) -> DPTables:
    rows = np.arange(grid.n + 1) if rows is None else np.asarray(rows, dtype=np.int64)
    present = grid.present
    for i, r in enumerate(rows):
        if not present[r].any():
            raise InfeasiblePathError(int(i))
    start_mask = np.ones(grid.m, dtype=np.bool_)
    if start is not None:
        start_mask[:] = False
        start_mask[start] = True
        if not present[rows[0], start]:
            raise InfeasiblePathError(0, f"pinned start column {start} has no IK solution")
    w, h = _prune_widths(grid, limits, lp.t0)
    B = 2 * w + 1
    dtype = np.int8 if B < 127 else np.int32
    N = len(rows) - 1
    par_c = np.empty((N + 1, grid.m, B), dtype=dtype)
    par_s = np.full((N + 1, 2), -1, dtype=np.int64)
    Q = np.ascontiguousarray(grid.ik)
    vT = velocity_bound(limits, lp.t0)
    aT2 = acceleration_bound(limits, lp.t0)
    res = _dp_kernel(Q, present, rows, start_mask, vT, aT2, w, h, mode, float(lp.M), float(W),
                     n_base, z_base, par_c, par_s)
    best_val, bj, bd, fi, fj, fd, fval = res
    found = (int(fi), int(fj), int(fd)) if fi >= 0 else None
    return DPTables(par_c=par_c, par_s=par_s, w=w, rows=rows, final=(int(bj), int(bd)),
                    final_value=float(best_val), M=float(lp.M), found=found, found_value=float(fval))


def backtrack_indices(tables: DPTables, i: int, j: int, d: int) -> tuple[np.ndarray, np.ndarray]:
    """Index sequence j_0..j_i and continuity flags of the plan ending in the
    given state."""
    w = tables.w
    idx = np.empty(i + 1, dtype=np.int64)
    cont = np.empty(i, dtype=bool)
    idx[i] = j
    while i > 0:
        if d == -1:
            cont[i - 1] = False
            j, d = (int(v) for v in tables.par_s[i])
            if j < 0:
                raise RuntimeError(f"corrupted tables: no predecessor at step {i}")
        else:
            e = int(tables.par_c[i, j, d])
            if e == -2:
                raise RuntimeError(f"corrupted tables: unreachable state at step {i}")
            cont[i - 1] = True
            j = j + d - w
            d = -1 if e == -1 else e
        i -= 1
        idx[i] = j
    if d != -1:
        raise RuntimeError("corrupted tables: plan does not start from rest")
    return idx, cont


def plan_loss(joints: np.ndarray, cont: np.ndarray, M: float) -> float:
    """Loss of a plan, summed forward step by step."""
    loss = 0.0
    for i in range(1, len(joints)):
        loss = loss + (step_cost(joints[i - 1], joints[i]) if cont[i - 1] else M)
    return loss


def make_plan(grid: ParamGrid, rows: np.ndarray, idx: np.ndarray, cont: np.ndarray, M: float, t0: float) -> Plan:
    rows = np.asarray(rows)
    joints = grid.ik[rows, idx]
    loss = plan_loss(joints, cont, M)
    return Plan(joints=joints, indices=idx, cont=cont, loss=loss,
                breakpoints=int(np.count_nonzero(~cont)), t0=t0, rows=rows)


def backtrack(tables: DPTables, grid: ParamGrid, t0: float | None = None) -> Plan:
    if not math.isfinite(tables.final_value):
        raise InfeasiblePathError(len(tables.rows) - 1, "no finite-loss plan")
    i = len(tables.rows) - 1
    idx, cont = backtrack_indices(tables, i, *tables.final)
    plan = make_plan(grid, tables.rows, idx, cont, tables.M, grid.t0 if t0 is None else t0)
    if plan.loss != tables.final_value:
        raise RuntimeError(f"backtracked loss {plan.loss!r} != table minimum {tables.final_value!r}")
    return plan


def solve(grid: ParamGrid, limits: JointLimits, lp: LossParams, rows=None, start: int | None = None) -> Plan:
    """Minimum-loss plan over the grid (optionally over a row remapping, and
    optionally with the first column pinned)."""
    N = grid.n if rows is None else len(rows) - 1
    lp.validate(N, limits)
    tables = run_tables(grid, limits, lp, rows, start=start)
    return backtrack(tables, grid, lp.t0)
