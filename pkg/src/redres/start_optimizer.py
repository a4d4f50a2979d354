"""Start-point search for closed paths.

On a circular path any sample can serve as the start. A single extra DP pass
over the doubled path 0..n, 1..n finds a start that removes one breakpoint
if such a start exists (and one is the most any start can remove).

The pass encodes three quantities in one float per state: the breakpoint
count in units of W = (2n+1) M, the restart index z of the first break in
units of M, and the ordinary continuous cost below M. A state at step i
whose first restart is z = i - n and whose break count is at most the
baseline count closes a full cycle z..z+n with one breakpoint fewer.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .dp_planner import (LossParams, Plan, backtrack_indices, make_plan, run_tables,
                         solve)
from .kinematics import JointLimits
from .path_model import ParamGrid


@dataclass
class StartSearchResult:
    improved: bool
    new_start_index: int  # path sample used as the start (0 if not improved)
    baseline_breaks: int
    plan: Plan  # the plan to execute, in execution order
    baseline: Plan


def doubled_rows(n: int) -> np.ndarray:
    return np.concatenate([np.arange(n + 1), np.arange(1, n + 1)])


def rotated_rows(n: int, s: int) -> np.ndarray:
    """Grid rows of the path restarted at sample s (row 0 stands in for row n)."""
    if not 0 <= s < n:
        raise ValueError(f"start index {s} outside [0, {n})")
    return (s + np.arange(n + 1)) % n


class NotCircularError(ValueError):
    pass


def check_circular(grid: ParamGrid, tol: float = 1e-9):
    first, last = grid.ik[0], grid.ik[grid.n]
    same_mask = np.array_equal(np.isnan(first[:, 0]), np.isnan(last[:, 0]))
    if not same_mask or not np.allclose(first, last, atol=tol, rtol=0.0, equal_nan=True):
        raise NotCircularError("first and last samples differ; the path is not closed")


def rebase_plan(window: Plan, start_index: int) -> Plan:
    """Label a window of n+1 consecutive doubled-path samples so that sample i
    maps to original pose (start_index + i) mod n; joints and breaks are kept."""
    n = window.n
    if window.rows is not None and len(window.rows) != n + 1:
        raise ValueError("window length does not match its row map")
    if n < 1:
        raise ValueError("window must span at least two samples")
    rows = (start_index + np.arange(n + 1)) % n
    return Plan(joints=window.joints.copy(), indices=window.indices.copy(), cont=window.cont.copy(),
                loss=window.loss, breakpoints=window.breakpoints, t0=window.t0, rows=rows)


def window_plan(grid: ParamGrid, rows: np.ndarray, idx: np.ndarray, cont: np.ndarray,
                z: int, n: int, M: float, t0: float) -> Plan:
    """Slice samples z..z+n out of a doubled-path plan and re-base it to start z."""
    if z + n >= len(rows):
        raise ValueError("window runs past the doubled path")
    plan = make_plan(grid, rows[z:z + n + 1], idx[z:z + n + 1], cont[z:z + n], M, t0)
    return rebase_plan(plan, z)


def optimize_start(grid: ParamGrid, limits: JointLimits, lp: LossParams) -> StartSearchResult:
    n = grid.n
    check_circular(grid)
    lp.validate(2 * n, limits)
    baseline = solve(grid, limits, lp)
    b0 = baseline.breakpoints
    if b0 == 0:
        return StartSearchResult(False, 0, 0, baseline, baseline)
    rows = doubled_rows(n)
    W = (2 * n + 1) * lp.M
    tables = run_tables(grid, limits, lp, rows, mode=1, W=W, n_base=n, z_base=b0)
    if tables.found is None:
        return StartSearchResult(False, 0, b0, baseline, baseline)
    i, j, d = tables.found
    idx, cont = backtrack_indices(tables, i, j, d)
    z = i - n
    plan = window_plan(grid, rows, idx, cont, z, n, lp.M, lp.t0)
    if plan.breakpoints != b0 - 1:
        raise RuntimeError(f"window has {plan.breakpoints} breakpoints, expected {b0 - 1}")
    return StartSearchResult(True, int(z % n), b0, plan, baseline)


def rotation_oracle(grid: ParamGrid, limits: JointLimits, lp: LossParams) -> tuple[int, int]:
    """Exhaustive check: (fewest breakpoints over all starts, first start reaching it)."""
    n = grid.n
    best, arg = None, 0
    for s in range(n):
        b = solve(grid, limits, lp, rows=rotated_rows(n, s)).breakpoints
        if best is None or b < best:
            best, arg = b, s
    return best, arg
