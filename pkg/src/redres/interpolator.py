"""Jerk-limited per-cycle command generation (communication-rate interpolation).

Each cycle aims the joint at the next plan sample, q_d = q_now + t0 * v_d
with v_d = (q_target - q_now) / t_r, then clamps jerk, acceleration and
velocity in that order until all three hold. Near the end of a segment the
acceleration and velocity bounds shrink with the number n0 of remaining
cycles so the arm comes to rest exactly when the segment ends.

The clamp alone is not recursively feasible: a joint moving at the
shrinking velocity bound with zero acceleration cannot follow the bound
down, since jerk limits how fast deceleration builds. Every clamped command
is therefore accepted only if a fixed braking policy, simulated from the
resulting state, still reaches rest inside the shrinking bounds; otherwise
the braking policy's own command is used. Starting from rest this invariant
holds by induction, so every emitted command satisfies every bound.

Commands are generated against limits scaled by (1 - margin) so that
finite-difference re-checks of the rounded position stream stay inside the
true limits.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numba
import numpy as np

from .dp_planner import Plan
from .kinematics import JointLimits

CLAMP_CAP = 16
DEFAULT_MARGIN = 1e-7
_REL = 1e-12
_ABS = 1e-14


class InterpolationError(RuntimeError):
    pass


@dataclass
class ActuatorState:
    q_now: np.ndarray
    v_now: np.ndarray
    a_now: np.ndarray
    t: float = 0.0

    @classmethod
    def rest(cls, q) -> "ActuatorState":
        q = np.asarray(q, dtype=float)
        return cls(q.copy(), np.zeros_like(q), np.zeros_like(q))


@dataclass
class CycleCommand:
    q_d: np.ndarray
    v_d: np.ndarray
    a_d: np.ndarray
    j_d: np.ndarray
    iterations: int = 0


# --- scalar kernels ---------------------------------------------------------------

@numba.njit(cache=True)
def _exceeds(x, lim):
    return abs(x) > lim + _REL * lim + _ABS


@numba.njit(cache=True)
def _stop_limits(n0, tc, A, J, V):
    a1 = min(A, n0 * tc * J)
    v1 = min(V, max(0.0, n0 * tc * A - A * A / (2.0 * J)))
    return a1, v1


@numba.njit(cache=True)
def _clamp(qn, vn, an, qt, tr, tc, J, A1, V1, cap):
    """Clamp loop for one joint; returns (v_d, a_d, j_d, clamps), clamps = -1
    when the loop does not settle within cap passes."""
    vd = (qt - qn) / tr
    ad = (vd - vn) / tc
    jd = (ad - an) / tc
    clamps = 0
    for _ in range(cap):
        hit = False
        if _exceeds(jd, J):
            jd = math.copysign(J, jd)
            ad = an + tc * jd
            vd = vn + tc * ad
            hit = True
            clamps += 1
        if _exceeds(ad, A1):
            ad = math.copysign(A1, ad)
            jd = (ad - an) / tc
            vd = vn + tc * ad
            hit = True
            clamps += 1
        if _exceeds(vd, V1):
            vd = math.copysign(V1, vd)
            ad = (vd - vn) / tc
            jd = (ad - an) / tc
            hit = True
            clamps += 1
        if not hit:
            return vd, ad, jd, clamps
    return vd, ad, jd, -1


@numba.njit(cache=True)
def clamp_batch(qn, vn, an, qt, tr, tc, J, A1, V1, cap=CLAMP_CAP):
    """Vectorized clamp loop over equal-length 1-D arrays (scalar limits per
    entry); returns v_d, a_d, j_d and the clamp count (-1: did not settle)."""
    N = qn.shape[0]
    out = np.empty((N, 3))
    cl = np.empty(N, dtype=np.int64)
    for k in range(N):
        vd, ad, jd, c = _clamp(qn[k], vn[k], an[k], qt[k], tr[k], tc, J[k], A1[k], V1[k], cap)
        out[k, 0], out[k, 1], out[k, 2], cl[k] = vd, ad, jd, c
    return out[:, 0], out[:, 1], out[:, 2], cl


@numba.njit(cache=True)
def _brake(vn, an, tc, J, A1):
    """Braking policy: the acceleration whose max-jerk ramp back to zero
    just cancels the velocity, limited to the jerk and acceleration bounds.
    Returns (a_d, ok); ok is False if the bounds leave no room."""
    x = 2.0 * J * abs(vn) / (J * tc + math.sqrt(J * J * tc * tc + 2.0 * J * abs(vn)))
    ades = -math.copysign(x, vn) if vn != 0.0 else 0.0
    lo = max(an - J * tc, -A1)
    hi = min(an + J * tc, A1)
    if lo > hi:
        if lo - hi <= _REL * (abs(lo) + abs(hi)) + _ABS:
            return 0.5 * (lo + hi), True
        return 0.0, False
    return min(max(ades, lo), hi), True


@numba.njit(cache=True)
def _safe(v, a, n, tc, J, A, V):
    """Can the braking policy bring (v, a) to rest within the next n cycles
    while respecting the shrinking bounds?"""
    for k in range(n - 1, -1, -1):
        if v == 0.0 and a == 0.0:
            return True
        A1, V1 = _stop_limits(k, tc, A, J, V)
        ad, ok = _brake(v, a, tc, J, A1)
        if not ok:
            return False
        vd = v + tc * ad
        if _exceeds(vd, V1):
            return False
        v, a = vd, ad
    return abs(v) <= _ABS and abs(a) <= _ABS


@numba.njit(cache=True)
def _follow_kernel(Qs, r, tc, J, A, V, tail, cap):
    K = Qs.shape[0] - 1
    C = K * r + tail
    q = np.empty((C + 1, 7))
    v = np.zeros((C + 1, 7))
    a = np.zeros((C + 1, 7))
    jk = np.zeros((C + 1, 7))
    q[0] = Qs[0]
    max_clamps = 0
    fallbacks = 0
    for c in range(C):
        k = min(-(-(c + 1) // r), K)
        tr = (k * r - c) * tc if (c + 1) <= K * r else tc
        n0 = C - (c + 1)
        for i in range(7):
            qn, vn, an = q[c, i], v[c, i], a[c, i]
            A1, V1 = _stop_limits(n0, tc, A[i], J[i], V[i])
            vd, ad, jd, cl = _clamp(qn, vn, an, Qs[k, i], tr, tc, J[i], A1, V1, cap)
            if cl > max_clamps:
                max_clamps = cl
            if cl < 0 or not _safe(vd, ad, n0, tc, J[i], A[i], V[i]):
                fallbacks += 1
                ad, ok = _brake(vn, an, tc, J[i], A1)
                if not ok:
                    return q, v, a, jk, max_clamps, fallbacks, c
                vd = vn + tc * ad
                if _exceeds(vd, V1):
                    vd = math.copysign(V1, vd)
                    ad = (vd - vn) / tc
                jd = (ad - an) / tc
            q[c + 1, i] = qn + tc * vd
            v[c + 1, i] = vd
            a[c + 1, i] = ad
            jk[c + 1, i] = jd
    return q, v, a, jk, max_clamps, fallbacks, -1


# --- public API -------------------------------------------------------------------

def stopping_limits(n0: int, t0: float, limits: JointLimits) -> tuple[np.ndarray, np.ndarray]:
    """Acceleration and velocity bounds that still allow a stop within n0 cycles."""
    if n0 < 0:
        raise ValueError("n0 must be non-negative")
    a1 = np.minimum(limits.a_max, n0 * t0 * limits.j_max)
    v1 = np.minimum(limits.v_max, np.maximum(0.0, n0 * t0 * limits.a_max
                                             - limits.a_max ** 2 / (2 * limits.j_max)))
    return a1, v1


def clamp_kinematics(state: ActuatorState, q_target, t_r: float, t0: float,
                     j_max, a_max, v_max, cap: int = CLAMP_CAP) -> CycleCommand:
    """One cycle of the clamp loop against the given (effective) bounds."""
    if not t_r >= t0 > 0:
        raise ValueError("need t_r >= t0 > 0")
    q_target = np.asarray(q_target, dtype=float)
    out = np.empty((3, len(q_target)))
    worst = 0
    for i in range(len(q_target)):
        vd, ad, jd, cl = _clamp(state.q_now[i], state.v_now[i], state.a_now[i], q_target[i],
                                t_r, t0, j_max[i], a_max[i], v_max[i], cap)
        if cl < 0:
            raise InterpolationError(f"clamp loop did not settle for joint {i + 1}")
        out[:, i] = vd, ad, jd
        worst = max(worst, cl)
    return CycleCommand(q_d=state.q_now + t0 * out[0], v_d=out[0], a_d=out[1], j_d=out[2],
                        iterations=worst)


@dataclass
class SegmentStream:
    """Commands for one continuous plan segment. Row 0 is the rest state at
    the first sample; row c is the state after cycle c."""

    first_sample: int
    last_sample: int
    ratio: int  # cycles per plan sample
    q: np.ndarray
    v: np.ndarray
    a: np.ndarray
    j: np.ndarray

    @property
    def cycles(self) -> int:
        return len(self.q) - 1

    def sample_rows(self) -> np.ndarray:
        """Stream rows at which the plan samples of this segment fall."""
        return np.arange(self.last_sample - self.first_sample + 1) * self.ratio


@dataclass
class CommandStream:
    segments: list[SegmentStream]
    t0_cycle: float
    ratio: int
    max_clamps: int = 0
    fallbacks: int = 0

    @property
    def cycles(self) -> int:
        return sum(s.cycles for s in self.segments)


def cycle_ratio(t0_plan: float, t0_cycle: float) -> int:
    if t0_cycle <= 0:
        raise ValueError("cycle interval must be positive")
    ratio = t0_plan / t0_cycle
    r = round(ratio)
    if r < 1 or abs(ratio - r) > 1e-9 * ratio:
        raise ValueError(f"plan interval {t0_plan} is not a multiple of cycle {t0_cycle}")
    return int(r)


def follow_samples(samples: np.ndarray, limits: JointLimits, t0_plan: float, t0_cycle: float,
                   tail: int = 0, margin: float = DEFAULT_MARGIN):
    r = cycle_ratio(t0_plan, t0_cycle)
    s = 1.0 - margin
    q, v, a, j, cl, fb, fail = _follow_kernel(
        np.ascontiguousarray(samples, dtype=float), r, float(t0_cycle),
        limits.j_max * s, limits.a_max * s, limits.v_max * s, int(tail), CLAMP_CAP)
    if fail >= 0:
        raise InterpolationError(f"no admissible command at cycle {fail}")
    return r, q, v, a, j, cl, fb


def follow(plan: Plan, limits: JointLimits, t0_cycle: float, tail: int = 0,
           margin: float = DEFAULT_MARGIN) -> CommandStream:
    """Command streams for every continuous segment of the plan; each ends at rest."""
    segs, worst, fbs, r = [], 0, 0, cycle_ratio(plan.t0, t0_cycle)
    for first, last in plan.segments():
        r, q, v, a, j, cl, fb = follow_samples(plan.joints[first:last + 1], limits, plan.t0,
                                               t0_cycle, tail, margin)
        segs.append(SegmentStream(first, last, r, q, v, a, j))
        worst, fbs = max(worst, cl), fbs + fb
    return CommandStream(segs, t0_cycle, r, worst, fbs)
