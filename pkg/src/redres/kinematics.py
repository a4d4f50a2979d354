"""Modified-DH forward kinematics and q7-parameterized closed-form IK for a
Panda-type 7-DOF arm.

The inverse kinematics fixes the seventh joint angle and solves the remaining
six joints geometrically:

* the wrist point (frame 5/6 origin) follows from the pose and q7,
* q4 follows from the shoulder-to-wrist distance (one elbow solution is kept),
* q5/q6 rotate the known shoulder direction into the wrist frame,
* q1..q3 are the ZYZ Euler angles of the frame-3 orientation.

Besides the discarded elbow solution this leaves a shoulder sign (sign of
sin q2) and a wrist sign (which asin branch gives q6), so up to 4 solutions
per (pose, q7) are reachable. One of them is the canonical branch.
"""
from __future__ import annotations

import os
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import yaml

ACOS_TOL = 1e-10
SINGULAR_TOL = 1e-12

DEFAULT_MODEL_PATH = Path(__file__).with_name("data") / "panda.yaml"
MODEL_ENV_VAR = "REDRES_ROBOT_MODEL"


@dataclass(frozen=True)
class DHTable:
    """Per-frame modified-DH rows: transform i-1 -> i is
    RotX(alpha) TransX(a) RotZ(q + offset) TransZ(d). The last row is the
    fixed flange frame."""

    a: np.ndarray
    d: np.ndarray
    alpha: np.ndarray
    offset: np.ndarray

    def __post_init__(self):
        for name in ("a", "d", "alpha", "offset"):
            arr = np.asarray(getattr(self, name), dtype=float)
            if arr.shape != (8,):
                raise ValueError(f"DH column {name!r} must have 8 entries, got {arr.shape}")
            object.__setattr__(self, name, arr)


@dataclass(frozen=True)
class JointLimits:
    q_min: np.ndarray
    q_max: np.ndarray
    v_max: np.ndarray
    a_max: np.ndarray
    j_max: np.ndarray

    def __post_init__(self):
        for name in ("q_min", "q_max", "v_max", "a_max", "j_max"):
            arr = np.asarray(getattr(self, name), dtype=float)
            if arr.shape != (7,):
                raise ValueError(f"{name} must be a 7-vector")
            object.__setattr__(self, name, arr)
        if not np.all(self.q_min < self.q_max):
            raise ValueError("q_min must be below q_max for every joint")
        for name in ("v_max", "a_max", "j_max"):
            if not np.all(getattr(self, name) > 0):
                raise ValueError(f"{name} must be positive")

    @property
    def span_sq(self) -> float:
        """Squared norm of q_max - q_min."""
        return float(np.sum((self.q_max - self.q_min) ** 2))


@dataclass(frozen=True)
class IKBranch:
    shoulder: int = 1
    wrist: int = 1

    def __post_init__(self):
        if self.shoulder not in (1, -1) or self.wrist not in (1, -1):
            raise ValueError("branch signs must be +1 or -1")


ALL_BRANCHES = tuple(IKBranch(s, w) for s in (1, -1) for w in (1, -1))


@dataclass(frozen=True)
class RobotModel:
    dh: DHTable
    limits: JointLimits
    canonical: IKBranch = field(default_factory=IKBranch)
    tool_offset: float = 0.0  # extra flange-z distance of the tool point, meters


def load_robot_model(path: str | os.PathLike | None = None) -> RobotModel:
    """Read a robot model YAML file (falls back to $REDRES_ROBOT_MODEL, then
    the bundled Panda model)."""
    if path is None:
        path = os.environ.get(MODEL_ENV_VAR) or DEFAULT_MODEL_PATH
    with open(path) as fh:
        raw = yaml.safe_load(fh)
    rows = raw["dh"]
    dh = DHTable(
        a=[r["a"] for r in rows],
        d=[r["d"] for r in rows],
        alpha=[r["alpha"] for r in rows],
        offset=[r.get("offset", 0.0) for r in rows],
    )
    lim = raw["limits"]
    limits = JointLimits(lim["q_min"], lim["q_max"], lim["v_max"], lim["a_max"], lim["j_max"])
    br = raw.get("canonical_branch", {})
    return RobotModel(
        dh=dh,
        limits=limits,
        canonical=IKBranch(int(br.get("shoulder", 1)), int(br.get("wrist", 1))),
        tool_offset=float(raw.get("tool_offset", 0.0)),
    )


_DEFAULT_MODEL: RobotModel | None = None


def default_model() -> RobotModel:
    global _DEFAULT_MODEL
    if _DEFAULT_MODEL is None:
        _DEFAULT_MODEL = load_robot_model(DEFAULT_MODEL_PATH)
    return _DEFAULT_MODEL


# --- elementary rotations (broadcast over leading axes) ----------------------

def _rot_x(t):
    t = np.asarray(t, dtype=float)
    c, s = np.cos(t), np.sin(t)
    o, z = np.ones_like(t), np.zeros_like(t)
    return np.stack([np.stack([o, z, z], -1), np.stack([z, c, -s], -1), np.stack([z, s, c], -1)], -2)


def _rot_y(t):
    t = np.asarray(t, dtype=float)
    c, s = np.cos(t), np.sin(t)
    o, z = np.ones_like(t), np.zeros_like(t)
    return np.stack([np.stack([c, z, s], -1), np.stack([z, o, z], -1), np.stack([-s, z, c], -1)], -2)


def _rot_z(t):
    t = np.asarray(t, dtype=float)
    c, s = np.cos(t), np.sin(t)
    o, z = np.ones_like(t), np.zeros_like(t)
    return np.stack([np.stack([c, -s, z], -1), np.stack([s, c, z], -1), np.stack([z, z, o], -1)], -2)


def _wrap(t):
    return (np.asarray(t) + np.pi) % (2 * np.pi) - np.pi


# --- forward kinematics --------------------------------------------------------

def forward_kinematics(q, model: RobotModel | None = None) -> np.ndarray:
    """Flange (or tool) pose as a 4x4 homogeneous matrix.

    ``q`` may carry leading batch axes: shape (..., 7) -> (..., 4, 4).
    """
    model = model or default_model()
    dh = model.dh
    q = np.asarray(q, dtype=float)
    batch = q.shape[:-1]
    R = np.broadcast_to(np.eye(3), batch + (3, 3)).copy()
    p = np.zeros(batch + (3,))
    thetas = [q[..., i] for i in range(7)] + [np.zeros(batch)]
    for i in range(8):
        d = dh.d[i] + (model.tool_offset if i == 7 else 0.0)
        # RotX(alpha) TransX(a): translation a along the rotated-into x axis
        R = R @ _rot_x(np.full(batch, dh.alpha[i]))
        p = p + dh.a[i] * R[..., :, 0]
        R = R @ _rot_z(thetas[i] + dh.offset[i])
        p = p + d * R[..., :, 2]
    T = np.zeros(batch + (4, 4))
    T[..., :3, :3] = R
    T[..., :3, 3] = p
    T[..., 3, 3] = 1.0
    return T


def within_limits(q, limits: JointLimits) -> bool:
    q = np.asarray(q, dtype=float)
    return bool(np.all((q >= limits.q_min) & (q <= limits.q_max)))


def rotation_distance(Ra: np.ndarray, Rb: np.ndarray) -> float:
    """Geodesic angle between two rotation matrices."""
    c = (np.trace(Ra.T @ Rb) - 1.0) / 2.0
    return float(np.arccos(np.clip(c, -1.0, 1.0)))


# --- inverse kinematics ----------------------------------------------------------

def _fit_limits(q, lo, hi):
    """Shift angles by 2*pi to land inside [lo, hi] when possible; NaN otherwise."""
    out = np.where(q < lo, q + 2 * np.pi, q)
    out = np.where(out > hi, out - 2 * np.pi, out)
    return np.where((out >= lo) & (out <= hi), out, np.nan)


def _ik_batch(R, p, q7, branch: IKBranch, model: RobotModel) -> np.ndarray:
    """Vectorized IK: R (N,3,3), p (N,3), q7 (N,) -> (N,7), NaN rows where absent."""
    dh, lim = model.dh, model.limits
    d1, d3, d5 = dh.d[0], dh.d[2], dh.d[4]
    a4, a5, a7 = dh.a[3], dh.a[4], dh.a[6]
    d_f = dh.d[7] + model.tool_offset
    N = q7.shape[0]
    q = np.full((N, 7), np.nan)
    q[:, 6] = q7

    R7 = R @ _rot_z(np.full(N, -dh.offset[7])) @ _rot_x(np.full(N, -dh.alpha[7]))
    p7 = p - d_f * R[:, :, 2] - dh.a[7] * R7[:, :, 0]
    R6 = R7 @ _rot_z(-(q7 + dh.offset[6])) @ _rot_x(np.full(N, -dh.alpha[6]))
    p6 = p7 - a7 * R6[:, :, 0]
    p2 = np.array([0.0, 0.0, d1])
    v26 = p6 - p2
    LL26 = np.einsum("ni,ni->n", v26, v26)

    # elbow: LL26 = K + A cos(q4) + B sin(q4)
    K = a4**2 + a5**2 + d3**2 + d5**2
    A = 2 * (a4 * a5 + d3 * d5)
    B = 2 * (d3 * a5 - a4 * d5)
    Rab = np.hypot(A, B)
    phi = np.arctan2(B, A)
    arg = (LL26 - K) / Rab
    ok = np.abs(arg) <= 1 + ACOS_TOL
    q4 = phi - np.arccos(np.clip(arg, -1.0, 1.0)) - dh.offset[3]
    q4 = np.where(ok, _fit_limits(q4, lim.q_min[3], lim.q_max[3]), np.nan)
    ok &= ~np.isnan(q4)

    # wrist: RotY(q5) RotZ(q6) u6 = w4
    M4 = _rot_x(np.full(N, dh.alpha[3])) @ _rot_z(q4 + dh.offset[3])
    v3 = np.stack([
        a4 + a5 * np.cos(q4 + dh.offset[3]) - d5 * np.sin(q4 + dh.offset[3]),
        np.zeros(N),
        d3 + a5 * np.sin(q4 + dh.offset[3]) + d5 * np.cos(q4 + dh.offset[3]),
    ], -1)
    w4 = -np.einsum("nji,nj->ni", M4, v3)
    u6 = -np.einsum("nji,nj->ni", R6, v26)
    rho = np.hypot(u6[:, 0], u6[:, 1])
    psi = np.arctan2(u6[:, 1], u6[:, 0])
    safe_rho = np.where(rho > SINGULAR_TOL, rho, 1.0)
    s = np.where(rho > SINGULAR_TOL, w4[:, 1] / safe_rho, 0.0)
    ok &= np.abs(s) <= 1 + ACOS_TOL
    s = np.clip(s, -1.0, 1.0)
    xp = branch.wrist * np.sqrt(np.maximum(1.0 - s * s, 0.0)) * rho
    q6_plus_psi = np.arctan2(s * rho, xp)
    q6 = _wrap(q6_plus_psi - psi)
    ux = xp
    uz = u6[:, 2]
    q5 = _wrap(np.arctan2(w4[:, 0], w4[:, 2]) - np.arctan2(ux, uz))
    q5 = _fit_limits(q5 - dh.offset[4], lim.q_min[4], lim.q_max[4])
    q6 = _fit_limits(_wrap(q6 - dh.offset[5]), lim.q_min[5], lim.q_max[5])
    ok &= ~np.isnan(q5) & ~np.isnan(q6)

    # shoulder: R3 = RotZ(q1) RotY(q2) RotZ(q3)
    R56 = _rot_y(q5 + dh.offset[4]) @ _rot_z(q6 + dh.offset[5])
    R4 = R6 @ np.swapaxes(R56, -1, -2)
    R3 = R4 @ np.swapaxes(M4, -1, -2)
    sb = np.hypot(R3[:, 0, 2], R3[:, 1, 2])
    q2 = np.arctan2(branch.shoulder * sb, R3[:, 2, 2])
    sig = branch.shoulder
    regular = sb > SINGULAR_TOL
    q1 = np.where(regular, np.arctan2(sig * R3[:, 1, 2], sig * R3[:, 0, 2]),
                  np.arctan2(R3[:, 1, 0], R3[:, 0, 0]))
    q3 = np.where(regular, np.arctan2(sig * R3[:, 2, 1], -sig * R3[:, 2, 0]), 0.0)
    q1 = _fit_limits(q1 - dh.offset[0], lim.q_min[0], lim.q_max[0])
    q2 = _fit_limits(q2 - dh.offset[1], lim.q_min[1], lim.q_max[1])
    q3 = _fit_limits(q3 - dh.offset[2], lim.q_min[2], lim.q_max[2])
    ok &= ~np.isnan(q1) & ~np.isnan(q2) & ~np.isnan(q3)

    q[:, 0], q[:, 1], q[:, 2], q[:, 3], q[:, 4], q[:, 5] = q1, q2, q3, q4, q5, q6
    q7_ok = (q7 >= lim.q_min[6]) & (q7 <= lim.q_max[6])
    ok &= q7_ok
    q[~ok] = np.nan
    return q


def ik_batch(pose, q7, branch: IKBranch | None = None, model: RobotModel | None = None) -> np.ndarray:
    """IK for one pose (4x4) and many q7 values, or matching batches of
    poses (N,4,4) and q7 (N,). Rows with no solution are NaN."""
    model = model or default_model()
    branch = branch or model.canonical
    pose = np.asarray(pose, dtype=float)
    q7 = np.atleast_1d(np.asarray(q7, dtype=float))
    if pose.ndim == 2:
        pose = np.broadcast_to(pose, (q7.shape[0], 4, 4))
    return _ik_batch(pose[:, :3, :3], pose[:, :3, 3], q7, branch, model)


def ik_fixed_q7(pose, q7: float, branch: IKBranch, model: RobotModel | None = None) -> np.ndarray | None:
    """Joint configuration on ``branch`` reaching ``pose`` with the given q7,
    or None when no limit-feasible solution exists."""
    q = ik_batch(pose, [q7], branch, model)[0]
    return None if np.isnan(q[0]) else q


def ik_param(pose, q7: float, model: RobotModel | None = None) -> np.ndarray | None:
    """Canonical-branch parameterized IK. Raises ValueError for q7 outside
    the joint-7 range."""
    model = model or default_model()
    lim = model.limits
    if not lim.q_min[6] <= q7 <= lim.q_max[6]:
        raise ValueError(f"q7={q7} outside [{lim.q_min[6]}, {lim.q_max[6]}]")
    return ik_fixed_q7(pose, q7, model.canonical, model)


def branch_of(q, model: RobotModel | None = None, tol: float = 1e-7) -> IKBranch | None:
    """Which IK branch reproduces ``q`` from its own pose (None if none does,
    e.g. the discarded elbow solution)."""
    model = model or default_model()
    q = np.asarray(q, dtype=float)
    pose = forward_kinematics(q, model)
    best, best_err = None, tol
    for br in ALL_BRANCHES:
        sol = ik_fixed_q7(pose, q[6], br, model)
        if sol is not None:
            err = np.max(np.abs(sol - q))
            if err < best_err:
                best, best_err = br, err
    return best
