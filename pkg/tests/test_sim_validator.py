import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.spatial.transform import Rotation

from redres.dp_planner import LossParams, make_plan, solve
from redres.kinematics import forward_kinematics
from redres.path_model import ParamGrid, SampledPath
from redres.sim_validator import (InstanceTooLarge, Trace, brute_force_solve, cartesian_error,
                                  finite_differences, greedy_baseline, random_instance, replay,
                                  validate_constraints)

TC = 0.001


@pytest.fixture(scope="module")
def smoke_trace(smoke_grids, limits, model):
    g = smoke_grids["test1"]
    plan = solve(g, limits, LossParams.auto(g.n, limits, g.t0))
    return plan, replay(plan, limits, TC, model)


def test_finite_differences_of_a_ramp():
    q = np.outer(np.arange(5.0), np.ones(7)) * 1e-3
    v, a, j = finite_differences(q, 1e-3)
    assert v.shape == a.shape == j.shape == (7, 7)  # two trailing rest steps
    np.testing.assert_allclose(v[1:5], 1.0)
    assert v[0].max() == 0 and v[5:].max() == 0
    np.testing.assert_allclose(a[1], 1e3)
    np.testing.assert_allclose(a[5], -1e3)
    np.testing.assert_array_equal(finite_differences(np.zeros((3, 7)), 1e-3)[2], 0)


def test_smoke_replay_is_clean(smoke_trace, smoke_paths, limits):
    plan, trace = smoke_trace
    rep = validate_constraints(trace, limits)
    assert rep.ok, rep.violations[:3]
    assert np.abs(rep.extrema["j"]).max() <= 1.0
    err = cartesian_error(trace, smoke_paths["test1"], limits)
    assert err.mean < 1e-6 and err.max < 1e-5
    np.testing.assert_array_equal(trace.sample_q[0], plan.joints[0])
    # the stream ends at rest but may still lag the last sample slightly
    np.testing.assert_allclose(trace.sample_q[-1], plan.joints[-1], atol=1e-5)


@pytest.mark.parametrize("kind,scale", [("v", 1.0), ("a", 1e-3), ("j", 1e-6)])
def test_injected_faults_are_reported(smoke_trace, limits, kind, scale):
    """A bump of height h in position gives |v| ~ h/tc, |a| ~ h/tc^2, |j| ~ h/tc^3."""
    _, trace = smoke_trace
    seg = trace.stream.segments[0]
    c, joint = seg.cycles // 2, 3
    bound = {"v": limits.v_max, "a": limits.a_max, "j": limits.j_max}[kind][joint]
    saved = seg.q.copy()
    try:
        seg.q[c, joint] += 3 * bound * TC * scale
        rep = validate_constraints(trace, limits)
        hits = [x for x in rep.violations if x.kind == kind]
        assert hits and all(x.joint == joint and abs(x.cycle - c) <= 3 for x in hits)
    finally:
        seg.q[:] = saved


def test_position_limit_fault(smoke_trace, limits):
    _, trace = smoke_trace
    seg = trace.stream.segments[0]
    saved = seg.q.copy()
    try:
        seg.q[:, 5] = limits.q_min[5] - 0.01  # constant: no motion violation, only q
        rep = validate_constraints(trace, limits)
        assert {x.kind for x in rep.violations} == {"q"}
        assert all(x.joint == 5 and x.limit == limits.q_min[5] for x in rep.violations)
    finally:
        seg.q[:] = saved


def test_terminal_motion_fault(smoke_trace, limits):
    _, trace = smoke_trace
    seg = trace.stream.segments[0]
    saved = seg.v.copy()
    try:
        seg.v[-1, 0] = 1e-6
        assert not validate_constraints(trace, limits).ok
    finally:
        seg.v[:] = saved


def exact_trace(joints):
    return Trace(None, joints, forward_kinematics(joints), TC)


def test_exact_ik_has_zero_error(smoke_grids, smoke_paths, limits):
    g, p = smoke_grids["test2"], smoke_paths["test2"]
    plan = solve(g, limits, LossParams.auto(g.n, limits, g.t0))
    err = cartesian_error(exact_trace(plan.joints), p)
    assert err.max < 1e-12 and err.rotation.max() < 1e-7


@settings(max_examples=25)
@given(st.integers(0, 2 ** 32 - 1))
def test_error_is_frame_invariant(seed):
    rng = np.random.default_rng(seed)
    q = rng.uniform(-1, 1, (5, 7))
    T = forward_kinematics(q)
    P = forward_kinematics(q + rng.normal(0, 1e-3, q.shape))
    G = np.eye(4)
    G[:3, :3] = Rotation.random(random_state=seed).as_matrix()
    G[:3, 3] = rng.normal(0, 1, 3)
    base = cartesian_error(Trace(None, q, T, TC), SampledPath(np.arange(5.0), P, 1.0, False))
    moved = cartesian_error(Trace(None, q, G @ T, TC), SampledPath(np.arange(5.0), G @ P, 1.0, False))
    np.testing.assert_allclose(moved.translation, base.translation, atol=1e-12)
    np.testing.assert_allclose(moved.rotation, base.rotation, atol=1e-7)


def test_length_mismatch(smoke_paths):
    with pytest.raises(ValueError):
        cartesian_error(Trace(None, np.zeros((0, 7)), np.zeros((0, 4, 4)), TC), smoke_paths["test1"])


def trap_grid():
    """Greedy takes the nearer cell at sample 1 and is stranded at sample 2."""
    ik = np.zeros((3, 2, 7))
    ik[0, 1] = np.nan
    ik[1, 0, 0], ik[1, 1, 0] = 0.001, 0.02
    ik[2, 0] = np.nan
    ik[2, 1, 0] = 0.0405
    return ParamGrid(values=np.array([0.0, 1.0]), ik=ik, t0=0.01)


def test_greedy_is_trapped_where_dp_is_not(limits):
    g = trap_grid()
    res = greedy_baseline(g, limits, 0)
    assert not res.completed and res.halted_at == 2 and res.plan is None
    plan = solve(g, limits, LossParams.auto(g.n, limits, g.t0))
    assert plan.breakpoints == 0
    np.testing.assert_array_equal(plan.indices, [0, 1, 1])


def test_greedy_completes_on_constant_grid(limits):
    g = ParamGrid(values=np.arange(3.0), ik=np.zeros((5, 3, 7)), t0=0.01)
    res = greedy_baseline(g, limits, 2)
    assert res.completed and res.plan.breakpoints == 0
    np.testing.assert_array_equal(res.indices, [2, 0, 0, 0, 0])  # ties go to the smallest column
    with pytest.raises(ValueError):
        greedy_baseline(trap_grid(), limits, 1)


def test_brute_force_guard(limits, rng):
    g = random_instance(rng, 12, 8, limits)
    with pytest.raises(InstanceTooLarge):
        brute_force_solve(g, limits, LossParams.auto(g.n, limits, g.t0))


def test_brute_force_hand_case(limits):
    g = trap_grid()
    lp = LossParams.auto(g.n, limits, g.t0)
    b = brute_force_solve(g, limits, lp)
    np.testing.assert_array_equal(b.indices, [0, 1, 1])
    ref = make_plan(g, np.arange(3), np.array([0, 1, 1]), np.ones(2, bool), lp.M, g.t0)
    assert b.loss == ref.loss


@pytest.mark.parametrize("circular", [False, True])
def test_random_instance_shape(limits, rng, circular):
    g = random_instance(rng, 5, 4, limits, circular=circular)
    assert g.ik.shape == (6, 4, 7) and g.present.any(axis=1).all()
    if circular:
        np.testing.assert_array_equal(g.ik[0], g.ik[-1])
