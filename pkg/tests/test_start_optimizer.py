import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from redres.dp_planner import LossParams, backtrack_indices, run_tables
from redres.kinematics import forward_kinematics
from redres.sim_validator import random_instance, random_tiny_instance
from redres.start_optimizer import (NotCircularError, doubled_rows, optimize_start, rebase_plan,
                                    rotated_rows, rotation_oracle)


def test_path2_start_fix(smoke_grids, smoke_paths, limits):
    g, p = smoke_grids["test2"], smoke_paths["test2"]
    res = optimize_start(g, limits, LossParams.auto(g.n, limits, g.t0))
    assert res.baseline_breaks == 1 and res.improved
    assert res.plan.breakpoints == 0 and res.plan.cont.all()
    assert 0 < res.new_start_index < g.n
    # the re-based plan still traces the circle, now starting at the new sample
    T = forward_kinematics(res.plan.joints)
    rotated = p.poses[rotated_rows(g.n, res.new_start_index)]
    np.testing.assert_allclose(T, rotated, atol=1e-9)


def test_path1_unchanged(smoke_grids, limits):
    g = smoke_grids["test1"]
    res = optimize_start(g, limits, LossParams.auto(g.n, limits, g.t0))
    assert not res.improved and res.new_start_index == 0
    assert res.plan.breakpoints == res.baseline_breaks == 0


def test_not_circular(limits, rng):
    g = random_instance(rng, 4, 3, limits)
    with pytest.raises(NotCircularError):
        optimize_start(g, limits, LossParams.auto(4, limits, g.t0))


@settings(max_examples=120)
@given(st.integers(0, 2 ** 32 - 1))
def test_against_rotation_oracle(limits, seed):
    g = random_tiny_instance(np.random.default_rng(seed), limits, circular=True)
    lp = LossParams.auto(g.n, limits, g.t0)
    res = optimize_start(g, limits, lp)
    best, _ = rotation_oracle(g, limits, lp)
    assert best >= res.baseline_breaks - 1
    if res.improved:
        assert best == res.baseline_breaks - 1 == res.plan.breakpoints
        s = res.new_start_index
        np.testing.assert_array_equal(res.plan.joints, g.ik[rotated_rows(g.n, s), res.plan.indices])
    else:
        assert res.new_start_index == 0


@settings(max_examples=60)
@given(st.integers(0, 2 ** 32 - 1))
def test_found_state_decodes(limits, seed):
    """floor(v / W) is the prefix break count and the next field is the restart index."""
    g = random_tiny_instance(np.random.default_rng(seed), limits, circular=True)
    n = g.n
    lp = LossParams.auto(n, limits, g.t0)
    b0 = optimize_start(g, limits, lp).baseline_breaks
    W = (2 * n + 1) * lp.M
    t = run_tables(g, limits, lp, doubled_rows(n), mode=1, W=W, n_base=n, z_base=b0)
    if t.found is None:
        return
    i, j, d = t.found
    idx, cont = backtrack_indices(t, i, j, d)
    v = t.found_value
    assert math.floor(v / W) == np.count_nonzero(~cont)
    first = int(np.flatnonzero(~cont)[0]) + 1
    assert math.floor((v % W) / lp.M) == first == i - n


def test_rebase_labels(smoke_grids, limits):
    g = smoke_grids["test2"]
    res = optimize_start(g, limits, LossParams.auto(g.n, limits, g.t0))
    for s in (0, g.n):
        same = rebase_plan(res.baseline, s)
        np.testing.assert_array_equal(same.rows, np.r_[np.arange(g.n), 0])
        np.testing.assert_array_equal(same.joints, res.baseline.joints)
    assert rebase_plan(res.baseline, 7).rows[0] == 7


def test_row_maps():
    np.testing.assert_array_equal(doubled_rows(3), [0, 1, 2, 3, 1, 2, 3])
    np.testing.assert_array_equal(rotated_rows(4, 1), [1, 2, 3, 0, 1])
    with pytest.raises(ValueError):
        rotated_rows(4, 4)
