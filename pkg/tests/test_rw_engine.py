import math

import numpy as np
import pytest
from scipy import stats

from exactqueue.distributions import solve_tilt
from exactqueue.dcfp import make_walk, ra_step
from exactqueue.errors import BudgetExceeded
from exactqueue.harness.oracles import emptiness_depth_mean, forward_ra_cycles, mean_ci
from exactqueue.rng import Streams
from exactqueue.rw_engine import (
    MilestoneLedger,
    RoutingLaw,
    ScalarLedger,
    ServiceLaw,
    StepBudget,
    backward_workloads,
    coalescence,
    extend_multidim,
    extend_scalar,
    global_max,
    index_map,
    suffix_max,
)


def routing_law(model, seed, replication=0):
    ctx = solve_tilt(model)
    return RoutingLaw(model, ctx, Streams.from_seed(seed, replication))


def test_global_max_basic_properties(mm2):
    for r in range(50):
        law = routing_law(mm2, 1, r)
        seg = global_max(law)
        assert np.all(seg.peak >= 0)
        assert np.all(seg.positions <= seg.peak)
        assert seg.D[0] == 0 and seg.G[0] == math.inf and seg.G[-1] == math.inf
        # milestones descend by at least ``down`` in every coordinate
        for a, b in zip(seg.D[:-1], seg.D[1:]):
            assert np.all(seg.positions[b] < seg.positions[a] - law.down + 1e-12)


def test_acceptance_ratio_bound_holds_on_every_proposal(mm3):
    law = routing_law(mm3, 2)
    for _ in range(300):
        global_max(law)
    assert law.proposals > 0
    assert law.max_accept_ratio <= law.ratio_bound < 1


def test_acceptance_ratio_assertion_trips_when_height_too_low(mm3):
    law = routing_law(mm3, 3)
    law.up = 0.1 * math.log(3) / law.thetas[0]
    with pytest.raises(AssertionError):
        for _ in range(200):
            global_max(law)


def test_global_max_c1_matches_long_brute_force(mm1):
    # scalar walk a - T; brute force takes the running max of 5000 steps
    ctx = solve_tilt(mm1)
    exact = np.array([global_max(RoutingLaw(mm1, ctx, Streams.from_seed(4, r))).peak[0] for r in range(3000)])
    rng = np.random.default_rng(5)
    brute = np.empty(3000)
    for k in range(0, 3000, 500):
        inc = ctx.a - rng.exponential(1 / 3.0, size=(500, 5000))
        brute[k:k + 500] = np.maximum(np.cumsum(inc, axis=1).max(axis=1), 0.0)
    assert stats.ks_2samp(exact, brute).pvalue > 0.01


def test_step_budget_raises(mm2):
    law = routing_law(mm2, 6)
    with pytest.raises(BudgetExceeded):
        for _ in range(1000):
            global_max(law, StepBudget(50))


@pytest.mark.parametrize("fixture", ["mm1", "mm3"])
def test_certified_caps_hold_for_later_patches(fixture, request):
    model = request.getfixturevalue(fixture)
    for r in range(5):
        led = MilestoneLedger(routing_law(model, 7, r))
        extend_multidim(led, lambda l: l.horizon, 10**4)
        pos = led.positions
        led.check_consistency()
        for end in led.segment_ends[1:-1]:
            cap = pos[end] + led.law.up
            assert np.all(pos[end:] <= cap + 1e-12)


def test_patch_acceptance_rate_matches_independent_estimate(mm2):
    led = MilestoneLedger(routing_law(mm2, 8))
    extend_multidim(led, lambda l: l.patch_accepts, 400)
    p_hat = led.patch_accepts / led.patch_attempts
    law = routing_law(mm2, 9)
    hits = np.array([np.all(global_max(law).peak <= law.up) for _ in range(4000)])
    p_ind = hits.mean()
    se = math.sqrt(p_hat * (1 - p_hat) / led.patch_attempts + p_ind * (1 - p_ind) / hits.size)
    assert abs(p_hat - p_ind) < 4 * se


def test_record_sets_are_sound(mm2):
    led = MilestoneLedger(routing_law(mm2, 10))
    extend_multidim(led, lambda l: len(l.records()), 20)
    pos = led.positions
    rec = led.records()
    assert rec.size >= 20
    for n in rec:
        assert np.all(pos[n:] <= pos[n])
    assert np.all(rec <= led.confirmed_window())


def test_extend_multidim_length_predicate(mm2):
    led = extend_multidim(MilestoneLedger(routing_law(mm2, 11)), lambda l: l.horizon, 1)
    assert led.horizon >= 1


def test_scalar_ledger(mm2):
    ctx = solve_tilt(mm2)
    law = ServiceLaw(mm2, ctx, Streams.from_seed(12))
    led = ScalarLedger(law)
    led.extend_patch()
    n0 = len(led.records())
    extend_scalar(led, lambda l: len(l.records()) - n0, 1)
    assert len(led.records()) > n0
    led.check_consistency()
    inc, _ = law.nominal(10**5)
    assert inc.mean() < 0
    pos = led.positions[:, 0]
    for n in led.records():
        assert np.all(pos[n:] <= pos[n])


def test_scalar_record_never_exceeded_on_long_continuation(mm2):
    # every confirmed record stays the maximum of a 10^5-step continuation
    ctx = solve_tilt(mm2)
    law = ServiceLaw(mm2, ctx, Streams.from_seed(13))
    led = ScalarLedger(law)
    extend_scalar(led, lambda l: l.horizon, 10**5)
    pos = led.positions[:, 0]
    rec = led.records()
    assert rec.size > 0
    for n in rec[:50]:
        assert pos[n:].max() == pos[n]


def test_index_map():
    U = np.array([0, 1, 1, 0, 2])
    assert index_map(U, 1).tolist() == [2, 3]
    assert index_map(U, 0).tolist() == [1, 4]


def _assembled_R(walk):
    sc = walk.scenario
    inc = -np.asarray(sc.T_walk)[:, None] + np.eye(walk.c)[sc.U_back] * np.asarray(sc.S_back)[:, None]
    return np.vstack([np.zeros((1, walk.c)), np.cumsum(inc, axis=0)])


@pytest.mark.parametrize("mode", ["records", "envelope"])
def test_coalescence_replays(mm2, mode):
    for r in range(40):
        res = coalescence(mm2, solve_tilt(mm2, require_records=True), Streams.from_seed(14, r), mode=mode)
        walk = res.walk
        R = _assembled_R(walk)
        assert np.allclose(R, walk.R(), atol=1e-9)
        V = backward_workloads(walk, res.N)
        assert np.all(V[res.N] == 0)
        if mode == "records":
            assert res.N in walk.joint_records()
            assert np.all(R[res.N:] <= R[res.N] + 1e-9)


def test_backward_workloads_recursion_and_origin(mm3):
    walk = make_walk(mm3, Streams.from_seed(15))
    V = backward_workloads(walk, 60)
    sc = walk.scenario
    R = walk.R()
    assert np.all(V >= 0)
    assert np.allclose(V[0], suffix_max(R)[0], atol=1e-12)
    for n in range(60, 0, -1):
        nxt = ra_step(V[n], sc.S_back[n - 1], sc.U_back[n - 1], sc.T_back[n - 1])
        assert np.allclose(nxt, V[n - 1], atol=1e-9)


def test_determinism(mm2):
    a = coalescence(mm2, solve_tilt(mm2), Streams.from_seed(16, 3), mode="records")
    b = coalescence(mm2, solve_tilt(mm2), Streams.from_seed(16, 3), mode="records")
    assert a.N == b.N
    for col in ("T_back", "S_back", "U_back"):
        assert np.array_equal(getattr(a.scenario, col), getattr(b.scenario, col))


def test_first_empty_depth_matches_forward_cycles(mm2):
    depths = []
    for r in range(500):
        walk = make_walk(mm2, Streams.from_seed(17, r))
        depths.append(walk.first_empty())
    exact = mean_ci(depths)
    lengths = forward_ra_cycles(mm2, 4 * 10**6, np.random.default_rng(18))
    brute = emptiness_depth_mean(lengths)
    assert abs(exact[0] - brute[0]) <= exact[1] + brute[1]


def test_trace_dump(tmp_path, mm2):
    led = MilestoneLedger(routing_law(mm2, 19))
    led.extend_patch()
    path = tmp_path / "trace.csv"
    led.write_trace(path)
    lines = path.read_text().splitlines()
    assert lines[0].startswith("k,U,T,y0,y1,event")
    assert len(lines) == led.horizon + 1
