import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from exactqueue.dcfp import kw_run, sample_stationary_kw
from exactqueue.extensions import harris_sample_c2
from exactqueue.harness.oracles import chi_square_two_sample
from exactqueue.rng import Streams
from exactqueue.sandwich import BoundPair, bound_step, drain, run_bounds, sample_stationary_sandwich


def test_bound_step_example():
    pair = bound_step(BoundPair([0.0, 3.0], [0.0, 0.0], 0.0, 16), 1.0, 2.0)
    assert pair.upper.tolist() == [0.0, 1.0]
    assert pair.lower.tolist() == [0.0, 0.0]
    assert pair.t == 2.0


def test_bound_pair_rejects_crossed_bounds():
    with pytest.raises(ValueError):
        BoundPair([0.0, 1.0], [0.0, 2.0], 0.0, 16)


def test_drain():
    pair = drain(BoundPair([0.5, 3.0], [0.0, 1.0], 0.0, 16), 1.0)
    assert pair.upper.tolist() == [0.0, 2.0]
    assert pair.lower.tolist() == [0.0, 0.0]


steps = st.lists(st.tuples(st.floats(0, 5), st.floats(0, 5)), max_size=40)


@given(st.lists(st.floats(0, 10), min_size=1, max_size=4), steps)
def test_bounds_stay_ordered(start, moves):
    pair = BoundPair(start, np.zeros(len(start)), 0.0, 16)
    for S, T in moves:
        pair = bound_step(pair, S, T)
        assert np.all(pair.lower <= pair.upper)
        assert np.all(pair.lower >= 0)


def _random_run(rng, c, kappa, load):
    gaps = rng.exponential(1.0, kappa)
    services = rng.exponential(load * c, kappa)
    times = np.concatenate([[0.0], np.cumsum(gaps[:-1])]) - gaps.sum()
    V = rng.exponential(5.0, c)
    return V, times, gaps, services


def test_run_bounds_coalescence_state_has_an_idle_server(rng):
    seen = 0
    for _ in range(300):
        c = int(rng.integers(1, 5))
        V, times, gaps, services = _random_run(rng, c, 40, 0.8)
        run = run_bounds(V, times, gaps, services)
        assert np.all(run.lower <= run.upper)
        if not run.coalesced:
            continue
        seen += 1
        assert run.state.min() == 0.0
        # the state at tau determines everything after it
        k0 = 40 - run.start_index
        first_gap = times[k0] - run.tau if k0 < 40 else -run.tau
        W = np.maximum(run.state - first_gap, 0.0)
        W = kw_run(W, services[k0:], gaps[k0:])
        assert np.allclose(W, run.upper[-1], atol=1e-9)
        assert np.allclose(W, run.lower[-1], atol=1e-9)
    assert seen > 50


def test_funnel_across_doublings(mm2):
    deeper = 0
    for r in range(200):
        res = sample_stationary_sandwich(mm2, Streams.from_seed(40, r), kappa0=4, keep_history=True)
        hist = res.history
        for (k1, up1, lo1), (k2, up2, lo2) in zip(hist[:-1], hist[1:]):
            assert k2 == 2 * k1
            deeper += 1
            # the last k1 + 1 rows of the deeper run cover the same customers
            assert np.all(up2[-(k1 + 1):] <= up1 + 1e-9)
            assert np.all(lo2[-(k1 + 1):] >= lo1 - 1e-9)
        assert res.kappa_final == hist[-1][0]
    assert deeper > 20


def test_reuses_randomness_across_doublings(mm2):
    for r in range(30):
        a = sample_stationary_sandwich(mm2, Streams.from_seed(41, r), kappa0=2)
        b = sample_stationary_sandwich(mm2, Streams.from_seed(41, r), kappa0=a.kappa_final)
        c = sample_stationary_sandwich(mm2, Streams.from_seed(41, r), kappa0=4 * a.kappa_final)
        assert b.kappa_final == a.kappa_final
        assert np.array_equal(a.W0, b.W0)
        assert np.allclose(a.W0, c.W0, atol=1e-9)
        assert a.Q0 == b.Q0 == c.Q0


def test_same_stationary_version_as_empty_start(mm2):
    for r in range(100):
        s = sample_stationary_sandwich(mm2, Streams.from_seed(42, r))
        W, rec, state = sample_stationary_kw(mm2, Streams.from_seed(42, r))
        assert np.allclose(s.W0, W, atol=1e-9)
        assert s.Q0 == state.Q0 and s.L0 == state.L0


def test_distribution_matches_empty_start_sampler(mm2):
    q_s = [sample_stationary_sandwich(mm2, Streams.from_seed(43, r)).Q0 for r in range(2000)]
    q_e = [sample_stationary_kw(mm2, Streams.from_seed(44, r))[2].Q0 for r in range(2000)]
    assert chi_square_two_sample(q_s, q_e)[1] > 0.01


def test_works_without_empty_states(never_empty2):
    for r in range(20):
        s = sample_stationary_sandwich(never_empty2, Streams.from_seed(45, r))
        W, rec, state = harris_sample_c2(never_empty2, rng=Streams.from_seed(45, r))
        assert np.allclose(s.W0, W, atol=1e-9)
        assert s.Q0 == state.Q0


def test_record_fields(mm2):
    res = sample_stationary_sandwich(mm2, seed=46)
    rec = res.record.to_json()
    assert rec["algorithm"] == "sandwich"
    assert rec["kappa_final"] == res.kappa_final and rec["coalesced"]
    assert res.kappa_final >= 16 and res.kappa_final & (res.kappa_final - 1) == 0
