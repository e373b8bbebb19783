import math

import numpy as np
import pytest

from darnet.analytics import EtParams, erlang_b, erlang_stationary, et_stationary
from darnet.engine import (ErlangParams, SimConfig, Threshold, batch_means_se, hitting_time,
                           replicate, run, run_discrete, run_product, summarize)
from darnet.errors import EventCapExceeded, InvalidParameterError, ReplicaError
from darnet.model import ModelParams, SystemState, initial_state


def test_config_validation():
    with pytest.raises(InvalidParameterError):
        SimConfig(horizon=0)
    with pytest.raises(InvalidParameterError):
        SimConfig(horizon=10, burn_in=10)
    with pytest.raises(InvalidParameterError):
        SimConfig(horizon=10, sample_interval=0)


def test_short_horizon_keeps_initial_sample_only():
    p = ModelParams(0.5, 5, 4)
    tr = run(p, initial_state("full", p), SimConfig(horizon=0.5, sample_interval=1.0))
    assert tr.time.tolist() == [0.0]
    assert tr.f.tolist() == [1.0] and tr.mean_load.tolist() == [5.0]


def test_trajectory_invariants_and_conservation():
    p = ModelParams(0.9, 8, 30)
    init = initial_state("f-blocking", p, f=0.3)
    tr = run(p, init, SimConfig(horizon=50, sample_interval=0.5, seed=4))
    assert np.all(np.diff(tr.time) > 0) and tr.time[-1] <= 50
    assert np.all((tr.f >= 0) & (tr.f <= tr.g) & (tr.g <= 1))
    assert tr.final_total == tr.initial_total + tr.n_accepted - tr.departed
    assert np.all(np.diff(tr.accepted) >= 0) and np.all(np.diff(tr.lost) >= 0)
    assert tr.time.shape[0] == 101


def test_determinism():
    p = ModelParams(1.1, 10, 40, rho=2)
    cfg = SimConfig(horizon=30, seed=9)
    a = run(p, initial_state("empty", p), cfg)
    b = run(p, initial_state("empty", p), cfg)
    assert a.digest() == b.digest() and a.to_csv() == b.to_csv()
    c = run(p, initial_state("empty", p), cfg.with_seed(10))
    assert c.digest() != a.digest()


def test_event_rate():
    p = ModelParams(0.7, 10, 20)
    h = 200.0
    tr = run(p, initial_state("empty", p), SimConfig(horizon=h, seed=2))
    expect = 2 * p.lam * p.n * h
    assert abs(tr.arrivals - expect) <= 3 * math.sqrt(expect)


def test_event_cap():
    p = ModelParams(0.7, 10, 20)
    with pytest.raises(EventCapExceeded) as info:
        run(p, initial_state("empty", p), SimConfig(horizon=100, event_cap=500))
    assert info.value.partial.capped and info.value.partial.events == 500


def test_csv_format():
    p = ModelParams(0.5, 3, 2)
    tr = run(p, initial_state("empty", p), SimConfig(horizon=2, sample_interval=1 / 3, seed=1))
    text = tr.to_csv(["config: {}"])
    lines = text.split("\n")
    assert lines[0] == "# config: {}" and lines[1] == "time,f,g,mean_load,lost,accepted"
    assert "\r" not in text and lines[3].startswith("0.333333333333,")


def test_single_link_erlang_full_fraction():
    link = ErlangParams(0.8, 10)
    tr = run_product(link, 1, np.zeros(1, dtype=np.int64),
                     SimConfig(horizon=5000, sample_interval=1.0, burn_in=50, seed=3))
    se = batch_means_se(tr.f[50:])
    assert abs(tr.avg_f - erlang_b(0.8, 10)) <= 3 * se


def test_single_link_occupancy_law():
    # n = 1 reduces to one Erlang link: compare the time-in-state law of the load
    link = ErlangParams(0.6, 4)
    tr = run_product(link, 1, np.zeros(1, dtype=np.int64),
                     SimConfig(horizon=20000, sample_interval=0.5, burn_in=10, seed=8))
    loads = np.rint(tr.mean_load[20:]).astype(int)
    freq = np.bincount(loads, minlength=5) / loads.size
    assert np.allclose(freq, erlang_stationary(0.6, 4).probs, atol=0.02)


def _product_avg(link, n, seed, horizon=2000.0):
    tr = run_product(link, n, np.zeros(n, dtype=np.int64),
                     SimConfig(horizon=horizon, burn_in=50, seed=seed))
    return tr.avg_f


def test_product_erlang_many_links():
    vals = [_product_avg(ErlangParams(1.5, 20), 200, s, 300.0) for s in range(5)]
    s = summarize(vals)
    assert abs(s.mean - erlang_b(1.5, 20)) <= 3 * s.se


def test_product_et_mass_at_capacity():
    link = EtParams(0.5, 2.0, 3, 20)
    vals = [_product_avg(link, 100, s, 500.0) for s in range(5)]
    s = summarize(vals)
    assert abs(s.mean - et_stationary(link).full) <= 3 * s.se


def test_low_blocking_regime():
    p = ModelParams(0.5, 20, 100)
    tr = run(p, initial_state("empty", p), SimConfig(horizon=150, burn_in=50, seed=0))
    assert tr.avg_f <= 0.01


def test_discrete_chain_matches_continuous():
    p = ModelParams(0.8, 10, 50)
    cfg = SimConfig(horizon=400, burn_in=20)
    cont = summarize([run(p, initial_state("empty", p), cfg.with_seed(s)).avg_f for s in range(6)])
    disc = summarize([run_discrete(p, initial_state("empty", p), cfg.with_seed(100 + s)).avg_f
                      for s in range(6)])
    assert cont.ci_low <= disc.ci_high and disc.ci_low <= cont.ci_high


def test_hitting_trivial_and_validation():
    p = ModelParams(0.96, 10, 20)
    r = hitting_time(p, initial_state("full", p), Threshold("f", ">=", 0.5), 10, 1)
    assert r.hit and r.time == 0 and r.events == 0
    with pytest.raises(InvalidParameterError):
        Threshold("h", "<=", 0.1)


def test_hitting_cap_semantics():
    p = ModelParams(0.3, 10, 20)
    r = hitting_time(p, initial_state("empty", p), Threshold("f", ">=", 0.9), 5, 1)
    assert not r.hit and r.time == 5


@pytest.mark.slow
def test_high_blocking_persists_at_desk_scale():
    # calibrated: at K = 40 the full-start path stays near f ~ 0.30 and never reaches 0.10
    p = ModelParams(0.96, 40, 200)
    hits = [hitting_time(p, initial_state("full", p), Threshold("f", "<=", 0.10), 200, s).hit
            for s in range(20)]
    assert sum(hits) <= 1


def test_empty_start_climbs_at_k40():
    # the finite-K fixed point is unique (f ~ 0.30), so an empty start rises quickly
    p = ModelParams(0.96, 40, 200)
    r = hitting_time(p, initial_state("empty", p), Threshold("f", ">=", 0.15), 50, 0)
    assert r.hit and r.time < 10


def _avg_task(seed, params, kind):
    return run(params, initial_state(kind, params), SimConfig(horizon=20, seed=seed)).avg_f


def _failing_task(seed):
    if seed == 12:
        raise ValueError("boom")
    return seed


def test_replicate_contract():
    from functools import partial
    p = ModelParams(0.8, 8, 20)
    task = partial(_avg_task, params=p, kind="empty")
    one = replicate(task, 1, 5)
    assert one.results == [task(5)] and one.seeds == [5]
    a = replicate(task, 4, 7)
    b = replicate(task, 4, 7)
    assert a.results == b.results and a.seeds == [7, 8, 9, 10]
    par = replicate(task, 4, 7, workers=2)
    assert par.results == a.results
    with pytest.raises(ReplicaError) as info:
        replicate(_failing_task, 5, 10)
    assert info.value.index == 2


def test_summary_and_batch_means():
    s = summarize([1.0, 2.0, 3.0, 4.0])
    assert s.mean == 2.5 and s.q50 == 2.5
    assert s.ci_low < 2.5 < s.ci_high
    assert batch_means_se(np.ones(100), 10) == 0
    with pytest.raises(InvalidParameterError):
        batch_means_se([1.0], 20)


@pytest.mark.slow
def test_retries_hysteresis_pair():
    # bistability is visible at desk scale in the retries variant (three fixed points at K = 100)
    from functools import partial
    p = ModelParams(0.84, 100, 200, rho=3)
    lo = replicate(partial(_long_avg, params=p, kind="empty"), 6, 0)
    hi = replicate(partial(_long_avg, params=p, kind="full"), 6, 0)
    assert max(lo.results) + 0.10 <= min(hi.results)


def _long_avg(seed, params, kind):
    return run(params, initial_state(kind, params), SimConfig(horizon=100, burn_in=20, seed=seed)).avg_f
