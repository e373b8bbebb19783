import copy

import numpy as np
import pytest

from darnet import _kernels as K_
from darnet.coupling import (Band, CoupledPair, adjacent_start, audit_run, coalescence_time,
                             coupled_arrival, coupled_event, coupled_time_average,
                             domination_run, estimate_contraction, pair_distance)
from darnet.engine import SimConfig, run, summarize
from darnet.errors import InvalidParameterError, RefinedPreconditionError
from darnet.model import ModelParams, SystemState, initial_state

VARIANTS = [("base", ModelParams(0.9, 6, 12)), ("retries", ModelParams(0.9, 6, 12, rho=3)),
            ("refined-retries", ModelParams(0.9, 6, 12, rho=3)),
            ("trunk", ModelParams(0.9, 6, 12, sigma=2))]


def peek(gen, k):
    g = copy.deepcopy(gen)
    return [g.random() for _ in range(k)]


def landing_probs(loads, K, rho):
    n = len(loads)
    adm = np.asarray(loads) < K
    ok = np.outer(adm, adm)
    a = ok.sum() / n**2
    return ok.sum(axis=1) / n**2 * sum((1 - a) ** (r - 1) for r in range(1, rho + 1))


def test_pair_distance():
    x = SystemState([2, 0], 3)
    assert pair_distance(x, x) == 0
    assert pair_distance(x, SystemState([0, 1], 3)) == 3
    assert pair_distance([1, 1, 1], [1, 2, 1]) == 1
    with pytest.raises(InvalidParameterError):
        pair_distance([1, 2], [1, 2, 3])


@pytest.mark.parametrize("variant,params", VARIANTS)
def test_coalescence_is_absorbing(variant, params):
    rng = np.random.default_rng(1)
    for _ in range(10):
        loads = rng.integers(0, params.K + 1, params.n)
        loads[rng.random(params.n) < 0.5] = params.K
        pair = CoupledPair(SystemState(loads, params.K, params.sigma),
                           SystemState(loads, params.K, params.sigma))
        for _ in range(200):
            pair, _ = coupled_event(variant, params, pair, rng)
            assert pair.coalesced


def test_x_full_only_case():
    p = ModelParams(0.5, 3, 4)
    x = SystemState([3, 1, 3, 0], 3)
    y = SystemState([2, 1, 3, 0], 3)
    gen = np.random.default_rng(0)
    saw_heads = False
    for _ in range(200):
        u = peek(gen, 3)
        i, j = int(u[1] * 4), int(u[2] * 4)
        pair, rec = coupled_arrival("base", p, CoupledPair(x, y), 0, gen)
        assert rec.case == 1
        assert pair.y.loads[0] == (3 if u[0] < 0.5 else 2)
        saw_heads |= u[0] < 0.5
        if x.loads[i] < 3 and x.loads[j] < 3:
            assert rec.x_target == i and pair.x.loads[i] == x.loads[i] + 1
        else:
            assert rec.x_target is None and pair.x == x
    assert saw_heads


def test_both_full_shared_pair_admissible_in_y_only():
    p = ModelParams(0.5, 2, 2)
    x = SystemState([2, 2], 2)
    y = SystemState([2, 1], 2)
    gen = np.random.default_rng(4)
    landed = 0
    for _ in range(100):
        u = peek(gen, 2)
        pair, rec = coupled_arrival("base", p, CoupledPair(x, y), 0, gen)
        assert rec.case == 3 and pair.x == x
        if int(u[0] * 2) == 1 and int(u[1] * 2) == 1:
            assert pair.y.loads.tolist() == [2, 2]
            landed += 1
        else:
            assert pair.y == y
    assert landed > 0


def test_refined_marginals_match_single_system():
    # d = 1 with link 3 full in X only; arrivals at a link full in both
    Kc, rho = 2, 3
    p = ModelParams(0.5, Kc, 5, rho=rho)
    x = SystemState([2, 2, 1, 2, 0], Kc)
    y = SystemState([2, 2, 1, 1, 0], Kc)
    gen = np.random.default_rng(7)
    N = 30_000
    hx, hy = np.zeros(5), np.zeros(5)
    for _ in range(N):
        _, rec = coupled_arrival("refined-retries", p, CoupledPair(x, y), 0, gen)
        assert rec.case == 3 and rec.refined
        if rec.x_target is not None:
            hx[rec.x_target] += 1
        if rec.y_target is not None:
            hy[rec.y_target] += 1
    for h, st in ((hx, x), (hy, y)):
        expect = landing_probs(st.loads, Kc, rho)
        se = np.sqrt(expect * (1 - expect) / N)
        assert np.all(np.abs(h / N - expect) <= 4 * se + 1e-12)


def test_refined_single_event_distance():
    p = ModelParams(0.9, 3, 6, rho=2)
    rng = np.random.default_rng(3)
    for _ in range(300):
        y = rng.integers(0, 4, 6)
        y[:3] = 3
        x = y.copy()
        m = int(rng.integers(3, 6))
        if x[m] == 3:
            continue
        x[m] += 1
        pair = CoupledPair(SystemState(x, 3), SystemState(y, 3))
        out, _ = coupled_event("refined-retries", p, pair, rng)
        assert out.distance in (0, 1, 2)


def test_refined_precondition():
    p = ModelParams(0.9, 3, 4, rho=2)
    pair = CoupledPair(SystemState([3, 3, 0, 0], 3), SystemState([3, 3, 2, 0], 3))
    with pytest.raises(RefinedPreconditionError):
        coupled_event("refined-retries", p, pair, np.random.default_rng(0), strict=True)
    coupled_event("refined-retries", p, pair, np.random.default_rng(0))


def test_variant_validation():
    with pytest.raises(InvalidParameterError):
        coupled_event("base", ModelParams(0.9, 3, 4, rho=2),
                      CoupledPair(SystemState([0] * 4, 3), SystemState([0] * 4, 3)),
                      np.random.default_rng(0))
    with pytest.raises(ValueError):
        coupled_event("nope", ModelParams(0.9, 3, 4),
                      CoupledPair(SystemState([0] * 4, 3), SystemState([0] * 4, 3)),
                      np.random.default_rng(0))


@pytest.mark.parametrize("variant,params", VARIANTS)
def test_audit_bounds_from_adjacent_starts(variant, params):
    rng = np.random.default_rng(11)
    for s in range(20):
        y = rng.integers(0, params.K + 1, params.n)
        y[rng.random(params.n) < 0.4] = params.K
        x = y.copy()
        free = np.flatnonzero(x < params.K)
        if free.size == 0:
            continue
        x[rng.choice(free)] += 1
        rep = audit_run(variant, params, SystemState(x, params.K, params.sigma),
                        SystemState(y, params.K, params.sigma), 2000, s)
        assert rep.violations == 0 and rep.coalescence_breaks == 0
        assert rep.max_abs_departure <= 1 and rep.max_abs_by_case[0] == 0


def test_coalesced_start_audit():
    for variant, params in VARIANTS:
        x = initial_state("f-blocking", params, f=0.5)
        rep = audit_run(variant, params, x, x.copy(), 20_000, 1)
        assert rep.coalescence_breaks == 0 and rep.final_distance == 0


def test_coalescence_time_trivial():
    p = ModelParams(0.5, 5, 10)
    x = initial_state("full", p)
    r = coalescence_time("base", p, x, x.copy(), 10, 0)
    assert r.hit and r.time == 0


def test_two_state_coalescence_mean():
    # one link, K = 1: the extra call leaves at rate 1, a heads arrival fills Y at rate lambda
    alpha, N = 0.2, 10_000
    gen = np.random.default_rng(123)
    times = np.empty(N)
    for i in range(N):
        x = np.array([1], dtype=np.int64)
        y = np.array([0], dtype=np.int64)
        times[i] = K_.coupled_run(x, y, 1, 0, 1, K_.VAR_BASE, alpha, 1e6, 10**9, 0, 2, 0, 0, 0, 2, gen)[0]
    s = summarize(times)
    assert abs(s.mean - 1 / (alpha + 1)) <= 3 * s.se


def test_coalescence_grows_slowly_with_n():
    meds = []
    for n in (50, 100, 200, 400):
        p = ModelParams(0.5, 20, n)
        ts = [coalescence_time("base", p, initial_state("empty", p), initial_state("full", p),
                               1e4, s).time for s in range(10)]
        meds.append(np.median(ts))
    assert all(a < b for a, b in zip(meds, meds[1:]))
    assert meds[-1] / meds[0] <= 3


@pytest.mark.parametrize("alpha", [0.5, 1.2])
def test_coupled_x_marginal_matches_single_run(alpha):
    p = ModelParams(alpha, 20, 100)
    x, y = initial_state("empty", p), initial_state("full", p)
    coupled = summarize([coupled_time_average("base", p, x, y, 60, s)[0] for s in range(6)])
    single = summarize([run(p, x, SimConfig(horizon=60, seed=50 + s)).avg_f for s in range(6)])
    assert coupled.ci_low <= single.ci_high + 1e-12 and single.ci_low <= coupled.ci_high + 1e-12


# -- domination ------------------------------------------------------------------------

def test_band_validation():
    with pytest.raises(InvalidParameterError):
        Band("low", 0.7)
    with pytest.raises(InvalidParameterError):
        Band("high", 0.2)
    with pytest.raises(InvalidParameterError):
        Band("wedge", 0.2)


def test_sandwich_holds():
    p = ModelParams(0.8, 15, 50)
    for seed in range(5):
        rep = domination_run(p, Band("all"), SimConfig(horizon=100, seed=seed))
        assert rep.ok and rep.exit_time is None
        f = rep.samples
        assert np.all(f[:, 1] <= f[:, 2]) and np.all(f[:, 2] <= f[:, 3])


def test_sandwich_from_equal_start():
    p = ModelParams(0.8, 15, 50)
    init = initial_state("f-blocking", p, f=0.3)
    rep = domination_run(p, Band("all"), SimConfig(horizon=1, seed=0), init=init)
    assert rep.samples[0, 1] == rep.samples[0, 2] == rep.samples[0, 3] == 0.3


@pytest.mark.parametrize("band,kind", [(Band("middle", 0.1), "f-blocking"), (Band("low", 0.1), "empty"),
                                       (Band("high", 0.6), "full")])
def test_lemma_bands(band, kind):
    p = ModelParams(0.8, 15, 50)
    for seed in range(10):
        init = initial_state(kind, p, f=0.3) if kind == "f-blocking" else initial_state(kind, p)
        rep = domination_run(p, band, SimConfig(horizon=100, seed=seed), init=init)
        assert rep.ok


def test_assertions_stop_at_exit():
    p = ModelParams(1.3, 15, 50)
    rep = domination_run(p, Band("low", 0.1), SimConfig(horizon=50, seed=2))
    assert rep.exit_time is not None and 0 < rep.exit_time < 50
    assert rep.ok
    i = np.searchsorted(rep.samples[:, 0], rep.exit_time)
    assert np.all(rep.samples[:i, 2] <= 0.1 + 1e-12)


# -- contraction -------------------------------------------------------------------------

def test_adjacent_start():
    p = ModelParams(0.9, 10, 30)
    x, y = adjacent_start(p, "empty", 5.0, 3)
    assert pair_distance(x, y) == 1 and np.all(x.loads >= y.loads)


def test_high_regime_w_is_one():
    p = ModelParams(1.3, 20, 100)
    est = estimate_contraction("base", p, "high", 30, 1, burn_in=10)
    assert est.W == 1 and est.replicas == 30
    assert set(est.to_dict()) == {"gamma0_hat", "ci_low", "ci_high", "W", "tau_q50", "tau_q95", "replicas"}


def test_low_regime_w_at_most_ten():
    p = ModelParams(0.9, 10, 50)
    est = estimate_contraction("base", p, "low", 40, 2, burn_in=10)
    assert 1 <= est.W <= 10
    assert 0 <= est.gamma0_hat
