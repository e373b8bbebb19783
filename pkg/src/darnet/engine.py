"""Event-driven simulation of single systems, hitting times and replication.

A run draws one exponential holding time for the aggregate rate
``2 lambda n + total load`` and one uniform that both picks the event type
and locates its link (departures through a Fenwick tree over the loads).
"""

from __future__ import annotations

import hashlib
import io
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Any, Callable, List, Optional, Sequence, Union

import numpy as np
from scipy import stats as _st

from . import _kernels as _k
from .analytics import EtParams
from .errors import EventCapExceeded, InvalidParameterError, ReplicaError, WrongVariantError
from .model import ModelParams, SystemState

DEFAULT_EVENT_CAP = 10**9
CSV_HEADER = "time,f,g,mean_load,lost,accepted"


@dataclass(frozen=True)
class SimConfig:
    horizon: float
    sample_interval: float = 1.0
    burn_in: float = 0.0
    seed: int = 0
    replicas: int = 1
    event_cap: int = DEFAULT_EVENT_CAP

    def __post_init__(self):
        if not self.horizon > 0:
            raise InvalidParameterError("horizon must be positive")
        if not self.sample_interval > 0:
            raise InvalidParameterError("sample_interval must be positive")
        if not 0 <= self.burn_in < self.horizon:
            raise InvalidParameterError("burn_in must lie in [0, horizon)")
        if self.replicas < 1:
            raise InvalidParameterError("replicas must be >= 1")
        if self.event_cap < 1:
            raise InvalidParameterError("event_cap must be >= 1")

    def with_seed(self, seed: int) -> "SimConfig":
        return SimConfig(self.horizon, self.sample_interval, self.burn_in, seed,
                         self.replicas, self.event_cap)


@dataclass(frozen=True)
class ErlangParams:
    """A product link with constant arrival intensity ``beta``."""

    beta: float
    K: int

    def __post_init__(self):
        if not self.beta > 0 or self.K < 1:
            raise InvalidParameterError("need beta > 0 and K >= 1")


@dataclass
class Trajectory:
    time: np.ndarray
    f: np.ndarray
    g: np.ndarray
    mean_load: np.ndarray
    lost: np.ndarray
    accepted: np.ndarray
    final_loads: np.ndarray
    initial_total: int
    events: int
    arrivals: int
    n_accepted: int
    n_lost: int
    departed: int
    end_time: float
    # exact integrals over [burn_in, horizon]
    avg_f: float
    avg_g: float
    avg_mean_load: float
    min_f: float
    max_f: float
    capped: bool = False

    @property
    def final_total(self) -> int:
        return int(self.final_loads.sum())

    def digest(self) -> str:
        """SHA-256 of the terminal load vector."""
        return hashlib.sha256(np.ascontiguousarray(self.final_loads, dtype="<i8").tobytes()).hexdigest()

    def rows(self):
        for i in range(self.time.shape[0]):
            yield (self.time[i], self.f[i], self.g[i], self.mean_load[i],
                   int(self.lost[i]), int(self.accepted[i]))

    def to_csv(self, comments: Sequence[str] = ()) -> str:
        buf = io.StringIO(newline="")
        for c in comments:
            buf.write(f"# {c}\n")
        buf.write(CSV_HEADER + "\n")
        for t, f, g, m, lost, acc in self.rows():
            buf.write(f"{fmt(t)},{fmt(f)},{fmt(g)},{fmt(m)},{lost},{acc}\n")
        return buf.getvalue()


def fmt(x: float) -> str:
    """Twelve significant digits, ``.`` decimal."""
    return format(float(x), ".12g")


@dataclass(frozen=True)
class HittingResult:
    hit: bool
    time: float
    events: int


@dataclass(frozen=True)
class Threshold:
    """Closed half-line condition ``f <= value`` or ``f >= value`` (or on ``g``)."""

    which: str
    op: str
    value: float

    def __post_init__(self):
        if self.which not in ("f", "g") or self.op not in ("<=", ">="):
            raise InvalidParameterError(f"bad threshold {self}")

    def count_bound(self, n: int) -> int:
        if self.op == "<=":
            return int(math.floor(self.value * n + 1e-9))
        return int(math.ceil(self.value * n - 1e-9))

    def holds(self, frac: float) -> bool:
        return frac <= self.value if self.op == "<=" else frac >= self.value


def _check_state(params: ModelParams, init: SystemState) -> None:
    if init.n != params.n or init.K != params.K:
        raise InvalidParameterError("initial state does not match params")


def _simulate(loads, K, sigma, rho, alpha, mode, up_lo, up_band, config: SimConfig,
              stop: Optional[Threshold] = None):
    gen = np.random.default_rng(config.seed)
    work = np.array(loads, dtype=np.int64)
    if stop is None:
        sw, sd, sc = -1, 0, 0
    else:
        sw = 0 if stop.which == "f" else 1
        sd = 0 if stop.op == "<=" else 1
        sc = stop.count_bound(work.shape[0])
    out = _k.simulate(work, int(K), int(sigma), int(rho), float(alpha), mode, float(up_lo),
                      float(up_band), float(config.horizon), float(config.sample_interval),
                      float(config.burn_in), int(config.event_cap), sw, sd, sc, gen)
    return work, out


def _trajectory(init_total, work, out) -> Trajectory:
    s_time, s_f, s_g, s_mean, s_lost, s_acc, stats, tallies, t_end, _hit = out
    span = stats[7]
    avg = stats[:3] / span if span > 0 else np.full(3, np.nan)
    return Trajectory(
        time=s_time.copy(), f=s_f.copy(), g=s_g.copy(), mean_load=s_mean.copy(),
        lost=s_lost.copy(), accepted=s_acc.copy(), final_loads=work,
        initial_total=int(init_total), events=int(tallies[0]), arrivals=int(tallies[1]),
        n_accepted=int(tallies[2]), n_lost=int(tallies[3]), departed=int(tallies[4]),
        end_time=float(t_end), avg_f=float(avg[0]), avg_g=float(avg[1]),
        avg_mean_load=float(avg[2]), min_f=float(stats[3]), max_f=float(stats[4]),
        capped=bool(tallies[5]),
    )


def _finish(traj: Trajectory) -> Trajectory:
    if traj.capped:
        raise EventCapExceeded(f"event cap hit at t={traj.end_time:.6g}", partial=traj)
    return traj


def run(params: ModelParams, init: SystemState, config: SimConfig) -> Trajectory:
    """Simulate the DAR variant selected by ``params`` from ``init``."""
    _check_state(params, init)
    work, out = _simulate(init.loads, params.K, params.sigma, params.rho, params.alpha,
                          _k.MODE_DAR, 0.0, 0.0, config)
    return _finish(_trajectory(init.total, work, out))


def run_discrete(params: ModelParams, init: SystemState, config: SimConfig) -> Trajectory:
    """The discretised chain clocked by a Poisson process of rate ``(2 alpha + 1) K n``."""
    _check_state(params, init)
    if params.variant != "base":
        raise WrongVariantError("the discretised chain exists for the base variant only")
    work, out = _simulate(init.loads, params.K, 0, 1, params.alpha, _k.MODE_DISCRETE,
                          0.0, 0.0, config)
    return _finish(_trajectory(init.total, work, out))


def run_product(link: Union[ErlangParams, EtParams], n: int, init, config: SimConfig) -> Trajectory:
    """``n`` independent Erlang or trunk-reserved Erlang links."""
    if isinstance(link, ErlangParams):
        K, sigma, up_lo, up_band = link.K, 0, link.beta * link.K, link.beta * link.K
    elif isinstance(link, EtParams):
        K, sigma = link.K, link.sigma
        up_lo, up_band = link.beta * K, link.alpha * K
    else:
        raise InvalidParameterError("link must be ErlangParams or EtParams")
    loads = init.loads if isinstance(init, SystemState) else np.asarray(init, dtype=np.int64)
    if loads.shape[0] != n or loads.min(initial=0) < 0 or loads.max(initial=0) > K:
        raise InvalidParameterError("initial loads do not match the product system")
    work, out = _simulate(loads, K, sigma, 1, 1.0, _k.MODE_PRODUCT, up_lo, up_band, config)
    return _finish(_trajectory(int(np.sum(loads)), work, out))


def hitting_time(params: ModelParams, init: SystemState, predicate: Threshold, cap: float,
                 seed: int, event_cap: int = DEFAULT_EVENT_CAP) -> HittingResult:
    """First time ``predicate`` holds along a run from ``init``, or ``cap``."""
    _check_state(params, init)
    if not cap > 0:
        raise InvalidParameterError("cap must be positive")
    cfg = SimConfig(horizon=cap, sample_interval=cap, seed=seed, event_cap=event_cap)
    work, out = _simulate(init.loads, params.K, params.sigma, params.rho, params.alpha,
                          _k.MODE_DAR, 0.0, 0.0, cfg, stop=predicate)
    tallies, t_end, hit = out[7], out[8], out[9]
    if tallies[5]:
        raise EventCapExceeded("event cap hit during hitting-time run",
                               partial=HittingResult(False, float(t_end), int(tallies[0])))
    return HittingResult(bool(hit), float(t_end) if hit else float(cap), int(tallies[0]))


# -- statistics ------------------------------------------------------------------

@dataclass(frozen=True)
class Summary:
    n: int
    mean: float
    sd: float
    se: float
    ci_low: float
    ci_high: float
    q05: float
    q50: float
    q95: float

    def to_dict(self) -> dict:
        return {k: getattr(self, k) for k in self.__dataclass_fields__}


def summarize(values, level: float = 0.95) -> Summary:
    """Mean with a normal-approximation CI plus quantiles."""
    v = np.asarray(values, dtype=float)
    if v.size == 0:
        raise InvalidParameterError("no values to summarize")
    mean = float(v.mean())
    sd = float(v.std(ddof=1)) if v.size > 1 else 0.0
    se = sd / math.sqrt(v.size)
    z = float(_st.norm.ppf(0.5 + level / 2))
    q = np.quantile(v, [0.05, 0.5, 0.95])
    return Summary(int(v.size), mean, sd, se, mean - z * se, mean + z * se,
                   float(q[0]), float(q[1]), float(q[2]))


def batch_means_se(samples, n_batches: int = 20) -> float:
    """Standard error of a time average from non-overlapping batch means."""
    x = np.asarray(samples, dtype=float)
    b = x.shape[0] // n_batches
    if b < 1:
        raise InvalidParameterError("too few samples for batch means")
    means = x[: b * n_batches].reshape(n_batches, b).mean(axis=1)
    return float(means.std(ddof=1) / math.sqrt(n_batches))


# -- replication -----------------------------------------------------------------

def worker_count() -> int:
    """Parallelism cap: ``DARNET_THREADS`` if set, else the CPU count."""
    env = os.environ.get("DARNET_THREADS")
    if env:
        try:
            return max(1, int(env))
        except ValueError:
            raise InvalidParameterError(f"DARNET_THREADS must be an integer, got {env!r}")
    return os.cpu_count() or 1


def replica_seed(base_seed: int, index: int) -> int:
    """Seed of replica ``index``: ``base_seed + index``."""
    return int(base_seed) + int(index)


@dataclass
class ReplicaSet:
    seeds: List[int]
    results: List[Any] = field(default_factory=list)

    def summary(self, key: Callable[[Any], float]) -> Summary:
        return summarize([key(r) for r in self.results])


def _call(task, seed):
    return task(seed)


def replicate(task: Callable[[int], Any], replicas: int, base_seed: int,
              workers: Optional[int] = None) -> ReplicaSet:
    """Run ``task(seed)`` for each replica seed; results come back in index order.

    ``task`` must be picklable when more than one worker is used.
    """
    if replicas < 1:
        raise InvalidParameterError("replicas must be >= 1")
    seeds = [replica_seed(base_seed, i) for i in range(replicas)]
    workers = min(worker_count() if workers is None else workers, replicas)
    results: List[Any] = [None] * replicas
    if workers <= 1:
        for i, s in enumerate(seeds):
            try:
                results[i] = task(s)
            except Exception as exc:
                raise ReplicaError(i, exc) from exc
    else:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            futures = [pool.submit(_call, task, s) for s in seeds]
            for i, fut in enumerate(futures):
                try:
                    results[i] = fut.result()
                except Exception as exc:
                    raise ReplicaError(i, exc) from exc
    return ReplicaSet(seeds, results)
