"""Joint evolution of two or three systems.

Coupled pairs share arrival streams and pair up departures link by link:
``min(x_j, y_j)`` calls on link ``j`` leave both systems together, the extra
calls leave only the system holding them.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from functools import partial
from typing import List, Optional

import numpy as np

from . import _kernels as _k
from .analytics import effective_intensity, varphi_rho
from .engine import (DEFAULT_EVENT_CAP, HittingResult, SimConfig, replicate, run,
                     summarize)
from .errors import (DominationViolation, EventCapExceeded, InvalidParameterError,
                     RefinedPreconditionError)
from .model import ModelParams, SystemState, initial_state


class CouplingVariant(str, enum.Enum):
    BASE = "base"
    RETRIES = "retries"
    REFINED = "refined-retries"
    TRUNK = "trunk"

    @property
    def code(self) -> int:
        return {"base": _k.VAR_BASE, "retries": _k.VAR_RETRIES,
                "refined-retries": _k.VAR_REFINED, "trunk": _k.VAR_TRUNK}[self.value]


def _variant(variant, params: ModelParams) -> CouplingVariant:
    v = CouplingVariant(variant)
    if v is CouplingVariant.BASE and params.variant != "base":
        raise InvalidParameterError("base coupling needs rho = 1 and sigma = 0")
    if v in (CouplingVariant.RETRIES, CouplingVariant.REFINED) and params.sigma > 0:
        raise InvalidParameterError("retries couplings need sigma = 0")
    if v is CouplingVariant.TRUNK and params.rho > 1:
        raise InvalidParameterError("trunk coupling needs rho = 1")
    return v


def pair_distance(x, y) -> int:
    """Number of single-call moves separating two states."""
    a = x.loads if isinstance(x, SystemState) else np.asarray(x)
    b = y.loads if isinstance(y, SystemState) else np.asarray(y)
    if a.shape != b.shape:
        raise InvalidParameterError("states have different dimensions")
    return int(np.abs(a.astype(np.int64) - b.astype(np.int64)).sum())


class CoupledPair:
    """Two states of the same network evolved jointly."""

    __slots__ = ("x", "y", "_was_coalesced")

    def __init__(self, x: SystemState, y: SystemState):
        if x.n != y.n or x.K != y.K or x.sigma != y.sigma:
            raise InvalidParameterError("paired states must share n, K and sigma")
        self.x = x
        self.y = y
        self._was_coalesced = self.coalesced

    @property
    def distance(self) -> int:
        return pair_distance(self.x, self.y)

    @property
    def coalesced(self) -> bool:
        return bool(np.array_equal(self.x.loads, self.y.loads))

    def copy(self) -> "CoupledPair":
        return CoupledPair(self.x.copy(), self.y.copy())


@dataclass(frozen=True)
class CoupledRecord:
    """What one joint event did.

    For arrivals ``case`` is 0 (target full in neither), 1 (X only), 2 (Y only)
    or 3 (both) and ``x_target``/``y_target`` name the link that gained a call
    (``None`` if none). For departures ``case`` is ``None`` and the targets are
    ``link`` when that system lost a call.
    """

    arrival: bool
    link: int
    case: Optional[int]
    x_target: Optional[int]
    y_target: Optional[int]
    refined: bool = False


def _kernel_args(pair: CoupledPair, params: ModelParams):
    x, y = pair.x, pair.y
    tm = _k.fen_build(np.maximum(x.loads, y.loads))
    diff = np.abs(x.loads - y.loads)
    dist = np.array([diff.sum(), (np.arange(x.n) * diff).sum()], dtype=np.int64)
    return tm, dist


def _precheck(v: CouplingVariant, pair: CoupledPair, strict: bool):
    if v is CouplingVariant.REFINED and strict and pair.distance > 1:
        raise RefinedPreconditionError(
            f"refined coupling needs distance <= 1, got {pair.distance}")


def _rho_for(v: CouplingVariant, params: ModelParams) -> int:
    return 1 if v in (CouplingVariant.BASE, CouplingVariant.TRUNK) else params.rho


def _opt(i) -> Optional[int]:
    return None if i < 0 else int(i)


def coupled_arrival(variant, params: ModelParams, pair: CoupledPair, link: int,
                    gen: np.random.Generator, *, inplace: bool = False, strict: bool = False):
    """Offer one call on ``link`` to both systems.

    Draw order: a coin when the target is non-full in some system, then the
    reroute pairs (see the kernel docstring for the per-case order).
    """
    v = _variant(variant, params)
    _precheck(v, pair, strict)
    if not 0 <= link < params.n:
        raise InvalidParameterError(f"link {link} out of range")
    p = pair if inplace else pair.copy()
    tm, dist = _kernel_args(p, params)
    info = np.zeros(8, dtype=np.int64)
    _k.coupled_arrival(p.x.loads, p.y.loads, tm, p.x.counts, p.y.counts, dist, params.K,
                       params.band_lo, params.K + 1, _rho_for(v, params), v.code, int(link),
                       gen, info)
    _assert_absorbing(p)
    return p, CoupledRecord(True, int(link), int(info[0]), _opt(info[1]), _opt(info[2]),
                            bool(info[7]))


def coupled_event(variant, params: ModelParams, pair: CoupledPair, gen: np.random.Generator,
                  *, inplace: bool = False, strict: bool = False):
    """One joint event of the pair's Markov chain (arrival or departure).

    Draws one uniform to select the event, then the arrival's draws if any.
    """
    v = _variant(variant, params)
    _precheck(v, pair, strict)
    p = pair if inplace else pair.copy()
    tm, dist = _kernel_args(p, params)
    info = np.zeros(8, dtype=np.int64)
    is_arr, k = _k.coupled_step(p.x.loads, p.y.loads, tm, p.x.counts, p.y.counts, dist,
                                params.K, params.band_lo, params.K + 1, _rho_for(v, params),
                                v.code, params.lam, gen, info)
    _assert_absorbing(p)
    if is_arr:
        rec = CoupledRecord(True, int(k), int(info[0]), _opt(info[1]), _opt(info[2]),
                            bool(info[7]))
    else:
        rec = CoupledRecord(False, int(k), None, int(k) if info[1] == -2 else None,
                            int(k) if info[2] == -2 else None)
    return p, rec


def _assert_absorbing(p: CoupledPair) -> None:
    now = p.coalesced
    if p._was_coalesced and not now:
        raise AssertionError("coupled pair left the diagonal")
    p._was_coalesced = now


def coalescence_time(variant, params: ModelParams, x: SystemState, y: SystemState,
                     cap: float, seed: int, event_cap: int = DEFAULT_EVENT_CAP) -> HittingResult:
    """First time the coupled pair started at ``(x, y)`` meets, or ``cap``."""
    v = _variant(variant, params)
    pair = CoupledPair(x.copy(), y.copy())
    gen = np.random.default_rng(seed)
    t, events, reason, _d, _w, _g, _a, _f = _k.coupled_run(
        pair.x.loads, pair.y.loads, params.K, params.sigma, _rho_for(v, params), v.code,
        params.alpha, float(cap), int(event_cap), 0, params.K + 1, 0, 0, 0, params.K + 1, gen)
    if reason == _k.STOP_COALESCED:
        return HittingResult(True, float(t), int(events))
    if events >= event_cap:
        raise EventCapExceeded("event cap hit before coalescence",
                               partial=HittingResult(False, float(t), int(events)))
    return HittingResult(False, float(cap), int(events))


@dataclass(frozen=True)
class AuditReport:
    events: int
    violations: int
    coalescence_breaks: int
    max_abs_departure: int
    max_abs_by_case: tuple
    max_up_by_case: tuple
    refined_fallbacks: int
    final_distance: int


def audit_run(variant, params: ModelParams, x: SystemState, y: SystemState, events: int,
              seed: int) -> AuditReport:
    """Run ``events`` joint events, checking the per-case distance bounds.

    Per event: an arrival in case 0 leaves the distance unchanged; cases 1 and 2
    change it by -2..+1; case 3 by at most 1 (2 under retries); a departure by
    at most 1.
    """
    v = _variant(variant, params)
    xs, ys = x.loads.copy(), y.loads.copy()
    gen = np.random.default_rng(seed)
    _t, _e, _r, d, _w, _g, a, _f = _k.coupled_run(
        xs, ys, params.K, params.sigma, _rho_for(v, params), v.code, params.alpha, np.inf,
        int(events), 1, params.K + 1, 0, 0, 0, params.K + 1, gen)
    return AuditReport(int(events), int(a[0]), int(a[11]), int(a[1]), tuple(int(q) for q in a[2:6]),
                       tuple(int(q) for q in a[6:10]), int(a[10]), int(d))


def coupled_time_average(variant, params: ModelParams, x: SystemState, y: SystemState,
                         horizon: float, seed: int):
    """Time-averaged full fractions ``(f_x, f_y)`` of a coupled run over ``[0, horizon]``."""
    v = _variant(variant, params)
    gen = np.random.default_rng(seed)
    *_rest, f_int = _k.coupled_run(
        x.loads.copy(), y.loads.copy(), params.K, params.sigma, _rho_for(v, params), v.code,
        params.alpha, float(horizon), DEFAULT_EVENT_CAP, 4, params.K + 1, 0, 0, 0,
        params.K + 1, gen)
    return float(f_int[0] / horizon), float(f_int[1] / horizon)


# -- domination sandwich -------------------------------------------------------

@dataclass(frozen=True)
class Band:
    """Blocking band for the sandwich: ``middle`` (phi in [f, 1-f]), ``low``
    (phi <= f, f <= 1/2), ``high`` (phi >= f, f >= 1/2) or ``all``."""

    shape: str
    f: float = 0.0

    def __post_init__(self):
        ok = {"middle": 0 <= self.f <= 0.5, "low": 0 <= self.f <= 0.5,
              "high": 0.5 <= self.f <= 1, "all": True}
        if self.shape not in ok:
            raise InvalidParameterError(f"unknown band shape {self.shape!r}")
        if not ok[self.shape]:
            raise InvalidParameterError(f"f={self.f} invalid for band shape {self.shape}")

    def kernel_spec(self, n: int):
        if self.shape == "all":
            return 0, 0
        if self.shape == "middle":
            return 1, int(math.ceil(self.f * n - 1e-9))
        if self.shape == "low":
            return 2, int(math.floor(self.f * n + 1e-9))
        return 3, int(math.ceil(self.f * n - 1e-9))

    def contains(self, phi: float) -> bool:
        if self.shape == "middle":
            return self.f <= phi <= 1 - self.f
        if self.shape == "low":
            return phi <= self.f
        if self.shape == "high":
            return phi >= self.f
        return True


@dataclass
class DominationReport:
    band: Band
    beta_lower: Optional[float]
    beta_upper: Optional[float]
    samples: np.ndarray  # columns: time, f_lower, f_x, f_upper
    violations: np.ndarray  # rows: time, link, side (1 lower, 2 upper)
    n_violations: int
    exit_time: Optional[float]
    events: int

    @property
    def ok(self) -> bool:
        return self.n_violations == 0


def comparators(params: ModelParams, band: Band):
    """Intensities ``(beta_lower, beta_upper)`` of the Erlang comparators.

    In ``all`` the sandwich is ``Er(alpha)`` below and ``Er(1.5 alpha)`` above.
    Otherwise the single comparator ``Er(beta(f))`` goes below when every
    band point has ``beta(phi) >= beta(f)`` (the middle band) and above when
    ``beta(phi) <= beta(f)`` (the low and high bands).
    """
    a = params.alpha
    if band.shape == "all":
        return a, 1.5 * a
    b = effective_intensity(a, band.f)
    if band.shape == "middle":
        return b, None
    return None, b


def domination_run(params: ModelParams, band: Band, config: SimConfig,
                   init: Optional[SystemState] = None, strict: bool = False) -> DominationReport:
    """Evolve (lower, X, upper) from a common start and check the ordering.

    The ordering is asserted at every event up to and including the exit time
    of X from the band; after that the systems keep running uncoupled in law
    but unchecked.
    """
    if params.variant != "base":
        raise InvalidParameterError("the sandwich coupling is for the base variant")
    lo_b, up_b = comparators(params, band)
    start = init.loads if init is not None else np.zeros(params.n, dtype=np.int64)
    if start.shape[0] != params.n:
        raise InvalidParameterError("initial state does not match params")
    x = start.astype(np.int64).copy()
    lo = x.copy()
    up = x.copy()
    kind, c = band.kernel_spec(params.n)
    gen = np.random.default_rng(config.seed)
    samples, viol, n_viol, exit_t, events, capped = _k.domination(
        lo, x, up, lo_b is not None, up_b is not None, params.K, params.alpha,
        float(lo_b or 0.0), float(up_b or 0.0), kind, c, float(config.horizon),
        float(config.sample_interval), int(config.event_cap), gen)
    if lo_b is None:
        samples[:, 1] = np.nan
    if up_b is None:
        samples[:, 3] = np.nan
    rep = DominationReport(band, lo_b, up_b, samples, viol, int(n_viol),
                           None if exit_t < 0 else float(exit_t), int(events))
    if capped:
        raise EventCapExceeded("event cap hit in domination run", partial=rep)
    if strict and n_viol:
        raise DominationViolation(f"{n_viol} ordering violations")
    return rep


# -- contraction estimates -------------------------------------------------------

LOW_EPS = 1e-3
LOW_XI = 0.8
HIGH_XI = 0.01


@dataclass(frozen=True)
class ContractionSample:
    distance: int
    good: bool
    tau: float
    W: int
    reason: int
    censored: bool


@dataclass(frozen=True)
class ContractionEstimate:
    gamma0_hat: float
    ci_low: float
    ci_high: float
    W: int
    tau_q50: float
    tau_q95: float
    replicas: int
    censored: int = 0
    samples: List[ContractionSample] = field(default_factory=list, repr=False)

    def to_dict(self) -> dict:
        return {"gamma0_hat": self.gamma0_hat, "ci_low": self.ci_low, "ci_high": self.ci_high,
                "W": self.W, "tau_q50": self.tau_q50, "tau_q95": self.tau_q95,
                "replicas": self.replicas}


def adjacent_start(params: ModelParams, kind: str, burn_in: float, seed: int):
    """A burned-in state ``y`` plus ``x = y`` with one extra call on a uniform non-full link.

    The burn-in uses ``seed``; the link choice uses a generator seeded with
    ``(seed, 1)``.
    """
    y0 = initial_state(kind, params)
    tr = run(params, y0, SimConfig(horizon=burn_in, sample_interval=burn_in, seed=seed))
    y = SystemState(tr.final_loads, params.K, params.sigma)
    gen = np.random.default_rng([seed, 1])
    free = np.flatnonzero(y.loads < params.K)
    if free.size == 0:
        raise InvalidParameterError("burned-in state has no non-full link")
    m = int(free[min(int(gen.random() * free.size), free.size - 1)])
    xl = y.loads.copy()
    xl[m] += 1
    return SystemState(xl, params.K, params.sigma), y


def _contraction_one(seed, variant, params, regime, burn_in, time_cap, eps, xi,
                     high_upper, start_kind):
    v = _variant(variant, params)
    x, y = adjacent_start(params, start_kind, burn_in, seed)
    n, K = params.n, params.K
    if regime == "low":
        hi_level = int(math.floor(xi * K)) + 1
        which, lo, hi = 3, 0, int(math.floor(2 * eps * n + 1e-9))
        xi_level = int(math.ceil(xi * K - 1e-9))
        mode = 2
    else:
        hi_level = K + 1
        lo_f = varphi_rho(params.rho) + 2 * xi
        which, lo, hi = 0, int(math.ceil(lo_f * n - 1e-9)), int(math.floor(high_upper * n + 1e-9))
        xi_level = K + 1
        mode = 3
    gen = np.random.default_rng([seed, 2])
    t, events, reason, d, W, good, _a, _f = _k.coupled_run(
        x.loads, y.loads, K, params.sigma, _rho_for(v, params), v.code, params.alpha,
        float(time_cap), DEFAULT_EVENT_CAP, mode, hi_level, lo, hi, which, xi_level, gen)
    return ContractionSample(int(d), bool(good), float(t), int(W), int(reason),
                             reason == _k.STOP_CAP)


def estimate_contraction(variant, params: ModelParams, regime: str, replicas: int, seed: int,
                         *, burn_in: float = 20.0, time_cap: float = 1e3, eps: float = LOW_EPS,
                         xi: Optional[float] = None, high_upper: float = 2 / 3,
                         start_kind: Optional[str] = None) -> ContractionEstimate:
    """Estimate ``gamma0 = E[d(X^tau, Y^tau) 1{good}]`` for typical adjacent starts.

    ``regime`` picks the stopping rules and good band: ``low`` requires at most
    ``2 eps n`` links above ``xi K`` (default ``xi`` 0.8), ``high`` requires the
    full fraction in ``[varphi_rho + 2 xi, high_upper]`` (default ``xi`` 0.01).
    Starts come from ``adjacent_start`` after ``burn_in`` from empty (low) or
    full (high). Censored replicas (no stop by ``time_cap``) count with their
    terminal distance.
    """
    if regime not in ("low", "high"):
        raise InvalidParameterError("regime must be 'low' or 'high'")
    _variant(variant, params)
    if xi is None:
        xi = LOW_XI if regime == "low" else HIGH_XI
    if start_kind is None:
        start_kind = "empty" if regime == "low" else "full"
    task = partial(_contraction_one, variant=variant, params=params, regime=regime,
                   burn_in=burn_in, time_cap=time_cap, eps=eps, xi=xi,
                   high_upper=high_upper, start_kind=start_kind)
    rs = replicate(task, replicas, seed)
    vals = [s.distance * s.good for s in rs.results]
    summ = summarize(vals)
    taus = np.array([s.tau for s in rs.results])
    return ContractionEstimate(
        gamma0_hat=summ.mean, ci_low=summ.ci_low, ci_high=summ.ci_high,
        W=max(s.W for s in rs.results), tau_q50=float(np.quantile(taus, 0.5)),
        tau_q95=float(np.quantile(taus, 0.95)), replicas=replicas,
        censored=sum(s.censored for s in rs.results), samples=list(rs.results))
