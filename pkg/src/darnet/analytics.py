"""Closed-form and numerically solved quantities for DAR loss networks.

Everything here is a pure function of its arguments. Factorial ratios are
evaluated in log space so capacities up to ~1e4 are safe.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Callable, NamedTuple, Optional

import numpy as np
from scipy.optimize import bisect

from .errors import InvalidParameterError

GRID_STEP = 1e-4
ROOT_TOL = 1e-10
ALPHA_C_TOL = 1e-9
SLOPE_STEP = 1e-6
_TINY = 1e-290

ALPHA_C_1 = (5.0 * math.sqrt(10.0) - 13.0) / 3.0


@dataclass(frozen=True)
class LinkDistribution:
    """Equilibrium law of a single birth-death link on ``{0, ..., K}``.

    ``up_rates[l]`` is the birth rate out of load ``l``; the death rate out of
    load ``l`` is ``l``.
    """

    probs: np.ndarray
    capacity: int
    up_rates: np.ndarray = field(repr=False)

    def mass(self, lo: int, hi: Optional[int] = None) -> float:
        hi = self.capacity if hi is None else hi
        return float(self.probs[lo : hi + 1].sum())

    @property
    def full(self) -> float:
        return float(self.probs[self.capacity])

    @property
    def mean(self) -> float:
        return float(np.dot(np.arange(self.capacity + 1), self.probs))

    def detailed_balance_residual(self) -> float:
        """Largest relative mismatch of ``pi_l * up_l`` against ``pi_{l+1} * (l+1)``.

        Pairs where both flows underflow double precision are skipped.
        """
        up = self.probs[:-1] * self.up_rates
        down = self.probs[1:] * np.arange(1, self.capacity + 1)
        scale = np.maximum(up, down)
        keep = scale > _TINY
        if not keep.any():
            return 0.0
        return float(np.max(np.abs(up[keep] - down[keep]) / scale[keep]))


@dataclass(frozen=True)
class EtParams:
    """Trunk-reserved Erlang link ``ET(alpha, beta, sigma, K)``.

    Arrivals at rate ``beta*K`` below load ``K - sigma``, at ``alpha*K`` from
    ``K - sigma`` up to (not including) ``K``.
    """

    alpha: float
    beta: float
    sigma: int
    K: int

    def __post_init__(self):
        if not (self.alpha > 0 and self.beta >= self.alpha):
            raise InvalidParameterError(f"need 0 < alpha <= beta, got {self.alpha}, {self.beta}")
        if self.sigma < 0 or self.K < max(self.sigma, 1):
            raise InvalidParameterError(f"need 0 <= sigma <= K and K >= 1, got {self.sigma}, {self.K}")


@dataclass
class FixedPointReport:
    roots: list
    stability: list
    residuals: list
    method: dict
    tangent: list = field(default_factory=list)

    def __len__(self):
        return len(self.roots)

    def stable_roots(self) -> list:
        return [r for r, s in zip(self.roots, self.stability) if s == "stable"]


@dataclass
class PhaseThresholds:
    alpha_c_by_rho: dict
    varphi_by_rho: dict
    f_sp_by_rho: dict

    def rows(self):
        for rho in sorted(self.alpha_c_by_rho):
            yield rho, self.alpha_c_by_rho[rho], self.varphi_by_rho[rho], self.f_sp_by_rho[rho]


class VlpcBound(NamedTuple):
    bound: float
    gamma: float
    tail_threshold: float


@dataclass
class TrunkFixedPoints:
    """Fixed points of the trunk-reservation self-consistency map."""

    points: list
    starts: list

    def high(self, threshold: float) -> list:
        return [(f, g) for f, g in self.points if f > threshold]


def _check_rho(rho):
    if int(rho) != rho or rho < 1:
        raise InvalidParameterError(f"rho must be an integer >= 1, got {rho}")
    return int(rho)


def _check_link(beta, K):
    if not beta > 0:
        raise InvalidParameterError(f"beta must be positive, got {beta}")
    if int(K) != K or K < 1:
        raise InvalidParameterError(f"K must be an integer >= 1, got {K}")


def _birth_death(up_rates: np.ndarray, K: int) -> LinkDistribution:
    logw = np.empty(K + 1)
    logw[0] = 0.0
    logw[1:] = np.cumsum(np.log(up_rates) - np.log(np.arange(1, K + 1)))
    w = np.exp(logw - logw.max())
    probs = w / w.sum()
    probs /= probs.sum()
    return LinkDistribution(probs=probs, capacity=K, up_rates=up_rates)


def erlang_stationary(beta: float, K: int) -> LinkDistribution:
    """Equilibrium of ``Er(beta, K)``: ``pi_l`` proportional to ``(beta K)^l / l!``."""
    _check_link(beta, K)
    K = int(K)
    return _birth_death(np.full(K, beta * K, dtype=float), K)


def erlang_b(beta: float, K: int) -> float:
    """Probability an ``Er(beta, K)`` link is full in equilibrium."""
    return erlang_stationary(beta, K).full


def erlang_b_many(betas, K: int) -> np.ndarray:
    """Vectorised Erlang-B over an array of intensities.

    Uses the stable recursion ``E_k = nu E_{k-1} / (k + nu E_{k-1})``.
    """
    nu = np.asarray(betas, dtype=float) * K
    e = np.ones_like(nu)
    for k in range(1, int(K) + 1):
        e = nu * e / (k + nu * e)
    return e


def et_stationary(p: EtParams) -> LinkDistribution:
    """Equilibrium of the trunk-reserved link ``ET(alpha, beta, sigma, K)``.

    The birth rate is ``beta*K`` for loads below ``K - sigma`` and ``alpha*K``
    on the reserved band. Direct calls are exempt from the reservation, so
    the lower rate applies only once the link is inside the band.
    """
    K = p.K
    loads = np.arange(K)
    up = np.where(loads < K - p.sigma, p.beta * K, p.alpha * K).astype(float)
    return _birth_death(up, K)


def reroute_rate(rho: int, f):
    """Rerouted-arrival multiplier ``r_rho(f)``; vectorised over ``f``.

    ``r_rho(f) = 2 f (1 - (1 - (1-f)^2)^rho) / (1 - f)`` with value 0 at f = 1.
    """
    rho = _check_rho(rho)
    f_arr = np.asarray(f, dtype=float)
    if np.any((f_arr < 0) | (f_arr > 1)) or np.any(np.isnan(f_arr)):
        raise InvalidParameterError("blocking fraction must lie in [0, 1]")
    free = 1.0 - f_arr
    with np.errstate(divide="ignore", invalid="ignore"):
        # 1 - (1 - free^2)^rho, accurate when free is small
        accept = -np.expm1(rho * np.log1p(-(free * free)))
        out = np.where(free > 0, 2.0 * f_arr * accept / np.where(free > 0, free, 1.0), 0.0)
    return float(out) if out.ndim == 0 else out


def effective_intensity(alpha: float, f: float, rho: int = 1, g: Optional[float] = None) -> float:
    """Effective intensity ``beta_rho(f)``, or ``beta(f, g)`` under trunk reservation."""
    if not alpha > 0:
        raise InvalidParameterError(f"alpha must be positive, got {alpha}")
    if not 0 <= f <= 1:
        raise InvalidParameterError(f"f must lie in [0, 1], got {f}")
    if g is None:
        return alpha * (1.0 + reroute_rate(rho, f))
    if rho != 1:
        raise InvalidParameterError("trunk reservation uses a single rerouting attempt")
    if not f <= g <= 1:
        raise InvalidParameterError(f"need f <= g <= 1, got f={f}, g={g}")
    return alpha * (1.0 + 2.0 * f * (1.0 - g))


def _q_rho(rho: int, f):
    """The alpha-free part of ``h_rho``: ``f (1 - 2 (1 - (1-f)^2)^rho)``."""
    f = np.asarray(f, dtype=float)
    return f * (1.0 - 2.0 * (1.0 - (1.0 - f) ** 2) ** rho)


def h_value(alpha: float, rho: int, f):
    """``h_rho(f)``; positive exactly where ``p_rho(f) > f``."""
    return _q_rho(rho, f) + 1.0 - 1.0 / alpha


def _golden_max(func: Callable[[float], float], lo: float, hi: float, tol: float) -> float:
    invphi = (math.sqrt(5.0) - 1.0) / 2.0
    a, b = lo, hi
    c = b - invphi * (b - a)
    d = a + invphi * (b - a)
    fc, fd = func(c), func(d)
    while b - a > tol:
        if fc > fd:
            b, d, fd = d, c, fc
            c = b - invphi * (b - a)
            fc = func(c)
        else:
            a, c, fc = c, d, fd
            d = a + invphi * (b - a)
            fd = func(d)
    return 0.5 * (a + b)


def _scan_roots(
    vec: Callable[[np.ndarray], np.ndarray],
    scalar: Callable[[float], float],
    step: float,
    tol: float,
    tangency_tol: float = 0.0,
):
    """Bracket sign changes on a uniform grid of ``[0, 1]`` and bisect each.

    Returns ``(roots, tangent_flags)``. A grid local extremum whose value is
    within ``tangency_tol`` of zero, with no sign change next to it, is
    reported as a double root.
    """
    n = int(round(1.0 / step))
    grid = np.linspace(0.0, 1.0, n + 1)
    vals = vec(grid)
    roots, tangent = [], []
    for i in np.flatnonzero(vals == 0.0):
        roots.append(float(grid[i]))
        tangent.append(False)
    for i in np.flatnonzero(vals[:-1] * vals[1:] < 0):
        roots.append(float(bisect(scalar, grid[i], grid[i + 1], xtol=tol)))
        tangent.append(False)
    if tangency_tol > 0:
        # near-zero extrema can hide a double root or two roots inside one cell
        inner = vals[1:-1]
        ext = ((inner - vals[:-2]) * (vals[2:] - inner) <= 0) & (np.abs(inner) <= 1e3 * step * step)
        for i in np.flatnonzero(ext) + 1:
            if any(abs(r - grid[i]) <= 2 * step for r in roots):
                continue
            sign = 1.0 if vals[i] >= vals[i - 1] else -1.0
            x = _golden_max(lambda z: sign * scalar(z), grid[i - 1], grid[i + 1], tol)
            peak = scalar(x)
            if abs(peak) <= tangency_tol:
                roots.append(float(x))
                tangent.append(True)
            elif peak * vals[i] < 0 and peak * vals[i - 1] < 0 and peak * vals[i + 1] < 0:
                roots.append(float(bisect(scalar, grid[i - 1], x, xtol=tol)))
                roots.append(float(bisect(scalar, x, grid[i + 1], xtol=tol)))
                tangent.extend([False, False])
    order = np.argsort(roots)
    return [roots[k] for k in order], [tangent[k] for k in order]


def _central_slope(func: Callable[[float], float], x: float, h: float = SLOPE_STEP) -> float:
    lo, hi = max(x - h, 0.0), min(x + h, 1.0)
    return (func(hi) - func(lo)) / (hi - lo)


def h_roots(alpha: float, rho: int = 1) -> FixedPointReport:
    """All zeros of ``h_rho`` in ``[0, 1]`` for intensity ``alpha``.

    A root is stable when ``h_rho`` crosses zero downwards (the blocking level
    is pushed back towards it from both sides).
    """
    if not alpha > 0:
        raise InvalidParameterError(f"alpha must be positive, got {alpha}")
    rho = _check_rho(rho)
    scalar = lambda x: float(h_value(alpha, rho, x))
    roots, tangent = _scan_roots(
        lambda g: h_value(alpha, rho, g), scalar, GRID_STEP, ROOT_TOL, tangency_tol=1e-9
    )
    stability = []
    for r, t in zip(roots, tangent):
        if t:
            stability.append("tangent")
        else:
            stability.append("stable" if _central_slope(scalar, r) < 0 else "unstable")
    return FixedPointReport(
        roots=roots,
        stability=stability,
        residuals=[abs(scalar(r)) for r in roots],
        method={"grid_step": GRID_STEP, "tolerance": ROOT_TOL, "kind": "h_rho"},
        tangent=tangent,
    )


@lru_cache(maxsize=64)
def _q_max(rho: int) -> float:
    grid = np.linspace(0.0, 1.0, int(round(1.0 / GRID_STEP)) + 1)
    i = int(np.argmax(_q_rho(rho, grid)))
    lo, hi = grid[max(i - 1, 0)], grid[min(i + 1, len(grid) - 1)]
    x = _golden_max(lambda z: float(_q_rho(rho, z)), lo, hi, 1e-13)
    return float(_q_rho(rho, x))


def alpha_c(rho: int = 1, tol: float = ALPHA_C_TOL) -> float:
    """Critical intensity: the least ``alpha`` at which ``h_rho`` becomes positive somewhere."""
    rho = _check_rho(rho)
    top = _q_max(rho)
    positive = lambda a: top + 1.0 - 1.0 / a > 0
    lo, hi = 0.5, 1.0
    assert not positive(lo) and positive(hi), "critical intensity outside [0.5, 1]"
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if positive(mid):
            hi = mid
        else:
            lo = mid
    return 0.5 * (lo + hi)


def stationary_point(rho: int = 1, tol: float = 1e-9) -> float:
    """The maximiser of ``r_rho`` on ``[0, 1]`` (unique; at least 1/2)."""
    rho = _check_rho(rho)
    guess = _golden_max(lambda z: reroute_rate(rho, z), 0.0, 1.0, 1e-6)

    # golden section stalls near sqrt(machine eps) on a flat top; polish on r' numerator
    def slope_num(z):
        q = z * (2.0 - z)
        acc = 1.0 - q**rho
        d_acc = -rho * q ** (rho - 1) * 2.0 * (1.0 - z)
        return 2.0 * (acc + z * d_acc) * (1.0 - z) + 2.0 * z * acc

    lo, hi = max(guess - 1e-3, 1e-9), min(guess + 1e-3, 1.0 - 1e-9)
    if slope_num(lo) > 0 > slope_num(hi):
        return bisect(slope_num, lo, hi, xtol=min(tol, 1e-12))
    return guess


def varphi_rho(rho: int = 1) -> float:
    """Blocking level at which a reroute succeeds with probability exactly 1/2."""
    rho = _check_rho(rho)
    return 1.0 - math.sqrt(1.0 - 0.5**rho)


def sigma_star(alpha: float) -> float:
    """Sufficient trunk reservation level; callers round up."""
    if not alpha > 0 or alpha == 1:
        raise InvalidParameterError(f"sigma_star needs alpha > 0, alpha != 1; got {alpha}")
    if alpha < 1:
        return (2.0 * math.log(1.0 / (1.0 - alpha)) + 14.0) / (1.0 - alpha)
    return math.log(4.0) / math.log(alpha)


def phase_thresholds(rho_max: int) -> PhaseThresholds:
    rhos = range(1, _check_rho(rho_max) + 1)
    return PhaseThresholds(
        alpha_c_by_rho={r: alpha_c(r) for r in rhos},
        varphi_by_rho={r: varphi_rho(r) for r in rhos},
        f_sp_by_rho={r: stationary_point(r) for r in rhos},
    )


def erlang_fixed_points(alpha: float, K: int, rho: int = 1) -> FixedPointReport:
    """Solutions ``B`` of ``B = E(alpha (1 + r_rho(B)), K)`` in ``[0, 1]``."""
    _check_link(alpha, K)
    rho = _check_rho(rho)
    K = int(K)

    def mapping(b):
        return erlang_b_many(alpha * (1.0 + reroute_rate(rho, b)), K)

    vec = lambda b: b - mapping(b)
    scalar = lambda b: float(b - mapping(np.array([b]))[0])
    roots, tangent = _scan_roots(vec, scalar, GRID_STEP, ROOT_TOL)
    scalar_map = lambda b: float(mapping(np.array([b]))[0])
    stability = ["stable" if _central_slope(scalar_map, r) < 1 else "unstable" for r in roots]
    return FixedPointReport(
        roots=roots,
        stability=stability,
        residuals=[abs(scalar(r)) for r in roots],
        method={"grid_step": GRID_STEP, "tolerance": ROOT_TOL, "slope_step": SLOPE_STEP,
                "kind": "erlang", "K": K, "rho": rho},
        tangent=tangent,
    )


def trunk_self_consistency(
    alpha: float,
    sigma: int,
    K: int,
    grid: int = 11,
    damping: float = 0.5,
    max_iter: int = 20000,
    tol: float = 1e-12,
    dedup: float = 1e-4,
) -> TrunkFixedPoints:
    """Fixed points of ``(f, g) -> (pi_K, pi{K-sigma..K})`` for ``pi = ET(alpha, beta(f, g), sigma, K)``.

    Damped iteration ``x <- (1 - damping) x + damping T(x)`` is started from a
    ``grid x grid`` lattice restricted to ``f <= g``; converged end points are
    merged when within ``dedup`` in both coordinates.
    """
    _check_link(alpha, K)
    if int(sigma) != sigma or not 0 <= sigma <= K:
        raise InvalidParameterError(f"need integer 0 <= sigma <= K, got {sigma}")
    K, sigma = int(K), int(sigma)

    def step(f, g):
        pi = et_stationary(EtParams(alpha, effective_intensity(alpha, f, g=g), sigma, K))
        return pi.full, pi.mass(K - sigma)

    points, starts = [], []
    lattice = np.linspace(0.0, 1.0, grid)
    for f0 in lattice:
        for g0 in lattice:
            if g0 < f0 or (sigma == 0 and g0 != f0):
                continue
            f, g = float(f0), float(g0)
            converged = False
            for it in range(1, max_iter + 1):
                nf, ng = step(f, g)
                if abs(nf - f) + abs(ng - g) < tol:
                    f, g, converged = nf, ng, True
                    break
                f = (1.0 - damping) * f + damping * nf
                g = max((1.0 - damping) * g + damping * ng, f)
            starts.append({"start": (float(f0), float(g0)), "converged": converged,
                           "iterations": it, "end": (f, g)})
            if converged and not any(abs(f - a) < dedup and abs(g - b) < dedup for a, b in points):
                points.append((f, g))
    points.sort()
    return TrunkFixedPoints(points=points, starts=starts)


def vlpc_bound(gamma0: float, W: float, M: float, t: float, diam: float) -> VlpcBound:
    """Variable-length path-coupling bound on the non-coalescence probability at ``t``."""
    if not 0 <= gamma0 < 1:
        raise InvalidParameterError(f"gamma0 must lie in [0, 1), got {gamma0}")
    if W < 1 or not M > 0 or t < 0 or diam < 1:
        raise InvalidParameterError("need W >= 1, M > 0, t >= 0, diam >= 1")
    gamma = 0.5 * (1.0 + gamma0)
    raw = diam * gamma ** (t / M - 1.0)
    return VlpcBound(bound=min(1.0, raw), gamma=gamma, tail_threshold=0.5 * (1.0 - gamma0) / W)


__all__ = [
    "ALPHA_C_1", "EtParams", "FixedPointReport", "LinkDistribution", "PhaseThresholds",
    "TrunkFixedPoints", "VlpcBound", "alpha_c", "effective_intensity", "erlang_b",
    "erlang_b_many", "erlang_fixed_points", "erlang_stationary", "et_stationary",
    "h_roots", "h_value", "phase_thresholds", "reroute_rate", "sigma_star",
    "stationary_point", "trunk_self_consistency", "varphi_rho", "vlpc_bound",
]
