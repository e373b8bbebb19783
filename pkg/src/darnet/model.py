"""State and exact event semantics of the DAR network and its variants.

Randomness comes from a ``numpy.random.Generator``. Each operation documents
the order in which it consumes ``gen.random()`` draws, so a replay from a
copied generator reproduces the same outcome.
"""

from __future__ import annotations

import enum
import json
import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from . import _kernels as _k
from .analytics import reroute_rate
from .errors import InvalidParameterError, WrongVariantError


@dataclass(frozen=True)
class ModelParams:
    """Parameters ``(alpha, K, n, rho, sigma)`` of a DAR network."""

    alpha: float
    K: int
    n: int
    rho: int = 1
    sigma: int = 0

    def __post_init__(self):
        if not (self.alpha > 0 and math.isfinite(self.alpha)):
            raise InvalidParameterError(f"alpha must be positive, got {self.alpha}")
        for name in ("K", "n", "rho", "sigma"):
            if int(getattr(self, name)) != getattr(self, name):
                raise InvalidParameterError(f"{name} must be an integer")
        if self.sigma < 0:
            raise InvalidParameterError("sigma must be >= 0")
        if self.K < max(self.sigma, 1):
            raise InvalidParameterError("K must be >= max(sigma, 1)")
        if self.n < 2:
            raise InvalidParameterError("n must be >= 2")
        if self.rho < 1:
            raise InvalidParameterError("rho must be >= 1")
        if self.rho > 1 and self.sigma > 0:
            raise InvalidParameterError("retries and trunk reservation cannot be combined")

    @property
    def lam(self) -> float:
        return self.alpha * self.K

    @property
    def variant(self) -> str:
        if self.sigma > 0:
            return "trunk"
        if self.rho > 1:
            return "retries"
        return "base"

    @property
    def band_lo(self) -> int:
        """Lowest load counted in the reserved band (``K`` when sigma is 0)."""
        return self.K - self.sigma

    def to_dict(self) -> dict:
        return {"alpha": self.alpha, "K": self.K, "n": self.n, "rho": self.rho, "sigma": self.sigma}


class SystemState:
    """Per-link loads plus cached counts (full links, band links, total load)."""

    __slots__ = ("loads", "K", "sigma", "counts")

    def __init__(self, loads, K: int, sigma: int = 0):
        arr = np.array(loads, dtype=np.int64).reshape(-1)
        if arr.size and (arr.min() < 0 or arr.max() > K):
            raise InvalidParameterError(f"loads must lie in [0, {K}]")
        self.loads = arr
        self.K = int(K)
        self.sigma = int(sigma)
        self.counts = _k.make_counts(arr, self.K, self.K - self.sigma, self.K + 1)

    @classmethod
    def for_params(cls, loads, params: ModelParams) -> "SystemState":
        st = cls(loads, params.K, params.sigma)
        if st.n != params.n:
            raise InvalidParameterError(f"expected {params.n} links, got {st.n}")
        return st

    @property
    def n(self) -> int:
        return self.loads.shape[0]

    @property
    def n_full(self) -> int:
        return int(self.counts[0])

    @property
    def n_band(self) -> int:
        return int(self.counts[1])

    @property
    def total(self) -> int:
        return int(self.counts[2])

    def check(self) -> None:
        """Raise if the cached counts disagree with the loads."""
        fresh = _k.make_counts(self.loads, self.K, self.K - self.sigma, self.K + 1)
        if not np.array_equal(fresh[:3], self.counts[:3]):
            raise AssertionError(f"stale counts {self.counts[:3]} vs {fresh[:3]}")
        if self.loads.min(initial=0) < 0 or self.loads.max(initial=0) > self.K:
            raise AssertionError("load out of range")

    def copy(self) -> "SystemState":
        return SystemState(self.loads.copy(), self.K, self.sigma)

    def __eq__(self, other):
        if not isinstance(other, SystemState):
            return NotImplemented
        return self.K == other.K and np.array_equal(self.loads, other.loads)

    def __repr__(self):
        return f"SystemState(K={self.K}, sigma={self.sigma}, loads={self.loads.tolist()})"

    def to_json(self) -> str:
        return json.dumps(self.loads.tolist())

    @classmethod
    def from_json(cls, text: str, K: int, sigma: int = 0) -> "SystemState":
        data = json.loads(text)
        if not isinstance(data, list):
            raise InvalidParameterError("state JSON must be a flat array of loads")
        return cls(data, K, sigma)


@dataclass(frozen=True)
class BlockingProfile:
    f: float
    g: float


class OutcomeKind(enum.IntEnum):
    ACCEPTED_DIRECT = _k.ACCEPTED_DIRECT
    REJECTED_COIN = _k.REJECTED_COIN
    REROUTED = _k.REROUTED
    LOST_REROUTE = _k.LOST_REROUTE
    NO_OP_FULL = _k.NO_OP_FULL


@dataclass(frozen=True)
class ArrivalOutcome:
    kind: OutcomeKind
    source: int
    target: Optional[int]
    tries: int


def _consistent(state: SystemState, params: ModelParams) -> None:
    if state.n != params.n or state.K != params.K or state.sigma != params.sigma:
        raise InvalidParameterError("state does not match params")


def blocking_profile(state: SystemState, params: ModelParams) -> BlockingProfile:
    _consistent(state, params)
    return BlockingProfile(state.n_full / state.n, state.n_band / state.n)


def generator_rate(params: ModelParams, state: SystemState) -> float:
    """Per-link call addition rate ``alpha K (1 + 2 f (1 - f))`` of the base model."""
    if params.variant != "base":
        raise WrongVariantError("generator_rate is defined for the base variant only")
    f = blocking_profile(state, params).f
    return params.lam * (1.0 + 2.0 * f * (1.0 - f))


def acceptance_rate_vector(params: ModelParams, state: SystemState) -> np.ndarray:
    """Exact per-link acceptance rate implied by ``handle_arrival``."""
    prof = blocking_profile(state, params)
    loads = state.loads
    if params.sigma > 0:
        base = params.lam * (1.0 + 2.0 * prof.f * (1.0 - prof.g))
    else:
        base = params.lam * (1.0 + float(reroute_rate(params.rho, prof.f)))
    out = np.full(params.n, base)
    out[loads >= params.band_lo] = params.lam
    out[loads == params.K] = 0.0
    return out


def _scratch_tree(state: SystemState) -> np.ndarray:
    return _k.fen_build(state.loads)


def handle_arrival(params: ModelParams, state: SystemState, link: int,
                   gen: np.random.Generator, *, inplace: bool = False):
    """Offer one call from the direct stream of ``link``.

    Draws: a non-full target consumes one coin (accepted below 1/2). A full
    target consumes two draws per try, ``i`` then ``j``, for up to ``rho``
    tries (one with trunk reservation).
    Returns ``(state, ArrivalOutcome)``; the input is copied unless ``inplace``.
    """
    _consistent(state, params)
    if not 0 <= link < params.n:
        raise InvalidParameterError(f"link {link} out of range")
    st = state if inplace else state.copy()
    kind, target, tries = _k.arrive(st.loads, _scratch_tree(st), st.counts, params.K,
                                    params.band_lo, params.K + 1, params.rho, int(link), gen)
    tgt = None if target < 0 else int(target)
    return st, ArrivalOutcome(OutcomeKind(kind), int(link), tgt, int(tries))


def discrete_step(params: ModelParams, state: SystemState, gen: np.random.Generator,
                  *, inplace: bool = False) -> SystemState:
    """One step of the discretised base chain.

    Draws: ``B`` (departure when below ``1/(2 alpha + 1)``); for a departure a
    link then a slot in ``1..K``; otherwise ``B'`` and, when it succeeds, a link.
    """
    if params.variant != "base":
        raise WrongVariantError("discrete_step is defined for the base variant only")
    _consistent(state, params)
    st = state if inplace else state.copy()
    _k.discrete_step(st.loads, _scratch_tree(st), st.counts, params.K, params.band_lo,
                     params.K + 1, params.alpha, gen)
    return st


def initial_state(kind: str, params: ModelParams, f: Optional[float] = None,
                  fill: Optional[int] = None) -> SystemState:
    """Starting states: ``"empty"``, ``"full"`` or ``"f-blocking"``.

    ``f-blocking`` puts the first ``ceil(f n)`` links at ``K`` and the rest at
    ``fill`` (default ``floor(alpha K)`` clamped to ``[0, K - sigma - 1]``).
    """
    n, K = params.n, params.K
    if kind == "empty":
        loads = np.zeros(n, dtype=np.int64)
    elif kind == "full":
        loads = np.full(n, K, dtype=np.int64)
    elif kind in ("f-blocking", "f_blocking", "blocking"):
        if f is None or not 0.0 <= f <= 1.0:
            raise InvalidParameterError(f"f must lie in [0, 1], got {f}")
        if fill is None:
            fill = min(max(int(math.floor(params.alpha * K)), 0), K - params.sigma - 1)
            fill = max(fill, 0)
        elif not 0 <= fill <= K:
            raise InvalidParameterError(f"fill must lie in [0, {K}]")
        n_full = int(math.ceil(f * n - 1e-12))
        loads = np.full(n, fill, dtype=np.int64)
        loads[:n_full] = K
    else:
        raise InvalidParameterError(f"unknown initial state kind {kind!r}")
    return SystemState(loads, K, params.sigma)
