"""Discrete-time hazard arithmetic.

A hazard sequence ``pi_1, pi_2, ...`` gives the probability that a phone
ends at frame ``n`` given that it lasted at least ``n`` frames. The
functions here convert between hazards, survival curves and PMFs and
extract quantiles with the sequential stopping rule used at synthesis
time.
"""
from __future__ import annotations

from typing import Iterable, NamedTuple, Sequence

import numpy as np

from .core import (
    DEFAULT_CAP,
    HAZARD_EPS,
    DegenerateDistributionError,
    DurationDistribution,
    HazardSequence,
    InvalidArgumentError,
)


class QuantileResult(NamedTuple):
    duration: int
    truncated: bool


def _as_hazard(h) -> HazardSequence:
    return h if isinstance(h, HazardSequence) else HazardSequence(h)


def survival_from_hazard(h: HazardSequence | Sequence[float]) -> np.ndarray:
    """Return ``P(D > n)`` for ``n = 1..len(h)``."""
    h = _as_hazard(h)
    if len(h) == 0:
        raise InvalidArgumentError("hazard sequence is empty")
    return h.survival.copy()


def pmf_from_hazard(h: HazardSequence | Sequence[float], cap: int = DEFAULT_CAP) -> DurationDistribution:
    """Duration PMF induced by a hazard sequence.

    Mass that survives past ``cap`` frames is assigned to ``cap``.
    """
    if int(cap) < 1:
        raise InvalidArgumentError(f"cap must be >= 1, got {cap}")
    h = _as_hazard(h)
    probs = h.probs
    if len(probs) == 0:
        raise InvalidArgumentError("hazard sequence is empty")
    if len(probs) < cap and probs[-1] != 1.0:
        raise InvalidArgumentError(
            f"hazard of length {len(probs)} < cap {cap} must end in a certain transition")
    n = min(len(probs), cap)
    before = np.concatenate(([1.0], h.survival[:n - 1]))
    pmf = probs[:n] * before
    if n == cap:
        pmf[-1] = before[-1]
    return DurationDistribution(pmf, cap)


def hazard_from_pmf(dist: DurationDistribution) -> HazardSequence:
    """Inverse of :func:`pmf_from_hazard`.

    The returned sequence stops at the last duration carrying mass, where
    the hazard is exactly 1.
    """
    pmf = np.asarray(dist.pmf, dtype=float)
    nz = np.flatnonzero(pmf > 0)
    if len(nz) == 0:
        raise DegenerateDistributionError("distribution has no mass")
    last = nz[-1]
    pmf = pmf[:last + 1]
    # reverse cumsum keeps tails relatively accurate where subtraction would not
    tail = np.cumsum(pmf[::-1])[::-1]
    if np.any(tail <= 0):
        d = int(np.flatnonzero(tail <= 0)[0]) + 1
        raise DegenerateDistributionError(f"no remaining mass before duration {d}")
    probs = pmf / tail
    probs[-1] = 1.0
    # zero-mass durations inside the support sit below the floor; lift them
    return HazardSequence(np.clip(probs, HAZARD_EPS, 1.0))


def truncated_mean_from_pmf(dist: DurationDistribution) -> float:
    """Mean of a cap-truncated PMF."""
    return float(np.dot(np.arange(1, len(dist.pmf) + 1), dist.pmf))


def quantile_from_survival(survival: Iterable[float], q: float = 0.5,
                           cap: int = DEFAULT_CAP) -> QuantileResult:
    """Sequential quantile rule on a stream of survival values.

    Consumes ``P(D > 1), P(D > 2), ...`` one at a time and returns the
    first ``n`` at which the survival has dropped to ``1 - q`` or below
    (inclusive, so a survival of exactly 0.5 ends the phone when
    ``q = 0.5``). Nothing past that point is consumed. If the threshold is
    not reached within ``cap`` values, returns ``cap`` with
    ``truncated=True``.
    """
    if not 0.0 < q < 1.0:
        raise InvalidArgumentError(f"q must lie in (0, 1), got {q}")
    if int(cap) < 1:
        raise InvalidArgumentError(f"cap must be >= 1, got {cap}")
    threshold = 1.0 - q
    n = 0
    for n, s in enumerate(survival, start=1):
        if s <= threshold:
            return QuantileResult(n, False)
        if n >= cap:
            return QuantileResult(cap, True)
    raise InvalidArgumentError(
        f"survival stream ended after {n} values without reaching {threshold}")


def quantile_from_hazard(h: HazardSequence | Sequence[float], q: float = 0.5,
                         cap: int = DEFAULT_CAP) -> QuantileResult:
    return quantile_from_survival(survival_from_hazard(h), q, cap)


def running_survival(probs: Iterable[float]):
    """Generator turning a hazard stream into a survival stream."""
    s = 1.0
    for p in probs:
        s *= 1.0 - p
        yield s
