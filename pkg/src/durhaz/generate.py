"""Duration generation.

Phone-level baselines emit their (mean-like) regression output per phone.
Frame-level hazard models are run left to right one frame at a time; each
phone ends at the first frame where its remaining survival mass has dropped
to ``1 - q`` or below, and the recurrent state flows on into the next
phone. With ``q = 0.5`` this is median-based generation.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Mapping

import numpy as np

from .core import (
    DEFAULT_CAP,
    HAZARD_EPS,
    InvalidArgumentError,
    InvalidModelError,
    ProtocolError,
    Utterance,
)
from .hazard import QuantileResult, quantile_from_survival, running_survival
from .train import FRAME_KINDS, PHONE_KINDS, SystemKind


def _kind(model) -> SystemKind:
    kind = getattr(model, "kind_", None) or getattr(model, "kind", None)
    try:
        return SystemKind(kind)
    except ValueError:
        raise InvalidModelError(f"unknown model kind {kind!r}") from None


def round_duration(x: float) -> int:
    """Round half up, floored at one frame."""
    return max(1, int(math.floor(x + 0.5)))


def generate_phone_durations(model, features) -> list[int]:
    """Per-phone durations from a phone-level baseline."""
    if _kind(model) not in PHONE_KINDS:
        raise InvalidModelError(f"{_kind(model).value} is not a phone-level model")
    return [round_duration(x) for x in model.predict_raw(features)]


@dataclass
class GenerationResult:
    durations: list[int]
    truncated: list[bool]
    # rows of (frame, phone, hazard, remaining mass); filled when requested
    hazards: list[tuple[int, int, float, float]] = field(default_factory=list)


def _clip_hazard(p: float) -> float:
    return min(max(p, HAZARD_EPS), 1.0 - HAZARD_EPS)


def _phone_rows(model, features) -> np.ndarray:
    return model._normalised(features)


def _check_q(q, cap):
    if not 0.0 < q < 1.0:
        raise InvalidArgumentError(f"q must lie in (0, 1), got {q}")
    if int(cap) < 1:
        raise InvalidArgumentError(f"cap must be >= 1, got {cap}")


def generate_frame_durations(model, features, q: float = 0.5, cap: int = DEFAULT_CAP,
                             fixed: Mapping[int, int] | None = None,
                             dump_hazards: bool = False) -> GenerationResult:
    """Sequential quantile-based generation from a frame-level hazard model.

    Parameters
    ----------
    model : FrameHazardModel
        Fitted frame-level model (or any object exposing ``kind``,
        ``network_``, ``frame_row`` and ``_normalised``).
    features : Utterance or ndarray of shape (P, F)
        Raw phone features.
    q : float
        Quantile in (0, 1); 0.5 gives the median.
    cap : int
        Maximum frames per phone; reaching it sets the truncation flag.
    fixed : mapping, optional
        Phone index -> duration for phones whose length is imposed (oracle
        pausing). Their frames still pass through the network.
    """
    if _kind(model) not in FRAME_KINDS:
        raise InvalidModelError(f"{_kind(model).value} is not a frame-level model")
    _check_q(q, cap)
    fixed = fixed or {}
    rows = _phone_rows(model, features)
    net = model.network_.copy()
    net.reset_state()
    threshold = 1.0 - q
    result = GenerationResult([], [])
    frame = 0
    for p, row in enumerate(rows):
        rem_mass = 1.0
        n = 0
        forced = fixed.get(p)
        while True:
            n += 1
            prob = _clip_hazard(net.step(model.frame_row(row, n)))
            rem_mass *= 1.0 - prob
            if dump_hazards:
                result.hazards.append((frame, p, prob, rem_mass))
            frame += 1
            if forced is not None:
                if n >= forced:
                    result.durations.append(n)
                    result.truncated.append(False)
                    break
            elif rem_mass <= threshold:
                result.durations.append(n)
                result.truncated.append(False)
                break
            elif n >= cap:
                result.durations.append(n)
                result.truncated.append(True)
                break
    return result


class IncrementalSession:
    """Phone-by-phone generation without look-ahead.

    Push one phone's raw feature vector, then pull its duration with
    :meth:`emit` before pushing the next phone::

        session = IncrementalSession(model)
        for f in phone_features:
            session.push(f)
            duration = session.emit().duration
    """

    def __init__(self, model, q: float = 0.5, cap: int = DEFAULT_CAP):
        if _kind(model) not in FRAME_KINDS:
            raise InvalidModelError(f"{_kind(model).value} is not a frame-level model")
        _check_q(q, cap)
        self.model = model
        self.q = q
        self.cap = cap
        self.reset()

    def reset(self) -> None:
        self._net = self.model.network_.copy()
        self._net.reset_state()
        self._pending = None
        self._forced = None
        self.frames = 0

    def push(self, phone_features, fixed_duration: int | None = None) -> None:
        if self._pending is not None:
            raise ProtocolError("previous phone's duration has not been emitted yet")
        row = _phone_rows(self.model, np.atleast_2d(phone_features))[0]
        self._pending = row
        self._forced = fixed_duration

    def _hazards(self, row):
        n = 0
        while True:
            n += 1
            self.frames += 1
            yield _clip_hazard(self._net.step(self.model.frame_row(row, n)))

    def emit(self) -> QuantileResult:
        if self._pending is None:
            raise ProtocolError("no phone pushed since the last emission")
        row, forced = self._pending, self._forced
        self._pending = None
        if forced is not None:
            stream = self._hazards(row)
            for _ in range(forced):
                next(stream)
            return QuantileResult(forced, False)
        return quantile_from_survival(running_survival(self._hazards(row)), self.q, self.cap)

    def feed(self, phone_features, fixed_duration: int | None = None) -> QuantileResult:
        self.push(phone_features, fixed_duration)
        return self.emit()


def incremental_session(model, q: float = 0.5, cap: int = DEFAULT_CAP) -> IncrementalSession:
    return IncrementalSession(model, q, cap)


def generate(model, u: Utterance, q: float = 0.5, cap: int = DEFAULT_CAP,
             oracle_silence: bool = True, dump_hazards: bool = False) -> GenerationResult:
    """Generate durations for an utterance with any system kind.

    Silence phones keep their reference durations when ``oracle_silence``.
    """
    from .core import PhoneticClass

    sil = {i: p.ref_duration for i, p in enumerate(u.phones)
           if oracle_silence and p.phonetic_class is PhoneticClass.SILENCE}
    if _kind(model) in PHONE_KINDS:
        durs = generate_phone_durations(model, u)
        for i, d in sil.items():
            durs[i] = d
        return GenerationResult(durs, [False] * len(durs))
    return generate_frame_durations(model, u, q, cap, fixed=sil, dump_hazards=dump_hazards)
