"""Domain types shared across the toolkit.

Durations are always counted in frames and are 1-based: a phone that
occupies a single frame has duration 1.
"""
from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

#: Floor applied to predicted transition probabilities.
HAZARD_EPS = 1e-6
#: Normalised feature range.
FEATURE_LOW = 0.01
FEATURE_HIGH = 0.99
#: Default truncation horizon (frames) for distributions and generation.
DEFAULT_CAP = 300
DEFAULT_SILENCE_LABELS = frozenset({"sil", "pau", "sp", "h#", "#"})


class DurhazError(Exception):
    """Base class for all toolkit errors."""


class InvalidArgumentError(DurhazError, ValueError):
    pass


class InvalidHazardError(DurhazError, ValueError):
    pass


class DegenerateDistributionError(DurhazError, ValueError):
    pass


class InvalidArchitectureError(DurhazError, ValueError):
    pass


class InvalidInputError(DurhazError, ValueError):
    pass


class InvalidGradientError(DurhazError, ValueError):
    pass


class ParseError(DurhazError, ValueError):
    """Malformed alignment or feature file.

    ``line`` is the 1-based line number of the offending line, when known.
    """

    def __init__(self, message: str, line: int | None = None, path: str | None = None):
        where = ""
        if path is not None:
            where += f"{path}"
        if line is not None:
            where += f":{line}" if where else f"line {line}"
        super().__init__(f"{where}: {message}" if where else message)
        self.line = line
        self.path = path


class InvalidSpecError(DurhazError, ValueError):
    pass


class InvalidModelError(DurhazError, ValueError):
    pass


class ProtocolError(DurhazError, RuntimeError):
    pass


class EmptyEvaluationError(DurhazError, ValueError):
    pass


class InvalidComparisonError(DurhazError, ValueError):
    pass


class DivergenceError(DurhazError, ArithmeticError):
    def __init__(self, message: str, epoch: int | None = None, utterance: str | None = None):
        super().__init__(message)
        self.epoch = epoch
        self.utterance = utterance


class PhoneticClass(str, enum.Enum):
    VOWEL = "Vowel"
    PLOSIVE = "Plosive"
    FRICATIVE = "Fricative"
    NASAL = "Nasal"
    AFFRICATE = "Affricate"
    GLIDE_LIQUID = "GlideLiquid"
    SILENCE = "Silence"
    OTHER = "Other"

    @classmethod
    def parse(cls, value: "str | PhoneticClass") -> "PhoneticClass":
        if isinstance(value, cls):
            return value
        key = str(value).strip().replace("_", "").replace("+", "").replace(" ", "").lower()
        for member in cls:
            if member.value.lower() == key or member.name.replace("_", "").lower() == key:
                return member
        raise InvalidArgumentError(f"unknown phonetic class {value!r}")

    @property
    def is_consonant(self) -> bool:
        return self not in (PhoneticClass.VOWEL, PhoneticClass.SILENCE)


# ARPAbet-style default table; corpora with other phone sets pass their own.
DEFAULT_CLASS_TABLE: dict[str, PhoneticClass] = {
    **{p: PhoneticClass.VOWEL for p in (
        "aa ae ah ao aw ax axr ay eh er ey ih ix iy ow oy uh uw ux "
        "a e i o u @ @@ i@ e@ u@ ei ai oi ou au".split())},
    **{p: PhoneticClass.PLOSIVE for p in "p b t d k g q".split()},
    **{p: PhoneticClass.FRICATIVE for p in "f v th dh s z sh zh h hh".split()},
    **{p: PhoneticClass.NASAL for p in "m n ng em en eng nx".split()},
    **{p: PhoneticClass.AFFRICATE for p in "ch jh".split()},
    **{p: PhoneticClass.GLIDE_LIQUID for p in "l r w y el".split()},
    **{p: PhoneticClass.SILENCE for p in DEFAULT_SILENCE_LABELS},
}


def classify_phone(label: str, table: dict[str, PhoneticClass] | None = None,
                   silence_labels: Iterable[str] = DEFAULT_SILENCE_LABELS) -> PhoneticClass:
    """Look a phone label up in a class table; silence labels win."""
    if label in set(silence_labels):
        return PhoneticClass.SILENCE
    table = DEFAULT_CLASS_TABLE if table is None else table
    cls = table.get(label, table.get(label.lower(), PhoneticClass.OTHER))
    if cls is PhoneticClass.SILENCE:
        # a table entry cannot make a non-silence label silent
        return PhoneticClass.OTHER
    return cls


def _frozen_array(values, dtype=float) -> np.ndarray:
    arr = np.array(values, dtype=dtype)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class PhoneRecord:
    label: str
    features: np.ndarray
    phonetic_class: PhoneticClass
    ref_duration: int

    def __post_init__(self):
        object.__setattr__(self, "features", _frozen_array(self.features).ravel())
        object.__setattr__(self, "phonetic_class", PhoneticClass.parse(self.phonetic_class))
        object.__setattr__(self, "ref_duration", int(self.ref_duration))

    def with_features(self, features) -> "PhoneRecord":
        return PhoneRecord(self.label, features, self.phonetic_class, self.ref_duration)


@dataclass(frozen=True, eq=False)
class Utterance:
    id: str
    phones: tuple[PhoneRecord, ...]
    total_frames: int

    def __post_init__(self):
        object.__setattr__(self, "phones", tuple(self.phones))
        object.__setattr__(self, "total_frames", int(self.total_frames))

    @classmethod
    def from_phones(cls, id: str, phones: Sequence[PhoneRecord]) -> "Utterance":
        return cls(id, tuple(phones), sum(p.ref_duration for p in phones))

    def __len__(self) -> int:
        return len(self.phones)

    @property
    def features(self) -> np.ndarray:
        """(P, F) matrix of phone feature vectors."""
        if not self.phones:
            return np.zeros((0, 0))
        return np.vstack([p.features for p in self.phones])

    @property
    def durations(self) -> np.ndarray:
        return np.array([p.ref_duration for p in self.phones], dtype=np.int64)

    @property
    def labels(self) -> list[str]:
        return [p.label for p in self.phones]

    @property
    def classes(self) -> list[PhoneticClass]:
        return [p.phonetic_class for p in self.phones]

    def with_features(self, features: np.ndarray) -> "Utterance":
        phones = tuple(p.with_features(f) for p, f in zip(self.phones, features))
        return Utterance(self.id, phones, self.total_frames)


@dataclass(frozen=True, eq=False)
class FrameDataset:
    """Frame-level training data for one utterance.

    ``inputs[t]`` is the feature vector of the phone occupying frame ``t``
    (with the encoded within-phone counter appended when ``augmented``),
    ``targets[t]`` is 1 exactly on phone-final frames and ``counter[t]``
    counts frames since the phone started, starting at 1.
    """

    inputs: np.ndarray
    targets: np.ndarray
    phone_index: np.ndarray
    counter: np.ndarray
    augmented: bool = False

    def __len__(self) -> int:
        return len(self.targets)


def durations_from_targets(targets) -> list[int]:
    """Recover per-phone durations from a 0/1 phone-final indicator track."""
    ends = np.flatnonzero(np.asarray(targets) == 1)
    if len(ends) == 0:
        return []
    return np.diff(np.concatenate(([-1], ends))).astype(int).tolist()


@dataclass(frozen=True, eq=False)
class HazardSequence:
    """Per-frame transition probabilities for one phone.

    ``survival[k]`` is the probability the phone lasts more than ``k + 1``
    frames, i.e. the running product of ``1 - probs[:k + 1]``.
    """

    probs: np.ndarray
    survival: np.ndarray = field(init=False)

    def __post_init__(self):
        probs = np.asarray(self.probs, dtype=float).ravel()
        if probs.size and (not np.all(np.isfinite(probs))
                           or probs.min() < HAZARD_EPS or probs.max() > 1.0):
            bad = int(np.flatnonzero(~((probs >= HAZARD_EPS) & (probs <= 1.0)))[0])
            raise InvalidHazardError(
                f"transition probability {probs[bad]!r} at frame {bad + 1} "
                f"outside [{HAZARD_EPS}, 1]")
        object.__setattr__(self, "probs", _frozen_array(probs))
        object.__setattr__(self, "survival", _frozen_array(np.cumprod(1.0 - probs)))

    @classmethod
    def clamped(cls, raw, floor: float = HAZARD_EPS) -> "HazardSequence":
        """Build from raw predictions, flooring them at ``floor``."""
        return cls(np.clip(np.asarray(raw, dtype=float), floor, 1.0))

    def __len__(self) -> int:
        return len(self.probs)


@dataclass(frozen=True, eq=False)
class DurationDistribution:
    """PMF on the durations 1..cap; ``pmf[d - 1]`` is the mass at ``d``."""

    pmf: np.ndarray
    cap: int

    def __post_init__(self):
        pmf = np.asarray(self.pmf, dtype=float).ravel()
        cap = int(self.cap)
        if cap < 1:
            raise InvalidArgumentError(f"cap must be >= 1, got {cap}")
        if len(pmf) > cap:
            if np.any(pmf[cap:] != 0):
                raise InvalidArgumentError("pmf has mass beyond cap")
            pmf = pmf[:cap]
        if len(pmf) < cap:
            pmf = np.concatenate([pmf, np.zeros(cap - len(pmf))])
        if np.any(pmf < 0) or not np.all(np.isfinite(pmf)):
            raise InvalidArgumentError("pmf entries must be finite and non-negative")
        if abs(pmf.sum() - 1.0) > 1e-9:
            raise InvalidArgumentError(f"pmf sums to {pmf.sum()!r}, not 1")
        object.__setattr__(self, "pmf", _frozen_array(pmf))
        object.__setattr__(self, "cap", cap)

    @classmethod
    def from_dict(cls, masses: dict[int, float], cap: int | None = None) -> "DurationDistribution":
        if any(int(d) < 1 for d in masses):
            raise InvalidArgumentError("durations must be >= 1")
        cap = max(masses) if cap is None else cap
        pmf = np.zeros(cap)
        for d, m in masses.items():
            if d > cap:
                raise InvalidArgumentError(f"duration {d} beyond cap {cap}")
            pmf[d - 1] = m
        return cls(pmf, cap)

    def as_dict(self) -> dict[int, float]:
        return {d + 1: float(m) for d, m in enumerate(self.pmf) if m > 0}

    @property
    def support(self) -> np.ndarray:
        return np.arange(1, self.cap + 1)

    def cdf(self) -> np.ndarray:
        return np.cumsum(self.pmf)

    def quantile(self, q: float) -> int:
        """Smallest d with CDF(d) >= q (median at q = 0.5)."""
        if not 0.0 < q < 1.0:
            raise InvalidArgumentError(f"q must lie in (0, 1), got {q}")
        # survival form keeps the tie rule identical to the generation path
        surv = 1.0 - self.cdf()
        hit = np.flatnonzero(surv <= 1.0 - q)
        return int(hit[0]) + 1 if len(hit) else self.cap

    def median(self) -> int:
        return self.quantile(0.5)

    def mean(self) -> float:
        return float(np.dot(self.support, self.pmf))


def validate_utterance(u: Utterance,
                       silence_labels: Iterable[str] = DEFAULT_SILENCE_LABELS,
                       low: float = FEATURE_LOW, high: float = FEATURE_HIGH) -> list[str]:
    """Check an utterance against the domain invariants.

    Returns a list of human-readable violations; an empty list means the
    utterance is valid. Never raises.
    """
    problems = []
    silence = set(silence_labels)
    if len(u.phones) < 1:
        problems.append("utterance has no phones (P >= 1 required)")
    widths = {len(p.features) for p in u.phones}
    if len(widths) > 1:
        problems.append(f"phones carry feature vectors of differing widths {sorted(widths)}")
    for i, p in enumerate(u.phones):
        if p.ref_duration < 1:
            problems.append(f"phone {i} ({p.label}): ref_duration {p.ref_duration} < 1")
        feats = p.features
        if feats.size and (np.any(~np.isfinite(feats)) or feats.min() < low or feats.max() > high):
            worst = feats[np.argmax(np.abs(feats - 0.5))]
            problems.append(
                f"phone {i} ({p.label}): feature value {worst!r} outside "
                f"normalisation range [{low}, {high}]")
        is_sil = p.label in silence
        if is_sil != (p.phonetic_class is PhoneticClass.SILENCE):
            problems.append(
                f"phone {i} ({p.label}): phonetic_class {p.phonetic_class.value} "
                f"inconsistent with silence set")
    total = sum(p.ref_duration for p in u.phones)
    if u.total_frames != total:
        problems.append(f"total_frames {u.total_frames} != sum of phone durations {total}")
    return problems
