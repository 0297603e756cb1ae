"""Corpus ingestion, frame expansion, normalisation and synthetic corpora.

Alignment files are HTK-style label files: one segment per line,
``start end label`` with times in 100 ns units. Feature files hold one
comma-separated row per phone, ``label,f1,f2,...``, in alignment order.
"""
from __future__ import annotations

import math
import re
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
from scipy import stats
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_array, check_is_fitted

from .core import (
    DEFAULT_CAP,
    DEFAULT_SILENCE_LABELS,
    FEATURE_HIGH,
    FEATURE_LOW,
    DurationDistribution,
    FrameDataset,
    InvalidArgumentError,
    InvalidSpecError,
    ParseError,
    PhoneRecord,
    PhoneticClass,
    Utterance,
    classify_phone,
)

HTK_UNITS_PER_MS = 10_000
DEFAULT_FRAME_SHIFT_MS = 5.0
DEFAULT_COUNTER_SCALE = 100.0


# --------------------------------------------------------------------------
# duration distribution descriptors
# --------------------------------------------------------------------------

class Descriptor:
    """A duration distribution on the positive integers."""

    def masses(self, cap: int) -> np.ndarray:
        """Untruncated probabilities of durations 1..cap."""
        raise NotImplementedError

    def distribution(self, cap: int = DEFAULT_CAP) -> DurationDistribution:
        """PMF truncated at ``cap``; mass beyond the cap is moved onto it."""
        m = np.clip(self.masses(cap), 0.0, None)
        if not m.sum() > 0:
            raise InvalidSpecError(f"{self} has no mass on [1, {cap}]")
        m[-1] += max(0.0, 1.0 - m.sum())
        return DurationDistribution(m / m.sum(), cap)


@dataclass(frozen=True)
class Geometric(Descriptor):
    """``P(D = d) = p (1 - p)^(d - 1)`` for ``d >= 1``."""

    p: float

    def __post_init__(self):
        if not 0 < self.p <= 1:
            raise InvalidSpecError(f"geometric p must be in (0, 1], got {self.p}")

    def masses(self, cap):
        d = np.arange(1, cap + 1)
        return self.p * (1 - self.p) ** (d - 1)

    def __str__(self):
        return f"geometric({self.p!r})"


@dataclass(frozen=True)
class NegBinomial(Descriptor):
    """One plus a negative-binomial count of failures before ``r`` successes."""

    r: float
    p: float

    def __post_init__(self):
        if not self.r > 0 or not 0 < self.p <= 1:
            raise InvalidSpecError(f"negbinomial needs r > 0 and p in (0, 1], got {self.r}, {self.p}")

    def masses(self, cap):
        return stats.nbinom.pmf(np.arange(cap), self.r, self.p)

    def __str__(self):
        return f"negbinomial({self.r!r},{self.p!r})"


@dataclass(frozen=True)
class DiscretisedLogNormal(Descriptor):
    """``max(1, round(X))`` with ``log X ~ N(mu, sigma^2)``."""

    mu: float
    sigma: float

    def __post_init__(self):
        if not self.sigma > 0:
            raise InvalidSpecError(f"lognormal sigma must be positive, got {self.sigma}")

    def masses(self, cap):
        edges = np.log(np.arange(1, cap + 1) + 0.5)
        cdf = stats.norm.cdf((edges - self.mu) / self.sigma)
        return np.diff(np.concatenate(([0.0], cdf)))

    def __str__(self):
        return f"lognormal({self.mu!r},{self.sigma!r})"


@dataclass(frozen=True)
class PointMass(Descriptor):
    d: int

    def __post_init__(self):
        if int(self.d) != self.d or self.d < 1:
            raise InvalidSpecError(f"point mass needs an integer duration >= 1, got {self.d}")

    def masses(self, cap):
        m = np.zeros(cap)
        if self.d <= cap:
            m[self.d - 1] = 1.0
        return m

    def __str__(self):
        return f"point({self.d})"


@dataclass(frozen=True)
class Mixture(Descriptor):
    components: tuple

    def __post_init__(self):
        comps = tuple((float(w), c) for w, c in self.components)
        if not comps:
            raise InvalidSpecError("mixture needs at least one component")
        if any(w < 0 for w, _ in comps) or abs(sum(w for w, _ in comps) - 1.0) > 1e-9:
            raise InvalidSpecError("mixture weights must be non-negative and sum to 1")
        object.__setattr__(self, "components", comps)

    def masses(self, cap):
        return sum(w * c.masses(cap) for w, c in self.components)

    def distribution(self, cap=DEFAULT_CAP):
        return DurationDistribution(
            sum(w * c.distribution(cap).pmf for w, c in self.components if w > 0), cap)

    def __str__(self):
        return "mixture(" + ",".join(f"{w!r}*{c}" for w, c in self.components) + ")"


_DESCRIPTOR_NAMES = {
    "geometric": Geometric, "geom": Geometric,
    "negbinomial": NegBinomial, "negbin": NegBinomial,
    "lognormal": DiscretisedLogNormal,
    "point": PointMass, "pointmass": PointMass,
}


def parse_descriptor(text: str) -> Descriptor:
    """Parse ``geometric(0.3)``, ``mixture(0.6*point(5), 0.4*point(15))`` etc."""
    pos = 0
    s = text.replace(" ", "")

    def parse_one():
        nonlocal pos
        m = re.compile(r"([a-zA-Z_]+)\(").match(s, pos)
        if not m:
            raise InvalidSpecError(f"expected a distribution at {s[pos:]!r} in {text!r}")
        name = m.group(1).lower()
        pos = m.end()
        if name == "mixture":
            comps = []
            while True:
                wm = re.compile(r"([0-9.eE+-]+)\*").match(s, pos)
                if not wm:
                    raise InvalidSpecError(f"mixture component needs 'weight*' in {text!r}")
                pos = wm.end()
                comps.append((float(wm.group(1)), parse_one()))
                if s.startswith(",", pos):
                    pos += 1
                    continue
                break
            expect(")")
            return Mixture(tuple(comps))
        if name not in _DESCRIPTOR_NAMES:
            raise InvalidSpecError(f"unknown distribution {name!r}")
        am = re.compile(r"([^()]*)\)").match(s, pos)
        if not am:
            raise InvalidSpecError(f"unterminated argument list in {text!r}")
        pos = am.end()
        try:
            args = [float(a) for a in am.group(1).split(",") if a]
        except ValueError as exc:
            raise InvalidSpecError(f"bad numeric argument in {text!r}") from exc
        cls = _DESCRIPTOR_NAMES[name]
        if cls is PointMass:
            args = [int(a) if float(a).is_integer() else a for a in args]
        try:
            return cls(*args)
        except TypeError as exc:
            raise InvalidSpecError(f"wrong number of arguments in {text!r}") from exc

    def expect(ch):
        nonlocal pos
        if not s.startswith(ch, pos):
            raise InvalidSpecError(f"expected {ch!r} at position {pos} in {text!r}")
        pos += 1

    out = parse_one()
    if pos != len(s):
        raise InvalidSpecError(f"trailing text {s[pos:]!r} in {text!r}")
    return out


# --------------------------------------------------------------------------
# synthetic corpora
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class PhoneSpec:
    label: str
    phonetic_class: PhoneticClass
    durations: Descriptor

    def __post_init__(self):
        object.__setattr__(self, "phonetic_class", PhoneticClass.parse(self.phonetic_class))


@dataclass(frozen=True)
class CorpusSpec:
    phones: tuple
    n_utterances: int = 100
    phones_per_utterance: tuple = (5, 15)
    seed: int = 0
    cap: int = DEFAULT_CAP
    id_prefix: str = "utt"

    def __post_init__(self):
        object.__setattr__(self, "phones", tuple(self.phones))
        lo, hi = self.phones_per_utterance
        if not self.phones:
            raise InvalidSpecError("phone inventory is empty")
        if len({p.label for p in self.phones}) != len(self.phones):
            raise InvalidSpecError("phone labels must be unique")
        if not 1 <= lo <= hi:
            raise InvalidSpecError(f"bad phones_per_utterance range {self.phones_per_utterance}")
        if self.n_utterances < 1 or self.cap < 1:
            raise InvalidSpecError("n_utterances and cap must be >= 1")

    @property
    def class_table(self) -> dict[str, PhoneticClass]:
        return {p.label: p.phonetic_class for p in self.phones}

    @property
    def silence_labels(self) -> frozenset:
        return frozenset(p.label for p in self.phones if p.phonetic_class is PhoneticClass.SILENCE)


@dataclass(frozen=True)
class GroundTruth:
    distribution: DurationDistribution
    median: int
    mean: float


def parse_inventory(text: str) -> tuple[PhoneSpec, ...]:
    """Parse ``label:Class:descriptor; label:Class:descriptor; ...``."""
    phones = []
    for item in text.split(";"):
        item = item.strip()
        if not item:
            continue
        parts = item.split(":", 2)
        if len(parts) != 3:
            raise InvalidSpecError(f"inventory entry {item!r} is not label:class:distribution")
        label, cls, desc = (x.strip() for x in parts)
        try:
            pcls = PhoneticClass.parse(cls)
        except InvalidArgumentError as exc:
            raise InvalidSpecError(str(exc)) from exc
        phones.append(PhoneSpec(label, pcls, parse_descriptor(desc)))
    return tuple(phones)


def context_features(labels: Sequence[str], inventory: Sequence[str]) -> np.ndarray:
    """Desk-scale linguistic features: one-hot of the current, left and right
    phone (the neighbours with an extra boundary slot) plus relative position."""
    index = {lab: i for i, lab in enumerate(inventory)}
    V = len(inventory)
    P = len(labels)
    feats = np.zeros((P, V + 2 * (V + 1) + 1))
    for p, lab in enumerate(labels):
        feats[p, index[lab]] = 1.0
        left = index[labels[p - 1]] if p > 0 else V
        right = index[labels[p + 1]] if p < P - 1 else V
        feats[p, V + left] = 1.0
        feats[p, 2 * V + 1 + right] = 1.0
        feats[p, -1] = p / (P - 1) if P > 1 else 0.0
    return feats


def ground_truth_table(spec: CorpusSpec) -> dict[str, GroundTruth]:
    table = {}
    for ph in spec.phones:
        dist = ph.durations.distribution(spec.cap)
        table[ph.label] = GroundTruth(dist, dist.median(), dist.mean())
    return table


def synth_corpus(spec: CorpusSpec) -> tuple[list[Utterance], dict[str, GroundTruth]]:
    """Sample utterances whose durations are i.i.d. per phone identity.

    Returns the utterances (with raw, unnormalised features) and the exact
    ground-truth distribution of every phone in the inventory.
    """
    truth = ground_truth_table(spec)
    rng = np.random.default_rng(spec.seed)
    labels = [p.label for p in spec.phones]
    classes = spec.class_table
    cdfs = {lab: np.cumsum(truth[lab].distribution.pmf) for lab in labels}
    lo, hi = spec.phones_per_utterance
    width = len(str(spec.n_utterances - 1))
    utts = []
    for k in range(spec.n_utterances):
        P = int(rng.integers(lo, hi + 1))
        seq = [labels[i] for i in rng.integers(0, len(labels), size=P)]
        u = rng.random(P)
        durs = [min(int(np.searchsorted(cdfs[lab], x, side="right")) + 1, spec.cap)
                for lab, x in zip(seq, u)]
        feats = context_features(seq, labels)
        phones = [PhoneRecord(lab, f, classes[lab], d) for lab, f, d in zip(seq, feats, durs)]
        utts.append(Utterance.from_phones(f"{spec.id_prefix}{k:0{width}d}", phones))
    return utts, truth


# --------------------------------------------------------------------------
# file formats
# --------------------------------------------------------------------------

_STATE_RE = re.compile(r"^(.*)\[(\d+)\]$")
_FULLCONTEXT_RE = re.compile(r"^[^-]*-([^+]+)\+")


def _phone_label(raw: str) -> tuple[str, int | None]:
    state = None
    m = _STATE_RE.match(raw)
    if m:
        raw, state = m.group(1), int(m.group(2))
    m = _FULLCONTEXT_RE.match(raw)
    if m:
        raw = m.group(1)
    return raw, state


def parse_alignment(content: str, frame_shift_ms: float = DEFAULT_FRAME_SHIFT_MS,
                    class_table: dict | None = None,
                    silence_labels: Iterable[str] = DEFAULT_SILENCE_LABELS,
                    utt_id: str = "", path: str | None = None) -> Utterance:
    """Parse an HTK-style alignment into an :class:`Utterance`.

    Full-context labels are reduced to their centre phone, and consecutive
    state-level lines (``label[2]``, ``label[3]``, ...) are merged into one
    phone. The returned phones carry empty feature vectors; see
    :func:`attach_features`.
    """
    shift = frame_shift_ms * HTK_UNITS_PER_MS
    silence = frozenset(silence_labels)
    segs = []   # [label, start_frame, end_frame, first_line, last_state]
    prev_end = None
    for lineno, line in enumerate(content.splitlines(), start=1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        fields = line.split()
        if len(fields) < 3:
            raise ParseError(f"expected 'start end label', got {line!r}", lineno, path)
        try:
            start, end = float(fields[0]), float(fields[1])
        except ValueError:
            raise ParseError(f"non-numeric time in {line!r}", lineno, path) from None
        if end <= start:
            raise ParseError(f"zero-length or reversed segment {start:g}-{end:g}", lineno, path)
        if prev_end is not None and start != prev_end:
            raise ParseError(
                f"non-contiguous boundary: segment starts at {start:g} but previous ended "
                f"at {prev_end:g}", lineno, path)
        prev_end = end
        label, state = _phone_label(fields[2])
        f0, f1 = round(start / shift), round(end / shift)
        if f1 <= f0:
            raise ParseError(f"segment {start:g}-{end:g} is shorter than one frame", lineno, path)
        merge = (segs and state is not None and segs[-1][4] is not None
                 and segs[-1][0] == label and state > segs[-1][4])
        if merge:
            segs[-1][2] = f1
            segs[-1][4] = state
        else:
            segs.append([label, f0, f1, lineno, state])
    if not segs:
        raise ParseError("alignment contains no segments", None, path)
    phones = [PhoneRecord(lab, np.zeros(0), classify_phone(lab, class_table, silence), f1 - f0)
              for lab, f0, f1, _, _ in segs]
    return Utterance.from_phones(utt_id, phones)


def format_alignment(u: Utterance, frame_shift_ms: float = DEFAULT_FRAME_SHIFT_MS) -> str:
    shift = int(round(frame_shift_ms * HTK_UNITS_PER_MS))
    lines, t = [], 0
    for p in u.phones:
        lines.append(f"{t * shift} {(t + p.ref_duration) * shift} {p.label}")
        t += p.ref_duration
    return "\n".join(lines) + "\n"


def parse_features(content: str, path: str | None = None) -> tuple[list[str], np.ndarray]:
    labels, rows = [], []
    for lineno, line in enumerate(content.splitlines(), start=1):
        line = line.strip()
        if not line:
            continue
        fields = [f.strip() for f in line.split(",")]
        try:
            rows.append([float(v) for v in fields[1:]])
        except ValueError:
            raise ParseError(f"non-numeric feature in {line!r}", lineno, path) from None
        labels.append(fields[0])
        if len(rows[-1]) != len(rows[0]):
            raise ParseError(f"row has {len(rows[-1])} features, expected {len(rows[0])}",
                             lineno, path)
    return labels, np.array(rows, dtype=float).reshape(len(rows), -1)


def format_features(u: Utterance) -> str:
    return "".join(",".join([p.label, *(repr(float(v)) for v in p.features)]) + "\n"
                   for p in u.phones)


def attach_features(u: Utterance, labels: Sequence[str], features: np.ndarray,
                    path: str | None = None) -> Utterance:
    if len(labels) != len(u.phones):
        raise ParseError(f"feature file has {len(labels)} rows but alignment has "
                         f"{len(u.phones)} phones", None, path)
    for i, (lab, p) in enumerate(zip(labels, u.phones)):
        if lab != p.label:
            raise ParseError(f"feature row label {lab!r} does not match phone {p.label!r}",
                             i + 1, path)
    return u.with_features(features)


def load_utterance(lab_path, feat_path=None, frame_shift_ms: float = DEFAULT_FRAME_SHIFT_MS,
                   class_table=None, silence_labels=DEFAULT_SILENCE_LABELS) -> Utterance:
    lab_path = Path(lab_path)
    feat_path = lab_path.with_suffix(".csv") if feat_path is None else Path(feat_path)
    u = parse_alignment(lab_path.read_text(encoding="utf-8"), frame_shift_ms, class_table,
                        silence_labels, utt_id=lab_path.stem, path=str(lab_path))
    if not feat_path.exists():
        raise ParseError("missing feature file", None, str(feat_path))
    labels, feats = parse_features(feat_path.read_text(encoding="utf-8"), str(feat_path))
    return attach_features(u, labels, feats, str(feat_path))


def load_corpus(directory, frame_shift_ms: float = DEFAULT_FRAME_SHIFT_MS,
                class_table=None, silence_labels=DEFAULT_SILENCE_LABELS) -> list[Utterance]:
    """Load every ``<id>.lab`` / ``<id>.csv`` pair in a directory, sorted by id."""
    directory = Path(directory)
    if not directory.is_dir():
        raise FileNotFoundError(f"corpus directory not found: {directory}")
    labs = sorted(directory.glob("*.lab"))
    if not labs:
        raise ParseError("no .lab alignment files", None, str(directory))
    return [load_utterance(p, None, frame_shift_ms, class_table, silence_labels) for p in labs]


def write_corpus(utts: Sequence[Utterance], directory,
                 frame_shift_ms: float = DEFAULT_FRAME_SHIFT_MS) -> list[Path]:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    written = []
    for u in utts:
        lab = directory / f"{u.id}.lab"
        csv = directory / f"{u.id}.csv"
        lab.write_text(format_alignment(u, frame_shift_ms), encoding="utf-8")
        csv.write_text(format_features(u), encoding="utf-8")
        written += [lab, csv]
    return written


def write_ground_truth(truth: dict[str, GroundTruth], path) -> None:
    lines = ["label,d,pmf"]
    for label, gt in truth.items():
        for d, m in gt.distribution.as_dict().items():
            lines.append(f"{label},{d},{m!r}")
    for label, gt in truth.items():
        lines.append(f"{label},median,{gt.median}")
        lines.append(f"{label},mean,{gt.mean!r}")
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def read_ground_truth(path) -> dict[str, dict]:
    """Read a ground-truth CSV into ``{label: {"pmf": {d: p}, "median": .., "mean": ..}}``."""
    out: dict[str, dict] = {}
    for line in Path(path).read_text(encoding="utf-8").splitlines()[1:]:
        label, key, value = line.split(",")
        entry = out.setdefault(label, {"pmf": {}})
        if key == "median":
            entry["median"] = int(value)
        elif key == "mean":
            entry["mean"] = float(value)
        else:
            entry["pmf"][int(key)] = float(value)
    return out


# --------------------------------------------------------------------------
# frame expansion and normalisation
# --------------------------------------------------------------------------

def encode_counter(n, scale: float = DEFAULT_COUNTER_SCALE) -> np.ndarray:
    """Within-phone frame counter as an input feature: ``n / scale`` clamped
    to the normalised feature range."""
    return np.clip(np.asarray(n, dtype=float) / scale, FEATURE_LOW, FEATURE_HIGH)


def expand_to_frames(u: Utterance, augmented: bool = False,
                     counter_scale: float = DEFAULT_COUNTER_SCALE) -> FrameDataset:
    durs = u.durations
    phone_index = np.repeat(np.arange(len(durs)), durs)
    starts = np.concatenate(([0], np.cumsum(durs)[:-1]))
    counter = np.arange(len(phone_index)) - np.repeat(starts, durs) + 1
    targets = np.zeros(len(phone_index))
    targets[np.cumsum(durs) - 1] = 1.0
    inputs = u.features[phone_index]
    if augmented:
        inputs = np.hstack([inputs, encode_counter(counter, counter_scale)[:, None]])
    return FrameDataset(inputs, targets, phone_index, counter, augmented)


class FeatureNormaliser(TransformerMixin, BaseEstimator):
    """Per-dimension affine map of training min/max onto ``[low, high]``.

    Constant dimensions map to the midpoint of the range. Values outside
    the training range are clamped.

    Attributes
    ----------
    data_min_, data_max_ : ndarray of shape (n_features,)
        Per-dimension training extremes.
    """

    def __init__(self, low=FEATURE_LOW, high=FEATURE_HIGH):
        self.low = low
        self.high = high

    def fit(self, X, y=None):
        X = check_array(X, ensure_min_features=0)
        if len(X) == 0:
            raise InvalidArgumentError("cannot fit normalisation on an empty corpus")
        self.data_min_ = X.min(axis=0)
        self.data_max_ = X.max(axis=0)
        self.n_features_in_ = X.shape[1]
        return self

    def _raw(self, X):
        check_is_fitted(self)
        X = check_array(X, ensure_min_features=0, ensure_min_samples=0)
        if X.shape[1] != self.n_features_in_:
            raise InvalidArgumentError(
                f"expected {self.n_features_in_} features, got {X.shape[1]}")
        span = self.data_max_ - self.data_min_
        const = span == 0
        safe = np.where(const, 1.0, span)
        t = (X - self.data_min_) / safe
        # this form hits both endpoints exactly at the training extremes
        Z = self.low * (1.0 - t) + self.high * t
        return np.where(const, 0.5 * (self.low + self.high), Z)

    def transform(self, X):
        return np.clip(self._raw(X), self.low, self.high)

    def clamp_count(self, X) -> int:
        """Number of entries of ``X`` that :meth:`transform` would clamp."""
        Z = self._raw(X)
        return int(np.sum((Z < self.low) | (Z > self.high)))

    def to_dict(self) -> dict:
        check_is_fitted(self)
        return {"low": self.low, "high": self.high,
                "data_min": self.data_min_.tolist(), "data_max": self.data_max_.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> "FeatureNormaliser":
        obj = cls(d["low"], d["high"])
        obj.data_min_ = np.array(d["data_min"], dtype=float)
        obj.data_max_ = np.array(d["data_max"], dtype=float)
        obj.n_features_in_ = len(obj.data_min_)
        return obj


def stack_features(utts: Sequence[Utterance]) -> np.ndarray:
    return np.vstack([u.features for u in utts])


def normalise_features(train: Sequence[Utterance], low=FEATURE_LOW, high=FEATURE_HIGH):
    """Fit normalisation on ``train`` and apply it; returns ``(utts, normaliser)``."""
    if not train:
        raise InvalidArgumentError("cannot normalise an empty corpus")
    norm = FeatureNormaliser(low, high).fit(stack_features(train))
    return [u.with_features(norm.transform(u.features)) for u in train], norm


def apply_normalisation(utts: Sequence[Utterance], norm: FeatureNormaliser):
    """Normalise held-out utterances; returns ``(utts, n_clamped)``."""
    out, clamped = [], 0
    for u in utts:
        clamped += norm.clamp_count(u.features)
        out.append(u.with_features(norm.transform(u.features)))
    return out, clamped


def split_corpus(corpus: Sequence[Utterance], dev_fraction: float = 0.05, seed: int = 0):
    """Utterance-level random ``(train, dev)`` split, deterministic for a seed."""
    if not 0.0 < dev_fraction < 1.0:
        raise InvalidArgumentError(f"dev_fraction must lie in (0, 1), got {dev_fraction}")
    n = len(corpus)
    if n < 2:
        raise InvalidArgumentError("need at least 2 utterances to split")
    n_dev = min(n - 1, max(1, int(math.floor(dev_fraction * n + 0.5))))
    order = np.random.default_rng(seed).permutation(n)
    dev_idx = set(order[:n_dev].tolist())
    train = [u for i, u in enumerate(corpus) if i not in dev_idx]
    dev = [u for i, u in enumerate(corpus) if i in dev_idx]
    return train, dev
