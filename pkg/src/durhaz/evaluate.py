"""Objective duration metrics: RMSE, MAE and Pearson correlation, overall
and per phonetic class, with silence excluded."""
from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import NamedTuple, Sequence

import numpy as np

from .core import (
    EmptyEvaluationError,
    InvalidArgumentError,
    InvalidComparisonError,
    PhoneticClass,
)

UNDEFINED = "undefined"

#: Report rows in display order, mapped to the classes each row pools.
CLASS_GROUPS: dict[str, tuple[PhoneticClass, ...]] = {
    "All": tuple(c for c in PhoneticClass if c is not PhoneticClass.SILENCE),
    "Vowels": (PhoneticClass.VOWEL,),
    "Consonants": tuple(c for c in PhoneticClass if c.is_consonant),
    "Plosives": (PhoneticClass.PLOSIVE,),
    "Fricatives": (PhoneticClass.FRICATIVE,),
    "Nasals": (PhoneticClass.NASAL,),
    "Affricates": (PhoneticClass.AFFRICATE,),
    "Glides+liquids": (PhoneticClass.GLIDE_LIQUID,),
    "Other consonants": (PhoneticClass.OTHER,),
}


class Metrics(NamedTuple):
    n: int
    rmse: float
    mae: float
    corr: float | None   # None when either sequence has zero variance


class MetricAccumulator:
    """Single-pass accumulator (Welford updates for the correlation)."""

    def __init__(self):
        self.n = 0
        self.sum_sq = 0.0
        self.sum_abs = 0.0
        self.mean_p = 0.0
        self.mean_r = 0.0
        self.m2_p = 0.0
        self.m2_r = 0.0
        self.c_pr = 0.0

    def add(self, pred: float, ref: float) -> None:
        self.n += 1
        e = pred - ref
        self.sum_sq += e * e
        self.sum_abs += abs(e)
        dp = pred - self.mean_p
        self.mean_p += dp / self.n
        dr = ref - self.mean_r
        self.mean_r += dr / self.n
        self.m2_p += dp * (pred - self.mean_p)
        self.m2_r += dr * (ref - self.mean_r)
        self.c_pr += dp * (ref - self.mean_r)

    def result(self) -> Metrics:
        if self.n == 0:
            raise EmptyEvaluationError("no phones to evaluate")
        corr = None
        if self.m2_p > 0 and self.m2_r > 0:
            corr = self.c_pr / math.sqrt(self.m2_p * self.m2_r)
        return Metrics(self.n, math.sqrt(self.sum_sq / self.n), self.sum_abs / self.n, corr)


@dataclass
class MetricReport:
    rows: dict[str, Metrics]
    fingerprint: str = ""

    @property
    def overall(self) -> Metrics:
        return self.rows["All"]


def test_set_fingerprint(ref, classes) -> str:
    h = hashlib.sha256()
    for d, c in zip(ref, classes):
        h.update(f"{int(d)}:{PhoneticClass.parse(c).value};".encode())
    return h.hexdigest()[:16]


def duration_metrics(pred: Sequence[int], ref: Sequence[int],
                     classes: Sequence[PhoneticClass]) -> MetricReport:
    """Metrics of predicted vs reference durations, silence excluded.

    Rows are produced for every class group that has at least one phone.
    """
    if not (len(pred) == len(ref) == len(classes)):
        raise InvalidArgumentError(
            f"length mismatch: {len(pred)} predictions, {len(ref)} references, "
            f"{len(classes)} classes")
    classes = [PhoneticClass.parse(c) for c in classes]
    accs = {name: MetricAccumulator() for name in CLASS_GROUPS}
    members = {name: set(group) for name, group in CLASS_GROUPS.items()}
    for p, r, c in zip(pred, ref, classes):
        if c is PhoneticClass.SILENCE:
            continue
        for name, acc in accs.items():
            if c in members[name]:
                acc.add(float(p), float(r))
    if accs["All"].n == 0:
        raise EmptyEvaluationError("nothing left to evaluate after excluding silence")
    rows = {name: acc.result() for name, acc in accs.items() if acc.n > 0}
    return MetricReport(rows, test_set_fingerprint(ref, classes))


class Histogram(NamedTuple):
    counts: list[tuple[int, int]]
    median: int
    min: int
    max: int


def histogram(durations: Sequence[int]) -> Histogram:
    """Unit-width duration histogram; the median is the lower middle value."""
    d = np.sort(np.asarray(durations, dtype=np.int64))
    if len(d) == 0:
        raise InvalidArgumentError("histogram of an empty sequence")
    values, counts = np.unique(d, return_counts=True)
    return Histogram([(int(v), int(c)) for v, c in zip(values, counts)],
                     int(d[(len(d) - 1) // 2]), int(d[0]), int(d[-1]))


@dataclass
class Comparison:
    rankings: dict[str, list[tuple[str, int]]]
    # (a, b): a has lower MAE than b while b has lower RMSE than a
    tradeoffs: list[tuple[str, str]] = field(default_factory=list)


def _rank(values: dict[str, float], higher_is_better: bool) -> list[tuple[str, int]]:
    key = (lambda v: -v) if higher_is_better else (lambda v: v)
    order = sorted(values, key=lambda s: (key(values[s]), s))
    ranks = []
    for i, s in enumerate(order):
        if i and values[s] == values[order[i - 1]]:
            ranks.append((s, ranks[-1][1]))
        else:
            ranks.append((s, i + 1))
    return ranks


def compare_systems(reports: dict[str, MetricReport], row: str = "All") -> Comparison:
    """Rank systems per metric and flag MAE/RMSE trade-offs between pairs."""
    if len(reports) < 2:
        raise InvalidComparisonError("need at least two systems to compare")
    prints = {r.fingerprint for r in reports.values()}
    if len(prints) != 1:
        raise InvalidComparisonError("systems were evaluated on different test sets")
    if any(row not in r.rows for r in reports.values()):
        raise InvalidComparisonError(f"row {row!r} missing from a report")
    m = {name: r.rows[row] for name, r in reports.items()}
    rankings = {
        "rmse": _rank({s: v.rmse for s, v in m.items()}, False),
        "mae": _rank({s: v.mae for s, v in m.items()}, False),
        "corr": _rank({s: (v.corr if v.corr is not None else -math.inf) for s, v in m.items()},
                      True),
    }
    tradeoffs = [(a, b) for a in m for b in m
                 if a != b and m[a].mae < m[b].mae and m[a].rmse > m[b].rmse]
    return Comparison(rankings, tradeoffs)


def _fmt(x) -> str:
    return UNDEFINED if x is None else repr(float(x))


def write_report(reports: dict[str, MetricReport], path) -> None:
    lines = ["system,class,n,rmse,mae,corr"]
    for system, rep in reports.items():
        for cls, mt in rep.rows.items():
            lines.append(f"{system},{cls},{mt.n},{_fmt(mt.rmse)},{_fmt(mt.mae)},{_fmt(mt.corr)}")
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def read_report(path) -> dict[str, MetricReport]:
    out: dict[str, MetricReport] = {}
    for line in Path(path).read_text(encoding="utf-8").splitlines()[1:]:
        system, cls, n, rmse, mae, corr = line.split(",")
        rep = out.setdefault(system, MetricReport({}))
        rep.rows[cls] = Metrics(int(n), float(rmse), float(mae),
                                None if corr == UNDEFINED else float(corr))
    return out


def write_comparison(cmp: Comparison, path) -> None:
    # tradeoff rows: `system` has the better MAE, `versus` the better RMSE
    lines = ["record,metric,system,rank,versus"]
    for metric, ranks in cmp.rankings.items():
        lines += [f"rank,{metric},{s},{r}," for s, r in ranks]
    lines += [f"tradeoff,mae-vs-rmse,{a},,{b}" for a, b in cmp.tradeoffs]
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def write_histogram(hist: Histogram, path) -> None:
    lines = ["duration,count"] + [f"{d},{c}" for d, c in hist.counts]
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")
