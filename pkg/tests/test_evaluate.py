import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from durhaz.core import EmptyEvaluationError, InvalidArgumentError, InvalidComparisonError, PhoneticClass
from durhaz.evaluate import (
    MetricAccumulator,
    MetricReport,
    Metrics,
    compare_systems,
    duration_metrics,
    histogram,
    read_report,
    write_comparison,
    write_histogram,
    write_report,
)

V, P, S, N = PhoneticClass.VOWEL, PhoneticClass.PLOSIVE, PhoneticClass.SILENCE, PhoneticClass.NASAL


def naive(pred, ref):
    p, r = np.asarray(pred, float), np.asarray(ref, float)
    e = p - r
    rmse = math.sqrt(np.mean(e ** 2))
    mae = np.mean(np.abs(e))
    corr = None
    if p.std() > 0 and r.std() > 0:
        corr = float(np.sum((p - p.mean()) * (r - r.mean()))
                     / math.sqrt(np.sum((p - p.mean()) ** 2) * np.sum((r - r.mean()) ** 2)))
    return rmse, mae, corr


def test_perfect_prediction():
    m = duration_metrics([3, 5, 9], [3, 5, 9], [V, V, P]).overall
    assert (m.rmse, m.mae) == (0.0, 0.0)
    assert m.corr == pytest.approx(1.0)


def test_hand_example():
    m = duration_metrics([2, 4], [1, 5], [V, V]).overall
    assert m.rmse == pytest.approx(1.0) and m.mae == pytest.approx(1.0)


def test_undefined_correlation():
    m = duration_metrics([4, 4, 4], [1, 5, 6], [V, V, V]).overall
    assert m.corr is None


def test_all_silence_is_empty():
    with pytest.raises(EmptyEvaluationError):
        duration_metrics([3, 4], [3, 4], [S, S])


def test_length_mismatch():
    with pytest.raises(InvalidArgumentError):
        duration_metrics([1, 2], [1], [V, V])


def test_silence_excluded():
    base = duration_metrics([3, 6], [4, 6], [V, P])
    with_sil = duration_metrics([3, 100, 6], [4, 1, 6], [V, S, P])
    assert base.overall == with_sil.overall


def test_class_rows():
    rep = duration_metrics([3, 6, 2, 9], [4, 6, 2, 7], [V, P, N, V])
    assert rep.rows["Vowels"].n == 2
    assert rep.rows["Consonants"].n == 2
    assert rep.rows["Plosives"].mae == 0.0
    assert "Affricates" not in rep.rows
    assert rep.rows["All"].n == 4


@settings(max_examples=50, deadline=None)
@given(st.lists(st.tuples(st.integers(1, 300), st.integers(1, 300)), min_size=2, max_size=200))
def test_accumulator_matches_naive(pairs):
    pred, ref = zip(*pairs)
    m = duration_metrics(pred, ref, [V] * len(pred)).overall
    rmse, mae, corr = naive(pred, ref)
    assert m.rmse == pytest.approx(rmse, abs=1e-12)
    assert m.mae == pytest.approx(mae, abs=1e-12)
    if corr is None:
        assert m.corr is None
    else:
        assert m.corr == pytest.approx(corr, abs=1e-12)


def test_accumulator_empty():
    with pytest.raises(EmptyEvaluationError):
        MetricAccumulator().result()


def test_constant_minimisers():
    """The best constant predictor under MAE is a median and under RMSE the mean."""
    rng = np.random.default_rng(8)
    ref = rng.geometric(0.2, size=101)
    grid = np.arange(1, ref.max() + 1)
    mae = [duration_metrics([c] * len(ref), ref, [V] * len(ref)).overall.mae for c in grid]
    assert grid[int(np.argmin(mae))] == int(np.median(ref))
    fine = np.linspace(1, ref.max(), 4001)
    rmse = [math.sqrt(np.mean((c - ref) ** 2)) for c in fine]
    assert fine[int(np.argmin(rmse))] == pytest.approx(ref.mean(), abs=fine[1] - fine[0])


# ---- histogram --------------------------------------------------------------------

def test_histogram_small():
    h = histogram([5, 5, 7])
    assert h.counts == [(5, 2), (7, 1)]
    assert (h.median, h.min, h.max) == (5, 5, 7)


def test_histogram_lower_middle_median():
    assert histogram(range(1, 101)).median == 50


def test_histogram_geometric_sample():
    d = np.random.default_rng(2).geometric(0.3, size=10_000)
    assert histogram(d).median == 2


def test_histogram_empty():
    with pytest.raises(InvalidArgumentError):
        histogram([])


def test_histogram_file(tmp_path):
    write_histogram(histogram([1, 1, 3]), tmp_path / "h.csv")
    assert (tmp_path / "h.csv").read_text() == "duration,count\n1,2\n3,1\n"


# ---- comparisons -----------------------------------------------------------------

def _report(rmse, mae, corr, fp="t"):
    return MetricReport({"All": Metrics(100, rmse, mae, corr)}, fp)


FOUR_SYSTEMS = {
    "Phone-DNN": _report(8.037, 4.759, 0.750),
    "Phone-LSTM": _report(7.789, 4.556, 0.765),
    "Frame-LSTM-I": _report(8.254, 4.610, 0.761),
    "Frame-LSTM-E": _report(8.294, 4.574, 0.754),
}


def test_identical_reports_all_tie():
    cmp = compare_systems({"a": _report(1, 1, 0.5), "b": _report(1, 1, 0.5), "c": _report(1, 1, 0.5)})
    for ranks in cmp.rankings.values():
        assert {r for _, r in ranks} == {1}
    assert cmp.tradeoffs == []


def test_four_system_tradeoffs():
    cmp = compare_systems(FOUR_SYSTEMS)
    assert ("Frame-LSTM-E", "Phone-DNN") in cmp.tradeoffs
    assert ("Frame-LSTM-I", "Phone-DNN") in cmp.tradeoffs
    # Phone-LSTM is best on every metric, so it is never on either side
    assert all("Phone-LSTM" not in pair for pair in cmp.tradeoffs)
    assert dict(cmp.rankings["rmse"])["Phone-LSTM"] == 1
    assert dict(cmp.rankings["corr"])["Phone-LSTM"] == 1


def test_uncrossed_pair_not_flagged():
    cmp = compare_systems({"a": _report(2, 1, 0.9), "b": _report(3, 2, 0.8)})
    assert cmp.tradeoffs == []


def test_crossed_pair_flagged_once():
    cmp = compare_systems({"frame": _report(3, 1, 0.9), "phone": _report(2, 2, 0.8)})
    assert cmp.tradeoffs == [("frame", "phone")]


def test_competition_ranking():
    cmp = compare_systems({"a": _report(1, 2, None), "b": _report(1, 1, 0.4), "c": _report(2, 3, 0.4)})
    assert dict(cmp.rankings["rmse"]) == {"a": 1, "b": 1, "c": 3}
    assert dict(cmp.rankings["corr"])["a"] == 3


def test_comparison_errors():
    with pytest.raises(InvalidComparisonError):
        compare_systems({"a": _report(1, 1, 1, "x"), "b": _report(1, 1, 1, "y")})
    with pytest.raises(InvalidComparisonError):
        compare_systems({"a": _report(1, 1, 1)})


def test_fingerprint_tracks_test_set():
    a = duration_metrics([1, 2], [3, 4], [V, V])
    b = duration_metrics([5, 5], [3, 4], [V, V])
    c = duration_metrics([1, 2], [3, 5], [V, V])
    assert a.fingerprint == b.fingerprint != c.fingerprint


def test_report_files(tmp_path):
    reports = {"x": duration_metrics([4, 4], [1, 5], [V, P]), "y": _report(2.5, 1.5, 0.25)}
    write_report(reports, tmp_path / "r.csv")
    back = read_report(tmp_path / "r.csv")
    assert back["x"].rows["Vowels"].corr is None
    assert back["y"].overall == reports["y"].overall
    assert "undefined" in (tmp_path / "r.csv").read_text()
    write_comparison(compare_systems(FOUR_SYSTEMS), tmp_path / "c.csv")
    text = (tmp_path / "c.csv").read_text().splitlines()
    assert text[0] == "record,metric,system,rank,versus"
    assert "tradeoff,mae-vs-rmse,Frame-LSTM-E,,Phone-DNN" in text
