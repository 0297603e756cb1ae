import numpy as np
import pytest

from durhaz.core import (
    DurationDistribution,
    HazardSequence,
    InvalidArgumentError,
    InvalidHazardError,
    PhoneRecord,
    PhoneticClass,
    Utterance,
    classify_phone,
    durations_from_targets,
    validate_utterance,
)
from durhaz.datasets import attach_features, expand_to_frames, parse_alignment, parse_features

from conftest import make_utterance


def test_validate_consistent_singleton():
    assert validate_utterance(make_utterance([5])) == []


def test_validate_total_frames_mismatch():
    u = make_utterance([5, 3])
    bad = Utterance(u.id, u.phones, 9)
    problems = validate_utterance(bad)
    assert len(problems) == 1
    assert "total_frames" in problems[0]


def test_validate_unnormalised_feature_from_ingested_file():
    u = parse_alignment("0 250000 a\n")
    labels, feats = parse_features("a,0.5,1.5\n")
    u = attach_features(u, labels, feats)
    problems = validate_utterance(u)
    assert len(problems) == 1
    assert "normalisation range" in problems[0]
    assert "phone 0" in problems[0]


def test_validate_bad_duration_and_silence_class():
    phones = [PhoneRecord("sil", [0.5], PhoneticClass.VOWEL, 0)]
    problems = validate_utterance(Utterance("x", phones, 0))
    assert any("ref_duration" in p for p in problems)
    assert any("silence" in p for p in problems)


def test_validate_empty_utterance():
    assert any("no phones" in p for p in validate_utterance(Utterance("x", (), 0)))


def test_classify_phone_uses_table_and_silence_set():
    assert classify_phone("sil") is PhoneticClass.SILENCE
    assert classify_phone("aa") is PhoneticClass.VOWEL
    assert classify_phone("zz") is PhoneticClass.OTHER
    table = {"zz": PhoneticClass.NASAL}
    assert classify_phone("zz", table) is PhoneticClass.NASAL


def test_phonetic_class_parse():
    assert PhoneticClass.parse("glide_liquid") is PhoneticClass.GLIDE_LIQUID
    assert PhoneticClass.parse("Vowel") is PhoneticClass.VOWEL
    with pytest.raises(InvalidArgumentError):
        PhoneticClass.parse("Click")


def test_records_are_immutable():
    p = PhoneRecord("a", [0.1, 0.2], "Vowel", 3)
    with pytest.raises(ValueError):
        p.features[0] = 1.0
    with pytest.raises(Exception):
        p.ref_duration = 4


@pytest.mark.parametrize("seed", range(20))
def test_frame_round_trip_and_counter(seed):
    rng = np.random.default_rng(seed)
    durs = rng.integers(1, 30, size=rng.integers(1, 12)).tolist()
    u = make_utterance(durs)
    fd = expand_to_frames(u)
    assert durations_from_targets(fd.targets) == durs
    assert int(fd.targets.sum()) == len(durs)
    for p, d in enumerate(durs):
        assert fd.counter[fd.phone_index == p].tolist() == list(range(1, d + 1))


def test_hazard_sequence_validation():
    with pytest.raises(InvalidHazardError):
        HazardSequence([0.5, 0.0])
    with pytest.raises(InvalidHazardError):
        HazardSequence([1.2])
    h = HazardSequence.clamped([0.0, 0.0, 1.0])
    assert h.probs[0] == pytest.approx(1e-6)
    assert np.all(np.diff(h.survival) <= 0)


def test_duration_distribution_checks():
    with pytest.raises(InvalidArgumentError):
        DurationDistribution([0.5, 0.4], 2)
    with pytest.raises(InvalidArgumentError):
        DurationDistribution([1.0], 0)
    d = DurationDistribution.from_dict({5: 0.6, 15: 0.4})
    assert d.cap == 15
    assert d.median() == 5
    assert d.mean() == pytest.approx(9.0)
