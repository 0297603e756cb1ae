import math
from pathlib import Path

import numpy as np
import pytest
from scipy import stats

from durhaz.core import InvalidArgumentError, InvalidSpecError, ParseError, PhoneticClass
from durhaz.datasets import (
    CorpusSpec,
    DiscretisedLogNormal,
    FeatureNormaliser,
    Geometric,
    Mixture,
    NegBinomial,
    PhoneSpec,
    PointMass,
    apply_normalisation,
    context_features,
    encode_counter,
    expand_to_frames,
    format_alignment,
    load_corpus,
    load_utterance,
    normalise_features,
    parse_alignment,
    parse_descriptor,
    parse_inventory,
    read_ground_truth,
    split_corpus,
    synth_corpus,
    write_corpus,
    write_ground_truth,
)

from conftest import make_utterance

FIXTURES = Path(__file__).parent / "fixtures"


# ---- parse_alignment ---------------------------------------------------------

def test_parse_two_lines_at_5ms():
    u = parse_alignment("0 500000 a\n500000 1300000 b\n")
    assert u.durations.tolist() == [10, 16]
    assert u.total_frames == 26


def test_parse_shuffled_lines_names_boundary():
    with pytest.raises(ParseError) as err:
        parse_alignment("500000 1300000 b\n0 500000 a\n")
    assert err.value.line == 2
    assert "non-contiguous" in str(err.value)


def test_parse_zero_length_segment():
    with pytest.raises(ParseError) as err:
        parse_alignment("0 500000 a\n500000 500000 b\n")
    assert err.value.line == 2


def test_parse_malformed_line():
    with pytest.raises(ParseError):
        parse_alignment("0 a\n")


def test_parse_htk_fixture_hand_computed():
    u = load_utterance(FIXTURES / "monophone.lab")
    # 1500000/50000 = 30, then 16, 10, 16, 48 frames
    assert u.labels == ["sil", "h", "@", "l", "ou"]
    assert u.durations.tolist() == [30, 16, 10, 16, 48]
    assert len(u.phones) == 5
    assert u.total_frames == 6000000 // 50000
    assert u.classes[0] is PhoneticClass.SILENCE
    assert u.classes[1] is PhoneticClass.FRICATIVE
    assert u.features.shape == (5, 3)


def test_state_level_lines_are_merged():
    mono = load_utterance(FIXTURES / "monophone.lab")
    states = load_utterance(FIXTURES / "states.lab", FIXTURES / "monophone.csv")
    assert states.durations.tolist() == mono.durations.tolist()


def test_repeated_phone_in_state_alignment_not_merged():
    text = "0 100000 a[2]\n100000 200000 a[3]\n200000 300000 a[2]\n300000 400000 a[3]\n"
    assert parse_alignment(text).durations.tolist() == [4, 4]


def test_frame_shift_configurable():
    assert parse_alignment("0 500000 a\n", frame_shift_ms=10).durations.tolist() == [5]


def test_feature_label_mismatch(tmp_path):
    (tmp_path / "x.lab").write_text("0 500000 a\n")
    (tmp_path / "x.csv").write_text("b,1.0\n")
    with pytest.raises(ParseError):
        load_utterance(tmp_path / "x.lab")


def test_alignment_round_trip():
    u = make_utterance([3, 1, 7], labels=["a", "b", "c"])
    assert parse_alignment(format_alignment(u)).durations.tolist() == [3, 1, 7]


# ---- expand_to_frames ----------------------------------------------------------

def test_expand_one_phone():
    fd = expand_to_frames(make_utterance([3]))
    assert fd.targets.tolist() == [0, 0, 1]
    assert fd.counter.tolist() == [1, 2, 3]


def test_expand_two_phones():
    fd = expand_to_frames(make_utterance([1, 2]))
    assert fd.targets.tolist() == [1, 0, 1]
    assert fd.counter.tolist() == [1, 1, 2]
    assert fd.phone_index.tolist() == [0, 1, 1]


@pytest.mark.parametrize("seed", range(10))
def test_expand_row_structure(seed):
    rng = np.random.default_rng(seed)
    P = int(rng.integers(1, 8))
    durs = rng.integers(1, 12, size=P).tolist()
    feats = rng.uniform(0.01, 0.99, size=(P, 4))
    u = make_utterance(durs, features=feats)
    plain = expand_to_frames(u, augmented=False)
    aug = expand_to_frames(u, augmented=True, counter_scale=100)
    assert plain.inputs.shape == (sum(durs), 4)
    assert aug.inputs.shape == (sum(durs), 5)
    for p in range(P):
        rows = plain.inputs[plain.phone_index == p]
        assert np.all(rows == rows[0])
        arows = aug.inputs[aug.phone_index == p]
        assert np.all(arows[:, :4] == feats[p])
        np.testing.assert_allclose(arows[:, 4], np.clip(np.arange(1, durs[p] + 1) / 100, 0.01, 0.99))


def test_counter_encoding_clamped():
    assert encode_counter([1, 50, 500], 100).tolist() == [0.01, 0.5, 0.99]


# ---- normalisation -------------------------------------------------------------

def test_normalise_two_values():
    Z = FeatureNormaliser().fit([[0.0], [10.0]]).transform([[0.0], [10.0]])
    assert Z.ravel().tolist() == [0.01, 0.99]


def test_normalise_constant_dimension():
    Z = FeatureNormaliser().fit([[3.0, 1.0], [3.0, 2.0]]).transform([[3.0, 5.0]])
    assert Z[0, 0] == 0.5


def test_out_of_range_clamped_and_counted():
    norm = FeatureNormaliser().fit([[0.0, 0.0], [10.0, 1.0]])
    test = [make_utterance([2], features=np.array([[-5.0, 0.5]])),
            make_utterance([2], features=np.array([[20.0, 2.0]]))]
    out, clamped = apply_normalisation(test, norm)
    assert clamped == 3
    assert out[0].features.tolist() == [[0.01, 0.5]]
    assert out[1].features[0].tolist() == [0.99, 0.99]


def test_training_set_hits_range_exactly(rng):
    utts = [make_utterance([1, 2], features=rng.normal(size=(2, 6)) * 7) for _ in range(20)]
    normed, _ = normalise_features(utts)
    F = np.vstack([u.features for u in normed])
    assert np.all(F.min(axis=0) == 0.01)
    assert np.all(F.max(axis=0) == 0.99)


def test_normalise_empty_corpus():
    with pytest.raises(InvalidArgumentError):
        normalise_features([])


def test_normaliser_is_sklearn_estimator():
    from sklearn.base import clone
    n = FeatureNormaliser(low=0.1, high=0.9)
    assert clone(n).get_params() == {"low": 0.1, "high": 0.9}


# ---- descriptors and synthesis ---------------------------------------------------

def test_point_mass_corpus():
    spec = CorpusSpec((PhoneSpec("a", "Vowel", PointMass(7)),), n_utterances=20, seed=3)
    utts, truth = synth_corpus(spec)
    assert {d for u in utts for d in u.durations} == {7}
    assert truth["a"].median == 7


def test_geometric_truth_closed_form():
    # smallest d with 1 - 0.7**d >= 0.5 is 2; mean 1/p
    d = next(d for d in range(1, 100) if 1 - 0.7 ** d >= 0.5)
    assert d == 2
    spec = CorpusSpec((PhoneSpec("a", "Vowel", Geometric(0.3)),), n_utterances=5)
    truth = synth_corpus(spec)[1]["a"]
    assert truth.median == 2
    assert truth.mean == pytest.approx(10 / 3, abs=1e-9)


def test_mixture_truth():
    mix = Mixture(((0.6, PointMass(5)), (0.4, PointMass(15))))
    spec = CorpusSpec((PhoneSpec("a", "Vowel", mix),), n_utterances=5)
    truth = synth_corpus(spec)[1]["a"]
    assert truth.median == 5
    assert truth.mean == pytest.approx(9.0)


def test_descriptor_without_mass_is_invalid():
    with pytest.raises(InvalidSpecError):
        PointMass(400).distribution(cap=300)
    with pytest.raises(InvalidSpecError):
        PointMass(0)
    with pytest.raises(InvalidSpecError):
        Mixture(((0.5, PointMass(1)), (0.4, PointMass(2))))


def test_negbinomial_shifted_support():
    dist = NegBinomial(1, 0.3).distribution(300)
    np.testing.assert_allclose(dist.pmf, Geometric(0.3).distribution(300).pmf, atol=1e-12)


def test_lognormal_discretisation():
    d = DiscretisedLogNormal(math.log(8), 1.0).distribution(300)
    # P(D = 1) = P(X < 1.5)
    assert d.pmf[0] == pytest.approx(stats.norm.cdf((math.log(1.5) - math.log(8)) / 1.0))
    assert d.median() == 8


@pytest.mark.parametrize("desc", [
    Geometric(0.3), NegBinomial(3, 0.4), DiscretisedLogNormal(2.0, 0.8),
    Mixture(((0.6, PointMass(5)), (0.4, Geometric(0.1)))),
])
def test_empirical_histogram_converges(desc):
    spec = CorpusSpec((PhoneSpec("a", "Vowel", desc),), n_utterances=1000,
                      phones_per_utterance=(10, 10), seed=17)
    utts, truth = synth_corpus(spec)
    d = np.concatenate([u.durations for u in utts])
    assert len(d) == 10_000
    emp = np.array([(d <= k).mean() for k in range(1, 301)])
    ks = np.max(np.abs(emp - np.cumsum(truth["a"].distribution.pmf)))
    assert ks < 0.05


def test_parse_descriptor_forms():
    assert parse_descriptor("geometric(0.3)") == Geometric(0.3)
    assert parse_descriptor("lognormal(2, 0.8)") == DiscretisedLogNormal(2.0, 0.8)
    assert parse_descriptor("point(5)") == PointMass(5)
    mix = parse_descriptor("mixture(0.6*point(5), 0.4*mixture(0.5*point(15),0.5*geometric(0.2)))")
    assert mix.components[0] == (0.6, PointMass(5))
    assert isinstance(mix.components[1][1], Mixture)
    for bad in ["gauss(1)", "point(5", "mixture(point(5))", "geometric(0.3) extra"]:
        with pytest.raises(InvalidSpecError):
            parse_descriptor(bad)


def test_parse_inventory():
    inv = parse_inventory("a:Vowel:geometric(0.3); s: Fricative : point(4)")
    assert [p.label for p in inv] == ["a", "s"]
    assert inv[1].phonetic_class is PhoneticClass.FRICATIVE


def test_context_features_layout():
    f = context_features(["a", "b", "a"], ["a", "b"])
    assert f.shape == (3, 2 + 3 + 3 + 1)
    assert f[1].tolist() == [0, 1, 1, 0, 0, 1, 0, 0, 0.5]


def test_synth_is_deterministic():
    spec = CorpusSpec((PhoneSpec("a", "Vowel", Geometric(0.3)),), n_utterances=10, seed=4)
    a, _ = synth_corpus(spec)
    b, _ = synth_corpus(spec)
    assert [u.durations.tolist() for u in a] == [u.durations.tolist() for u in b]


def test_corpus_files_round_trip(tmp_path):
    spec = CorpusSpec((PhoneSpec("a", "Vowel", Geometric(0.3)), PhoneSpec("sil", "Silence", PointMass(9))),
                      n_utterances=6, seed=4)
    utts, truth = synth_corpus(spec)
    write_corpus(utts, tmp_path)
    back = load_corpus(tmp_path, class_table=spec.class_table)
    assert [u.id for u in back] == [u.id for u in utts]
    for a, b in zip(utts, back):
        assert a.durations.tolist() == b.durations.tolist()
        np.testing.assert_array_equal(a.features, b.features)
        assert a.classes == b.classes
    write_ground_truth(truth, tmp_path / "gt.csv")
    gt = read_ground_truth(tmp_path / "gt.csv")
    assert gt["a"]["median"] == 2
    assert gt["sil"]["pmf"] == {9: 1.0}


# ---- split_corpus --------------------------------------------------------------

def _corpus(n):
    return [make_utterance([2], uid=f"u{i}") for i in range(n)]


def test_split_sizes():
    train, dev = split_corpus(_corpus(100), 0.05, seed=1)
    assert (len(train), len(dev)) == (95, 5)
    ids = {u.id for u in train} | {u.id for u in dev}
    assert len(ids) == 100


def test_split_deterministic():
    a = split_corpus(_corpus(100), 0.05, seed=1)
    b = split_corpus(_corpus(100), 0.05, seed=1)
    assert [u.id for u in a[1]] == [u.id for u in b[1]]


def test_split_seed_variation():
    devs = {tuple(u.id for u in split_corpus(_corpus(100), 0.05, seed=s)[1]) for s in range(10)}
    assert len(devs) >= 9


def test_split_errors():
    with pytest.raises(InvalidArgumentError):
        split_corpus(_corpus(10), 0.0)
    with pytest.raises(InvalidArgumentError):
        split_corpus(_corpus(1), 0.5)
