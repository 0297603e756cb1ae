import numpy as np
import pytest

from durhaz.core import PhoneRecord, PhoneticClass, Utterance


def make_utterance(durations, labels=None, width=3, uid="u", features=None, classes=None):
    labels = labels or ["a"] * len(durations)
    phones = []
    for i, (d, lab) in enumerate(zip(durations, labels)):
        f = features[i] if features is not None else np.full(width, 0.5)
        cls = classes[i] if classes is not None else (
            PhoneticClass.SILENCE if lab == "sil" else PhoneticClass.VOWEL)
        phones.append(PhoneRecord(lab, f, cls, d))
    return Utterance.from_phones(uid, phones)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
