import numpy as np
import pytest

from errors import InputError
from uncertainty import (
    Polarity,
    ScoreField,
    ScoreMethod,
    maxlogit_scores,
    msp_scores,
    predict_open_set,
)


def test_msp_examples():
    s = msp_scores(np.array([[0.0, 0, 0, 0]])).scores
    assert s[0] == pytest.approx(0.25, abs=1e-15)
    s = msp_scores(np.array([[np.log(2.0), 0.0]])).scores
    assert s[0] == pytest.approx(2.0 / 3.0, abs=1e-15)
    s = msp_scores(np.array([[1000.0, 0.0]])).scores
    assert abs(s[0] - 1.0) < 1e-12


def test_msp_polarity_and_range(rng):
    field = msp_scores(rng.normal(size=(100, 6)) * 5)
    assert field.polarity == Polarity.LOW_MEANS_UNKNOWN
    assert field.method == ScoreMethod.MSP
    assert np.all(field.scores > 0) and np.all(field.scores <= 1)


def test_msp_shift_invariance(rng):
    logits = rng.normal(size=(50, 8))
    base = msp_scores(logits).scores
    for c in (-300.0, 1e-3, 42.0):
        assert np.allclose(msp_scores(logits + c).scores, base, atol=1e-12, rtol=0)


def test_msp_monotone_in_max_logit(rng):
    logits = rng.normal(size=(30, 5))
    bumped = logits.copy()
    top = logits.argmax(axis=1)
    bumped[np.arange(30), top] += 0.7
    assert np.all(msp_scores(bumped).scores >= msp_scores(logits).scores)


def test_maxlogit(rng):
    assert maxlogit_scores(np.array([[3.0, 1.0, -2.0]])).scores[0] == 3.0
    assert maxlogit_scores(np.full((1, 4), -1.5)).scores[0] == -1.5
    logits = rng.normal(size=(40, 7))
    assert np.array_equal(maxlogit_scores(logits).scores, [row.max() for row in logits])


def test_non_finite_logits():
    with pytest.raises(InputError) as err:
        msp_scores(np.array([[np.nan, 0.0]]))
    assert err.value.kind == "non-finite-input"


def test_predict_open_set_examples():
    high = lambda v: ScoreField(np.asarray(v, dtype=float), Polarity.HIGH_MEANS_UNKNOWN, ScoreMethod.EXTERNAL)
    assert predict_open_set(np.array([[5.0, 1.0]]), high([0.9]), 0.5).tolist() == [2]
    assert predict_open_set(np.array([[1.0, 5.0]]), high([0.1]), 0.5).tolist() == [1]
    assert predict_open_set(np.array([[1.0, 5.0]]), high([0.5]), 0.5).tolist() == [2]
    # argmax ties resolve to the lowest class
    assert predict_open_set(np.array([[2.0, 2.0]]), high([0.0]), 0.5).tolist() == [0]


def test_predict_open_set_huge_threshold_is_argmax(rng):
    logits = rng.normal(size=(60, 4))
    unknown = msp_scores(logits).as_unknown_scores()
    assert np.array_equal(predict_open_set(logits, unknown, np.inf), logits.argmax(axis=1))


def test_predict_open_set_rejects_low_polarity(rng):
    logits = rng.normal(size=(5, 3))
    with pytest.raises(InputError) as err:
        predict_open_set(logits, msp_scores(logits), 0.5)
    assert err.value.kind == "polarity-mismatch"


def test_as_unknown_scores_flips(rng):
    logits = rng.normal(size=(10, 3))
    msp = msp_scores(logits)
    assert np.allclose(msp.as_unknown_scores().scores, 1.0 - msp.scores)
    ml = maxlogit_scores(logits)
    assert np.array_equal(ml.as_unknown_scores().scores, -ml.scores)
    assert ml.as_unknown_scores().polarity == Polarity.HIGH_MEANS_UNKNOWN
