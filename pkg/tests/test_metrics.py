import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import levenshtein
from patcorrect.align import edit_distance
from patcorrect.metrics import detection_correction, evaluate, evaluate_groups, f_beta, wer, werr

tokens = st.lists(st.sampled_from("abcd"), max_size=7)
ref_tokens = st.lists(st.sampled_from("abcd"), min_size=1, max_size=7)


def test_wer_examples():
    assert wer(list("abc"), list("abc")) == 0
    assert wer("a b c".split(), "a x c".split()) == pytest.approx(1 / 3)
    assert wer([], ["a", "b"]) == 1.0
    with pytest.raises(ValueError):
        wer(["a"], [])


def test_wer_against_recursive_levenshtein():
    rng = np.random.default_rng(11)
    for _ in range(300):
        hyp = list(rng.choice(list("abcde"), size=rng.integers(0, 9)))
        ref = list(rng.choice(list("abcde"), size=rng.integers(1, 9)))
        assert wer(hyp, ref) == levenshtein(hyp, ref) / len(ref)


@given(tokens, tokens)
def test_distance_symmetric(a, b):
    assert edit_distance(a, b) == edit_distance(b, a)


def test_werr_examples():
    assert werr(10.0, 9.0) == pytest.approx(0.10)
    assert werr(0.3, 0.3) == 0.0
    assert 100 * werr(27.96, 24.72) == pytest.approx(11.59, abs=0.01)
    with pytest.raises(ValueError):
        werr(0.0, 0.1)


def test_f_beta():
    assert f_beta(0.8, 0.5) == pytest.approx(0.7143, abs=1e-4)
    assert f_beta(0.0, 0.0) == 0.0
    assert f_beta(1.0, 1.0) == 1.0


def test_detection_perfect_correction():
    r = detection_correction("i sea you".split(), "i see you".split(), "i see you".split())
    assert (r["precision"], r["recall"], r["correction"], r["f05"]) == (1.0, 1.0, 1.0, 1.0)


def test_detection_no_edits():
    r = detection_correction("i sea you".split(), "i sea you".split(), "i see you".split())
    assert r["precision"] == 0.0 and r["recall"] == 0.0
    assert r["counts"]["edited"] == 0 and r["counts"]["error"] == 1


def test_detection_wrong_correction():
    r = detection_correction(["a", "b"], ["a", "y"], ["a", "x"])
    assert r["counts"] == {"edited": 1, "error": 1, "edited_error": 1, "correctly_edited_error": 0}
    assert (r["precision"], r["recall"], r["correction"]) == (1.0, 1.0, 0.0)


def test_detection_deleted_filler():
    # "uh" is absent from the reference, so it is an error; dropping it is a correct edit
    r = detection_correction("uh the cat".split(), "the cat".split(), "the cat".split())
    assert r["counts"]["error"] == 1 and r["counts"]["correctly_edited_error"] == 1


@settings(max_examples=200)
@given(tokens, tokens, ref_tokens)
def test_ratios_in_unit_interval(hyp, cor, ref):
    r = detection_correction(hyp, cor, ref)
    for key in ("precision", "recall", "correction", "f05"):
        assert 0.0 <= r[key] <= 1.0
    c = r["counts"]
    assert c["correctly_edited_error"] <= c["edited_error"] <= min(c["edited"], c["error"])


@settings(max_examples=200)
@given(st.lists(st.sampled_from("abcd"), min_size=1, max_size=7), ref_tokens)
def test_exact_correction_properties(hyp, ref):
    report = evaluate([(hyp, ref, ref)])
    assert report.wer_sys == 0
    if report.counts["edited_error"]:
        assert report.correction == 1.0


def test_evaluate_pooled_vs_equal():
    g1 = [("a b c d".split(), "a b c d".split(), "a b c x".split())]
    g2 = [("a".split(), "b".split(), "b".split()), ("c d".split(), "c d".split(), "c d".split())]
    pooled = evaluate_groups([g1, g2], "pooled")
    equal = evaluate_groups([g1, g2], "equal")
    assert pooled.wer_base == pytest.approx(2 / 7)
    assert equal.wer_base == pytest.approx((1 / 4 + 1 / 3) / 2)
    assert pooled.werr == pytest.approx((2 / 7 - 1 / 7) / (2 / 7))
    assert equal.werr == pytest.approx((0.0 + 1.0) / 2)
    assert equal.aggregation == "equal" and pooled.aggregation == "pooled"
    with pytest.raises(ValueError):
        evaluate_groups([g1], "median")


def test_report_zero_denominators_flagged():
    report = evaluate([("a b".split(), "a b".split(), "a b".split())])
    assert report.werr is None
    assert set(report.counts["zero_denominators"]) == {"precision", "recall", "correction"}
    assert "n/a" in report.table()


def test_report_table_is_percent():
    report = evaluate([("a x".split(), "a b".split(), "a b".split())])
    table = report.table()
    assert "WER (input)" in table and "50.00 %" in table and "100.00 %" in table
