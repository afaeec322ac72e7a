import warnings

import numpy as np
import pytest
from sklearn.metrics import f1_score

from conftest import tiny_encoder
from textdistill.classifier import InitSpec, init, predict
from textdistill.corpus import Corpus, Example
from textdistill.errors import ArgumentError
from textdistill.evaluation import (EvalReport, corpus_language_proportion, cross_arch_eval,
                                    distillation_ratio, evaluate_distilled, evaluate_full,
                                    f1_macro, language_proportion, majority_f1, per_language_f1,
                                    rows_to_csv, split_f1, train_from_distilled, train_full)
from textdistill.strategies import DecodedSentence, DecodedSummary, init_distilled


def confusion_f1(preds, labels, C):
    cm = np.zeros((C, C), dtype=int)
    for p, t in zip(preds, labels):
        cm[t, p] += 1
    scores = []
    for c in range(C):
        tp = cm[c, c]
        prec = tp / cm[:, c].sum() if cm[:, c].sum() else 0.0
        rec = tp / cm[c, :].sum() if cm[c, :].sum() else 0.0
        scores.append(2 * prec * rec / (prec + rec) if prec + rec else 0.0)
    return float(np.mean(scores))


def test_f1_worked_example():
    assert f1_macro([0, 1, 1, 1, 2, 0], [0, 0, 1, 1, 2, 2], 3) == pytest.approx(
        np.mean([0.5, 0.8, 2 / 3]), abs=1e-12)
    assert round(f1_macro([0, 1, 1, 1, 2, 0], [0, 0, 1, 1, 2, 2], 3), 4) == 0.6556


def test_f1_single_class_predictions():
    labels = [0, 0, 1, 1, 2, 2]
    assert f1_macro([1] * 6, labels, 3) == pytest.approx((2 * 2 / (2 * 2 + 4)) / 3)
    assert f1_macro(labels, labels, 3) == 1.0


def test_f1_matches_oracles_on_random_sets():
    rng = np.random.default_rng(0)
    for _ in range(100):
        n, C = rng.integers(1, 20), rng.integers(2, 5)
        labels, preds = rng.integers(0, C, n), rng.integers(0, C, n)
        ours = f1_macro(preds, labels, C)
        assert ours == pytest.approx(confusion_f1(preds, labels, C), abs=1e-12)
        ref = f1_score(labels, preds, labels=list(range(C)), average="macro", zero_division=0)
        assert ours == pytest.approx(ref, abs=1e-12)


def test_f1_errors():
    with pytest.raises(ArgumentError):
        f1_macro([], [], 2)
    with pytest.raises(ArgumentError):
        f1_macro([0], [0, 1], 2)


def test_distillation_ratio():
    assert distillation_ratio(54.84, 57.65) == pytest.approx(95.13, abs=0.005)
    assert distillation_ratio(0.3, 0.3) == 100.0
    assert distillation_ratio(0.0, 0.5) == 0.0
    with pytest.raises(ArgumentError):
        distillation_ratio(0.5, 0.0)


def _summary(ids):
    return DecodedSummary("skip_lookup", [DecodedSentence(0, 0, ids, [], [])])


def test_language_proportion_counts_non_pad_tokens():
    enc = tiny_encoder()  # odd ids tagged aa, even ids bb
    props = language_proportion(_summary([1, 3, 2, 0, 0]), enc.vocab)
    assert props == {"aa": pytest.approx(200 / 3), "bb": pytest.approx(100 / 3)}
    with pytest.raises(ArgumentError):
        language_proportion(_summary([0, 0]), enc.vocab)
    with pytest.raises(ArgumentError):
        language_proportion(DecodedSummary("vanilla", []), enc.vocab)


def test_corpus_language_proportion():
    enc = tiny_encoder()
    props = corpus_language_proportion(["w2 w4", "w1 w6"], enc.vocab)
    assert props == {"aa": 25.0, "bb": 75.0}


def test_train_full_learns(small_task):
    corpus, enc, arch = small_task
    params = train_full(arch, corpus, enc, epochs=5)
    assert split_f1(params, corpus, enc) > majority_f1(corpus) + 0.1
    again = train_full(arch, corpus, enc, epochs=5)
    assert params.equals(again)


def test_train_from_distilled_zero_steps_is_init(small_task):
    corpus, enc, arch = small_task
    dd = init_distilled("vanilla", 1, 3, enc)
    p = train_from_distilled(arch, dd, enc, InitSpec("fixed", 2), steps=0)
    assert p.equals(init(arch, InitSpec("fixed", 2)))


def test_cross_arch_base_variant_matches_plain_evaluation(small_task):
    corpus, enc, arch = small_task
    dd = init_distilled("skip_lookup", 2, 3, enc)
    spec = InitSpec("fixed", 0)
    out = cross_arch_eval(dd, enc, arch, spec, corpus)
    assert sorted(out) == [0, 1, 2, 3]
    assert out[0] == split_f1(train_from_distilled(arch, dd, enc, spec), corpus, enc)


def test_per_language_f1_slices(small_task):
    corpus, enc, arch = small_task
    params = init(arch, InitSpec("random", 1))
    per = per_language_f1(params, corpus, enc)
    preds = predict(params, enc.encode_texts(corpus.texts("test")))
    langs = np.array(corpus.langs("test"))
    labels = corpus.labels("test")
    for lang, v in per.items():
        m = langs == lang
        assert v == pytest.approx(confusion_f1(preds[m], labels[m], 3))


def test_per_language_f1_warns_on_missing_language():
    enc = tiny_encoder(attention=False)
    from textdistill.classifier import ArchSpec
    corpus = Corpus([Example("w1", 0, "aa")], [], [Example("w1 w3", 0, "aa")], 2, ["aa", "bb"])
    params = init(ArchSpec(classes=2, embed_dim=4, filter_heights=(2,)))
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        out = per_language_f1(params, corpus, enc)
    assert list(out) == ["aa"] and caught


def test_reports(small_task):
    corpus, enc, arch = small_task
    full = evaluate_full(train_full(arch, corpus, enc, epochs=2), enc, corpus)
    dd = init_distilled("skip_lookup", 1, 3, enc)
    rep = evaluate_distilled(dd, enc, corpus, arch, InitSpec(), full_f1=full.f1_macro)
    assert rep.source == "distilled(skip_lookup)" and rep.r_n is not None
    assert sum(rep.language_proportion.values()) == pytest.approx(100, abs=0.01)
    assert sum(full.language_proportion.values()) == pytest.approx(100, abs=0.01)
    text = rows_to_csv([full.csv_row(), rep.csv_row()])
    assert text.splitlines()[0].startswith("source,f1_macro,r_n")
    assert len(text.splitlines()) == 3
    assert '"f1_macro"' in rep.to_json()
    with pytest.raises(ValueError):
        EvalReport(1.5, None, {}, {}, arch, "x")
