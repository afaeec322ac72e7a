import numpy as np
import pytest
from sklearn.base import clone
from sklearn.exceptions import NotFittedError

from textdistill import TextCNNClassifier, TextDatasetDistiller
from textdistill.validation import check_texts, check_texts_labels

NAMES = np.array(["neg", "neu", "pos"])


def test_classifier_fit_predict(small_task):
    corpus, enc, _ = small_task
    clf = TextCNNClassifier(encoder=enc, filters_per_height=4, fc_hidden=8, epochs=5)
    clf.fit(corpus.texts(), NAMES[corpus.labels()])
    assert list(clf.classes_) == list(NAMES)
    proba = clf.predict_proba(corpus.texts("test"))
    np.testing.assert_allclose(proba.sum(axis=1), 1.0)
    assert set(clf.predict(corpus.texts("test"))) <= set(NAMES)
    assert clf.score(corpus.texts("test"), NAMES[corpus.labels("test")]) > 0.45


def test_distiller_fit_decode_predict(small_task):
    corpus, enc, _ = small_task
    est = TextDatasetDistiller(encoder=enc, strategy="skip_lookup", samples_per_class=2, steps=5,
                               batch_size=16, inits_per_step=1, filters_per_height=4, fc_hidden=8)
    est.fit(corpus.texts(), NAMES[corpus.labels()], langs=corpus.langs())
    assert est.distilled_.x.shape == (6, 12, 16)
    assert len(est.record_.meta_losses) == 5
    pairs = est.decode()
    assert [p[0] for p in pairs] == ["neg", "neg", "neu", "neu", "pos", "pos"]
    assert all(len(text.split()) == 12 for _, text in pairs)
    assert est.predict(corpus.texts("test")).shape == (len(corpus.test),)


def test_params_and_clone(small_task):
    _, enc, _ = small_task
    est = TextDatasetDistiller(encoder=enc, steps=7)
    params = est.get_params()
    assert params["steps"] == 7 and params["encoder"] is enc
    twin = clone(est)
    assert twin.get_params()["steps"] == 7 and not hasattr(twin, "distilled_")
    est.set_params(strategy="vocab_softmax")
    assert est.strategy == "vocab_softmax"


def test_unfitted_estimators_raise(small_task):
    _, enc, _ = small_task
    with pytest.raises(NotFittedError):
        TextCNNClassifier(encoder=enc).predict(["a b"])
    with pytest.raises(NotFittedError):
        TextDatasetDistiller(encoder=enc).decode()


def test_missing_encoder_is_rejected():
    with pytest.raises(TypeError):
        TextCNNClassifier().fit(["a", "b"], [0, 1])


def test_check_texts():
    assert check_texts(np.array(["a", "b"])) == ["a", "b"]
    for bad in ("single", [["a"]], [], ["a", 3]):
        with pytest.raises(ValueError):
            check_texts(bad)


def test_check_texts_labels():
    texts, classes, idx = check_texts_labels(["a", "b", "c"], ["y", "x", "y"])
    assert list(classes) == ["x", "y"] and idx.tolist() == [1, 0, 1]
    with pytest.raises(ValueError):
        check_texts_labels(["a", "b"], [0])
    with pytest.raises(ValueError):
        check_texts_labels(["a", "b"], [1, 1])
