import json
from collections import Counter

import numpy as np
import pytest

from textdistill.corpus import (Corpus, Example, generate_synthetic, load_jsonl, sample_batch,
                                sample_indices, save_jsonl)
from textdistill.errors import ArgumentError, ParseError, SchemaError
from textdistill.rng import make_rng


def test_synthetic_defaults():
    corpus, vocab, table = generate_synthetic()
    assert len(corpus.train) == 8 * 184 and len(corpus.test) == 8 * 87
    assert len(vocab) == 1 + 8 * (3 * 6 + 32) == table.vocab_size
    assert corpus.num_classes == 3 and len(corpus.languages) == 8
    assert np.linalg.norm(table.matrix[1:], axis=1).mean() == pytest.approx(1.0)
    counts = Counter(corpus.labels("train").tolist())
    assert max(counts.values()) - min(counts.values()) <= 8


def test_synthetic_is_seeded():
    a = generate_synthetic(sizes=(6, 3, 3), seed=4)
    b = generate_synthetic(sizes=(6, 3, 3), seed=4)
    c = generate_synthetic(sizes=(6, 3, 3), seed=5)
    assert a[0].texts() == b[0].texts() and np.array_equal(a[2].matrix, b[2].matrix)
    assert a[0].texts() != c[0].texts()


def test_synthetic_tokens_belong_to_their_language():
    corpus, vocab, _ = generate_synthetic(sizes=(6, 3, 3))
    for ex in corpus.train:
        ids = vocab.tokenize(ex.text)
        assert ids and all(vocab.lang_tags[i] == ex.lang for i in ids)


@pytest.mark.parametrize("kwargs", [
    {"languages": 1}, {"num_classes": 1}, {"sizes": (2, 3, 3)}, {"languages": ["en", "en"]},
])
def test_synthetic_rejects_degenerate_settings(kwargs):
    with pytest.raises(ArgumentError):
        generate_synthetic(**kwargs)


def test_jsonl_roundtrip(tmp_path):
    corpus, _, _ = generate_synthetic(sizes=(3, 3, 3), languages=2)
    path = tmp_path / "c.jsonl"
    save_jsonl(corpus, path)
    back = load_jsonl(path)
    assert back.train == corpus.train and back.test == corpus.test
    assert back.num_classes == 3 and back.languages == corpus.languages


def _write(tmp_path, rows):
    path = tmp_path / "c.jsonl"
    path.write_text("".join((r if isinstance(r, str) else json.dumps(r)) + "\n" for r in rows))
    return path


GOOD = {"text": "a b", "label": 0, "lang": "en", "split": "train"}


def test_jsonl_reports_line_numbers(tmp_path):
    path = _write(tmp_path, [GOOD, "{not json"])
    with pytest.raises(ParseError, match="line 2"):
        load_jsonl(path)


@pytest.mark.parametrize("bad", [
    {**GOOD, "label": -1}, {**GOOD, "label": "x"}, {**GOOD, "split": "holdout"},
    {**GOOD, "label": 5}, {**GOOD, "lang": "xx"},
])
def test_jsonl_schema_errors(tmp_path, bad):
    path = _write(tmp_path, [GOOD, bad])
    with pytest.raises(SchemaError):
        load_jsonl(path, num_classes=3, languages=["en"])


def test_jsonl_missing_field_and_empty(tmp_path):
    with pytest.raises(ParseError):
        load_jsonl(_write(tmp_path, [{"text": "a"}]))
    (tmp_path / "empty.jsonl").write_text("")
    with pytest.raises(SchemaError):
        load_jsonl(tmp_path / "empty.jsonl")


def test_corpus_validates_labels_and_languages():
    with pytest.raises(SchemaError):
        Corpus([Example("a", 3, "en")], [], [], 2, ["en"])
    with pytest.raises(SchemaError):
        Corpus([Example("a", 0, "fr")], [], [], 2, ["en"])


def test_sampling_is_uniform_with_replacement():
    n, k, draws = 5, 200, 4000
    rng = make_rng(0, "test")
    counts = np.bincount(np.concatenate([sample_indices(n, k, rng) for _ in range(draws // k)]),
                         minlength=n)
    expected = draws / n
    sigma = np.sqrt(draws * (1 / n) * (1 - 1 / n))
    assert np.all(np.abs(counts - expected) < 4 * sigma)


def test_sample_batch_and_errors():
    corpus, _, _ = generate_synthetic(sizes=(3, 3, 3), languages=2)
    batch = sample_batch(corpus, 10, make_rng(1))
    assert len(batch) == 10 and all(ex in corpus.train for ex in batch)
    with pytest.raises(ArgumentError):
        sample_indices(0, 3, make_rng(0))
    with pytest.raises(ArgumentError):
        sample_indices(3, 0, make_rng(0))
