"""Datasets: JSONL ingestion, mini-batch sampling, and a synthetic
multilingual sentiment-style corpus for desk-scale experiments."""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .encoder import PAD, PAD_LANG, EmbeddingTable, Vocabulary
from .errors import ArgumentError, ParseError, SchemaError
from .rng import make_rng

SPLITS = ("train", "dev", "test")
DEFAULT_LANGUAGES = ("ar", "en", "fr", "de", "hi", "it", "pt", "es")
# per-language split sizes: 1838/323/869 scaled down 10x
DEFAULT_SIZES = (184, 32, 87)


@dataclass(frozen=True)
class Example:
    text: str
    label: int
    lang: str
    uid: str = ""


@dataclass
class Corpus:
    train: list
    dev: list
    test: list
    num_classes: int
    languages: list = field(default_factory=list)

    def __post_init__(self):
        if self.num_classes < 1:
            raise SchemaError("corpus declares no classes")
        langs = set(self.languages)
        for split in SPLITS:
            for ex in getattr(self, split):
                if not 0 <= ex.label < self.num_classes:
                    raise SchemaError(f"label {ex.label} outside 0..{self.num_classes - 1}")
                if ex.lang not in langs:
                    raise SchemaError(f"language {ex.lang!r} not declared")

    def split(self, name: str) -> list:
        if name not in SPLITS:
            raise ArgumentError(f"unknown split {name!r}")
        return getattr(self, name)

    def texts(self, split: str = "train") -> list:
        return [ex.text for ex in self.split(split)]

    def labels(self, split: str = "train") -> np.ndarray:
        return np.array([ex.label for ex in self.split(split)], dtype=np.int64)

    def langs(self, split: str = "train") -> list:
        return [ex.lang for ex in self.split(split)]


def load_jsonl(path, num_classes: int | None = None,
               languages: Sequence[str] | None = None) -> Corpus:
    """Read a corpus file with one ``{text, label, lang, split}`` object per line.

    Without ``num_classes`` the class count is ``max(label) + 1``; without
    ``languages`` the language set is whatever appears, in file order.
    """
    rows = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ParseError(f"invalid JSON ({exc.msg})", lineno) from None
            if not isinstance(obj, dict):
                raise ParseError("expected a JSON object", lineno)
            missing = [k for k in ("text", "label", "lang", "split") if k not in obj]
            if missing:
                raise ParseError(f"missing field(s) {', '.join(missing)}", lineno)
            label = obj["label"]
            if isinstance(label, bool) or not isinstance(label, int) or label < 0:
                raise SchemaError(f"line {lineno}: label must be a non-negative integer")
            if num_classes is not None and label >= num_classes:
                raise SchemaError(f"line {lineno}: label {label} outside 0..{num_classes - 1}")
            if languages is not None and obj["lang"] not in languages:
                raise SchemaError(f"line {lineno}: unknown language {obj['lang']!r}")
            if obj["split"] not in SPLITS:
                raise SchemaError(f"line {lineno}: unknown split {obj['split']!r}")
            if not isinstance(obj["text"], str):
                raise SchemaError(f"line {lineno}: text must be a string")
            rows.append((lineno, obj))
    if not rows:
        raise SchemaError("no examples, so no classes")

    if num_classes is None:
        num_classes = max(obj["label"] for _, obj in rows) + 1
    if languages is None:
        languages = list(dict.fromkeys(obj["lang"] for _, obj in rows))
    splits = {name: [] for name in SPLITS}
    for lineno, obj in rows:
        uid = str(obj.get("id", f"line{lineno}"))
        splits[obj["split"]].append(Example(obj["text"], obj["label"], obj["lang"], uid))
    return Corpus(splits["train"], splits["dev"], splits["test"], num_classes, list(languages))


def save_jsonl(corpus: Corpus, path) -> None:
    lines = []
    for split in SPLITS:
        for ex in corpus.split(split):
            obj = {"id": ex.uid, "text": ex.text, "label": ex.label, "lang": ex.lang,
                   "split": split}
            lines.append(json.dumps(obj, ensure_ascii=False))
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def sample_indices(num_examples: int, n: int, rng: np.random.Generator) -> np.ndarray:
    if n <= 0:
        raise ArgumentError("batch size must be positive")
    if num_examples <= 0:
        raise ArgumentError("cannot sample from an empty split")
    return rng.integers(0, num_examples, size=n)


def sample_batch(corpus: Corpus, n: int, rng: np.random.Generator) -> list:
    """``n`` training examples drawn uniformly with replacement."""
    idx = sample_indices(len(corpus.train), n, rng)
    return [corpus.train[i] for i in idx]


def generate_synthetic(languages=8, num_classes: int = 3, sizes=DEFAULT_SIZES, seed: int = 0,
                       dim: int = 16, indicative_per_class: int = 6, neutral_per_lang: int = 32,
                       min_len: int = 5, max_len: int = 12, p_own: float = 0.3,
                       p_other: float = 0.1):
    """Build a learnable multilingual classification task.

    Each language owns a block of the vocabulary: a handful of tokens
    indicative of each class plus neutral filler. Embeddings come from
    per-(language, class) Gaussian clusters that share a class direction
    across languages, so a classifier can transfer between languages.
    Sentences mix own-class, other-class and neutral tokens, which keeps
    the task from being trivially separable.

    ``sizes`` are per-language (train, dev, test) counts. Every language
    gets the same sentence-length pattern, so token counts per language are
    identical. Returns ``(corpus, vocabulary, embedding_table)``.
    """
    if isinstance(languages, int):
        if languages < 2:
            raise ArgumentError("need at least 2 languages")
        langs = list(DEFAULT_LANGUAGES[:languages]) + [
            f"l{i}" for i in range(len(DEFAULT_LANGUAGES), languages)]
    else:
        langs = list(languages)
        if len(langs) < 2 or len(set(langs)) != len(langs):
            raise ArgumentError("need at least 2 distinct languages")
    if num_classes < 2:
        raise ArgumentError("need at least 2 classes")
    sizes = tuple(int(s) for s in sizes)
    if len(sizes) != 3 or min(sizes) < num_classes:
        raise ArgumentError(f"each split needs >= {num_classes} examples per language "
                            "to cover every (language, class) cell")
    if not 1 <= min_len <= max_len:
        raise ArgumentError("invalid sentence length range")

    rng = make_rng(seed, "synthetic", "embeddings")
    class_dirs = rng.normal(size=(num_classes, dim))
    tokens, tags, rows = [PAD], [PAD_LANG], [np.zeros(dim)]
    indicative = {}
    neutral = {}
    for lang in langs:
        lang_dir = rng.normal(size=dim)
        for c in range(num_classes):
            centre = 0.8 * lang_dir + class_dirs[c] + 0.4 * rng.normal(size=dim)
            ids = []
            for k in range(indicative_per_class):
                ids.append(len(tokens))
                tokens.append(f"{lang}_c{c}_{k}")
                tags.append(lang)
                rows.append(centre + 0.5 * rng.normal(size=dim))
            indicative[lang, c] = ids
        ids = []
        for k in range(neutral_per_lang):
            ids.append(len(tokens))
            tokens.append(f"{lang}_n{k}")
            tags.append(lang)
            rows.append(0.8 * lang_dir + rng.normal(size=dim))
        neutral[lang] = ids
    rows = np.array(rows)
    rows *= 1.0 / np.linalg.norm(rows[1:], axis=1).mean()  # mean row norm 1
    vocab = Vocabulary(tokens, tags)
    table = EmbeddingTable(rows)

    splits = {}
    for split, size in zip(SPLITS, sizes):
        length_rng = make_rng(seed, "synthetic", "lengths", split)
        lengths = length_rng.integers(min_len, max_len + 1, size=size)
        examples = []
        for lang in langs:
            tok_rng = make_rng(seed, "synthetic", "tokens", split, lang)
            for i in range(size):
                label = i % num_classes
                words = []
                for _ in range(lengths[i]):
                    u = tok_rng.random()
                    if u < p_own:
                        pool = indicative[lang, label]
                    elif u < p_own + p_other:
                        other = (label + 1 + tok_rng.integers(num_classes - 1)) % num_classes
                        pool = indicative[lang, other]
                    else:
                        pool = neutral[lang]
                    words.append(tokens[pool[tok_rng.integers(len(pool))]])
                examples.append(Example(" ".join(words), label, lang, f"{split}-{lang}-{i}"))
        splits[split] = examples
    corpus = Corpus(splits["train"], splits["dev"], splits["test"], num_classes, langs)
    return corpus, vocab, table
