"""Scoring distilled data: train fresh learners, macro-F1, distillation
ratio, cross-architecture transfer, per-language scores and token-level
language proportions."""
from __future__ import annotations

import csv
import io
import json
import warnings
from collections import Counter
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .classifier import (ArchSpec, InitSpec, TextCnnParams, init, loss, predict, sgd_step)
from .corpus import Corpus
from .encoder import PAD_ID, Encoder, Vocabulary
from .errors import ArgumentError
from .rng import make_rng
from .strategies import DecodedSummary, DistilledData, StrategyKind, materialize

# random-mode evaluation draws live far away from any training draw index
EVAL_DRAW = 10 ** 9


def f1_macro(preds, labels, num_classes: int) -> float:
    """Unweighted mean of per-class F1; a class with no support and no
    predictions scores 0."""
    preds = np.asarray(preds, dtype=np.int64)
    labels = np.asarray(labels, dtype=np.int64)
    if preds.shape != labels.shape:
        raise ArgumentError("preds and labels differ in length")
    if preds.size == 0:
        raise ArgumentError("f1 of an empty set")
    scores = []
    for c in range(num_classes):
        tp = int(np.sum((preds == c) & (labels == c)))
        fp = int(np.sum((preds == c) & (labels != c)))
        fn = int(np.sum((preds != c) & (labels == c)))
        denom = 2 * tp + fp + fn
        scores.append(2 * tp / denom if denom else 0.0)
    return float(np.mean(scores))


def distillation_ratio(distilled_score: float, full_score: float) -> float:
    """Score of the distilled-data model as a percentage of the full-data one."""
    if full_score <= 0:
        raise ArgumentError("full-data score must be positive")
    return 100.0 * distilled_score / full_score


def _encoded(corpus: Corpus, encoder: Encoder, split: str):
    return encoder.encode_texts(corpus.texts(split)), corpus.labels(split)


def fit_sgd(arch: ArchSpec, x: np.ndarray, y: np.ndarray, epochs: int = 10, lr: float = 0.1,
            seed: int = 0, batch_size: int = 32) -> TextCnnParams:
    """Mini-batch SGD from the fixed initialization for ``seed``."""
    params = init(arch, InitSpec("fixed", seed))
    onehot = np.eye(arch.classes)[y]
    rng = make_rng(seed, "train_full", "shuffle")
    for _ in range(epochs):
        order = rng.permutation(len(x))
        for start in range(0, len(x), batch_size):
            idx = order[start:start + batch_size]
            leaves = params.leaves()
            grads = ad.grad(loss(leaves, x[idx], onehot[idx]), leaves.values())
            with ad.no_grad():
                params = sgd_step(params, grads, lr)
    return params


def train_full(arch: ArchSpec, corpus: Corpus, encoder: Encoder, epochs: int = 10,
               lr: float = 0.1, seed: int = 0, batch_size: int = 32) -> TextCnnParams:
    """Baseline learner trained on the whole encoded training split."""
    if not corpus.train:
        raise ArgumentError("training split is empty")
    x, y = _encoded(corpus, encoder, "train")
    return fit_sgd(arch, x, y, epochs, lr, seed, batch_size)


def train_from_distilled(arch: ArchSpec, dd: DistilledData, encoder: Encoder,
                         init_spec: InitSpec, steps: int = 1,
                         draw_index: int = EVAL_DRAW) -> TextCnnParams:
    """Fresh learner trained for ``steps`` GD steps on the distilled batch at
    the distilled learning rate."""
    params = init(arch, init_spec, draw_index)
    rng = make_rng(init_spec.seed, "eval", "gumbel", draw_index)
    with ad.no_grad():
        X = materialize(dd, encoder, rng=rng)
    for _ in range(steps):
        leaves = params.leaves()
        grads = ad.grad(loss(leaves, X, dd.y), leaves.values())
        with ad.no_grad():
            params = sgd_step(params, grads, dd.eta)
    return params


def split_f1(params: TextCnnParams, corpus: Corpus, encoder: Encoder, split: str = "test") -> float:
    x, y = _encoded(corpus, encoder, split)
    return f1_macro(predict(params, x), y, corpus.num_classes)


def majority_f1(corpus: Corpus, split: str = "test") -> float:
    y = corpus.labels(split)
    major = Counter(corpus.labels("train").tolist()).most_common(1)[0][0]
    return f1_macro(np.full_like(y, major), y, corpus.num_classes)


def cross_arch_eval(dd: DistilledData, encoder: Encoder, base_arch: ArchSpec,
                    init_spec: InitSpec, corpus: Corpus, steps: int = 1) -> dict:
    """Test macro-F1 of learners with 0..3 extra FC layers trained on ``dd``."""
    out = {}
    for k in range(4):
        params = train_from_distilled(base_arch.with_extra_fc(k), dd, encoder, init_spec, steps)
        out[k] = split_f1(params, corpus, encoder)
    return out


def per_language_f1(params: TextCnnParams, corpus: Corpus, encoder: Encoder,
                    split: str = "test") -> dict:
    x, y = _encoded(corpus, encoder, split)
    preds = predict(params, x) if len(x) else np.zeros(0, dtype=np.int64)
    langs = np.array(corpus.langs(split))
    out = {}
    for lang in corpus.languages:
        mask = langs == lang
        if not mask.any():
            warnings.warn(f"language {lang!r} has no {split} examples; omitted")
            continue
        out[lang] = f1_macro(preds[mask], y[mask], corpus.num_classes)
    return out


def _proportion(ids, vocab: Vocabulary) -> dict:
    counts = Counter(vocab.lang_tags[i] for i in ids if i != PAD_ID)
    total = sum(counts.values())
    if total == 0:
        raise ArgumentError("no non-pad tokens to attribute to a language")
    return {lang: 100.0 * counts.get(lang, 0) / total for lang in vocab.languages()}


def language_proportion(summary: DecodedSummary, vocab: Vocabulary) -> dict:
    """Percent of non-pad decoded tokens carrying each language tag."""
    if len(summary) == 0:
        raise ArgumentError("empty decoded summary")
    return _proportion(summary.all_ids().tolist(), vocab)


def corpus_language_proportion(texts, vocab: Vocabulary) -> dict:
    ids = [i for t in texts for i in vocab.tokenize(t)]
    return _proportion(ids, vocab)


@dataclass
class EvalReport:
    f1_macro: float
    r_n: float | None
    per_language_f1: dict
    language_proportion: dict
    arch: ArchSpec
    source: str
    extra: dict = field(default_factory=dict)

    def __post_init__(self):
        if not 0.0 <= self.f1_macro <= 1.0:
            raise ValueError("f1 must lie in [0, 1]")

    def to_dict(self) -> dict:
        return {"source": self.source, "f1_macro": self.f1_macro, "r_n": self.r_n,
                "per_language_f1": self.per_language_f1,
                "language_proportion": self.language_proportion,
                "arch": self.arch.to_dict(), **self.extra}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    def csv_row(self) -> dict:
        row = {"source": self.source, "f1_macro": f"{self.f1_macro:.6f}",
               "r_n": "" if self.r_n is None else f"{self.r_n:.4f}",
               "extra_fc_layers": self.arch.extra_fc_layers}
        for lang, v in self.per_language_f1.items():
            row[f"f1_{lang}"] = f"{v:.6f}"
        for k, v in self.extra.items():
            row[k] = v
        return row


def rows_to_csv(rows: list) -> str:
    """Render dict rows as CSV; columns are the union of keys in first-seen order."""
    fields = list(dict.fromkeys(k for r in rows for k in r))
    buf = io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=fields, lineterminator="\n")
    writer.writeheader()
    for r in rows:
        writer.writerow(r)
    return buf.getvalue()


def evaluate_distilled(dd: DistilledData, encoder: Encoder, corpus: Corpus, arch: ArchSpec,
                       init_spec: InitSpec, full_f1: float | None = None,
                       steps: int = 1) -> EvalReport:
    from .strategies import decode

    params = train_from_distilled(arch, dd, encoder, init_spec, steps)
    f1 = split_f1(params, corpus, encoder)
    r_n = distillation_ratio(f1, full_f1) if full_f1 else None
    try:
        props = language_proportion(decode(dd, encoder), encoder.vocab)
    except ArgumentError:
        props = {}
    return EvalReport(f1, r_n, per_language_f1(params, corpus, encoder), props, arch,
                      f"distilled({StrategyKind(dd.kind).value})")


def evaluate_full(params: TextCnnParams, encoder: Encoder, corpus: Corpus) -> EvalReport:
    return EvalReport(split_f1(params, corpus, encoder), 100.0,
                      per_language_f1(params, corpus, encoder),
                      corpus_language_proportion(corpus.texts("train"), encoder.vocab),
                      params.arch, "full_data")
