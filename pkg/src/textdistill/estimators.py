"""scikit-learn compatible wrappers around the functional core."""
from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin
from sklearn.utils.validation import check_is_fitted

from . import evaluation as ev
from .classifier import ArchSpec, InitSpec, predict_logits
from .corpus import Corpus, Example
from .distiller import DistillConfig, distill
from .strategies import decode
from .validation import check_encoder, check_texts, check_texts_labels


def _softmax(z):
    z = z - z.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


class _EncodedPredictMixin:
    def _logits(self, X):
        check_is_fitted(self, "params_")
        return predict_logits(self.params_, self.encoder.encode_texts(check_texts(X)))

    def predict(self, X):
        best = self._logits(X).argmax(axis=1)
        return self.classes_[best]

    def predict_proba(self, X):
        return _softmax(self._logits(X))


class TextCNNClassifier(_EncodedPredictMixin, ClassifierMixin, BaseEstimator):
    """Text CNN trained by mini-batch SGD on encoded sentences."""

    def __init__(self, encoder=None, filters_per_height=8, fc_hidden=32, extra_fc_layers=0,
                 epochs=10, lr=0.1, batch_size=32, random_state=0):
        self.encoder = encoder
        self.filters_per_height = filters_per_height
        self.fc_hidden = fc_hidden
        self.extra_fc_layers = extra_fc_layers
        self.epochs = epochs
        self.lr = lr
        self.batch_size = batch_size
        self.random_state = random_state

    def fit(self, X, y):
        encoder = check_encoder(self.encoder)
        texts, self.classes_, y_idx = check_texts_labels(X, y)
        self.arch_ = ArchSpec(filters_per_height=self.filters_per_height,
                              extra_fc_layers=self.extra_fc_layers, fc_hidden=self.fc_hidden,
                              classes=len(self.classes_), embed_dim=encoder.dim)
        self.params_ = ev.fit_sgd(self.arch_, encoder.encode_texts(texts), y_idx, self.epochs,
                                  self.lr, self.random_state, self.batch_size)
        return self


class TextDatasetDistiller(_EncodedPredictMixin, ClassifierMixin, BaseEstimator):
    """Distil a labelled text collection into a few synthetic samples.

    After ``fit``, ``distilled_`` holds the summary, ``record_`` the run
    history, and ``params_`` a classifier trained on the summary alone,
    which ``predict`` uses.
    """

    def __init__(self, encoder=None, strategy="vanilla", samples_per_class=10, steps=2000,
                 batch_size=64, outer_lr=0.3, inits_per_step=4, init_mode="fixed", eta0=0.1,
                 learn_labels=False, learn_eta=True, optimizer="sgd", tau=0.5,
                 filters_per_height=8, fc_hidden=32, eval_steps=1, random_state=0):
        self.encoder = encoder
        self.strategy = strategy
        self.samples_per_class = samples_per_class
        self.steps = steps
        self.batch_size = batch_size
        self.outer_lr = outer_lr
        self.inits_per_step = inits_per_step
        self.init_mode = init_mode
        self.eta0 = eta0
        self.learn_labels = learn_labels
        self.learn_eta = learn_eta
        self.optimizer = optimizer
        self.tau = tau
        self.filters_per_height = filters_per_height
        self.fc_hidden = fc_hidden
        self.eval_steps = eval_steps
        self.random_state = random_state

    def fit(self, X, y, langs=None):
        encoder = check_encoder(self.encoder)
        texts, self.classes_, y_idx = check_texts_labels(X, y)
        langs = ["und"] * len(texts) if langs is None else [str(v) for v in langs]
        if len(langs) != len(texts):
            raise ValueError("langs must have one entry per sample")
        examples = [Example(t, int(c), lang) for t, c, lang in zip(texts, y_idx, langs)]
        corpus = Corpus(examples, [], [], len(self.classes_), list(dict.fromkeys(langs)))
        self.arch_ = ArchSpec(filters_per_height=self.filters_per_height, fc_hidden=self.fc_hidden,
                              classes=len(self.classes_), embed_dim=encoder.dim)
        config = DistillConfig(
            strategy=self.strategy, samples_per_class=self.samples_per_class, steps=self.steps,
            batch_size=self.batch_size, outer_lr=self.outer_lr,
            inits_per_step=self.inits_per_step, init_mode=self.init_mode, eta0=self.eta0,
            learn_labels=self.learn_labels, learn_eta=self.learn_eta, optimizer=self.optimizer,
            tau=self.tau, seed=self.random_state)
        self.distilled_, self.record_ = distill(config, corpus, encoder, self.arch_)
        self.params_ = ev.train_from_distilled(self.arch_, self.distilled_, encoder,
                                               InitSpec(self.init_mode, self.random_state),
                                               self.eval_steps)
        return self

    def decode(self) -> list:
        """Distilled samples as ``(label, text)`` pairs."""
        check_is_fitted(self, "distilled_")
        summary = decode(self.distilled_, self.encoder)
        labels = self.classes_.tolist()
        return [(labels[s.label], s.text()) for s in summary.sentences]
