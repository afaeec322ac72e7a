"""Where the learnable summary lives, and how it becomes classifier input.

* ``vanilla``      - embeddings learned at the encoder's output; fed to the
                     classifier as-is.
* ``skip_lookup``  - embeddings learned at the encoder's input (replacing the
                     lookup); passed through the contextualizer.
* ``vocab_softmax``- per-position vocabulary logits; softmax weights mix the
                     embedding table rows, then contextualize.
* ``vocab_gumbel`` - as above with a Gumbel-softmax relaxed sample.
"""
from __future__ import annotations

import enum
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .classifier import split_header
from .encoder import PAD_ID, Encoder, nearest_embed_many
from .errors import ArgumentError, DimensionError, SchemaError
from .rng import make_rng

ETA_FLOOR = 1e-6
VOCAB_INIT_SCALE = 0.01


class StrategyKind(str, enum.Enum):
    VANILLA = "vanilla"
    SKIP_LOOKUP = "skip_lookup"
    VOCAB_SOFTMAX = "vocab_softmax"
    VOCAB_GUMBEL = "vocab_gumbel"

    @property
    def is_vocab(self) -> bool:
        return self in (StrategyKind.VOCAB_SOFTMAX, StrategyKind.VOCAB_GUMBEL)

    def __str__(self):
        return self.value


@dataclass
class DistilledData:
    kind: StrategyKind
    x: np.ndarray        # [M, s, d] or [M, s, V]
    y: np.ndarray        # [M, C]
    eta: float
    tau: float = 0.5
    embed_dim: int = 0
    vocab_size: int = 0

    def __post_init__(self):
        self.kind = StrategyKind(self.kind)
        self.x = np.asarray(self.x, dtype=np.float64)
        self.y = np.asarray(self.y, dtype=np.float64)
        if self.x.ndim != 3 or self.y.ndim != 2 or self.x.shape[0] != self.y.shape[0]:
            raise DimensionError("x must be [M, s, w] and y [M, C] with matching M")
        width = self.vocab_size if self.kind.is_vocab else self.embed_dim
        if width and self.x.shape[2] != width:
            raise DimensionError(f"{self.kind} expects last axis {width}, got {self.x.shape[2]}")
        if np.any(np.abs(self.y.sum(axis=1) - 1.0) > 1e-6):
            raise SchemaError("label rows must sum to 1")
        if self.eta < ETA_FLOOR:
            raise SchemaError(f"learning rate below floor {ETA_FLOOR}")

    @property
    def num_samples(self) -> int:
        return self.x.shape[0]

    @property
    def seq_len(self) -> int:
        return self.x.shape[1]

    @property
    def num_classes(self) -> int:
        return self.y.shape[1]

    def copy(self) -> "DistilledData":
        return DistilledData(self.kind, self.x.copy(), self.y.copy(), self.eta, self.tau,
                             self.embed_dim, self.vocab_size)

    def to_bytes(self) -> bytes:
        M, s, _ = self.x.shape
        header = {"format": "distilled-v1", "kind": self.kind.value, "M": M, "s": s,
                  "d": self.embed_dim, "V": self.vocab_size, "C": self.num_classes,
                  "tau": repr(float(self.tau)), "eta": repr(float(self.eta)),
                  "width": self.x.shape[2]}
        head = "".join(f"{k}={v}\n" for k, v in header.items()) + "\n"
        payload = self.x.astype("<f8").tobytes() + self.y.astype("<f8").tobytes()
        return head.encode("ascii") + payload

    @classmethod
    def from_bytes(cls, blob: bytes) -> "DistilledData":
        h, payload = split_header(blob)
        if h.get("format") != "distilled-v1":
            raise SchemaError("not a distilled-data file")
        M, s, w, C = int(h["M"]), int(h["s"]), int(h["width"]), int(h["C"])
        flat = np.frombuffer(payload, dtype="<f8").astype(np.float64)
        if flat.size != M * s * w + M * C:
            raise SchemaError("payload size does not match header")
        x = flat[:M * s * w].reshape(M, s, w).copy()
        y = flat[M * s * w:].reshape(M, C).copy()
        return cls(h["kind"], x, y, float(h["eta"]), float(h["tau"]), int(h["d"]), int(h["V"]))

    def save(self, path) -> None:
        Path(path).write_bytes(self.to_bytes())

    @classmethod
    def load(cls, path) -> "DistilledData":
        return cls.from_bytes(Path(path).read_bytes())


def init_distilled(kind, samples_per_class: int, num_classes: int, encoder: Encoder,
                   eta0: float = 0.1, seed: int = 0, tau: float = 0.5) -> DistilledData:
    """Random starting summary with one-hot labels, ``samples_per_class`` per class.

    Embedding kinds start Gaussian with row norms matched to the table's;
    vocabulary kinds start with near-uniform logits.
    """
    kind = StrategyKind(kind)
    if samples_per_class < 1 or num_classes < 1:
        raise ArgumentError("need at least one sample and one class")
    M = samples_per_class * num_classes
    rng = make_rng(seed, "distilled", "init", kind.value)
    s, d, V = encoder.seq_len, encoder.dim, encoder.vocab_size
    if kind.is_vocab:
        x = rng.normal(0.0, VOCAB_INIT_SCALE, size=(M, s, V))
    else:
        x = rng.normal(0.0, encoder.table.row_norm_mean() / np.sqrt(d), size=(M, s, d))
    y = np.zeros((M, num_classes))
    y[np.arange(M), np.arange(M) // samples_per_class] = 1.0
    return DistilledData(kind, x, y, float(eta0), float(tau), d, V)


def check_multiple(M: int, num_classes: int) -> int:
    if num_classes < 1 or M % num_classes:
        raise ArgumentError(f"M={M} is not a multiple of the class count {num_classes}")
    return M // num_classes


def sample_gumbel(shape, rng: np.random.Generator) -> np.ndarray:
    u = rng.random(shape)
    u = np.clip(u, np.finfo(np.float64).tiny, 1.0 - np.finfo(np.float64).epsneg)
    return -np.log(-np.log(u))


def gumbel_softmax(logits, tau: float, rng: np.random.Generator | None = None,
                   noise=None, axis: int = -1):
    """Relaxed categorical sample ``softmax((logits + g) / tau)``.

    ``noise`` overrides the Gumbel draw ``g`` (pass 0 for the noise-free
    reduction). Returns a Tensor when ``logits`` is one, else an ndarray.
    """
    if tau <= 0:
        raise ArgumentError("temperature must be positive")
    as_array = not isinstance(logits, Tensor)
    logits = ad.as_tensor(logits)
    if noise is None:
        if rng is None:
            raise ArgumentError("gumbel_softmax needs an rng or explicit noise")
        noise = sample_gumbel(logits.shape, rng)
    noise = np.broadcast_to(np.asarray(noise, dtype=np.float64), logits.shape)
    out = ad.softmax(ad.div(logits + noise, float(tau)), axis=axis)
    return out.data if as_array else out


def materialize(dd: DistilledData, encoder: Encoder, x: Tensor | None = None,
                rng: np.random.Generator | None = None, noise=None) -> Tensor:
    """Classifier-ready ``[M, s, d]`` embeddings, differentiable in ``x``.

    ``x`` substitutes for ``dd.x`` (e.g. a leaf tensor being optimised).
    The gumbel kind needs ``rng`` or explicit ``noise``.
    """
    x = Tensor(dd.x) if x is None else x
    kind = dd.kind
    if kind is StrategyKind.VANILLA:
        return x
    if kind is StrategyKind.SKIP_LOOKUP:
        return encoder.contextualize(x)
    table = encoder.table.matrix
    if kind is StrategyKind.VOCAB_SOFTMAX:
        weights = ad.softmax(x, axis=-1)
    else:
        weights = gumbel_softmax(x, dd.tau, rng=rng, noise=noise)
    return encoder.contextualize(weights @ table)


@dataclass
class DecodedSentence:
    index: int
    label: int
    ids: list
    tokens: list
    similarities: list

    def text(self) -> str:
        return " ".join(self.tokens)


@dataclass
class DecodedSummary:
    kind: StrategyKind
    sentences: list = field(default_factory=list)

    def __len__(self):
        return len(self.sentences)

    def all_ids(self) -> np.ndarray:
        return np.array([i for s in self.sentences for i in s.ids], dtype=np.int64)

    def to_jsonl(self) -> str:
        lines = [json.dumps({"index": s.index, "label": s.label, "tokens": s.tokens,
                             "similarities": [round(v, 12) for v in s.similarities]},
                            ensure_ascii=False)
                 for s in self.sentences]
        return "\n".join(lines) + "\n"

    def to_text(self) -> str:
        return "".join(f"[{s.label}] {s.text()}\n" for s in self.sentences)


def decode(dd: DistilledData, encoder: Encoder) -> DecodedSummary:
    """Map every distilled position back to a vocabulary token.

    Output-level embeddings are matched against the per-word reference
    table, input-level embeddings against the lookup table, and vocabulary
    logits by argmax. Reported similarity is cosine (or negated L2 distance)
    for embedding kinds and the softmax probability for vocabulary kinds.
    """
    M, s, w = dd.x.shape
    flat = dd.x.reshape(M * s, w)
    if dd.kind.is_vocab:
        ids = flat.argmax(axis=1)
        z = flat - flat.max(axis=1, keepdims=True)
        probs = np.exp(z) / np.exp(z).sum(axis=1, keepdims=True)
        sims = probs[np.arange(len(ids)), ids]
    else:
        if dd.kind is StrategyKind.VANILLA:
            reference = encoder.per_word_reference_table()
        else:
            reference = encoder.table.matrix
        ids, sims = nearest_embed_many(flat, reference, encoder.metric)
    ids = ids.reshape(M, s)
    sims = sims.reshape(M, s)
    labels = dd.y.argmax(axis=1)
    vocab = encoder.vocab
    out = DecodedSummary(dd.kind)
    for i in range(M):
        row = [int(t) for t in ids[i]]
        out.sentences.append(DecodedSentence(
            index=i, label=int(labels[i]), ids=row,
            tokens=[vocab.tokens[t] for t in row],
            similarities=[float(v) for v in sims[i]]))
    return out


def is_pad(token_id: int) -> bool:
    return token_id == PAD_ID
