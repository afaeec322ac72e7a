"""Frozen text representation: vocabulary, embedding lookup, contextualizer.

The embedding table plays the role of a language model's input lookup
matrix and the contextualizer the role of its (frozen) body. Nothing in
this module is ever trained.
"""
from __future__ import annotations

import hashlib
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import LabelError, ParseError, SchemaError, VocabularyError
from .rng import make_rng

PAD = "<pad>"
PAD_ID = 0
PAD_LANG = "none"


class Vocabulary:
    """Ordered token list with a language tag per token; index 0 is padding."""

    def __init__(self, tokens: Sequence[str], lang_tags: Sequence[str]):
        tokens, lang_tags = list(tokens), list(lang_tags)
        if len(tokens) != len(lang_tags):
            raise VocabularyError("tokens and lang_tags differ in length")
        if len(tokens) < 2:
            raise VocabularyError("vocabulary needs at least 2 tokens")
        if tokens[0] != PAD or lang_tags[0] != PAD_LANG:
            raise VocabularyError(f"index 0 must be {PAD!r} tagged {PAD_LANG!r}")
        index = {}
        for i, tok in enumerate(tokens):
            if tok in index:
                raise VocabularyError(f"duplicate token {tok!r}")
            index[tok] = i
        self.tokens = tuple(tokens)
        self.lang_tags = tuple(lang_tags)
        self._index = index

    pad_id = PAD_ID

    def __len__(self):
        return len(self.tokens)

    def __contains__(self, token):
        return token in self._index

    def id_of(self, token: str) -> int:
        """Token id, or the pad id for out-of-vocabulary tokens."""
        return self._index.get(token, PAD_ID)

    def tokenize(self, text: str) -> list:
        return [self.id_of(t) for t in text.lower().split()]

    def languages(self) -> list:
        seen = []
        for tag in self.lang_tags[1:]:
            if tag not in seen:
                seen.append(tag)
        return seen


class EmbeddingTable:
    """Frozen ``V x d`` lookup matrix. Row 0 (padding) is all zeros."""

    def __init__(self, matrix, collinear_tol: float = 1e-9):
        m = np.array(matrix, dtype=np.float64)
        if m.ndim != 2 or m.shape[0] < 2 or m.shape[1] < 1:
            raise SchemaError(f"embedding matrix must be V x d with V >= 2, got {m.shape}")
        if np.any(m[PAD_ID] != 0.0):
            raise SchemaError("pad row must be the zero vector")
        if not np.isfinite(m).all():
            raise SchemaError("embedding matrix contains non-finite values")
        _reject_collinear(m[1:], collinear_tol)
        m.flags.writeable = False
        self.matrix = m
        self._checksum = self.checksum()

    @property
    def vocab_size(self) -> int:
        return self.matrix.shape[0]

    @property
    def dim(self) -> int:
        return self.matrix.shape[1]

    def checksum(self) -> str:
        return hashlib.sha256(self.matrix.tobytes()).hexdigest()

    def unchanged(self) -> bool:
        return self.checksum() == self._checksum

    def row_norm_mean(self) -> float:
        return float(np.linalg.norm(self.matrix[1:], axis=1).mean())


def _reject_collinear(rows: np.ndarray, tol: float) -> None:
    norms = np.linalg.norm(rows, axis=1)
    if np.any(norms == 0):
        raise SchemaError("non-pad embedding rows must be nonzero")
    unit = rows / norms[:, None]
    cos = unit @ unit.T
    np.fill_diagonal(cos, -np.inf)
    i, j = np.unravel_index(np.argmax(cos), cos.shape)
    if cos[i, j] >= 1.0 - tol:
        raise SchemaError(f"embedding rows {i + 1} and {j + 1} are positive multiples")


@dataclass(frozen=True, eq=False)
class Contextualizer:
    """Frozen sequence transform ``[..., s, d] -> [..., s, d]``.

    ``identity`` passes input through. ``attention`` adds a single-head
    scaled dot-product self-attention output to its input.
    """

    kind: str = "identity"
    wq: np.ndarray | None = field(default=None, repr=False)
    wk: np.ndarray | None = field(default=None, repr=False)
    wv: np.ndarray | None = field(default=None, repr=False)
    wo: np.ndarray | None = field(default=None, repr=False)

    def __post_init__(self):
        if self.kind not in ("identity", "attention"):
            raise ValueError(f"unknown contextualizer kind {self.kind!r}")
        if self.kind == "attention":
            for name in ("wq", "wk", "wv", "wo"):
                w = np.array(getattr(self, name), dtype=np.float64)
                w.flags.writeable = False
                object.__setattr__(self, name, w)

    @classmethod
    def identity(cls) -> "Contextualizer":
        return cls("identity")

    @classmethod
    def frozen_attention(cls, d: int, seed: int = 0) -> "Contextualizer":
        rng = make_rng(seed, "contextualizer")
        ws = [rng.normal(0.0, 1.0 / np.sqrt(d), size=(d, d)) for _ in range(4)]
        return cls("attention", *ws)

    def __call__(self, x):
        if self.kind == "identity":
            return x
        if isinstance(x, Tensor):
            return self._attend(x)
        with ad.no_grad():
            return self._attend(Tensor(x)).data

    def _attend(self, x: Tensor) -> Tensor:
        d = x.shape[-1]
        q = x @ self.wq
        k = x @ self.wk
        v = x @ self.wv
        weights = ad.softmax(ad.scale(q @ ad.swapaxes(k), 1.0 / np.sqrt(d)), axis=-1)
        return x + (weights @ v) @ self.wo


def pad_or_truncate(ids: Sequence[int], s: int) -> list:
    if s < 1:
        raise ValueError("sequence length must be >= 1")
    ids = list(ids)[:s]
    return ids + [PAD_ID] * (s - len(ids))


def one_hot(label: int, num_classes: int) -> np.ndarray:
    if not 0 <= int(label) < num_classes:
        raise LabelError(f"label {label} outside 0..{num_classes - 1}")
    v = np.zeros(num_classes)
    v[int(label)] = 1.0
    return v


def nearest_embed(query, reference, metric: str = "cosine"):
    """Index and similarity of the reference row closest to ``query``.

    Cosine ignores the pad row and ties go to the lowest id. A zero query
    has no direction, so it is matched by L2 distance instead (which can
    land on the pad row). Under L2 the similarity is the negated distance.
    """
    ids, sims = nearest_embed_many(np.asarray(query, dtype=np.float64)[None, :], reference, metric)
    return int(ids[0]), float(sims[0])


def nearest_embed_many(queries, reference, metric: str = "cosine"):
    queries = np.asarray(queries, dtype=np.float64)
    reference = np.asarray(reference, dtype=np.float64)
    if reference.shape[0] == 0:
        raise ValueError("empty reference table")
    if metric not in ("cosine", "l2"):
        raise ValueError(f"unknown metric {metric!r}")
    q_norm = np.linalg.norm(queries, axis=1)
    use_l2 = np.full(len(queries), metric == "l2")
    use_l2 |= q_norm == 0.0
    ids = np.zeros(len(queries), dtype=np.int64)
    sims = np.zeros(len(queries))

    cos_rows = np.flatnonzero(~use_l2)
    if cos_rows.size:
        r_norm = np.linalg.norm(reference, axis=1)
        valid = r_norm > 0
        valid[PAD_ID] = False
        safe = np.where(valid, r_norm, 1.0)
        cos = (queries[cos_rows] @ reference.T) / (q_norm[cos_rows, None] * safe[None, :])
        cos[:, ~valid] = -np.inf
        best = cos.argmax(axis=1)
        ids[cos_rows] = best
        sims[cos_rows] = cos[np.arange(len(cos_rows)), best]

    l2_rows = np.flatnonzero(use_l2)
    if l2_rows.size:
        dist = np.linalg.norm(queries[l2_rows, None, :] - reference[None, :, :], axis=2)
        best = dist.argmin(axis=1)
        ids[l2_rows] = best
        sims[l2_rows] = -dist[np.arange(len(l2_rows)), best]
    return ids, sims


class Encoder:
    """Vocabulary + frozen table + contextualizer at a fixed sentence length."""

    def __init__(self, vocab: Vocabulary, table: EmbeddingTable,
                 contextualizer: Contextualizer | None = None, seq_len: int = 12,
                 metric: str = "cosine"):
        if len(vocab) != table.vocab_size:
            raise SchemaError(f"vocabulary has {len(vocab)} tokens, table has {table.vocab_size} rows")
        if seq_len < 1:
            raise ValueError("seq_len must be >= 1")
        self.vocab = vocab
        self.table = table
        self.contextualizer = contextualizer or Contextualizer.identity()
        self.seq_len = int(seq_len)
        self.metric = metric
        self._reference = None

    @property
    def dim(self) -> int:
        return self.table.dim

    @property
    def vocab_size(self) -> int:
        return self.table.vocab_size

    def pad_or_truncate(self, ids):
        return pad_or_truncate(ids, self.seq_len)

    def embed(self, ids) -> np.ndarray:
        ids = np.asarray(ids, dtype=np.int64)
        if ids.size and (ids.min() < 0 or ids.max() >= self.vocab_size):
            raise VocabularyError(f"token id outside 0..{self.vocab_size - 1}")
        return self.table.matrix[ids]

    def contextualize(self, x):
        return self.contextualizer(x)

    def token_ids(self, texts: Iterable[str]) -> np.ndarray:
        return np.array([self.pad_or_truncate(self.vocab.tokenize(t)) for t in texts],
                        dtype=np.int64).reshape(-1, self.seq_len)

    def encode_texts(self, texts: Iterable[str]) -> np.ndarray:
        """Pad, embed and contextualize a batch of sentences: ``[N, s, d]``."""
        return self.contextualize(self.embed(self.token_ids(texts)))

    def per_word_reference_table(self) -> np.ndarray:
        """Each vocabulary word encoded on its own (position 0, rest padding)."""
        if self._reference is None:
            ids = np.zeros((self.vocab_size, self.seq_len), dtype=np.int64)
            ids[:, 0] = np.arange(self.vocab_size)
            ref = np.array(self.contextualize(self.embed(ids))[:, 0, :])
            ref.flags.writeable = False
            self._reference = ref
        return self._reference

    def one_hot(self, label, num_classes):
        return one_hot(label, num_classes)

    def nearest_embed(self, query, reference=None):
        ref = self.table.matrix if reference is None else reference
        return nearest_embed(query, ref, self.metric)


# ----------------------------------------------------------------------
# embedding-table file: "V d" header, then token<TAB>lang<TAB>floats
# ----------------------------------------------------------------------
def save_embedding_file(path, vocab: Vocabulary, table: EmbeddingTable) -> None:
    lines = [f"{table.vocab_size} {table.dim}"]
    for tok, lang, row in zip(vocab.tokens, vocab.lang_tags, table.matrix):
        lines.append(f"{tok}\t{lang}\t" + " ".join(repr(float(v)) for v in row))
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def load_embedding_file(path):
    """Read and validate an embedding-table file; returns ``(Vocabulary, EmbeddingTable)``."""
    text = Path(path).read_text(encoding="utf-8")
    lines = text.splitlines()
    if not lines:
        raise ParseError("empty embedding file", 1)
    try:
        v_count, dim = (int(p) for p in lines[0].split())
    except ValueError:
        raise ParseError("header must be 'V d'", 1) from None
    body = [ln for ln in lines[1:] if ln.strip()]
    if len(body) != v_count:
        raise SchemaError(f"header declares {v_count} rows, file has {len(body)}")
    tokens, langs, rows = [], [], []
    for i, line in enumerate(body, start=2):
        parts = line.split("\t")
        if len(parts) != 3:
            raise ParseError("expected token<TAB>lang<TAB>values", i)
        try:
            values = [float(x) for x in parts[2].split()]
        except ValueError:
            raise ParseError("non-numeric embedding value", i) from None
        if len(values) != dim:
            raise SchemaError(f"line {i}: expected {dim} values, got {len(values)}")
        tokens.append(parts[0])
        langs.append(parts[1])
        rows.append(values)
    return Vocabulary(tokens, langs), EmbeddingTable(np.array(rows))
