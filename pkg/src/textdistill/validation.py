"""Input checks for the estimator wrappers."""
from __future__ import annotations

import numpy as np

from .encoder import Encoder


def check_texts(X) -> list:
    """Coerce a 1-d collection of strings to a list; reject anything else."""
    if isinstance(X, str):
        raise ValueError("expected a collection of strings, got a single string")
    arr = np.asarray(X, dtype=object)
    if arr.ndim != 1:
        raise ValueError(f"expected a 1-d collection of strings, got shape {arr.shape}")
    if arr.size == 0:
        raise ValueError("no samples given")
    bad = [type(v).__name__ for v in arr if not isinstance(v, str)]
    if bad:
        raise ValueError(f"all samples must be strings, found {bad[0]}")
    return [str(v) for v in arr]


def check_texts_labels(X, y):
    texts = check_texts(X)
    y = np.asarray(y)
    if y.ndim != 1 or len(y) != len(texts):
        raise ValueError(f"y must be 1-d with {len(texts)} entries")
    classes, y_idx = np.unique(y, return_inverse=True)
    if len(classes) < 2:
        raise ValueError("need at least two classes")
    return texts, classes, y_idx.astype(np.int64)


def check_encoder(encoder) -> Encoder:
    if not isinstance(encoder, Encoder):
        raise TypeError("encoder must be a textdistill.Encoder")
    return encoder
