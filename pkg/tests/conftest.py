import numpy as np
import pytest

from textdistill import autodiff as ad
from textdistill.classifier import ArchSpec
from textdistill.corpus import generate_synthetic
from textdistill.encoder import Contextualizer, EmbeddingTable, Encoder, Vocabulary


@pytest.fixture(autouse=True)
def _checked_mode():
    with ad.checked(True):
        yield


def tiny_encoder(V=10, d=4, s=5, attention=True, seed=0):
    rng = np.random.default_rng(seed)
    rows = np.vstack([np.zeros(d), rng.normal(size=(V - 1, d))])
    tokens = ["<pad>"] + [f"w{i}" for i in range(1, V)]
    langs = ["none"] + ["aa" if i % 2 else "bb" for i in range(1, V)]
    ctx = Contextualizer.frozen_attention(d, seed) if attention else Contextualizer.identity()
    return Encoder(Vocabulary(tokens, langs), EmbeddingTable(rows), ctx, seq_len=s)


@pytest.fixture(scope="session")
def small_task():
    corpus, vocab, table = generate_synthetic(sizes=(24, 6, 12), seed=0)
    encoder = Encoder(vocab, table, Contextualizer.frozen_attention(16, 0), seq_len=12)
    return corpus, encoder, ArchSpec(filters_per_height=4, fc_hidden=8, classes=3, embed_dim=16)


# one line per acceptance criterion, echoed at the end of the run
ACCEPTANCE = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE:
            terminalreporter.write_line(line)
