"""Dataset distillation for text classification.

Learns a handful of synthetic sentences (as embeddings or vocabulary
distributions) such that one gradient step of a text CNN on them yields a
classifier close to one trained on the full corpus.
"""
from .classifier import ArchSpec, InitSpec, TextCnnParams
from .corpus import Corpus, Example, generate_synthetic, load_jsonl
from .distiller import DistillConfig, DistillRunRecord, distill, meta_step
from .encoder import Contextualizer, EmbeddingTable, Encoder, Vocabulary
from .estimators import TextCNNClassifier, TextDatasetDistiller
from .strategies import DistilledData, StrategyKind, decode, materialize

__version__ = "0.1.0"

__all__ = [
    "ArchSpec", "InitSpec", "TextCnnParams", "Corpus", "Example", "generate_synthetic",
    "load_jsonl", "DistillConfig", "DistillRunRecord", "distill", "meta_step", "Contextualizer",
    "EmbeddingTable", "Encoder", "Vocabulary", "TextCNNClassifier", "TextDatasetDistiller",
    "DistilledData", "StrategyKind", "decode", "materialize",
]
