"""Latent-space non-linear mapping for bilingual lexicon induction."""

from .embio import (
    EmbeddingSpace,
    SeedDictionary,
    load_dictionary,
    load_embeddings,
    make_unique,
    normalize,
    save_dictionary,
    save_embeddings,
)
from .model import Dims, LatentMapModel
from .retrieval import evaluate, induce_dictionary, precision_at_k
from .trainer import TrainingConfig, TrainingState, train

__version__ = "0.1.0"
