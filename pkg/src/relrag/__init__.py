"""Paraphrase-guided retrieval-augmented relation completion."""

from .corpus import Corpus, Passage, ingest_tsv, load_corpus, save_corpus
from .evaluation import (
    Triple,
    approx_match,
    cooccurrence_count,
    evaluate,
    exact_match,
    partition,
)
from .fusion import FusedRanking, rrf_fuse
from .pipeline import Indices, PipelineConfig, Prediction, Query, run_batch, run_query
from .relations import RelationRegistry, default_registry, instantiate_question, load_registry

__version__ = "0.1.0"

__all__ = [
    "Corpus",
    "FusedRanking",
    "Indices",
    "Passage",
    "PipelineConfig",
    "Prediction",
    "Query",
    "RelationRegistry",
    "Triple",
    "approx_match",
    "cooccurrence_count",
    "default_registry",
    "evaluate",
    "exact_match",
    "ingest_tsv",
    "instantiate_question",
    "load_corpus",
    "load_registry",
    "partition",
    "rrf_fuse",
    "run_batch",
    "run_query",
    "save_corpus",
]
