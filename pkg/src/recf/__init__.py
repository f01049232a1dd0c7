"""Hybrid collaborative filtering with word-embedded item descriptions."""
from .data import DataError, SparseLabels, SparseRatings
from .datasets import make_planted
from .embeddings import DescriptionEmbedder, DescriptionMatrix, EmbeddingTable, SkipgramConfig
from .estimator import HybridRecommender
from .evaluation import run_sweep, split_dataset
from .factor_model import FitConfig, HybridModel, fit, predict

__all__ = [
    "DataError",
    "SparseLabels",
    "SparseRatings",
    "make_planted",
    "DescriptionEmbedder",
    "DescriptionMatrix",
    "EmbeddingTable",
    "SkipgramConfig",
    "HybridRecommender",
    "run_sweep",
    "split_dataset",
    "FitConfig",
    "HybridModel",
    "fit",
    "predict",
]
