"""Class-wise hardness of labeled datasets, measured in sentence-embedding space."""

__version__ = "0.1.0"

from .analysis import (
    correlate_report,
    pearson,
    reorg_evaluate,
    reorg_split,
    select_demonstrations,
    train_reference,
)
from .clustering import kmeans_fit, nearest_to_centroid
from .dataset import Dataset, Instance, LabelSchema, load_dataset
from .dimred import pca_fit_transform, umap_fit_transform
from .embeddings import EmbeddingMatrix, align, load_embeddings, store_embeddings
from .metrics import class_stats, geohard, geohard_total, inter_hardness, intra_hardness

__all__ = [
    "Dataset",
    "EmbeddingMatrix",
    "Instance",
    "LabelSchema",
    "align",
    "class_stats",
    "correlate_report",
    "geohard",
    "geohard_total",
    "inter_hardness",
    "intra_hardness",
    "kmeans_fit",
    "load_dataset",
    "load_embeddings",
    "nearest_to_centroid",
    "pca_fit_transform",
    "pearson",
    "reorg_evaluate",
    "reorg_split",
    "select_demonstrations",
    "store_embeddings",
    "train_reference",
    "umap_fit_transform",
]
