"""Shapley-value explainable clustering: attribute model predictions, embed
the attributions with UMAP, cluster them with HDBSCAN and describe each
cluster with short threshold rules over the original features."""

from .cluster import NOISE, Clustering, hdbscan
from .core import Dataset, NormParams, load_csv, split
from .embed import Embedding, UmapParams, umap
from .errors import ConfigError, DataError, NumericError, ShapclustError
from .metrics import nmi, prf1
from .shapley import AttributionMatrix, attribute_dataset, exact_shapley, mc_shapley

__version__ = "0.1.0"

__all__ = [
    "NOISE", "Clustering", "hdbscan", "Dataset", "NormParams", "load_csv", "split",
    "Embedding", "UmapParams", "umap", "ConfigError", "DataError", "NumericError",
    "ShapclustError", "nmi", "prf1", "AttributionMatrix", "attribute_dataset",
    "exact_shapley", "mc_shapley",
]
