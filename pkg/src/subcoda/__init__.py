"""Variable-length Markov models of sperm whale coda rhythm."""

__version__ = "0.1.0"

from .ingest import CodaRecord, CodaSample, DataError, Dataset, OverlapMatrix, load_dataset, load_overlap_matrix
from .symbols import DiscretizationConfig, SymbolStream, encode_records
from .vlmc import ContextTree, classify, default_threshold, fit, generate, log_likelihood
from .metric import DistanceMatrix, distance_matrix, divergence, symmetric_distance
from .cluster import Dendrogram, adjusted_rand_index, average_linkage, cut

__all__ = [
    "CodaRecord",
    "CodaSample",
    "ContextTree",
    "DataError",
    "Dataset",
    "Dendrogram",
    "DiscretizationConfig",
    "DistanceMatrix",
    "OverlapMatrix",
    "SymbolStream",
    "adjusted_rand_index",
    "average_linkage",
    "classify",
    "cut",
    "default_threshold",
    "distance_matrix",
    "divergence",
    "encode_records",
    "fit",
    "generate",
    "load_dataset",
    "load_overlap_matrix",
    "log_likelihood",
    "symmetric_distance",
]
