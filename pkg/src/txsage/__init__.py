"""Inductive GraphSAGE embeddings for weekly transaction graphs."""
from .graph import (CSV_HEADER, HeteroGraph, NodeType, RecordError, TransactionRecord,
                    build_graph, load_graph, read_records, write_records)
from .model import (EmbeddingTable, ModelConfig, ModelParams, embed_graph, forward,
                    init_params, load_checkpoint, node_features, save_checkpoint)
from .sampler import SamplerConfig, SamplingError
from .trainer import LossBreakdown, TrainConfig, pair_loss, train
from .evaluate import SimilarityReport, cosine, separability, similarity_report, weekly_series

__version__ = "0.1.0"

__all__ = [
    "CSV_HEADER", "HeteroGraph", "NodeType", "RecordError", "TransactionRecord",
    "build_graph", "load_graph", "read_records", "write_records",
    "EmbeddingTable", "ModelConfig", "ModelParams", "embed_graph", "forward",
    "init_params", "load_checkpoint", "node_features", "save_checkpoint",
    "SamplerConfig", "SamplingError",
    "LossBreakdown", "TrainConfig", "pair_loss", "train",
    "SimilarityReport", "cosine", "separability", "similarity_report", "weekly_series",
]
