"""Knowledge-graph-aware CTR prediction by multi-hop preference propagation."""

from .dataset import InteractionDataset, implicit_transform, split, user_history
from .kg import KnowledgeGraph, RippleSets, build_ripple_sets, common_khop_neighbors, load_kg, relevant_entities
from .metrics import PredictionRecord, accuracy, auc, topk_metrics
from .model import (
    ForwardTrace,
    Hyperparams,
    InteractionBatch,
    ModelParams,
    gradients,
    kge_score,
    loss,
    predict,
    propagate,
    relevance,
)
from .trainer import TrainReport, train, triple_batch_sampler

__version__ = "0.1.0"
