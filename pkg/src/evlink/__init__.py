"""Unsupervised multimodal entity linking over multi-perspective evidence."""

from .corpus import Corpus, CorpusError, MultimodalNode, load_corpus, modality_indicator, save_corpus
from .embeddings import (
    EmbeddingError,
    EmbeddingStore,
    FileEmbeddingProvider,
    SyntheticEmbeddingProvider,
    build_store,
    enhance_nodes,
    select_enhancement_targets,
)
from .evaluation import (
    LinkResult,
    PlantedCorpus,
    check_theorem1,
    check_theorem2,
    generate_planted,
    hit_at_k,
)
from .evidence import FEATURE_NAMES, EvidenceVector, assemble
from .gnn import (
    GnnModel,
    TrainConfig,
    encode_all,
    gcn_forward,
    infonce_loss,
    structural_loss,
    train_student,
    train_teacher,
)
from .graph import ContextGraph, GraphConfig, build_gated_edges, build_llm_edges, gated_similarity, union_graph
from .lexical import lex_similarity, matched_length
from .linker import MultimodalEntityLinker
from .llm import LlmClient, LlmConfig
from .ppr import Subgraph, extract_subgraph, ppr_scores
from .reasoning import DecisionTree, evaluate, identity_tree, induce_tree, parse_tree, rerank
from .retrieval import CandidateSet, channel_topk, prior_score, select_candidates

__version__ = "0.1.0"

__all__ = [
    "CandidateSet",
    "ContextGraph",
    "Corpus",
    "CorpusError",
    "DecisionTree",
    "EmbeddingError",
    "EmbeddingStore",
    "EvidenceVector",
    "FEATURE_NAMES",
    "FileEmbeddingProvider",
    "GnnModel",
    "GraphConfig",
    "LinkResult",
    "LlmClient",
    "LlmConfig",
    "MultimodalEntityLinker",
    "MultimodalNode",
    "PlantedCorpus",
    "Subgraph",
    "SyntheticEmbeddingProvider",
    "TrainConfig",
    "assemble",
    "build_gated_edges",
    "build_llm_edges",
    "build_store",
    "channel_topk",
    "check_theorem1",
    "check_theorem2",
    "encode_all",
    "enhance_nodes",
    "evaluate",
    "extract_subgraph",
    "gated_similarity",
    "gcn_forward",
    "generate_planted",
    "hit_at_k",
    "identity_tree",
    "induce_tree",
    "infonce_loss",
    "lex_similarity",
    "load_corpus",
    "matched_length",
    "modality_indicator",
    "parse_tree",
    "ppr_scores",
    "prior_score",
    "rerank",
    "save_corpus",
    "select_candidates",
    "select_enhancement_targets",
    "structural_loss",
    "train_student",
    "train_teacher",
    "union_graph",
]
