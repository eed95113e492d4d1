"""End-to-end linker with a scikit-learn estimator surface.

``fit`` runs the offline stage on a corpus: description-enhanced graph
construction, per-node subgraph extraction, two-stage encoder training, and
node encoding. ``predict`` runs the online stage per mention: nine-way
candidate retrieval, prior scoring, and decision-tree re-ranking. The free
functions carry the stage logic so the command-line pipeline can run the same
steps against file artifacts.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from .corpus import Corpus
from .embeddings import (
    EmbeddingStore,
    SyntheticEmbeddingProvider,
    enhance_nodes,
    select_enhancement_targets,
)
from .evaluation import LinkResult
from .evidence import EvidenceVector, assemble
from .gnn import TrainConfig, encode_all, train_student, train_teacher
from .graph import GraphConfig, build_gated_edges, build_llm_edges, union_graph
from .llm import LlmClient, LlmConfig
from .ppr import extract_all_subgraphs
from .reasoning import DecisionTree, identity_tree, induce_tree, rerank
from .retrieval import CandidateSet, prior_score, select_candidates

logger = logging.getLogger(__name__)


class LinkerError(ValueError):
    pass


@dataclass
class LinkStats:
    """Per-query work counters for the online stage."""

    channels_scanned: int
    candidates: int
    tree_evaluations: int


def synthesize_graph(
    corpus: Corpus,
    store: EmbeddingStore,
    graph_cfg: GraphConfig,
    llm: LlmClient,
    provider,
    enhance_budget: int | None = None,
    workers: int = 1,
):
    """Offline part one: enhance text signals, then union gated and top-K edges.

    Returns the graph and the store carrying the enhanced vectors.
    """
    targets = select_enhancement_targets(corpus, store, graph_cfg.k_llm, enhance_budget)
    enhanced_store = enhance_nodes(targets, llm, provider, store, corpus, workers=workers)
    e0 = build_gated_edges(enhanced_store, graph_cfg)
    e1 = build_llm_edges(enhanced_store, graph_cfg)
    graph = union_graph(e0, e1, corpus)
    logger.info(
        "graph: %d nodes, %d gated + %d enhanced edges -> %d total",
        len(graph.node_ids),
        len(e0),
        len(e1),
        graph.num_edges(),
    )
    return graph, enhanced_store


def candidate_evidence(
    mention,
    cands: CandidateSet,
    corpus: Corpus,
    store: EmbeddingStore,
    text_reps,
    image_reps,
) -> dict[str, EvidenceVector]:
    return {
        entity_id: assemble(mention, corpus.get(entity_id), store, text_reps, image_reps)
        for entity_id in cands.candidates
    }


def link_mention(
    mention,
    corpus: Corpus,
    store: EmbeddingStore,
    text_reps,
    image_reps,
    k_ch: int,
    tree: DecisionTree,
):
    """Online stage for one mention: retrieve, score priors, assemble evidence, rerank."""
    cands = select_candidates(mention, corpus, k_ch, store, text_reps, image_reps)
    cands = prior_score(cands)
    evidence_map = candidate_evidence(mention, cands, corpus, store, text_reps, image_reps)
    ranked = rerank(cands, evidence_map, tree)
    stats = LinkStats(
        channels_scanned=len(cands.active_channels()),
        candidates=len(cands.candidates),
        tree_evaluations=len(ranked),
    )
    return cands, ranked, evidence_map, stats


class MultimodalEntityLinker(BaseEstimator):
    """Unsupervised mention-to-entity linker over multi-perspective evidence.

    Parameters mirror the pipeline configuration; pluggable pieces (embedding
    provider, LLM client, a pre-parsed decision tree) default to deterministic
    local stand-ins so a fit/predict cycle runs without any external service.
    """

    def __init__(
        self,
        dim: int = 32,
        seed: int = 0,
        delta_gate: float = 0.9,
        k_llm: int = 30,
        k_ppr: int = 20,
        k_ch: int = 250,
        alpha: float = 0.15,
        ppr_tol: float = 1e-10,
        fusion_weights: tuple[float, float, float] = (1 / 3, 1 / 3, 1 / 3),
        eta: float = 0.5,
        tau: float = 0.1,
        lambda_distill: float = 0.75,
        lr: float = 0.01,
        epochs: int = 30,
        batch_size: int = 32,
        max_tree_depth: int = 5,
        enhance_budget: int | None = None,
        provider=None,
        llm=None,
        tree: DecisionTree | None = None,
    ):
        self.dim = dim
        self.seed = seed
        self.delta_gate = delta_gate
        self.k_llm = k_llm
        self.k_ppr = k_ppr
        self.k_ch = k_ch
        self.alpha = alpha
        self.ppr_tol = ppr_tol
        self.fusion_weights = fusion_weights
        self.eta = eta
        self.tau = tau
        self.lambda_distill = lambda_distill
        self.lr = lr
        self.epochs = epochs
        self.batch_size = batch_size
        self.max_tree_depth = max_tree_depth
        self.enhance_budget = enhance_budget
        self.provider = provider
        self.llm = llm
        self.tree = tree

    # -- configuration ----------------------------------------------------

    def _graph_config(self) -> GraphConfig:
        return GraphConfig(
            delta_gate=self.delta_gate, k_llm=self.k_llm, fusion_weights=tuple(self.fusion_weights)
        )

    def _train_config(self) -> TrainConfig:
        return TrainConfig(
            eta=self.eta,
            tau=self.tau,
            lambda_distill=self.lambda_distill,
            lr=self.lr,
            epochs=self.epochs,
            batch_size=self.batch_size,
            seed=self.seed,
        )

    def _resolve_provider(self, dim: int):
        return self.provider if self.provider is not None else SyntheticEmbeddingProvider(dim, self.seed)

    def _resolve_llm(self) -> LlmClient:
        return self.llm if self.llm is not None else LlmClient(LlmConfig())

    # -- offline stage -----------------------------------------------------

    def fit(self, corpus: Corpus, store: EmbeddingStore | None = None):
        """Run the offline stage; ``store`` defaults to provider-encoded vectors."""
        if not isinstance(corpus, Corpus):
            raise LinkerError("fit expects a Corpus")
        if not corpus.mentions or not corpus.entities:
            raise LinkerError("a linking run needs at least one mention and one entity")
        llm = self._resolve_llm()
        if store is None:
            from .embeddings import build_store

            provider = self._resolve_provider(self.dim)
            store = build_store(corpus, provider)
        else:
            provider = self._resolve_provider(store.dim)
        if store.dim != getattr(provider, "dim", store.dim):
            raise LinkerError(
                f"store dimension {store.dim} does not match provider dimension {provider.dim}"
            )
        self.corpus_ = corpus
        graph, enhanced_store = synthesize_graph(
            corpus, store, self._graph_config(), llm, provider, self.enhance_budget
        )
        self.store_ = enhanced_store
        self.graph_ = graph
        self.subgraphs_ = extract_all_subgraphs(
            graph, self.k_ppr, alpha=self.alpha, tol=self.ppr_tol
        )
        cfg = self._train_config()
        self.teacher_, self.teacher_losses_ = train_teacher(
            graph, enhanced_store, self.subgraphs_, cfg
        )
        self.student_, self.student_losses_ = train_student(
            graph, enhanced_store, self.subgraphs_, self.teacher_, cfg
        )
        self.text_reps_ = encode_all(self.teacher_, self.subgraphs_, enhanced_store)
        self.image_reps_ = encode_all(self.student_, self.subgraphs_, enhanced_store)
        if self.tree is not None:
            self.tree_ = self.tree
        else:
            stats = corpus.modality_stats()
            stats.update(n_mentions=len(corpus.mentions), n_entities=len(corpus.entities))
            self.tree_ = induce_tree(llm, stats, max_depth=self.max_tree_depth)
        return self

    # -- online stage -------------------------------------------------------

    def rank(self, mention_id: str):
        """Full ranked (entity, final score, trace) list for one fitted mention."""
        check_is_fitted(self, "graph_")
        mention = self.corpus_.get(mention_id)
        cands, ranked, _evidence, stats = link_mention(
            mention,
            self.corpus_,
            self.store_,
            self.text_reps_,
            self.image_reps_,
            self.k_ch,
            self.tree_,
        )
        self.last_stats_ = stats
        self.last_candidates_ = cands
        return ranked

    def link(self, mention_ids=None, truth: dict[str, str] | None = None):
        """LinkResult per mention (full ranking order), with optional ground truth."""
        check_is_fitted(self, "graph_")
        if mention_ids is None:
            mention_ids = self.corpus_.mention_ids()
        results = []
        for mention_id in mention_ids:
            ranked = self.rank(mention_id)
            results.append(
                LinkResult(
                    mention=mention_id,
                    ranked=tuple(entity_id for entity_id, _score, _trace in ranked),
                    truth=truth.get(mention_id) if truth else None,
                )
            )
        return results

    def predict(self, mention_ids=None):
        """Top-1 entity id per mention (the fitted corpus's mentions by default)."""
        results = self.link(mention_ids)
        return [result.ranked[0] if result.ranked else None for result in results]

    def identity_tree(self) -> DecisionTree:
        return identity_tree(self.max_tree_depth)
