"""Contextualized graph construction over mentions and entities.

Two edge sources are combined into one undirected graph: pairs whose
modality-gated similarity clears a threshold, and each node's top-K partners
under the description-enhanced fused similarity. Edge scores are provenance
metadata only; downstream propagation uses binary adjacency.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .corpus import Corpus
from .embeddings import EmbeddingStore

GATED = "gated"
LLM_ENHANCED = "llm"
BOTH = "both"


class GraphError(ValueError):
    """Raised for invalid configuration or dangling edge endpoints."""


@dataclass(frozen=True)
class GraphConfig:
    delta_gate: float = 0.9
    k_llm: int = 30
    fusion_weights: tuple[float, float, float] = (1 / 3, 1 / 3, 1 / 3)

    def __post_init__(self) -> None:
        if self.k_llm < 1:
            raise GraphError("k_llm must be >= 1")
        w = self.fusion_weights
        if len(w) != 3 or any(x < 0 for x in w) or sum(w) == 0:
            raise GraphError("fusion_weights must be three nonnegative reals, not all zero")


def _canonical(a: str, b: str) -> tuple[str, str]:
    return (a, b) if a <= b else (b, a)


class ContextGraph:
    """Undirected, loop-free graph with provenance-tagged edges."""

    def __init__(self, node_ids, edges: dict[tuple[str, str], tuple[str, float]]):
        self.node_ids: tuple[str, ...] = tuple(sorted(node_ids))
        node_set = set(self.node_ids)
        for (a, b) in edges:
            if a == b:
                raise GraphError(f"self-loop on {a!r}")
            if (a, b) != _canonical(a, b):
                raise GraphError(f"edge ({a!r}, {b!r}) is not canonically ordered")
            if a not in node_set or b not in node_set:
                raise GraphError(f"edge ({a!r}, {b!r}) has a dangling endpoint")
        self.edges: dict[tuple[str, str], tuple[str, float]] = dict(edges)
        adjacency: dict[str, list[str]] = {i: [] for i in self.node_ids}
        for (a, b) in self.edges:
            adjacency[a].append(b)
            adjacency[b].append(a)
        self._adjacency = {k: tuple(sorted(v)) for k, v in adjacency.items()}

    def __contains__(self, node_id: str) -> bool:
        return node_id in self._adjacency

    def num_edges(self) -> int:
        return len(self.edges)

    def has_edge(self, a: str, b: str) -> bool:
        return _canonical(a, b) in self.edges

    def neighbors(self, node_id: str) -> tuple[str, ...]:
        return self._adjacency[node_id]

    def degree(self, node_id: str) -> int:
        return len(self._adjacency[node_id])

    def content_hash(self) -> str:
        """Stable digest of the node set and canonical edge list."""
        h = hashlib.sha256()
        for node_id in self.node_ids:
            h.update(node_id.encode("utf-8") + b"\x1e")
        for (a, b) in sorted(self.edges):
            provenance, score = self.edges[(a, b)]
            h.update(f"{a}\x1f{b}\x1f{provenance}\x1f{score!r}\x1e".encode("utf-8"))
        return h.hexdigest()


def gated_similarity(a: str, b: str, store: EmbeddingStore) -> float:
    """Text cosine plus image cosine, the latter only when both nodes have images."""
    score = float(store.text(a) @ store.text(b))
    va, vb = store.image(a), store.image(b)
    if va is not None and vb is not None:
        score += float(va @ vb)
    return score


def build_gated_edges(store: EmbeddingStore, cfg: GraphConfig, node_ids=None) -> dict:
    """All unordered pairs whose gated similarity reaches the threshold.

    Mention-entity, mention-mention, and entity-entity pairs are all eligible.
    Returns a map from canonical pair to admitting score.
    """
    ids = sorted(node_ids) if node_ids is not None else sorted(store.text_emb)
    n = len(ids)
    if n < 2:
        return {}
    text = np.stack([store.text(i) for i in ids])
    # zero rows for missing images make the gate implicit: the image term is
    # added exactly when both vectors are present
    img = np.zeros((n, store.dim))
    for k, node_id in enumerate(ids):
        vec = store.image(node_id)
        if vec is not None:
            img[k] = vec
    sims = text @ text.T + img @ img.T
    edges: dict[tuple[str, str], float] = {}
    upper = np.triu_indices(n, k=1)
    keep = sims[upper] >= cfg.delta_gate
    for r, c in zip(upper[0][keep], upper[1][keep]):
        edges[(ids[int(r)], ids[int(c)])] = float(sims[int(r), int(c)])
    return edges


def llm_fused_similarity(a: str, b: str, store: EmbeddingStore, cfg: GraphConfig) -> float:
    """Weighted fusion of original/enhanced text cosines; absent terms contribute 0."""
    w1, w2, w3 = cfg.fusion_weights
    ta, tb = store.text(a), store.text(b)
    ea, eb = store.enhanced(a), store.enhanced(b)
    score = 0.0
    if eb is not None:
        score += w1 * float(ta @ eb)
    if ea is not None:
        score += w2 * float(ea @ tb)
    if ea is not None and eb is not None:
        score += w3 * float(ea @ eb)
    return score


def build_llm_edges(store: EmbeddingStore, cfg: GraphConfig, node_ids=None) -> dict:
    """Each node's top-k partners by fused similarity, as undirected edges.

    Ties break by ascending partner id; exact-zero scores (absent enhanced
    signal) never create edges. When both endpoints select the same pair, the
    larger admitting score is kept.
    """
    ids = sorted(node_ids) if node_ids is not None else sorted(store.text_emb)
    n = len(ids)
    if n < 2:
        return {}
    ids_arr = np.array(ids)
    text = np.stack([store.text(i) for i in ids])
    enh_mask = np.array([store.enhanced(i) is not None for i in ids])
    enhanced = np.stack(
        [store.enhanced(i) if store.enhanced(i) is not None else np.zeros(store.dim) for i in ids]
    )
    w1, w2, w3 = cfg.fusion_weights
    edges: dict[tuple[str, str], float] = {}
    for idx, node_id in enumerate(ids):
        scores = np.zeros(n)
        scores += w1 * (enhanced @ text[idx]) * enh_mask  # cos(t_i, enhanced_j)
        if enh_mask[idx]:
            scores += w2 * (text @ enhanced[idx])
            scores += w3 * (enhanced @ enhanced[idx]) * enh_mask
        scores[idx] = 0.0
        nonzero = np.where(scores != 0.0)[0]
        if nonzero.size == 0:
            continue
        order = np.lexsort((ids_arr[nonzero], -scores[nonzero]))[: cfg.k_llm]
        for j in nonzero[order]:
            pair = _canonical(node_id, ids[int(j)])
            score = float(scores[int(j)])
            if pair not in edges or score > edges[pair]:
                edges[pair] = score
    return edges


def union_graph(e0: dict, e1: dict, corpus: Corpus) -> ContextGraph:
    """Combine gated and enhanced edge sets with provenance tags.

    Pairs admitted by both rules are tagged accordingly and keep the gated
    score as their metadata score.
    """
    edges: dict[tuple[str, str], tuple[str, float]] = {}
    for raw_pair, score in e0.items():
        pair = _canonical(*raw_pair)
        _check_endpoints(pair, corpus)
        edges[pair] = (GATED, score)
    for raw_pair, score in e1.items():
        pair = _canonical(*raw_pair)
        _check_endpoints(pair, corpus)
        if pair in edges:
            edges[pair] = (BOTH, edges[pair][1])
        else:
            edges[pair] = (LLM_ENHANCED, score)
    return ContextGraph(corpus.ids(), edges)


def _check_endpoints(pair: tuple[str, str], corpus: Corpus) -> None:
    for node_id in pair:
        if node_id not in corpus:
            raise GraphError(f"edge endpoint {node_id!r} is not a corpus node")
    if pair[0] == pair[1]:
        raise GraphError(f"self-loop on {pair[0]!r}")


def save_graph(graph: ContextGraph, path) -> None:
    """One edge per line: id_a id_b provenance score. Ids must be whitespace-free."""
    path = Path(path)
    with path.open("w", encoding="utf-8") as fh:
        for (a, b) in sorted(graph.edges):
            provenance, score = graph.edges[(a, b)]
            if any(ch.isspace() for ch in a + b):
                raise GraphError(f"cannot dump edge with whitespace in id: ({a!r}, {b!r})")
            fh.write(f"{a} {b} {provenance} {score!r}\n")


def load_graph(path, corpus: Corpus) -> ContextGraph:
    path = Path(path)
    edges: dict[tuple[str, str], tuple[str, float]] = {}
    with path.open("r", encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            parts = line.split()
            if len(parts) != 4:
                raise GraphError(f"{path}:{line_no}: expected 4 fields, got {len(parts)}")
            a, b, provenance, score = parts
            if provenance not in (GATED, LLM_ENHANCED, BOTH):
                raise GraphError(f"{path}:{line_no}: unknown provenance {provenance!r}")
            edges[_canonical(a, b)] = (provenance, float(score))
    return ContextGraph(corpus.ids(), edges)
