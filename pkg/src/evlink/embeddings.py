"""Embedding storage, encoder providers, and description-based text enhancement.

The store keeps unit-norm float64 vectors for three roles: base text vectors
for every node, image vectors for nodes that have one, and enhanced text
vectors produced by encoding a generated description of the node. Providers
stand in for a real multimodal encoder: a deterministic synthetic one (seeded
hash to Gaussian, normalized) and a file-backed one over precomputed vectors.
"""

from __future__ import annotations

import hashlib
import json
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .corpus import Corpus

logger = logging.getLogger(__name__)

NORM_TOL = 1e-6


class EmbeddingError(ValueError):
    """Raised for missing vectors, dimension mismatches, or bad norms."""


def normalize(vec, *, context: str = "") -> np.ndarray:
    """Return the L2-normalized copy of ``vec``; zero or non-finite norm is an error."""
    v = np.asarray(vec, dtype=np.float64)
    norm = float(np.linalg.norm(v))
    if not np.isfinite(norm) or norm == 0.0:
        where = f" ({context})" if context else ""
        raise EmbeddingError(f"cannot normalize vector with norm {norm}{where}")
    return v / norm


@dataclass(frozen=True)
class EmbeddingStore:
    """Unit-norm vectors keyed by node id. Immutable once built."""

    dim: int
    text_emb: dict[str, np.ndarray]
    image_emb: dict[str, np.ndarray]
    enhanced_emb: dict[str, np.ndarray] = field(default_factory=dict)

    def text(self, node_id: str) -> np.ndarray:
        try:
            return self.text_emb[node_id]
        except KeyError:
            raise EmbeddingError(f"no text embedding for id {node_id!r}") from None

    def image(self, node_id: str) -> np.ndarray | None:
        return self.image_emb.get(node_id)

    def enhanced(self, node_id: str) -> np.ndarray | None:
        return self.enhanced_emb.get(node_id)

    def text_matrix(self, ids) -> np.ndarray:
        return np.stack([self.text(i) for i in ids])

    def validate(self) -> None:
        for name, table in (
            ("text", self.text_emb),
            ("image", self.image_emb),
            ("enhanced", self.enhanced_emb),
        ):
            for node_id, vec in table.items():
                if vec.shape != (self.dim,):
                    raise EmbeddingError(
                        f"{name} vector for {node_id!r} has shape {vec.shape}, expected ({self.dim},)"
                    )
                if abs(float(np.linalg.norm(vec)) - 1.0) > NORM_TOL:
                    raise EmbeddingError(f"{name} vector for {node_id!r} is not unit-norm")


class SyntheticEmbeddingProvider:
    """Deterministic stand-in encoder: seeded hash of the input string to a unit Gaussian."""

    def __init__(self, dim: int, seed: int = 0):
        if dim < 1:
            raise EmbeddingError("dim must be positive")
        self.dim = dim
        self.seed = seed

    def encode_text(self, text: str) -> np.ndarray:
        digest = hashlib.sha256(f"{self.seed}\x1f{text}".encode("utf-8")).digest()
        words = np.frombuffer(digest, dtype=np.uint32).tolist()
        rng = np.random.default_rng(np.random.SeedSequence(entropy=words))
        return normalize(rng.standard_normal(self.dim))


class FileEmbeddingProvider:
    """Precomputed vectors keyed by id; lookups of unknown keys are errors."""

    def __init__(self, path, dim: int | None = None):
        self.text_table, self.image_table, self.dim = _read_embedding_file(path, dim)

    def encode_text(self, key: str) -> np.ndarray:
        try:
            return self.text_table[key]
        except KeyError:
            raise EmbeddingError(f"no precomputed vector for id {key!r}") from None


def _read_embedding_file(path, dim: int | None):
    path = Path(path)
    text_table: dict[str, np.ndarray] = {}
    image_table: dict[str, np.ndarray] = {}
    with path.open("r", encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                record = json.loads(line)
            except json.JSONDecodeError as exc:
                raise EmbeddingError(f"{path}:{line_no}: malformed record ({exc.msg})") from None
            node_id = str(record["id"])
            text = np.asarray(record["text"], dtype=np.float64)
            if dim is None:
                dim = text.shape[0]
            if text.shape != (dim,):
                raise EmbeddingError(
                    f"{path}:{line_no}: text vector for {node_id!r} has length "
                    f"{text.shape[0]}, expected {dim}"
                )
            text_table[node_id] = normalize(text, context=f"text vector for {node_id!r}")
            if record.get("image") is not None:
                image = np.asarray(record["image"], dtype=np.float64)
                if image.shape != (dim,):
                    raise EmbeddingError(
                        f"{path}:{line_no}: image vector for {node_id!r} has length "
                        f"{image.shape[0]}, expected {dim}"
                    )
                image_table[node_id] = normalize(image, context=f"image vector for {node_id!r}")
    if dim is None:
        raise EmbeddingError(f"{path}: empty embedding file")
    return text_table, image_table, dim


def save_embeddings(store: EmbeddingStore, path) -> None:
    """Write the base text/image vectors in the precomputed-embedding format."""
    path = Path(path)
    with path.open("w", encoding="utf-8") as fh:
        for node_id in sorted(store.text_emb):
            record = {"id": node_id, "text": store.text_emb[node_id].tolist()}
            if node_id in store.image_emb:
                record["image"] = store.image_emb[node_id].tolist()
            fh.write(json.dumps(record) + "\n")


def build_store(corpus: Corpus, provider, precomputed=None) -> EmbeddingStore:
    """Build the embedding store for a corpus.

    With ``precomputed`` given, vectors are read from the file and every node id
    must be covered (image vectors exactly for nodes with images). Otherwise
    the provider encodes each node's canonical text, and a namespaced form of
    the image reference for nodes that have one.
    """
    text_emb: dict[str, np.ndarray] = {}
    image_emb: dict[str, np.ndarray] = {}
    if precomputed is not None:
        text_table, image_table, dim = _read_embedding_file(precomputed, getattr(provider, "dim", None))
        for node in corpus.nodes():
            if node.id not in text_table:
                raise EmbeddingError(f"no precomputed vector for id {node.id!r}")
            text_emb[node.id] = text_table[node.id]
            if node.has_image:
                if node.id not in image_table:
                    raise EmbeddingError(f"no precomputed image vector for id {node.id!r}")
                image_emb[node.id] = image_table[node.id]
    else:
        dim = provider.dim
        for node in corpus.nodes():
            text_emb[node.id] = provider.encode_text(node.text())
            if node.has_image:
                image_emb[node.id] = provider.encode_text(f"[image] {node.image_ref}")
    store = EmbeddingStore(dim=dim, text_emb=text_emb, image_emb=image_emb)
    store.validate()
    return store


def select_enhancement_targets(
    corpus: Corpus, store: EmbeddingStore, k_llm: int, budget: int | None = None
) -> list[str]:
    """All mention ids plus entities in any mention's top-k text-cosine neighborhood.

    The entity subset is capped at ``budget`` (best similarity first, then id),
    keeping enhancement spend on entities that can actually gain edges.
    """
    mention_ids = corpus.mention_ids()
    entity_ids = corpus.entity_ids()
    selected: dict[str, float] = {}
    if entity_ids and mention_ids:
        entity_matrix = store.text_matrix(entity_ids)
        for mid in mention_ids:
            sims = entity_matrix @ store.text(mid)
            order = np.lexsort((np.array(entity_ids), -sims))[: min(k_llm, len(entity_ids))]
            for idx in order:
                eid = entity_ids[int(idx)]
                score = float(sims[int(idx)])
                if score > selected.get(eid, -np.inf):
                    selected[eid] = score
    chosen = sorted(selected, key=lambda eid: (-selected[eid], eid))
    if budget is not None:
        chosen = chosen[:budget]
    return list(mention_ids) + chosen


def enhance_nodes(
    targets,
    llm,
    provider,
    store: EmbeddingStore,
    corpus: Corpus,
    workers: int = 1,
) -> EmbeddingStore:
    """Return a new store with enhanced text vectors for every target node.

    Each target's description is generated by the LLM client and encoded by the
    provider. An empty description falls back to the node's original text
    vector (with a warning); transport failures are collected and raised as one
    error carrying the failed id list.
    """
    target_ids = sorted(set(targets))
    for node_id in target_ids:
        if node_id not in corpus:
            raise EmbeddingError(f"enhancement target {node_id!r} is not in the corpus")

    def describe(node_id: str):
        return node_id, llm.describe_node(corpus.get(node_id))

    results: dict[str, str] = {}
    failed: list[str] = []
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            for node_id, outcome in pool.map(_safe_call(describe, failed), target_ids):
                if outcome is not None:
                    results[node_id] = outcome
    else:
        for node_id in target_ids:
            try:
                results[node_id] = llm.describe_node(corpus.get(node_id))
            except Exception:
                failed.append(node_id)
    if failed:
        raise EmbeddingError(f"description generation failed for ids: {sorted(failed)}")

    enhanced = dict(store.enhanced_emb)
    empty = 0
    for node_id in target_ids:  # merge in id order for determinism
        description = results[node_id]
        if description.strip():
            enhanced[node_id] = provider.encode_text(description)
        else:
            empty += 1
            logger.debug("empty description for %s; using original text embedding", node_id)
            enhanced[node_id] = store.text(node_id)
    if empty:
        logger.warning(
            "%d of %d enhancement targets returned empty descriptions; "
            "fell back to their original text embeddings",
            empty,
            len(target_ids),
        )
    out = replace(store, enhanced_emb=enhanced)
    out.validate()
    return out


def _safe_call(fn, failed: list):
    def wrapper(node_id):
        try:
            return fn(node_id)
        except Exception:
            failed.append(node_id)
            return node_id, None

    return wrapper
