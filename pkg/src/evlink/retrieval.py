"""Nine-way candidate retrieval and prior scoring.

Eight neural channels pair the two embedding types (raw instance vectors and
graph-contextualized representations) with the four text/image view crossings;
the ninth channel ranks by lexical name overlap. Channel results merge by
union. Statistical evidence is never used here: it describes reliability, not
rankable relevance, and belongs to the reasoning stage.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .corpus import Corpus, MultimodalNode
from .embeddings import EmbeddingStore
from .gnn import safe_cosine
from .lexical import lex_similarity

CHANNELS = (
    "inst_tt",
    "inst_tv",
    "inst_vt",
    "inst_vv",
    "group_tt",
    "group_tv",
    "group_vt",
    "group_vv",
    "lex",
)

# channels that query with the mention's image side; skipped when it has none
_MENTION_IMAGE_CHANNELS = frozenset({"inst_vt", "inst_vv", "group_vt", "group_vv"})


class RetrievalError(ValueError):
    pass


@dataclass(frozen=True)
class CandidateSet:
    mention: str
    candidates: tuple[str, ...]
    per_channel_scores: dict[tuple[str, str], float]
    prior: dict[str, float]

    def active_channels(self) -> tuple[str, ...]:
        seen = {channel for (channel, _entity) in self.per_channel_scores}
        return tuple(c for c in CHANNELS if c in seen)


def _channel_scores(
    mention: MultimodalNode,
    channel: str,
    store: EmbeddingStore,
    teacher_reps,
    student_reps,
    entities: list[MultimodalNode],
):
    """(scores, mask) over entities for one channel, or None when inactive.

    The mask marks entities the channel can actually score: instance channels
    needing an entity image exclude entities without one, so sentinel ties do
    not flood the pool. Group channels always score (masked representations
    exist for every node).
    """
    if channel in _MENTION_IMAGE_CHANNELS and not mention.has_image:
        return None
    n = len(entities)
    scores = np.zeros(n)
    mask = np.ones(n, dtype=bool)
    if channel == "lex":
        for k, entity in enumerate(entities):
            scores[k] = lex_similarity(mention.name, entity.name)
        return scores, mask
    kind, view = channel.split("_")
    if kind == "inst":
        query = store.text(mention.id) if view[0] == "t" else store.image(mention.id)
        for k, entity in enumerate(entities):
            target = store.text(entity.id) if view[1] == "t" else store.image(entity.id)
            if target is None:
                mask[k] = False
            else:
                scores[k] = float(query @ target)
        return scores, mask
    m_reps = teacher_reps if view[0] == "t" else student_reps
    e_reps = teacher_reps if view[1] == "t" else student_reps
    query = m_reps[mention.id]
    for k, entity in enumerate(entities):
        scores[k] = safe_cosine(query, e_reps[entity.id])
    return scores, mask


def channel_topk(
    mention: MultimodalNode,
    channel: str,
    k_ch: int,
    store: EmbeddingStore,
    teacher_reps,
    student_reps,
    entities: list[MultimodalNode],
) -> list[tuple[str, float]]:
    """Exact top-k entities for one channel; ties break by ascending entity id.

    Channels that need the mention's missing image return an empty list.
    """
    if k_ch < 1:
        raise RetrievalError("k_ch must be >= 1")
    if channel not in CHANNELS:
        raise RetrievalError(f"unknown channel {channel!r}")
    scored = _channel_scores(mention, channel, store, teacher_reps, student_reps, entities)
    if scored is None:
        return []
    scores, mask = scored
    ids = np.array([e.id for e in entities])
    ids, scores = ids[mask], scores[mask]
    order = np.lexsort((ids, -scores))[: min(k_ch, len(ids))]
    return [(str(ids[int(i)]), float(scores[int(i)])) for i in order]


def select_candidates(
    mention: MultimodalNode,
    corpus: Corpus,
    k_ch: int,
    store: EmbeddingStore,
    teacher_reps,
    student_reps,
) -> CandidateSet:
    """Union of the nine channels' top-k lists, with per-channel raw scores retained."""
    entities = list(corpus.entities)
    per_channel: dict[tuple[str, str], float] = {}
    candidates: set[str] = set()
    for channel in CHANNELS:
        for entity_id, score in channel_topk(
            mention, channel, k_ch, store, teacher_reps, student_reps, entities
        ):
            per_channel[(channel, entity_id)] = score
            candidates.add(entity_id)
    return CandidateSet(
        mention=mention.id,
        candidates=tuple(sorted(candidates)),
        per_channel_scores=per_channel,
        prior={},
    )


def prior_score(cands: CandidateSet) -> CandidateSet:
    """Min-max normalize each channel over its retrieved pool, then average.

    A constant channel maps to 0.5 for all its entries. An entity's prior is
    the mean over the channels in which it was actually retrieved.
    """
    by_channel: dict[str, list[tuple[str, float]]] = {}
    for (channel, entity_id), score in cands.per_channel_scores.items():
        by_channel.setdefault(channel, []).append((entity_id, score))
    sums: dict[str, float] = {}
    counts: dict[str, int] = {}
    for channel, items in by_channel.items():
        values = [s for _, s in items]
        lo, hi = min(values), max(values)
        for entity_id, score in items:
            norm = 0.5 if hi == lo else (score - lo) / (hi - lo)
            sums[entity_id] = sums.get(entity_id, 0.0) + norm
            counts[entity_id] = counts.get(entity_id, 0) + 1
    prior = {entity_id: sums[entity_id] / counts[entity_id] for entity_id in sums}
    return replace(cands, prior=prior)


def save_candidates(cand_sets, path) -> None:
    """Audit dump: one line per (mention, entity, channel) with raw score and prior."""
    path = Path(path)
    with path.open("w", encoding="utf-8") as fh:
        for cands in cand_sets:
            for (channel, entity_id) in sorted(cands.per_channel_scores):
                fh.write(
                    json.dumps(
                        {
                            "mention": cands.mention,
                            "entity": entity_id,
                            "channel": channel,
                            "score": cands.per_channel_scores[(channel, entity_id)],
                            "prior": cands.prior.get(entity_id),
                        }
                    )
                    + "\n"
                )
