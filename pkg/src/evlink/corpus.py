"""Corpus data model: mentions and entities with optional visual modality.

A corpus is a pair of ordered node collections loaded from a line-delimited
JSON file. Each record carries ``id``, ``kind``, ``name``, ``context`` and an
optional ``image_ref``. Image bytes are never stored, only references; the
engine consumes embeddings, not pixels.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Iterator

MENTION = "mention"
ENTITY = "entity"

_KINDS = (MENTION, ENTITY)


class CorpusError(ValueError):
    """Raised when a corpus file or record violates the contract."""


@dataclass(frozen=True)
class MultimodalNode:
    """A mention or entity: name, context text, and an optional image reference."""

    id: str
    kind: str
    name: str
    context: str = ""
    image_ref: str | None = None

    def __post_init__(self) -> None:
        if self.kind not in _KINDS:
            raise CorpusError(f"node {self.id!r}: kind must be one of {_KINDS}, got {self.kind!r}")
        if not self.id:
            raise CorpusError("node id must be a non-empty string")
        if self.image_ref is not None and not self.image_ref:
            raise CorpusError(f"node {self.id!r}: image_ref present but empty")

    @property
    def has_image(self) -> bool:
        return self.image_ref is not None

    def text(self) -> str:
        """Canonical text form used for encoding (name plus context)."""
        return f"{self.name} {self.context}".strip() if self.context else self.name


def modality_indicator(node: MultimodalNode) -> int:
    """1 iff the node has visual information, else 0."""
    return 1 if node.has_image else 0


class Corpus:
    """Immutable collection of mentions and entities with unique, disjoint ids."""

    def __init__(self, mentions, entities):
        self.mentions: tuple[MultimodalNode, ...] = tuple(mentions)
        self.entities: tuple[MultimodalNode, ...] = tuple(entities)
        by_id: dict[str, MultimodalNode] = {}
        for node in self.mentions + self.entities:
            if node.id in by_id:
                raise CorpusError(f"duplicate id {node.id!r}")
            by_id[node.id] = node
        for node in self.mentions:
            if node.kind != MENTION:
                raise CorpusError(f"node {node.id!r} in mentions has kind {node.kind!r}")
        for node in self.entities:
            if node.kind != ENTITY:
                raise CorpusError(f"node {node.id!r} in entities has kind {node.kind!r}")
        self._by_id = by_id

    def __contains__(self, node_id: str) -> bool:
        return node_id in self._by_id

    def __len__(self) -> int:
        return len(self._by_id)

    def get(self, node_id: str) -> MultimodalNode:
        try:
            return self._by_id[node_id]
        except KeyError:
            raise CorpusError(f"unknown node id {node_id!r}") from None

    def nodes(self) -> Iterator[MultimodalNode]:
        yield from self.mentions
        yield from self.entities

    def ids(self) -> list[str]:
        return [n.id for n in self.nodes()]

    def mention_ids(self) -> list[str]:
        return [n.id for n in self.mentions]

    def entity_ids(self) -> list[str]:
        return [n.id for n in self.entities]

    def modality_stats(self) -> dict[str, float]:
        """Fraction of mentions / entities carrying an image reference."""

        def frac(nodes):
            return sum(modality_indicator(n) for n in nodes) / len(nodes) if nodes else 0.0

        return {
            "mention_image_rate": frac(self.mentions),
            "entity_image_rate": frac(self.entities),
        }

    def __eq__(self, other) -> bool:
        return (
            isinstance(other, Corpus)
            and self.mentions == other.mentions
            and self.entities == other.entities
        )


def _node_from_record(record: dict, line_no: int) -> MultimodalNode:
    for field in ("id", "kind", "name"):
        if field not in record:
            raise CorpusError(f"line {line_no}: missing field {field!r}")
    known = {"id", "kind", "name", "context", "image_ref"}
    unknown = set(record) - known
    if unknown:
        raise CorpusError(f"line {line_no}: unknown fields {sorted(unknown)}")
    try:
        return MultimodalNode(
            id=str(record["id"]),
            kind=str(record["kind"]),
            name=str(record["name"]),
            context=str(record.get("context", "")),
            image_ref=record["image_ref"] if record.get("image_ref") is not None else None,
        )
    except CorpusError as exc:
        raise CorpusError(f"line {line_no}: {exc}") from None


def load_corpus(path) -> Corpus:
    """Load a corpus from a line-delimited JSON file.

    Raises :class:`CorpusError` naming the offending line for malformed records
    and the offending id for duplicates.
    """
    path = Path(path)
    mentions: list[MultimodalNode] = []
    entities: list[MultimodalNode] = []
    seen: set[str] = set()
    with path.open("r", encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                record = json.loads(line)
            except json.JSONDecodeError as exc:
                raise CorpusError(f"line {line_no}: malformed record ({exc.msg})") from None
            if not isinstance(record, dict):
                raise CorpusError(f"line {line_no}: record must be an object")
            node = _node_from_record(record, line_no)
            if node.id in seen:
                raise CorpusError(f"duplicate id {node.id!r} (line {line_no})")
            seen.add(node.id)
            (mentions if node.kind == MENTION else entities).append(node)
    return Corpus(mentions, entities)


def save_corpus(corpus: Corpus, path) -> None:
    """Write a corpus in the same line-delimited format accepted by load_corpus."""
    path = Path(path)
    with path.open("w", encoding="utf-8") as fh:
        for node in corpus.nodes():
            record = {"id": node.id, "kind": node.kind, "name": node.name, "context": node.context}
            if node.image_ref is not None:
                record["image_ref"] = node.image_ref
            fh.write(json.dumps(record, ensure_ascii=False) + "\n")
