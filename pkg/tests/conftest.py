import json

import numpy as np
import pytest

from evlink.corpus import Corpus, MultimodalNode
from evlink.embeddings import EmbeddingStore, normalize


def make_node(node_id, kind, name=None, context="", image=None):
    return MultimodalNode(
        id=node_id,
        kind=kind,
        name=name if name is not None else node_id,
        context=context,
        image_ref=image,
    )


def unit(vec):
    return normalize(np.asarray(vec, dtype=np.float64))


def store_from(dim, text, image=None, enhanced=None):
    return EmbeddingStore(
        dim=dim,
        text_emb={k: unit(v) for k, v in text.items()},
        image_emb={k: unit(v) for k, v in (image or {}).items()},
        enhanced_emb={k: unit(v) for k, v in (enhanced or {}).items()},
    )


@pytest.fixture
def tiny_corpus():
    """Two mentions, three entities, mixed modality."""
    mentions = [
        make_node("m1", "mention", name="oxford", context="study on vaccines", image="img/m1"),
        make_node("m2", "mention", name="cambridge", context=""),
    ]
    entities = [
        make_node("e1", "entity", name="oxford", context="university", image="img/e1"),
        make_node("e2", "entity", name="oxford press", context="publisher"),
        make_node("e3", "entity", name="cambridge", context="university", image="img/e3"),
    ]
    return Corpus(mentions, entities)


def write_corpus_file(path, records):
    with open(path, "w", encoding="utf-8") as fh:
        for record in records:
            fh.write(json.dumps(record) + "\n")
    return path


class StubLlm:
    """Deterministic in-memory LLM double: optional per-node description map."""

    def __init__(self, describe=None, complete_response="", fail=False):
        self.describe_map = describe or {}
        self.complete_response = complete_response
        self.fail = fail
        self.calls = 0

    def describe_node(self, node):
        self.calls += 1
        if self.fail:
            raise RuntimeError("transport down")
        if node.id in self.describe_map:
            return self.describe_map[node.id]
        return f"{node.name} {node.context}".strip() if node.context else node.name

    def complete(self, messages):
        self.calls += 1
        if self.fail:
            raise RuntimeError("transport down")
        return self.complete_response
