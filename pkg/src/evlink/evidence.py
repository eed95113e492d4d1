"""Assembly of the 14-dimensional evidence vector for a mention-entity pair.

Fixed channel order: four instance cosines (text/image crossings of the raw
embeddings), four group cosines (the same crossings of graph-contextualized
representations), the lexical name overlap, three summary statistics of those
nine signals (mean, max, max minus mean), and the two modality indicators.
Components whose required image embedding is missing use a 0.0 sentinel; the
indicators carry the missingness signal so a reasoner can discount them.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, fields
from pathlib import Path

import numpy as np

from .corpus import MultimodalNode, modality_indicator
from .embeddings import EmbeddingStore
from .gnn import safe_cosine
from .lexical import lex_similarity

FEATURE_NAMES = (
    "inst_tt",
    "inst_tv",
    "inst_vt",
    "inst_vv",
    "group_tt",
    "group_tv",
    "group_vt",
    "group_vv",
    "lex",
    "stat_mu",
    "stat_max",
    "stat_gap",
    "has_img_m",
    "has_img_e",
)


class EvidenceError(ValueError):
    pass


@dataclass(frozen=True)
class EvidenceVector:
    inst_tt: float
    inst_tv: float
    inst_vt: float
    inst_vv: float
    group_tt: float
    group_tv: float
    group_vt: float
    group_vv: float
    lex: float
    stat_mu: float
    stat_max: float
    stat_gap: float
    has_img_m: float
    has_img_e: float

    def as_dict(self) -> dict[str, float]:
        return {f.name: getattr(self, f.name) for f in fields(self)}

    def as_array(self) -> np.ndarray:
        return np.array([getattr(self, name) for name in FEATURE_NAMES])

    def similarity_components(self) -> tuple[float, ...]:
        """The nine similarity signals the statistics summarize, in order."""
        return (
            self.inst_tt,
            self.inst_tv,
            self.inst_vt,
            self.inst_vv,
            self.group_tt,
            self.group_tv,
            self.group_vt,
            self.group_vv,
            self.lex,
        )


def instance_evidence(m: MultimodalNode, e: MultimodalNode, store: EmbeddingStore):
    """Raw-embedding cosines (tt, tv, vt, vv); missing-image components are 0.0."""
    tm, te = store.text(m.id), store.text(e.id)
    vm, ve = store.image(m.id), store.image(e.id)
    return (
        float(tm @ te),
        float(tm @ ve) if ve is not None else 0.0,
        float(vm @ te) if vm is not None else 0.0,
        float(vm @ ve) if vm is not None and ve is not None else 0.0,
    )


def group_evidence(m_id: str, e_id: str, teacher_reps, student_reps):
    """Contextualized-representation cosines; zero vectors follow the cosine-of-zero rule."""
    for reps, label in ((teacher_reps, "text"), (student_reps, "image")):
        for node_id in (m_id, e_id):
            if node_id not in reps:
                raise EvidenceError(
                    f"no {label} representation for {node_id!r}; encode_all must run first"
                )
    return (
        safe_cosine(teacher_reps[m_id], teacher_reps[e_id]),
        safe_cosine(teacher_reps[m_id], student_reps[e_id]),
        safe_cosine(student_reps[m_id], teacher_reps[e_id]),
        safe_cosine(student_reps[m_id], student_reps[e_id]),
    )


def statistical_evidence(nine_sims, m: MultimodalNode, e: MultimodalNode):
    """(mean, max, max - mean, image indicator of m, image indicator of e)."""
    sims = tuple(float(x) for x in nine_sims)
    if len(sims) != 9:
        raise EvidenceError(f"expected 9 similarity values, got {len(sims)}")
    mu = sum(sims) / 9.0
    s_max = max(sims)
    return (mu, s_max, s_max - mu, float(modality_indicator(m)), float(modality_indicator(e)))


def assemble(
    m: MultimodalNode,
    e: MultimodalNode,
    store: EmbeddingStore,
    teacher_reps,
    student_reps,
) -> EvidenceVector:
    """Full evidence vector in the fixed channel order."""
    inst = instance_evidence(m, e, store)
    group = group_evidence(m.id, e.id, teacher_reps, student_reps)
    lex = lex_similarity(m.name, e.name)
    nine = inst + group + (lex,)
    mu, s_max, gap, img_m, img_e = statistical_evidence(nine, m, e)
    return EvidenceVector(
        inst_tt=inst[0],
        inst_tv=inst[1],
        inst_vt=inst[2],
        inst_vv=inst[3],
        group_tt=group[0],
        group_tv=group[1],
        group_vt=group[2],
        group_vv=group[3],
        lex=lex,
        stat_mu=mu,
        stat_max=s_max,
        stat_gap=gap,
        has_img_m=img_m,
        has_img_e=img_e,
    )


def save_evidence(records, path) -> None:
    """One line per (mention, entity) with the 14 named fields plus ids and prior."""
    path = Path(path)
    with path.open("w", encoding="utf-8") as fh:
        for mention_id, entity_id, prior, vector in records:
            record = {"mention": mention_id, "entity": entity_id, "prior": prior}
            record.update(vector.as_dict())
            fh.write(json.dumps(record) + "\n")


def load_evidence(path):
    path = Path(path)
    out = []
    with path.open("r", encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            record = json.loads(line)
            vector = EvidenceVector(**{name: float(record[name]) for name in FEATURE_NAMES})
            out.append((record["mention"], record["entity"], float(record["prior"]), vector))
    return out
