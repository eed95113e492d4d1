"""Hit@k metrics, a planted synthetic benchmark, and numerical theorem checks.

The planted generator builds a corpus whose ground truth is recoverable by
construction: each mention's embeddings are small perturbations of its true
entity's, every other entity sits at least a configured margin further away in
cosine distance on every available channel, and the mention reuses the true
entity's name so the lexical channel agrees. A configurable fraction of image
embeddings is dropped to exercise incomplete modalities.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .corpus import Corpus, MultimodalNode
from .embeddings import EmbeddingStore, normalize


class EvaluationError(ValueError):
    pass


@dataclass(frozen=True)
class LinkResult:
    mention: str
    ranked: tuple[str, ...]
    truth: str | None = None

    def __post_init__(self) -> None:
        if len(set(self.ranked)) != len(self.ranked):
            raise EvaluationError(f"ranked list for {self.mention!r} contains duplicates")


def hit_at_k(results, k: int) -> float:
    """Fraction of results whose ground truth appears in the top k."""
    if k < 1:
        raise EvaluationError("k must be >= 1")
    results = list(results)
    if not results:
        raise EvaluationError("empty result list")
    hits = 0
    for result in results:
        if result.truth is None:
            raise EvaluationError(f"result for {result.mention!r} has no ground truth")
        if result.truth in result.ranked[:k]:
            hits += 1
    return hits / len(results)


def save_results(results, path) -> None:
    path = Path(path)
    with path.open("w", encoding="utf-8") as fh:
        for result in results:
            record = {"mention": result.mention, "ranked": list(result.ranked)}
            if result.truth is not None:
                record["truth"] = result.truth
            fh.write(json.dumps(record) + "\n")


def load_results(path):
    path = Path(path)
    out = []
    with path.open("r", encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            record = json.loads(line)
            out.append(
                LinkResult(
                    mention=record["mention"],
                    ranked=tuple(record["ranked"]),
                    truth=record.get("truth"),
                )
            )
    return out


def save_truth(truth: dict[str, str], path) -> None:
    path = Path(path)
    with path.open("w", encoding="utf-8") as fh:
        for mention_id in sorted(truth):
            fh.write(json.dumps({"mention": mention_id, "entity": truth[mention_id]}) + "\n")


def load_truth(path) -> dict[str, str]:
    truth = {}
    with Path(path).open("r", encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if line:
                record = json.loads(line)
                truth[record["mention"]] = record["entity"]
    return truth


# ---------------------------------------------------------------------------
# planted corpus
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class PlantedCorpus:
    corpus: Corpus
    truth: dict[str, str]


_NAME_ALPHABET = "abcdefghijklmnopqrstuvwxyz"


def _random_name(rng) -> str:
    return "".join(_NAME_ALPHABET[int(i)] for i in rng.integers(0, len(_NAME_ALPHABET), 8))


def generate_planted(
    n_mentions: int,
    n_entities: int,
    dim: int,
    seed: int,
    margin: float,
    image_dropout: float = 0.0,
    noise: float = 0.01,
    max_attempts: int = 200,
):
    """Build (PlantedCorpus, EmbeddingStore) with strictly dominant true entities.

    Entity text vectors are rejection-sampled until all pairwise cosines stay
    below ``1 - margin - slack``; image vectors are small correlated
    perturbations of the text vectors (a shared embedding space), with the same
    separation enforced across and between the two roles. Each mention then
    perturbs its true entity's vectors and is resampled until the dominance
    margin holds on every channel it can query. An infeasible margin for the
    dimension raises after bounded attempts.
    """
    if not (1 <= n_mentions <= n_entities):
        raise EvaluationError("need n_entities >= n_mentions >= 1")
    if margin <= 0:
        raise EvaluationError("margin must be positive")
    if not (0.0 <= image_dropout <= 1.0):
        raise EvaluationError("image_dropout must be in [0, 1]")
    rng = np.random.default_rng(np.random.SeedSequence(entropy=[seed, 9021]))
    slack = max(0.15, 6.0 * noise)
    ceiling = 1.0 - margin - slack
    if ceiling <= 0:
        raise EvaluationError(f"margin {margin} plus slack {slack} is infeasible")

    def resample_until_separated(vectors: np.ndarray, label: str) -> np.ndarray:
        for _ in range(max_attempts):
            sims = vectors @ vectors.T
            np.fill_diagonal(sims, -1.0)
            bad = np.where(sims.max(axis=1) > ceiling)[0]
            if bad.size == 0:
                return vectors
            for idx in bad:
                vectors[idx] = normalize(rng.standard_normal(dim))
        raise EvaluationError(
            f"could not separate {label} with margin {margin} in dimension {dim}"
        )

    text = np.stack([normalize(rng.standard_normal(dim)) for _ in range(n_entities)])
    text = resample_until_separated(text, f"{n_entities} entity text vectors")

    # images track the text vectors closely so cross-view channels also point
    # at the true entity; off-diagonal similarities are re-checked and the
    # offending image resampled
    gamma = 0.05
    image = np.stack([normalize(t + gamma * rng.standard_normal(dim)) for t in text])
    for _ in range(max_attempts):
        vv = image @ image.T
        tv = text @ image.T
        np.fill_diagonal(vv, -1.0)
        diag_tv = np.diag(tv).copy()
        np.fill_diagonal(tv, -1.0)
        bad = set(np.where(vv.max(axis=0) > ceiling)[0].tolist())
        bad |= set(np.where(tv.max(axis=0) > diag_tv.min() - margin / 2)[0].tolist())
        if not bad:
            break
        for idx in sorted(bad):
            image[idx] = normalize(text[idx] + gamma * rng.standard_normal(dim))
    else:
        raise EvaluationError(
            f"could not separate entity image vectors with margin {margin} in dimension {dim}"
        )

    entity_names = []
    seen_names: set[str] = set()
    while len(entity_names) < n_entities:
        name = _random_name(rng)
        if name not in seen_names:
            seen_names.add(name)
            entity_names.append(name)

    width = len(str(n_entities))
    entities = []
    text_emb: dict[str, np.ndarray] = {}
    image_emb: dict[str, np.ndarray] = {}
    for j in range(n_entities):
        eid = f"e{j:0{width}d}"
        has_image = bool(rng.random() >= image_dropout)
        entities.append(
            MultimodalNode(
                id=eid,
                kind="entity",
                name=entity_names[j],
                context=f"knowledge base entry {entity_names[j]}",
                image_ref=f"img/{eid}" if has_image else None,
            )
        )
        text_emb[eid] = text[j]
        if has_image:
            image_emb[eid] = image[j]

    entity_has_image = np.array([e.has_image for e in entities])
    mentions = []
    truth: dict[str, str] = {}
    for i in range(n_mentions):
        mid = f"m{i:0{width}d}"
        eid = entities[i].id
        truth[mid] = eid
        has_image = bool(rng.random() >= image_dropout) and entities[i].has_image
        for _ in range(max_attempts):
            tm = normalize(text[i] + noise * rng.standard_normal(dim))
            sims = text @ tm
            true_sim = float(sims[i])
            sims[i] = -1.0
            if true_sim - float(sims.max()) < margin:
                continue
            if has_image:
                vm = normalize(image[i] + noise * rng.standard_normal(dim))
                img_sims = image @ vm
                true_img = float(img_sims[i])
                img_sims[i] = -1.0
                img_sims[~entity_has_image] = -1.0
                if entity_has_image.sum() > 1 and true_img - float(img_sims.max()) < margin:
                    continue
            else:
                vm = None
            break
        else:
            raise EvaluationError(
                f"could not place mention {mid!r} with margin {margin} in dimension {dim}"
            )
        mentions.append(
            MultimodalNode(
                id=mid,
                kind="mention",
                name=entity_names[i],
                context=f"a report about {entity_names[i]}",
                image_ref=f"img/{mid}" if has_image else None,
            )
        )
        text_emb[mid] = tm
        if vm is not None:
            image_emb[mid] = vm

    corpus = Corpus(mentions, entities)
    store = EmbeddingStore(dim=dim, text_emb=text_emb, image_emb=image_emb)
    store.validate()
    _check_dominance(corpus, store, truth, margin)
    return PlantedCorpus(corpus=corpus, truth=truth), store


def _check_dominance(corpus: Corpus, store: EmbeddingStore, truth: dict[str, str], margin: float):
    """Verify the construction: the true entity dominates on every available channel."""
    entity_ids = corpus.entity_ids()
    text_matrix = store.text_matrix(entity_ids)
    for mention in corpus.mentions:
        true_id = truth[mention.id]
        tm = store.text(mention.id)
        sims = text_matrix @ tm
        true_idx = entity_ids.index(true_id)
        others = np.delete(sims, true_idx)
        if others.size and float(sims[true_idx]) - float(others.max()) < margin:
            raise EvaluationError(
                f"dominance margin violated on text channel for mention {mention.id!r}"
            )
        vm = store.image(mention.id)
        ve = store.image(true_id)
        if vm is not None and ve is not None:
            best_other = -1.0
            for eid in entity_ids:
                if eid == true_id:
                    continue
                vo = store.image(eid)
                if vo is not None:
                    best_other = max(best_other, float(vm @ vo))
            if best_other > -1.0 and float(vm @ ve) - best_other < margin:
                raise EvaluationError(
                    f"dominance margin violated on image channel for mention {mention.id!r}"
                )


# ---------------------------------------------------------------------------
# theorem checks
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class FusionRiskReport:
    weights: np.ndarray
    analytic_risk: float
    min_single_risk: float
    mc_risk: float
    mc_stderr: float
    fused_not_worse: bool
    mc_consistent: bool


def check_theorem1(sigma, trials: int = 100_000, seed: int = 0) -> FusionRiskReport:
    """Minimum-risk fusion of unbiased noisy channels never loses to a single channel.

    Computes the optimal weights and analytic risk from the noise covariance,
    then Monte-Carlo estimates the fused risk and checks agreement within
    three standard errors.
    """
    sigma = np.asarray(sigma, dtype=np.float64)
    if sigma.ndim != 2 or sigma.shape[0] != sigma.shape[1]:
        raise EvaluationError("sigma must be square")
    k = sigma.shape[0]
    try:
        chol = np.linalg.cholesky(sigma)
    except np.linalg.LinAlgError:
        raise EvaluationError("sigma must be positive definite") from None
    ones = np.ones(k)
    solved = np.linalg.solve(sigma, ones)
    denom = float(ones @ solved)
    weights = solved / denom
    analytic = 1.0 / denom
    min_single = float(np.diag(sigma).min())
    rng = np.random.default_rng(np.random.SeedSequence(entropy=[seed, 771]))
    draws = rng.standard_normal((trials, k)) @ chol.T
    fused_errors = draws @ weights
    sq = fused_errors**2
    mc_risk = float(sq.mean())
    mc_stderr = float(sq.std(ddof=1) / np.sqrt(trials))
    return FusionRiskReport(
        weights=weights,
        analytic_risk=analytic,
        min_single_risk=min_single,
        mc_risk=mc_risk,
        mc_stderr=mc_stderr,
        fused_not_worse=analytic <= min_single + 1e-12,
        mc_consistent=abs(mc_risk - analytic) <= 3.0 * mc_stderr,
    )


@dataclass(frozen=True)
class StudentBoundReport:
    samples: int
    violations: int
    max_ratio: float


def check_theorem2(samples: int, dim: int, seed: int = 0) -> StudentBoundReport:
    """Student error is bounded by twice the teacher gap plus twice the teacher error.

    For random triples (student, teacher, ideal) with teacher error delta, the
    inequality ||student - ideal||^2 <= 2 ||student - teacher||^2 + 2 delta^2
    must hold for every sample.
    """
    if samples < 1:
        raise EvaluationError("samples must be >= 1")
    rng = np.random.default_rng(np.random.SeedSequence(entropy=[seed, 772]))
    violations = 0
    max_ratio = 0.0
    for _ in range(samples):
        h_img = rng.standard_normal(dim) * rng.uniform(0.1, 3.0)
        h_txt = rng.standard_normal(dim) * rng.uniform(0.1, 3.0)
        h_star = rng.standard_normal(dim) * rng.uniform(0.1, 3.0)
        delta_t = float(np.linalg.norm(h_txt - h_star))
        lhs = float(np.linalg.norm(h_img - h_star) ** 2)
        rhs = 2.0 * float(np.linalg.norm(h_img - h_txt) ** 2) + 2.0 * delta_t**2
        if lhs > rhs + 1e-12:
            violations += 1
        if rhs > 0:
            max_ratio = max(max_ratio, lhs / rhs)
    return StudentBoundReport(samples=samples, violations=violations, max_ratio=max_ratio)
