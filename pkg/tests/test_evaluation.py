import numpy as np
import pytest

from evlink.evaluation import (
    EvaluationError,
    LinkResult,
    check_theorem1,
    check_theorem2,
    generate_planted,
    hit_at_k,
    load_results,
    load_truth,
    save_results,
    save_truth,
)
from evlink.retrieval import channel_topk


def test_hit_at_k_rank_positions():
    result = LinkResult(mention="m", ranked=("a", "b", "t", "c"), truth="t")
    assert hit_at_k([result], 1) == 0.0
    assert hit_at_k([result], 5) == 1.0


def test_truth_absent_contributes_zero():
    result = LinkResult(mention="m", ranked=("a", "b"), truth="zzz")
    for k in (1, 2, 10):
        assert hit_at_k([result], k) == 0.0


def test_hit_at_k_monotone():
    results = [
        LinkResult(mention=f"m{i}", ranked=tuple(f"e{j}" for j in range(10)), truth=f"e{i}")
        for i in range(8)
    ]
    values = [hit_at_k(results, k) for k in range(1, 11)]
    assert values == sorted(values)


def test_hit_requires_truth():
    with pytest.raises(EvaluationError):
        hit_at_k([LinkResult(mention="m", ranked=("a",), truth=None)], 1)


def test_duplicate_ranked_entries_rejected():
    with pytest.raises(EvaluationError):
        LinkResult(mention="m", ranked=("a", "a"), truth="a")


def test_results_round_trip(tmp_path):
    results = [
        LinkResult(mention="m1", ranked=("a", "b"), truth="a"),
        LinkResult(mention="m2", ranked=("c",), truth=None),
    ]
    path = tmp_path / "results.jsonl"
    save_results(results, path)
    assert load_results(path) == results


def test_truth_round_trip(tmp_path):
    truth = {"m1": "e1", "m2": "e9"}
    path = tmp_path / "truth.jsonl"
    save_truth(truth, path)
    assert load_truth(path) == truth


# -- planted corpus ----------------------------------------------------------------


def test_planted_inst_tt_alone_recovers_truth():
    planted, store = generate_planted(
        n_mentions=6, n_entities=30, dim=16, seed=3, margin=0.3, image_dropout=0.0
    )
    reps = {n.id: np.ones(2) for n in planted.corpus.nodes()}  # unused by inst_tt
    for mention in planted.corpus.mentions:
        ranked = channel_topk(
            mention, "inst_tt", 1, store, reps, reps, list(planted.corpus.entities)
        )
        assert ranked[0][0] == planted.truth[mention.id]


def test_planted_seed_determinism():
    p1, s1 = generate_planted(5, 20, 8, seed=11, margin=0.25, image_dropout=0.4)
    p2, s2 = generate_planted(5, 20, 8, seed=11, margin=0.25, image_dropout=0.4)
    assert p1.corpus == p2.corpus
    assert p1.truth == p2.truth
    for node_id in s1.text_emb:
        assert np.array_equal(s1.text_emb[node_id], s2.text_emb[node_id])
    for node_id in s1.image_emb:
        assert np.array_equal(s1.image_emb[node_id], s2.image_emb[node_id])


def test_planted_full_dropout_has_no_images():
    planted, store = generate_planted(4, 10, 8, seed=2, margin=0.3, image_dropout=1.0)
    assert store.image_emb == {}
    assert all(not n.has_image for n in planted.corpus.nodes())


def test_planted_dominance_margin_holds():
    margin = 0.3
    planted, store = generate_planted(8, 40, 16, seed=9, margin=margin, image_dropout=0.5)
    entity_ids = planted.corpus.entity_ids()
    text = np.stack([store.text(i) for i in entity_ids])
    for mention in planted.corpus.mentions:
        sims = text @ store.text(mention.id)
        idx = entity_ids.index(planted.truth[mention.id])
        others = np.delete(sims, idx)
        assert sims[idx] - others.max() >= margin - 1e-12


def test_planted_infeasible_margin_errors():
    with pytest.raises(EvaluationError):
        generate_planted(3, 40, 2, seed=0, margin=0.8)


def test_planted_mention_names_match_truth():
    planted, _ = generate_planted(5, 12, 8, seed=4, margin=0.3)
    for mention in planted.corpus.mentions:
        truth_entity = planted.corpus.get(planted.truth[mention.id])
        assert mention.name == truth_entity.name


def test_planted_argument_validation():
    with pytest.raises(EvaluationError):
        generate_planted(5, 4, 8, seed=0, margin=0.2)  # mentions > entities
    with pytest.raises(EvaluationError):
        generate_planted(1, 2, 8, seed=0, margin=-0.1)
    with pytest.raises(EvaluationError):
        generate_planted(1, 2, 8, seed=0, margin=0.2, image_dropout=1.5)


# -- theorem checks ------------------------------------------------------------------


def test_fusion_risk_identity_covariance():
    report = check_theorem1(np.eye(2), trials=20_000, seed=1)
    assert report.analytic_risk == pytest.approx(0.5, abs=1e-12)
    assert report.weights == pytest.approx([0.5, 0.5], abs=1e-12)
    assert report.fused_not_worse
    assert report.mc_consistent


def test_fusion_risk_diagonal_covariance():
    report = check_theorem1(np.diag([1.0, 4.0]), trials=20_000, seed=2)
    assert report.weights == pytest.approx([0.8, 0.2], abs=1e-12)
    assert report.analytic_risk == pytest.approx(0.8, abs=1e-12)
    assert report.min_single_risk == 1.0
    assert report.fused_not_worse


def test_fusion_risk_single_channel_equality():
    report = check_theorem1(np.array([[1.7]]), trials=10_000, seed=3)
    assert report.analytic_risk == pytest.approx(1.7, abs=1e-12)
    assert report.min_single_risk == pytest.approx(1.7)
    assert report.fused_not_worse  # equality case


def test_fusion_risk_rejects_singular():
    singular = np.array([[1.0, 1.0], [1.0, 1.0]])
    with pytest.raises(EvaluationError):
        check_theorem1(singular, trials=100)


def test_fusion_risk_random_covariances():
    rng = np.random.default_rng(5)
    for trial in range(20):
        k = int(rng.integers(1, 6))
        a = rng.standard_normal((k, k))
        sigma = a @ a.T + 0.05 * np.eye(k)
        report = check_theorem1(sigma, trials=50_000, seed=trial)
        assert report.fused_not_worse
        assert report.mc_consistent


def test_student_bound_coincident_vectors():
    # h_img == h_txt == h_star gives 0 <= 0
    report = check_theorem2(samples=1, dim=4, seed=0)
    assert report.violations == 0


def test_student_bound_random_triples():
    report = check_theorem2(samples=2_000, dim=8, seed=7)
    assert report.violations == 0
    assert report.max_ratio <= 1.0 + 1e-9


def test_student_bound_equal_img_txt():
    # when student equals teacher the bound reduces to ||t - star||^2 <= 2 delta^2
    rng = np.random.default_rng(3)
    for _ in range(100):
        h = rng.standard_normal(6)
        star = rng.standard_normal(6)
        delta = np.linalg.norm(h - star)
        assert np.linalg.norm(h - star) ** 2 <= 2 * delta**2 + 1e-12


def test_student_bound_validation():
    with pytest.raises(EvaluationError):
        check_theorem2(samples=0, dim=4)
