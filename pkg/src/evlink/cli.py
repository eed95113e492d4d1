"""Command-line pipeline: offline synthesis stages and online linking.

Each subcommand reads and writes file artifacts so stages can be rerun or
audited independently. Flags override keys from an optional flat key = value
config file; the fully resolved configuration is logged for every run. The
seed is mandatory for training and linking so those runs are reproducible.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import dataclass, fields
from pathlib import Path

import numpy as np

from . import evaluation
from .corpus import load_corpus, save_corpus
from .embeddings import (
    SyntheticEmbeddingProvider,
    build_store,
    save_embeddings,
)
from .evidence import save_evidence
from .gnn import TrainConfig, encode_all, load_model, save_model, train_student, train_teacher
from .graph import GraphConfig, load_graph, save_graph
from .linker import link_mention, synthesize_graph
from .llm import LlmClient, LlmConfig, prompt_hash, save_fixture
from .ppr import extract_all_subgraphs
from .reasoning import build_induce_messages, identity_tree, induce_tree, load_tree, save_tree
from .retrieval import prior_score, save_candidates, select_candidates

logger = logging.getLogger("evlink")

_PLANTED_TREE = {
    "feature": "lex",
    "op": ">=",
    "threshold": 0.8,
    "delta_true": 0.05,
    "delta_false": 0.0,
    "true": {
        "feature": "group_tt",
        "op": ">=",
        "threshold": 0.6,
        "delta_true": 0.05,
        "delta_false": -0.02,
        "true": None,
        "false": None,
    },
    "false": {
        "feature": "inst_vv",
        "op": ">",
        "threshold": 0.45,
        "delta_true": 0.0,
        "delta_false": 0.0,
        "true": {
            "feature": "group_tt",
            "op": "<",
            "threshold": 0.6,
            "delta_true": -0.1,
            "delta_false": 0.02,
            "true": None,
            "false": None,
        },
        "false": {
            "feature": "group_tt",
            "op": ">=",
            "threshold": 0.6,
            "delta_true": 0.05,
            "delta_false": 0.0,
            "true": None,
            "false": None,
        },
    },
}


@dataclass
class PipelineConfig:
    seed: int | None = None
    dim: int = 32
    delta_gate: float = 0.9
    k_llm: int = 30
    k_ppr: int = 20
    k_ch: int = 250
    lambda_distill: float = 0.75
    eta: float = 0.5
    tau: float = 0.1
    lr: float = 0.01
    epochs: int = 30
    batch_size: int = 32
    alpha: float = 0.15
    ppr_tol: float = 1e-10
    max_tree_depth: int = 5
    enhance_budget: int | None = None
    jobs: int = 1
    llm_mode: str = "mock"
    llm_endpoint: str = ""
    llm_model: str = ""
    llm_fixture: str | None = None
    llm_default_response: str = ""

    def log_resolved(self, command: str) -> None:
        resolved = {f.name: getattr(self, f.name) for f in fields(self)}
        logger.info("%s config: %s", command, json.dumps(resolved, sort_keys=True, default=str))

    def graph_config(self) -> GraphConfig:
        return GraphConfig(delta_gate=self.delta_gate, k_llm=self.k_llm)

    def train_config(self) -> TrainConfig:
        self.require_seed()
        return TrainConfig(
            eta=self.eta,
            tau=self.tau,
            lambda_distill=self.lambda_distill,
            lr=self.lr,
            epochs=self.epochs,
            batch_size=self.batch_size,
            seed=self.seed,
        )

    def llm_client(self) -> LlmClient:
        return LlmClient(
            LlmConfig(
                mode=self.llm_mode,
                endpoint=self.llm_endpoint,
                model=self.llm_model,
                mock_fixture_path=self.llm_fixture,
                mock_default_response=self.llm_default_response,
            )
        )

    def provider(self) -> SyntheticEmbeddingProvider:
        return SyntheticEmbeddingProvider(self.dim, self.seed if self.seed is not None else 0)

    def require_seed(self) -> None:
        if self.seed is None:
            raise SystemExit("--seed is required for this command (reproducibility contract)")


_INT_KEYS = {"seed", "dim", "k_llm", "k_ppr", "k_ch", "epochs", "batch_size", "max_tree_depth", "enhance_budget", "jobs"}
_FLOAT_KEYS = {"delta_gate", "lambda_distill", "eta", "tau", "lr", "alpha", "ppr_tol"}


def load_config_file(path) -> dict:
    """Flat ``key = value`` lines; blank lines and # comments are ignored."""
    values: dict[str, object] = {}
    for line_no, raw in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise SystemExit(f"{path}:{line_no}: expected 'key = value'")
        key, _, value = line.partition("=")
        key, value = key.strip(), value.strip()
        if key in _INT_KEYS:
            values[key] = int(value)
        elif key in _FLOAT_KEYS:
            values[key] = float(value)
        else:
            values[key] = value
    return values


def resolve_config(args: argparse.Namespace) -> PipelineConfig:
    cfg = PipelineConfig()
    if getattr(args, "config", None):
        for key, value in load_config_file(args.config).items():
            if not hasattr(cfg, key):
                raise SystemExit(f"unknown config key {key!r}")
            setattr(cfg, key, value)
    for f in fields(PipelineConfig):
        value = getattr(args, f.name, None)
        if value is not None:
            setattr(cfg, f.name, value)
    return cfg


def _add_common(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", help="flat key = value config file")
    parser.add_argument("--seed", type=int, help="global random seed")
    parser.add_argument("--dim", type=int, help="embedding dimension")
    parser.add_argument("--delta-gate", dest="delta_gate", type=float)
    parser.add_argument("--k-llm", dest="k_llm", type=int)
    parser.add_argument("--k-ppr", dest="k_ppr", type=int)
    parser.add_argument("--k-ch", dest="k_ch", type=int)
    parser.add_argument("--lambda-distill", dest="lambda_distill", type=float)
    parser.add_argument("--eta", type=float)
    parser.add_argument("--tau", type=float)
    parser.add_argument("--lr", type=float)
    parser.add_argument("--epochs", type=int)
    parser.add_argument("--batch-size", dest="batch_size", type=int)
    parser.add_argument("--alpha", type=float)
    parser.add_argument("--ppr-tol", dest="ppr_tol", type=float)
    parser.add_argument("--max-tree-depth", dest="max_tree_depth", type=int)
    parser.add_argument("--enhance-budget", dest="enhance_budget", type=int)
    parser.add_argument("--jobs", type=int, help="global worker bound")
    parser.add_argument("--llm-mode", dest="llm_mode", choices=["mock", "live"])
    parser.add_argument("--llm-endpoint", dest="llm_endpoint")
    parser.add_argument("--llm-model", dest="llm_model")
    parser.add_argument("--llm-fixture", dest="llm_fixture")
    parser.add_argument("--llm-default-response", dest="llm_default_response")
    parser.add_argument("-v", "--verbose", action="store_true")


def _load_store(cfg: PipelineConfig, corpus, embeddings_path):
    return build_store(corpus, cfg.provider(), precomputed=embeddings_path)


def _load_subgraphs(cfg: PipelineConfig, graph, cache_path):
    return extract_all_subgraphs(
        graph, cfg.k_ppr, alpha=cfg.alpha, tol=cfg.ppr_tol, cache_path=cache_path
    )


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------


def cmd_ingest(args) -> int:
    cfg = resolve_config(args)
    cfg.log_resolved("ingest")
    corpus = load_corpus(args.corpus)
    stats = corpus.modality_stats()
    print(f"mentions: {len(corpus.mentions)}")
    print(f"entities: {len(corpus.entities)}")
    print(f"mention image rate: {stats['mention_image_rate']:.4f}")
    print(f"entity image rate: {stats['entity_image_rate']:.4f}")
    if args.out:
        save_corpus(corpus, args.out)
        print(f"wrote normalized corpus to {args.out}")
    return 0


def cmd_gen_planted(args) -> int:
    cfg = resolve_config(args)
    cfg.log_resolved("gen-planted")
    seed = cfg.seed if cfg.seed is not None else 0
    planted, store = evaluation.generate_planted(
        n_mentions=args.mentions,
        n_entities=args.entities,
        dim=cfg.dim,
        seed=seed,
        margin=args.margin,
        image_dropout=args.image_dropout,
    )
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    save_corpus(planted.corpus, out_dir / "corpus.jsonl")
    save_embeddings(store, out_dir / "embeddings.jsonl")
    evaluation.save_truth(planted.truth, out_dir / "truth.jsonl")
    # fixture maps this corpus's tree-induction prompt to a canned sane tree,
    # so a mock-mode run exercises the full reasoning path
    stats = planted.corpus.modality_stats()
    stats.update(n_mentions=len(planted.corpus.mentions), n_entities=len(planted.corpus.entities))
    messages = build_induce_messages(stats, max_depth=cfg.max_tree_depth)
    tree_reply = "```json\n" + json.dumps(_PLANTED_TREE, indent=2) + "\n```"
    save_fixture({prompt_hash(messages): tree_reply}, out_dir / "llm_fixture.jsonl")
    print(f"wrote corpus, embeddings, truth, llm_fixture to {out_dir}")
    return 0


def cmd_build_graph(args) -> int:
    cfg = resolve_config(args)
    cfg.log_resolved("build-graph")
    corpus = load_corpus(args.corpus)
    store = _load_store(cfg, corpus, args.embeddings)
    graph, _enhanced = synthesize_graph(
        corpus,
        store,
        cfg.graph_config(),
        cfg.llm_client(),
        cfg.provider(),
        cfg.enhance_budget,
        workers=cfg.jobs,
    )
    save_graph(graph, args.out)
    print(f"wrote graph ({len(graph.node_ids)} nodes, {graph.num_edges()} edges) to {args.out}")
    return 0


def cmd_train_teacher(args) -> int:
    cfg = resolve_config(args)
    cfg.require_seed()
    cfg.log_resolved("train-teacher")
    corpus = load_corpus(args.corpus)
    store = _load_store(cfg, corpus, args.embeddings)
    graph = load_graph(args.graph, corpus)
    subgraphs = _load_subgraphs(cfg, graph, args.subgraph_cache)
    model, losses = train_teacher(graph, store, subgraphs, cfg.train_config())
    save_model(model, args.out)
    for epoch, loss in enumerate(losses):
        logger.info("teacher epoch %d: loss %.6f", epoch, loss)
    print(f"wrote teacher checkpoint to {args.out} ({len(losses)} epochs)")
    return 0


def cmd_train_student(args) -> int:
    cfg = resolve_config(args)
    cfg.require_seed()
    cfg.log_resolved("train-student")
    corpus = load_corpus(args.corpus)
    store = _load_store(cfg, corpus, args.embeddings)
    graph = load_graph(args.graph, corpus)
    subgraphs = _load_subgraphs(cfg, graph, args.subgraph_cache)
    teacher = load_model(args.teacher)
    model, losses = train_student(graph, store, subgraphs, teacher, cfg.train_config())
    save_model(model, args.out)
    for epoch, loss in enumerate(losses):
        logger.info("student epoch %d: loss %.6f", epoch, loss)
    print(f"wrote student checkpoint to {args.out} ({len(losses)} epochs)")
    return 0


def cmd_synthesize(args) -> int:
    cfg = resolve_config(args)
    cfg.log_resolved("synthesize")
    corpus = load_corpus(args.corpus)
    store = _load_store(cfg, corpus, args.embeddings)
    graph = load_graph(args.graph, corpus)
    subgraphs = _load_subgraphs(cfg, graph, args.subgraph_cache)
    teacher = load_model(args.teacher)
    student = load_model(args.student)
    text_reps = encode_all(teacher, subgraphs, store)
    image_reps = encode_all(student, subgraphs, store)
    from .linker import candidate_evidence

    records = []
    cand_sets = []
    for mention in corpus.mentions:
        cands = prior_score(
            select_candidates(mention, corpus, cfg.k_ch, store, text_reps, image_reps)
        )
        cand_sets.append(cands)
        evidence_map = candidate_evidence(mention, cands, corpus, store, text_reps, image_reps)
        for entity_id in cands.candidates:
            records.append(
                (mention.id, entity_id, cands.prior[entity_id], evidence_map[entity_id])
            )
    save_evidence(records, args.out)
    if args.candidates_out:
        save_candidates(cand_sets, args.candidates_out)
    print(f"wrote {len(records)} evidence rows to {args.out}")
    return 0


def cmd_induce_tree(args) -> int:
    cfg = resolve_config(args)
    cfg.log_resolved("induce-tree")
    corpus = load_corpus(args.corpus)
    stats = corpus.modality_stats()
    stats.update(n_mentions=len(corpus.mentions), n_entities=len(corpus.entities))
    tree = induce_tree(cfg.llm_client(), stats, max_depth=cfg.max_tree_depth)
    save_tree(tree, args.out)
    kind = "identity" if tree.root is None else f"depth-{tree.depth()}"
    print(f"wrote {kind} tree to {args.out}")
    return 0


def cmd_link(args) -> int:
    cfg = resolve_config(args)
    cfg.require_seed()
    cfg.log_resolved("link")
    corpus = load_corpus(args.corpus)
    store = _load_store(cfg, corpus, args.embeddings)
    graph = load_graph(args.graph, corpus)
    subgraphs = _load_subgraphs(cfg, graph, args.subgraph_cache)
    teacher = load_model(args.teacher)
    student = load_model(args.student)
    text_reps = encode_all(teacher, subgraphs, store)
    image_reps = encode_all(student, subgraphs, store)
    tree = load_tree(args.tree, cfg.max_tree_depth) if args.tree else identity_tree(cfg.max_tree_depth)
    truth = evaluation.load_truth(args.truth) if args.truth else {}
    results = []
    audit_lines = []
    for mention in corpus.mentions:
        _cands, ranked, _evidence, stats = link_mention(
            mention, corpus, store, text_reps, image_reps, cfg.k_ch, tree
        )
        results.append(
            evaluation.LinkResult(
                mention=mention.id,
                ranked=tuple(entity_id for entity_id, _s, _t in ranked),
                truth=truth.get(mention.id),
            )
        )
        for entity_id, final, trace in ranked:
            audit_lines.append(
                {
                    "mention": mention.id,
                    "entity": entity_id,
                    "prior": trace.prior,
                    "final": final,
                    "path": [
                        {
                            "feature": step.feature,
                            "op": step.op,
                            "threshold": step.threshold,
                            "value": step.value,
                            "branch": step.branch,
                            "delta": step.delta,
                        }
                        for step in trace.steps
                    ],
                }
            )
        logger.debug(
            "linked %s: %d channels, %d candidates, %d tree evaluations",
            mention.id,
            stats.channels_scanned,
            stats.candidates,
            stats.tree_evaluations,
        )
    evaluation.save_results(results, args.out)
    if args.audit_out:
        with Path(args.audit_out).open("w", encoding="utf-8") as fh:
            for line in audit_lines:
                fh.write(json.dumps(line) + "\n")
    print(f"wrote {len(results)} link results to {args.out}")
    return 0


def cmd_eval(args) -> int:
    cfg = resolve_config(args)
    cfg.log_resolved("eval")
    results = evaluation.load_results(args.results)
    ks = [int(k) for k in args.k.split(",")]
    print(f"{'k':>4}  {'hit@k':>8}")
    for k in ks:
        print(f"{k:>4}  {evaluation.hit_at_k(results, k):>8.4f}")
    return 0


def cmd_check_theorems(args) -> int:
    cfg = resolve_config(args)
    cfg.log_resolved("check-theorems")
    seed = cfg.seed if cfg.seed is not None else 0
    rng = np.random.default_rng(seed)
    worst_gap = 0.0
    for trial in range(args.matrices):
        k = int(rng.integers(1, 6))
        a = rng.standard_normal((k, k))
        sigma = a @ a.T + 0.05 * np.eye(k)
        report = evaluation.check_theorem1(sigma, trials=args.trials, seed=seed + trial)
        if not report.fused_not_worse or not report.mc_consistent:
            print(f"FAIL theorem-1 on trial {trial}: {report}")
            return 1
        worst_gap = max(worst_gap, report.analytic_risk - report.min_single_risk)
    print(
        f"theorem-1 ok on {args.matrices} covariance draws "
        f"(fused risk never exceeded the best single channel; worst gap {worst_gap:.3e})"
    )
    report2 = evaluation.check_theorem2(args.samples, dim=8, seed=seed)
    if report2.violations:
        print(f"FAIL theorem-2: {report2.violations} violations")
        return 1
    print(
        f"theorem-2 ok on {report2.samples} random triples "
        f"(max bound ratio {report2.max_ratio:.4f})"
    )
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="evlink",
        description="Unsupervised multimodal entity linking over multi-perspective evidence.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("ingest", help="validate a corpus file and print modality stats")
    p.add_argument("--corpus", required=True)
    p.add_argument("--out")
    _add_common(p)
    p.set_defaults(func=cmd_ingest)

    p = sub.add_parser("gen-planted", help="generate a planted benchmark with known truth")
    p.add_argument("--out-dir", required=True)
    p.add_argument("--mentions", type=int, default=50)
    p.add_argument("--entities", type=int, default=500)
    p.add_argument("--margin", type=float, default=0.2)
    p.add_argument("--image-dropout", dest="image_dropout", type=float, default=0.3)
    _add_common(p)
    p.set_defaults(func=cmd_gen_planted)

    p = sub.add_parser("build-graph", help="build the contextualized graph")
    p.add_argument("--corpus", required=True)
    p.add_argument("--embeddings", required=True)
    p.add_argument("--out", required=True)
    _add_common(p)
    p.set_defaults(func=cmd_build_graph)

    p = sub.add_parser("train-teacher", help="train and freeze the text-view encoder")
    p.add_argument("--corpus", required=True)
    p.add_argument("--embeddings", required=True)
    p.add_argument("--graph", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--subgraph-cache", dest="subgraph_cache")
    _add_common(p)
    p.set_defaults(func=cmd_train_teacher)

    p = sub.add_parser("train-student", help="distill the image-view encoder")
    p.add_argument("--corpus", required=True)
    p.add_argument("--embeddings", required=True)
    p.add_argument("--graph", required=True)
    p.add_argument("--teacher", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--subgraph-cache", dest="subgraph_cache")
    _add_common(p)
    p.set_defaults(func=cmd_train_student)

    p = sub.add_parser("synthesize", help="dump evidence vectors for mention-candidate pairs")
    p.add_argument("--corpus", required=True)
    p.add_argument("--embeddings", required=True)
    p.add_argument("--graph", required=True)
    p.add_argument("--teacher", required=True)
    p.add_argument("--student", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--candidates-out", dest="candidates_out")
    p.add_argument("--subgraph-cache", dest="subgraph_cache")
    _add_common(p)
    p.set_defaults(func=cmd_synthesize)

    p = sub.add_parser("induce-tree", help="ask the LLM for a re-ranking tree")
    p.add_argument("--corpus", required=True)
    p.add_argument("--out", required=True)
    _add_common(p)
    p.set_defaults(func=cmd_induce_tree)

    p = sub.add_parser("link", help="rank candidate entities for every mention")
    p.add_argument("--corpus", required=True)
    p.add_argument("--embeddings", required=True)
    p.add_argument("--graph", required=True)
    p.add_argument("--teacher", required=True)
    p.add_argument("--student", required=True)
    p.add_argument("--tree")
    p.add_argument("--truth")
    p.add_argument("--out", required=True)
    p.add_argument("--audit-out", dest="audit_out")
    p.add_argument("--subgraph-cache", dest="subgraph_cache")
    _add_common(p)
    p.set_defaults(func=cmd_link)

    p = sub.add_parser("eval", help="hit@k metrics over a results file")
    p.add_argument("--results", required=True)
    p.add_argument("--k", default="1,5,10")
    _add_common(p)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("check-theorems", help="numerical checks of the risk and bound results")
    p.add_argument("--matrices", type=int, default=100)
    p.add_argument("--trials", type=int, default=100_000)
    p.add_argument("--samples", type=int, default=10_000)
    _add_common(p)
    p.set_defaults(func=cmd_check_theorems)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if getattr(args, "verbose", False) else logging.INFO,
        format="%(levelname)s %(name)s: %(message)s",
    )
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
