"""Decision-tree re-ranking induced from an LLM reply.

The tree is a nested object of threshold tests over the named evidence
features (plus the prior itself); every branch carries a bounded score
adjustment. Evaluating a candidate walks root to leaf and adds the traversed
adjustments to the prior. A malformed or unavailable reply degrades to the
identity tree, so ranking falls back to prior order instead of crashing.
"""

from __future__ import annotations

import json
import logging
import re
from dataclasses import dataclass
from pathlib import Path

from .evidence import FEATURE_NAMES, EvidenceVector

logger = logging.getLogger(__name__)

DEFAULT_MAX_DEPTH = 5
MAX_ABS_DELTA = 1.0

_OPS = ("<", "<=", ">", ">=")
_VALID_FEATURES = FEATURE_NAMES + ("s_prior",)

_FENCED_BLOCK = re.compile(r"```(?:[a-zA-Z0-9_-]+)?\s*\n(.*?)```", re.DOTALL)


class TreeParseError(ValueError):
    pass


@dataclass(frozen=True)
class TreeNode:
    feature: str
    op: str
    threshold: float
    delta_true: float
    delta_false: float
    true_child: "TreeNode | None" = None
    false_child: "TreeNode | None" = None


@dataclass(frozen=True)
class DecisionTree:
    root: TreeNode | None
    max_depth: int = DEFAULT_MAX_DEPTH

    def depth(self) -> int:
        return _depth(self.root)


@dataclass(frozen=True)
class TraceStep:
    feature: str
    op: str
    threshold: float
    value: float
    branch: bool
    delta: float


@dataclass(frozen=True)
class ReasoningTrace:
    prior: float
    steps: tuple[TraceStep, ...]
    final_score: float


def identity_tree(max_depth: int = DEFAULT_MAX_DEPTH) -> DecisionTree:
    """Tree with no tests: every candidate keeps its prior score."""
    return DecisionTree(root=None, max_depth=max_depth)


def _depth(node: TreeNode | None) -> int:
    if node is None:
        return 0
    return 1 + max(_depth(node.true_child), _depth(node.false_child))


def _parse_node(obj, location: str, depth: int, max_depth: int) -> TreeNode | None:
    if obj is None:
        return None
    if not isinstance(obj, dict):
        raise TreeParseError(f"{location}: node must be an object or null")
    if depth > max_depth:
        raise TreeParseError(f"{location}: tree exceeds maximum depth {max_depth}")
    for key in ("feature", "op", "threshold", "delta_true", "delta_false"):
        if key not in obj:
            raise TreeParseError(f"{location}: missing field {key!r}")
    feature = obj["feature"]
    if feature not in _VALID_FEATURES:
        raise TreeParseError(f"{location}: unknown feature {feature!r}")
    op = obj["op"]
    if op not in _OPS:
        raise TreeParseError(f"{location}: unknown comparator {op!r}")
    values = {}
    for key in ("threshold", "delta_true", "delta_false"):
        try:
            value = float(obj[key])
        except (TypeError, ValueError):
            raise TreeParseError(f"{location}: field {key!r} is not a number") from None
        if value != value or value in (float("inf"), float("-inf")):
            raise TreeParseError(f"{location}: field {key!r} is not finite")
        values[key] = value
    for key in ("delta_true", "delta_false"):
        if abs(values[key]) > MAX_ABS_DELTA:
            raise TreeParseError(
                f"{location}: adjustment {key!r}={values[key]} exceeds |delta| <= {MAX_ABS_DELTA}"
            )
    return TreeNode(
        feature=feature,
        op=op,
        threshold=values["threshold"],
        delta_true=values["delta_true"],
        delta_false=values["delta_false"],
        true_child=_parse_node(obj.get("true"), f"{location}.true", depth + 1, max_depth),
        false_child=_parse_node(obj.get("false"), f"{location}.false", depth + 1, max_depth),
    )


def parse_tree(text: str, max_depth: int = DEFAULT_MAX_DEPTH) -> DecisionTree:
    """Parse a tree from an LLM reply (fenced block) or a bare JSON document."""
    match = _FENCED_BLOCK.search(text)
    payload = match.group(1) if match else text
    try:
        obj = json.loads(payload)
    except json.JSONDecodeError as exc:
        raise TreeParseError(f"tree block is not valid JSON: {exc.msg}") from None
    if isinstance(obj, dict) and "root" in obj:
        declared_depth = int(obj.get("max_depth", max_depth))
        max_depth = min(max_depth, declared_depth) if declared_depth > 0 else max_depth
        obj = obj["root"]
    root = _parse_node(obj, "root", 1, max_depth)
    return DecisionTree(root=root, max_depth=max_depth)


def save_tree(tree: DecisionTree, path) -> None:
    def encode(node: TreeNode | None):
        if node is None:
            return None
        return {
            "feature": node.feature,
            "op": node.op,
            "threshold": node.threshold,
            "delta_true": node.delta_true,
            "delta_false": node.delta_false,
            "true": encode(node.true_child),
            "false": encode(node.false_child),
        }

    Path(path).write_text(
        json.dumps({"max_depth": tree.max_depth, "root": encode(tree.root)}, indent=2) + "\n",
        encoding="utf-8",
    )


def load_tree(path, max_depth: int = DEFAULT_MAX_DEPTH) -> DecisionTree:
    return parse_tree(Path(path).read_text(encoding="utf-8"), max_depth=max_depth)


def _compare(value: float, op: str, threshold: float) -> bool:
    if op == "<":
        return value < threshold
    if op == "<=":
        return value <= threshold
    if op == ">":
        return value > threshold
    return value >= threshold


def evaluate(tree: DecisionTree, evidence: EvidenceVector, prior: float) -> ReasoningTrace:
    """Deterministic root-to-leaf walk; the final score is the prior plus the path deltas."""
    values = evidence.as_dict()
    values["s_prior"] = prior
    steps: list[TraceStep] = []
    delta_sum = 0.0
    node = tree.root
    while node is not None:
        value = values[node.feature]
        branch = _compare(value, node.op, node.threshold)
        delta = node.delta_true if branch else node.delta_false
        steps.append(
            TraceStep(
                feature=node.feature,
                op=node.op,
                threshold=node.threshold,
                value=value,
                branch=branch,
                delta=delta,
            )
        )
        delta_sum += delta
        node = node.true_child if branch else node.false_child
    return ReasoningTrace(prior=prior, steps=tuple(steps), final_score=prior + delta_sum)


def rerank(cands, evidence_map: dict[str, EvidenceVector], tree: DecisionTree):
    """Ranked (entity, final score, trace) triples, best first.

    Sort order: descending final score, ties by descending prior, then
    ascending entity id. Every candidate must have an evidence vector.
    """
    results = []
    for entity_id in cands.candidates:
        if entity_id not in evidence_map:
            raise TreeParseError(f"no evidence vector for candidate {entity_id!r}")
        prior = cands.prior.get(entity_id, 0.0)
        trace = evaluate(tree, evidence_map[entity_id], prior)
        results.append((entity_id, trace.final_score, trace))
    results.sort(key=lambda item: (-item[1], -item[2].prior, item[0]))
    return results


def build_induce_messages(stats: dict, max_depth: int = DEFAULT_MAX_DEPTH) -> list[dict]:
    from .llm import INDUCE_TREE

    prompt = INDUCE_TREE.render(
        n_mentions=stats.get("n_mentions", 0),
        n_entities=stats.get("n_entities", 0),
        mention_image_rate=stats.get("mention_image_rate", 0.0),
        entity_image_rate=stats.get("entity_image_rate", 0.0),
        max_depth=max_depth,
    )
    return [{"role": "user", "content": prompt}]


def induce_tree(
    llm,
    stats: dict,
    max_depth: int = DEFAULT_MAX_DEPTH,
    parse_retries: int = 2,
) -> DecisionTree:
    """Ask the LLM for a re-ranking tree; fall back to the identity tree on failure.

    Parse failures re-prompt with a short correction up to ``parse_retries``
    times; the degradation path keeps the pipeline running on prior order.
    """
    messages = build_induce_messages(stats, max_depth=max_depth)
    last_error = None
    for attempt in range(parse_retries + 1):
        try:
            reply = llm.complete(messages)
        except Exception as exc:
            logger.warning("tree induction transport failed (%s); using identity tree", exc)
            return identity_tree(max_depth)
        try:
            return parse_tree(reply, max_depth=max_depth)
        except TreeParseError as exc:
            last_error = exc
            messages = messages + [
                {"role": "assistant", "content": reply},
                {
                    "role": "user",
                    "content": f"That was not a valid tree ({exc}). "
                    "Reply again with a single fenced JSON block following the schema.",
                },
            ]
    logger.warning("tree induction failed after retries (%s); using identity tree", last_error)
    return identity_tree(max_depth)
