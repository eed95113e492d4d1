"""Chat-style LLM transport with retry, prompt templates, and a deterministic mock.

Two prompt roles exist: generating a semantic description of a single node
(used to enhance text embeddings) and inducing a re-ranking decision tree from
the evidence feature glossary. The mock backend resolves responses from a
fixture file keyed by a stable hash of the rendered prompt and never touches
the network.
"""

from __future__ import annotations

import hashlib
import json
import logging
import time
import urllib.error
import urllib.request
from dataclasses import dataclass, field
from pathlib import Path

from .corpus import MultimodalNode

logger = logging.getLogger(__name__)

MODE_LIVE = "live"
MODE_MOCK = "mock"


class LlmError(RuntimeError):
    """Raised on configuration problems."""


class LlmTransportError(LlmError):
    """Raised when a live request fails after all retries."""

    def __init__(self, message: str, status: int | None, attempts: int):
        super().__init__(message)
        self.status = status
        self.attempts = attempts


@dataclass
class LlmConfig:
    mode: str = MODE_MOCK
    endpoint: str = ""
    model: str = ""
    api_key_env: str = "EVLINK_API_KEY"
    timeout: float = 30.0
    max_retries: int = 3
    mock_fixture_path: str | None = None
    # "{key}" in the default is replaced with the prompt hash, so unmapped
    # prompts still resolve deterministically. The empty default triggers the
    # documented empty-description fallback in callers.
    mock_default_response: str = ""

    def validate(self) -> None:
        if self.mode not in (MODE_LIVE, MODE_MOCK):
            raise LlmError(f"unknown mode {self.mode!r}")
        if self.mode == MODE_LIVE and not self.endpoint:
            raise LlmError("live mode requires an endpoint URL")


@dataclass(frozen=True)
class PromptTemplate:
    """Template text with named placeholders; rendering fails on unresolved ones."""

    role: str
    text: str

    def render(self, **values) -> str:
        try:
            return self.text.format(**values)
        except KeyError as exc:
            raise LlmError(f"template {self.role!r}: unresolved placeholder {exc.args[0]!r}") from None


DESCRIBE_NODE = PromptTemplate(
    role="describe_node",
    text=(
        "You are assisting an entity disambiguation system.\n"
        "Write one short, factual description of the following {kind}, focusing on what "
        "distinguishes it from similarly named things. Reply with the description only.\n"
        "Name: {name}\n"
        "Context: {context}\n"
    ),
)

INDUCE_TREE = PromptTemplate(
    role="induce_tree",
    text=(
        "You are designing a conditional re-ranking strategy for an entity linking system.\n"
        "Each mention-entity pair has a prior score s_prior in [0, 1] and 14 evidence features.\n"
        "\n"
        "Corpus: {n_mentions} mentions, {n_entities} entities; "
        "{mention_image_rate:.1%} of mentions and {entity_image_rate:.1%} of entities have images.\n"
        "\n"
        "Feature glossary:\n"
        "- inst_tt: cosine of mention text vs entity text embeddings\n"
        "- inst_tv: cosine of mention text vs entity image embeddings (0 when missing)\n"
        "- inst_vt: cosine of mention image vs entity text embeddings (0 when missing)\n"
        "- inst_vv: cosine of mention image vs entity image embeddings (0 when missing)\n"
        "- group_tt: cosine of graph-contextualized text representations\n"
        "- group_tv: cosine of mention text representation vs entity image representation\n"
        "- group_vt: cosine of mention image representation vs entity text representation\n"
        "- group_vv: cosine of graph-contextualized image representations\n"
        "- lex: string overlap ratio of the two names, in [0, 1]\n"
        "- stat_mu: mean of the nine similarity signals above\n"
        "- stat_max: maximum of the nine similarity signals\n"
        "- stat_gap: stat_max minus stat_mu; a large gap with a low mean signals "
        "reliance on a single cue\n"
        "- has_img_m: 1 if the mention has an image, else 0\n"
        "- has_img_e: 1 if the entity has an image, else 0\n"
        "\n"
        "Guidelines:\n"
        "- Prioritize cross-view consistency: reward candidates whose instance, group and "
        "lexical signals agree.\n"
        "- Handle missing modalities explicitly using has_img_m / has_img_e before trusting "
        "visual features.\n"
        "- Penalize single-modality dominance: a strong visual score without group-level "
        "support is suspect.\n"
        "\n"
        "Produce one decision tree of depth at most {max_depth}. Answer with a single fenced "
        "code block containing a JSON object. Every node is an object with fields "
        '"feature" (a feature name above or "s_prior"), "op" (one of "<", "<=", ">", ">="), '
        '"threshold" (number), "delta_true" and "delta_false" (score adjustments in [-1, 1]), '
        'and "true" / "false" (a child node or null).\n'
    ),
)


def prompt_hash(messages) -> str:
    """Stable key for a rendered conversation."""
    payload = json.dumps(messages, sort_keys=True, ensure_ascii=False)
    return hashlib.sha256(payload.encode("utf-8")).hexdigest()


def load_fixture(path) -> dict[str, str]:
    """Read a mock fixture file: one JSON record per line with prompt_hash and response."""
    table: dict[str, str] = {}
    with Path(path).open("r", encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                record = json.loads(line)
            except json.JSONDecodeError as exc:
                raise LlmError(f"{path}:{line_no}: malformed fixture record ({exc.msg})") from None
            table[str(record["prompt_hash"])] = str(record["response"])
    return table


def save_fixture(table: dict[str, str], path) -> None:
    with Path(path).open("w", encoding="utf-8") as fh:
        for key in sorted(table):
            fh.write(json.dumps({"prompt_hash": key, "response": table[key]}) + "\n")


def _post_chat(cfg: LlmConfig, messages, api_key: str | None) -> str:
    """One chat-completion request; returns the first choice's text content."""
    body = json.dumps({"model": cfg.model, "messages": messages}).encode("utf-8")
    headers = {"Content-Type": "application/json"}
    if api_key:
        headers["Authorization"] = f"Bearer {api_key}"
    request = urllib.request.Request(cfg.endpoint, data=body, headers=headers, method="POST")
    with urllib.request.urlopen(request, timeout=cfg.timeout) as response:
        payload = json.loads(response.read().decode("utf-8"))
    return payload["choices"][0]["message"]["content"]


def complete(cfg: LlmConfig, messages) -> str:
    """Resolve one conversation to a text response (mock lookup or live request)."""
    cfg.validate()
    if cfg.mode == MODE_MOCK:
        key = prompt_hash(messages)
        table = load_fixture(cfg.mock_fixture_path) if cfg.mock_fixture_path else {}
        if key in table:
            return table[key]
        return cfg.mock_default_response.replace("{key}", key)

    import os

    api_key = os.environ.get(cfg.api_key_env) or None
    last_exc: Exception | None = None
    status: int | None = None
    for attempt in range(1, cfg.max_retries + 1):
        try:
            return _post_chat(cfg, messages, api_key)
        except urllib.error.HTTPError as exc:
            last_exc, status = exc, exc.code
        except (urllib.error.URLError, OSError, KeyError, json.JSONDecodeError) as exc:
            last_exc, status = exc, None
        if attempt < cfg.max_retries:
            time.sleep(min(0.25 * 2 ** (attempt - 1), 4.0))
    raise LlmTransportError(
        f"request failed after {cfg.max_retries} attempts: {last_exc}", status, cfg.max_retries
    )


def build_describe_messages(node: MultimodalNode) -> list[dict]:
    prompt = DESCRIBE_NODE.render(kind=node.kind, name=node.name, context=node.context)
    return [{"role": "user", "content": prompt}]


def describe_node(cfg: LlmConfig, node: MultimodalNode) -> str:
    return complete(cfg, build_describe_messages(node))


@dataclass
class LlmClient:
    """Thin stateful wrapper so pipeline code can pass one object around."""

    cfg: LlmConfig = field(default_factory=LlmConfig)
    _fixture_cache: dict[str, str] | None = field(default=None, repr=False)

    def complete(self, messages) -> str:
        if self.cfg.mode == MODE_MOCK:
            key = prompt_hash(messages)
            if self._fixture_cache is None:
                self._fixture_cache = (
                    load_fixture(self.cfg.mock_fixture_path) if self.cfg.mock_fixture_path else {}
                )
            if key in self._fixture_cache:
                return self._fixture_cache[key]
            return self.cfg.mock_default_response.replace("{key}", key)
        return complete(self.cfg, messages)

    def describe_node(self, node: MultimodalNode) -> str:
        return self.complete(build_describe_messages(node))
