"""Graph-convolutional encoders with a frozen-teacher distillation scheme.

A small GCN runs per node over its extracted subgraph; the center row is the
node's contextualized representation and the mean over rows is the subgraph
summary. The text-view encoder trains first on a margin-based structural
contrastive objective and is then frozen; the image-view encoder trains on the
same objective plus a cross-modal InfoNCE term against the frozen text
representations. All gradients are computed analytically in closed form so
they can be checked against finite differences.
"""

from __future__ import annotations

import hashlib
import json
import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .embeddings import EmbeddingStore
from .ppr import Subgraph

logger = logging.getLogger(__name__)

VIEW_TEXT = "text"
VIEW_IMAGE = "image"

_CHECKPOINT_MAGIC = "evlink-gnn-checkpoint/1"


class GnnError(ValueError):
    pass


class DivergenceError(RuntimeError):
    """Training produced a non-finite loss."""


@dataclass
class TrainConfig:
    eta: float = 0.5
    tau: float = 0.1
    lambda_distill: float = 0.75
    lr: float = 0.01
    epochs: int = 30
    batch_size: int = 32
    seed: int = 0

    def __post_init__(self) -> None:
        if self.tau <= 0:
            raise GnnError("tau must be positive")
        if self.batch_size < 2:
            raise GnnError("batch_size must be >= 2 (negatives require a partner)")
        if self.lambda_distill < 0:
            raise GnnError("lambda_distill must be >= 0")

    def content_hash(self) -> str:
        payload = json.dumps(self.__dict__, sort_keys=True)
        return hashlib.sha256(payload.encode("utf-8")).hexdigest()


@dataclass
class GnnModel:
    view: str
    weights: list[np.ndarray]
    seed: int = 0
    frozen: bool = False
    config_hash: str = ""

    @property
    def num_layers(self) -> int:
        return len(self.weights)

    @property
    def dims(self) -> list[int]:
        return [self.weights[0].shape[0]] + [w.shape[1] for w in self.weights]

    def copy_weights(self) -> list[np.ndarray]:
        return [w.copy() for w in self.weights]


def init_model(view: str, dims, seed: int, config_hash: str = "") -> GnnModel:
    """Seeded uniform init in [-1/sqrt(fan_in), +1/sqrt(fan_in)] per layer."""
    if view not in (VIEW_TEXT, VIEW_IMAGE):
        raise GnnError(f"unknown view {view!r}")
    dims = list(dims)
    if len(dims) < 2:
        raise GnnError("dims must list input and at least one output dimension")
    weights = []
    view_tag = 0 if view == VIEW_TEXT else 1
    for layer, (fan_in, fan_out) in enumerate(zip(dims[:-1], dims[1:])):
        rng = np.random.default_rng(np.random.SeedSequence(entropy=[seed, view_tag, layer]))
        bound = 1.0 / np.sqrt(fan_in)
        weights.append(rng.uniform(-bound, bound, size=(fan_in, fan_out)))
    return GnnModel(view=view, weights=weights, seed=seed, config_hash=config_hash)


def model_hash(model: GnnModel) -> str:
    h = hashlib.sha256()
    h.update(model.view.encode("utf-8"))
    for w in model.weights:
        h.update(np.ascontiguousarray(w, dtype="<f8").tobytes())
    return h.hexdigest()


def save_model(model: GnnModel, path) -> None:
    """Bit-exact checkpoint: one JSON header line, then raw row-major float64 weights."""
    path = Path(path)
    header = {
        "magic": _CHECKPOINT_MAGIC,
        "view": model.view,
        "num_layers": model.num_layers,
        "dims": model.dims,
        "seed": model.seed,
        "frozen": model.frozen,
        "config_hash": model.config_hash,
    }
    with path.open("wb") as fh:
        fh.write((json.dumps(header, sort_keys=True) + "\n").encode("utf-8"))
        for w in model.weights:
            fh.write(np.ascontiguousarray(w, dtype="<f8").tobytes())


def load_model(path) -> GnnModel:
    path = Path(path)
    with path.open("rb") as fh:
        header = json.loads(fh.readline().decode("utf-8"))
        if header.get("magic") != _CHECKPOINT_MAGIC:
            raise GnnError(f"{path}: not a model checkpoint")
        dims = header["dims"]
        weights = []
        for fan_in, fan_out in zip(dims[:-1], dims[1:]):
            raw = fh.read(fan_in * fan_out * 8)
            if len(raw) != fan_in * fan_out * 8:
                raise GnnError(f"{path}: truncated checkpoint")
            weights.append(np.frombuffer(raw, dtype="<f8").reshape(fan_in, fan_out).copy())
    return GnnModel(
        view=header["view"],
        weights=weights,
        seed=header["seed"],
        frozen=header["frozen"],
        config_hash=header.get("config_hash", ""),
    )


# ---------------------------------------------------------------------------
# forward / backward
# ---------------------------------------------------------------------------


def normalized_adjacency(subgraph: Subgraph) -> np.ndarray:
    """Symmetric renormalized adjacency with self-loops: D^-1/2 (A + I) D^-1/2."""
    n = subgraph.size
    adj = np.eye(n)
    for (a, b) in subgraph.edges:
        adj[a, b] = 1.0
        adj[b, a] = 1.0
    inv_sqrt = 1.0 / np.sqrt(adj.sum(axis=1))
    return adj * inv_sqrt[:, None] * inv_sqrt[None, :]


def view_features(subgraph: Subgraph, store: EmbeddingStore, view: str) -> np.ndarray:
    """Feature matrix in member order; missing images are masked to zero rows."""
    rows = []
    for node_id in subgraph.members:
        if view == VIEW_TEXT:
            rows.append(store.text(node_id))
        elif view == VIEW_IMAGE:
            vec = store.image(node_id)
            rows.append(vec if vec is not None else np.zeros(store.dim))
        else:
            raise GnnError(f"unknown view {view!r}")
    return np.stack(rows)


def _forward(model: GnnModel, a_hat: np.ndarray, features: np.ndarray):
    """Returns the final node matrix plus the per-layer caches needed for backprop."""
    h = features
    caches = []
    last = model.num_layers - 1
    for layer, w in enumerate(model.weights):
        mixed = a_hat @ h
        pre = mixed @ w
        out = np.maximum(pre, 0.0) if layer < last else pre
        caches.append((mixed, pre))
        h = out
    return h, caches


def gcn_forward(model: GnnModel, subgraph: Subgraph, features: np.ndarray):
    """Forward pass over one subgraph: (center representation, mean summary, all rows)."""
    if features.shape[0] != subgraph.size:
        raise GnnError(
            f"feature rows ({features.shape[0]}) != subgraph size ({subgraph.size})"
        )
    a_hat = normalized_adjacency(subgraph)
    h, _ = _forward(model, a_hat, features)
    return h[0].copy(), h.mean(axis=0), h


def _backward(model: GnnModel, a_hat: np.ndarray, features: np.ndarray, caches, grad_out):
    """Accumulate dL/dW for every layer given dL/d(final node matrix)."""
    grads = [np.zeros_like(w) for w in model.weights]
    g = grad_out
    last = model.num_layers - 1
    for layer in range(last, -1, -1):
        mixed, pre = caches[layer]
        if layer < last:
            g = g * (pre > 0.0)
        grads[layer] += mixed.T @ g
        if layer > 0:
            g = a_hat @ (g @ model.weights[layer].T)
    return grads


def _sigmoid(x: float) -> float:
    if x >= 0:
        return 1.0 / (1.0 + np.exp(-x))
    z = np.exp(x)
    return z / (1.0 + z)


def structural_loss(batch, eta: float):
    """Margin hinge between a node's self-summary score and a shuffled summary score.

    ``batch`` is a list of (h, s) pairs. Negatives come from rotating the batch
    by one position, a derangement that guarantees a distinct partner. Returns
    the mean loss and per-item (dh, ds) gradients.
    """
    size = len(batch)
    if size < 2:
        raise GnnError("structural loss needs a batch of at least 2 (no valid negative)")
    hs = [np.asarray(h, dtype=np.float64) for h, _ in batch]
    ss = [np.asarray(s, dtype=np.float64) for _, s in batch]
    grad_h = [np.zeros_like(v) for v in hs]
    grad_s = [np.zeros_like(v) for v in ss]
    total = 0.0
    for i in range(size):
        j = (i + 1) % size
        pos = _sigmoid(float(hs[i] @ ss[i]))
        neg = _sigmoid(float(hs[i] @ ss[j]))
        margin = eta - pos + neg
        if margin > 0.0:
            total += margin
            dpos = pos * (1.0 - pos)
            dneg = neg * (1.0 - neg)
            grad_h[i] += (-dpos * ss[i] + dneg * ss[j]) / size
            grad_s[i] += (-dpos / size) * hs[i]
            grad_s[j] += (dneg / size) * hs[i]
    loss = total / size
    return loss, list(zip(grad_h, grad_s))


def _safe_cosine_parts(u: np.ndarray, v: np.ndarray):
    nu = float(np.linalg.norm(u))
    nv = float(np.linalg.norm(v))
    if nu == 0.0 or nv == 0.0:
        return 0.0, nu, nv
    return float(u @ v) / (nu * nv), nu, nv


def safe_cosine(u, v) -> float:
    """Cosine similarity with cos(0-vector, anything) defined as 0."""
    return _safe_cosine_parts(np.asarray(u, dtype=np.float64), np.asarray(v, dtype=np.float64))[0]


def infonce_loss(student_h, teacher_h, tau: float):
    """Cross-modal InfoNCE over cosine similarities; gradients w.r.t. students only.

    For each item the matching teacher representation is the positive and the
    other teachers in the batch are negatives. Teacher vectors are constants.
    """
    if tau <= 0:
        raise GnnError("tau must be positive")
    students = [np.asarray(u, dtype=np.float64) for u in student_h]
    teachers = [np.asarray(t, dtype=np.float64) for t in teacher_h]
    if len(students) != len(teachers):
        raise GnnError("student and teacher batches must have equal length")
    size = len(students)
    if size == 0:
        raise GnnError("empty batch")
    cos = np.zeros((size, size))
    norms_u = np.zeros(size)
    norms_t = np.zeros(size)
    for i, u in enumerate(students):
        norms_u[i] = float(np.linalg.norm(u))
    for j, t in enumerate(teachers):
        norms_t[j] = float(np.linalg.norm(t))
    for i in range(size):
        for j in range(size):
            if norms_u[i] == 0.0 or norms_t[j] == 0.0:
                cos[i, j] = 0.0
            else:
                cos[i, j] = float(students[i] @ teachers[j]) / (norms_u[i] * norms_t[j])
    logits = cos / tau
    shifted = logits - logits.max(axis=1, keepdims=True)
    exp = np.exp(shifted)
    softmax = exp / exp.sum(axis=1, keepdims=True)
    log_probs = shifted - np.log(exp.sum(axis=1, keepdims=True))
    loss = -float(np.trace(log_probs)) / size
    grads = []
    for i in range(size):
        g = np.zeros_like(students[i])
        if norms_u[i] == 0.0:
            grads.append(g)
            continue
        coeff = (softmax[i] - np.eye(size)[i]) / (tau * size)
        for j in range(size):
            if norms_t[j] == 0.0 or coeff[j] == 0.0:
                continue
            dcos_du = teachers[j] / (norms_u[i] * norms_t[j]) - cos[i, j] * students[i] / (
                norms_u[i] ** 2
            )
            g += coeff[j] * dcos_du
        grads.append(g)
    return loss, grads


# ---------------------------------------------------------------------------
# training
# ---------------------------------------------------------------------------


@dataclass
class SubgraphBundle:
    """Precomputed per-node forward inputs for one view."""

    subgraph: Subgraph
    a_hat: np.ndarray
    features: np.ndarray


def build_bundles(subgraphs: dict[str, Subgraph], store: EmbeddingStore, view: str):
    return {
        node_id: SubgraphBundle(
            subgraph=sg,
            a_hat=normalized_adjacency(sg),
            features=view_features(sg, store, view),
        )
        for node_id, sg in subgraphs.items()
    }


def _batches(order: list[str], batch_size: int):
    """Contiguous slices; a trailing singleton merges into the previous batch."""
    batches = [order[i : i + batch_size] for i in range(0, len(order), batch_size)]
    if len(batches) >= 2 and len(batches[-1]) == 1:
        batches[-2].extend(batches.pop())
    return batches


def _center_summary_grad(bundle: SubgraphBundle, g_center: np.ndarray, g_summary: np.ndarray):
    n = bundle.subgraph.size
    grad_out = np.tile(g_summary / n, (n, 1))
    grad_out[0] += g_center
    return grad_out


def _train_view(
    bundles: dict[str, SubgraphBundle],
    view: str,
    cfg: TrainConfig,
    teacher_reps: dict[str, np.ndarray] | None,
    stage_tag: int,
):
    """Shared loop for both stages; distillation applies when teacher_reps is given."""
    node_ids = sorted(bundles)
    dims = None
    for bundle in bundles.values():
        dims = [bundle.features.shape[1]] * 3
        break
    model = init_model(view, dims, cfg.seed, cfg.content_hash())
    rng = np.random.default_rng(np.random.SeedSequence(entropy=[cfg.seed, stage_tag]))
    losses: list[float] = []
    for epoch in range(cfg.epochs):
        order = [node_ids[i] for i in rng.permutation(len(node_ids))]
        epoch_losses = []
        for batch_ids in _batches(order, cfg.batch_size):
            if len(batch_ids) < 2:
                continue
            reps = []
            caches = {}
            for node_id in batch_ids:
                bundle = bundles[node_id]
                h_all, cache = _forward(model, bundle.a_hat, bundle.features)
                caches[node_id] = cache
                reps.append((h_all[0].copy(), h_all.mean(axis=0)))
            loss, struct_grads = structural_loss(reps, cfg.eta)
            if teacher_reps is not None and cfg.lambda_distill != 0.0:
                students = [h for h, _ in reps]
                teachers = [teacher_reps[node_id] for node_id in batch_ids]
                xmodal, xmodal_grads = infonce_loss(students, teachers, cfg.tau)
                loss = loss + cfg.lambda_distill * xmodal
            else:
                xmodal_grads = None
            if not np.isfinite(loss):
                raise DivergenceError(
                    f"non-finite loss at epoch {epoch}, batch starting with {batch_ids[0]!r}"
                )
            weight_grads = [np.zeros_like(w) for w in model.weights]
            for k, node_id in enumerate(batch_ids):
                bundle = bundles[node_id]
                g_h, g_s = struct_grads[k]
                if xmodal_grads is not None:
                    g_h = g_h + cfg.lambda_distill * xmodal_grads[k]
                grad_out = _center_summary_grad(bundle, g_h, g_s)
                layer_grads = _backward(model, bundle.a_hat, bundle.features, caches[node_id], grad_out)
                for w_grad, layer_grad in zip(weight_grads, layer_grads):
                    w_grad += layer_grad
            for w, w_grad in zip(model.weights, weight_grads):
                w -= cfg.lr * w_grad
            if any(not np.isfinite(w).all() for w in model.weights):
                raise DivergenceError(
                    f"non-finite weights at epoch {epoch}, batch starting with {batch_ids[0]!r}"
                )
            epoch_losses.append(float(loss))
        mean_loss = float(np.mean(epoch_losses)) if epoch_losses else 0.0
        losses.append(mean_loss)
        logger.debug("%s view epoch %d: loss %.6f", view, epoch, mean_loss)
    return model, losses


def train_teacher(graph, store: EmbeddingStore, subgraphs, cfg: TrainConfig):
    """Stage one: text-view encoder on the structural objective; returned frozen."""
    bundles = build_bundles(subgraphs, store, VIEW_TEXT)
    model, losses = _train_view(bundles, VIEW_TEXT, cfg, teacher_reps=None, stage_tag=0)
    model.frozen = True
    return model, losses


def train_student(graph, store: EmbeddingStore, subgraphs, teacher: GnnModel, cfg: TrainConfig):
    """Stage two: image-view encoder with structural loss plus frozen-teacher InfoNCE."""
    if not teacher.frozen:
        raise GnnError("teacher must be frozen before student training")
    teacher_reps = None
    if cfg.lambda_distill != 0.0:
        teacher_reps = encode_all(teacher, subgraphs, store)
    bundles = build_bundles(subgraphs, store, VIEW_IMAGE)
    return _train_view(bundles, VIEW_IMAGE, cfg, teacher_reps=teacher_reps, stage_tag=1)


def train_structural_only(store: EmbeddingStore, subgraphs, cfg: TrainConfig, view: str = VIEW_IMAGE):
    """Reference run without distillation; the student with zero weight matches it bitwise."""
    bundles = build_bundles(subgraphs, store, view)
    stage_tag = 1 if view == VIEW_IMAGE else 0
    return _train_view(bundles, view, cfg, teacher_reps=None, stage_tag=stage_tag)


def encode_all(model: GnnModel, subgraphs, store: EmbeddingStore) -> dict[str, np.ndarray]:
    """Contextualized representation (center row) for every node, keyed by id."""
    view = model.view
    out: dict[str, np.ndarray] = {}
    for node_id in sorted(subgraphs):
        sg = subgraphs[node_id]
        features = view_features(sg, store, view)
        h_center, _, _ = gcn_forward(model, sg, features)
        out[node_id] = h_center
    return out
