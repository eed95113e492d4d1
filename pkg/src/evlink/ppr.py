"""Personalized PageRank via power iteration and top-K subgraph extraction.

Propagation runs on unweighted binary adjacency, consistent with the graph
module treating edge scores as metadata only. Subgraphs keep the center first,
then the top-K nodes by score; nodes with zero score never appear, so an
unfilled budget cannot pull in unreachable nodes.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .graph import ContextGraph


class PprError(ValueError):
    pass


@dataclass(frozen=True)
class Subgraph:
    """Induced local neighborhood: center first, adjacency as index pairs into members."""

    center: str
    members: tuple[str, ...]
    edges: tuple[tuple[int, int], ...]

    def __post_init__(self) -> None:
        if not self.members or self.members[0] != self.center:
            raise PprError("members must start with the center node")

    @property
    def size(self) -> int:
        return len(self.members)


def _transition_matrix(graph: ContextGraph, ids) -> np.ndarray:
    index = {node_id: k for k, node_id in enumerate(ids)}
    n = len(ids)
    adj = np.zeros((n, n))
    for (a, b) in graph.edges:
        adj[index[a], index[b]] = 1.0
        adj[index[b], index[a]] = 1.0
    degrees = adj.sum(axis=1)
    p = np.zeros_like(adj)
    nonzero = degrees > 0
    p[nonzero] = adj[nonzero] / degrees[nonzero, None]
    return p


def ppr_scores(
    graph: ContextGraph,
    source: str,
    alpha: float = 0.15,
    tol: float = 1e-10,
    max_iter: int = 100_000,
) -> dict[str, float]:
    """Stationary personalized PageRank vector for one source node.

    Iterates ``pi <- alpha * e_source + (1 - alpha) * P^T pi`` until the L1
    change drops below ``tol``. An isolated source yields the indicator vector.
    """
    if source not in graph:
        raise PprError(f"source {source!r} is not in the graph")
    if not (0.0 < alpha < 1.0):
        raise PprError("alpha must be in (0, 1)")
    if tol <= 0:
        raise PprError("tol must be positive")
    ids = list(graph.node_ids)
    index = {node_id: k for k, node_id in enumerate(ids)}
    if graph.degree(source) == 0:
        return {node_id: (1.0 if node_id == source else 0.0) for node_id in ids}
    p = _transition_matrix(graph, ids)
    e = np.zeros(len(ids))
    e[index[source]] = 1.0
    pi = e.copy()
    for _ in range(max_iter):
        nxt = alpha * e + (1.0 - alpha) * (p.T @ pi)
        if float(np.abs(nxt - pi).sum()) < tol:
            pi = nxt
            break
        pi = nxt
    else:
        raise PprError(f"power iteration did not converge within {max_iter} iterations")
    return {node_id: float(pi[index[node_id]]) for node_id in ids}


def ppr_scores_all(
    graph: ContextGraph, alpha: float = 0.15, tol: float = 1e-10, max_iter: int = 100_000
) -> dict[str, dict[str, float]]:
    """Per-source PPR vectors for every node, iterated jointly for speed.

    Matches per-source :func:`ppr_scores` up to the shared stopping rule
    (every column converged below ``tol``). Isolated sources are special-cased
    to their indicator vectors.
    """
    ids = list(graph.node_ids)
    index = {node_id: k for k, node_id in enumerate(ids)}
    n = len(ids)
    p = _transition_matrix(graph, ids)
    connected = np.array([graph.degree(node_id) > 0 for node_id in ids])
    eye = np.eye(n)
    pi = eye.copy()
    for _ in range(max_iter):
        nxt = alpha * eye + (1.0 - alpha) * (p.T @ pi)
        if float(np.abs(nxt - pi).sum(axis=0).max()) < tol:
            pi = nxt
            break
        pi = nxt
    else:
        raise PprError(f"power iteration did not converge within {max_iter} iterations")
    out: dict[str, dict[str, float]] = {}
    for node_id in ids:
        col = index[node_id]
        if not connected[col]:
            out[node_id] = {other: (1.0 if other == node_id else 0.0) for other in ids}
        else:
            out[node_id] = {other: float(pi[index[other], col]) for other in ids}
    return out


def _induced_edges(graph: ContextGraph, members) -> tuple[tuple[int, int], ...]:
    index = {node_id: k for k, node_id in enumerate(members)}
    edges = []
    for a in members:
        for b in graph.neighbors(a):
            if b in index and index[a] < index[b]:
                edges.append((index[a], index[b]))
    return tuple(sorted(edges))


def _top_members(center: str, scores: dict[str, float], k_ppr: int) -> tuple[str, ...]:
    others = [(node_id, s) for node_id, s in scores.items() if node_id != center and s > 0.0]
    others.sort(key=lambda item: (-item[1], item[0]))
    return (center,) + tuple(node_id for node_id, _ in others[:k_ppr])


def extract_subgraph(
    graph: ContextGraph,
    center: str,
    k_ppr: int,
    alpha: float = 0.15,
    tol: float = 1e-10,
) -> Subgraph:
    """Center plus its top-K nodes by PPR score (ties by ascending id), with induced edges."""
    if k_ppr < 1:
        raise PprError("k_ppr must be >= 1")
    scores = ppr_scores(graph, center, alpha=alpha, tol=tol)
    members = _top_members(center, scores, k_ppr)
    return Subgraph(center=center, members=members, edges=_induced_edges(graph, members))


def extract_all_subgraphs(
    graph: ContextGraph,
    k_ppr: int,
    alpha: float = 0.15,
    tol: float = 1e-10,
    cache_path=None,
) -> dict[str, Subgraph]:
    """Subgraphs for every node, optionally cached on disk keyed by the inputs."""
    if k_ppr < 1:
        raise PprError("k_ppr must be >= 1")
    key = _cache_key(graph, k_ppr, alpha, tol)
    if cache_path is not None:
        cached = _load_cache(cache_path, key)
        if cached is not None:
            return cached
    all_scores = ppr_scores_all(graph, alpha=alpha, tol=tol)
    subgraphs: dict[str, Subgraph] = {}
    for center in graph.node_ids:
        members = _top_members(center, all_scores[center], k_ppr)
        subgraphs[center] = Subgraph(
            center=center, members=members, edges=_induced_edges(graph, members)
        )
    if cache_path is not None:
        _save_cache(cache_path, key, subgraphs)
    return subgraphs


def _cache_key(graph: ContextGraph, k_ppr: int, alpha: float, tol: float) -> str:
    payload = f"{graph.content_hash()}\x1f{k_ppr}\x1f{alpha!r}\x1f{tol!r}"
    return hashlib.sha256(payload.encode("utf-8")).hexdigest()


def _load_cache(path, key: str) -> dict[str, Subgraph] | None:
    path = Path(path)
    if not path.exists():
        return None
    subgraphs: dict[str, Subgraph] = {}
    with path.open("r", encoding="utf-8") as fh:
        header = fh.readline().strip()
        if not header:
            return None
        try:
            meta = json.loads(header)
        except json.JSONDecodeError:
            return None
        if meta.get("key") != key:
            return None
        for line in fh:
            line = line.strip()
            if not line:
                continue
            record = json.loads(line)
            subgraphs[record["center"]] = Subgraph(
                center=record["center"],
                members=tuple(record["members"]),
                edges=tuple((int(a), int(b)) for a, b in record["edges"]),
            )
    return subgraphs


def _save_cache(path, key: str, subgraphs: dict[str, Subgraph]) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8") as fh:
        fh.write(json.dumps({"key": key}) + "\n")
        for center in sorted(subgraphs):
            sg = subgraphs[center]
            fh.write(
                json.dumps(
                    {"center": sg.center, "members": list(sg.members), "edges": [list(e) for e in sg.edges]}
                )
                + "\n"
            )
