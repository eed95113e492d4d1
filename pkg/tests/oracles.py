"""Independent reference implementations used as test oracles.

These deliberately avoid the package's code paths: brute-force scans, dense
linear solves, and central finite differences. They exist so the fast
implementations have something slower but obviously correct to agree with.
"""

from __future__ import annotations

import numpy as np


# -- gestalt string matching -------------------------------------------------


def brute_longest_block(a: str, b: str):
    """All-pairs scan for the longest common contiguous substring.

    Ties resolve to the leftmost start in ``a``, then in ``b``.
    """
    best = (0, 0, 0)
    for i in range(len(a)):
        for j in range(len(b)):
            k = 0
            while i + k < len(a) and j + k < len(b) and a[i + k] == b[j + k]:
                k += 1
            if k > best[2]:
                best = (i, j, k)
    return best


def brute_matched_length(a: str, b: str) -> int:
    if not a or not b:
        return 0
    i, j, k = brute_longest_block(a, b)
    if k == 0:
        return 0
    return (
        k
        + brute_matched_length(a[:i], b[:j])
        + brute_matched_length(a[i + k :], b[j + k :])
    )


def brute_gestalt_ratio(a: str, b: str) -> float:
    a, b = a.lower(), b.lower()
    if not a and not b:
        return 0.0
    return 2.0 * brute_matched_length(a, b) / (len(a) + len(b))


# -- personalized pagerank ----------------------------------------------------


def dense_ppr(adjacency: np.ndarray, source: int, alpha: float) -> np.ndarray:
    """Solve (I - (1 - alpha) P^T) pi = alpha e directly."""
    n = adjacency.shape[0]
    degrees = adjacency.sum(axis=1)
    p = np.zeros_like(adjacency, dtype=float)
    nz = degrees > 0
    p[nz] = adjacency[nz] / degrees[nz, None]
    e = np.zeros(n)
    e[source] = 1.0
    if degrees[source] == 0:
        return e
    return np.linalg.solve(np.eye(n) - (1.0 - alpha) * p.T, alpha * e)


# -- finite differences --------------------------------------------------------


def central_difference(fn, x: np.ndarray, h: float = 1e-6) -> np.ndarray:
    """Central finite-difference gradient of a scalar function of a vector."""
    x = np.asarray(x, dtype=np.float64)
    grad = np.zeros_like(x)
    flat = x.reshape(-1)
    out = grad.reshape(-1)
    for idx in range(flat.size):
        orig = flat[idx]
        flat[idx] = orig + h
        f_plus = fn(x)
        flat[idx] = orig - h
        f_minus = fn(x)
        flat[idx] = orig
        out[idx] = (f_plus - f_minus) / (2.0 * h)
    return grad


def relative_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    denom = max(float(np.linalg.norm(analytic)), float(np.linalg.norm(numeric)), 1e-12)
    return float(np.linalg.norm(analytic - numeric)) / denom


# -- retrieval -----------------------------------------------------------------


def brute_topk(scores: dict[str, float], k: int) -> list[str]:
    """Full sort by (-score, id), truncated to k."""
    ranked = sorted(scores.items(), key=lambda item: (-item[1], item[0]))
    return [entity_id for entity_id, _ in ranked[:k]]
