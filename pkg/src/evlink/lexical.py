"""Gestalt pattern matching: recursive matched-subsequence string similarity.

The score between two strings is ``2 * M / (len(a) + len(b))`` where ``M`` is
the total length of all matched blocks found by recursively locating the
longest common contiguous substring and recursing on the left and right
remainders. Comparison is case-insensitive; no junk filtering is applied.
"""

from __future__ import annotations


def _longest_common_block(a: str, b: str) -> tuple[int, int, int]:
    """Return (i, j, size) of the longest common contiguous substring.

    Ties are broken by the leftmost start in ``a``, then the leftmost start in
    ``b``, which fixes the recursion path deterministically.
    """
    best_i = best_j = best = 0
    prev = [0] * (len(b) + 1)
    for i in range(1, len(a) + 1):
        cur = [0] * (len(b) + 1)
        ai = a[i - 1]
        for j in range(1, len(b) + 1):
            if ai == b[j - 1]:
                k = prev[j - 1] + 1
                cur[j] = k
                # strict > keeps the first (leftmost) block among equals
                if k > best:
                    best, best_i, best_j = k, i - k, j - k
        prev = cur
    return best_i, best_j, best


def _matched(a: str, b: str) -> int:
    if not a or not b:
        return 0
    i, j, k = _longest_common_block(a, b)
    if k == 0:
        return 0
    return k + _matched(a[:i], b[:j]) + _matched(a[i + k :], b[j + k :])


def matched_length(a: str, b: str) -> int:
    """Total length of all matched blocks between ``a`` and ``b`` (case-insensitive)."""
    return _matched(a.lower(), b.lower())


def lex_similarity(m_name: str, e_name: str) -> float:
    """Similarity in [0, 1]; 1.0 iff the lowercased strings are equal.

    Both-empty input is defined as 0.0 rather than an error so that degenerate
    corpus rows score instead of crashing.
    """
    a = m_name.lower()
    b = e_name.lower()
    total = len(a) + len(b)
    if total == 0:
        return 0.0
    return 2.0 * _matched(a, b) / total
