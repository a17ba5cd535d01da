"""Lexical satisfaction vectors, dominance, and the candidate filters.

A caption satisfies a subquery when the subquery's normalized token
sequence occurs contiguously in the caption's normalized token sequence
(phrase match, not character substring).
"""

from __future__ import annotations

import numpy as np

from .corpus import Corpus
from .errors import ValidationError
from .text import contains_phrase, normalize_tokens


def satisfaction(caption: str, subqueries: list[str], strip_plurals: bool = False) -> np.ndarray:
    """Binary vector: bit i set iff the caption contains subquery i."""
    if not subqueries:
        raise ValidationError("subqueries must be non-empty")
    cap = normalize_tokens(caption, strip_plurals=strip_plurals)
    return np.array(
        [
            1 if contains_phrase(cap, normalize_tokens(q, strip_plurals=strip_plurals)) else 0
            for q in subqueries
        ],
        dtype=np.int8,
    )


def dominates(a: np.ndarray, b: np.ndarray) -> bool:
    """True iff a >= b everywhere and a > b somewhere."""
    a = np.asarray(a)
    b = np.asarray(b)
    if a.shape != b.shape:
        raise ValidationError(f"vector length mismatch: {a.shape} vs {b.shape}")
    return bool(np.all(a >= b) and np.any(a > b))


def nonzero_filter(
    corpus: Corpus, subqueries: list[str]
) -> list[tuple[int, np.ndarray]]:
    """Records satisfying at least one subquery, via the inverted index.

    Feature files are never touched. Returns (record index, vector) pairs
    in record order.
    """
    n = len(subqueries)
    bits: dict[int, np.ndarray] = {}
    for i, q in enumerate(subqueries):
        toks = normalize_tokens(q, strip_plurals=corpus.strip_plurals)
        if not toks:
            continue
        postings = [corpus.token_index.get(t) for t in toks]
        if any(p is None for p in postings):
            continue
        candidates = frozenset.intersection(*postings)
        for idx in candidates:
            if contains_phrase(corpus.caption_tokens[idx], toks):
                vec = bits.get(idx)
                if vec is None:
                    vec = np.zeros(n, dtype=np.int8)
                    bits[idx] = vec
                vec[i] = 1
    return [(idx, bits[idx]) for idx in sorted(bits)]


def nonzero_filter_scan(
    corpus: Corpus, subqueries: list[str]
) -> list[tuple[int, np.ndarray]]:
    """Naive full-scan equivalent of nonzero_filter; the test oracle."""
    out = []
    for idx in range(len(corpus)):
        vec = satisfaction(corpus.records[idx].caption, subqueries,
                           strip_plurals=corpus.strip_plurals)
        if vec.any():
            out.append((idx, vec))
    return out


def nondominated_filter(
    entries: list[tuple[int, np.ndarray]]
) -> list[tuple[int, np.ndarray]]:
    """Keep entries whose vectors no other entry dominates.

    Entries with identical vectors are all kept (no strict improvement).
    Pairwise comparison runs over distinct vectors only.
    """
    if not entries:
        return []
    lengths = {len(v) for _, v in entries}
    if len(lengths) != 1:
        raise ValidationError("satisfaction vectors differ in length")
    distinct: dict[tuple[int, ...], np.ndarray] = {}
    for _, v in entries:
        distinct.setdefault(tuple(int(x) for x in v), np.asarray(v))
    vecs = list(distinct.values())
    keep_keys = set()
    for key, v in distinct.items():
        if not any(dominates(w, v) for w in vecs):
            keep_keys.add(key)
    return [(i, v) for i, v in entries if tuple(int(x) for x in v) in keep_keys]
