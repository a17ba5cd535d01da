"""Per-subquery dense scoring and dense-only ranking.

Cosine similarities are clamped below at zero so score sums over the
subqueries stay in [0, n], which the trade-off bound relies on.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .adapter import AdapterParams, adapter_forward, adapter_forward_batch
from .corpus import Corpus
from .errors import ValidationError
from .query import Query

UNIT_TOL = 1e-4


@dataclass(frozen=True)
class DenseScore:
    per_subquery: tuple[float, ...]
    aggregate: float

    @property
    def total(self) -> float:
        """Sum over subqueries (n times the aggregate mean)."""
        return float(sum(self.per_subquery))


def subquery_similarity(v: np.ndarray, t: np.ndarray) -> float:
    """Clamped cosine max(0, <v, t>) of two unit vectors."""
    v = np.asarray(v, dtype=np.float64)
    t = np.asarray(t, dtype=np.float64)
    if v.shape != t.shape:
        raise ValidationError(f"dimension mismatch: {v.shape} vs {t.shape}")
    for name, x in (("left", v), ("right", t)):
        norm = float(np.linalg.norm(x))
        if abs(norm - 1.0) > UNIT_TOL:
            raise ValidationError(f"{name} vector is not unit norm (|{norm} - 1| > {UNIT_TOL})")
    return max(0.0, float(v @ t))


class SubdimEmbedder:
    """Adapter wrapper that memoizes per-(record, subquery) embeddings and
    counts forward invocations. One instance serves one query."""

    def __init__(self, params: AdapterParams, corpus: Corpus, jobs: int = 1):
        self.params = params
        self.corpus = corpus
        self.jobs = max(1, jobs)
        self.forward_count = 0
        self._memo: dict[tuple[int, int], np.ndarray] = {}

    def embed(self, record_index: int, subquery_index: int, t: np.ndarray) -> np.ndarray:
        key = (record_index, subquery_index)
        v = self._memo.get(key)
        if v is None:
            feats = self.corpus.features.get(self.corpus.records[record_index].id)
            v = adapter_forward(self.params, feats, t)
            self.forward_count += 1
            self._memo[key] = v
        return v

    def embed_many(
        self, record_indices: list[int], subquery_index: int, t: np.ndarray
    ) -> np.ndarray:
        """Batch embed; groups records by token count so stacking is legal."""
        missing = [i for i in record_indices if (i, subquery_index) not in self._memo]
        if missing:
            by_len: dict[int, list[int]] = {}
            feats = {}
            for i in missing:
                f = self.corpus.features.get(self.corpus.records[i].id)
                feats[i] = f
                by_len.setdefault(f.shape[0], []).append(i)
            for group in by_len.values():
                stack = np.stack([feats[i] for i in group])
                texts = np.broadcast_to(t, (len(group), t.shape[0]))
                if self.jobs > 1 and len(group) > 256:
                    vs = self._embed_stack_parallel(stack, texts)
                else:
                    vs = adapter_forward_batch(self.params, stack, texts)
                self.forward_count += len(group)
                for i, v in zip(group, vs):
                    self._memo[(i, subquery_index)] = v
        return np.stack([self._memo[(i, subquery_index)] for i in record_indices])

    def _embed_stack_parallel(self, stack: np.ndarray, texts: np.ndarray) -> np.ndarray:
        from concurrent.futures import ThreadPoolExecutor

        chunks = np.array_split(np.arange(stack.shape[0]), self.jobs)
        chunks = [c for c in chunks if c.size]
        with ThreadPoolExecutor(max_workers=self.jobs) as pool:
            parts = list(
                pool.map(
                    lambda c: adapter_forward_batch(self.params, stack[c], texts[c]),
                    chunks,
                )
            )
        return np.concatenate(parts, axis=0)


def _require_embeddings(query: Query) -> np.ndarray:
    if not query.has_embeddings():
        raise ValidationError("query subqueries carry no embeddings")
    return np.stack([s.embedding for s in query.subqueries])


def dense_score_by_index(embedder: SubdimEmbedder, record_index: int, query: Query) -> DenseScore:
    texts = _require_embeddings(query)
    sims = []
    for i, t in enumerate(texts):
        v = embedder.embed(record_index, i, t)
        sims.append(subquery_similarity(v, t))
    total = 0.0
    for s in sims:  # fixed left-to-right order for reproducible ties
        total += s
    return DenseScore(per_subquery=tuple(sims), aggregate=total / len(sims))


def dense_score(
    record_id: str, query: Query, params: AdapterParams, corpus: Corpus
) -> DenseScore:
    """Score one record against every subquery of the query."""
    index = next(
        (i for i, r in enumerate(corpus.records) if r.id == record_id), None
    )
    if index is None:
        raise ValidationError(f"record {record_id!r} not in corpus")
    return dense_score_by_index(SubdimEmbedder(params, corpus), index, query)


@dataclass
class RankResult:
    ids: list[str]
    scores: list[float]
    forward_count: int


def rank_dense(
    corpus: Corpus, query: Query, params: AdapterParams, k: int, jobs: int = 1
) -> RankResult:
    """Top-k record ids by mean clamped cosine over subqueries.

    Scores every record (N * n adapter forwards); ties break by ascending
    record id.
    """
    if k < 1:
        raise ValidationError("k must be >= 1")
    if len(corpus) == 0:
        raise ValidationError("corpus is empty")
    texts = _require_embeddings(query)
    embedder = SubdimEmbedder(params, corpus, jobs=jobs)
    all_indices = list(range(len(corpus)))
    n = len(texts)
    sims = np.zeros((len(corpus), n), dtype=np.float64)
    for i, t in enumerate(texts):
        vs = embedder.embed_many(all_indices, i, t)
        sims[:, i] = np.maximum(0.0, vs.astype(np.float64) @ np.asarray(t, dtype=np.float64))
    aggregates = [float(sum(row) / n) for row in sims]
    order = sorted(all_indices, key=lambda j: (-aggregates[j], corpus.records[j].id))
    top = order[: min(k, len(corpus))]
    return RankResult(
        ids=[corpus.records[j].id for j in top],
        scores=[aggregates[j] for j in top],
        forward_count=embedder.forward_count,
    )
