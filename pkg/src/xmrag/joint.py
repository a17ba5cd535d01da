"""Multi-objective joint retrieval over the lexical-match candidate set.

A weight grid over the simplex scalarizes the per-subquery satisfaction
bits against the dense aggregate score; the union of per-weight argmaxes
is the retrieved set. A brute-force filter over satisfaction vectors
(pareto_oracle) serves as the independent correctness oracle.
"""

from __future__ import annotations

import itertools
import time
from dataclasses import dataclass, field

import numpy as np

from .adapter import AdapterParams
from .corpus import Corpus
from .dense import DenseScore, SubdimEmbedder
from .errors import ValidationError
from .query import Query
from .sparse import nondominated_filter, nonzero_filter, satisfaction

SUPPORT_EPS = 1e-3

COMPOSITION = "composition"
SUPPORT = "support"


@dataclass(frozen=True)
class WeightVector:
    alpha: tuple[float, ...]
    kind: str = COMPOSITION

    def __post_init__(self):
        if any(a <= 0 for a in self.alpha):
            raise ValidationError("weights must be strictly positive")
        if abs(sum(self.alpha) - 1.0) > 1e-9:
            raise ValidationError("weights must sum to 1")

    @property
    def min_weight(self) -> float:
        return min(self.alpha)


def simplex_grid(n: int, m: int) -> list[WeightVector]:
    """Weight vectors c/m with integer c >= 1 summing to m, plus one
    support-concentrated vector per non-empty proper subquery subset
    ((1-eps)/|T| inside the subset, eps/(n-|T|) outside).

    The support vectors guarantee that every satisfaction pattern can win
    some grid point; they are refinement probes, evaluated in the
    sparse-dominant limit, and do not enter the trade-off bound.
    """
    if n < 1:
        raise ValidationError("need at least one subquery")
    if m < n:
        raise ValidationError(f"grid resolution {m} must be >= subquery count {n}")
    vectors: list[WeightVector] = []
    seen: set[tuple[float, ...]] = set()
    for cuts in itertools.combinations(range(1, m), n - 1):
        bounds = (0,) + cuts + (m,)
        alpha = tuple((bounds[i + 1] - bounds[i]) / m for i in range(n))
        if alpha not in seen:
            seen.add(alpha)
            vectors.append(WeightVector(alpha=alpha, kind=COMPOSITION))
    for size in range(1, n):
        for subset in itertools.combinations(range(n), size):
            inside = (1.0 - SUPPORT_EPS) / size
            outside = SUPPORT_EPS / (n - size)
            alpha = tuple(inside if i in subset else outside for i in range(n))
            if alpha not in seen:
                seen.add(alpha)
                vectors.append(WeightVector(alpha=alpha, kind=SUPPORT))
    return vectors


@dataclass(frozen=True)
class BetaBound:
    tight: float
    loose: float
    delta_min: float
    c_max: float


def beta_bound(grid: list[WeightVector], dtilde_score_totals=None) -> BetaBound:
    """Largest dense-term weight that cannot override a sparse dominance gap.

    delta_min is the smallest weight over the primary (composition) grid;
    support vectors are excluded because they are evaluated in the
    sparse-dominant limit. The tight bound divides by the largest observed
    per-candidate similarity sum, the loose bound by its ceiling n.
    """
    if not grid:
        raise ValidationError("grid must be non-empty")
    primary = [w for w in grid if w.kind == COMPOSITION] or list(grid)
    delta_min = min(w.min_weight for w in primary)
    n = len(grid[0].alpha)
    loose = delta_min / n
    c_max = 0.0
    if dtilde_score_totals is not None:
        totals = np.asarray(list(dtilde_score_totals), dtype=np.float64)
        if totals.size:
            c_max = float(totals.max())
    tight = delta_min / c_max if c_max > 0 else loose
    return BetaBound(tight=tight, loose=loose, delta_min=delta_min, c_max=c_max)


Candidate = tuple[str, np.ndarray, DenseScore]  # (record id, bits, dense score)


def scalarized_argmax(dtilde: list[Candidate], alpha: WeightVector, beta: float) -> str:
    """Record id maximizing sum(alpha_i * s_i) + beta * n * aggregate.

    Ties break by higher dense aggregate, then ascending id.
    """
    if not dtilde:
        raise ValidationError("candidate set is empty")
    if beta <= 0:
        raise ValidationError("beta must be positive")
    n = len(alpha.alpha)
    a = np.asarray(alpha.alpha, dtype=np.float64)
    best: tuple[float, float, str] | None = None
    best_id = None
    for rid, bits, dense in dtilde:
        if len(bits) != n:
            raise ValidationError("satisfaction vector length mismatch")
        f = float(a @ np.asarray(bits, dtype=np.float64)) + beta * n * dense.aggregate
        key = (-f, -dense.aggregate, rid)
        if best is None or key < best:
            best = key
            best_id = rid
    return best_id


@dataclass(frozen=True)
class ParetoEntry:
    record_id: str
    bits: tuple[int, ...]
    dense: DenseScore
    f_value: float
    alpha: tuple[float, ...]


@dataclass
class ParetoResult:
    entries: list[ParetoEntry]
    beta: float
    beta_max_loose: float
    beta_max_tight: float
    grid_size: int
    counters: dict = field(default_factory=dict)

    def vector_id_set(self) -> set[tuple[tuple[int, ...], str]]:
        return {(e.bits, e.record_id) for e in self.entries}

    def vector_set(self) -> set[tuple[int, ...]]:
        return {e.bits for e in self.entries}


def _zero_dense(n: int) -> DenseScore:
    return DenseScore(per_subquery=tuple([0.0] * n), aggregate=0.0)


def _dense_scores_for(
    corpus: Corpus,
    query: Query,
    params: AdapterParams | None,
    indices: list[int],
    jobs: int = 1,
) -> tuple[dict[int, DenseScore], int]:
    """Clamped per-subquery similarities for the given records only."""
    n = query.n
    if params is None or not query.has_embeddings():
        return {i: _zero_dense(n) for i in indices}, 0
    embedder = SubdimEmbedder(params, corpus, jobs=jobs)
    sims = np.zeros((len(indices), n), dtype=np.float64)
    texts = [s.embedding for s in query.subqueries]
    for i, t in enumerate(texts):
        vs = embedder.embed_many(indices, i, t)
        sims[:, i] = np.maximum(0.0, vs.astype(np.float64) @ np.asarray(t, dtype=np.float64))
    scores = {}
    for row, idx in enumerate(indices):
        per = tuple(float(x) for x in sims[row])
        total = 0.0
        for s in per:
            total += s
        scores[idx] = DenseScore(per_subquery=per, aggregate=total / n)
    return scores, embedder.forward_count


def joint_retrieve(
    corpus: Corpus,
    query: Query,
    params: AdapterParams | None = None,
    beta: float | None = None,
    m_resolution: int = 10,
    jobs: int = 1,
) -> ParetoResult:
    """Hybrid retrieval: lexical filter, then grid scalarization with dense
    scores computed only for the filtered candidates.

    An empty candidate set (no caption matches any subquery) is a valid
    empty result, not an error. Per grid point the dense weight is capped
    at 0.9 * min(alpha)/n so a dominated candidate can never out-score a
    dominating one, which keeps the result equal to the brute-force
    non-dominated set for every beta below the loose bound.
    """
    n = query.n
    grid = simplex_grid(n, max(m_resolution, n))
    bound = beta_bound(grid)
    if beta is None:
        beta = 0.9 * bound.loose
    if beta <= 0:
        raise ValidationError("beta must be positive")

    t0 = time.perf_counter()
    entries = nonzero_filter(corpus, query.texts)
    sparse_seconds = time.perf_counter() - t0
    counters = {
        "N": len(corpus),
        "N_tilde": len(entries),
        "K": len(grid),
        "dense_forwards": 0,
        "sparse_micros": int(sparse_seconds * 1e6),
        "dense_micros": 0,
    }
    if not entries:
        return ParetoResult(
            entries=[], beta=beta, beta_max_loose=bound.loose,
            beta_max_tight=bound.tight, grid_size=len(grid), counters=counters,
        )

    t1 = time.perf_counter()
    indices = [idx for idx, _ in entries]
    dense_map, forwards = _dense_scores_for(corpus, query, params, indices, jobs=jobs)
    counters["dense_forwards"] = forwards
    counters["dense_micros"] = int((time.perf_counter() - t1) * 1e6)

    dtilde: list[Candidate] = [
        (corpus.records[idx].id, bits, dense_map[idx]) for idx, bits in entries
    ]
    bound = beta_bound(grid, (c[2].total for c in dtilde))

    # candidates in tie-preference order (higher aggregate, then id) so a
    # first-maximum argmax reproduces the scalarized_argmax tie rules
    pref = sorted(range(len(dtilde)), key=lambda i: (-dtilde[i][2].aggregate, dtilde[i][0]))
    bits_mat = np.asarray([dtilde[i][1] for i in pref], dtype=np.float64)
    aggs = np.asarray([dtilde[i][2].aggregate for i in pref], dtype=np.float64)
    alphas = np.asarray([w.alpha for w in grid], dtype=np.float64)
    beta_effs = np.minimum(beta, 0.9 * alphas.min(axis=1) / n)
    f_matrix = alphas @ bits_mat.T + (beta_effs * n)[:, None] * aggs[None, :]
    winners = np.argmax(f_matrix, axis=1)

    chosen: dict[tuple[int, ...], ParetoEntry] = {}
    for gi, w in enumerate(grid):
        rid, bits, dense = dtilde[pref[winners[gi]]]
        key = tuple(int(x) for x in bits)
        if key not in chosen:
            chosen[key] = ParetoEntry(
                record_id=rid, bits=key, dense=dense,
                f_value=float(f_matrix[gi, winners[gi]]), alpha=w.alpha,
            )
    ordered = sorted(
        chosen.values(), key=lambda e: (-sum(e.bits), -e.dense.aggregate, e.record_id)
    )
    return ParetoResult(
        entries=ordered, beta=beta, beta_max_loose=bound.loose,
        beta_max_tight=bound.tight, grid_size=len(grid), counters=counters,
    )


def pareto_oracle(
    corpus: Corpus,
    query: Query,
    params: AdapterParams | None = None,
) -> ParetoResult:
    """Definition-based reference: full scan, pairwise dominance filter,
    dense argmax per surviving satisfaction vector. No grid, no beta."""
    n = query.n
    scan = []
    for idx in range(len(corpus)):
        vec = satisfaction(corpus.records[idx].caption, query.texts,
                           strip_plurals=corpus.strip_plurals)
        if vec.any():
            scan.append((idx, vec))
    counters = {"N": len(corpus), "N_tilde": len(scan), "K": 0,
                "dense_forwards": 0, "sparse_micros": 0, "dense_micros": 0}
    if not scan:
        return ParetoResult(entries=[], beta=0.0, beta_max_loose=0.0,
                            beta_max_tight=0.0, grid_size=0, counters=counters)
    survivors = nondominated_filter(scan)
    indices = [idx for idx, _ in survivors]
    dense_map, forwards = _dense_scores_for(corpus, query, params, indices)
    counters["dense_forwards"] = forwards
    groups: dict[tuple[int, ...], list[int]] = {}
    for idx, vec in survivors:
        groups.setdefault(tuple(int(x) for x in vec), []).append(idx)
    entries = []
    for key, members in groups.items():
        best = min(
            members,
            key=lambda i: (-dense_map[i].aggregate, corpus.records[i].id),
        )
        entries.append(
            ParetoEntry(
                record_id=corpus.records[best].id, bits=key,
                dense=dense_map[best], f_value=0.0, alpha=(),
            )
        )
    entries.sort(key=lambda e: (-sum(e.bits), -e.dense.aggregate, e.record_id))
    return ParetoResult(entries=entries, beta=0.0, beta_max_loose=0.0,
                        beta_max_tight=0.0, grid_size=0, counters=counters)


def report_dict(result: ParetoResult, query: Query) -> dict:
    """Retrieval report in the documented JSON shape."""
    return {
        "query": query.raw,
        "subqueries": query.texts,
        "beta": result.beta,
        "beta_max": result.beta_max_loose,
        "grid_size": result.grid_size,
        "entries": [
            {
                "id": e.record_id,
                "s": list(e.bits),
                "per_subquery_sims": list(e.dense.per_subquery),
                "aggregate": e.dense.aggregate,
                "F": e.f_value,
                "alpha": list(e.alpha),
            }
            for e in result.entries
        ],
        "counters": dict(result.counters),
    }
