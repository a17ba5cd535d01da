"""Metrics, synthetic corpus generators, and the efficiency harness."""

from __future__ import annotations

import csv
import json
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .adapter import AdapterParams, identity_passthrough_params
from .corpus import (
    Corpus,
    ImageRecord,
    InMemoryFeatureStore,
    build_corpus,
    write_feature_matrix,
)
from .dense import rank_dense
from .errors import ValidationError
from .joint import ParetoResult, joint_retrieve
from .query import Query, Subquery, attach_embedding_rows, make_query
from .sparse import nondominated_filter, nonzero_filter, satisfaction


@dataclass
class EvalReport:
    metric: str
    per_query: list[float]
    mean: float
    config: dict = field(default_factory=dict)
    counters: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "metric": self.metric,
            "per_query": self.per_query,
            "mean": self.mean,
            "config": self.config,
            "counters": self.counters,
        }

    def to_text(self) -> str:
        lines = [f"metric: {self.metric}", f"mean: {self.mean:.6f}"]
        for k, v in sorted(self.counters.items()):
            lines.append(f"{k}: {v}")
        return "\n".join(lines)


def make_report(metric: str, per_query: list[float], config=None, counters=None) -> EvalReport:
    mean = float(np.mean(per_query)) if per_query else 0.0
    return EvalReport(
        metric=metric, per_query=list(per_query), mean=mean,
        config=dict(config or {}), counters=dict(counters or {}),
    )


def recall_at_k(rankings: dict[str, list[str]], truth: dict[str, str], k: int) -> float:
    """Fraction of queries whose ground-truth id appears in the top k."""
    if k < 1:
        raise ValidationError("k must be >= 1")
    if not rankings:
        raise ValidationError("no rankings given")
    hits = 0
    for qid, ranked in rankings.items():
        if qid not in truth:
            raise ValidationError(f"missing ground truth for query {qid!r}")
        if truth[qid] in ranked[:k]:
            hits += 1
    return hits / len(rankings)


def coverage_rate(result: ParetoResult, query: Query) -> float:
    """Fraction of subqueries satisfied by the union of retrieved entries."""
    n = query.n
    covered: set[int] = set()
    for entry in result.entries:
        if len(entry.bits) != n:
            raise ValidationError("satisfaction vector length mismatch")
        covered.update(i for i, bit in enumerate(entry.bits) if bit)
    return len(covered) / n


def coverage_of_ids(corpus: Corpus, ids: list[str], query: Query) -> float:
    """Coverage of an arbitrary retrieved id list, for baseline comparison."""
    by_id = {r.id: r for r in corpus.records}
    covered: set[int] = set()
    for rid in ids:
        vec = satisfaction(by_id[rid].caption, query.texts)
        covered.update(i for i, bit in enumerate(vec) if bit)
    return len(covered) / query.n


def lexical_topk_baseline(corpus: Corpus, query: Query, k: int) -> list[str]:
    """Rank records by how many distinct query tokens their caption contains
    (bag of tokens pooled over all subqueries); ties by ascending id."""
    if k < 1:
        raise ValidationError("k must be >= 1")
    from .text import normalize_tokens

    bag: set[str] = set()
    for text in query.texts:
        bag.update(normalize_tokens(text))
    scored = []
    for idx, record in enumerate(corpus.records):
        overlap = len(bag & set(corpus.caption_tokens[idx]))
        scored.append((-overlap, record.id))
    scored.sort()
    return [rid for _, rid in scored[:k]]


# ---------------------------------------------------------------------------
# planted corpora: a known-optimal record per query

@dataclass
class PlantSpec:
    num_queries: int = 10
    n: int = 3  # subqueries per query
    N: int = 20  # records per query's corpus (1 truth + N-1 distractors)
    d_t: int = 16
    L: int = 4  # vision tokens per record, must be even
    seed: int = 0


@dataclass
class PlantedQuery:
    query: Query
    corpus: Corpus
    truth_id: str


@dataclass
class PlantedSuite:
    queries: list[PlantedQuery]
    params: AdapterParams


def _zero_mean_unit(rng: np.random.Generator, d: int) -> np.ndarray:
    """Unit vector orthogonal to the all-ones direction; layer-norm
    standardization then leaves its direction unchanged."""
    while True:
        v = rng.standard_normal(d)
        v -= v.mean()
        norm = np.linalg.norm(v)
        if norm > 1e-6:
            return v / norm


def plant_corpus(spec: PlantSpec, out_dir: str | Path | None = None) -> PlantedSuite:
    """Per-query corpora with one record constructed to be the unique
    optimum under the pass-through adapter.

    The truth record's vision tokens cancel to a zero column mean, which
    makes the pass-through adapter return each subquery embedding exactly;
    distractor token means are held away from every subquery direction so
    their similarities stay strictly below one. Truth captions contain all
    subquery phrases; distractors carry proper subsets. Deterministic per
    seed, including written bytes.
    """
    if spec.L % 2 != 0 or spec.L < 2:
        raise ValidationError("token count L must be even and >= 2")
    rng = np.random.default_rng(spec.seed)
    d = spec.d_t
    params = identity_passthrough_params(d)
    out_path = Path(out_dir) if out_dir is not None else None
    queries: list[PlantedQuery] = []
    for qi in range(spec.num_queries):
        phrases = [f"object{qi}x{i} detail{qi}x{i}" for i in range(spec.n)]
        texts = np.stack([_zero_mean_unit(rng, d) for _ in range(spec.n)])
        query = make_query(
            raw=", ".join(phrases), subqueries=[Subquery(text=p) for p in phrases]
        )
        query = attach_embedding_rows(query, texts)

        records: list[ImageRecord] = []
        matrices: dict[str, np.ndarray] = {}
        truth_id = f"q{qi:03d}_truth"
        half = rng.standard_normal((spec.L // 2, d))
        truth_feats = np.concatenate([half, -half], axis=0).astype(np.float32)
        records.append(
            ImageRecord(id=truth_id, caption=" ".join(phrases), feature_ref="", meta={})
        )
        matrices[truth_id] = truth_feats
        for di in range(spec.N - 1):
            rid = f"q{qi:03d}_d{di:03d}"
            # keep the distractor token mean away from every subquery
            # direction so no distractor similarity can reach 1
            while True:
                feats = rng.standard_normal((spec.L, d))
                mean = feats.mean(axis=0)
                mean -= mean.mean()
                norm = np.linalg.norm(mean)
                if norm < 0.3:
                    continue
                cos = np.abs(texts @ (mean / norm))
                if cos.max() < 0.95:
                    break
            subset_size = int(rng.integers(0, spec.n))  # proper subset
            chosen = list(rng.choice(spec.n, size=subset_size, replace=False))
            caption_bits = [phrases[i] for i in sorted(chosen)]
            caption_bits.append(f"filler{qi}x{di}")
            records.append(
                ImageRecord(id=rid, caption=" ".join(caption_bits), feature_ref="", meta={})
            )
            matrices[rid] = feats.astype(np.float32)

        if out_path is not None:
            qdir = out_path / f"q{qi:03d}"
            qdir.mkdir(parents=True, exist_ok=True)
            manifest_lines = []
            disk_records = []
            for rec in records:
                fpath = qdir / f"{rec.id}.xmrg"
                write_feature_matrix(fpath, matrices[rec.id])
                disk_records.append(
                    ImageRecord(id=rec.id, caption=rec.caption,
                                feature_ref=str(fpath), meta=rec.meta)
                )
                manifest_lines.append(json.dumps({
                    "id": rec.id, "caption": rec.caption,
                    "feature_ref": f"{rec.id}.xmrg", "meta": rec.meta,
                }, sort_keys=True))
            (qdir / "manifest.jsonl").write_text("\n".join(manifest_lines) + "\n",
                                                 encoding="utf-8")
            write_feature_matrix(qdir / "subqueries.xmrg", texts.astype(np.float32))
            records = disk_records
        corpus = build_corpus(records, InMemoryFeatureStore(matrices))
        queries.append(PlantedQuery(query=query, corpus=corpus, truth_id=truth_id))
    return PlantedSuite(queries=queries, params=params)


def planted_recall_at_1(suite: PlantedSuite) -> float:
    rankings = {}
    truth = {}
    for i, pq in enumerate(suite.queries):
        qid = f"q{i}"
        rankings[qid] = rank_dense(pq.corpus, pq.query, suite.params, k=1).ids
        truth[qid] = pq.truth_id
    return recall_at_k(rankings, truth, k=1)


# ---------------------------------------------------------------------------
# random lexical corpora for coverage comparisons

@dataclass
class RandomCorpusSpec:
    n: int = 4
    N: int = 40
    phrase_pool: int = 8
    seed: int = 0


def random_lexical_instance(spec: RandomCorpusSpec) -> tuple[Corpus, Query]:
    """Corpus of captions assembled from subquery phrases plus shared noise
    tokens; a few aspects are rare so single-focus retrieval misses them."""
    rng = np.random.default_rng(spec.seed)
    phrases = [f"thing{i} trait{i}" for i in range(spec.n)]
    query = make_query(", ".join(phrases), [Subquery(text=p) for p in phrases])
    popular = list(range(max(1, spec.n // 2)))
    rare = [i for i in range(spec.n) if i not in popular]
    records = []
    matrices = {}
    for ri in range(spec.N):
        rid = f"r{ri:04d}"
        parts = []
        for i in popular:
            if rng.random() < 0.5:
                parts.append(phrases[i])
        for i in rare:
            if rng.random() < 0.08:
                parts.append(phrases[i])
        # shared vocabulary inflates token overlap without adding coverage
        for _ in range(int(rng.integers(0, 4))):
            parts.append(f"noise{int(rng.integers(0, spec.phrase_pool))}")
        if not parts:
            parts.append("blank")
        rng.shuffle(parts)
        records.append(ImageRecord(id=rid, caption=" ".join(parts), feature_ref=""))
        matrices[rid] = np.zeros((2, 2), dtype=np.float32)
    corpus = build_corpus(records, InMemoryFeatureStore(matrices))
    return corpus, query


# ---------------------------------------------------------------------------
# efficiency harness

@dataclass
class BenchInstance:
    corpus: Corpus
    queries: list[Query]
    params: AdapterParams


def build_bench_instance(
    N: int, n: int = 4, num_queries: int = 30, match_rate: float = 0.025,
    d: int = 8, L: int = 2, seed: int = 0,
) -> BenchInstance:
    """Synthetic corpus sized for latency runs: captions match a query's
    subqueries at roughly match_rate, features are small in-memory blocks."""
    rng = np.random.default_rng(seed)
    pool = 50
    phrases = [f"entity{i} aspect{i}" for i in range(pool)]
    records = []
    matrices = {}
    p_phrase = match_rate * pool / n
    for ri in range(N):
        rid = f"b{ri:06d}"
        parts = [f"backdrop{int(rng.integers(0, 1000))}"]
        if rng.random() < p_phrase:
            parts.append(phrases[int(rng.integers(0, pool))])
        records.append(ImageRecord(id=rid, caption=" ".join(parts), feature_ref=""))
        matrices[rid] = rng.standard_normal((L, d)).astype(np.float32)
    corpus = build_corpus(records, InMemoryFeatureStore(matrices))
    params = identity_passthrough_params(d).astype(np.float32)
    queries = []
    for qi in range(num_queries):
        chosen = rng.choice(pool, size=n, replace=False)
        subs = [Subquery(text=phrases[int(c)]) for c in chosen]
        q = make_query(", ".join(s.text for s in subs), subs)
        embeds = np.stack([_zero_mean_unit(rng, d) for _ in range(n)])
        queries.append(attach_embedding_rows(q, embeds))
    return BenchInstance(corpus=corpus, queries=queries, params=params)


@dataclass
class BenchRow:
    mode: str
    N: int
    query_index: int
    seconds: float
    dense_forwards: int
    n_tilde: int


def run_bench_mode(instance: BenchInstance, mode: str) -> list[BenchRow]:
    """Per-query wall clock and forward counts for one retrieval mode."""
    rows = []
    N = len(instance.corpus)
    for qi, query in enumerate(instance.queries):
        t0 = time.perf_counter()
        if mode == "sparse":
            entries = nonzero_filter(instance.corpus, query.texts)
            nondominated_filter(entries)
            forwards = 0
            n_tilde = len(entries)
        elif mode == "hybrid":
            result = joint_retrieve(instance.corpus, query, instance.params)
            forwards = result.counters["dense_forwards"]
            n_tilde = result.counters["N_tilde"]
        elif mode == "dense":
            ranked = rank_dense(instance.corpus, query, instance.params, k=10)
            forwards = ranked.forward_count
            n_tilde = -1
        else:
            raise ValidationError(f"unknown bench mode {mode!r}")
        rows.append(BenchRow(
            mode=mode, N=N, query_index=qi,
            seconds=time.perf_counter() - t0,
            dense_forwards=forwards, n_tilde=n_tilde,
        ))
    return rows


def bench_retrieval(
    sizes: list[int], modes: list[str] | None = None, seed: int = 0,
    num_queries: int = 30, n: int = 4, match_rate: float = 0.025,
) -> tuple[EvalReport, list[BenchRow]]:
    """Counter assertions plus latency medians per (mode, N).

    Counters must satisfy: sparse runs zero adapter forwards, hybrid at
    most N_tilde * n, dense exactly N * n.
    """
    modes = modes or ["sparse", "hybrid", "dense"]
    all_rows: list[BenchRow] = []
    counters: dict[str, float] = {}
    for N in sizes:
        instance = build_bench_instance(
            N, n=n, num_queries=num_queries, match_rate=match_rate, seed=seed
        )
        for mode in modes:
            rows = run_bench_mode(instance, mode)
            all_rows.extend(rows)
            for row in rows:
                if row.mode == "sparse" and row.dense_forwards != 0:
                    raise ValidationError("sparse mode ran adapter forwards")
                if row.mode == "hybrid" and row.dense_forwards > row.n_tilde * n:
                    raise ValidationError("hybrid mode exceeded N_tilde * n forwards")
                if row.mode == "dense" and row.dense_forwards != N * n:
                    raise ValidationError("dense mode forward count is not N * n")
            counters[f"{mode}_median_seconds_N{N}"] = float(
                np.median([r.seconds for r in rows])
            )
            counters[f"{mode}_forwards_N{N}"] = max(r.dense_forwards for r in rows)
    report = make_report(
        "query_latency_seconds",
        [r.seconds for r in all_rows],
        config={"sizes": sizes, "modes": modes, "num_queries": num_queries,
                "n": n, "match_rate": match_rate, "seed": seed},
        counters=counters,
    )
    return report, all_rows


def write_bench_csv(path: str | Path, rows: list[BenchRow]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["mode", "N", "query_index", "seconds", "dense_forwards", "n_tilde"])
        for r in rows:
            writer.writerow([r.mode, r.N, r.query_index, f"{r.seconds:.9f}",
                             r.dense_forwards, r.n_tilde])
