"""Shared builders for randomized retrieval instances."""

import numpy as np

from xmrag.adapter import init_adapter_params
from xmrag.corpus import ImageRecord, InMemoryFeatureStore, build_corpus
from xmrag.query import Subquery, attach_embedding_rows, make_query


def random_instance(seed, max_n=5, max_records=200, with_features=True):
    """Corpus whose captions carry random subsets of the query phrases,
    with random dense features and a random adapter."""
    rng = np.random.default_rng(seed)
    n = int(rng.integers(1, max_n + 1))
    N = int(rng.integers(3, max_records + 1))
    d_t, d_v, L = 12, 10, 3
    phrases = [f"attr{i} item{i}" for i in range(n)]
    query = make_query(", ".join(phrases), [Subquery(text=p) for p in phrases])
    query = attach_embedding_rows(query, rng.standard_normal((n, d_t)))
    records, mats = [], {}
    for r in range(N):
        rid = f"r{r:04d}"
        k = int(rng.integers(0, n + 1))
        subset = sorted(rng.choice(n, size=k, replace=False)) if k else []
        parts = [phrases[i] for i in subset] + [f"pad{int(rng.integers(0, 50))}"]
        rng.shuffle(parts)
        records.append(ImageRecord(id=rid, caption=" ".join(parts), feature_ref=""))
        mats[rid] = rng.standard_normal((L, d_v)).astype(np.float32)
    corpus = build_corpus(records, InMemoryFeatureStore(mats))
    params = (
        init_adapter_params(d_v=d_v, d_t=d_t, d=8, heads=2, m=2, d_h=8, seed=seed)
        if with_features
        else None
    )
    return corpus, query, params, n


def write_manifest(tmp_path, entries):
    """Write feature files plus a manifest; entries are (id, caption) pairs."""
    import json

    from xmrag.corpus import write_feature_matrix

    lines = []
    rng = np.random.default_rng(0)
    for rid, caption in entries:
        fname = f"{rid}.xmrg"
        write_feature_matrix(tmp_path / fname, rng.standard_normal((2, 3)).astype(np.float32))
        lines.append(json.dumps(
            {"id": rid, "caption": caption, "feature_ref": fname, "meta": {}}
        ))
    manifest = tmp_path / "manifest.jsonl"
    manifest.write_text("\n".join(lines) + ("\n" if lines else ""), encoding="utf-8")
    return manifest
