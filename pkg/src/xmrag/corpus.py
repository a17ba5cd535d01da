"""Retrieval database: manifest loading, caption index, and feature file IO.

Feature files use the XMRG binary format:

    magic "XMRG" | version u32 LE (=1) | rows u32 LE | cols u32 LE |
    rows*cols float32 LE, row-major

The same format stores per-image vision token matrices (rows = tokens)
and text embedding batches (rows = texts). Manifest loading stat-checks
feature files but never reads payloads; payloads are read lazily.
"""

from __future__ import annotations

import json
import struct
import unicodedata
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import FeatureFormatError, ManifestError
from .text import normalize_tokens

XMRG_MAGIC = b"XMRG"
XMRG_VERSION = 1
_HEADER = struct.Struct("<4sIII")


@dataclass(frozen=True)
class ImageRecord:
    """One corpus image: caption text plus a reference to its feature file."""

    id: str
    caption: str
    feature_ref: str
    meta: dict[str, str] = field(default_factory=dict)


def read_feature_matrix(path: str | Path) -> np.ndarray:
    """Read an XMRG file into a float32 (rows, cols) array."""
    path = Path(path)
    data = path.read_bytes()
    if len(data) < _HEADER.size:
        raise FeatureFormatError(f"{path}: file shorter than XMRG header")
    magic, version, rows, cols = _HEADER.unpack_from(data)
    if magic != XMRG_MAGIC:
        raise FeatureFormatError(f"{path}: bad magic {magic!r}")
    if version != XMRG_VERSION:
        raise FeatureFormatError(f"{path}: unsupported format version {version}")
    if rows == 0 or cols == 0:
        raise FeatureFormatError(f"{path}: invalid header rows={rows} cols={cols}")
    expected = _HEADER.size + 4 * rows * cols
    if len(data) != expected:
        raise FeatureFormatError(
            f"{path}: size mismatch, header declares {rows}x{cols} "
            f"({expected} bytes) but file has {len(data)} bytes"
        )
    m = np.frombuffer(data, dtype="<f4", offset=_HEADER.size).reshape(rows, cols)
    if not np.isfinite(m).all():
        raise FeatureFormatError(f"{path}: non-finite values in payload")
    return np.ascontiguousarray(m)


def write_feature_matrix(path: str | Path, m: np.ndarray) -> None:
    """Write a matrix as XMRG; round-trips bit-exactly through read."""
    m = np.asarray(m)
    if m.ndim != 2 or m.shape[0] < 1 or m.shape[1] < 1:
        raise FeatureFormatError(f"matrix must be 2-D and non-empty, got shape {m.shape}")
    if not np.isfinite(m).all():
        raise FeatureFormatError("matrix contains non-finite values")
    rows, cols = m.shape
    payload = np.ascontiguousarray(m, dtype="<f4").tobytes()
    Path(path).write_bytes(_HEADER.pack(XMRG_MAGIC, XMRG_VERSION, rows, cols) + payload)


class FeatureStore:
    """Lazy loader for per-record feature matrices with a simple cache."""

    def __init__(self, paths: dict[str, Path]):
        self._paths = paths
        self._cache: dict[str, np.ndarray] = {}

    def get(self, record_id: str) -> np.ndarray:
        m = self._cache.get(record_id)
        if m is None:
            m = read_feature_matrix(self._paths[record_id])
            self._cache[record_id] = m
        return m


class InMemoryFeatureStore(FeatureStore):
    """Feature store backed by arrays already in memory (benchmarks, fixtures)."""

    def __init__(self, matrices: dict[str, np.ndarray]):
        super().__init__({})
        self._cache = dict(matrices)

    def get(self, record_id: str) -> np.ndarray:
        return self._cache[record_id]


@dataclass(frozen=True)
class Corpus:
    """Immutable record list with an inverted index over caption tokens."""

    records: tuple[ImageRecord, ...]
    token_index: dict[str, frozenset[int]]
    caption_tokens: tuple[tuple[str, ...], ...]
    features: FeatureStore
    strip_plurals: bool = False

    def __len__(self) -> int:
        return len(self.records)


def build_corpus(
    records: list[ImageRecord], features: FeatureStore, strip_plurals: bool = False
) -> Corpus:
    """Index records; the inverted index maps token -> record positions."""
    index: dict[str, set[int]] = {}
    caption_tokens = []
    for i, rec in enumerate(records):
        toks = normalize_tokens(rec.caption, strip_plurals=strip_plurals)
        caption_tokens.append(toks)
        for t in set(toks):
            index.setdefault(t, set()).add(i)
    return Corpus(
        records=tuple(records),
        token_index={t: frozenset(s) for t, s in index.items()},
        caption_tokens=tuple(caption_tokens),
        features=features,
        strip_plurals=strip_plurals,
    )


def load_corpus(manifest_path: str | Path, strip_plurals: bool = False) -> Corpus:
    """Load a JSON Lines manifest; feature files are stat-checked, not read."""
    manifest_path = Path(manifest_path)
    if not manifest_path.is_file():
        raise ManifestError(f"manifest not found: {manifest_path}")
    base = manifest_path.parent
    records: list[ImageRecord] = []
    paths: dict[str, Path] = {}
    seen: set[str] = set()
    with manifest_path.open("r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as e:
                raise ManifestError(f"{manifest_path}:{lineno}: malformed line: {e}") from e
            if not isinstance(obj, dict) or "id" not in obj or "feature_ref" not in obj:
                raise ManifestError(f"{manifest_path}:{lineno}: record needs id and feature_ref")
            rid = obj["id"]
            if not isinstance(rid, str) or not rid:
                raise ManifestError(f"{manifest_path}:{lineno}: id must be a non-empty string")
            if rid in seen:
                raise ManifestError(f"{manifest_path}:{lineno}: duplicate id {rid!r}")
            seen.add(rid)
            caption = obj.get("caption", "")
            if not isinstance(caption, str):
                raise ManifestError(f"{manifest_path}:{lineno}: caption must be a string")
            caption = unicodedata.normalize("NFC", caption)
            ref = Path(obj["feature_ref"])
            path = ref if ref.is_absolute() else base / ref
            if not path.is_file():
                raise ManifestError(
                    f"{manifest_path}:{lineno}: feature file missing for {rid!r}: {path}"
                )
            meta = obj.get("meta", {}) or {}
            records.append(
                ImageRecord(id=rid, caption=caption, feature_ref=str(path), meta=dict(meta))
            )
            paths[rid] = path
    return build_corpus(records, FeatureStore(paths), strip_plurals=strip_plurals)
