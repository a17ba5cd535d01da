"""Extraction jobs: vision features per image, text embedding batches, and
synthetic fixture export, all in the engine's XMRG format with JSON Lines
manifest fragments."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .encoders import Encoder, EncoderError, resolve_encoder
from .xmrg import write_matrix


@dataclass
class ExtractionJob:
    model_id: str = "CLIP ViT-L/14"
    out_dir: str | Path = "features"
    batch_size: int = 16
    device: str = "cpu"
    captions: dict[str, str] = field(default_factory=dict)  # image stem -> caption

    def encoder(self) -> Encoder:
        return resolve_encoder(self.model_id, device=self.device)


@dataclass
class ExtractionReport:
    written: list[str]
    skipped: list[tuple[str, str]]
    manifest_path: str


def extract_vision_features(
    image_paths: list[str | Path], job: ExtractionJob, encoder: Encoder | None = None
) -> ExtractionReport:
    """One XMRG token matrix per image plus a manifest fragment.

    Unreadable images are skipped and reported, not fatal. Re-running on
    identical inputs produces byte-identical files (deterministic backends)."""
    encoder = encoder or job.encoder()
    out_dir = Path(job.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    written: list[str] = []
    skipped: list[tuple[str, str]] = []
    manifest_lines: list[str] = []
    for path in image_paths:
        path = Path(path)
        stem = path.stem
        try:
            tokens = encoder.encode_image(path)
        except EncoderError as e:
            skipped.append((str(path), str(e)))
            continue
        feature_name = f"{stem}.xmrg"
        write_matrix(out_dir / feature_name, tokens)
        manifest_lines.append(json.dumps({
            "id": stem,
            "caption": job.captions.get(stem, ""),
            "feature_ref": feature_name,
            "meta": {"model": encoder.info.name, "source": str(path)},
        }, sort_keys=True))
        written.append(feature_name)
    manifest_path = out_dir / "manifest.jsonl"
    manifest_path.write_text(
        "\n".join(manifest_lines) + ("\n" if manifest_lines else ""), encoding="utf-8"
    )
    return ExtractionReport(
        written=written, skipped=skipped, manifest_path=str(manifest_path)
    )


def embed_texts(
    texts: list[str], job: ExtractionJob, out_file: str | Path,
    encoder: Encoder | None = None,
) -> str:
    """Single XMRG file, one unit-norm embedding row per input text, in order."""
    if not texts:
        raise ValueError("no texts to embed")
    encoder = encoder or job.encoder()
    rows = encoder.encode_texts(texts, batch_size=job.batch_size)
    norms = np.linalg.norm(rows.astype(np.float64), axis=1, keepdims=True)
    rows = (rows / norms).astype(np.float32)
    out_file = Path(out_file)
    out_file.parent.mkdir(parents=True, exist_ok=True)
    write_matrix(out_file, rows)
    return str(out_file)


@dataclass
class FixtureSpec:
    num_queries: int = 2
    subqueries: int = 3
    records: int = 8  # per query: 1 planted optimum + distractors
    dim: int = 16
    tokens: int = 4  # vision tokens per record, even
    seed: int = 0


def _zero_mean_unit(rng: np.random.Generator, d: int) -> np.ndarray:
    while True:
        v = rng.standard_normal(d)
        v -= v.mean()
        n = np.linalg.norm(v)
        if n > 1e-6:
            return v / n


def export_fixture(spec: FixtureSpec, out_dir: str | Path) -> list[str]:
    """Synthetic per-query corpora matching the engine's planted recipe.

    Per query: subquery embeddings are zero-mean unit rows; the planted
    record's vision tokens cancel to a zero column mean and its caption
    contains every subquery phrase; distractor token means stay away from
    all subquery directions and captions carry proper phrase subsets.
    Deterministic per seed, byte for byte. Needs no ML runtime.
    """
    if spec.tokens % 2 != 0 or spec.tokens < 2:
        raise ValueError("token count must be even and >= 2")
    rng = np.random.default_rng(spec.seed)
    out_dir = Path(out_dir)
    files: list[str] = []
    for qi in range(spec.num_queries):
        qdir = out_dir / f"q{qi:03d}"
        qdir.mkdir(parents=True, exist_ok=True)
        phrases = [f"object{qi}x{i} detail{qi}x{i}" for i in range(spec.subqueries)]
        texts = np.stack([_zero_mean_unit(rng, spec.dim) for _ in range(spec.subqueries)])
        write_matrix(qdir / "subqueries.xmrg", texts.astype(np.float32))
        files.append(str(qdir / "subqueries.xmrg"))
        (qdir / "query.json").write_text(json.dumps({
            "raw": ", ".join(phrases), "subqueries": phrases,
            "truth_id": f"q{qi:03d}_truth",
        }, indent=2, sort_keys=True) + "\n", encoding="utf-8")

        manifest_lines = []

        def emit(rid: str, caption: str, matrix: np.ndarray) -> None:
            name = f"{rid}.xmrg"
            write_matrix(qdir / name, matrix.astype(np.float32))
            files.append(str(qdir / name))
            manifest_lines.append(json.dumps({
                "id": rid, "caption": caption, "feature_ref": name, "meta": {},
            }, sort_keys=True))

        half = rng.standard_normal((spec.tokens // 2, spec.dim))
        emit(f"q{qi:03d}_truth", " ".join(phrases), np.concatenate([half, -half]))
        for di in range(spec.records - 1):
            while True:
                feats = rng.standard_normal((spec.tokens, spec.dim))
                mean = feats.mean(axis=0)
                mean -= mean.mean()
                norm = np.linalg.norm(mean)
                if norm < 0.3:
                    continue
                if np.abs(texts @ (mean / norm)).max() < 0.95:
                    break
            subset = int(rng.integers(0, spec.subqueries))
            chosen = sorted(rng.choice(spec.subqueries, size=subset, replace=False))
            caption = " ".join([phrases[i] for i in chosen] + [f"filler{qi}x{di}"])
            emit(f"q{qi:03d}_d{di:03d}", caption, feats)
        manifest = qdir / "manifest.jsonl"
        manifest.write_text("\n".join(manifest_lines) + "\n", encoding="utf-8")
        files.append(str(manifest))
    return files
