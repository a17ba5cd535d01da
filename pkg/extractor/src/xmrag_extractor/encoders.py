"""Encoder backends.

"clip-vit-l14" wraps the pretrained CLIP ViT-L/14 checkpoint via
transformers: final-layer vision token embeddings (the token sequence, not
a pooled vector, since the downstream adapter cross-attends over tokens)
and projected, unit-normalized text embeddings.

"hashed-<d>" is a fully offline deterministic stand-in: features are seeded
from the SHA-256 of the input bytes, so identical inputs always produce
byte-identical outputs and no ML runtime is needed. It backs fixtures and
CI; it carries no semantics.
"""

from __future__ import annotations

import hashlib
import unicodedata
from dataclasses import dataclass
from pathlib import Path

import numpy as np


class EncoderError(RuntimeError):
    pass


@dataclass(frozen=True)
class EncoderInfo:
    name: str
    vision_dim: int
    text_dim: int
    vision_tokens: int  # tokens per image (informational for hashed)


class Encoder:
    info: EncoderInfo

    def encode_image(self, path: str | Path) -> np.ndarray:
        """(L, vision_dim) float32 token matrix for one image."""
        raise NotImplementedError

    def encode_texts(self, texts: list[str], batch_size: int = 16) -> np.ndarray:
        """(len(texts), text_dim) float32 matrix, rows L2-normalized."""
        raise NotImplementedError


def _seeded_rng(tag: bytes, payload: bytes) -> np.random.Generator:
    digest = hashlib.sha256(tag + payload).digest()
    return np.random.default_rng(np.frombuffer(digest, dtype=np.uint64))


class HashedEncoder(Encoder):
    def __init__(self, dim: int = 64, tokens: int = 16):
        self.info = EncoderInfo(
            name=f"hashed-{dim}", vision_dim=dim, text_dim=dim, vision_tokens=tokens
        )

    def encode_image(self, path: str | Path) -> np.ndarray:
        path = Path(path)
        try:
            payload = path.read_bytes()
        except OSError as e:
            raise EncoderError(f"unreadable image {path}: {e}") from e
        rng = _seeded_rng(b"vision:", payload)
        tokens = rng.standard_normal((self.info.vision_tokens, self.info.vision_dim))
        return tokens.astype(np.float32)

    def encode_texts(self, texts: list[str], batch_size: int = 16) -> np.ndarray:
        rows = []
        for text in texts:
            canon = unicodedata.normalize("NFC", text).encode("utf-8")
            rng = _seeded_rng(b"text:", canon)
            v = rng.standard_normal(self.info.text_dim)
            rows.append(v / np.linalg.norm(v))
        return np.stack(rows).astype(np.float32)


class ClipEncoder(Encoder):
    """Pretrained CLIP backend; requires the [clip] extra and model weights."""

    def __init__(self, hf_id: str = "openai/clip-vit-large-patch14", device: str = "cpu"):
        try:
            import torch
            from transformers import CLIPModel, CLIPProcessor
        except ImportError as e:
            raise EncoderError(
                "the clip backend needs the [clip] extra (torch, transformers, Pillow)"
            ) from e
        try:
            self._model = CLIPModel.from_pretrained(hf_id).to(device).eval()
            self._processor = CLIPProcessor.from_pretrained(hf_id)
        except Exception as e:
            raise EncoderError(f"cannot load model {hf_id!r}: {e}") from e
        self._torch = torch
        self._device = device
        cfg = self._model.config
        self.info = EncoderInfo(
            name=hf_id,
            vision_dim=cfg.vision_config.hidden_size,
            text_dim=cfg.projection_dim,
            vision_tokens=(cfg.vision_config.image_size // cfg.vision_config.patch_size) ** 2 + 1,
        )

    def encode_image(self, path: str | Path) -> np.ndarray:
        from PIL import Image

        try:
            image = Image.open(path).convert("RGB")
        except OSError as e:
            raise EncoderError(f"unreadable image {path}: {e}") from e
        inputs = self._processor(images=image, return_tensors="pt").to(self._device)
        with self._torch.no_grad():
            out = self._model.vision_model(**inputs)
        return out.last_hidden_state[0].cpu().numpy().astype(np.float32)

    def encode_texts(self, texts: list[str], batch_size: int = 16) -> np.ndarray:
        chunks = []
        with self._torch.no_grad():
            for start in range(0, len(texts), batch_size):
                batch = texts[start : start + batch_size]
                inputs = self._processor(
                    text=batch, return_tensors="pt", padding=True, truncation=True
                ).to(self._device)
                feats = self._model.get_text_features(**inputs)
                feats = feats / feats.norm(dim=-1, keepdim=True)
                chunks.append(feats.cpu().numpy())
        return np.concatenate(chunks).astype(np.float32)


_HASHED_PREFIX = "hashed-"
_CLIP_ALIASES = {
    "CLIP ViT-L/14": "openai/clip-vit-large-patch14",
    "clip-vit-l14": "openai/clip-vit-large-patch14",
}


def resolve_encoder(model_id: str, device: str = "cpu") -> Encoder:
    """Map a model identifier to a backend instance."""
    if model_id.startswith(_HASHED_PREFIX):
        try:
            dim = int(model_id[len(_HASHED_PREFIX):])
        except ValueError as e:
            raise EncoderError(f"bad hashed encoder id {model_id!r}") from e
        return HashedEncoder(dim=dim)
    hf_id = _CLIP_ALIASES.get(model_id, model_id)
    return ClipEncoder(hf_id=hf_id, device=device)
