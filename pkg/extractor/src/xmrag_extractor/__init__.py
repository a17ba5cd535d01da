"""Embedding extraction for the xmrag retrieval engine."""

from .encoders import ClipEncoder, Encoder, EncoderError, HashedEncoder, resolve_encoder
from .jobs import (
    ExtractionJob,
    ExtractionReport,
    FixtureSpec,
    embed_texts,
    export_fixture,
    extract_vision_features,
)
from .xmrg import FormatError, read_matrix, write_matrix

__version__ = "0.1.0"

__all__ = [
    "ClipEncoder",
    "Encoder",
    "EncoderError",
    "ExtractionJob",
    "ExtractionReport",
    "FixtureSpec",
    "FormatError",
    "HashedEncoder",
    "embed_texts",
    "export_fixture",
    "extract_vision_features",
    "read_matrix",
    "resolve_encoder",
    "write_matrix",
]
