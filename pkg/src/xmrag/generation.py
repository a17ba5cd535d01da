"""Subquery-aware generation prompts and the image-generation client.

Each retrieved image contributes a clause naming exactly the subqueries
its caption satisfies, so the external generator is told which aspects
of which reference image to use.
"""

from __future__ import annotations

import base64
import json
import logging
import os
import time
from dataclasses import dataclass
from pathlib import Path

from .errors import ServiceError, ValidationError
from .joint import ParetoEntry, ParetoResult
from .query import Query

log = logging.getLogger(__name__)

MLLM_API_KEY_ENV = "XMRAG_MLLM_API_KEY"


def _ordinal(i: int) -> str:
    if 10 <= i % 100 <= 20:
        suffix = "th"
    else:
        suffix = {1: "st", 2: "nd", 3: "rd"}.get(i % 10, "th")
    return f"{i}{suffix}"


def satisfied_subqueries(entry: ParetoEntry, query: Query) -> list[str]:
    """Subquery texts the entry's caption actually satisfies, in query order."""
    if len(entry.bits) != query.n:
        raise ValidationError(
            f"satisfaction vector length {len(entry.bits)} != query size {query.n}"
        )
    return [sq.text for bit, sq in zip(entry.bits, query.subqueries) if bit]


@dataclass(frozen=True)
class PromptClause:
    image_ref: str
    ordinal: int
    satisfied: tuple[str, ...]


@dataclass(frozen=True)
class GenerationPrompt:
    query_text: str
    clauses: tuple[PromptClause, ...]
    rendered: str


def build_prompt(query: Query, result: ParetoResult) -> GenerationPrompt:
    """Render the full generation prompt.

    Format: the raw query, then per retrieved image an attachment marker
    and the clause "Use only [<satisfied, comma-joined>] in [the <r>th
    retrieved image].". Entries satisfying nothing are dropped; ordinals
    count the surviving entries from 1.
    """
    if not result.entries:
        raise ValidationError("cannot build a prompt from an empty result")
    clauses: list[PromptClause] = []
    parts: list[str] = [query.raw]
    ordinal = 0
    for entry in result.entries:
        satisfied = satisfied_subqueries(entry, query)
        if not satisfied:
            continue
        ordinal += 1
        clauses.append(
            PromptClause(image_ref=entry.record_id, ordinal=ordinal, satisfied=tuple(satisfied))
        )
        parts.append(f"<{entry.record_id}>")
        parts.append(
            f"Use only [{', '.join(satisfied)}] in [the {_ordinal(ordinal)} retrieved image]."
        )
    if not clauses:
        raise ValidationError("no entry satisfies any subquery; prompt would be empty")
    return GenerationPrompt(
        query_text=query.raw, clauses=tuple(clauses), rendered=" ".join(parts)
    )


@dataclass
class MllmConfig:
    endpoint: str = ""
    model: str = "gpt-image-1"
    max_reference_images: int = 8
    timeout: float = 60.0
    max_retries: int = 3
    backoff_seconds: float = 0.5


@dataclass
class GenerationOutcome:
    image_bytes: bytes | None
    provenance: dict


class MllmClient:
    """Interface for image-generation backends."""

    offline = False

    def submit(self, prompt: GenerationPrompt, image_payloads: dict[str, bytes]) -> tuple[bytes, str]:
        """Returns (image bytes, service response id)."""
        raise NotImplementedError


class OfflineMllmClient(MllmClient):
    """No-network mode: the rendered prompt is the deliverable."""

    offline = True

    def submit(self, prompt, image_payloads):  # pragma: no cover - never called
        raise ServiceError("offline client performs no network calls")


class ReplayMllmClient(MllmClient):
    """Returns canned bytes; records every submission for assertions."""

    def __init__(self, image_bytes: bytes, response_id: str = "replay-0",
                 fail_times: int = 0):
        self.image_bytes = image_bytes
        self.response_id = response_id
        self.fail_times = fail_times
        self.submissions: list[GenerationPrompt] = []

    def submit(self, prompt, image_payloads):
        self.submissions.append(prompt)
        if self.fail_times > 0:
            self.fail_times -= 1
            raise ServiceError("simulated transport timeout")
        return self.image_bytes, self.response_id


class HttpMllmClient(MllmClient):
    """POSTs the prompt plus base64 reference images to a generation endpoint."""

    def __init__(self, config: MllmConfig, api_key: str | None = None):
        self.config = config
        self.api_key = api_key if api_key is not None else os.environ.get(MLLM_API_KEY_ENV, "")

    def submit(self, prompt, image_payloads):
        import httpx

        body = {
            "model": self.config.model,
            "prompt": prompt.rendered,
            "images": [
                {"id": rid, "data": base64.b64encode(data).decode("ascii")}
                for rid, data in image_payloads.items()
            ],
        }
        log.debug("mllm request endpoint=%s model=%s key=<redacted>",
                  self.config.endpoint, self.config.model)
        try:
            resp = httpx.post(
                self.config.endpoint,
                json=body,
                headers={"Authorization": f"Bearer {self.api_key}"},
                timeout=self.config.timeout,
            )
            resp.raise_for_status()
        except httpx.HTTPError as e:
            raise ServiceError(f"generation transport failure: {e}") from e
        data = resp.json()
        if "error" in data:
            raise ServiceError(f"service rejection: {data['error']}")
        try:
            return base64.b64decode(data["image_b64"]), data.get("id", "")
        except (KeyError, ValueError) as e:
            raise ServiceError(f"unexpected generation response shape: {e}") from e


def generate_image(
    prompt: GenerationPrompt,
    client: MllmClient,
    config: MllmConfig | None = None,
    image_payloads: dict[str, bytes] | None = None,
    sleeper=time.sleep,
) -> GenerationOutcome:
    """Submit a prompt with its reference images; retries transport failures
    with exponential backoff. In offline mode no network call is made and
    the provenance carries the rendered prompt only."""
    config = config or MllmConfig()
    image_ids = [c.image_ref for c in prompt.clauses]
    provenance = {
        "prompt": prompt.rendered,
        "image_ids": image_ids,
        "model": config.model,
        "response_id": None,
        "timestamp": None,
    }
    if client.offline:
        provenance["timestamp"] = int(time.time())
        return GenerationOutcome(image_bytes=None, provenance=provenance)
    if len(image_ids) > config.max_reference_images:
        raise ServiceError(
            f"{len(image_ids)} reference images exceed the service limit "
            f"of {config.max_reference_images}"
        )
    payloads = image_payloads or {}
    last_error: Exception | None = None
    for attempt in range(config.max_retries):
        try:
            image_bytes, response_id = client.submit(prompt, payloads)
            provenance["response_id"] = response_id
            provenance["timestamp"] = int(time.time())
            return GenerationOutcome(image_bytes=image_bytes, provenance=provenance)
        except ServiceError as e:
            last_error = e
            if attempt < config.max_retries - 1:
                sleeper(config.backoff_seconds * 2**attempt)
    raise ServiceError(f"generation failed after {config.max_retries} attempts: {last_error}")


def write_provenance(path: str | Path, outcome: GenerationOutcome) -> None:
    Path(path).write_text(json.dumps(outcome.provenance, indent=2), encoding="utf-8")
