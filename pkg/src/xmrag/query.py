"""User queries and their decomposition into subqueries.

Two decomposition paths: a deterministic rule-based splitter, and an
external chat-completion service driven by a versioned prompt template
(six in-context examples; the completion's final "Entity:" line is parsed).
"""

from __future__ import annotations

import importlib.resources
import json
import logging
import os
import re
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .corpus import read_feature_matrix
from .errors import DecompositionError, LlmParseError, ServiceError, ValidationError
from .text import normalize_tokens

log = logging.getLogger(__name__)

LLM_API_KEY_ENV = "XMRAG_LLM_API_KEY"


@dataclass(frozen=True)
class Subquery:
    """One atomic aspect of a query, optionally with a unit-norm embedding."""

    text: str
    embedding: np.ndarray | None = None


@dataclass(frozen=True)
class Query:
    raw: str
    subqueries: tuple[Subquery, ...]

    @property
    def n(self) -> int:
        return len(self.subqueries)

    @property
    def texts(self) -> list[str]:
        return [s.text for s in self.subqueries]

    def has_embeddings(self) -> bool:
        return all(s.embedding is not None for s in self.subqueries)


_STYLE_RE = re.compile(r"^(?P<title>.*?)\s+in the style of\s+(?P<artist>.+?)\s*$", re.IGNORECASE)
_DRAW_RE = re.compile(r"^\s*draw an?\s+(?P<species>[^.]+)\.\s*(?P<rest>.*)$", re.IGNORECASE)
_SPLIT_RE = re.compile(r"[,;]|\band\b", re.IGNORECASE)


def _dedupe(fragments: list[str]) -> list[str]:
    out: list[str] = []
    seen: set[tuple[str, ...]] = set()
    for frag in fragments:
        frag = frag.strip().strip(".").strip()
        if not frag:
            continue
        key = normalize_tokens(frag)
        if not key or key in seen:
            continue
        seen.add(key)
        out.append(frag)
    return out


def decompose_rule_based(raw: str) -> list[Subquery]:
    """Split a query on commas, semicolons, standalone "and", and the
    "<title> in the style of <artist>" / "Draw a <species>. <caption>."
    query templates. The style clause is kept as a single subquery."""
    if not raw or not raw.strip():
        raise DecompositionError("empty query")
    fragments: list[str] = []

    def split_base(part: str) -> None:
        fragments.extend(_SPLIT_RE.split(part))

    text = raw.strip()
    m = _DRAW_RE.match(text)
    if m:
        fragments.append(m.group("species"))
        text = m.group("rest")
    m = _STYLE_RE.match(text)
    if m:
        split_base(m.group("title"))
        fragments.append("style of " + m.group("artist"))
    else:
        split_base(text)

    result = _dedupe(fragments)
    if not result:
        raise DecompositionError(f"decomposition of {raw!r} yielded no subqueries")
    return [Subquery(text=t) for t in result]


def load_prompt_template() -> str:
    """The decomposition prompt template with its {caption} placeholder."""
    ref = importlib.resources.files("xmrag").joinpath("assets/decompose_prompt.txt")
    return ref.read_text(encoding="utf-8")


class LlmClient:
    """Interface for chat-completion backends."""

    def complete(self, prompt: str) -> str:
        raise NotImplementedError


class ReplayLlmClient(LlmClient):
    """Canned prompt->completion map for deterministic tests.

    Keys may be full prompts or bare captions; captions are matched against
    the "Caption:\\n{caption}" tail of the rendered template.
    """

    def __init__(self, responses: dict[str, str]):
        self.responses = dict(responses)
        self.calls: list[str] = []

    @classmethod
    def from_file(cls, path: str | Path) -> "ReplayLlmClient":
        return cls(json.loads(Path(path).read_text(encoding="utf-8")))

    def complete(self, prompt: str) -> str:
        self.calls.append(prompt)
        if prompt in self.responses:
            return self.responses[prompt]
        for key, completion in self.responses.items():
            if f"Caption:\n{key}" in prompt:
                return completion
        raise ServiceError("replay client has no canned response for this prompt")


class HttpLlmClient(LlmClient):
    """Generic chat-completion endpoint client. API key comes from the
    XMRAG_LLM_API_KEY environment variable."""

    def __init__(self, endpoint: str, model: str, timeout: float = 30.0, api_key: str | None = None):
        self.endpoint = endpoint
        self.model = model
        self.timeout = timeout
        self.api_key = api_key if api_key is not None else os.environ.get(LLM_API_KEY_ENV, "")

    def complete(self, prompt: str) -> str:
        import httpx

        body = {
            "model": self.model,
            "messages": [{"role": "user", "content": prompt}],
        }
        log.debug("llm request endpoint=%s model=%s key=<redacted> body=%s",
                  self.endpoint, self.model, json.dumps(body)[:2000])
        try:
            resp = httpx.post(
                self.endpoint,
                json=body,
                headers={"Authorization": f"Bearer {self.api_key}"},
                timeout=self.timeout,
            )
            resp.raise_for_status()
        except httpx.HTTPError as e:
            raise ServiceError(f"llm transport failure: {e}") from e
        data = resp.json()
        log.debug("llm response: %s", json.dumps(data)[:2000])
        try:
            return data["choices"][0]["message"]["content"]
        except (KeyError, IndexError, TypeError) as e:
            raise ServiceError(f"unexpected llm response shape: {e}") from e


def parse_entity_line(completion: str) -> list[str]:
    """Entities from the final "Entity:" line, split on ", "."""
    lines = [ln for ln in completion.splitlines() if ln.strip().lower().startswith("entity:")]
    if not lines:
        raise LlmParseError("completion has no 'Entity:' line", completion=completion)
    _, _, tail = lines[-1].partition(":")
    entities = [e.strip() for e in tail.split(", ")]
    entities = [e for e in entities if e]
    if not entities:
        raise LlmParseError("entity list is empty", completion=completion)
    return entities


def decompose_llm(raw: str, client: LlmClient) -> list[Subquery]:
    """Decompose via the external LLM using the versioned prompt template."""
    if not raw or not raw.strip():
        raise DecompositionError("empty query")
    prompt = load_prompt_template().replace("{caption}", raw)
    completion = client.complete(prompt)
    entities = parse_entity_line(completion)
    texts = _dedupe(entities)
    if not texts:
        raise DecompositionError(f"llm decomposition of {raw!r} yielded no subqueries")
    return [Subquery(text=t) for t in texts]


def make_query(raw: str, subqueries: list[Subquery]) -> Query:
    if not subqueries:
        raise DecompositionError("query needs at least one subquery")
    return Query(raw=raw, subqueries=tuple(subqueries))


def attach_embeddings(query: Query, embedding_file: str | Path) -> Query:
    """Attach one L2-renormalized embedding row per subquery, in order."""
    rows = read_feature_matrix(embedding_file)
    if rows.shape[0] != query.n:
        raise ValidationError(
            f"embedding file has {rows.shape[0]} rows but query has {query.n} subqueries"
        )
    return attach_embedding_rows(query, rows)


def attach_embedding_rows(query: Query, rows: np.ndarray) -> Query:
    rows = np.asarray(rows, dtype=np.float64)
    if rows.ndim != 2 or rows.shape[0] != query.n:
        raise ValidationError("embedding rows do not match subquery count")
    subs = []
    for sq, row in zip(query.subqueries, rows):
        norm = float(np.linalg.norm(row))
        if norm < 1e-12:
            raise ValidationError(f"zero embedding vector for subquery {sq.text!r}")
        subs.append(replace(sq, embedding=row / norm))
    return Query(raw=query.raw, subqueries=tuple(subs))
