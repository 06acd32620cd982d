"""Single boundary for all LLM calls.

Covers prompt assembly (templates with named placeholders), token-budget
truncation, the JSON chat-completion wire protocol, and a deterministic
scripted mock so the whole pipeline runs offline.

The token budget uses whitespace-delimited tokens as a conservative proxy;
the true tokenizer differs per served model.
"""

from __future__ import annotations

import hashlib
import json
import logging
import os
import re
import threading
import time
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import requests

logger = logging.getLogger(__name__)

TOKEN_BUDGET = 2048
PASSAGE_SEPARATOR = "\n\n"

TEMPLATE_NAMES = ("paraphrase_gen", "summarize", "generate")
PLACEHOLDER_NAMES = (
    "entity",
    "relation",
    "question",
    "paraphrases",
    "expected_types",
    "context",
    "summary",
)

_PLACEHOLDER_RE = re.compile(r"\{(" + "|".join(PLACEHOLDER_NAMES) + r")\}")

ENDPOINT_ENV_VAR = "RELRAG_ENDPOINT"
TOKEN_ENV_VAR = "RELRAG_API_TOKEN"


class GatewayError(Exception):
    pass


class PromptError(GatewayError):
    pass


class PromptBudgetError(GatewayError):
    pass


class ProtocolError(GatewayError):
    def __init__(self, status: int, body: str):
        super().__init__(f"non-retryable protocol error: status {status}, body {body[:500]!r}")
        self.status = status
        self.body = body


class TransportError(GatewayError):
    pass


class MockScriptError(GatewayError):
    def __init__(self, prompt_hash_value: str, known: list[str]):
        super().__init__(
            f"no script entry for prompt hash {prompt_hash_value} "
            f"(known: {', '.join(known) or 'none'})"
        )
        self.prompt_hash = prompt_hash_value


@dataclass(frozen=True)
class PromptTemplate:
    name: str
    text: str

    @property
    def placeholders(self) -> tuple[str, ...]:
        seen = []
        for match in _PLACEHOLDER_RE.finditer(self.text):
            if match.group(1) not in seen:
                seen.append(match.group(1))
        return tuple(seen)


def load_template(name: str) -> PromptTemplate:
    if name not in TEMPLATE_NAMES:
        raise PromptError(f"unknown template {name!r} (have: {', '.join(TEMPLATE_NAMES)})")
    text = resources.files("relrag.templates").joinpath(f"{name}.txt").read_text("utf-8")
    return PromptTemplate(name=name, text=text)


def render(template: PromptTemplate, bindings: dict) -> str:
    """Substitute placeholders verbatim.

    Binding values: a string is inserted as-is; a list/tuple is joined with
    ", " (registry order preserved); None removes every line containing the
    placeholder, which is how ablations omit a block cleanly.
    """
    missing = [p for p in template.placeholders if p not in bindings]
    if missing:
        raise PromptError(f"missing binding for placeholder {missing[0]!r}")
    dropped = {p for p in template.placeholders if bindings[p] is None}
    lines_out = []
    for line in template.text.split("\n"):
        names_here = set(_PLACEHOLDER_RE.findall(line))
        if names_here & dropped:
            continue
        lines_out.append(line)
    text = "\n".join(lines_out)

    def _sub(match: re.Match) -> str:
        value = bindings[match.group(1)]
        if isinstance(value, (list, tuple)):
            return ", ".join(str(v) for v in value)
        return str(value)

    return _PLACEHOLDER_RE.sub(_sub, text)


def count_tokens(text: str) -> int:
    return len(text.split())


def truncate(
    prompt: str,
    budget: int = TOKEN_BUDGET,
    context_block: str | None = None,
    separator: str = PASSAGE_SEPARATOR,
) -> str:
    """Drop whole passages from the end of the context block until the
    prompt fits the budget. Instructions and the question are never cut.
    """
    if budget < 1:
        raise PromptBudgetError(f"budget must be >= 1, got {budget}")
    if count_tokens(prompt) <= budget:
        return prompt
    if not context_block or context_block not in prompt:
        raise PromptBudgetError(
            f"prompt is {count_tokens(prompt)} tokens with no droppable context "
            f"(budget {budget})"
        )
    passages = context_block.split(separator)
    while passages:
        passages = passages[:-1]
        candidate = prompt.replace(context_block, separator.join(passages), 1)
        if count_tokens(candidate) <= budget:
            return candidate
    raise PromptBudgetError(
        f"prompt exceeds budget {budget} even with the context emptied"
    )


def prompt_hash(prompt: str) -> str:
    """Stable short hash used as the mock-script key and in traces."""
    return hashlib.sha256(prompt.encode("utf-8")).hexdigest()[:16]


@dataclass
class ChatRequest:
    model: str
    messages: list[dict]
    temperature: float
    max_tokens: int

    def __post_init__(self) -> None:
        if self.temperature < 0:
            raise GatewayError(f"temperature must be >= 0, got {self.temperature}")
        if self.max_tokens < 1:
            raise GatewayError(f"max_tokens must be >= 1, got {self.max_tokens}")
        if not self.messages:
            raise GatewayError("a chat request needs at least one message")
        for msg in self.messages:
            if "role" not in msg or "content" not in msg:
                raise GatewayError(f"malformed message: {msg!r}")

    def prompt_text(self) -> str:
        return "\n".join(m["content"] for m in self.messages)


def _check_budget(request: ChatRequest, budget: int) -> None:
    n = count_tokens(request.prompt_text())
    if n > budget:
        raise PromptBudgetError(
            f"outgoing prompt is {n} tokens, over the {budget}-token budget; "
            "truncate before dispatch"
        )


def script_entry(label: str, prompt: str, response: str) -> dict:
    """Build one mock-script record for a known prompt."""
    return {"label": label, "prompt_hash": prompt_hash(prompt), "response": response}


class MockGateway:
    """Deterministic scripted gateway keyed on prompt hashes."""

    def __init__(self, script: list[dict], token_budget: int = TOKEN_BUDGET, model: str = "mock"):
        self.token_budget = token_budget
        self.model = model
        self._responses: dict[str, str] = {}
        self._labels: dict[str, str] = {}
        for entry in script:
            h = entry["prompt_hash"]
            self._responses[h] = entry["response"]
            self._labels[h] = entry.get("label", "")

    @classmethod
    def from_file(cls, path: str | Path, **kwargs) -> MockGateway:
        entries = json.loads(Path(path).read_text(encoding="utf-8"))
        return cls(entries, **kwargs)

    @classmethod
    def from_pairs(cls, pairs: dict[str, str], **kwargs) -> MockGateway:
        """Convenience for tests: map full prompt text -> response."""
        return cls([script_entry("", p, r) for p, r in pairs.items()], **kwargs)

    def complete(self, request: ChatRequest) -> str:
        _check_budget(request, self.token_budget)
        h = prompt_hash(request.messages[-1]["content"])
        if h not in self._responses:
            known = [f"{k} ({self._labels[k]})" if self._labels[k] else k
                     for k in list(self._responses)[:8]]
            raise MockScriptError(h, known)
        return self._responses[h]


class HTTPGateway:
    """JSON chat-completion client with bounded retries and backoff.

    The base URL comes from config or the RELRAG_ENDPOINT env var; the auth
    token only ever comes from RELRAG_API_TOKEN.
    """

    RETRYABLE_STATUSES = frozenset({429, 500, 502, 503, 504})

    def __init__(
        self,
        base_url: str | None = None,
        model: str = "",
        max_retries: int = 3,
        backoff_seconds: float = 0.5,
        timeout: float = 60.0,
        token_budget: int = TOKEN_BUDGET,
        max_in_flight: int = 8,
    ):
        self.base_url = (base_url or os.environ.get(ENDPOINT_ENV_VAR, "")).rstrip("/")
        if not self.base_url:
            raise GatewayError(
                f"no endpoint configured (set {ENDPOINT_ENV_VAR} or pass base_url)"
            )
        self.model = model
        self.max_retries = max_retries
        self.backoff_seconds = backoff_seconds
        self.timeout = timeout
        self.token_budget = token_budget
        self._gate = threading.Semaphore(max_in_flight)

    def _headers(self) -> dict:
        headers = {"Content-Type": "application/json"}
        token = os.environ.get(TOKEN_ENV_VAR)
        if token:
            headers["Authorization"] = f"Bearer {token}"
        return headers

    def complete(self, request: ChatRequest) -> str:
        _check_budget(request, self.token_budget)
        payload = {
            "model": request.model or self.model,
            "messages": request.messages,
            "temperature": request.temperature,
            "max_tokens": request.max_tokens,
        }
        url = f"{self.base_url}/chat/completions"
        last_error: Exception | None = None
        for attempt in range(self.max_retries + 1):
            if attempt:
                time.sleep(self.backoff_seconds * (2 ** (attempt - 1)))
            try:
                with self._gate:
                    resp = requests.post(
                        url, json=payload, headers=self._headers(), timeout=self.timeout
                    )
            except requests.RequestException as exc:
                last_error = exc
                logger.warning("transport failure (attempt %d): %s", attempt + 1, exc)
                continue
            if resp.status_code == 200:
                try:
                    return resp.json()["choices"][0]["message"]["content"]
                except (KeyError, IndexError, ValueError) as exc:
                    raise ProtocolError(resp.status_code, resp.text) from exc
            if resp.status_code in self.RETRYABLE_STATUSES:
                last_error = ProtocolError(resp.status_code, resp.text)
                logger.warning("retryable status %d (attempt %d)", resp.status_code, attempt + 1)
                continue
            raise ProtocolError(resp.status_code, resp.text)
        raise TransportError(
            f"gave up after {self.max_retries + 1} attempts: {last_error}"
        )
