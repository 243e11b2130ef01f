"""Rationale synthesis for distilled session steps.

Every step gets a one-sentence, first-person rationale describing why the
user performed the action. Rationales come from a pluggable chat-completion
provider; results are cached on disk keyed by prompt text and model
identifier so re-runs are reproducible and free. Human-written rationales
already present on a step are never replaced.
"""

from __future__ import annotations

import hashlib
import json
import logging
import os
import random
import re
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import requests

from .actions import serialize_action

log = logging.getLogger("shopsim.annotate")

PROMPT_TEMPLATE = (
    "<IMPORTANT>\n"
    "You are given a customer's shopping journey on amazon.com. For each step, "
    "you will be provided with the context (what the user sees) and the action "
    "(what the user does). Your task is to predict the rationale behind the "
    "action from a first-person perspective.\n"
    "\n"
    "Here is an example:\n"
    "{example}\n"
    "\n"
    "Output a one-sentence rationale in first person for the given action.\n"
    "</IMPORTANT>"
)

DEFAULT_EXAMPLE_TEXT = (
    "Context: a search results page listing wireless keyboards.\n"
    'Action: {"type":"click","click_type":"product_link","name":"Logitech MX Keys"}\n'
    "Rationale: I want to open this keyboard's page to check its details."
)

DEFAULT_EXCERPT_CHARS = 2000

_SENTENCE_SPLIT = re.compile(r"(?<=[.!?])\s+")


class ProviderError(Exception):
    """Provider unreachable or persistently failing."""


class ValidationError(Exception):
    """Provider reply unusable (empty)."""


@dataclass(frozen=True)
class ProviderConfig:
    """Connection settings for a chat-completion provider. The credential is
    read from the environment variable named by ``api_key_env`` and never
    written to logs or the cache."""

    name: str = "mock"
    endpoint: str = ""
    model: str = "mock-template-v1"
    api_key_env: str = "SHOPSIM_API_KEY"
    max_retries: int = 5
    backoff_base: float = 0.5
    timeout: float = 30.0


@dataclass(frozen=True)
class AnnotationRequest:
    """Deterministic rendering of one step: what the user saw (pruned HTML
    excerpt), what they did before (canonical action JSON), and the target
    action to explain."""

    history_actions: tuple
    context_html: str
    action_json: str


def build_prompt(request: AnnotationRequest, example_text: str = DEFAULT_EXAMPLE_TEXT) -> str:
    """Instantiate the annotation prompt for one step.

    The template's {example} slot is filled with the configured few-shot
    text; the step context and action are appended. Identical requests
    always produce byte-identical prompts.
    """
    lines = [PROMPT_TEMPLATE.replace("{example}", example_text), ""]
    lines.append("Past actions:")
    if request.history_actions:
        lines.extend(f"{i}. {a}" for i, a in enumerate(request.history_actions, start=1))
    else:
        lines.append("(none)")
    lines += [
        "",
        "Context (what the user sees):",
        request.context_html,
        "",
        "Action (what the user does):",
        request.action_json,
    ]
    return "\n".join(lines)


def request_for_step(session, index: int, history_window: int = 3, excerpt_chars: int = DEFAULT_EXCERPT_CHARS) -> AnnotationRequest:
    """Build the annotation request for session.steps[index]."""
    steps = session.steps
    lo = max(0, index - history_window)
    return AnnotationRequest(
        history_actions=tuple(serialize_action(s.action) for s in steps[lo:index]),
        context_html=steps[index].pruned_html[:excerpt_chars],
        action_json=serialize_action(steps[index].action),
    )


class MockProvider:
    """Offline provider emitting deterministic template sentences.

    The sentence is chosen by hashing the prompt, so identical prompts get
    identical rationales and the whole pipeline is testable without network.
    """

    _TEMPLATES = (
        "I want to {verb} {noun} before deciding.",
        "I am trying to {verb} {noun} for this purchase.",
        "I think this helps me {verb} {noun}.",
        "I need to {verb} {noun} to narrow down my options.",
    )
    _VERBS = ("compare", "check", "find", "explore", "confirm")
    _NOUNS = ("the prices", "the reviews", "more options", "the details", "the availability")

    def __init__(self, model: str = "mock-template-v1"):
        self.model_id = model

    def complete(self, prompt: str) -> str:
        digest = hashlib.sha256(prompt.encode("utf-8")).digest()
        template = self._TEMPLATES[digest[0] % len(self._TEMPLATES)]
        return template.format(
            verb=self._VERBS[digest[1] % len(self._VERBS)],
            noun=self._NOUNS[digest[2] % len(self._NOUNS)],
        )


class HttpChatProvider:
    """Generic JSON chat-completion client with exponential backoff.

    Retries transport errors and 5xx responses with jittered backoff; 4xx
    responses fail immediately since they will not heal on retry.
    """

    def __init__(self, config: ProviderConfig):
        if not config.endpoint:
            raise ValueError("http provider requires an endpoint")
        self.config = config
        self.model_id = config.model
        self._api_key = os.environ.get(config.api_key_env)

    def complete(self, prompt: str) -> str:
        payload = {
            "model": self.config.model,
            "messages": [{"role": "user", "content": prompt}],
        }
        headers = {"Content-Type": "application/json"}
        if self._api_key:
            headers["Authorization"] = f"Bearer {self._api_key}"

        last_error = None
        for attempt in range(self.config.max_retries):
            if attempt:
                delay = self.config.backoff_base * (2 ** (attempt - 1))
                time.sleep(delay * (1.0 + random.random()))
            try:
                response = requests.post(
                    self.config.endpoint,
                    json=payload,
                    headers=headers,
                    timeout=self.config.timeout,
                )
            except requests.RequestException as exc:
                last_error = f"transport error: {exc.__class__.__name__}"
                continue
            if response.status_code >= 500:
                last_error = f"server error: {response.status_code}"
                continue
            if response.status_code >= 400:
                raise ProviderError(f"provider rejected request: {response.status_code}")
            try:
                return response.json()["choices"][0]["message"]["content"]
            except (ValueError, KeyError, IndexError) as exc:
                raise ProviderError(f"unexpected provider reply shape: {exc}") from exc
        raise ProviderError(
            f"provider failed after {self.config.max_retries} attempts ({last_error})"
        )


def get_provider(config: ProviderConfig):
    if config.name == "mock":
        return MockProvider(config.model)
    if config.name == "http":
        return HttpChatProvider(config)
    raise ValueError(f"unknown provider: {config.name!r}")


class AnnotationCache:
    """Content-addressed rationale store: one JSON record per key.

    The key depends only on the prompt text and the model identifier. Writes
    go through a temp file and atomic rename, so concurrent readers always
    see complete records.
    """

    def __init__(self, root):
        self.root = Path(root)
        self.root.mkdir(parents=True, exist_ok=True)

    @staticmethod
    def key(model_id: str, prompt: str) -> str:
        material = model_id.encode("utf-8") + b"\x00" + prompt.encode("utf-8")
        return hashlib.sha256(material).hexdigest()

    def _path(self, key: str) -> Path:
        return self.root / f"{key}.json"

    def get(self, key: str) -> str | None:
        path = self._path(key)
        if not path.exists():
            return None
        with open(path, encoding="utf-8") as handle:
            return json.load(handle)["rationale"]

    def put(self, key: str, model_id: str, prompt: str, rationale: str) -> None:
        record = {"model": model_id, "prompt_sha256": hashlib.sha256(prompt.encode("utf-8")).hexdigest(), "rationale": rationale}
        tmp = self._path(key).with_suffix(".tmp")
        with open(tmp, "w", encoding="utf-8") as handle:
            json.dump(record, handle, ensure_ascii=False)
        os.replace(tmp, self._path(key))


def _postprocess_reply(reply: str) -> str:
    reply = reply.strip()
    if not reply:
        raise ValidationError("provider returned an empty rationale")
    sentences = [s for s in _SENTENCE_SPLIT.split(reply) if s.strip()]
    if len(sentences) > 1:
        log.warning("multi-sentence rationale truncated to first sentence")
        reply = sentences[0].strip()
    if not (reply.startswith("I") or " I " in f" {reply} "):
        log.warning("rationale does not read as first person: %r", reply[:60])
    return reply


def annotate(
    request: AnnotationRequest,
    provider,
    cache: AnnotationCache | None = None,
    example_text: str = DEFAULT_EXAMPLE_TEXT,
) -> str:
    """One rationale for one step: cache hit if available, else one provider
    call whose reply is reduced to a single sentence and cached."""
    prompt = build_prompt(request, example_text)
    key = AnnotationCache.key(provider.model_id, prompt) if cache else None
    if cache is not None:
        hit = cache.get(key)
        if hit is not None:
            return hit
    rationale = _postprocess_reply(provider.complete(prompt))
    if cache is not None:
        cache.put(key, provider.model_id, prompt, rationale)
    return rationale


@dataclass
class CoverageReport:
    """Outcome counts for one annotation run, plus a failure manifest usable
    to resume: each entry names the session and step that still lacks a
    rationale."""

    cached: int = 0
    fetched: int = 0
    failed: int = 0
    preserved: int = 0
    failures: list = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "cached": self.cached,
            "fetched": self.fetched,
            "failed": self.failed,
            "preserved": self.preserved,
            "failures": list(self.failures),
        }


def annotate_dataset(
    sessions,
    provider,
    concurrency_limit: int = 4,
    cache: AnnotationCache | None = None,
    example_text: str = DEFAULT_EXAMPLE_TEXT,
    history_window: int = 3,
) -> CoverageReport:
    """Fill in missing rationales across sessions, in place.

    Existing rationales are preserved untouched. Provider calls run under a
    bounded thread pool; failures are quarantined into the report manifest
    rather than aborting the run, so a later pass can resume.
    """
    report = CoverageReport()
    jobs = []
    for session in sessions:
        for index, step in enumerate(session.steps):
            if step.rationale is not None:
                report.preserved += 1
                continue
            jobs.append((session, index, step))

    def run(job):
        session, index, step = job
        request = request_for_step(session, index, history_window)
        if cache is not None:
            hit = cache.get(AnnotationCache.key(provider.model_id, build_prompt(request, example_text)))
            if hit is not None:
                return job, hit, True, None
        try:
            return job, annotate(request, provider, cache, example_text), False, None
        except (ProviderError, ValidationError) as exc:
            return job, None, False, str(exc)

    max_workers = max(1, concurrency_limit)
    with ThreadPoolExecutor(max_workers=max_workers) as pool:
        for (session, _, step), rationale, from_cache, error in pool.map(run, jobs):
            if error is not None:
                report.failed += 1
                report.failures.append(
                    {"session_id": session.session_id, "step": step.step, "error": error}
                )
            else:
                step.rationale = rationale
                if from_cache:
                    report.cached += 1
                else:
                    report.fetched += 1
    return report
