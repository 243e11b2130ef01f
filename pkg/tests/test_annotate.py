import json
import logging

import pytest
import requests

import shopsim.annotate as annotate_mod
from shopsim.actions import Action, serialize_action
from shopsim.annotate import (
    AnnotationCache,
    AnnotationRequest,
    CoverageReport,
    HttpChatProvider,
    MockProvider,
    ProviderConfig,
    ProviderError,
    ValidationError,
    annotate,
    annotate_dataset,
    build_prompt,
    get_provider,
    request_for_step,
)
from shopsim.pipeline import Session, SessionStep


def step(index, action=None, rationale=None):
    return SessionStep(
        step=index,
        pruned_html=f"<div>page {index}</div>",
        screenshot_ref=f"shot-{index}.png",
        action=action or Action.scroll(),
        rationale=rationale,
    )


def scroll_request():
    return AnnotationRequest(
        history_actions=(serialize_action(Action.click("search", "Search")),),
        context_html="<div>results for ergo keyboard</div>",
        action_json=serialize_action(Action.scroll()),
    )


class CountingProvider:
    """Delegates to MockProvider while counting remote calls."""

    def __init__(self):
        self.inner = MockProvider()
        self.model_id = self.inner.model_id
        self.calls = 0

    def complete(self, prompt):
        self.calls += 1
        return self.inner.complete(prompt)


class ScriptedProvider:
    def __init__(self, reply=None, error=None, model_id="scripted-1"):
        self.reply = reply
        self.error = error
        self.model_id = model_id

    def complete(self, prompt):
        if self.error is not None:
            raise self.error
        return self.reply


class TestBuildPrompt:
    def test_scroll_prompt_contains_action_json(self):
        prompt = build_prompt(scroll_request())
        assert '{"type":"scroll"}' in prompt
        assert "first-person perspective" in prompt

    def test_example_slot_substituted(self):
        prompt = build_prompt(scroll_request(), example_text="EXAMPLE GOES HERE")
        assert "EXAMPLE GOES HERE" in prompt
        assert "{example}" not in prompt

    def test_identical_steps_give_byte_identical_prompts(self):
        assert build_prompt(scroll_request()) == build_prompt(scroll_request())

    def test_golden_prompt(self, golden_dir):
        expected = (golden_dir / "prompt.txt").read_text(encoding="utf-8")
        assert build_prompt(scroll_request(), example_text="Example: I browse.") == expected

    def test_request_for_step_windows_history(self):
        session = Session("s", [step(i) for i in range(1, 6)])
        request = request_for_step(session, 4, history_window=2)
        assert len(request.history_actions) == 2
        assert request.context_html == "<div>page 5</div>"

    def test_request_excerpt_limit(self):
        session = Session("s", [step(1)])
        session.steps[0].pruned_html = "x" * 5000
        request = request_for_step(session, 0, excerpt_chars=100)
        assert len(request.context_html) == 100


class TestAnnotate:
    def test_mock_provider_is_deterministic_first_person(self):
        provider = MockProvider()
        first = annotate(scroll_request(), provider)
        second = annotate(scroll_request(), provider)
        assert first == second
        assert first.startswith("I ")
        assert first.endswith(".")

    def test_cache_hit_skips_provider(self, tmp_path):
        cache = AnnotationCache(tmp_path / "cache")
        provider = CountingProvider()
        first = annotate(scroll_request(), provider, cache)
        assert provider.calls == 1
        second = annotate(scroll_request(), provider, cache)
        assert provider.calls == 1
        assert first == second

    def test_cache_key_depends_on_prompt_and_model_only(self):
        key_a = AnnotationCache.key("model-a", "prompt")
        assert key_a == AnnotationCache.key("model-a", "prompt")
        assert key_a != AnnotationCache.key("model-b", "prompt")
        assert key_a != AnnotationCache.key("model-a", "other prompt")

    def test_cache_record_has_no_credentials(self, tmp_path, monkeypatch):
        monkeypatch.setenv("SHOPSIM_API_KEY", "sk-secret-value")
        cache = AnnotationCache(tmp_path / "cache")
        annotate(scroll_request(), MockProvider(), cache)
        records = list((tmp_path / "cache").glob("*.json"))
        assert records
        for path in records:
            assert "sk-secret-value" not in path.read_text(encoding="utf-8")

    def test_multi_sentence_reply_truncated_with_warning(self, caplog):
        provider = ScriptedProvider(reply="I want this. It is cheap. Also nice.")
        with caplog.at_level(logging.WARNING, logger="shopsim.annotate"):
            result = annotate(scroll_request(), provider)
        assert result == "I want this."
        assert any("truncated" in r.message for r in caplog.records)

    def test_sentence_splitter_cases(self):
        cases = {
            "I compare prices!": "I compare prices!",
            "I compare prices! Then I buy.": "I compare prices!",
            "I wonder... is it good? Yes.": "I wonder...",
        }
        for reply, expected in cases.items():
            assert annotate(scroll_request(), ScriptedProvider(reply=reply)) == expected

    def test_empty_reply_raises_validation_error(self):
        with pytest.raises(ValidationError):
            annotate(scroll_request(), ScriptedProvider(reply="   "))

    def test_non_first_person_warns_but_returns(self, caplog):
        provider = ScriptedProvider(reply="The user wants cheaper options.")
        with caplog.at_level(logging.WARNING, logger="shopsim.annotate"):
            result = annotate(scroll_request(), provider)
        assert result == "The user wants cheaper options."
        assert any("first person" in r.message for r in caplog.records)


class TestAnnotateDataset:
    def make_sessions(self):
        return [
            Session("s1", [step(1), step(2, rationale="I wrote this myself."), step(3)]),
            Session("s2", [step(1, action=Action.input("usb hub"))]),
        ]

    def test_every_step_annotated_and_humans_preserved(self, tmp_path):
        sessions = self.make_sessions()
        report = annotate_dataset(sessions, MockProvider(), cache=AnnotationCache(tmp_path / "c"))
        assert all(s.rationale for session in sessions for s in session.steps)
        assert sessions[0].steps[1].rationale == "I wrote this myself."
        assert report.preserved == 1
        assert report.fetched == 3
        assert report.cached == 0
        assert report.failed == 0

    def test_warm_cache_rerun_makes_zero_provider_calls(self, tmp_path):
        cache = AnnotationCache(tmp_path / "c")
        provider = CountingProvider()
        first_sessions = self.make_sessions()
        annotate_dataset(first_sessions, provider, cache=cache)
        calls_after_first = provider.calls

        second_sessions = self.make_sessions()
        report = annotate_dataset(second_sessions, provider, cache=cache)
        assert provider.calls == calls_after_first
        assert report.cached == 3 and report.fetched == 0
        first_texts = [s.rationale for sess in first_sessions for s in sess.steps]
        second_texts = [s.rationale for sess in second_sessions for s in sess.steps]
        assert first_texts == second_texts

    def test_failures_quarantined_into_manifest(self, tmp_path):
        sessions = self.make_sessions()
        provider = ScriptedProvider(error=ProviderError("backend down"), model_id="broken")
        report = annotate_dataset(sessions, provider, cache=AnnotationCache(tmp_path / "c"))
        assert report.failed == 3
        assert report.preserved == 1
        assert {f["session_id"] for f in report.failures} == {"s1", "s2"}
        assert all(f["error"] == "backend down" for f in report.failures)
        # Human rationale untouched; failed steps left blank for resumption.
        assert sessions[0].steps[1].rationale == "I wrote this myself."
        assert sessions[0].steps[0].rationale is None

    def test_report_dict_shape(self):
        report = CoverageReport(cached=1, fetched=2, failed=0, preserved=3)
        data = report.to_dict()
        assert data == {"cached": 1, "fetched": 2, "failed": 0, "preserved": 3, "failures": []}


class _FakeResponse:
    def __init__(self, status_code, payload=None):
        self.status_code = status_code
        self._payload = payload or {}

    def json(self):
        return self._payload


class TestHttpChatProvider:
    CONFIG = ProviderConfig(
        name="http",
        endpoint="http://provider.test/v1/chat",
        model="chat-large",
        max_retries=4,
        backoff_base=0.01,
    )

    def provider(self, monkeypatch, outcomes):
        calls = []

        def fake_post(url, json=None, headers=None, timeout=None):
            calls.append({"url": url, "json": json, "headers": headers})
            outcome = outcomes[min(len(calls) - 1, len(outcomes) - 1)]
            if isinstance(outcome, Exception):
                raise outcome
            return outcome

        monkeypatch.setattr(annotate_mod.requests, "post", fake_post)
        monkeypatch.setattr(annotate_mod.time, "sleep", lambda _: None)
        return HttpChatProvider(self.CONFIG), calls

    @staticmethod
    def ok(content="I pick the cheaper one."):
        return _FakeResponse(200, {"choices": [{"message": {"content": content}}]})

    def test_retries_5xx_then_succeeds(self, monkeypatch):
        provider, calls = self.provider(monkeypatch, [_FakeResponse(503), _FakeResponse(500), self.ok()])
        assert provider.complete("p") == "I pick the cheaper one."
        assert len(calls) == 3

    def test_retries_transport_errors(self, monkeypatch):
        provider, calls = self.provider(
            monkeypatch, [requests.ConnectionError("boom"), self.ok("I wait for the page.")]
        )
        assert provider.complete("p") == "I wait for the page."
        assert len(calls) == 2

    def test_4xx_fails_immediately(self, monkeypatch):
        provider, calls = self.provider(monkeypatch, [_FakeResponse(401)])
        with pytest.raises(ProviderError):
            provider.complete("p")
        assert len(calls) == 1

    def test_exhausted_retries_raise(self, monkeypatch):
        provider, calls = self.provider(monkeypatch, [_FakeResponse(500)] * 10)
        with pytest.raises(ProviderError) as err:
            provider.complete("p")
        assert len(calls) == self.CONFIG.max_retries
        assert "4 attempts" in str(err.value)

    def test_credentials_from_named_env_var(self, monkeypatch):
        monkeypatch.setenv("SHOPSIM_API_KEY", "sk-test-123")
        provider, calls = self.provider(monkeypatch, [self.ok()])
        provider.complete("p")
        assert calls[0]["headers"]["Authorization"] == "Bearer sk-test-123"

    def test_requires_endpoint(self):
        with pytest.raises(ValueError):
            HttpChatProvider(ProviderConfig(name="http", endpoint=""))


class TestGetProvider:
    def test_mock_and_http(self):
        assert isinstance(get_provider(ProviderConfig(name="mock")), MockProvider)
        http = get_provider(ProviderConfig(name="http", endpoint="http://x/chat"))
        assert isinstance(http, HttpChatProvider)
        with pytest.raises(ValueError):
            get_provider(ProviderConfig(name="wat"))
