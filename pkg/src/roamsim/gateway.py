"""Transport to a completion endpoint, an in-process mock model, and
latency metering.

The HTTP client speaks the common chat-completions JSON shape
(POST {base}/v1/chat/completions with a single user message; reply text
taken from choices[0].message.content, with choices[0].text accepted as a
raw-completion fallback). The mock implements the same `complete`
contract so agent code and tests run hermetically.

Every call produces a CompletionRecord; clients retain all records so a
run's latency summary can be reconciled against its invocation count.
"""

from __future__ import annotations

import os
import re
import threading
import time
from dataclasses import dataclass

import requests

ENV_BASE_URL = "ROAMSIM_LLM_BASE_URL"
ENV_MODEL = "ROAMSIM_LLM_MODEL"

OUTCOME_OK = "ok"
OUTCOME_TIMEOUT = "timeout"
OUTCOME_TRANSPORT = "transport_error"
OUTCOME_HTTP = "http_error"

# MAC=rssi pairs as rendered in prompt window rows (rssi kept at full
# precision, so scientific notation near zero must parse too).
_PAIR_RE = re.compile(
    r"([0-9A-Fa-f]{2}(?::[0-9A-Fa-f]{2}){5})=(-?\d+(?:\.\d+)?(?:[eE]-?\d+)?)"
)


@dataclass(frozen=True)
class EndpointConfig:
    """Connection settings for a live completion endpoint."""

    base_url: str
    model: str
    temperature: float = 0.0
    max_tokens: int = 256
    timeout_ms: float = 30_000.0
    max_retries: int = 2
    backoff_ms: float = 250.0
    max_concurrency: int = 4

    def __post_init__(self):
        if self.timeout_ms <= 0:
            raise ValueError("timeout_ms must be positive")
        if self.temperature < 0:
            raise ValueError("temperature must be >= 0")

    @staticmethod
    def from_env(base_url: str | None = None, model: str | None = None, **kw) -> "EndpointConfig":
        """Build a config, letting environment variables override the defaults."""
        return EndpointConfig(
            base_url=os.environ.get(ENV_BASE_URL, base_url or "http://127.0.0.1:8080"),
            model=os.environ.get(ENV_MODEL, model or "local"),
            **kw,
        )


@dataclass(frozen=True)
class CompletionRecord:
    """Outcome of one completion call."""

    prompt: str
    reply: str
    latency_ms: float
    attempts: int
    outcome: str
    status: int | None = None

    @property
    def ok(self) -> bool:
        return self.outcome == OUTCOME_OK


@dataclass(frozen=True)
class MockRule:
    """Behavior of the in-process mock model."""

    kind: str
    text: str | None = None
    value: float | None = None
    replies: tuple[str, ...] | None = None
    fail_after_n: int | None = None
    delay_ms: float = 0.0

    @staticmethod
    def argmax_rssi(delay_ms: float = 0.0) -> "MockRule":
        return MockRule(kind="argmax_rssi", delay_ms=delay_ms)

    @staticmethod
    def constant_text(text: str, delay_ms: float = 0.0) -> "MockRule":
        return MockRule(kind="constant_text", text=text, delay_ms=delay_ms)

    @staticmethod
    def fixed_threshold(value: float, delay_ms: float = 0.0) -> "MockRule":
        return MockRule(kind="fixed_threshold", value=value, delay_ms=delay_ms)

    @staticmethod
    def scripted(replies, delay_ms: float = 0.0) -> "MockRule":
        return MockRule(kind="scripted", replies=tuple(replies), delay_ms=delay_ms)

    @staticmethod
    def fail_after(n: int, delay_ms: float = 0.0) -> "MockRule":
        return MockRule(kind="fail_after", fail_after_n=n, delay_ms=delay_ms)


def prompt_argmax_bssid(prompt: str) -> str | None:
    """Strongest BSSID listed in the last scan row of a prompt.

    Ties break toward the lexicographically smallest BSSID, matching the
    candidate order the prompt renderer uses.
    """
    last_pairs: list[tuple[str, float]] = []
    for line in prompt.splitlines():
        pairs = [(m.group(1).upper(), float(m.group(2))) for m in _PAIR_RE.finditer(line)]
        if pairs:
            last_pairs = pairs
    if not last_pairs:
        return None
    return min(last_pairs, key=lambda p: (-p[1], p[0]))[0]


class MockClient:
    """Deterministic in-process stand-in for a completion endpoint."""

    def __init__(self, rule: MockRule):
        self.rule = rule
        self.records: list[CompletionRecord] = []
        self._calls = 0
        self._lock = threading.Lock()

    def _reply_for(self, prompt: str, call_index: int) -> tuple[str, str]:
        rule = self.rule
        if rule.kind == "argmax_rssi":
            best = prompt_argmax_bssid(prompt)
            return (OUTCOME_OK, f"ANSWER: {best}") if best else (OUTCOME_TRANSPORT, "")
        if rule.kind == "constant_text":
            return OUTCOME_OK, rule.text or ""
        if rule.kind == "fixed_threshold":
            return OUTCOME_OK, f"ANSWER: {rule.value:g}"
        if rule.kind == "scripted":
            if call_index < len(rule.replies):
                return OUTCOME_OK, rule.replies[call_index]
            return OUTCOME_TRANSPORT, ""
        if rule.kind == "fail_after":
            if call_index < rule.fail_after_n:
                return OUTCOME_OK, "OK"
            return OUTCOME_TRANSPORT, ""
        raise ValueError(f"unknown mock rule: {rule.kind!r}")

    def complete(self, prompt: str) -> CompletionRecord:
        with self._lock:
            call_index = self._calls
            self._calls += 1
        start = time.perf_counter()
        if self.rule.delay_ms > 0:
            time.sleep(self.rule.delay_ms / 1000.0)
        outcome, reply = self._reply_for(prompt, call_index)
        latency = (time.perf_counter() - start) * 1000.0
        record = CompletionRecord(
            prompt=prompt, reply=reply, latency_ms=latency, attempts=1, outcome=outcome
        )
        with self._lock:
            self.records.append(record)
        return record


def mock_model(rule: MockRule) -> MockClient:
    return MockClient(rule)


class HttpClient:
    """Chat-completions client with bounded retries and fixed backoff."""

    def __init__(self, cfg: EndpointConfig, session: requests.Session | None = None):
        self.cfg = cfg
        self.records: list[CompletionRecord] = []
        self._session = session or requests.Session()
        self._gate = threading.Semaphore(cfg.max_concurrency)
        self._lock = threading.Lock()

    def complete(self, prompt: str) -> CompletionRecord:
        cfg = self.cfg
        payload = {
            "model": cfg.model,
            "temperature": cfg.temperature,
            "max_tokens": cfg.max_tokens,
            "messages": [{"role": "user", "content": prompt}],
        }
        url = cfg.base_url.rstrip("/") + "/v1/chat/completions"
        outcome, status, reply, latency = OUTCOME_TRANSPORT, None, "", 0.0
        attempts = 0
        for attempt in range(cfg.max_retries + 1):
            if attempt > 0:
                time.sleep(cfg.backoff_ms / 1000.0)
            attempts = attempt + 1
            start = time.perf_counter()
            try:
                with self._gate:
                    resp = self._session.post(url, json=payload, timeout=cfg.timeout_ms / 1000.0)
                latency = (time.perf_counter() - start) * 1000.0
                if not 200 <= resp.status_code < 300:
                    outcome, status = OUTCOME_HTTP, resp.status_code
                    continue
                reply = _extract_reply(resp.json())
                outcome, status = OUTCOME_OK, resp.status_code
                break
            except requests.Timeout:
                latency = (time.perf_counter() - start) * 1000.0
                outcome = OUTCOME_TIMEOUT
            except (requests.RequestException, ValueError, KeyError):
                latency = (time.perf_counter() - start) * 1000.0
                outcome = OUTCOME_TRANSPORT
        if outcome != OUTCOME_OK:
            reply = ""
        record = CompletionRecord(
            prompt=prompt,
            reply=reply,
            latency_ms=latency,
            attempts=attempts,
            outcome=outcome,
            status=status,
        )
        with self._lock:
            self.records.append(record)
        return record


def complete(cfg: EndpointConfig, prompt: str) -> CompletionRecord:
    """One-shot completion against a live endpoint."""
    return HttpClient(cfg).complete(prompt)


def _extract_reply(body) -> str:
    choices = body.get("choices")
    if not choices:
        raise ValueError("no choices in reply")
    first = choices[0]
    message = first.get("message")
    if isinstance(message, dict) and isinstance(message.get("content"), str):
        return message["content"]
    if isinstance(first.get("text"), str):  # raw-completion fallback shape
        return first["text"]
    raise ValueError("no reply text in choices[0]")


# ---------------------------------------------------------------------------
# Latency metering

@dataclass(frozen=True)
class LatencySummary:
    """Statistics over successful calls; failures counted separately."""

    count: int
    failures: int
    mean_ms: float | None = None
    p50_ms: float | None = None
    p95_ms: float | None = None
    max_ms: float | None = None

    def to_dict(self) -> dict:
        return {
            "count": self.count,
            "failures": self.failures,
            "mean_ms": self.mean_ms,
            "p50_ms": self.p50_ms,
            "p95_ms": self.p95_ms,
            "max_ms": self.max_ms,
        }


def latency_stats(records) -> LatencySummary:
    """Summarize completion latencies by nearest-rank percentiles."""
    ok = sorted(r.latency_ms for r in records if r.outcome == OUTCOME_OK)
    failures = sum(1 for r in records if r.outcome != OUTCOME_OK)
    if not ok:
        return LatencySummary(count=0, failures=failures)
    n = len(ok)
    return LatencySummary(
        count=n,
        failures=failures,
        mean_ms=sum(ok) / n,
        p50_ms=ok[max(1, -(-(50 * n) // 100)) - 1],
        p95_ms=ok[max(1, -(-(95 * n) // 100)) - 1],
        max_ms=ok[-1],
    )
