"""HTTP client for chat-style vision-language endpoints, plus offline mocks.

The endpoint contract is a chat-completions JSON API taking one image
(base64 data URL) and a text prompt and returning text. ``mock://`` base URLs
are handled in-process so the whole pipeline runs offline and deterministic:

  mock://guidance        valid guidance JSON derived from a (case, label) hash
  mock://reviewer/echo   always answers "present" (keeps every flag)
  mock://reviewer/absent always answers "absent"
  mock://timeout         always raises TransportFailure
"""

from __future__ import annotations

import base64
import hashlib
import json
import os
import time
from dataclasses import dataclass

import httpx

from .errors import ConfguideError, RangeError


class TransportFailure(ConfguideError):
    """Endpoint unreachable or returned a retryable failure."""


@dataclass(frozen=True)
class VlmEndpointConfig:
    """Where and how to reach one vision-language endpoint."""

    base_url: str
    model_id: str
    auth_env_var: str | None = None
    timeout_seconds: float = 60.0
    max_retries: int = 2
    max_parallel: int = 1
    temperature: float = 0.0
    backoff_seconds: float = 0.0

    def __post_init__(self):
        if self.timeout_seconds <= 0:
            raise RangeError("timeout must be positive")
        if self.max_retries < 0:
            raise RangeError("max retries must be >= 0")
        if self.max_parallel < 1:
            raise RangeError("parallelism must be >= 1")

    @property
    def is_mock(self) -> bool:
        return self.base_url.startswith("mock://")


def _stable_digest(*parts: str) -> str:
    return hashlib.sha256("|".join(parts).encode("utf-8")).hexdigest()


def _mock_guidance_text(meta: dict) -> str:
    case_id = meta.get("case_id", "")
    label = meta.get("label", "")
    digest = _stable_digest(case_id, label, meta.get("model_id", ""))
    payload = {
        "label": label,
        "favor": f"Focal opacity pattern {digest[:8]} is compatible with {label}.",
        "against": f"Appearance {digest[8:16]} could instead reflect a mimic of {label}.",
    }
    return json.dumps(payload)


class VlmClient:
    """Single-request client: send (prompt, optional image), get text back.

    Retries are the caller's business; this class performs exactly one
    attempt per call and counts the calls it makes.
    """

    def __init__(self, config: VlmEndpointConfig):
        self.config = config
        self.calls_made = 0

    def complete(self, prompt: str, image_bytes: bytes | None, meta: dict | None = None) -> str:
        self.calls_made += 1
        meta = dict(meta or {})
        meta.setdefault("model_id", self.config.model_id)
        if self.config.is_mock:
            return self._mock_complete(prompt, meta)
        return self._http_complete(prompt, image_bytes)

    def _mock_complete(self, prompt: str, meta: dict) -> str:
        kind = self.config.base_url[len("mock://"):]
        if kind == "guidance":
            return _mock_guidance_text(meta)
        if kind == "reviewer/echo":
            return "present"
        if kind == "reviewer/absent":
            return "absent"
        if kind == "timeout":
            raise TransportFailure("simulated timeout")
        raise RangeError(f"unknown mock endpoint {self.config.base_url!r}")

    def _http_complete(self, prompt: str, image_bytes: bytes | None) -> str:
        content: list[dict] = [{"type": "text", "text": prompt}]
        if image_bytes is not None:
            encoded = base64.b64encode(image_bytes).decode("ascii")
            content.append(
                {
                    "type": "image_url",
                    "image_url": {"url": f"data:image/png;base64,{encoded}"},
                }
            )
        payload = {
            "model": self.config.model_id,
            "messages": [{"role": "user", "content": content}],
            "temperature": self.config.temperature,
        }
        headers = {"Content-Type": "application/json"}
        if self.config.auth_env_var:
            token = os.environ.get(self.config.auth_env_var, "")
            if token:
                headers["Authorization"] = f"Bearer {token}"
        try:
            response = httpx.post(
                self.config.base_url,
                json=payload,
                headers=headers,
                timeout=self.config.timeout_seconds,
            )
        except httpx.HTTPError as exc:
            raise TransportFailure(str(exc)) from exc
        if response.status_code >= 500:
            raise TransportFailure(f"server error {response.status_code}")
        if response.status_code != 200:
            raise TransportFailure(f"endpoint returned {response.status_code}")
        try:
            body = response.json()
            return body["choices"][0]["message"]["content"]
        except (ValueError, KeyError, IndexError, TypeError) as exc:
            raise TransportFailure(f"malformed endpoint response: {exc}") from exc


def with_retries(client: VlmClient, prompt: str, image_bytes: bytes | None, meta: dict | None = None) -> str:
    """Call the endpoint, retrying transport failures up to config.max_retries."""
    last: Exception | None = None
    for attempt in range(client.config.max_retries + 1):
        try:
            return client.complete(prompt, image_bytes, meta)
        except TransportFailure as exc:
            last = exc
            if attempt < client.config.max_retries and client.config.backoff_seconds:
                time.sleep(client.config.backoff_seconds * (attempt + 1))
    raise last  # type: ignore[misc]
