"""Chat-completion backends for remotely served grounding models.

Two prompt protocols are supported: ``bbox-text`` (the model answers with a
pixel box in plain text) and ``tool-call`` (the model emits a ``computer_use``
tool call with a pixel coordinate). Transport failures are retried with
jittered exponential backoff; unparseable answers are not retried.
"""

from __future__ import annotations

import base64
import copy
import hashlib
import json
import logging
import os
import random
import threading
import time
from dataclasses import dataclass
from importlib import resources
from typing import Any, Callable

import httpx

from ..imaging import IMAGE_ENCODING, encode_png
from .base import AuthError, GroundingOutcome, GroundingQuery, ParseFailure, TransportError
from .parsing import PARSERS

log = logging.getLogger(__name__)

DEFAULT_TOKEN_ENV = "ZOOMGROUND_API_KEY"
PROTOCOLS = ("bbox-text", "tool-call")

_TEMPLATE_FILES = {
    "bbox-text": ("bbox_text.txt",),
    "tool-call": ("toolcall_system.txt", "toolcall_user.txt"),
}


def load_template(name: str) -> str:
    return resources.files("zoomground.grounder").joinpath("prompts", name).read_text(encoding="utf-8")


def template_hashes(protocol: str | None = None) -> dict[str, str]:
    protocols = [protocol] if protocol else list(_TEMPLATE_FILES)
    out = {}
    for p in protocols:
        for name in _TEMPLATE_FILES[p]:
            out[name] = hashlib.sha256(load_template(name).encode()).hexdigest()
    return out


def render(template: str, instruction: str) -> str:
    # str.format would trip over the JSON braces in the tool schema
    return template.replace("{instruction}", instruction).strip()


@dataclass(frozen=True)
class EndpointConfig:
    base_url: str
    model: str
    protocol: str = "bbox-text"
    timeout: float = 120.0
    retries: int = 3
    token: str | None = None
    token_env: str = DEFAULT_TOKEN_ENV
    max_in_flight: int = 8
    max_tokens: int = 256
    temperature: float = 0.0
    backoff_base: float = 0.5
    backoff_max: float = 30.0

    def __post_init__(self):
        if self.protocol not in PROTOCOLS:
            raise ValueError(f"protocol must be one of {PROTOCOLS}, got {self.protocol!r}")
        if self.retries < 0:
            raise ValueError("retry budget must be >= 0")
        if self.timeout <= 0:
            raise ValueError("timeout must be > 0")
        if self.max_in_flight < 1:
            raise ValueError("max_in_flight must be >= 1")

    def resolved_token(self) -> str | None:
        return self.token or os.environ.get(self.token_env) or None


def _elide_images(payload: dict) -> dict:
    slim = copy.deepcopy(payload)
    for msg in slim.get("messages", []):
        content = msg.get("content")
        if isinstance(content, list):
            for part in content:
                if part.get("type") == "image_url":
                    url = part["image_url"]["url"]
                    part["image_url"]["url"] = f"<image elided, {len(url)} chars>"
    return slim


def _message_text(body: dict) -> str:
    """Pull the assistant answer out of a chat-completion body.

    Native ``tool_calls`` are re-serialized into ``<tool_call>`` text so a
    single parser handles both endpoint styles.
    """
    message = body["choices"][0]["message"]
    calls = message.get("tool_calls") or []
    if calls:
        fn = calls[0].get("function", {})
        args = fn.get("arguments")
        if isinstance(args, str):
            try:
                args = json.loads(args)
            except json.JSONDecodeError:
                pass
        return "<tool_call>" + json.dumps({"name": fn.get("name"), "arguments": args}) + "</tool_call>"
    content = message.get("content")
    if isinstance(content, list):
        content = "".join(p.get("text", "") for p in content if isinstance(p, dict))
    if not isinstance(content, str):
        raise TypeError("no text content")
    return content


class HttpGrounder:
    def __init__(
        self,
        config: EndpointConfig,
        client: httpx.Client | None = None,
        sleep: Callable[[float], None] = time.sleep,
        rng: random.Random | None = None,
    ):
        self.config = config
        self.client = client or httpx.Client(timeout=config.timeout)
        self._sleep = sleep
        self._rng = rng or random.Random()
        self._slots = threading.BoundedSemaphore(config.max_in_flight)
        self._parse = PARSERS[config.protocol]
        if config.protocol == "bbox-text":
            self._templates = (load_template("bbox_text.txt"),)
        else:
            self._templates = (load_template("toolcall_system.txt"), load_template("toolcall_user.txt"))

    @property
    def url(self) -> str:
        return self.config.base_url.rstrip("/") + "/chat/completions"

    def build_request(self, query: GroundingQuery) -> dict[str, Any]:
        data = base64.b64encode(encode_png(query.image)).decode("ascii")
        image_part = {"type": "image_url", "image_url": {"url": f"data:image/png;base64,{data}"}}
        if self.config.protocol == "bbox-text":
            messages = [
                {
                    "role": "user",
                    "content": [image_part, {"type": "text", "text": render(self._templates[0], query.instruction)}],
                }
            ]
        else:
            system, user = self._templates
            messages = [
                {"role": "system", "content": system.strip()},
                {"role": "user", "content": [image_part, {"type": "text", "text": render(user, query.instruction)}]},
            ]
        return {
            "model": self.config.model,
            "messages": messages,
            "max_tokens": self.config.max_tokens,
            "temperature": self.config.temperature,
        }

    def _backoff(self, attempt: int) -> float:
        delay = min(self.config.backoff_base * 2**attempt, self.config.backoff_max)
        return delay * (0.5 + self._rng.random())

    def _headers(self) -> dict[str, str]:
        token = self.config.resolved_token()
        return {"Authorization": f"Bearer {token}"} if token else {}

    def _post(self, payload: dict) -> httpx.Response:
        last: str = ""
        for attempt in range(self.config.retries + 1):
            if attempt:
                self._sleep(self._backoff(attempt - 1))
            try:
                with self._slots:
                    resp = self.client.post(
                        self.url, json=payload, headers=self._headers(), timeout=self.config.timeout
                    )
            except httpx.HTTPError as exc:
                last = f"{type(exc).__name__}: {exc}"
                log.warning("request to %s failed (attempt %d): %s", self.url, attempt + 1, last)
                continue
            if resp.status_code in (401, 403):
                raise AuthError(
                    f"endpoint {self.url} rejected credentials (HTTP {resp.status_code}); "
                    f"set a valid token in ${self.config.token_env}",
                    env_var=self.config.token_env,
                )
            if resp.status_code == 429 or resp.status_code >= 500:
                last = f"HTTP {resp.status_code}"
                log.warning("endpoint %s returned %s (attempt %d)", self.url, last, attempt + 1)
                continue
            if resp.status_code >= 400:
                raise TransportError(f"endpoint {self.url} returned HTTP {resp.status_code}: {resp.text[:200]}")
            return resp
        raise TransportError(f"endpoint {self.url} failed after {self.config.retries + 1} attempts ({last})")

    def ground(self, query: GroundingQuery) -> GroundingOutcome:
        payload = self.build_request(query)
        log.debug("request %s", json.dumps(_elide_images(payload)))
        resp = self._post(payload)
        log.debug("response %s", resp.text)
        try:
            text = _message_text(resp.json())
        except (ValueError, KeyError, IndexError, TypeError, AttributeError):
            return ParseFailure(resp.text)
        return self._parse(text, query.width, query.height)

    def identity(self) -> dict:
        return {
            "kind": f"http-{'bbox' if self.config.protocol == 'bbox-text' else 'toolcall'}",
            "base_url": self.config.base_url,
            "model": self.config.model,
            "protocol": self.config.protocol,
            "image_encoding": IMAGE_ENCODING,
            "prompt_templates": template_hashes(self.config.protocol),
        }
