"""Vision-chat transport: multi-image requests, retries, rate limiting, caching.

Requests go to an OpenAI-compatible chat-completions endpoint as mixed
text+image content with base64-encoded PNGs. Every request carries exactly
one sample (single testing); batch construction is not expressible through
this API because multi-sample requests are known to misalign results.
Responses are cached one file per request key before being returned, so an
interrupted run never re-sends work it already paid for.
"""

from __future__ import annotations

import base64
import hashlib
import json
import os
import threading
import time
from collections import deque
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Sequence

import requests
from PIL import Image

from .manifest import CategorySet, SampleRecord
from .media import encode_png

DEFAULT_REFUSAL_PATTERNS = ("not allowed by our safety system",)

MODALITY_MEDIA_COUNT = {"image": 1, "video": 8, "pointcloud": 6}

RETRYABLE_STATUSES = {429, 500, 502, 503, 504}


class VlmError(Exception):
    pass


class MediaCountError(VlmError):
    """Image count does not match the modality contract."""


class TransportError(VlmError):
    pass


class ExhaustedRetries(TransportError):
    pass


class AuthError(TransportError):
    """401/403 from the endpoint; retrying cannot help."""


@dataclass(frozen=True)
class TransportPolicy:
    max_retries: int = 4
    base_backoff: float = 1.0
    requests_per_minute: int = 60
    timeout: float = 60.0
    concurrency_limit: int = 4

    def __post_init__(self):
        if (
            self.max_retries < 0
            or self.base_backoff <= 0
            or self.requests_per_minute < 1
            or self.timeout <= 0
            or self.concurrency_limit < 1
        ):
            raise ValueError("transport policy fields must be positive")


@dataclass
class CostLedger:
    """Thread-safe token counters with linear pricing."""

    price_per_1k_prompt: float = 0.0
    price_per_1k_completion: float = 0.0
    prompt_tokens: int = 0
    completion_tokens: int = 0

    def __post_init__(self):
        self._lock = threading.Lock()

    def add_usage(self, prompt_tokens: int, completion_tokens: int) -> None:
        with self._lock:
            self.prompt_tokens += prompt_tokens
            self.completion_tokens += completion_tokens

    @property
    def total(self) -> float:
        return (
            self.prompt_tokens / 1000.0 * self.price_per_1k_prompt
            + self.completion_tokens / 1000.0 * self.price_per_1k_completion
        )


def estimate_cost(ledger: CostLedger) -> float:
    """Exact linear combination of accumulated tokens and configured prices."""
    return ledger.total


@dataclass(frozen=True)
class RawResponse:
    text: str
    prompt_tokens: int
    completion_tokens: int
    refusal: bool
    request_id: str


@dataclass(frozen=True)
class VisionRequest:
    model_name: str
    prompt_text: str
    images: tuple[bytes, ...]  # PNG payloads
    sample_hash: str
    detail_level: str = "low"


def detect_refusal(
    text: str, patterns: Sequence[str] = DEFAULT_REFUSAL_PATTERNS
) -> bool:
    """Case-insensitive match against the configured refusal phrases."""
    lowered = text.lower()
    return any(p.lower() in lowered for p in patterns)


def modality_framing(modality: str, count: int) -> str:
    if modality == "image":
        return "a single image"
    if modality == "video":
        return f"{count} frames uniformly sampled from a video"
    return f"{count} rendered views of a 3D object"


def _downscale(image: Image.Image, longest_side: int) -> Image.Image:
    w, h = image.size
    longest = max(w, h)
    if longest <= longest_side:
        return image
    scale = longest_side / longest
    return image.resize(
        (max(1, round(w * scale)), max(1, round(h * scale))), Image.LANCZOS
    )


def build_vision_request(
    sample: SampleRecord,
    media: Sequence[Image.Image | bytes],
    categories: CategorySet,
    model_name: str,
    detail_level: str = "low",
    downscale_to: int | None = 512,
    expected_count: int | None = None,
) -> VisionRequest:
    """Build the single-sample top-5 ranking request for one media set.

    The prompt embeds the category names verbatim, frames the media by
    modality, and asks for a dictionary keyed by the hashed sample ID whose
    value is the 5 most relevant categories, best first.
    """
    expected = (
        expected_count
        if expected_count is not None
        else MODALITY_MEDIA_COUNT[sample.modality]
    )
    if len(media) != expected:
        raise MediaCountError(
            f"{sample.modality} sample needs {expected} media items, got {len(media)}"
        )
    payloads = []
    for item in media:
        if isinstance(item, bytes):
            payloads.append(item)
        else:
            if downscale_to is not None:
                item = _downscale(item, downscale_to)
            payloads.append(encode_png(item))

    framing = modality_framing(sample.modality, expected)
    names = json.dumps(list(categories.categories), ensure_ascii=False)
    pick = min(5, len(categories))
    prompt = (
        f"You are given {framing} to classify.\n"
        f"Candidate categories: {names}\n"
        f"Select the {pick} categories most relevant to the visual content, "
        f"sorted from most to least relevant. Use only names from the candidate "
        f"list, exactly as written.\n"
        f'Respond with a dictionary mapping the sample ID "{sample.hashed_id}" '
        f"to the list of {pick} category names, for example: "
        f'{{"{sample.hashed_id}": ["category", ...]}}'
    )
    return VisionRequest(model_name, prompt, tuple(payloads), sample.hashed_id, detail_level)


def cache_key(request: VisionRequest) -> str:
    h = hashlib.sha256()
    h.update(request.model_name.encode("utf-8"))
    h.update(b"\x00")
    h.update(request.prompt_text.encode("utf-8"))
    for img in request.images:
        h.update(b"\x00")
        h.update(hashlib.sha256(img).digest())
    return h.hexdigest()


class ResponseCache:
    """One JSON file per response under <dir>/<model>/<key-prefix>/<key>."""

    def __init__(self, directory: str | Path):
        self._dir = Path(directory)

    def _path(self, model_name: str, key: str) -> Path:
        safe_model = model_name.replace("/", "_") or "default"
        return self._dir / safe_model / key[:2] / f"{key}.json"

    def get(self, model_name: str, key: str) -> RawResponse | None:
        path = self._path(model_name, key)
        if not path.exists():
            return None
        doc = json.loads(path.read_text(encoding="utf-8"))
        usage = doc.get("usage", {})
        return RawResponse(
            text=doc["text"],
            prompt_tokens=int(usage.get("prompt_tokens", 0)),
            completion_tokens=int(usage.get("completion_tokens", 0)),
            refusal=bool(doc.get("refusal", False)),
            request_id=doc.get("request_id", ""),
        )

    def put(self, model_name: str, key: str, response: RawResponse) -> None:
        path = self._path(model_name, key)
        path.parent.mkdir(parents=True, exist_ok=True)
        doc = {
            "timestamp": time.time(),
            "usage": {
                "prompt_tokens": response.prompt_tokens,
                "completion_tokens": response.completion_tokens,
            },
            "refusal": response.refusal,
            "request_id": response.request_id,
            "text": response.text,
        }
        tmp = path.with_name(path.name + ".tmp")
        tmp.write_text(json.dumps(doc, ensure_ascii=False), encoding="utf-8")
        os.replace(tmp, path)


class RateLimiter:
    """Sliding-window limiter: at most N dispatches in any 60-second window."""

    def __init__(
        self,
        requests_per_minute: int,
        time_fn: Callable[[], float] = time.monotonic,
        sleep_fn: Callable[[float], None] = time.sleep,
    ):
        self._rpm = requests_per_minute
        self._time = time_fn
        self._sleep = sleep_fn
        self._stamps: deque[float] = deque()
        self._lock = threading.Lock()

    def acquire(self) -> None:
        while True:
            with self._lock:
                now = self._time()
                while self._stamps and now - self._stamps[0] >= 60.0:
                    self._stamps.popleft()
                if len(self._stamps) < self._rpm:
                    self._stamps.append(now)
                    return
                wait = 60.0 - (now - self._stamps[0])
            self._sleep(max(wait, 1e-3))


class _Transport:
    """Shared POST-with-retries machinery for chat endpoints."""

    def __init__(
        self,
        endpoint: str,
        policy: TransportPolicy,
        api_key_env: str = "VLM_API_KEY",
        session: requests.Session | None = None,
        ledger: CostLedger | None = None,
        time_fn: Callable[[], float] = time.monotonic,
        sleep_fn: Callable[[float], None] = time.sleep,
    ):
        self.endpoint = endpoint
        self.policy = policy
        self.ledger = ledger
        self._api_key_env = api_key_env
        self._session = session or requests.Session()
        self._sleep = sleep_fn
        self._limiter = RateLimiter(policy.requests_per_minute, time_fn, sleep_fn)

    def _headers(self) -> dict[str, str]:
        headers = {"Content-Type": "application/json"}
        key = os.environ.get(self._api_key_env)
        if key:
            headers["Authorization"] = f"Bearer {key}"
        return headers

    def post_chat(self, payload: dict) -> dict:
        """POST with exponential backoff on 429/5xx/timeouts; returns JSON body."""
        policy = self.policy
        last_error = "no attempt made"
        for attempt in range(policy.max_retries + 1):
            self._limiter.acquire()
            try:
                resp = self._session.post(
                    self.endpoint,
                    json=payload,
                    headers=self._headers(),
                    timeout=policy.timeout,
                )
            except requests.RequestException as exc:
                last_error = str(exc)
            else:
                if resp.status_code == 200:
                    try:
                        data = resp.json()
                    except ValueError:
                        # truncated/garbled body; treat like a transient failure
                        last_error = "unparseable response body"
                    else:
                        if self.ledger is not None:
                            usage = data.get("usage", {})
                            self.ledger.add_usage(
                                int(usage.get("prompt_tokens", 0)),
                                int(usage.get("completion_tokens", 0)),
                            )
                        return data
                elif resp.status_code in (401, 403):
                    raise AuthError(f"endpoint rejected credentials (HTTP {resp.status_code})")
                elif resp.status_code not in RETRYABLE_STATUSES:
                    raise TransportError(f"endpoint returned HTTP {resp.status_code}")
                else:
                    last_error = f"HTTP {resp.status_code}"
            if attempt < policy.max_retries:
                self._sleep(policy.base_backoff * 2**attempt)
        raise ExhaustedRetries(
            f"gave up after {policy.max_retries + 1} attempts (last: {last_error})"
        )


def _message_content(data: dict) -> str:
    try:
        content = data["choices"][0]["message"]["content"]
    except (KeyError, IndexError, TypeError) as exc:
        raise TransportError(f"endpoint response missing message content: {exc}") from exc
    if not isinstance(content, str):
        raise TransportError("endpoint returned non-text message content")
    return content


class ChatTransport(_Transport):
    """Text-only chat calls (description generation) sharing the vision policy."""

    def __init__(self, endpoint: str, model_name: str, policy: TransportPolicy, **kwargs):
        super().__init__(endpoint, policy, **kwargs)
        self.model_name = model_name

    def chat(self, request: dict) -> str:
        payload = dict(request)
        payload.setdefault("model", self.model_name)
        return _message_content(self.post_chat(payload))


class VlmClient(_Transport):
    """Single-sample vision requests with response caching and refusal tagging."""

    def __init__(
        self,
        endpoint: str,
        policy: TransportPolicy,
        cache: ResponseCache | None = None,
        refusal_patterns: Sequence[str] = DEFAULT_REFUSAL_PATTERNS,
        **kwargs,
    ):
        super().__init__(endpoint, policy, **kwargs)
        self.cache = cache
        self.refusal_patterns = tuple(refusal_patterns)

    def execute(self, request: VisionRequest) -> RawResponse:
        """Serve from cache when possible; otherwise send, then cache first."""
        key = cache_key(request)
        if self.cache is not None:
            hit = self.cache.get(request.model_name, key)
            if hit is not None:
                return hit

        content: list[dict] = [{"type": "text", "text": request.prompt_text}]
        for img in request.images:
            encoded = base64.b64encode(img).decode("ascii")
            content.append(
                {
                    "type": "image_url",
                    "image_url": {
                        "url": f"data:image/png;base64,{encoded}",
                        "detail": request.detail_level,
                    },
                }
            )
        payload = {
            "model": request.model_name,
            "messages": [{"role": "user", "content": content}],
        }
        data = self.post_chat(payload)
        text = _message_content(data)
        usage = data.get("usage", {})
        response = RawResponse(
            text=text,
            prompt_tokens=int(usage.get("prompt_tokens", 0)),
            completion_tokens=int(usage.get("completion_tokens", 0)),
            refusal=detect_refusal(text, self.refusal_patterns),
            request_id=str(data.get("id", "")),
        )
        if self.cache is not None:
            self.cache.put(request.model_name, key, response)
        return response
