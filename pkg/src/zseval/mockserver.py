"""Local mock embedding and vision-chat servers.

Deterministic stand-ins for the two remote services so the whole pipeline
runs offline: embeddings are seeded from content hashes, chat responses are
derived from the request body. Both servers record request-body hashes,
which tests use for call counting and duplicate detection.
"""

from __future__ import annotations

import hashlib
import json
import random
import re
import threading
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer

import numpy as np

_KEY_IN_PROMPT = re.compile(r'"([0-9a-f]{16})"')
_CATEGORY_LIST = re.compile(r"Candidate categories: (\[.*?\])", re.DOTALL)
_SENTENCE_COUNT = re.compile(r"exactly (\d+) numbered")
_QUOTED = re.compile(r'"([^"]+)"')

REFUSAL_TEXT = (
    "Your input image may contain content that is not allowed by our safety system."
)


class MockService:
    """A ThreadingHTTPServer on an ephemeral loopback port."""

    def __init__(self, handler_cls):
        self._server = ThreadingHTTPServer(("127.0.0.1", 0), handler_cls)
        self._thread = threading.Thread(target=self._server.serve_forever, daemon=True)
        self._lock = threading.Lock()
        self.request_count = 0
        self.body_hashes: list[str] = []

    @property
    def url(self) -> str:
        host, port = self._server.server_address[:2]
        return f"http://{host}:{port}"

    def start(self) -> "MockService":
        self._thread.start()
        return self

    def stop(self) -> None:
        self._server.shutdown()
        self._server.server_close()

    def record(self, body: bytes) -> None:
        with self._lock:
            self.request_count += 1
            self.body_hashes.append(hashlib.sha256(body).hexdigest())

    def duplicate_bodies(self) -> list[str]:
        with self._lock:
            seen: set[str] = set()
            dupes = []
            for h in self.body_hashes:
                if h in seen:
                    dupes.append(h)
                seen.add(h)
            return dupes


class _BaseHandler(BaseHTTPRequestHandler):
    def log_message(self, *args):  # quiet
        pass

    def _read_body(self) -> bytes:
        length = int(self.headers.get("Content-Length", "0"))
        return self.rfile.read(length)

    def _send_json(self, doc: dict, status: int = 200) -> None:
        payload = json.dumps(doc).encode("utf-8")
        self.send_response(status)
        self.send_header("Content-Type", "application/json")
        self.send_header("Content-Length", str(len(payload)))
        self.end_headers()
        self.wfile.write(payload)


def _seeded_unit_vector(seed_material: bytes, dimension: int) -> list[float]:
    seed = int.from_bytes(hashlib.sha256(seed_material).digest()[:8], "big")
    rng = np.random.default_rng(seed)
    vec = rng.standard_normal(dimension)
    vec /= np.linalg.norm(vec)
    return [float(v) for v in vec]


class MockEmbeddingService(MockService):
    """Serves {"kind", "items"} -> {"dimension", "vectors"} deterministically."""

    def __init__(self, dimension: int = 64):
        self.dimension = dimension

        service = self

        class Handler(_BaseHandler):
            def do_POST(self):
                body = self._read_body()
                service.record(body)
                doc = json.loads(body)
                kind = doc.get("kind", "text")
                vectors = [
                    _seeded_unit_vector(
                        f"{kind}:".encode("utf-8") + str(item).encode("utf-8"),
                        service.dimension,
                    )
                    for item in doc.get("items", [])
                ]
                self._send_json({"dimension": service.dimension, "vectors": vectors})

        super().__init__(Handler)


class MockVlmService(MockService):
    """OpenAI-compatible chat endpoint with deterministic answers.

    Vision requests (image parts present) get a top-5 mapping keyed by the
    sample hash found in the prompt; text-only requests get numbered
    description sentences. `fail_plan` injects HTTP statuses consumed one per
    request before normal handling; `refuse_if_prompt_contains` triggers the
    safety-refusal sentence.
    """

    def __init__(
        self,
        fail_plan: list[int] | None = None,
        refuse_if_prompt_contains: str | None = None,
        fail_after: int | None = None,
    ):
        self.fail_plan = list(fail_plan or [])
        self.refuse_if_prompt_contains = refuse_if_prompt_contains
        self.fail_after = fail_after
        self._plan_lock = threading.Lock()

        service = self

        class Handler(_BaseHandler):
            def do_POST(self):
                body = self._read_body()
                with service._plan_lock:
                    planned = service.fail_plan.pop(0) if service.fail_plan else None
                    served = service.request_count
                service.record(body)
                if planned is not None and planned != 200:
                    self._send_json({"error": "scripted failure"}, status=planned)
                    return
                if service.fail_after is not None and served >= service.fail_after:
                    self._send_json({"error": "scripted outage"}, status=500)
                    return
                doc = json.loads(body)
                text = service.respond(doc, body)
                prompt_len = len(json.dumps(doc.get("messages", [])))
                answer = {
                    "id": "mock-" + hashlib.sha256(body).hexdigest()[:12],
                    "choices": [
                        {"message": {"role": "assistant", "content": text}}
                    ],
                    "usage": {
                        "prompt_tokens": prompt_len // 4,
                        "completion_tokens": len(text) // 4,
                    },
                }
                self._send_json(answer)

        super().__init__(Handler)

    def respond(self, doc: dict, body: bytes) -> str:
        prompt_parts: list[str] = []
        image_count = 0
        for message in doc.get("messages", []):
            content = message.get("content", "")
            if isinstance(content, str):
                prompt_parts.append(content)
                continue
            for part in content:
                if part.get("type") == "text":
                    prompt_parts.append(part.get("text", ""))
                elif part.get("type") == "image_url":
                    image_count += 1
        prompt = "\n".join(prompt_parts)

        if (
            self.refuse_if_prompt_contains
            and self.refuse_if_prompt_contains in prompt
        ):
            return REFUSAL_TEXT

        if image_count:
            return self._rank_categories(prompt, body)
        return self._describe(prompt)

    def _rank_categories(self, prompt: str, body: bytes) -> str:
        key_match = _KEY_IN_PROMPT.search(prompt)
        key = key_match.group(1) if key_match else "unknown"
        list_match = _CATEGORY_LIST.search(prompt)
        categories = json.loads(list_match.group(1)) if list_match else ["unknown"]
        rng = random.Random(hashlib.sha256(body).digest())
        picks = rng.sample(categories, k=min(5, len(categories)))
        return json.dumps({key: picks})

    def _describe(self, prompt: str) -> str:
        count_match = _SENTENCE_COUNT.search(prompt)
        count = int(count_match.group(1)) if count_match else 1
        name_match = _QUOTED.search(prompt)
        name = name_match.group(1) if name_match else "the subject"
        lines = [
            f"{i}. A {name} with distinctive visible trait number {i}."
            for i in range(1, count + 1)
        ]
        return "\n".join(lines)
