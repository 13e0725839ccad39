"""Uniform access to multimodal completion and image-embedding endpoints.

Every request is content-addressed so runs can be recorded once and replayed
offline byte-for-byte. Replay mode never touches the network; record mode is
append-only unless overwriting is explicitly requested.
"""

from __future__ import annotations

import base64
import json
import os
import tempfile
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Protocol

from .errors import ConfigError, ReplayMissError, TransportError
from .images import RasterImage, content_hash, encode_png

LIVE = "live"
RECORD = "record"
REPLAY = "replay"

FINISH_COMPLETE = "complete"
FINISH_TRUNCATED = "truncated"
FINISH_REFUSED = "refused"
FINISH_ERROR = "error"

_PNG_MAGIC = b"\x89PNG\r\n\x1a\n"


@dataclass(frozen=True)
class TextPart:
    text: str


@dataclass(frozen=True)
class ImagePart:
    png: bytes

    def __post_init__(self) -> None:
        if not self.png.startswith(_PNG_MAGIC):
            raise ValueError("image parts must be PNG bytes")


Part = TextPart | ImagePart


@dataclass(frozen=True)
class ModelRequest:
    model_id: str
    parts: tuple[Part, ...]
    temperature: float = 0.0
    max_output_tokens: int = 8192

    def __post_init__(self) -> None:
        if not self.model_id:
            raise ValueError("model_id must be non-empty")
        if not self.parts:
            raise ValueError("a request needs at least one part")
        if self.temperature < 0:
            raise ValueError("temperature must be >= 0")
        if self.max_output_tokens < 1:
            raise ValueError("max_output_tokens must be positive")


@dataclass(frozen=True)
class ModelResponse:
    text: str
    finish_class: str = FINISH_COMPLETE
    error_message: str = ""

    def __post_init__(self) -> None:
        if self.finish_class not in (FINISH_COMPLETE, FINISH_TRUNCATED, FINISH_REFUSED, FINISH_ERROR):
            raise ValueError(f"unknown finish class {self.finish_class!r}")
        if not self.text and self.finish_class == FINISH_COMPLETE:
            raise ValueError("an empty response cannot be marked complete")


@dataclass(frozen=True)
class EmbeddingVector:
    values: tuple[float, ...]
    model_id: str

    def __post_init__(self) -> None:
        if not self.values:
            raise ValueError("embedding vectors must be non-empty")


def cache_key(req: ModelRequest) -> str:
    """Content hash of everything that can change a response.

    Covers model id, sampling settings, the ordered part kinds, text bytes and
    image content hashes; independent of wall clock and object identity.
    """
    parts: list[list[str]] = []
    for part in req.parts:
        if isinstance(part, TextPart):
            parts.append(["text", part.text])
        else:
            parts.append(["image", content_hash(part.png)])
    canonical = json.dumps(
        {
            "kind": "completion",
            "model_id": req.model_id,
            "temperature": req.temperature,
            "max_output_tokens": req.max_output_tokens,
            "parts": parts,
        },
        sort_keys=True,
        separators=(",", ":"),
        ensure_ascii=False,
    )
    return content_hash(canonical.encode("utf-8"))


def embedding_cache_key(model_id: str, png: bytes) -> str:
    canonical = json.dumps(
        {"kind": "embedding", "model_id": model_id, "image": content_hash(png)},
        sort_keys=True,
        separators=(",", ":"),
    )
    return content_hash(canonical.encode("utf-8"))


class Provider(Protocol):
    """Live backend: one multimodal completion endpoint, one embedding endpoint."""

    def complete(self, req: ModelRequest) -> ModelResponse: ...

    def embed(self, model_id: str, png: bytes) -> tuple[float, ...]: ...


class HttpProvider:
    """OpenAI-compatible JSON-over-HTTPS provider.

    ``POST {base_url}/chat/completions`` with data-URL images and
    ``POST {base_url}/embeddings``; the API key is read from the environment
    variable named in the config, never stored.
    """

    MAX_RETRIES = 3

    def __init__(self, base_url: str, api_key_env: str, timeout_s: float = 120.0):
        if not base_url:
            raise ConfigError("provider.base_url is not configured", key="provider.base_url")
        self.base_url = base_url.rstrip("/")
        self.timeout_s = timeout_s
        self._api_key = os.environ.get(api_key_env, "") if api_key_env else ""
        self._api_key_env = api_key_env

    def _headers(self) -> dict[str, str]:
        headers = {"Content-Type": "application/json"}
        if self._api_key:
            headers["Authorization"] = f"Bearer {self._api_key}"
        return headers

    def _post(self, path: str, payload: dict) -> dict:
        # Retries cover transient transport failures only (connection errors,
        # 5xx); 4xx responses are definitive and surface immediately.
        import requests

        for attempt in range(self.MAX_RETRIES + 1):
            try:
                resp = requests.post(
                    f"{self.base_url}{path}",
                    json=payload,
                    headers=self._headers(),
                    timeout=self.timeout_s,
                )
            except requests.RequestException as exc:
                if attempt == self.MAX_RETRIES:
                    raise TransportError(f"provider unreachable: {exc}", retries=attempt) from exc
                time.sleep(0.5 * 2**attempt)
                continue
            if resp.status_code >= 500:
                if attempt == self.MAX_RETRIES:
                    raise TransportError(f"HTTP {resp.status_code} from provider", retries=attempt)
                time.sleep(0.5 * 2**attempt)
                continue
            if resp.status_code >= 400:
                raise TransportError(
                    f"HTTP {resp.status_code} from provider: {resp.text[:500]}", retries=attempt
                )
            return resp.json()
        raise TransportError("provider unreachable", retries=self.MAX_RETRIES)

    def complete(self, req: ModelRequest) -> ModelResponse:
        content: list[dict] = []
        for part in req.parts:
            if isinstance(part, TextPart):
                content.append({"type": "text", "text": part.text})
            else:
                url = "data:image/png;base64," + base64.b64encode(part.png).decode("ascii")
                content.append({"type": "image_url", "image_url": {"url": url}})
        body = self._post(
            "/chat/completions",
            {
                "model": req.model_id,
                "temperature": req.temperature,
                "max_tokens": req.max_output_tokens,
                "messages": [{"role": "user", "content": content}],
            },
        )
        try:
            choice = body["choices"][0]
            text = choice["message"].get("content") or ""
            finish = choice.get("finish_reason", "stop")
        except (KeyError, IndexError, TypeError) as exc:
            raise TransportError(f"malformed provider response: {exc}") from exc
        finish_class = {
            "stop": FINISH_COMPLETE,
            "length": FINISH_TRUNCATED,
            "content_filter": FINISH_REFUSED,
        }.get(finish, FINISH_ERROR)
        if not text and finish_class == FINISH_COMPLETE:
            finish_class = FINISH_REFUSED
        return ModelResponse(text=text, finish_class=finish_class)

    def embed(self, model_id: str, png: bytes) -> tuple[float, ...]:
        url = "data:image/png;base64," + base64.b64encode(png).decode("ascii")
        body = self._post("/embeddings", {"model": model_id, "input": [url]})
        try:
            return tuple(float(v) for v in body["data"][0]["embedding"])
        except (KeyError, IndexError, TypeError, ValueError) as exc:
            raise TransportError(f"malformed embedding response: {exc}") from exc


def _atomic_write_json(path: Path, payload: dict) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8") as fh:
            json.dump(payload, fh, ensure_ascii=False, indent=1)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _request_summary(req: ModelRequest) -> dict:
    parts = []
    for part in req.parts:
        if isinstance(part, TextPart):
            parts.append({"type": "text", "text": part.text})
        else:
            parts.append({"type": "image", "sha256": content_hash(part.png)})
    return {
        "model_id": req.model_id,
        "temperature": req.temperature,
        "max_output_tokens": req.max_output_tokens,
        "parts": parts,
    }


class Gateway:
    """Mode-aware front door for completions and embeddings.

    live: call the provider, nothing persisted.
    record: call the provider and persist one JSON entry per key (append-only).
    replay: serve entries from the cache; a missing key is an error.
    """

    def __init__(
        self,
        mode: str,
        cache_dir: str | Path | None = None,
        provider: Provider | None = None,
        overwrite: bool = False,
    ):
        if mode not in (LIVE, RECORD, REPLAY):
            raise ValueError(f"unknown gateway mode {mode!r}")
        if mode in (LIVE, RECORD) and provider is None:
            raise ConfigError(f"gateway mode {mode!r} requires a provider", key="provider.base_url")
        if mode in (RECORD, REPLAY) and cache_dir is None:
            raise ConfigError(f"gateway mode {mode!r} requires a cache directory", key="gateway.cache_dir")
        self.mode = mode
        self.cache_dir = Path(cache_dir) if cache_dir is not None else None
        self.provider = provider
        self.overwrite = overwrite
        self.completions_served = 0
        self.embeddings_served = 0

    def _entry_path(self, key: str) -> Path:
        assert self.cache_dir is not None
        return self.cache_dir / key[:2] / f"{key}.json"

    def _load_entry(self, key: str) -> dict | None:
        path = self._entry_path(key)
        if not path.is_file():
            return None
        return json.loads(path.read_text(encoding="utf-8"))

    def complete(self, req: ModelRequest) -> ModelResponse:
        key = cache_key(req)
        if self.mode == REPLAY:
            entry = self._load_entry(key)
            if entry is None:
                raise ReplayMissError(key)
            resp = entry["response"]
            self.completions_served += 1
            return ModelResponse(
                text=resp["text"],
                finish_class=resp["finish_class"],
                error_message=resp.get("error_message", ""),
            )

        if self.mode == RECORD and not self.overwrite:
            entry = self._load_entry(key)
            if entry is not None:
                self.completions_served += 1
                resp = entry["response"]
                return ModelResponse(
                    text=resp["text"],
                    finish_class=resp["finish_class"],
                    error_message=resp.get("error_message", ""),
                )

        assert self.provider is not None
        response = self.provider.complete(req)
        if self.mode == RECORD:
            _atomic_write_json(
                self._entry_path(key),
                {
                    "kind": "completion",
                    "key": key,
                    "request": _request_summary(req),
                    "response": {
                        "text": response.text,
                        "finish_class": response.finish_class,
                        "error_message": response.error_message,
                    },
                },
            )
        self.completions_served += 1
        return response

    def embed_image(self, img: RasterImage, model_id: str) -> EmbeddingVector:
        png = encode_png(img)
        key = embedding_cache_key(model_id, png)
        if self.mode == REPLAY:
            entry = self._load_entry(key)
            if entry is None:
                raise ReplayMissError(key)
            self.embeddings_served += 1
            return EmbeddingVector(values=tuple(entry["values"]), model_id=model_id)

        if self.mode == RECORD and not self.overwrite:
            entry = self._load_entry(key)
            if entry is not None:
                self.embeddings_served += 1
                return EmbeddingVector(values=tuple(entry["values"]), model_id=model_id)

        assert self.provider is not None
        values = self.provider.embed(model_id, png)
        if self.mode == RECORD:
            _atomic_write_json(
                self._entry_path(key),
                {
                    "kind": "embedding",
                    "key": key,
                    "model_id": model_id,
                    "image_sha256": content_hash(png),
                    "values": list(values),
                },
            )
        self.embeddings_served += 1
        return EmbeddingVector(values=tuple(values), model_id=model_id)


def make_parts(*items: str | bytes | RasterImage) -> tuple[Part, ...]:
    """Convenience: strings become text parts, rasters/bytes become PNG parts."""
    parts: list[Part] = []
    for item in items:
        if isinstance(item, str):
            parts.append(TextPart(item))
        elif isinstance(item, RasterImage):
            parts.append(ImagePart(encode_png(item)))
        else:
            parts.append(ImagePart(item))
    return tuple(parts)
