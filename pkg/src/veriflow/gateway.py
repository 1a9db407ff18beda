"""Provider gateway: every external call goes through here.

The pipeline talks to four logical providers (a multimodal model, a web
search service, a reverse image search service, and a fact-check
database).  Each call is keyed by (provider, operation, payload digest)
and routed according to the gateway mode:

* Live:   call the adapter, validate, return.  No cache involvement.
* Record: call the adapter, validate, persist response bytes plus a
          metadata sidecar, return.
* Replay: serve from the cache only; a miss raises ReplayMiss and the
          network is never touched.
* Mock:   identical mechanics to Replay, for hand-authored fixtures.

Cache layout: ``<root>/<provider>/<operation>/<digest>.resp`` with a
JSON ``.meta`` sidecar recording the stored response digest.  Writes go
to a temp file first and are renamed into place, so a crash cannot leave
a half-written entry.  All provider responses pass schema validation
before leaving the gateway; downstream modules never see raw bytes.
"""

from __future__ import annotations

import base64
import datetime as dt
import enum
import json
import os
import time
from dataclasses import dataclass, field
from hashlib import sha256
from pathlib import Path
from typing import TYPE_CHECKING, Mapping, Protocol

from .errors import VeriflowError

if TYPE_CHECKING:
    from .media import FrameDescription

DIGEST_HEX_LEN = 64

OP_DESCRIBE_VIDEO = "describe_video"
OP_EXTRACT_CLAIMS = "extract_claims"
OP_EXTRACT_SOURCE_DETAILS = "extract_source_details"
OP_SEARCH = "search"
OP_FETCH_PAGE = "fetch_page"
OP_LOOKUP = "lookup"

_HTTP_ATTEMPTS = 3
_HTTP_BACKOFF_S = 0.5
_HTTP_TIMEOUT_S = 30.0


def canonical_json(value: object) -> str:
    """Serialize a value to the project-wide canonical JSON form."""
    return json.dumps(value, sort_keys=True, ensure_ascii=True, separators=(",", ":"))


def sha256_hex(data: bytes) -> str:
    """The project-wide content digest: lowercase hex SHA-256."""
    return sha256(data).hexdigest()


class ReplayMiss(VeriflowError):
    """A cache-only mode was asked for a request that was never recorded."""


class ProviderUnavailable(VeriflowError):
    """A live provider call failed after retries or had no adapter."""


class CacheCorrupt(VeriflowError):
    """A cache entry's stored digest does not match its content."""


class MalformedProviderResponse(VeriflowError):
    """A provider response failed schema validation."""


class GatewayMode(enum.Enum):
    LIVE = "Live"
    RECORD = "Record"
    REPLAY = "Replay"
    MOCK = "Mock"

    @property
    def uses_cache_only(self) -> bool:
        return self in (GatewayMode.REPLAY, GatewayMode.MOCK)


class Provider(enum.Enum):
    MULTIMODAL_MODEL = "multimodal_model"
    WEB_SEARCH = "web_search"
    REVERSE_IMAGE_SEARCH = "reverse_image_search"
    FACT_CHECK_DB = "fact_check_db"


class Clock(Protocol):
    def now(self) -> dt.datetime: ...


class RealClock:
    """Wall-clock time in UTC."""

    def now(self) -> dt.datetime:
        return dt.datetime.now(dt.timezone.utc)


class FixedClock:
    """Deterministic clock: every reading returns the same instant.

    Used in cache-only modes.  A ticking clock shared across worker
    threads would order timestamps by scheduling accident; a constant
    one makes recorded timestamps independent of thread interleaving
    and identical across runs.
    """

    DEFAULT_INSTANT = dt.datetime(2024, 1, 1, 0, 0, 0, tzinfo=dt.timezone.utc)

    def __init__(self, instant: dt.datetime | None = None) -> None:
        self._instant = instant if instant is not None else self.DEFAULT_INSTANT

    def now(self) -> dt.datetime:
        return self._instant


def clock_for_mode(mode: GatewayMode) -> Clock:
    return FixedClock() if mode.uses_cache_only else RealClock()


@dataclass(frozen=True)
class ProviderRequest:
    """One keyed provider call.  The digest always matches the payload."""

    provider: Provider
    operation: str
    payload: bytes
    payload_digest: str

    def __post_init__(self) -> None:
        if self.payload_digest != sha256_hex(self.payload):
            raise ValueError("payload digest does not match payload")

    @classmethod
    def create(cls, provider: Provider, operation: str, payload: bytes) -> "ProviderRequest":
        return cls(provider, operation, payload, sha256_hex(payload))


@dataclass(frozen=True)
class SearchResult:
    """One validated result row from either search provider."""

    url: str
    title: str
    snippet: str
    publisher: str | None
    published_at: dt.datetime | None
    retrieved_at: dt.datetime

    def as_dict(self) -> dict:
        return {
            "url": self.url,
            "title": self.title,
            "snippet": self.snippet,
            "publisher": self.publisher,
            "published_at": self.published_at.isoformat() if self.published_at else None,
            "retrieved_at": self.retrieved_at.isoformat(),
        }


class FactVerdict(enum.Enum):
    TRUE = "True"
    FALSE = "False"
    MIXED = "Mixed"
    UNRATED = "Unrated"


@dataclass(frozen=True)
class FactCheckEntry:
    verdict: FactVerdict
    url: str
    publisher: str | None
    published_at: dt.datetime | None

    def as_dict(self) -> dict:
        return {
            "verdict": self.verdict.value,
            "url": self.url,
            "publisher": self.publisher,
            "published_at": self.published_at.isoformat() if self.published_at else None,
        }


@dataclass(frozen=True)
class ClaimSeed:
    """A raw claim candidate extracted by the multimodal provider."""

    text: str
    source: str
    suggested_tools: tuple[str, ...] = ()


class Adapter(Protocol):
    """Transport for one provider.  Takes opaque payload bytes, returns
    opaque response bytes; raising ProviderUnavailable on failure."""

    def call(self, operation: str, payload: bytes) -> bytes: ...


class HttpAdapter:
    """JSON-over-HTTP transport with exponential backoff.

    Posts ``{"operation": ..., "payload_b64": ...}`` and expects the raw
    response body back.  Used only in Live and Record modes.
    """

    def __init__(self, endpoint: str, api_key: str | None = None) -> None:
        self.endpoint = endpoint
        self.api_key = api_key

    def call(self, operation: str, payload: bytes) -> bytes:
        import requests

        headers = {"Content-Type": "application/json"}
        if self.api_key:
            headers["Authorization"] = f"Bearer {self.api_key}"
        body = {"operation": operation, "payload_b64": base64.b64encode(payload).decode("ascii")}
        last_error: Exception | None = None
        for attempt in range(_HTTP_ATTEMPTS):
            if attempt:
                time.sleep(_HTTP_BACKOFF_S * (2 ** (attempt - 1)))
            try:
                resp = requests.post(
                    self.endpoint, json=body, headers=headers, timeout=_HTTP_TIMEOUT_S
                )
            except requests.RequestException as exc:
                last_error = exc
                continue
            if resp.status_code == 200:
                return resp.content
            last_error = ProviderUnavailable(
                f"{self.endpoint} returned status {resp.status_code}"
            )
            if 400 <= resp.status_code < 500:
                break
        raise ProviderUnavailable(f"{operation} failed after retries: {last_error}")


@dataclass
class ReplayCache:
    """Digest-keyed response store under a fixture root."""

    root: Path
    mode: GatewayMode

    def entry_path(self, provider: Provider, operation: str, digest: str) -> Path:
        return self.root / provider.value / operation / f"{digest}.resp"

    def load(self, request: ProviderRequest) -> bytes:
        path = self.entry_path(request.provider, request.operation, request.payload_digest)
        if not path.is_file():
            raise ReplayMiss(
                f"no recorded response for {request.provider.value}/{request.operation}/"
                f"{request.payload_digest}"
            )
        response = path.read_bytes()
        meta_path = path.with_suffix(".meta")
        if meta_path.is_file():
            try:
                meta = json.loads(meta_path.read_text(encoding="utf-8"))
            except json.JSONDecodeError:
                raise CacheCorrupt(f"unreadable metadata sidecar: {meta_path.name}") from None
            stored = meta.get("response_sha256")
            if stored != sha256_hex(response):
                raise CacheCorrupt(
                    f"stored digest mismatch for {request.provider.value}/"
                    f"{request.operation}/{request.payload_digest}"
                )
        return response

    def store(self, request: ProviderRequest, response: bytes, recorded_at: dt.datetime) -> None:
        path = self.entry_path(request.provider, request.operation, request.payload_digest)
        path.parent.mkdir(parents=True, exist_ok=True)
        meta = {
            "provider": request.provider.value,
            "operation": request.operation,
            "payload_digest": request.payload_digest,
            "response_sha256": sha256_hex(response),
            "recorded_at": recorded_at.isoformat(),
        }
        for target, data in (
            (path, response),
            (path.with_suffix(".meta"), canonical_json(meta).encode("utf-8")),
        ):
            tmp = target.with_name(target.name + ".tmp")
            tmp.write_bytes(data)
            os.replace(tmp, target)


def _expect(condition: bool, path: str, expected: str) -> None:
    if not condition:
        raise MalformedProviderResponse(f"{path}: expected {expected}")


def _parse_json(response: bytes, operation: str) -> object:
    try:
        return json.loads(response.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError):
        raise MalformedProviderResponse(f"{operation}: body is not valid JSON") from None


def _parse_datetime(value: object, path: str) -> dt.datetime | None:
    if value is None:
        return None
    _expect(isinstance(value, str), path, "an ISO datetime string or null")
    assert isinstance(value, str)
    try:
        parsed = dt.datetime.fromisoformat(value.replace("Z", "+00:00"))
    except ValueError:
        raise MalformedProviderResponse(f"{path}: invalid ISO datetime {value!r}") from None
    if parsed.tzinfo is None:
        parsed = parsed.replace(tzinfo=dt.timezone.utc)
    return parsed


class ProviderGateway:
    """Typed front door for all provider calls.

    In cache-only modes the adapter map is never consulted, which is
    what makes replayed runs network-free by construction.
    """

    def __init__(
        self,
        cache: ReplayCache,
        adapters: Mapping[Provider, Adapter] | None = None,
        clock: Clock | None = None,
    ) -> None:
        self.cache = cache
        self.adapters = dict(adapters or {})
        self.clock = clock if clock is not None else clock_for_mode(cache.mode)

    @property
    def mode(self) -> GatewayMode:
        return self.cache.mode

    # -- core engine ---------------------------------------------------

    def fetch_with_cache(self, request: ProviderRequest) -> bytes:
        if self.mode.uses_cache_only:
            return self.cache.load(request)
        adapter = self.adapters.get(request.provider)
        if adapter is None:
            raise ProviderUnavailable(f"no adapter configured for {request.provider.value}")
        response = adapter.call(request.operation, request.payload)
        if self.mode is GatewayMode.RECORD:
            self.cache.store(request, response, self.clock.now())
        return response

    def _call_json(self, provider: Provider, operation: str, payload_value: object) -> bytes:
        payload = canonical_json(payload_value).encode("utf-8")
        return self.fetch_with_cache(ProviderRequest.create(provider, operation, payload))

    # -- typed operations ----------------------------------------------

    def describe_video(self, video_path: Path, instruction: str) -> list["FrameDescription"]:
        """Frame-by-frame narrative plus overlay text readings for a video."""
        from .media import FrameDescription, OverlayKind, OverlayText

        payload = {
            "video_sha256": sha256_hex(Path(video_path).read_bytes()),
            "instruction": instruction,
        }
        raw = _parse_json(
            self._call_json(Provider.MULTIMODAL_MODEL, OP_DESCRIBE_VIDEO, payload),
            OP_DESCRIBE_VIDEO,
        )
        _expect(isinstance(raw, dict), "body", "an object")
        assert isinstance(raw, dict)
        items = raw.get("descriptions")
        _expect(isinstance(items, list), "descriptions", "a list")
        assert isinstance(items, list)
        out: list[FrameDescription] = []
        for i, item in enumerate(items):
            where = f"descriptions[{i}]"
            _expect(isinstance(item, dict), where, "an object")
            t_start = item.get("t_start_s")
            t_end = item.get("t_end_s")
            text = item.get("text")
            _expect(isinstance(t_start, (int, float)), f"{where}.t_start_s", "a number")
            _expect(isinstance(t_end, (int, float)), f"{where}.t_end_s", "a number")
            _expect(isinstance(text, str), f"{where}.text", "a string")
            _expect(
                0 <= float(t_start) <= float(t_end),
                f"{where}.t_end_s",
                "a span with 0 <= t_start_s <= t_end_s",
            )
            overlays = []
            for j, ov in enumerate(item.get("overlays", [])):
                ov_where = f"{where}.overlays[{j}]"
                _expect(isinstance(ov, dict), ov_where, "an object")
                ov_text = ov.get("text")
                ov_kind = ov.get("kind")
                ov_t = ov.get("t_s")
                _expect(isinstance(ov_text, str), f"{ov_where}.text", "a string")
                _expect(isinstance(ov_t, (int, float)), f"{ov_where}.t_s", "a number")
                try:
                    kind = OverlayKind(ov_kind)
                except ValueError:
                    raise MalformedProviderResponse(
                        f"{ov_where}.kind: unknown overlay kind {ov_kind!r}"
                    ) from None
                overlays.append(OverlayText(ov_text, kind, float(ov_t)))
            out.append(FrameDescription(float(t_start), float(t_end), text, tuple(overlays)))
        return out

    def _parse_results(self, raw: object, operation: str) -> list[SearchResult]:
        _expect(isinstance(raw, dict), "body", "an object")
        assert isinstance(raw, dict)
        items = raw.get("results")
        _expect(isinstance(items, list), "results", "a list")
        assert isinstance(items, list)
        retrieved_at = self.clock.now()
        seen: dict[str, None] = {}
        out: list[SearchResult] = []
        for i, item in enumerate(items):
            where = f"results[{i}]"
            _expect(isinstance(item, dict), where, "an object")
            url = item.get("url")
            title = item.get("title")
            snippet = item.get("snippet")
            publisher = item.get("publisher")
            _expect(isinstance(url, str) and bool(url), f"{where}.url", "a non-empty string")
            _expect(isinstance(title, str), f"{where}.title", "a string")
            _expect(isinstance(snippet, str), f"{where}.snippet", "a string")
            if publisher is not None:
                _expect(isinstance(publisher, str), f"{where}.publisher", "a string or null")
            published_at = _parse_datetime(item.get("published_at"), f"{where}.published_at")
            if published_at is not None and published_at > retrieved_at:
                raise MalformedProviderResponse(
                    f"{where}.published_at: later than retrieval time"
                )
            if url in seen:
                continue
            seen[url] = None
            out.append(SearchResult(url, title, snippet, publisher, published_at, retrieved_at))
        return out

    def web_search(self, query) -> list[SearchResult]:
        """Search the web.  Accepts a query object with ``.text`` or a string.

        Results are de-duplicated by URL, keeping provider rank order.
        """
        text = getattr(query, "text", query)
        _expect(isinstance(text, str), "query", "a string or an object with .text")
        raw = _parse_json(
            self._call_json(Provider.WEB_SEARCH, OP_SEARCH, {"query": text}), OP_SEARCH
        )
        return self._parse_results(raw, OP_SEARCH)

    def reverse_image_search(self, image_bytes: bytes) -> list[SearchResult]:
        """Find web appearances of an image, keyed by the image bytes."""
        request = ProviderRequest.create(Provider.REVERSE_IMAGE_SEARCH, OP_SEARCH, image_bytes)
        raw = _parse_json(self.fetch_with_cache(request), "reverse_image_search")
        return self._parse_results(raw, "reverse_image_search")

    def fact_check_lookup(self, claim_text: str) -> list[FactCheckEntry]:
        """Look a claim up in the fact-check database, newest entries first."""
        raw = _parse_json(
            self._call_json(Provider.FACT_CHECK_DB, OP_LOOKUP, {"claim": claim_text}), OP_LOOKUP
        )
        _expect(isinstance(raw, dict), "body", "an object")
        assert isinstance(raw, dict)
        items = raw.get("entries")
        _expect(isinstance(items, list), "entries", "a list")
        assert isinstance(items, list)
        out: list[FactCheckEntry] = []
        for i, item in enumerate(items):
            where = f"entries[{i}]"
            _expect(isinstance(item, dict), where, "an object")
            url = item.get("url")
            _expect(isinstance(url, str) and bool(url), f"{where}.url", "a non-empty string")
            publisher = item.get("publisher")
            if publisher is not None:
                _expect(isinstance(publisher, str), f"{where}.publisher", "a string or null")
            try:
                verdict = FactVerdict(item.get("verdict"))
            except ValueError:
                raise MalformedProviderResponse(
                    f"{where}.verdict: unknown verdict {item.get('verdict')!r}"
                ) from None
            published_at = _parse_datetime(item.get("published_at"), f"{where}.published_at")
            out.append(FactCheckEntry(verdict, url, publisher, published_at))
        out.sort(
            key=lambda e: (
                e.published_at is None,
                -(e.published_at.timestamp()) if e.published_at else 0.0,
                e.url,
            )
        )
        return out

    def fetch_page(self, url: str) -> str:
        """Fetch a page body as text (recorded as raw bytes, decoded UTF-8)."""
        response = self._call_json(Provider.WEB_SEARCH, OP_FETCH_PAGE, {"url": url})
        return response.decode("utf-8", errors="replace")

    def extract_claims(self, payload: bytes) -> list[ClaimSeed]:
        """Ask the multimodal provider for claim candidates over case text."""
        request = ProviderRequest.create(Provider.MULTIMODAL_MODEL, OP_EXTRACT_CLAIMS, payload)
        raw = _parse_json(self.fetch_with_cache(request), OP_EXTRACT_CLAIMS)
        _expect(isinstance(raw, dict), "body", "an object")
        assert isinstance(raw, dict)
        items = raw.get("claims")
        _expect(isinstance(items, list), "claims", "a list")
        assert isinstance(items, list)
        out: list[ClaimSeed] = []
        for i, item in enumerate(items):
            where = f"claims[{i}]"
            _expect(isinstance(item, dict), where, "an object")
            text = item.get("text")
            source = item.get("source")
            _expect(isinstance(text, str) and bool(text.strip()), f"{where}.text", "a non-empty string")
            _expect(isinstance(source, str), f"{where}.source", "a string")
            suggested = item.get("suggested_tools", [])
            _expect(isinstance(suggested, list), f"{where}.suggested_tools", "a list")
            for j, name in enumerate(suggested):
                _expect(isinstance(name, str), f"{where}.suggested_tools[{j}]", "a string")
            out.append(ClaimSeed(text.strip(), source, tuple(suggested)))
        return out

    def extract_source_details(self, url: str, body: str) -> dict[str, str]:
        """Provider-assisted source detail fields for a fetched page.

        Returns whichever of source_detail / where / when / who / why
        the provider produced; absent or empty fields are omitted.
        """
        payload = {"url": url, "body_sha256": sha256_hex(body.encode("utf-8"))}
        raw = _parse_json(
            self._call_json(Provider.MULTIMODAL_MODEL, OP_EXTRACT_SOURCE_DETAILS, payload),
            OP_EXTRACT_SOURCE_DETAILS,
        )
        _expect(isinstance(raw, dict), "body", "an object")
        assert isinstance(raw, dict)
        out: dict[str, str] = {}
        for key in ("source_detail", "where", "when", "who", "why"):
            value = raw.get(key)
            if value is None:
                continue
            _expect(isinstance(value, str), key, "a string or null")
            assert isinstance(value, str)
            if value.strip():
                out[key] = value.strip()
        return out


def adapters_from_env(environ: Mapping[str, str] | None = None) -> dict[Provider, Adapter]:
    """Build HTTP adapters from VERIFLOW_<PROVIDER>_ENDPOINT / _API_KEY."""
    env = dict(environ if environ is not None else os.environ)
    adapters: dict[Provider, Adapter] = {}
    for provider in Provider:
        token = provider.value.upper()
        endpoint = env.get(f"VERIFLOW_{token}_ENDPOINT")
        if endpoint:
            adapters[provider] = HttpAdapter(endpoint, env.get(f"VERIFLOW_{token}_API_KEY"))
    return adapters
