"""Clients for the four external services the query pipeline depends on:
web image-context search, LLM location inference, geocoding, and
satellite tile fetch.

Two interchangeable implementations exist. :class:`MockGeoClients` is
backed entirely by an on-disk fixture directory and is deterministic:
identical inputs yield identical outputs across process restarts.
:class:`LiveGeoClients` speaks HTTP with per-service rate limiting,
bounded retries with exponential backoff, and a timestamped request log.

Fixture directory layout::

    fixtures/
      image_search/<image_ref>.json      {"snippets": [{"url","title","body"}, ...]}
      infer_location.json                {sha256(prompt): "answer text", ...}
      geocode.json                       {"lowercased trimmed name": [lat, lon], ...}
      tiles/<lat>_<lon>_<zoom>.png       keyed by 5-decimal quantized coordinate
"""

from __future__ import annotations

import hashlib
import json
import os
import shutil
import threading
import time
from dataclasses import dataclass
from datetime import datetime, timezone
from pathlib import Path

import requests

from .errors import (
    AmbiguousPlace,
    ConfigurationError,
    NoLocationFound,
    PlaceNotFound,
    RateLimited,
    TileUnavailable,
    UnknownImage,
    UpstreamFailure,
)

__all__ = [
    "ContextSnippet",
    "ContextDocuments",
    "PlaceName",
    "TileSpec",
    "TileProvenance",
    "SatelliteTile",
    "MockGeoClients",
    "LiveGeoClients",
    "LiveConfig",
    "make_clients",
    "extract_place",
    "prompt_fingerprint",
    "normalize_place_key",
]
from .geo import GeoCoordinate, tile_key


@dataclass(frozen=True)
class ContextSnippet:
    url: str = ""
    title: str = ""
    body: str = ""

    def text(self) -> str:
        """Non-empty fields joined into the snippet's prompt contribution."""
        return "\n".join(s for s in (self.title, self.body, self.url) if s.strip())


@dataclass
class ContextDocuments:
    """Web context gathered for one source image."""

    source_image: str
    snippets: list[ContextSnippet]
    collected_at: str


@dataclass(frozen=True)
class PlaceName:
    name: str
    confidence_note: str | None = None

    def __post_init__(self):
        if not self.name.strip():
            raise ValueError("place name must be non-empty")


@dataclass(frozen=True)
class TileSpec:
    zoom: int = 18
    width_px: int = 512
    height_px: int = 512
    map_type: str = "satellite"

    def __post_init__(self):
        if self.width_px <= 0 or self.height_px <= 0:
            raise ValueError("tile dimensions must be positive")


@dataclass(frozen=True)
class TileProvenance:
    provider: str
    fetched_at: str


@dataclass
class SatelliteTile:
    center: GeoCoordinate
    spec: TileSpec
    image_ref: str
    provenance: TileProvenance


def _now_iso() -> str:
    return datetime.now(timezone.utc).isoformat()


def prompt_fingerprint(prompt: str) -> str:
    """Stable key for LLM fixtures: SHA-256 hex of the UTF-8 prompt."""
    return hashlib.sha256(prompt.encode("utf-8")).hexdigest()


def normalize_place_key(name: str) -> str:
    """Geocode fixture key: trimmed, lowercased."""
    return name.strip().lower()


def extract_place(answer: str) -> PlaceName:
    """First non-empty line of an LLM answer, stripped of wrapping quotes
    and trailing punctuation. Raises NoLocationFound on an empty answer."""
    note_lines = []
    name = None
    for line in answer.splitlines():
        line = line.strip()
        if not line:
            continue
        if name is None:
            name = line
            while True:
                stripped = name.strip().strip("\"'`").rstrip(".,;:!?")
                if stripped == name:
                    break
                name = stripped
        else:
            note_lines.append(line)
    if not name:
        raise NoLocationFound("answer contains no usable place name")
    return PlaceName(name=name, confidence_note="\n".join(note_lines) or None)


# --- mock clients -------------------------------------------------------------

class MockGeoClients:
    """Fixture-backed clients; the fixture directory is the only state."""

    provider = "mock"

    def __init__(self, fixtures_dir, tile_output_dir=None):
        self.root = Path(fixtures_dir)
        if not self.root.is_dir():
            raise ConfigurationError(f"fixture directory {self.root} does not exist")
        self.tile_output_dir = Path(tile_output_dir) if tile_output_dir else None
        self._llm = self._load_map("infer_location.json")
        self._geocode = self._load_map("geocode.json")

    def _load_map(self, filename: str) -> dict:
        path = self.root / filename
        if not path.exists():
            return {}
        try:
            data = json.loads(path.read_text(encoding="utf-8"))
        except (OSError, json.JSONDecodeError) as e:
            raise ConfigurationError(f"bad fixture file {path}: {e}") from e
        if not isinstance(data, dict):
            raise ConfigurationError(f"fixture {path} must hold a JSON object")
        return data

    def image_search(self, image_ref: str) -> ContextDocuments:
        path = self.root / "image_search" / f"{image_ref}.json"
        if not path.exists():
            raise UnknownImage(f"no image-search fixture for {image_ref!r}")
        doc = json.loads(path.read_text(encoding="utf-8"))
        snippets = [
            ContextSnippet(
                url=str(s.get("url", "")),
                title=str(s.get("title", "")),
                body=str(s.get("body", "")),
            )
            for s in doc.get("snippets", [])
        ]
        return ContextDocuments(source_image=image_ref, snippets=snippets, collected_at=_now_iso())

    def complete(self, prompt: str) -> str:
        """Raw fixture answer for a prompt, keyed by its SHA-256."""
        key = prompt_fingerprint(prompt)
        if key not in self._llm:
            raise NoLocationFound(f"no inference fixture for prompt hash {key[:12]}...")
        return str(self._llm[key])

    def infer_location(self, prompt: str) -> PlaceName:
        if not prompt.strip():
            raise NoLocationFound("empty prompt")
        return extract_place(self.complete(prompt))

    def geocode(self, place: PlaceName) -> GeoCoordinate:
        key = normalize_place_key(place.name)
        if key not in self._geocode:
            raise PlaceNotFound(f"no geocode fixture for {place.name!r}")
        lat, lon = self._geocode[key]
        return GeoCoordinate(float(lat), float(lon))

    def fetch_tile(self, center: GeoCoordinate, spec: TileSpec) -> SatelliteTile:
        key = tile_key(center, spec.zoom)
        tiles_dir = self.root / "tiles"
        matches = sorted(tiles_dir.glob(f"{key}.*")) if tiles_dir.is_dir() else []
        if not matches:
            raise TileUnavailable(f"no tile fixture for {key}")
        src = matches[0]
        if self.tile_output_dir is not None:
            self.tile_output_dir.mkdir(parents=True, exist_ok=True)
            dst = self.tile_output_dir / src.name
            shutil.copyfile(src, dst)
            image_ref = str(dst)
        else:
            image_ref = str(src)
        return SatelliteTile(
            center=center,
            spec=spec,
            image_ref=image_ref,
            provenance=TileProvenance(provider=self.provider, fetched_at=_now_iso()),
        )


# --- live clients -------------------------------------------------------------

ENV_GEOCODE_KEY = "GEOCODE_API_KEY"
ENV_STATICMAP_KEY = "STATICMAP_API_KEY"
ENV_LLM_ENDPOINT = "LLM_ENDPOINT"
ENV_LLM_KEY = "LLM_API_KEY"
ENV_IMAGESEARCH_ENDPOINT = "IMAGESEARCH_ENDPOINT"

DEFAULT_GEOCODE_ENDPOINT = "https://maps.googleapis.com/maps/api/geocode/json"
DEFAULT_STATICMAP_ENDPOINT = "https://maps.googleapis.com/maps/api/staticmap"

RETRYABLE_STATUS = frozenset({408, 429, 500, 502, 503, 504})


@dataclass
class LiveConfig:
    geocode_api_key: str
    staticmap_api_key: str
    llm_endpoint: str
    imagesearch_endpoint: str
    llm_api_key: str | None = None
    geocode_endpoint: str = DEFAULT_GEOCODE_ENDPOINT
    staticmap_endpoint: str = DEFAULT_STATICMAP_ENDPOINT
    max_retries: int = 3
    backoff_base_s: float = 0.5
    requests_per_second: float = 5.0
    timeout_s: float = 30.0
    snippet_cap: int = 10
    min_zoom: int = 0
    max_zoom: int = 21
    tile_output_dir: str = "tiles_out"

    @classmethod
    def from_env(cls, env=os.environ, **overrides) -> "LiveConfig":
        """Build from environment variables; never from config files."""
        required = {
            "geocode_api_key": ENV_GEOCODE_KEY,
            "staticmap_api_key": ENV_STATICMAP_KEY,
            "llm_endpoint": ENV_LLM_ENDPOINT,
            "imagesearch_endpoint": ENV_IMAGESEARCH_ENDPOINT,
        }
        kwargs = {}
        for attr, var in required.items():
            if attr in overrides:
                continue
            value = env.get(var, "")
            if not value:
                raise ConfigurationError(f"environment variable {var} is not set")
            kwargs[attr] = value
        kwargs["llm_api_key"] = overrides.pop("llm_api_key", env.get(ENV_LLM_KEY) or None)
        kwargs.update(overrides)
        return cls(**kwargs)


@dataclass
class RequestLogEntry:
    service: str
    url: str
    timestamp: float
    status: int | None
    error: str | None = None


class _RateLimiter:
    """Serializes callers so requests never exceed the configured rate."""

    def __init__(self, requests_per_second: float):
        self.interval = 1.0 / requests_per_second if requests_per_second > 0 else 0.0
        self._lock = threading.Lock()
        self._next_allowed = 0.0

    def acquire(self) -> None:
        with self._lock:
            now = time.monotonic()
            wait = self._next_allowed - now
            if wait > 0:
                time.sleep(wait)
                now = time.monotonic()
            self._next_allowed = max(now, self._next_allowed) + self.interval


class LiveGeoClients:
    """HTTP-backed clients with retries, backoff and per-service rate limits."""

    provider = "live"

    def __init__(self, config: LiveConfig, session: requests.Session | None = None):
        self.config = config
        self.session = session or requests.Session()
        self.request_log: list[RequestLogEntry] = []
        self._log_lock = threading.Lock()
        self._limiters = {
            service: _RateLimiter(config.requests_per_second)
            for service in ("image_search", "llm", "geocode", "tiles")
        }

    def _log(self, entry: RequestLogEntry) -> None:
        with self._log_lock:
            self.request_log.append(entry)

    def _request(self, service: str, method: str, url: str, **kwargs):
        """One logical request: rate-limited attempts with backoff.

        Total attempts are bounded by 1 + max_retries; every attempt is
        recorded in the request log.
        """
        cfg = self.config
        kwargs.setdefault("timeout", cfg.timeout_s)
        last_status = None
        last_error = None
        budget = 1 + max(0, cfg.max_retries)
        made = 0
        for attempt in range(budget):
            if attempt > 0:
                time.sleep(cfg.backoff_base_s * (2 ** (attempt - 1)))
            self._limiters[service].acquire()
            made += 1
            try:
                resp = self.session.request(method, url, **kwargs)
            except requests.RequestException as e:
                self._log(RequestLogEntry(service, url, time.monotonic(), None, str(e)))
                last_error = str(e)
                last_status = None
                continue
            self._log(RequestLogEntry(service, url, time.monotonic(), resp.status_code))
            if 200 <= resp.status_code < 300:
                return resp
            last_status = resp.status_code
            last_error = f"HTTP {resp.status_code}"
            if resp.status_code not in RETRYABLE_STATUS:
                break
        if last_status == 429:
            raise RateLimited(f"{service}: still rate-limited after {made} attempts")
        failure = UpstreamFailure(
            f"{service}: {last_error} (after {made} attempts)"
            if last_error
            else f"{service}: request failed"
        )
        failure.status = last_status
        raise failure

    def image_search(self, image_ref: str) -> ContextDocuments:
        resp = self._request(
            "image_search", "GET", self.config.imagesearch_endpoint, params={"image": image_ref}
        )
        try:
            doc = resp.json()
        except ValueError as e:
            raise UpstreamFailure(f"image_search: non-JSON response: {e}") from e
        raw = doc.get("snippets", doc) if isinstance(doc, dict) else doc
        if not isinstance(raw, list):
            raise UpstreamFailure("image_search: response has no snippet list")
        snippets = [
            ContextSnippet(
                url=str(s.get("url", "")),
                title=str(s.get("title", "")),
                body=str(s.get("body", "")),
            )
            for s in raw[: self.config.snippet_cap]
        ]
        return ContextDocuments(source_image=image_ref, snippets=snippets, collected_at=_now_iso())

    def complete(self, prompt: str) -> str:
        headers = {}
        if self.config.llm_api_key:
            headers["Authorization"] = f"Bearer {self.config.llm_api_key}"
        resp = self._request(
            "llm", "POST", self.config.llm_endpoint, json={"prompt": prompt}, headers=headers
        )
        try:
            doc = resp.json()
        except ValueError:
            return resp.text
        if isinstance(doc, dict):
            for key in ("completion", "text", "answer"):
                if isinstance(doc.get(key), str):
                    return doc[key]
        raise UpstreamFailure("llm: response has no completion text")

    def infer_location(self, prompt: str) -> PlaceName:
        if not prompt.strip():
            raise NoLocationFound("empty prompt")
        return extract_place(self.complete(prompt))

    def geocode(self, place: PlaceName) -> GeoCoordinate:
        resp = self._request(
            "geocode",
            "GET",
            self.config.geocode_endpoint,
            params={"address": place.name, "key": self.config.geocode_api_key},
        )
        try:
            doc = resp.json()
        except ValueError as e:
            raise UpstreamFailure(f"geocode: non-JSON response: {e}") from e
        results = doc.get("results", []) if isinstance(doc, dict) else []
        if not results:
            raise PlaceNotFound(f"geocoder returned no results for {place.name!r}")
        usable = [r for r in results if self._location_of(r) is not None]
        if not usable:
            raise AmbiguousPlace(
                f"geocoder returned {len(results)} results without coordinates for {place.name!r}"
            )
        # multi-hit responses take the first result; specificity is the
        # inference stage's job
        lat, lon = self._location_of(usable[0])
        return GeoCoordinate(float(lat), float(lon))

    @staticmethod
    def _location_of(result) -> tuple | None:
        loc = result.get("geometry", {}).get("location", {}) if isinstance(result, dict) else {}
        if "lat" in loc and "lng" in loc:
            return loc["lat"], loc["lng"]
        return None

    def fetch_tile(self, center: GeoCoordinate, spec: TileSpec) -> SatelliteTile:
        cfg = self.config
        if not cfg.min_zoom <= spec.zoom <= cfg.max_zoom:
            raise ConfigurationError(
                f"zoom {spec.zoom} outside provider range [{cfg.min_zoom}, {cfg.max_zoom}]"
            )
        try:
            resp = self._request(
                "tiles",
                "GET",
                cfg.staticmap_endpoint,
                params={
                    "center": f"{center.lat},{center.lon}",
                    "zoom": str(spec.zoom),
                    "size": f"{spec.width_px}x{spec.height_px}",
                    "maptype": spec.map_type,
                    "key": cfg.staticmap_api_key,
                },
            )
        except UpstreamFailure as e:
            if getattr(e, "status", None) == 404:
                raise TileUnavailable(f"no tile at {tile_key(center, spec.zoom)}") from e
            raise
        if not resp.content:
            raise TileUnavailable(f"empty tile response at {tile_key(center, spec.zoom)}")
        out_dir = Path(cfg.tile_output_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        out_path = out_dir / f"{tile_key(center, spec.zoom)}.png"
        out_path.write_bytes(resp.content)
        return SatelliteTile(
            center=center,
            spec=spec,
            image_ref=str(out_path),
            provenance=TileProvenance(provider=self.provider, fetched_at=_now_iso()),
        )


def make_clients(mode: str, fixtures_dir=None, tile_output_dir=None, config: LiveConfig | None = None):
    """Construct the client bundle for a CLI mode ("mock" or "live")."""
    if mode == "mock":
        if not fixtures_dir:
            raise ConfigurationError("mock clients need --fixtures DIR")
        return MockGeoClients(fixtures_dir, tile_output_dir=tile_output_dir)
    if mode == "live":
        cfg = config or LiveConfig.from_env()
        if tile_output_dir:
            cfg.tile_output_dir = str(tile_output_dir)
        return LiveGeoClients(cfg)
    raise ConfigurationError(f"unknown client mode {mode!r}")
