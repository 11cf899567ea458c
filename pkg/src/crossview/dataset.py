"""Automatic street-to-satellite pair construction from seed place names.

For every seed the builder collects street image references via image
search, geocodes the name, and fetches one satellite tile centered on the
result, yielding semantically aligned pairs without manual annotation.
Seeds failing any stage are skipped and logged, never fatal.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass
from datetime import datetime, timezone
from pathlib import Path

from .errors import ClientError, IoFailure, MalformedFile, NoLocationFound
from .geo import GeoCoordinate
from .geoclients import PlaceName, SatelliteTile, TileSpec
from .store import ValidationReport

MANIFEST_FORMAT_VERSION = 1

_LIST_PREFIX = re.compile(r"^\s*(?:[-*•]|\d+[.)])\s*")


def normalize_place(name: str) -> str:
    """Dedup key: trimmed, inner whitespace collapsed, lowercased."""
    return " ".join(name.split()).lower()


@dataclass
class PairEntry:
    place: PlaceName
    coordinate: GeoCoordinate
    street_images: list[str]
    tile_ref: str


@dataclass
class SkipEntry:
    place: str
    stage: str
    error: str


@dataclass
class PairManifest:
    entries: list[PairEntry]
    skips: list[SkipEntry]
    created_at: str
    config: dict

    def to_json_dict(self) -> dict:
        return {
            "format_version": MANIFEST_FORMAT_VERSION,
            "created_at": self.created_at,
            "config": self.config,
            "entries": [
                {
                    "place": e.place.name,
                    "lat": e.coordinate.lat,
                    "lon": e.coordinate.lon,
                    "street_images": e.street_images,
                    "tile": e.tile_ref,
                }
                for e in self.entries
            ],
            "skips": [{"place": s.place, "stage": s.stage, "error": s.error} for s in self.skips],
        }


def build_pairs(
    seeds: list[str],
    clients,
    per_place_images: int,
    spec: TileSpec,
) -> PairManifest:
    """One aligned entry per usable seed; every seed lands either in
    entries or in the skip log."""
    if not seeds:
        raise ValueError("seed list is empty")
    if per_place_images < 1:
        raise ValueError("per_place_images must be >= 1")
    entries: list[PairEntry] = []
    skips: list[SkipEntry] = []
    seen: set[str] = set()
    for raw_seed in seeds:
        seed = raw_seed.strip()
        if not seed:
            skips.append(SkipEntry(raw_seed, "normalize", "empty place name"))
            continue
        key = normalize_place(seed)
        if key in seen:
            skips.append(SkipEntry(seed, "dedupe", "duplicate place name"))
            continue
        seen.add(key)

        try:
            docs = clients.image_search(seed)
        except ClientError as e:
            skips.append(SkipEntry(seed, "search", str(e)))
            continue
        street = [s.url for s in docs.snippets if s.url][:per_place_images]
        if not street:
            skips.append(SkipEntry(seed, "search", "no street image references"))
            continue

        place = PlaceName(name=seed)
        try:
            coord = clients.geocode(place)
        except ClientError as e:
            skips.append(SkipEntry(seed, "geocode", str(e)))
            continue

        try:
            tile: SatelliteTile = clients.fetch_tile(coord, spec)
        except ClientError as e:
            skips.append(SkipEntry(seed, "tile", str(e)))
            continue

        entries.append(
            PairEntry(place=place, coordinate=coord, street_images=street, tile_ref=tile.image_ref)
        )
    return PairManifest(
        entries=entries,
        skips=skips,
        created_at=datetime.now(timezone.utc).isoformat(),
        config={
            "per_place_images": per_place_images,
            "zoom": spec.zoom,
            "width_px": spec.width_px,
            "height_px": spec.height_px,
            "map_type": spec.map_type,
        },
    )


def expand_seeds(clients, prompt: str, count: int) -> list[str]:
    """Ask the LLM client for place names, one per line, deduplicated
    case-insensitively, capped at count."""
    if count < 1:
        raise ValueError("count must be >= 1")
    raw = clients.complete(prompt)
    names: list[str] = []
    seen: set[str] = set()
    for line in raw.splitlines():
        name = _LIST_PREFIX.sub("", line).strip().strip("\"'")
        if not name:
            continue
        key = normalize_place(name)
        if key in seen:
            continue
        seen.add(key)
        names.append(name)
        if len(names) == count:
            break
    if not names:
        raise NoLocationFound("seed expansion returned no place names")
    return names


def validate_manifest(m: PairManifest, root=None) -> ValidationReport:
    """Invariant check plus referential integrity of local file references.

    References containing a URL scheme are treated as remote and skipped;
    relative paths resolve against root (default: current directory).
    """
    base = Path(root) if root is not None else Path(".")
    report = ValidationReport()
    seen: dict[str, int] = {}
    for i, e in enumerate(m.entries):
        key = normalize_place(e.place.name)
        if key in seen:
            report.add(i, f"duplicate place {e.place.name!r} (first at entry {seen[key]})")
        else:
            seen[key] = i
        if not e.street_images:
            report.add(i, "entry has no street images")
        if not e.tile_ref:
            report.add(i, "entry has no tile reference")
        else:
            _check_ref(e.tile_ref, base, report, i, "tile")
        for ref in e.street_images:
            _check_ref(ref, base, report, i, "street image")
    return report


def _check_ref(ref: str, base: Path, report: ValidationReport, index: int, what: str) -> None:
    if "://" in ref:
        return
    path = Path(ref)
    if not path.is_absolute():
        path = base / path
    if not path.exists():
        report.add(index, f"dangling {what} reference: {ref}")


def save_manifest(m: PairManifest, path) -> None:
    try:
        Path(path).write_text(json.dumps(m.to_json_dict(), indent=2) + "\n", encoding="utf-8")
    except OSError as e:
        raise IoFailure(f"cannot write manifest to {path}: {e}") from e


def load_manifest(path) -> PairManifest:
    path = Path(path)
    try:
        doc = json.loads(path.read_text(encoding="utf-8"))
    except OSError as e:
        raise IoFailure(f"cannot read manifest from {path}: {e}") from e
    except json.JSONDecodeError as e:
        raise MalformedFile(f"{path.name}: not valid JSON: {e}") from e
    try:
        entries = [
            PairEntry(
                place=PlaceName(name=e["place"]),
                coordinate=GeoCoordinate(float(e["lat"]), float(e["lon"])),
                street_images=[str(s) for s in e["street_images"]],
                tile_ref=str(e["tile"]),
            )
            for e in doc["entries"]
        ]
        skips = [SkipEntry(s["place"], s["stage"], s["error"]) for s in doc.get("skips", [])]
        return PairManifest(
            entries=entries,
            skips=skips,
            created_at=str(doc.get("created_at", "")),
            config=dict(doc.get("config", {})),
        )
    except (KeyError, TypeError, ValueError) as e:
        raise MalformedFile(f"{path.name}: {e}") from e
