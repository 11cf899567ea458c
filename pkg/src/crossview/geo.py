"""Geographic coordinate type and great-circle distance utilities."""

from __future__ import annotations

import math
from dataclasses import dataclass

EARTH_RADIUS_KM = 6371.0


@dataclass(frozen=True)
class GeoCoordinate:
    """Latitude/longitude pair, degrees. lat in [-90, 90], lon in (-180, 180]."""

    lat: float
    lon: float

    def __post_init__(self):
        if not (math.isfinite(self.lat) and math.isfinite(self.lon)):
            raise ValueError("coordinate must be finite")
        if not -90.0 <= self.lat <= 90.0:
            raise ValueError(f"latitude {self.lat} outside [-90, 90]")
        if not -180.0 < self.lon <= 180.0:
            raise ValueError(f"longitude {self.lon} outside (-180, 180]")


def haversine_km(a: GeoCoordinate, b: GeoCoordinate) -> float:
    """Great-circle distance in kilometres on a sphere of radius 6371 km."""
    phi1 = math.radians(a.lat)
    phi2 = math.radians(b.lat)
    dphi = math.radians(b.lat - a.lat)
    dlam = math.radians(b.lon - a.lon)
    h = math.sin(dphi / 2.0) ** 2 + math.cos(phi1) * math.cos(phi2) * math.sin(dlam / 2.0) ** 2
    # guard rounding just above 1.0 before the asin
    return 2.0 * EARTH_RADIUS_KM * math.asin(min(1.0, math.sqrt(h)))


def quantize5(x: float) -> float:
    """Round to 5 decimal places, normalizing -0.0 to 0.0."""
    v = round(float(x), 5)
    return 0.0 if v == 0 else v


def tile_key(center: GeoCoordinate, zoom: int) -> str:
    """Canonical tile identity: lat/lon at 5-decimal precision plus zoom.

    The same key names tile fixtures on disk and joins generated tiles to
    their precomputed embeddings.
    """
    return f"{quantize5(center.lat):.5f}_{quantize5(center.lon):.5f}_{int(zoom)}"
