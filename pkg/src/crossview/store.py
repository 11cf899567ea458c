"""Embedding collection storage: EMB1 binary and CSV text formats.

EMB1 layout (little-endian throughout):

    magic   4 bytes  b"EMB1"
    version 1 byte   0x01
    dim     u32
    count   u64
    then per record:
        id_len    u16, id bytes (UTF-8)
        label_len u16, label bytes (UTF-8)
        geo_flag  u8 (0 or 1)
        [lat f64, lon f64]   only when geo_flag == 1
        vector    dim * f32

Vectors are stored as raw 32-bit floats, so an EMB1 round-trip is
bit-exact. The CSV format uses header ``id,label,lat,lon,v0..v{d-1}``
with empty lat/lon cells meaning "no coordinate"; floats are written with
shortest round-trip repr, so CSV round-trips are value-exact as well.
"""

from __future__ import annotations

import csv
import math
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import (
    DimensionMismatch,
    DuplicateId,
    IoFailure,
    MalformedFile,
    NonFiniteValue,
)
from .geo import GeoCoordinate

EMB1_MAGIC = b"EMB1"
EMB1_VERSION = 1

GALLERY = "gallery"
QUERY = "query"


@dataclass
class EmbeddingRecord:
    """One gallery or query item: id, class label, vector, optional coordinate."""

    id: str
    label: str
    vector: np.ndarray
    geo: GeoCoordinate | None = None

    def __post_init__(self):
        arr = np.asarray(self.vector, dtype=np.float32)
        if arr.ndim != 1:
            raise DimensionMismatch(f"record {self.id!r}: vector must be 1-D")
        arr.setflags(write=False)
        self.vector = arr

    @property
    def dim(self) -> int:
        return int(self.vector.shape[0])


@dataclass
class EmbeddingCollection:
    """Ordered set of records sharing one dimension.

    Construction performs no validation beyond per-record shape so that
    defective collections can still be inspected; use
    :func:`validate_collection` for the full invariant check.
    """

    dim: int
    records: list[EmbeddingRecord]
    role: str = GALLERY

    def __len__(self) -> int:
        return len(self.records)

    @property
    def ids(self) -> list[str]:
        return [r.id for r in self.records]

    @property
    def labels(self) -> list[str]:
        return [r.label for r in self.records]

    def matrix(self, dtype=np.float64) -> np.ndarray:
        """Records stacked into an (n, dim) array."""
        if not self.records:
            return np.empty((0, self.dim), dtype=dtype)
        return np.stack([r.vector for r in self.records]).astype(dtype)

    def by_id(self) -> dict[str, EmbeddingRecord]:
        return {r.id: r for r in self.records}


@dataclass
class ValidationIssue:
    record_index: int | None
    message: str

    def __str__(self) -> str:
        where = "collection" if self.record_index is None else f"record {self.record_index}"
        return f"{where}: {self.message}"


@dataclass
class ValidationReport:
    issues: list[ValidationIssue] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.issues

    def add(self, record_index: int | None, message: str) -> None:
        self.issues.append(ValidationIssue(record_index, message))

    def __str__(self) -> str:
        if self.ok:
            return "ok"
        return "\n".join(str(i) for i in self.issues)


def validate_collection(c: EmbeddingCollection) -> ValidationReport:
    """Report every invariant violation; empty report iff the collection is valid."""
    report = ValidationReport()
    if c.dim <= 0:
        report.add(None, f"dimension must be positive, got {c.dim}")
    if not c.records:
        report.add(None, "collection is empty")
    if c.role not in (GALLERY, QUERY):
        report.add(None, f"role must be gallery or query, got {c.role!r}")
    seen: dict[str, int] = {}
    for i, rec in enumerate(c.records):
        if not rec.id:
            report.add(i, "empty id")
        elif rec.id in seen:
            report.add(i, f"duplicate id {rec.id!r} (first at record {seen[rec.id]})")
        else:
            seen[rec.id] = i
        if rec.dim != c.dim:
            report.add(i, f"vector length {rec.dim} != collection dim {c.dim}")
        bad = np.flatnonzero(~np.isfinite(rec.vector))
        if bad.size:
            report.add(i, f"non-finite vector entry at component {int(bad[0])}")
    return report


def _infer_format(path: Path, fmt: str | None) -> str:
    if fmt is not None:
        if fmt not in ("emb1", "csv"):
            raise ValueError(f"unknown collection format {fmt!r}")
        return fmt
    suffix = path.suffix.lower().lstrip(".")
    if suffix in ("emb1", "csv"):
        return suffix
    raise ValueError(f"cannot infer format from {path.name!r}; pass format explicitly")


def read_collection(path, fmt: str | None = None, role: str = GALLERY) -> EmbeddingCollection:
    """Load and strictly validate a collection from disk.

    Raises MalformedFile, DimensionMismatch, DuplicateId or NonFiniteValue,
    each naming the offending record index.
    """
    path = Path(path)
    fmt = _infer_format(path, fmt)
    try:
        raw = path.read_bytes()
    except OSError as e:
        raise IoFailure(f"cannot read {path}: {e}") from e
    if fmt == "emb1":
        collection = _parse_emb1(raw, path.name)
    else:
        collection = _parse_csv(raw, path.name)
    collection.role = role
    report = validate_collection(collection)
    if not report.ok:
        # reads must never hand back an invalid collection
        first = report.issues[0]
        raise MalformedFile(f"{path.name}: {first}")
    return collection


def write_collection(c: EmbeddingCollection, path, fmt: str | None = None) -> None:
    """Persist a collection; refuses structurally invalid input before writing."""
    path = Path(path)
    fmt = _infer_format(path, fmt)
    if c.dim <= 0:
        raise DimensionMismatch(f"dimension must be positive, got {c.dim}")
    for i, rec in enumerate(c.records):
        if rec.dim != c.dim:
            raise DimensionMismatch(f"record {i}: vector length {rec.dim} != dim {c.dim}")
    data = _encode_emb1(c) if fmt == "emb1" else _encode_csv(c)
    try:
        path.write_bytes(data)
    except OSError as e:
        raise IoFailure(f"cannot write {path}: {e}") from e


# --- EMB1 ------------------------------------------------------------------

_HEADER = struct.Struct("<4sBIQ")
_U16 = struct.Struct("<H")
_GEO = struct.Struct("<dd")


def _encode_emb1(c: EmbeddingCollection) -> bytes:
    out = bytearray()
    out += _HEADER.pack(EMB1_MAGIC, EMB1_VERSION, c.dim, len(c.records))
    for i, rec in enumerate(c.records):
        id_b = rec.id.encode("utf-8")
        label_b = rec.label.encode("utf-8")
        if len(id_b) > 0xFFFF or len(label_b) > 0xFFFF:
            raise MalformedFile(f"record {i}: id/label exceeds 65535 bytes")
        out += _U16.pack(len(id_b)) + id_b
        out += _U16.pack(len(label_b)) + label_b
        if rec.geo is None:
            out.append(0)
        else:
            out.append(1)
            out += _GEO.pack(rec.geo.lat, rec.geo.lon)
        out += rec.vector.astype("<f4", copy=False).tobytes()
    return bytes(out)


class _Cursor:
    def __init__(self, data: bytes, name: str):
        self.data = data
        self.pos = 0
        self.name = name

    def take(self, n: int, what: str, record: int | None) -> bytes:
        if self.pos + n > len(self.data):
            where = "" if record is None else f" in record {record}"
            raise MalformedFile(f"{self.name}: truncated while reading {what}{where}")
        chunk = self.data[self.pos : self.pos + n]
        self.pos += n
        return chunk


def _parse_emb1(raw: bytes, name: str) -> EmbeddingCollection:
    cur = _Cursor(raw, name)
    magic, version, dim, count = _HEADER.unpack(cur.take(_HEADER.size, "header", None))
    if magic != EMB1_MAGIC:
        raise MalformedFile(f"{name}: bad magic {magic!r}")
    if version != EMB1_VERSION:
        raise MalformedFile(f"{name}: unsupported version {version}")
    if dim == 0:
        raise DimensionMismatch(f"{name}: declared dimension is 0")
    records = []
    for i in range(count):
        (id_len,) = _U16.unpack(cur.take(_U16.size, "id length", i))
        try:
            rid = cur.take(id_len, "id", i).decode("utf-8")
        except UnicodeDecodeError as e:
            raise MalformedFile(f"{name}: record {i}: id is not valid UTF-8") from e
        (label_len,) = _U16.unpack(cur.take(_U16.size, "label length", i))
        try:
            label = cur.take(label_len, "label", i).decode("utf-8")
        except UnicodeDecodeError as e:
            raise MalformedFile(f"{name}: record {i}: label is not valid UTF-8") from e
        geo_flag = cur.take(1, "geo flag", i)[0]
        geo = None
        if geo_flag == 1:
            lat, lon = _GEO.unpack(cur.take(_GEO.size, "coordinate", i))
            try:
                geo = GeoCoordinate(lat, lon)
            except ValueError as e:
                raise MalformedFile(f"{name}: record {i}: {e}") from e
        elif geo_flag != 0:
            raise MalformedFile(f"{name}: record {i}: geo flag must be 0 or 1, got {geo_flag}")
        vec = np.frombuffer(cur.take(4 * dim, "vector", i), dtype="<f4")
        if not np.isfinite(vec).all():
            raise NonFiniteValue(f"{name}: record {i}: non-finite vector entry")
        records.append(EmbeddingRecord(rid, label, vec, geo))
    if cur.pos != len(raw):
        raise MalformedFile(f"{name}: {len(raw) - cur.pos} trailing bytes after record {count - 1}")
    coll = EmbeddingCollection(dim=int(dim), records=records)
    _check_ids(coll, name)
    return coll


# --- CSV -------------------------------------------------------------------

def _encode_csv(c: EmbeddingCollection) -> bytes:
    import io

    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["id", "label", "lat", "lon"] + [f"v{i}" for i in range(c.dim)])
    for rec in c.records:
        lat = repr(rec.geo.lat) if rec.geo else ""
        lon = repr(rec.geo.lon) if rec.geo else ""
        writer.writerow([rec.id, rec.label, lat, lon] + [repr(float(v)) for v in rec.vector])
    return buf.getvalue().encode("utf-8")


def _parse_csv(raw: bytes, name: str) -> EmbeddingCollection:
    import io

    try:
        text = raw.decode("utf-8")
    except UnicodeDecodeError as e:
        raise MalformedFile(f"{name}: not valid UTF-8") from e
    rows = list(csv.reader(io.StringIO(text, newline="")))
    if not rows:
        raise MalformedFile(f"{name}: empty file")
    header = rows[0]
    if len(header) < 5 or header[:4] != ["id", "label", "lat", "lon"]:
        raise MalformedFile(f"{name}: bad header {header[:4]!r}, expected id,label,lat,lon,v0..")
    dim = len(header) - 4
    expected_vs = [f"v{i}" for i in range(dim)]
    if header[4:] != expected_vs:
        raise MalformedFile(f"{name}: vector columns must be v0..v{dim - 1} in order")
    body = rows[1:]
    if not body:
        raise MalformedFile(f"{name}: no records")
    records = []
    for i, row in enumerate(body):
        if len(row) != 4 + dim:
            raise DimensionMismatch(
                f"{name}: record {i}: {len(row) - 4} vector values, expected {dim}"
            )
        rid, label, lat_s, lon_s = row[0], row[1], row[2], row[3]
        if (lat_s == "") != (lon_s == ""):
            raise MalformedFile(f"{name}: record {i}: lat/lon must both be set or both empty")
        geo = None
        if lat_s != "":
            try:
                geo = GeoCoordinate(float(lat_s), float(lon_s))
            except ValueError as e:
                raise MalformedFile(f"{name}: record {i}: {e}") from e
        try:
            values = np.array([float(v) for v in row[4:]], dtype=np.float32)
        except ValueError as e:
            raise MalformedFile(f"{name}: record {i}: unparsable vector value ({e})") from e
        if not np.isfinite(values).all():
            raise NonFiniteValue(f"{name}: record {i}: non-finite vector entry")
        records.append(EmbeddingRecord(rid, label, values, geo))
    coll = EmbeddingCollection(dim=dim, records=records)
    _check_ids(coll, name)
    return coll


def _check_ids(c: EmbeddingCollection, name: str) -> None:
    seen: dict[str, int] = {}
    for i, rec in enumerate(c.records):
        if not rec.id:
            raise MalformedFile(f"{name}: record {i}: empty id")
        if rec.id in seen:
            raise DuplicateId(f"{name}: record {i}: id {rec.id!r} already used at record {seen[rec.id]}")
        seen[rec.id] = i
