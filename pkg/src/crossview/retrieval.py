"""Exhaustive cosine top-k search over an embedding gallery.

Gallery vectors are L2-normalized once at index build, reducing cosine to
a dot product. Scoring always runs one query at a time through the same
BLAS path, so batch results are bitwise identical to per-query search no
matter the worker count; ties (equal scores) are broken by ascending
gallery id, which also makes results invariant to gallery record order.
"""

from __future__ import annotations

import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import NamedTuple

import numpy as np

from . import _kernels
from .errors import DimensionMismatch, EmptyGallery, IoFailure, MalformedFile, NonFiniteInput
from .store import EmbeddingCollection, EmbeddingRecord


class Hit(NamedTuple):
    id: str
    score: float


@dataclass
class RankedList:
    """Ordered retrieval result for one query: (gallery id, cosine) pairs."""

    query_id: str
    hits: list[Hit]

    @property
    def ids(self) -> list[str]:
        return [h.id for h in self.hits]


def l2_normalize(v) -> np.ndarray:
    """Unit-length copy of v; the zero vector stays zero."""
    arr = np.asarray(v, dtype=np.float64)
    if not np.isfinite(arr).all():
        raise NonFiniteInput("vector contains non-finite entries")
    norm = float(np.linalg.norm(arr))
    if norm == 0.0:
        return arr.copy()
    return arr / norm


def cosine_similarity(a, b) -> float:
    """a.b / (|a||b|), defined as 0.0 when either vector is zero."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise DimensionMismatch(f"vector shapes differ: {a.shape} vs {b.shape}")
    if not (np.isfinite(a).all() and np.isfinite(b).all()):
        raise NonFiniteInput("vector contains non-finite entries")
    na = float(np.linalg.norm(a))
    nb = float(np.linalg.norm(b))
    if na == 0.0 or nb == 0.0:
        return 0.0
    return float(np.dot(a, b) / (na * nb))


class GalleryIndex:
    """Immutable search structure over one gallery collection.

    Safe to share across threads: building normalizes all vectors and
    precomputes the lexicographic id ranks used for tie-breaking.
    """

    def __init__(self, gallery: EmbeddingCollection):
        if not gallery.records:
            raise EmptyGallery("gallery has no records")
        self.dim = gallery.dim
        self.ids = gallery.ids
        mat = gallery.matrix(dtype=np.float64)
        if mat.shape[1] != self.dim:
            raise DimensionMismatch(f"gallery vectors are {mat.shape[1]}-d, declared {self.dim}")
        if not np.isfinite(mat).all():
            raise NonFiniteInput("gallery contains non-finite vectors")
        norms = np.linalg.norm(mat, axis=1, keepdims=True)
        unit = np.zeros_like(mat)
        np.divide(mat, norms, out=unit, where=norms > 0.0)
        self._unit = np.ascontiguousarray(unit)
        n = len(self.ids)
        rank = np.empty(n, dtype=np.int64)
        rank[np.argsort(np.asarray(self.ids, dtype=object))] = np.arange(n, dtype=np.int64)
        self._id_rank = rank

    def __len__(self) -> int:
        return len(self.ids)

    def search_vector(self, vector, k: int) -> list[Hit]:
        if k < 1:
            raise ValueError(f"k must be >= 1, got {k}")
        q = np.asarray(vector, dtype=np.float64).reshape(-1)
        if q.shape[0] != self.dim:
            raise DimensionMismatch(f"query is {q.shape[0]}-d, gallery is {self.dim}-d")
        q = l2_normalize(q)
        scores = self._unit @ q
        picked = _kernels.topk_select(scores, self._id_rank, min(k, len(self.ids)))
        return [Hit(self.ids[i], float(scores[i])) for i in picked]


def _as_index(gallery: EmbeddingCollection | GalleryIndex) -> GalleryIndex:
    return gallery if isinstance(gallery, GalleryIndex) else GalleryIndex(gallery)


def search_topk(query: EmbeddingRecord, gallery: EmbeddingCollection | GalleryIndex, k: int) -> RankedList:
    """Rank the k most cosine-similar gallery records for one query."""
    index = _as_index(gallery)
    return RankedList(query_id=query.id, hits=index.search_vector(query.vector, k))


def batch_search(
    queries: EmbeddingCollection,
    gallery: EmbeddingCollection | GalleryIndex,
    k: int,
    parallelism: int = 1,
) -> list[RankedList]:
    """search_topk over every query, fanned out over a thread pool.

    Output order matches query order and is independent of parallelism.
    """
    if parallelism < 1:
        raise ValueError(f"parallelism must be >= 1, got {parallelism}")
    if not queries.records:
        return []
    index = _as_index(gallery)
    if queries.dim != index.dim:
        raise DimensionMismatch(f"queries are {queries.dim}-d, gallery is {index.dim}-d")

    def one(record: EmbeddingRecord) -> RankedList:
        return RankedList(query_id=record.id, hits=index.search_vector(record.vector, k))

    if parallelism == 1:
        return [one(r) for r in queries.records]
    with ThreadPoolExecutor(max_workers=parallelism) as pool:
        return list(pool.map(one, queries.records))


def write_results_jsonl(results: list[RankedList], path) -> None:
    """One JSON object per query; scores fixed at 6 decimal places."""
    lines = []
    for r in results:
        hits = ", ".join(
            f'{{"id": {json.dumps(h.id)}, "score": {h.score:.6f}}}' for h in r.hits
        )
        lines.append(f'{{"query_id": {json.dumps(r.query_id)}, "hits": [{hits}]}}')
    try:
        Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")
    except OSError as e:
        raise IoFailure(f"cannot write results to {path}: {e}") from e


def read_results_jsonl(path) -> list[RankedList]:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as e:
        raise IoFailure(f"cannot read results from {path}: {e}") from e
    results = []
    for lineno, line in enumerate(text.splitlines(), start=1):
        if not line.strip():
            continue
        try:
            obj = json.loads(line)
            hits = [Hit(str(h["id"]), float(h["score"])) for h in obj["hits"]]
            results.append(RankedList(query_id=str(obj["query_id"]), hits=hits))
        except (json.JSONDecodeError, KeyError, TypeError, ValueError) as e:
            raise MalformedFile(f"{path.name}: line {lineno}: {e}") from e
    return results
