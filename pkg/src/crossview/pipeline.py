"""End-to-end satellite query generation and retrieval hand-off.

For one street image the pipeline runs five stages in fixed order:
web context search, context aggregation into a prompt, LLM location
inference, geocoding, and satellite tile fetch. Each stage outcome is
recorded in the query's trace; the first failure ends the run for that
query without aborting the batch. Retrieval never embeds images itself:
generated tiles are joined to precomputed embeddings by their quantized
tile key.
"""

from __future__ import annotations

import json
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

from .errors import (
    ClientError,
    DimensionMismatch,
    EmptyContext,
    IoFailure,
    MalformedFile,
    MissingQueryEmbedding,
)
from .geo import GeoCoordinate, tile_key
from .geoclients import ContextDocuments, PlaceName, SatelliteTile, TileSpec
from .retrieval import GalleryIndex, RankedList
from .store import EmbeddingCollection
from .whitening import WhiteningModel, apply_whitening

PIPELINE_STAGES = ("search", "aggregate", "infer", "geocode", "tile")

DOC_DELIMITER = "-----"
DEFAULT_CONTEXT_BUDGET = 8000


@dataclass(frozen=True)
class PromptTemplate:
    """Versioned instruction text prefixed to the aggregated web context."""

    version: str
    text: str


LOCATION_PROMPT_V1 = PromptTemplate(
    version="location-v1",
    text=(
        "You are given web search context gathered for one or more street-level photos.\n"
        "Name the single most specific geolocatable place the context describes.\n"
        "Prefer physical places (a landmark, building, or administrative area) over\n"
        "events, organizations, or abstract topics. Answer with the place name only,\n"
        "on the first line.\n"
        "Context:"
    ),
)


@dataclass
class StageOutcome:
    stage: str
    ok: bool
    duration_s: float
    error: str | None = None
    detail: str | None = None

    def to_json_dict(self) -> dict:
        doc = {"stage": self.stage, "ok": self.ok, "duration_s": round(self.duration_s, 6)}
        if self.error:
            doc["error"] = self.error
        if self.detail:
            doc["detail"] = self.detail
        return doc


@dataclass
class SatelliteQuery:
    """Everything produced for one street image, plus the stage trace."""

    source_image: str
    place: PlaceName | None = None
    coordinate: GeoCoordinate | None = None
    tile: SatelliteTile | None = None
    trace: list[StageOutcome] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return bool(self.trace) and all(s.ok for s in self.trace)

    @property
    def failed_stage(self) -> str | None:
        for s in self.trace:
            if not s.ok:
                return s.stage
        return None


def render_context(docs: list[ContextDocuments], template: PromptTemplate) -> str:
    """Template plus every document's snippets, documents separated by a
    delimiter line; snippets keep their provider order."""
    if not docs:
        raise ValueError("at least one context document is required")
    blocks = []
    for doc in docs:
        parts = [s.text() for s in doc.snippets if s.text()]
        if parts:
            blocks.append("\n".join(parts))
    if not blocks:
        raise EmptyContext("all snippets are empty")
    return template.text + "\n" + f"\n{DOC_DELIMITER}\n".join(blocks)


def aggregate_context(
    docs: list[ContextDocuments],
    template: PromptTemplate = LOCATION_PROMPT_V1,
    budget: int | None = DEFAULT_CONTEXT_BUDGET,
) -> str:
    """Deterministic prompt construction, tail-truncated to the budget."""
    text = render_context(docs, template)
    if budget is not None and len(text) > budget:
        return text[:budget]
    return text


def generate_satellite_query(
    image_ref: str,
    clients,
    spec: TileSpec,
    template: PromptTemplate = LOCATION_PROMPT_V1,
    budget: int | None = DEFAULT_CONTEXT_BUDGET,
) -> SatelliteQuery:
    """Run the five stages for one image; failures end up in the trace."""
    sq = SatelliteQuery(source_image=image_ref)

    def run_stage(stage, fn, detail_fn=None):
        start = time.perf_counter()
        try:
            value = fn()
        except (ClientError, EmptyContext) as e:
            sq.trace.append(
                StageOutcome(stage, ok=False, duration_s=time.perf_counter() - start,
                             error=type(e).__name__, detail=str(e))
            )
            return None, True
        sq.trace.append(
            StageOutcome(stage, ok=True, duration_s=time.perf_counter() - start,
                         detail=detail_fn(value) if detail_fn else None)
        )
        return value, False

    docs, failed = run_stage("search", lambda: clients.image_search(image_ref),
                             lambda d: f"{len(d.snippets)} snippets")
    if failed:
        return sq

    def do_aggregate():
        full = render_context([docs], template)
        truncated = budget is not None and len(full) > budget
        return (full[:budget] if truncated else full), truncated

    agg, failed = run_stage("aggregate", do_aggregate,
                            lambda v: f"prompt_chars={len(v[0])}" + (", truncated" if v[1] else ""))
    if failed:
        return sq
    prompt = agg[0]

    place, failed = run_stage("infer", lambda: clients.infer_location(prompt), lambda p: p.name)
    if failed:
        return sq
    sq.place = place

    coord, failed = run_stage("geocode", lambda: clients.geocode(place),
                              lambda c: f"{c.lat:.5f},{c.lon:.5f}")
    if failed:
        return sq
    sq.coordinate = coord

    tile, failed = run_stage("tile", lambda: clients.fetch_tile(coord, spec),
                             lambda t: t.image_ref)
    if not failed:
        sq.tile = tile
    return sq


def locate_and_retrieve(
    image_ref: str,
    clients,
    gallery: EmbeddingCollection | GalleryIndex,
    query_embeddings: EmbeddingCollection,
    spec: TileSpec,
    whitening_model: WhiteningModel | None = None,
    k: int = 10,
    template: PromptTemplate = LOCATION_PROMPT_V1,
    budget: int | None = DEFAULT_CONTEXT_BUDGET,
) -> tuple[SatelliteQuery, RankedList | None]:
    """Generate the satellite query, then rank the gallery against the
    tile's precomputed embedding (looked up by quantized tile key).

    Returns (query, None) when a pipeline stage failed; raises
    MissingQueryEmbedding when the tile has no precomputed vector.
    """
    index = gallery if isinstance(gallery, GalleryIndex) else GalleryIndex(gallery)
    sq = generate_satellite_query(image_ref, clients, spec, template=template, budget=budget)
    if not sq.ok:
        return sq, None
    key = tile_key(sq.coordinate, spec.zoom)
    record = query_embeddings.by_id().get(key)
    if record is None:
        err = MissingQueryEmbedding(f"no precomputed embedding for tile {key}")
        err.query = sq  # lets batch callers keep the trace without re-running stages
        raise err
    vec = record.vector
    if whitening_model is not None:
        if whitening_model.dim != record.dim:
            raise DimensionMismatch(
                f"whitening model expects {whitening_model.dim}-d input, tile embedding is {record.dim}-d"
            )
        if whitening_model.k != index.dim:
            raise DimensionMismatch(
                f"whitening model outputs {whitening_model.k}-d, gallery is {index.dim}-d"
            )
        vec = apply_whitening(whitening_model, vec)
    hits = index.search_vector(vec, k)
    return sq, RankedList(query_id=image_ref, hits=hits)


@dataclass
class QueryGroup:
    """One query set: all street photos of a single target."""

    group_id: str
    image_refs: list[str]


@dataclass
class GroupResult:
    group_id: str
    image_ref: str
    query: SatelliteQuery
    hits: RankedList | None = None
    failed_stage: str | None = None


@dataclass
class RunSummary:
    total: int
    ok: int
    failures: dict[str, int]

    def to_json_dict(self) -> dict:
        return {"total": self.total, "ok": self.ok, "failures": dict(sorted(self.failures.items()))}


def run_query_set(
    groups: list[QueryGroup],
    clients,
    spec: TileSpec,
    gallery: EmbeddingCollection | GalleryIndex | None = None,
    query_embeddings: EmbeddingCollection | None = None,
    whitening_model: WhiteningModel | None = None,
    k: int = 10,
    all_images: bool = False,
    parallelism: int = 1,
    template: PromptTemplate = LOCATION_PROMPT_V1,
    budget: int | None = DEFAULT_CONTEXT_BUDGET,
) -> tuple[list[GroupResult], RunSummary]:
    """Process each group's first image (or every image with all_images).

    A failing query never aborts the batch; the summary accounts for every
    execution either under "ok" or under its first failed stage.
    """
    retrieval = gallery is not None
    if retrieval and query_embeddings is None:
        raise ValueError("retrieval needs query_embeddings alongside the gallery")
    index = None
    if retrieval:
        index = gallery if isinstance(gallery, GalleryIndex) else GalleryIndex(gallery)

    jobs = []
    for g in groups:
        refs = g.image_refs if all_images else g.image_refs[:1]
        jobs.extend((g.group_id, ref) for ref in refs)

    def run_one(job) -> GroupResult:
        group_id, ref = job
        if not retrieval:
            sq = generate_satellite_query(ref, clients, spec, template=template, budget=budget)
            return GroupResult(group_id, ref, sq, None, sq.failed_stage)
        try:
            sq, hits = locate_and_retrieve(
                ref, clients, index, query_embeddings, spec,
                whitening_model=whitening_model, k=k, template=template, budget=budget,
            )
        except MissingQueryEmbedding as e:
            # trace keeps its fixed five-stage shape; the missing embedding
            # is a retrieval-side failure recorded on the group result only
            sq = getattr(e, "query", None) or generate_satellite_query(
                ref, clients, spec, template=template, budget=budget
            )
            return GroupResult(group_id, ref, sq, None, "retrieve")
        return GroupResult(group_id, ref, sq, hits, sq.failed_stage)

    if parallelism <= 1 or len(jobs) <= 1:
        results = [run_one(j) for j in jobs]
    else:
        with ThreadPoolExecutor(max_workers=parallelism) as pool:
            results = list(pool.map(run_one, jobs))

    failures: dict[str, int] = {}
    ok = 0
    for r in results:
        if r.failed_stage is None:
            ok += 1
        else:
            failures[r.failed_stage] = failures.get(r.failed_stage, 0) + 1
    return results, RunSummary(total=len(results), ok=ok, failures=failures)


# --- manifest and output files -------------------------------------------------

def load_query_groups(path) -> list[QueryGroup]:
    """Batch manifest: one {"group_id", "image_refs": [...]} object per line."""
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as e:
        raise IoFailure(f"cannot read manifest {path}: {e}") from e
    groups = []
    for lineno, line in enumerate(text.splitlines(), start=1):
        if not line.strip():
            continue
        try:
            obj = json.loads(line)
            refs = [str(r) for r in obj["image_refs"]]
            groups.append(QueryGroup(group_id=str(obj["group_id"]), image_refs=refs))
        except (json.JSONDecodeError, KeyError, TypeError) as e:
            raise MalformedFile(f"{path.name}: line {lineno}: {e}") from e
        if not groups[-1].image_refs:
            raise MalformedFile(f"{path.name}: line {lineno}: group has no image refs")
    return groups


def query_outcome_json(result: GroupResult, spec: TileSpec) -> dict:
    sq = result.query
    doc: dict = {
        "group_id": result.group_id,
        "image_ref": result.image_ref,
        "ok": result.failed_stage is None,
        "trace": [s.to_json_dict() for s in sq.trace],
    }
    if result.failed_stage is not None:
        doc["failed_stage"] = result.failed_stage
    if sq.place is not None:
        doc["place"] = sq.place.name
    if sq.coordinate is not None:
        doc["lat"] = sq.coordinate.lat
        doc["lon"] = sq.coordinate.lon
        doc["tile_key"] = tile_key(sq.coordinate, spec.zoom)
    if sq.tile is not None:
        doc["tile_image"] = sq.tile.image_ref
    if result.hits is not None:
        doc["hits"] = [{"id": h.id, "score": round(h.score, 6)} for h in result.hits.hits]
    return doc


def write_query_outcomes(results: list[GroupResult], spec: TileSpec, path) -> None:
    lines = [json.dumps(query_outcome_json(r, spec), sort_keys=True) for r in results]
    try:
        Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")
    except OSError as e:
        raise IoFailure(f"cannot write outcomes to {path}: {e}") from e
