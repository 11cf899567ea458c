"""Shared fixtures: collection builders and mock client fixture directories."""

from __future__ import annotations

import json

import numpy as np
import pytest

from crossview.geo import GeoCoordinate, tile_key
from crossview.geoclients import prompt_fingerprint
from crossview.pipeline import LOCATION_PROMPT_V1, aggregate_context
from crossview.store import EmbeddingCollection, EmbeddingRecord

FAKE_PNG = b"\x89PNG\r\n\x1a\nfakebytes"


def make_collection(vectors, ids=None, labels=None, geo=None, role="gallery"):
    """Build a collection from an (n, d) array plus optional metadata lists."""
    vectors = np.asarray(vectors, dtype=np.float32)
    n, d = vectors.shape
    ids = ids if ids is not None else [f"r{i:04d}" for i in range(n)]
    labels = labels if labels is not None else [f"c{i:04d}" for i in range(n)]
    geo = geo if geo is not None else [None] * n
    records = [EmbeddingRecord(ids[i], labels[i], vectors[i], geo[i]) for i in range(n)]
    return EmbeddingCollection(dim=d, records=records, role=role)


@pytest.fixture
def collection_factory():
    return make_collection


class FixtureBuilder:
    """Writes a mock-client fixture directory piece by piece."""

    def __init__(self, root):
        self.root = root
        (root / "image_search").mkdir(parents=True)
        (root / "tiles").mkdir()
        self.llm: dict[str, str] = {}
        self.geocode: dict[str, list[float]] = {}

    def add_image(self, image_ref, snippets):
        doc = {"snippets": [
            {"url": s.get("url", ""), "title": s.get("title", ""), "body": s.get("body", "")}
            for s in snippets
        ]}
        (self.root / "image_search" / f"{image_ref}.json").write_text(
            json.dumps(doc), encoding="utf-8"
        )

    def add_llm_answer(self, prompt, answer):
        self.llm[prompt_fingerprint(prompt)] = answer

    def add_geocode(self, name, lat, lon):
        self.geocode[name.strip().lower()] = [lat, lon]

    def add_tile(self, lat, lon, zoom, content=FAKE_PNG):
        key = tile_key(GeoCoordinate(lat, lon), zoom)
        (self.root / "tiles" / f"{key}.png").write_bytes(content)
        return key

    def add_full_chain(self, image_ref, snippets, place, lat, lon, zoom,
                       template=LOCATION_PROMPT_V1, budget=None):
        """Wire one image through all four services and return the tile key."""
        self.add_image(image_ref, snippets)
        docs = _docs_for(image_ref, snippets)
        prompt = aggregate_context([docs], template=template, budget=budget)
        self.add_llm_answer(prompt, place)
        self.add_geocode(place, lat, lon)
        return self.add_tile(lat, lon, zoom)

    def flush(self):
        (self.root / "infer_location.json").write_text(json.dumps(self.llm), encoding="utf-8")
        (self.root / "geocode.json").write_text(json.dumps(self.geocode), encoding="utf-8")
        return self.root


def _docs_for(image_ref, snippets):
    from crossview.geoclients import ContextDocuments, ContextSnippet

    return ContextDocuments(
        source_image=image_ref,
        snippets=[ContextSnippet(url=s.get("url", ""), title=s.get("title", ""),
                                 body=s.get("body", "")) for s in snippets],
        collected_at="",
    )


@pytest.fixture
def fixture_builder(tmp_path):
    return FixtureBuilder(tmp_path / "fixtures")
