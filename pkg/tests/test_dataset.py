"""Pair manifest construction, seed expansion, and manifest validation."""

import json

import pytest

from crossview.errors import NoLocationFound
from crossview.geo import GeoCoordinate
from crossview.geoclients import MockGeoClients, TileSpec, prompt_fingerprint
from crossview.dataset import (
    build_pairs,
    expand_seeds,
    load_manifest,
    normalize_place,
    save_manifest,
    validate_manifest,
)

SPEC = TileSpec(zoom=17)


def seed_fixtures(fb, places):
    """Full chain keyed by place name (search by text, geocode, tile)."""
    for i, place in enumerate(places):
        fb.add_image(place, [
            {"url": f"http://imgs/{i}/a.jpg", "title": place, "body": "street photo"},
            {"url": f"http://imgs/{i}/b.jpg", "title": place, "body": "another angle"},
            {"url": f"http://imgs/{i}/c.jpg", "title": place, "body": "third angle"},
        ])
        fb.add_geocode(place, 10.0 + i, 100.0 + i)
        fb.add_tile(10.0 + i, 100.0 + i, SPEC.zoom)
    return fb


class TestBuildPairs:
    def test_two_seeds_full_chain(self, fixture_builder):
        seed_fixtures(fixture_builder, ["Marina Bay Sands", "Colosseum"]).flush()
        clients = MockGeoClients(fixture_builder.root)
        manifest = build_pairs(["Marina Bay Sands", "Colosseum"], clients, 2, SPEC)
        assert len(manifest.entries) == 2
        assert not manifest.skips
        for entry in manifest.entries:
            assert len(entry.street_images) == 2
            assert entry.tile_ref
        assert manifest.entries[0].coordinate == GeoCoordinate(10.0, 100.0)

    def test_tile_center_equals_geocode_output(self, fixture_builder):
        seed_fixtures(fixture_builder, ["Colosseum"]).flush()
        clients = MockGeoClients(fixture_builder.root)
        manifest = build_pairs(["Colosseum"], clients, 1, SPEC)
        entry = manifest.entries[0]
        assert entry.coordinate == clients.geocode(entry.place)

    def test_seed_without_geocode_is_skipped_with_stage(self, fixture_builder):
        fb = seed_fixtures(fixture_builder, ["Known Place"])
        fb.add_image("Lost Place", [{"url": "http://x.jpg"}])
        fb.flush()
        clients = MockGeoClients(fb.root)
        manifest = build_pairs(["Known Place", "Lost Place"], clients, 1, SPEC)
        assert len(manifest.entries) == 1
        assert len(manifest.skips) == 1
        assert manifest.skips[0].stage == "geocode"
        assert manifest.skips[0].place == "Lost Place"

    def test_skip_accounting(self, fixture_builder):
        fb = seed_fixtures(fixture_builder, ["A Place"])
        fb.flush()
        clients = MockGeoClients(fb.root)
        seeds = ["A Place", "No Fixtures At All", "a  place", "A Place"]
        manifest = build_pairs(seeds, clients, 1, SPEC)
        assert len(manifest.entries) + len(manifest.skips) == len(seeds)
        stages = sorted(s.stage for s in manifest.skips)
        assert stages == ["dedupe", "dedupe", "search"]

    def test_deterministic_modulo_timestamp(self, fixture_builder):
        seed_fixtures(fixture_builder, ["Marina Bay Sands"]).flush()
        clients = MockGeoClients(fixture_builder.root)
        m1 = build_pairs(["Marina Bay Sands"], clients, 2, SPEC)
        m2 = build_pairs(["Marina Bay Sands"], clients, 2, SPEC)
        d1, d2 = m1.to_json_dict(), m2.to_json_dict()
        d1.pop("created_at"), d2.pop("created_at")
        assert d1 == d2


class TestExpandSeeds:
    def make_clients(self, fb, prompt, answer):
        fb.add_llm_answer(prompt, answer)
        fb.flush()
        return MockGeoClients(fb.root)

    def test_three_lines_in_order(self, fixture_builder):
        clients = self.make_clients(fixture_builder, "list places", "Alpha\nBeta\nGamma\n")
        assert expand_seeds(clients, "list places", 5) == ["Alpha", "Beta", "Gamma"]

    def test_case_insensitive_dedup(self, fixture_builder):
        clients = self.make_clients(fixture_builder, "p", "Colosseum\ncolosseum\nCOLOSSEUM\nRialto")
        assert expand_seeds(clients, "p", 10) == ["Colosseum", "Rialto"]

    def test_count_cap_and_list_markers(self, fixture_builder):
        clients = self.make_clients(fixture_builder, "p", "1. One\n2) Two\n- Three\n* Four")
        assert expand_seeds(clients, "p", 3) == ["One", "Two", "Three"]

    def test_empty_answer(self, fixture_builder):
        clients = self.make_clients(fixture_builder, "p", "\n\n")
        with pytest.raises(NoLocationFound):
            expand_seeds(clients, "p", 3)


class TestValidateManifest:
    def build(self, fixture_builder):
        seed_fixtures(fixture_builder, ["Alpha", "Beta"]).flush()
        clients = MockGeoClients(fixture_builder.root)
        return build_pairs(["Alpha", "Beta"], clients, 2, SPEC)

    def test_fresh_manifest_clean(self, fixture_builder):
        manifest = self.build(fixture_builder)
        assert validate_manifest(manifest).ok

    def test_dangling_tile_reference(self, fixture_builder, tmp_path):
        import os

        manifest = self.build(fixture_builder)
        os.remove(manifest.entries[0].tile_ref)
        report = validate_manifest(manifest)
        assert not report.ok
        assert "dangling tile" in report.issues[0].message

    def test_duplicate_place_detected(self, fixture_builder):
        manifest = self.build(fixture_builder)
        manifest.entries[1].place = manifest.entries[0].place
        report = validate_manifest(manifest)
        assert any("duplicate place" in i.message for i in report.issues)

    def test_url_references_skipped(self, fixture_builder):
        manifest = self.build(fixture_builder)
        # street refs are URLs; only the local tile file must exist
        assert all("://" in ref for e in manifest.entries for ref in e.street_images)
        assert validate_manifest(manifest).ok


class TestManifestPersistence:
    def test_round_trip(self, fixture_builder, tmp_path):
        seed_fixtures(fixture_builder, ["Alpha"]).flush()
        clients = MockGeoClients(fixture_builder.root)
        manifest = build_pairs(["Alpha"], clients, 2, SPEC)
        path = tmp_path / "manifest.json"
        save_manifest(manifest, path)
        back = load_manifest(path)
        assert back.to_json_dict() == manifest.to_json_dict()
        doc = json.loads(path.read_text())
        assert doc["config"]["zoom"] == SPEC.zoom


def test_normalize_place():
    assert normalize_place("  Marina   Bay  Sands ") == "marina bay sands"


def test_prompt_fingerprint_stability():
    assert prompt_fingerprint("abc") == prompt_fingerprint("abc")
    assert prompt_fingerprint("abc") != prompt_fingerprint("abd")
