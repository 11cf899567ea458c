"""Acceptance suite: one test per release criterion, each printing a
PASS/FAIL line (run with -s to see them all). Every expected value is
either hand-derived, analytic, or recomputed by an oracle independent of
the code path under test."""

import json
import math
import time
from contextlib import contextmanager

import numpy as np
import pytest

from crossview.evaluation import (
    GroundTruth,
    evaluate_run,
    k_for_one_percent,
    localization_accuracy,
    recall_at_k,
)
from crossview.geo import EARTH_RADIUS_KM, GeoCoordinate, haversine_km
from crossview.geoclients import MockGeoClients, TileSpec
from crossview.pipeline import QueryGroup, run_query_set
from crossview.retrieval import Hit, RankedList, batch_search, cosine_similarity
from crossview.store import read_collection, write_collection
from crossview.whitening import (
    apply_whitening,
    fit_whitening,
    load_model,
    save_model,
    symmetric_eigen,
)

from conftest import FixtureBuilder, make_collection


@contextmanager
def criterion(num, name):
    start = time.perf_counter()
    try:
        yield
    except BaseException:
        print(f"[acceptance] {num:02d} FAIL  {name}")
        raise
    print(f"[acceptance] {num:02d} PASS  {name}  ({time.perf_counter() - start:.2f}s)")


def test_01_whitening_identity_covariance():
    with criterion(1, "whitened covariance is identity (n=500, d=64, k=32, eps=0)"):
        start = time.perf_counter()
        rng = np.random.default_rng(0)
        x = rng.standard_normal((500, 64)) @ rng.standard_normal((64, 64))
        model = fit_whitening(x, k=32, epsilon=0.0, renormalize=False)
        y = apply_whitening(model, x)
        cov = np.cov(y, rowvar=False)
        assert np.abs(cov - np.eye(32)).max() < 1e-4
        assert np.abs(y.mean(axis=0)).max() < 1e-6
        assert time.perf_counter() - start < 5.0


def test_02_eigensolver_residuals():
    with criterion(2, "eigen residuals <= 1e-8*max(1,lambda) on 50 random matrices"):
        start = time.perf_counter()
        rng = np.random.default_rng(1)
        for trial in range(50):
            n = int(rng.integers(1, 65))
            a = rng.standard_normal((n, n))
            a = (a + a.T) / 2.0
            res = symmetric_eigen(a)
            assert np.all(np.diff(res.values) <= 0.0)
            gram = res.vectors.T @ res.vectors
            assert np.abs(gram - np.eye(n)).max() <= 1e-6
            residuals = np.linalg.norm(a @ res.vectors - res.vectors * res.values, axis=0)
            assert np.all(residuals <= 1e-8 * np.maximum(1.0, np.abs(res.values)))
        assert time.perf_counter() - start < 10.0


def _oracle_scan(queries, gallery, k):
    """Independent sequential full scan: per-pair cosine, (-score, id) order."""
    ranked = []
    for q in queries.records:
        scored = sorted(
            ((g.id, cosine_similarity(q.vector.astype(np.float64),
                                      g.vector.astype(np.float64)))
             for g in gallery.records),
            key=lambda t: (-t[1], t[0]),
        )
        ranked.append(scored[:k])
    return ranked


def test_03_batch_search_oracle_equivalence():
    with criterion(3, "batch_search(1|2|8 workers) == sequential full scan, ties included"):
        start = time.perf_counter()
        rng = np.random.default_rng(2)
        gvecs = rng.standard_normal((1000, 128)).astype(np.float32)
        # exact ties: 10 duplicated gallery vectors
        for i in range(10):
            gvecs[500 + i] = gvecs[i]
        gallery = make_collection(gvecs, ids=[f"g{i:04d}" for i in range(1000)])
        qvecs = rng.standard_normal((200, 128)).astype(np.float32)
        # queries aimed straight at duplicated vectors force ties in the top ranks
        for i in range(10):
            qvecs[i] = gvecs[i]
        queries = make_collection(qvecs, role="query")

        sequential = batch_search(queries, gallery, k=20, parallelism=1)
        for workers in (2, 8):
            parallel = batch_search(queries, gallery, k=20, parallelism=workers)
            assert parallel == sequential  # ids, order and score bits

        expected = _oracle_scan(queries, gallery, 20)
        for got, exp in zip(sequential, expected):
            assert got.ids == [e[0] for e in exp]
            np.testing.assert_allclose(
                [h.score for h in got.hits], [e[1] for e in exp], atol=1e-9
            )
        # duplicated pair must tie exactly and resolve by ascending id
        tie = sequential[0]
        assert tie.ids[0] == "g0000" and tie.ids[1] == "g0500"
        assert tie.hits[0].score == tie.hits[1].score
        assert time.perf_counter() - start < 10.0


def _ranked_with_gt_at(query_id, gt_gallery_id, rank, gallery_ids):
    fillers = [g for g in gallery_ids if g != gt_gallery_id]
    order = fillers[: rank - 1] + [gt_gallery_id] + fillers[rank - 1 :]
    return RankedList(query_id, [Hit(g, 1.0 - 0.05 * i) for i, g in enumerate(order)])


def test_04_recall_hand_built_instance():
    with criterion(4, "R@1=0.25, R@5=0.75, R@10=1.0 on GT ranks {1,2,3,7}"):
        gallery_ids = [f"g{i}" for i in range(10)]
        gt = GroundTruth(
            query_labels={f"q{i}": {f"L{i}"} for i in range(4)},
            gallery_labels={f"g{i}": f"L{i}" for i in range(10)},
        )
        results = [
            _ranked_with_gt_at("q0", "g0", 1, gallery_ids),
            _ranked_with_gt_at("q1", "g1", 2, gallery_ids),
            _ranked_with_gt_at("q2", "g2", 3, gallery_ids),
            _ranked_with_gt_at("q3", "g3", 7, gallery_ids),
        ]
        assert recall_at_k(results, gt, 1) == 0.25
        assert recall_at_k(results, gt, 5) == 0.75
        assert recall_at_k(results, gt, 10) == 1.0


def test_05_one_percent_rule_consistency():
    with criterion(5, "k@1%(951)=9 and R@1% <= R@10 on random fixtures"):
        assert k_for_one_percent(951) == 9
        rng = np.random.default_rng(3)
        gallery_ids = [f"g{i:04d}" for i in range(951)]
        gallery_labels = {g: f"L{i}" for i, g in enumerate(gallery_ids)}
        for _ in range(20):
            n_q = int(rng.integers(5, 40))
            gt = GroundTruth(
                query_labels={
                    f"q{j}": {f"L{int(rng.integers(951))}"} for j in range(n_q)
                },
                gallery_labels=gallery_labels,
            )
            results = [
                RankedList(
                    f"q{j}",
                    [Hit(g, 1.0 - 0.001 * r)
                     for r, g in enumerate(rng.permutation(gallery_ids)[:50])],
                )
                for j in range(n_q)
            ]
            report = evaluate_run(results, gt, ks=[1, 5, 10], gallery_size=951)
            assert report.k_one_percent == 9
            assert report.r_at_one_percent <= report.recall[10] + 1e-12


def test_06_haversine_analytic_arcs_and_metric_properties():
    with criterion(6, "haversine quarter/half arcs within 0.01 km; metric on 1000 triples"):
        quarter = haversine_km(GeoCoordinate(0, 0), GeoCoordinate(0, 90))
        half = haversine_km(GeoCoordinate(90, 0), GeoCoordinate(-90, 0))
        assert abs(quarter - 10007.543) < 0.01
        assert abs(quarter - math.pi * EARTH_RADIUS_KM / 2.0) < 0.01
        assert abs(half - 20015.087) < 0.01
        assert abs(half - math.pi * EARTH_RADIUS_KM) < 0.01
        rng = np.random.default_rng(4)
        for _ in range(1000):
            a, b, c = (
                GeoCoordinate(float(rng.uniform(-90, 90)),
                              float(rng.uniform(-179.999, 180)))
                for _ in range(3)
            )
            assert haversine_km(a, b) == haversine_km(b, a)
            assert haversine_km(a, a) == 0.0
            assert haversine_km(a, c) <= haversine_km(a, b) + haversine_km(b, c) + 1e-9


def test_07_whitening_improves_cross_domain_retrieval():
    with criterion(7, "whitened (k=16) beats raw R@1 by >= 10 points on synthetic domains"):
        rng = np.random.default_rng(1234)
        n_classes, d_signal, d_total = 200, 16, 64
        centers = rng.standard_normal((n_classes, d_signal))

        def make_side(domain_sign):
            x = np.zeros((n_classes, d_total))
            x[:, :d_signal] = centers + 0.1 * rng.standard_normal((n_classes, d_signal))
            # two high-variance nuisance dims, offset by domain
            x[:, d_signal:d_signal + 2] = domain_sign * 10.0 + 10.0 * rng.standard_normal(
                (n_classes, 2)
            )
            x[:, d_signal + 2:] = 0.05 * rng.standard_normal(
                (n_classes, d_total - d_signal - 2)
            )
            return x

        gallery_x = make_side(+1.0)
        query_x = make_side(-1.0)

        def oracle_r1(qx, gx):
            hits = 0
            for i in range(n_classes):
                sims = [
                    cosine_similarity(qx[i], gx[j]) for j in range(n_classes)
                ]
                hits += int(np.argmax(sims) == i)
            return hits / n_classes

        raw_r1 = oracle_r1(query_x, gallery_x)
        model = fit_whitening(gallery_x, k=16, epsilon=0.0, renormalize=True)
        white_r1 = oracle_r1(apply_whitening(model, query_x), apply_whitening(model, gallery_x))
        assert white_r1 - raw_r1 >= 0.10, f"raw={raw_r1:.3f} whitened={white_r1:.3f}"

        # the engine must agree with the oracle on the whitened task
        gal = make_collection(apply_whitening(model, gallery_x).astype(np.float32),
                              ids=[f"g{i:03d}" for i in range(n_classes)],
                              labels=[f"c{i:03d}" for i in range(n_classes)])
        qs = make_collection(apply_whitening(model, query_x).astype(np.float32),
                             ids=[f"q{i:03d}" for i in range(n_classes)],
                             labels=[f"c{i:03d}" for i in range(n_classes)], role="query")
        results = batch_search(qs, gal, k=1)
        engine_r1 = sum(
            1 for i, r in enumerate(results) if r.ids[0] == f"g{i:03d}"
        ) / n_classes
        assert engine_r1 == pytest.approx(white_r1, abs=1e-12)
        print(f"    raw R@1 = {raw_r1:.3f}, whitened R@1 = {white_r1:.3f}")


def test_08_end_to_end_mock_pipeline(tmp_path):
    with criterion(8, "20-group mock chain: zero failures, GT at rank 1 for every group"):
        start = time.perf_counter()
        rng = np.random.default_rng(5)
        fb = FixtureBuilder(tmp_path / "fixtures")
        dim, n_groups = 16, 20
        gt_vecs = rng.standard_normal((n_groups, dim)).astype(np.float32)
        distractors = rng.standard_normal((n_groups, dim)).astype(np.float32)

        keys = []
        for i in range(n_groups):
            key = fb.add_full_chain(
                f"img_{i:03d}",
                [{"title": f"landmark {i}", "body": f"street photo of landmark {i}"}],
                f"Landmark {i}",
                10.0 + 0.5 * i, 20.0 + 0.25 * i, 18,
            )
            keys.append(key)
        fb.flush()
        clients = MockGeoClients(fb.root)

        gallery = make_collection(
            np.vstack([gt_vecs, distractors]),
            ids=[f"bldg_{i:03d}" for i in range(n_groups)]
            + [f"dist_{i:03d}" for i in range(n_groups)],
            labels=[f"B{i}" for i in range(n_groups)] + [f"D{i}" for i in range(n_groups)],
        )
        tile_vecs = gt_vecs + rng.normal(0.0, 1e-3, gt_vecs.shape).astype(np.float32)
        query_embeddings = make_collection(tile_vecs, ids=keys, role="query")

        groups = [QueryGroup(f"G{i:03d}", [f"img_{i:03d}"]) for i in range(n_groups)]
        results, summary = run_query_set(
            groups, clients, TileSpec(zoom=18),
            gallery=gallery, query_embeddings=query_embeddings, k=5,
            parallelism=4, budget=None,
        )
        assert summary.total == n_groups and summary.ok == n_groups
        assert summary.failures == {}
        for i, r in enumerate(results):
            assert r.query.ok, r.query.trace
            assert r.hits.ids[0] == f"bldg_{i:03d}"
        assert time.perf_counter() - start < 5.0


def test_09_localization_harness_planted_offsets():
    with criterion(9, "planted offsets {0,0.3,0.7,1.5,3,10} km match hand counts exactly"):
        offsets = [0.0, 0.3, 0.7, 1.5, 3.0, 10.0]
        base = GeoCoordinate(37.0, 127.0)
        pred, gt = {}, {}
        for i in range(20):
            off = offsets[i % 6]
            q = f"q{i:02d}"
            gt[q] = base
            moved = GeoCoordinate(base.lat + math.degrees(off / EARTH_RADIUS_KM), base.lon)
            pred[q] = moved
            # verify the planted displacement with the haversine oracle
            assert haversine_km(moved, base) == pytest.approx(off, abs=1e-9)
        report = localization_accuracy(pred, gt, [0.5, 1.0, 2.0, 5.0])
        expected = {0.5: (8, 40.0), 1.0: (11, 55.0), 2.0: (14, 70.0), 5.0: (17, 85.0)}
        assert report.total_queries == 20
        for bucket in report.buckets:
            matched, pct = expected[bucket.threshold_km]
            assert bucket.matched == matched
            assert bucket.accuracy_pct == pct


def test_10_format_round_trips(tmp_path):
    with criterion(10, "100 EMB1 collections and 100 models rewrite byte-identically"):
        rng = np.random.default_rng(6)
        for trial in range(100):
            n = int(rng.integers(1, 12))
            d = int(rng.integers(1, 10))
            geo = [
                GeoCoordinate(float(rng.uniform(-90, 90)), float(rng.uniform(-179, 180)))
                if rng.random() < 0.5 else None
                for _ in range(n)
            ]
            c = make_collection(
                rng.standard_normal((n, d)).astype(np.float32),
                ids=[f"id{trial}_{j}" for j in range(n)],
                geo=geo,
            )
            p1 = tmp_path / f"c{trial}_a.emb1"
            p2 = tmp_path / f"c{trial}_b.emb1"
            write_collection(c, p1)
            write_collection(read_collection(p1), p2)
            assert p1.read_bytes() == p2.read_bytes()

        for trial in range(100):
            n = int(rng.integers(4, 30))
            d = int(rng.integers(2, 8))
            k = int(rng.integers(1, d + 1))
            model = fit_whitening(rng.standard_normal((n, d)), k=k)
            p1 = tmp_path / f"m{trial}_a.json"
            p2 = tmp_path / f"m{trial}_b.json"
            save_model(model, p1)
            save_model(load_model(p1), p2)
            assert p1.read_bytes() == p2.read_bytes()


def test_reference_run_documentation():
    """Published full-scale results (encoder + live services required) are
    documentation only; this records the numbers the harness schema mirrors
    without asserting them."""
    reference = {
        "street_to_satellite_r1_raw": 22.84,
        "street_to_satellite_r1_refined_256d": 25.57,
        "stage1_accuracy_pct_at_0p5km": 54.57,
        "stage1_matched_of_700": 382,
    }
    assert json.dumps(reference)  # schema stays serializable
