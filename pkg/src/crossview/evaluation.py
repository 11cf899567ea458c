"""Retrieval and localization metrics.

Recall@k follows the per-query ratio of relevant items retrieved in the
top k over relevant items available, averaged over queries; with one
relevant gallery item per query this is the usual hit indicator. R@1%
uses k = max(1, floor(gallery_size / 100)). Localization accuracy is the
percentage of queries whose predicted coordinate lies within each
distance threshold of the ground truth; queries without a prediction
count as misses.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

from .errors import IoFailure, MalformedFile, MissingGroundTruth
from .geo import GeoCoordinate, haversine_km
from .retrieval import RankedList


@dataclass
class GroundTruth:
    """Relevance labels: per-query relevant label set and per-gallery-item label."""

    query_labels: dict[str, set[str]]
    gallery_labels: dict[str, str]

    def relevant_ids(self, query_id: str) -> set[str]:
        if query_id not in self.query_labels:
            raise MissingGroundTruth(f"no ground-truth labels for query {query_id!r}")
        wanted = self.query_labels[query_id]
        return {gid for gid, label in self.gallery_labels.items() if label in wanted}


def recall_at_k(results: list[RankedList], gt: GroundTruth, k: int) -> float:
    """Average over queries of |relevant in top-k| / |relevant|.

    A query whose labels match nothing in the gallery can never be
    retrieved and counts as 0.
    """
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    if not results:
        raise ValueError("no results to evaluate")
    total = 0.0
    for r in results:
        relevant = gt.relevant_ids(r.query_id)
        if not relevant:
            continue
        found = sum(1 for h in r.hits[:k] if h.id in relevant)
        total += found / len(relevant)
    return total / len(results)


def k_for_one_percent(gallery_size: int) -> int:
    """k used by R@1%: one percent of the gallery, floored, at least 1."""
    if gallery_size < 1:
        raise ValueError(f"gallery size must be >= 1, got {gallery_size}")
    return max(1, gallery_size // 100)


@dataclass
class ThresholdBucket:
    threshold_km: float
    matched: int
    accuracy_pct: float


def localization_accuracy(
    pred: dict[str, GeoCoordinate],
    gt: dict[str, GeoCoordinate],
    thresholds_km: list[float],
) -> "LocalizationReport":
    """Per-threshold percentage of queries localized within the threshold.

    The denominator is the full ground-truth query set; queries missing
    from pred are unmatched at every threshold.
    """
    unknown = set(pred) - set(gt)
    if unknown:
        raise MissingGroundTruth(f"no ground-truth coordinate for query {sorted(unknown)[0]!r}")
    if not gt:
        raise ValueError("ground truth is empty")
    distances = [haversine_km(pred[q], gt[q]) for q in gt if q in pred]
    total = len(gt)
    buckets = []
    for t in thresholds_km:
        matched = sum(1 for d in distances if d <= t)
        buckets.append(ThresholdBucket(threshold_km=float(t), matched=matched,
                                       accuracy_pct=100.0 * matched / total))
    return LocalizationReport(total_queries=total, buckets=buckets)


@dataclass
class LocalizationReport:
    total_queries: int
    buckets: list[ThresholdBucket]

    def to_json_dict(self) -> dict:
        return {
            "total_queries": self.total_queries,
            "thresholds": [
                {"km": b.threshold_km, "accuracy_pct": b.accuracy_pct, "matched": b.matched}
                for b in self.buckets
            ],
        }

    def format_table(self) -> str:
        width = max(8, *(len(f"{b.threshold_km:g}") + 2 for b in self.buckets))
        head = "Threshold (km)".ljust(18) + "".join(f"{b.threshold_km:g}".rjust(width) for b in self.buckets)
        acc = "Accuracy (%)".ljust(18) + "".join(f"{b.accuracy_pct:.2f}".rjust(width) for b in self.buckets)
        mat = f"Matched (of {self.total_queries})".ljust(18) + "".join(
            str(b.matched).rjust(width) for b in self.buckets
        )
        return "\n".join([head, acc, mat])


@dataclass
class EvaluationReport:
    """Recall at each requested k plus R@1% for one retrieval run."""

    query_count: int
    gallery_size: int
    k_one_percent: int
    recall: dict[int, float]
    r_at_one_percent: float
    include_one_percent: bool = True

    def to_json_dict(self) -> dict:
        doc = {
            "query_count": self.query_count,
            "gallery_size": self.gallery_size,
            "recall": {str(k): v for k, v in sorted(self.recall.items())},
        }
        if self.include_one_percent:
            doc["k_one_percent"] = self.k_one_percent
            doc["r_at_one_percent"] = self.r_at_one_percent
        return doc

    @classmethod
    def from_json_dict(cls, doc: dict) -> "EvaluationReport":
        return cls(
            query_count=int(doc["query_count"]),
            gallery_size=int(doc["gallery_size"]),
            k_one_percent=int(doc.get("k_one_percent", 0)),
            recall={int(k): float(v) for k, v in doc["recall"].items()},
            r_at_one_percent=float(doc.get("r_at_one_percent", 0.0)),
            include_one_percent="r_at_one_percent" in doc,
        )

    def format_table(self) -> str:
        ks = sorted(self.recall)
        cols = [f"R@{k}" for k in ks]
        vals = [f"{self.recall[k] * 100:.2f}" for k in ks]
        if self.include_one_percent:
            cols.append("R@1%")
            vals.append(f"{self.r_at_one_percent * 100:.2f}")
        width = max(8, *(len(c) + 2 for c in cols))
        lines = [
            f"Queries: {self.query_count}    Gallery: {self.gallery_size}"
            + (f"    k@1%: {self.k_one_percent}" if self.include_one_percent else ""),
            "Metric".ljust(10) + "".join(c.rjust(width) for c in cols),
            "Recall %".ljust(10) + "".join(v.rjust(width) for v in vals),
        ]
        return "\n".join(lines)


def evaluate_run(
    results: list[RankedList],
    gt: GroundTruth,
    ks: list[int],
    gallery_size: int,
) -> EvaluationReport:
    """Recall at every requested k plus R@1% in one deterministic report."""
    k1 = k_for_one_percent(gallery_size)
    return EvaluationReport(
        query_count=len(results),
        gallery_size=gallery_size,
        k_one_percent=k1,
        recall={int(k): recall_at_k(results, gt, int(k)) for k in ks},
        r_at_one_percent=recall_at_k(results, gt, k1),
    )


# --- file formats ------------------------------------------------------------

def _read_jsonl(path, required: tuple[str, ...]) -> list[dict]:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as e:
        raise IoFailure(f"cannot read {path}: {e}") from e
    rows = []
    for lineno, line in enumerate(text.splitlines(), start=1):
        if not line.strip():
            continue
        try:
            obj = json.loads(line)
        except json.JSONDecodeError as e:
            raise MalformedFile(f"{path.name}: line {lineno}: {e}") from e
        missing = [f for f in required if f not in obj]
        if missing:
            raise MalformedFile(f"{path.name}: line {lineno}: missing field {missing[0]!r}")
        rows.append(obj)
    return rows


def load_ground_truth(query_labels_path, gallery_labels_path) -> GroundTruth:
    """Read query labels ({"query_id","label"}) and gallery labels ({"id","label"})."""
    query_labels: dict[str, set[str]] = {}
    for obj in _read_jsonl(query_labels_path, ("query_id", "label")):
        query_labels.setdefault(str(obj["query_id"]), set()).add(str(obj["label"]))
    gallery_labels = {
        str(obj["id"]): str(obj["label"])
        for obj in _read_jsonl(gallery_labels_path, ("id", "label"))
    }
    return GroundTruth(query_labels=query_labels, gallery_labels=gallery_labels)


def load_coordinates(path) -> dict[str, GeoCoordinate]:
    """Read a coordinates file: one {"id","lat","lon"} object per line."""
    out = {}
    for obj in _read_jsonl(path, ("id", "lat", "lon")):
        try:
            out[str(obj["id"])] = GeoCoordinate(float(obj["lat"]), float(obj["lon"]))
        except ValueError as e:
            raise MalformedFile(f"{Path(path).name}: id {obj['id']!r}: {e}") from e
    return out
