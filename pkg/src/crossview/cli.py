"""Command-line entry point.

Every pipeline stage is a subcommand with file-based inputs and outputs:

    ingest          convert/validate embedding collections (emb1 <-> csv)
    whiten fit      fit a whitening model on a gallery
    whiten apply    project a collection through a fitted model
    search          exhaustive cosine top-k retrieval
    eval retrieval  Recall@k / R@1% report from a results file
    eval localize   Haversine threshold accuracy report
    geolocate       satellite query generation (single image or manifest)
    build-dataset   street-to-satellite pair manifest from seed places
    fixtures check  validate a mock fixture directory

Exit codes: 0 success, 1 validation/configuration error, 2 upstream or
live-client failure. Diagnostics go to stderr; machine-readable output
goes to files or stdout.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

import numpy as np

from . import dataset as ds
from . import evaluation as ev
from . import geoclients as gc
from . import pipeline as pl
from . import retrieval as rt
from . import store
from . import whitening as wh
from .errors import ClientError, ConfigurationError, CrossviewError, RateLimited, UpstreamFailure

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_UPSTREAM = 2


class _Parser(argparse.ArgumentParser):
    """argparse exits 2 on usage errors; the contract here is exit 1."""

    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _int_list(text: str) -> list[int]:
    return [int(x) for x in text.split(",") if x.strip()]


def _float_list(text: str) -> list[float]:
    return [float(x) for x in text.split(",") if x.strip()]


def _tile_size(text: str) -> tuple[int, int]:
    try:
        w, h = text.lower().split("x")
        return int(w), int(h)
    except ValueError as e:
        raise argparse.ArgumentTypeError(f"expected WxH, got {text!r}") from e


def build_parser() -> _Parser:
    parser = _Parser(prog="crossview", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p_ingest = sub.add_parser("ingest",
                              help="convert and validate embedding collections")
    p_ingest.add_argument("input", help="collection path (.emb1 or .csv)")
    p_ingest.add_argument("--out", help="converted output path; omit to only validate")

    p_whiten = sub.add_parser("whiten", help="fit or apply whitening")
    whiten_sub = p_whiten.add_subparsers(dest="whiten_command", required=True, parser_class=_Parser)
    p_fit = whiten_sub.add_parser("fit")
    p_fit.add_argument("--gallery", required=True, help="fitting collection")
    p_fit.add_argument("--target-dim", type=int, required=True, help="kept components")
    p_fit.add_argument("--epsilon", type=float, default=None,
                       help="absolute epsilon; default is 1e-6 x largest eigenvalue")
    p_fit.add_argument("--no-renormalize", action="store_true",
                       help="skip final L2 normalization of whitened vectors")
    p_fit.add_argument("--out", required=True, help="model JSON path")
    p_apply = whiten_sub.add_parser("apply")
    p_apply.add_argument("input", help="collection to project")
    p_apply.add_argument("--model", required=True)
    p_apply.add_argument("--out", required=True)

    p_search = sub.add_parser("search", help="cosine top-k retrieval")
    p_search.add_argument("--gallery", required=True)
    p_search.add_argument("--queries", required=True)
    p_search.add_argument("--model", help="optional whitening model applied to both sides")
    p_search.add_argument("--k", type=int, default=10)
    p_search.add_argument("--parallelism", type=int, default=os.cpu_count() or 1)
    p_search.add_argument("--out", help="results JSONL; default stdout")

    p_eval = sub.add_parser("eval", help="metric reports")
    eval_sub = p_eval.add_subparsers(dest="eval_command", required=True, parser_class=_Parser)
    p_evr = eval_sub.add_parser("retrieval")
    p_evr.add_argument("--results", required=True, help="results JSONL from search")
    p_evr.add_argument("--query-labels", required=True, help='JSONL {"query_id","label"}')
    p_evr.add_argument("--gallery-labels", required=True, help='JSONL {"id","label"}')
    p_evr.add_argument("--ks", type=_int_list, default=[1, 5, 10])
    p_evr.add_argument("--one-percent", action="store_true", help="include R@1%%")
    p_evr.add_argument("--out", help="report JSON path")
    p_evl = eval_sub.add_parser("localize")
    p_evl.add_argument("--pred", required=True, help='predicted coordinates JSONL {"id","lat","lon"}')
    p_evl.add_argument("--gt", required=True, help="ground-truth coordinates JSONL")
    p_evl.add_argument("--thresholds", type=_float_list, default=[0.5, 1.0, 2.0, 5.0])
    p_evl.add_argument("--out", help="report JSON path")

    p_geo = sub.add_parser("geolocate",
                           help="generate satellite queries, optionally retrieve")
    src = p_geo.add_mutually_exclusive_group(required=True)
    src.add_argument("--image", help="single image reference")
    src.add_argument("--manifest", help='JSONL {"group_id","image_refs"} batch manifest')
    p_geo.add_argument("--clients", choices=["mock", "live"], default="mock")
    p_geo.add_argument("--fixtures", help="fixture directory for mock clients")
    p_geo.add_argument("--zoom", type=int, default=18)
    p_geo.add_argument("--tile-size", type=_tile_size, default=(512, 512), metavar="WxH")
    p_geo.add_argument("--tile-out", help="directory for fetched/copied tiles")
    p_geo.add_argument("--gallery", help="gallery collection enabling retrieval")
    p_geo.add_argument("--query-embeddings", help="tile-keyed query embedding collection")
    p_geo.add_argument("--model", help="whitening model for the query side")
    p_geo.add_argument("--k", type=int, default=10)
    p_geo.add_argument("--parallelism", type=int, default=1)
    p_geo.add_argument("--all-images", action="store_true",
                       help="process every image per group, not only the first")
    p_geo.add_argument("--out", help="per-query outcome JSONL; default stdout")

    p_build = sub.add_parser("build-dataset",
                             help="build a street-to-satellite pair manifest")
    p_build.add_argument("--seeds", required=True, help="text file, one place name per line")
    p_build.add_argument("--per-place", type=int, default=4, help="street image cap per place")
    p_build.add_argument("--zoom", type=int, default=18)
    p_build.add_argument("--tile-size", type=_tile_size, default=(512, 512), metavar="WxH")
    p_build.add_argument("--clients", choices=["mock", "live"], default="mock")
    p_build.add_argument("--fixtures")
    p_build.add_argument("--tile-out", help="directory for fetched/copied tiles")
    p_build.add_argument("--out", required=True, help="manifest JSON path")

    p_fix = sub.add_parser("fixtures", help="fixture utilities")
    fix_sub = p_fix.add_subparsers(dest="fixtures_command", required=True, parser_class=_Parser)
    p_fc = fix_sub.add_parser("check")
    p_fc.add_argument("--fixtures", required=True, help="fixture directory to validate")

    return parser


def _read_any(path: str, role: str = store.GALLERY) -> store.EmbeddingCollection:
    return store.read_collection(path, role=role)


def _whitened_copy(c: store.EmbeddingCollection, model: wh.WhiteningModel) -> store.EmbeddingCollection:
    projected = wh.apply_whitening(model, c.matrix(dtype=np.float64))
    records = [
        store.EmbeddingRecord(r.id, r.label, projected[i].astype(np.float32), r.geo)
        for i, r in enumerate(c.records)
    ]
    return store.EmbeddingCollection(dim=model.k, records=records, role=c.role)


def cmd_ingest(args) -> int:
    c = _read_any(args.input)
    report = store.validate_collection(c)
    print(f"{args.input}: {len(c)} records, dim {c.dim}", file=sys.stderr)
    if not report.ok:
        print(str(report), file=sys.stderr)
        return EXIT_USAGE
    if args.out:
        store.write_collection(c, args.out)
        print(f"wrote {args.out}", file=sys.stderr)
    else:
        print(json.dumps({"records": len(c), "dim": c.dim, "valid": True}))
    return EXIT_OK


def cmd_whiten(args) -> int:
    if args.whiten_command == "fit":
        gallery = _read_any(args.gallery)
        model = wh.fit_whitening(
            gallery.matrix(dtype=np.float64),
            k=args.target_dim,
            epsilon=args.epsilon,
            renormalize=not args.no_renormalize,
        )
        wh.save_model(model, args.out)
        print(f"fitted whitening {model.dim} -> {model.k} on {len(gallery)} records; "
              f"wrote {args.out}", file=sys.stderr)
        return EXIT_OK
    model = wh.load_model(args.model)
    c = _read_any(args.input)
    store.write_collection(_whitened_copy(c, model), args.out)
    print(f"projected {len(c)} records to {model.k}-d; wrote {args.out}", file=sys.stderr)
    return EXIT_OK


def cmd_search(args) -> int:
    gallery = _read_any(args.gallery, role=store.GALLERY)
    queries = _read_any(args.queries, role=store.QUERY)
    if args.model:
        model = wh.load_model(args.model)
        gallery = _whitened_copy(gallery, model)
        queries = _whitened_copy(queries, model)
    results = rt.batch_search(queries, gallery, k=args.k, parallelism=args.parallelism)
    if args.out:
        rt.write_results_jsonl(results, args.out)
        print(f"wrote {len(results)} result lists to {args.out}", file=sys.stderr)
    else:
        for r in results:
            hits = ", ".join(f'{{"id": {json.dumps(h.id)}, "score": {h.score:.6f}}}' for h in r.hits)
            print(f'{{"query_id": {json.dumps(r.query_id)}, "hits": [{hits}]}}')
    return EXIT_OK


def cmd_eval(args) -> int:
    if args.eval_command == "retrieval":
        results = rt.read_results_jsonl(args.results)
        gt = ev.load_ground_truth(args.query_labels, args.gallery_labels)
        report = ev.evaluate_run(results, gt, ks=args.ks, gallery_size=len(gt.gallery_labels))
        report.include_one_percent = args.one_percent
        print(report.format_table())
        if args.out:
            Path(args.out).write_text(json.dumps(report.to_json_dict(), indent=2) + "\n",
                                      encoding="utf-8")
        return EXIT_OK
    pred = ev.load_coordinates(args.pred)
    gt = ev.load_coordinates(args.gt)
    report = ev.localization_accuracy(pred, gt, args.thresholds)
    print(report.format_table())
    if args.out:
        Path(args.out).write_text(json.dumps(report.to_json_dict(), indent=2) + "\n",
                                  encoding="utf-8")
    return EXIT_OK


def _make_clients(args):
    return gc.make_clients(args.clients, fixtures_dir=args.fixtures,
                           tile_output_dir=getattr(args, "tile_out", None))


def cmd_geolocate(args) -> int:
    clients = _make_clients(args)
    spec = gc.TileSpec(zoom=args.zoom, width_px=args.tile_size[0], height_px=args.tile_size[1])
    if args.manifest:
        groups = pl.load_query_groups(args.manifest)
    else:
        groups = [pl.QueryGroup(group_id=args.image, image_refs=[args.image])]
    gallery = _read_any(args.gallery) if args.gallery else None
    query_embeddings = (
        _read_any(args.query_embeddings, role=store.QUERY) if args.query_embeddings else None
    )
    model = wh.load_model(args.model) if args.model else None
    if gallery is not None and query_embeddings is None:
        raise ConfigurationError("--gallery needs --query-embeddings for the tile vectors")
    results, summary = pl.run_query_set(
        groups, clients, spec,
        gallery=gallery, query_embeddings=query_embeddings, whitening_model=model,
        k=args.k, all_images=args.all_images, parallelism=args.parallelism,
    )
    if args.out:
        pl.write_query_outcomes(results, spec, args.out)
        print(f"wrote {len(results)} outcomes to {args.out}", file=sys.stderr)
    else:
        for r in results:
            print(json.dumps(pl.query_outcome_json(r, spec), sort_keys=True))
    print(json.dumps(summary.to_json_dict()), file=sys.stderr)
    if args.image and results and results[0].failed_stage is not None:
        # batch runs contain failures in the summary; a single-image run
        # reports its failure through the exit code as well
        errors = [s.error for s in results[0].query.trace if s.error]
        if errors and errors[-1] in ("UpstreamFailure", "RateLimited"):
            return EXIT_UPSTREAM
        return EXIT_USAGE
    return EXIT_OK


def cmd_build_dataset(args) -> int:
    clients = _make_clients(args)
    spec = gc.TileSpec(zoom=args.zoom, width_px=args.tile_size[0], height_px=args.tile_size[1])
    try:
        seeds = [line.strip() for line in Path(args.seeds).read_text(encoding="utf-8").splitlines()
                 if line.strip()]
    except OSError as e:
        raise ConfigurationError(f"cannot read seeds file {args.seeds}: {e}") from e
    manifest = ds.build_pairs(seeds, clients, per_place_images=args.per_place, spec=spec)
    ds.save_manifest(manifest, args.out)
    print(f"built {len(manifest.entries)} pairs ({len(manifest.skips)} skipped); "
          f"wrote {args.out}", file=sys.stderr)
    return EXIT_OK


def cmd_fixtures(args) -> int:
    issues = check_fixture_dir(Path(args.fixtures))
    if issues:
        for issue in issues:
            print(issue, file=sys.stderr)
        return EXIT_USAGE
    print(f"{args.fixtures}: fixtures ok", file=sys.stderr)
    return EXIT_OK


def check_fixture_dir(root: Path) -> list[str]:
    """Structural validation of a mock fixture directory."""
    issues: list[str] = []
    if not root.is_dir():
        return [f"{root}: not a directory"]
    search_dir = root / "image_search"
    if search_dir.is_dir():
        for f in sorted(search_dir.glob("*.json")):
            try:
                doc = json.loads(f.read_text(encoding="utf-8"))
                if not isinstance(doc.get("snippets"), list):
                    issues.append(f"{f}: missing snippet list")
            except (OSError, json.JSONDecodeError) as e:
                issues.append(f"{f}: {e}")
    for name, value_check in (
        ("infer_location.json", lambda v: isinstance(v, str)),
        ("geocode.json", lambda v: isinstance(v, list) and len(v) == 2),
    ):
        f = root / name
        if not f.exists():
            continue
        try:
            doc = json.loads(f.read_text(encoding="utf-8"))
        except (OSError, json.JSONDecodeError) as e:
            issues.append(f"{f}: {e}")
            continue
        if not isinstance(doc, dict):
            issues.append(f"{f}: must hold a JSON object")
            continue
        for key, value in doc.items():
            if not value_check(value):
                issues.append(f"{f}: bad value for key {key!r}")
    tiles = root / "tiles"
    if tiles.is_dir():
        for f in sorted(p for p in tiles.iterdir() if p.is_file()):
            parts = f.stem.split("_")
            ok = len(parts) == 3
            if ok:
                try:
                    float(parts[0]), float(parts[1]), int(parts[2])
                except ValueError:
                    ok = False
            if not ok:
                issues.append(f"{f}: tile name must be <lat>_<lon>_<zoom>")
    return issues


_COMMANDS = {
    "ingest": cmd_ingest,
    "whiten": cmd_whiten,
    "search": cmd_search,
    "eval": cmd_eval,
    "geolocate": cmd_geolocate,
    "build-dataset": cmd_build_dataset,
    "fixtures": cmd_fixtures,
}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return int(e.code or 0)
    try:
        return _COMMANDS[args.command](args)
    except (UpstreamFailure, RateLimited) as e:
        print(f"upstream failure: {e}", file=sys.stderr)
        return EXIT_UPSTREAM
    except ClientError as e:
        print(f"client error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except (CrossviewError, ValueError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except OSError as e:
        print(f"io error: {e}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
