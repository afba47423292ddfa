"""Command-line entry point.

Exit codes: 0 success, 1 runtime failure, 2 usage error.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from . import pipeline as pl
from .capture import Diagnostics, IngestError
from .correlation import (
    AnnotationError,
    apply_annotations,
    correlate,
    dedup_negatives,
    load_report,
    negatives,
    read_annotations,
    write_classified,
)
from .extraction import SignatureSet, cross_scanner_diff, read_payloads, write_payloads
from .firing_range import build_catalog, export_catalog, running, serve
from .metrics import table1_csv
from .mock_scanner import ScanError, ScannerProfile, bundled_profiles, scan
from .templating import PRESETS, parse_params

log = logging.getLogger("xsstrace")


def _bind(text: str) -> tuple[str, int]:
    host, _, port = text.rpartition(":")
    try:
        return host or "127.0.0.1", int(port)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected HOST:PORT, got {text!r}") from None


def _params(args):
    params = PRESETS[args.preset]
    if args.params:
        params = parse_params(args.params, params)
    return params


def _signatures(args) -> SignatureSet:
    return SignatureSet.load(args.signatures) if args.signatures else SignatureSet()


def _baseline(args):
    return pl.baseline_from_catalog(args.catalog) if getattr(args, "catalog", None) else None


def _sources(args):
    sources = [pl.parse_source(s) for s in (args.log or [])]
    for s in args.pcap or []:
        src = pl.parse_source(s)
        sources.append(type(src)("pcap-file", src.path, src.scanner_id))
    if not sources:
        raise ValueError("no capture given; use --log or --pcap")
    return sources


def _findings(paths):
    findings = []
    for p in paths or []:
        findings.extend(load_report(p))
    return findings


def _out_dir(args) -> Path:
    out = Path(args.out or ".")
    out.mkdir(parents=True, exist_ok=True)
    return out


# -- subcommands --------------------------------------------------------------

def cmd_serve(args) -> int:
    catalog = build_catalog(args.retrofit)
    if args.export_catalog:
        export_catalog(catalog, args.export_catalog)
        if args.export_only:
            return 0
    serve(args.bind, catalog)
    return 0


def cmd_mock_scan(args) -> int:
    profile = ScannerProfile.load(args.profile)
    out = _out_dir(args)
    log_path = out / f"{profile.scanner_id}.log.jsonl"
    report_path = out / f"{profile.scanner_id}.report.json"
    if args.target:
        result = scan(profile, args.target, seed=args.seed, log_path=log_path, report_path=report_path)
    else:
        with running(args.bind) as url:
            result = scan(profile, url, seed=args.seed, log_path=log_path, report_path=report_path)
    print(f"{profile.scanner_id}: {len(result.requests)} requests, {len(result.findings)} findings "
          f"-> {log_path}, {report_path}")
    return 0


def cmd_extract(args) -> int:
    diag = Diagnostics()
    payloads = pl.extract(_sources(args), _signatures(args), _baseline(args), diag)
    out = Path(args.out or "payloads.jsonl")
    write_payloads(payloads, out)
    for what, n in sorted(diag.counts.items()):
        print(f"warning: {n} x {what}", file=sys.stderr)
    print(f"{len(payloads)} payloads -> {out}")
    return 0


def cmd_template(args) -> int:
    payloads = pl.analysed(read_payloads(args.input), args.include_path)
    groups = pl.template_payloads(payloads, _params(args))
    out = Path(args.out or "templates.jsonl")
    pl.write_templates(groups, out)
    for g in groups:
        print(f"{g.scanner_id}: {len(g.templates)} templates")
    return 0


def cmd_evaluate(args) -> int:
    payloads = read_payloads(args.input)
    reports = pl.evaluate_groups(pl.read_templates(args.templates), payloads)
    out = Path(args.out or "metrics.json")
    pl.write_json(reports, out)
    _emit(args.emit, pl.summary_rows(pl.analysed(payloads, args.include_path), reports), out.parent, reports)
    return 0


def cmd_correlate(args) -> int:
    payloads = pl.analysed(read_payloads(args.input), args.include_path)
    classified, unmatched = correlate(payloads, _findings(args.report), _params(args))
    if args.annotations:
        classified = apply_annotations(classified, read_annotations(args.annotations))
    out = Path(args.out or "classified.jsonl")
    write_classified(classified, out)
    for f in unmatched:
        print(f"warning: finding {f.url}?{f.parameter} matches no captured traffic", file=sys.stderr)
    if args.negatives:
        neg = dedup_negatives(negatives(classified), _params(args))
        with open(args.negatives, "w", encoding="utf-8") as fh:
            for t in neg:
                fh.write(json.dumps(t.to_json()) + "\n")
    n_pos = sum(c.status == "positive" for c in classified)
    print(f"{n_pos} positive, {len(classified) - n_pos} negative -> {out}")
    return 0


def cmd_pipeline(args) -> int:
    out = _out_dir(args)
    diag = Diagnostics()
    payloads = pl.extract(_sources(args), _signatures(args), _baseline(args), diag)
    write_payloads(payloads, out / "payloads.jsonl")
    # round-trip through the files so the result equals the chained subcommands
    payloads = read_payloads(out / "payloads.jsonl")
    params = _params(args)
    subset = pl.analysed(payloads, args.include_path)
    pl.write_templates(pl.template_payloads(subset, params), out / "templates.jsonl")
    reports = pl.evaluate_groups(pl.read_templates(out / "templates.jsonl"), payloads)
    pl.write_json(reports, out / "metrics.json")
    classified, unmatched = correlate(subset, _findings(args.report), params)
    write_classified(classified, out / "classified.jsonl")
    for what, n in sorted(diag.counts.items()):
        print(f"warning: {n} x {what}", file=sys.stderr)
    for f in unmatched:
        print(f"warning: finding {f.url}?{f.parameter} matches no captured traffic", file=sys.stderr)
    _emit(args.emit, pl.summary_rows(subset, reports, classified), out, reports)
    return 0


def cmd_review_queue(args) -> int:
    runs: dict[str, list] = {}
    for src in _sources(args):
        runs.setdefault(src.scanner_id, []).extend(pl.load_requests([src]))
    baseline = _baseline(args) or pl.default_baseline()
    items = cross_scanner_diff(runs, baseline)
    seen = set()
    unique = []
    for it in items:
        key = (it.path, it.param, it.values)
        if key not in seen:
            seen.add(key)
            unique.append(it)
    if args.out:
        with open(args.out, "w", encoding="utf-8") as fh:
            for it in unique:
                fh.write(json.dumps(it.to_json()) + "\n")
    for it in unique[: args.limit]:
        a, b = it.values
        print(f"{it.path}?{it.param}: {it.scanners[0]}={a!r} {it.scanners[1]}={b!r}")
    print(f"{len(unique)} distinct mismatches ({len(items)} request pairs)")
    return 0


def _emit(mode: str, rows, out_dir: Path, reports) -> None:
    if mode == "csv":
        (out_dir / "summary.csv").write_text(pl.summary_csv(rows), encoding="utf-8")
        (out_dir / "table1.csv").write_text(table1_csv(pl.summarize(reports)), encoding="utf-8")
        print(f"wrote {out_dir / 'summary.csv'} and {out_dir / 'table1.csv'}")
    elif mode == "json":
        print(json.dumps(pl.summary_json(rows), indent=2))
    else:
        sys.stdout.write(pl.summary_text(rows))


# -- argument parsing ---------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="xsstrace", description="XSS scanner payload analysis toolkit")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def captures(p):
        p.add_argument("--log", action="append", metavar="[SCANNER=]PATH", help="request-log capture")
        p.add_argument("--pcap", action="append", metavar="[SCANNER=]PATH", help="pcap capture")
        p.add_argument("--catalog", help="testbed catalog JSON (default: built-in catalog)")

    def templating(p):
        p.add_argument("--preset", choices=sorted(PRESETS), default="default")
        p.add_argument("--params", help="overrides, e.g. lev=15,block=3,oblivion=0.8")
        p.add_argument("--include-path", action="store_true", help="also analyse path injections")

    def emit(p):
        p.add_argument("--emit", choices=["json", "csv", "text"], default="text")

    p = sub.add_parser("serve", help="run the vulnerable testbed")
    p.add_argument("--bind", type=_bind, default=("127.0.0.1", 8080), metavar="HOST:PORT")
    p.add_argument("--retrofit", help="retrofit case file (default: bundled)")
    p.add_argument("--export-catalog", metavar="PATH")
    p.add_argument("--export-only", action="store_true", help="write the catalog and exit")
    p.set_defaults(func=cmd_serve)

    p = sub.add_parser("mock-scan", help="scan the testbed with a scripted profile")
    p.add_argument("--profile", required=True, help=f"bundled name ({', '.join(bundled_profiles())}) or JSON file")
    p.add_argument("--target", help="testbed base URL (default: start one in-process)")
    p.add_argument("--bind", type=_bind, default=("127.0.0.1", 0), metavar="HOST:PORT")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", help="output directory")
    p.set_defaults(func=cmd_mock_scan)

    p = sub.add_parser("extract", help="extract payloads from captures")
    captures(p)
    p.add_argument("--signatures")
    p.add_argument("--out")
    p.set_defaults(func=cmd_extract)

    p = sub.add_parser("template", help="cluster payloads into templates")
    p.add_argument("--in", dest="input", required=True)
    templating(p)
    p.add_argument("--out")
    p.set_defaults(func=cmd_template)

    p = sub.add_parser("evaluate", help="score templates")
    p.add_argument("--templates", required=True)
    p.add_argument("--in", dest="input", required=True, help="payloads file")
    p.add_argument("--include-path", action="store_true")
    p.add_argument("--out")
    emit(p)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("correlate", help="classify payloads against scan reports")
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--report", action="append", required=True)
    p.add_argument("--annotations")
    p.add_argument("--negatives", metavar="PATH", help="also write deduplicated negative templates")
    templating(p)
    p.add_argument("--out")
    p.set_defaults(func=cmd_correlate)

    p = sub.add_parser("pipeline", help="extract, template, evaluate and correlate in one go")
    captures(p)
    p.add_argument("--signatures")
    p.add_argument("--report", action="append", default=[])
    templating(p)
    p.add_argument("--out")
    emit(p)
    p.set_defaults(func=cmd_pipeline)

    p = sub.add_parser("review-queue", help="cross-scanner parameter mismatches for manual review")
    captures(p)
    p.add_argument("--out")
    p.add_argument("--limit", type=int, default=50)
    p.set_defaults(func=cmd_review_queue)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except KeyboardInterrupt:
        return 1
    except (IngestError, ScanError, AnnotationError, ValueError, OSError, KeyError) as exc:
        print(f"xsstrace {args.command}: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
