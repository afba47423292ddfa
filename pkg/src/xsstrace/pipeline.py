"""Glue between the stages: file I/O and per-scanner aggregation."""

from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

from .capture import CaptureSource, Diagnostics, ingest
from .correlation import POSITIVE, ClassifiedPayload
from .extraction import Payload, SignatureSet, extract_all
from .firing_range import PARAM, build_catalog
from .metrics import ScannerSummary, evaluate, metrics_report
from .templating import Template, TemplatingParams, cluster


def default_baseline() -> dict[tuple[str, str], str]:
    return {(c.route, PARAM): c.sample_input for c in build_catalog()}


def baseline_from_catalog(path: str | Path) -> dict[tuple[str, str], str]:
    rows = json.loads(Path(path).read_text(encoding="utf-8"))
    return {(r["route"], PARAM): r["sample_input"] for r in rows}


def parse_source(arg: str) -> CaptureSource:
    """``SCANNER=PATH`` or plain ``PATH`` (scanner id taken from the file name)."""
    scanner, sep, path = arg.partition("=")
    if not sep:
        path = arg
        scanner = Path(arg).name.split(".", 1)[0]
    return CaptureSource.guess(path, scanner)


def load_requests(sources: Iterable[CaptureSource], diag: Diagnostics | None = None):
    requests = []
    for src in sources:
        requests.extend(ingest(src, diag))
    return requests


def extract(sources: Sequence[CaptureSource], sigs: SignatureSet | None = None,
            baseline=None, diag: Diagnostics | None = None) -> list[Payload]:
    by_scanner: dict[str, list] = {}
    for src in sources:
        by_scanner.setdefault(src.scanner_id, []).extend(ingest(src, diag))
    requests = [r for sid in sorted(by_scanner) for r in by_scanner[sid]]
    return extract_all(requests, sigs, baseline if baseline is not None else default_baseline())


def analysed(payloads: Iterable[Payload], include_path: bool = False) -> list[Payload]:
    return [p for p in payloads if include_path or not p.is_path_injection]


@dataclass
class ScannerTemplates:
    scanner_id: str
    templates: list[Template]


def template_payloads(payloads: Sequence[Payload], params: TemplatingParams) -> list[ScannerTemplates]:
    """Cluster each scanner's payloads separately; members are payload ids."""
    groups: dict[str, dict[int, str]] = {}
    for p in payloads:
        groups.setdefault(p.scanner_id, {})[p.id] = p.value
    return [ScannerTemplates(sid, cluster(groups[sid], params)) for sid in sorted(groups)]


def write_templates(groups: Sequence[ScannerTemplates], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for g in groups:
            for t in g.templates:
                fh.write(json.dumps({"scanner_id": g.scanner_id, **t.to_json()}) + "\n")


def read_templates(path: str | Path) -> list[ScannerTemplates]:
    groups: dict[str, list[Template]] = {}
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            if line.strip():
                obj = json.loads(line)
                groups.setdefault(obj.get("scanner_id", ""), []).append(Template.from_json(obj))
    return [ScannerTemplates(sid, groups[sid]) for sid in sorted(groups)]


def evaluate_groups(groups: Sequence[ScannerTemplates], payloads: Sequence[Payload],
                    rules=None, builtins=None) -> list[dict]:
    lookup = {p.id: p.value for p in payloads}
    reports = []
    for g in groups:
        scored = [(t, evaluate(t, lookup, rules, builtins)) for t in g.templates]
        reports.append(metrics_report(g.scanner_id, scored))
    return reports


def write_json(obj, path: str | Path) -> None:
    Path(path).write_text(json.dumps(obj, indent=2, sort_keys=False) + "\n", encoding="utf-8")


@dataclass
class SummaryRow:
    scanner_id: str
    payloads: int
    distinct_payloads: int
    templates: int
    mean_m1: float
    detected: int
    not_detected: int
    positive_payloads: int
    negative_payloads: int
    mutations: bool
    callbacks: bool
    filter_evasion: bool


def summary_rows(payloads: Sequence[Payload], reports: Sequence[dict],
                 classified: Sequence[ClassifiedPayload] = ()) -> list[SummaryRow]:
    rows = []
    by_report = {r["scanner_id"]: r["summary"] for r in reports}
    scanners = sorted({p.scanner_id for p in payloads} | set(by_report))
    for sid in scanners:
        mine = [p for p in payloads if p.scanner_id == sid]
        s = by_report.get(sid) or ScannerSummary(sid).to_json()
        cls = [c for c in classified if c.payload.scanner_id == sid]
        locations: dict[tuple, bool] = {}
        for c in cls:
            loc = (c.payload.path, c.payload.entry_point.name)
            locations[loc] = locations.get(loc, False) or c.status == POSITIVE
        rows.append(SummaryRow(
            scanner_id=sid,
            payloads=len(mine),
            distinct_payloads=len({p.value for p in mine}),
            templates=s["template_count"],
            mean_m1=round(s["mean_m1"], 3),
            detected=sum(locations.values()),
            not_detected=sum(not v for v in locations.values()),
            positive_payloads=sum(c.status == POSITIVE for c in cls),
            negative_payloads=sum(c.status != POSITIVE for c in cls),
            mutations=s["uses_mutations"],
            callbacks=s["uses_callbacks"],
            filter_evasion=s["uses_filter_evasion"],
        ))
    return rows


_COLUMNS = ["scanner_id", "payloads", "distinct_payloads", "templates", "mean_m1", "detected",
            "not_detected", "positive_payloads", "negative_payloads", "mutations", "callbacks",
            "filter_evasion"]


def summary_csv(rows: Sequence[SummaryRow]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(_COLUMNS)
    for r in rows:
        w.writerow([int(v) if isinstance(v, bool) else v for v in (getattr(r, c) for c in _COLUMNS)])
    return buf.getvalue()


def summary_text(rows: Sequence[SummaryRow]) -> str:
    header = ["scanner", "payloads", "distinct", "templates", "mean M1", "detected", "missed",
              "mutations", "callbacks", "evasion"]
    mark = {True: "yes", False: "no"}
    body = [[r.scanner_id, r.payloads, r.distinct_payloads, r.templates, f"{r.mean_m1:.1f}",
             r.detected, r.not_detected, mark[r.mutations], mark[r.callbacks], mark[r.filter_evasion]]
            for r in rows]
    table = [header] + [[str(c) for c in row] for row in body]
    widths = [max(len(row[i]) for row in table) for i in range(len(header))]
    lines = ["  ".join(c.ljust(w) if i == 0 else c.rjust(w) for i, (c, w) in enumerate(zip(row, widths)))
             for row in table]
    return "\n".join(lines) + "\n"


def summary_json(rows: Sequence[SummaryRow]) -> list[dict]:
    return [{c: getattr(r, c) for c in _COLUMNS} for r in rows]


def summarize(reports: Sequence[dict]) -> list[ScannerSummary]:
    return [ScannerSummary(**r["summary"]) for r in reports]

