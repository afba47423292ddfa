"""Negative payloads and retrofitting.

A scanner that sends filter-bypass payloads but never reports the retrofit
routes leaves those payloads unmatched.  Deduplicating the negatives gives
one template per candidate test case, and a human reason can then be
attached to each.
"""

import tempfile
from pathlib import Path

from xsstrace.capture import CaptureSource, ingest
from xsstrace.correlation import apply_annotations, correlate, dedup_negatives, load_report, negatives
from xsstrace.extraction import extract_all
from xsstrace.firing_range import RETROFIT, build_catalog, running
from xsstrace.mock_scanner import ScannerProfile, scan
from xsstrace.pipeline import analysed, default_baseline

retrofit = {c.route for c in build_catalog() if c.kind == RETROFIT}

with tempfile.TemporaryDirectory() as tmp, running() as url:
    log, report = Path(tmp) / "log.jsonl", Path(tmp) / "report.json"
    profile = ScannerProfile.load("retrofit-blind")
    scan(profile, url, seed=0, log_path=log, report_path=report)
    requests = list(ingest(CaptureSource("request-log-file", str(log), profile.scanner_id)))
    payloads = analysed(extract_all(requests, baseline=default_baseline()))
    classified, _ = correlate(payloads, load_report(report))

pos = sum(c.status == "positive" for c in classified)
print(f"{len(classified)} payloads: {pos} positive, {len(classified) - pos} negative")

missed = [p for p in negatives(classified) if p.path in retrofit]
print(f"\nnegatives on retrofit routes: {len(missed)}")
for t in dedup_negatives(missed):
    print(f"  {len(t.members)} x {t.rendered!r}")

ids = {p.id: "detection-failure" for p in missed}
triaged = apply_annotations(classified, ids)
print("\nreasons:", sorted({c.negative_reason for c in triaged if c.payload.path in retrofit}))
