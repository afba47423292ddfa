"""Joining extracted payloads with scan reports: positive vs. negative payloads."""

from __future__ import annotations

import json
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Iterable, Mapping, Sequence
from urllib.parse import urlsplit

from .extraction import Payload
from .templating import PRESETS, Template, TemplatingParams, cluster, match

POSITIVE, NEGATIVE = "positive", "negative"
REASONS = ("malformed", "wrong-context", "detection-failure", "redundant")
UNKNOWN = "unknown"


class AnnotationError(ValueError):
    """An annotation contradicts the classification it is applied to."""


@dataclass(frozen=True)
class ReportFinding:
    scanner_id: str
    url: str
    parameter: str
    vuln_type: str = "xss"
    payload_evidence: str | None = None

    def __post_init__(self):
        if not self.url or not self.parameter:
            raise ValueError("finding needs both url and parameter")

    @property
    def path(self) -> str:
        return urlsplit(self.url).path or "/"

    def to_json(self) -> dict:
        return {"url": self.url, "parameter": self.parameter, "vuln_type": self.vuln_type,
                "evidence": self.payload_evidence}


@dataclass(frozen=True)
class ClassifiedPayload:
    payload: Payload
    status: str
    matched_finding: ReportFinding | None = None
    negative_reason: str | None = None

    def __post_init__(self):
        if (self.status == POSITIVE) != (self.matched_finding is not None):
            raise ValueError("positive payloads, and only those, carry a finding")
        if self.negative_reason is not None and self.status != NEGATIVE:
            raise ValueError("only negative payloads carry a reason")

    @property
    def location(self) -> tuple[str, str, str]:
        return self.payload.scanner_id, self.payload.path, self.payload.entry_point.name

    def to_json(self) -> dict:
        return {
            "payload": self.payload.to_json(),
            "status": self.status,
            "matched_finding": self.matched_finding.to_json() if self.matched_finding else None,
            "negative_reason": self.negative_reason,
        }


def load_report(path: str | Path) -> list[ReportFinding]:
    """Read a normalized report ``{"scanner_id": ..., "findings": [...]}``."""
    obj = json.loads(Path(path).read_text(encoding="utf-8"))
    sid = obj["scanner_id"]
    return [ReportFinding(sid, f["url"], f["parameter"], f.get("vuln_type", "xss"), f.get("evidence"))
            for f in obj.get("findings", ())]


def write_report(scanner_id: str, findings: Iterable[ReportFinding], path: str | Path) -> None:
    body = {"scanner_id": scanner_id, "findings": [f.to_json() for f in findings]}
    Path(path).write_text(json.dumps(body, indent=2) + "\n", encoding="utf-8")


def _template_index(payloads: Sequence[Payload], params: TemplatingParams) -> dict[tuple[str, str], Template]:
    index = {}
    by_scanner: dict[str, set[str]] = {}
    for p in payloads:
        by_scanner.setdefault(p.scanner_id, set()).add(p.value)
    for sid, values in by_scanner.items():
        for t in cluster(sorted(values), params):
            for v in t.members:
                index[(sid, v)] = t
    return index


def correlate(payloads: Sequence[Payload], findings: Sequence[ReportFinding],
              params: TemplatingParams | None = None) -> tuple[list[ClassifiedPayload], list[ReportFinding]]:
    """Classify every payload; also return findings that match no traffic.

    A payload is positive when a finding of its scanner names the payload's
    (path, parameter) and, if the finding carries evidence, the evidence is an
    instance of the payload's template.
    """
    params = params or PRESETS["default"]
    needs_templates = any(f.payload_evidence for f in findings)
    templates = _template_index(payloads, params) if needs_templates else {}

    by_location: dict[tuple[str, str, str], list[ReportFinding]] = {}
    for f in sorted(findings, key=lambda f: (f.scanner_id, f.path, f.parameter, f.payload_evidence or "")):
        by_location.setdefault((f.scanner_id, f.path, f.parameter), []).append(f)

    seen_locations = set()
    out = []
    for p in sorted(payloads, key=lambda p: (p.scanner_id, p.id)):
        loc = (p.scanner_id, p.path, p.entry_point.name)
        seen_locations.add(loc)
        hit = None
        for f in by_location.get(loc, ()):
            ev = f.payload_evidence
            if not ev or ev == p.value:
                hit = f
                break
            t = templates.get((p.scanner_id, p.value))
            if t is not None and match(t, ev):
                hit = f
                break
        if hit is not None:
            out.append(ClassifiedPayload(p, POSITIVE, hit))
        else:
            out.append(ClassifiedPayload(p, NEGATIVE, None, UNKNOWN))
    unmatched = [f for loc, fs in sorted(by_location.items()) if loc not in seen_locations for f in fs]
    return out, unmatched


def negatives(classified: Iterable[ClassifiedPayload]) -> list[Payload]:
    return [c.payload for c in classified if c.status == NEGATIVE]


def dedup_negatives(negative_payloads: Sequence[Payload], params: TemplatingParams | None = None) -> list[Template]:
    """Collapse negative payloads into templates, one candidate test case each."""
    if not negative_payloads:
        return []
    return cluster({p.id: p.value for p in negative_payloads}, params or PRESETS["default"])


def triage(c: ClassifiedPayload, reason: str, classified: Sequence[ClassifiedPayload]) -> ClassifiedPayload:
    """Record a human-supplied reason for a negative payload after checking it is consistent."""
    if reason not in REASONS:
        raise AnnotationError(f"unknown reason {reason!r}")
    if c.status != NEGATIVE:
        raise AnnotationError(f"payload {c.payload.id} is positive")
    if reason == "redundant" and not any(o.status == POSITIVE and o.location == c.location for o in classified):
        raise AnnotationError(f"payload {c.payload.id}: redundant, but nothing was reported at "
                              f"{c.payload.path}?{c.payload.entry_point.name}")
    return replace(c, negative_reason=reason)


def apply_annotations(classified: Sequence[ClassifiedPayload],
                      annotations: Mapping[int, str]) -> list[ClassifiedPayload]:
    by_id = {c.payload.id: c for c in classified}
    missing = sorted(set(annotations) - set(by_id))
    if missing:
        raise AnnotationError(f"annotations for unknown payload ids {missing}")
    return [triage(c, annotations[c.payload.id], classified) if c.payload.id in annotations else c
            for c in classified]


def read_annotations(path: str | Path) -> dict[int, str]:
    with open(path, encoding="utf-8") as fh:
        rows = [json.loads(line) for line in fh if line.strip()]
    return {int(r["payload_id"]): r["reason"] for r in rows}


def write_classified(classified: Iterable[ClassifiedPayload], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for c in classified:
            fh.write(json.dumps(c.to_json()) + "\n")
