"""Decoding of captured scanner traffic into ``CapturedRequest`` records.

Two capture formats are understood: libpcap files (HTTP/1.x over IPv4/TCP on
Ethernet) and a JSON-lines request log, one object per request::

    {"ts": 1.5, "method": "GET", "path": "/reflected/body",
     "query": [["q", "%3Cb%3E"]], "headers": [["Host", "x"]], "body": ""}
"""

from __future__ import annotations

import base64
import json
import logging
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Iterator
from urllib.parse import unquote, unquote_plus

log = logging.getLogger(__name__)

PCAP = "pcap-file"
REQUEST_LOG = "request-log-file"


class IngestError(Exception):
    """Raised when a capture cannot be read at all."""


@dataclass(frozen=True)
class Param:
    name: str
    raw_value: str
    decoded_value: str


@dataclass(frozen=True)
class CapturedRequest:
    id: int
    timestamp: float
    method: str
    path: str
    query_params: tuple[Param, ...] = ()
    body_params: tuple[Param, ...] = ()
    headers: tuple[tuple[str, str], ...] = ()
    raw_body: bytes = b""
    scanner_id: str = ""
    flags: tuple[str, ...] = ()

    @property
    def query_string(self) -> str:
        return "&".join(f"{p.name}={p.raw_value}" for p in self.query_params)

    def header(self, name: str) -> str | None:
        name = name.lower()
        for k, v in self.headers:
            if k.lower() == name:
                return v
        return None


@dataclass(frozen=True)
class CaptureSource:
    kind: str
    path: str | Path
    scanner_id: str

    def __post_init__(self):
        if not self.scanner_id:
            raise ValueError("scanner_id must be non-empty")
        if self.kind not in (PCAP, REQUEST_LOG):
            raise ValueError(f"unknown capture kind {self.kind!r}")

    @classmethod
    def guess(cls, path: str | Path, scanner_id: str) -> "CaptureSource":
        path = Path(path)
        kind = PCAP if path.suffix.lower() in (".pcap", ".cap", ".dump") else REQUEST_LOG
        return cls(kind, path, scanner_id)


@dataclass
class Diagnostics:
    """Per-run tally of recoverable problems."""

    counts: Counter = field(default_factory=Counter)

    def add(self, what: str, n: int = 1) -> None:
        self.counts[what] += n

    def __getitem__(self, what: str) -> int:
        return self.counts[what]

    def total(self) -> int:
        return sum(self.counts.values())


def percent_decode(raw: str, plus: bool = False) -> str:
    """One pass of URL-percent decoding; malformed escapes pass through."""
    return unquote_plus(raw) if plus else unquote(raw)


def parse_query_string(raw: str) -> list[Param]:
    if not raw:
        return []
    params = []
    for pair in raw.split("&"):
        if not pair:
            continue
        name, _, value = pair.partition("=")
        params.append(Param(percent_decode(name, plus=True), value, percent_decode(value, plus=True)))
    return params


def split_target(target: str) -> tuple[str, str]:
    """Split a request target into (path, query) without decoding anything."""
    if "://" in target.split("?", 1)[0]:
        rest = target.split("://", 1)[1]
        slash = rest.find("/")
        target = rest[slash:] if slash >= 0 else "/"
    target = target.split("#", 1)[0]
    path, _, query = target.partition("?")
    return path or "/", query


def body_params_for(headers: Iterable[tuple[str, str]], body: bytes) -> list[Param]:
    ctype = ""
    for k, v in headers:
        if k.lower() == "content-type":
            ctype = v.lower()
    if body and ctype.startswith("application/x-www-form-urlencoded"):
        return parse_query_string(body.decode("latin-1"))
    return []


# -- request log ------------------------------------------------------------

def request_to_log(req: CapturedRequest) -> dict:
    return {
        "ts": req.timestamp,
        "method": req.method,
        "path": req.path,
        "query": [[p.name, p.raw_value] for p in req.query_params],
        "headers": [list(h) for h in req.headers],
        "body": base64.b64encode(req.raw_body).decode("ascii"),
    }


def write_request_log(requests: Iterable[CapturedRequest], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for req in requests:
            fh.write(json.dumps(request_to_log(req)) + "\n")


def request_from_log(obj: dict, req_id: int, scanner_id: str) -> CapturedRequest:
    path = obj["path"]
    query = obj.get("query")
    if query is None:
        path, raw_query = split_target(path)
        params = parse_query_string(raw_query)
    else:
        params = [Param(str(name), str(raw), percent_decode(str(raw), plus=True)) for name, raw in query]
    headers = tuple((str(k), str(v)) for k, v in obj.get("headers", ()))
    body = base64.b64decode(obj.get("body") or "")
    return CapturedRequest(
        id=req_id,
        timestamp=float(obj.get("ts", 0.0)),
        method=str(obj.get("method", "GET")),
        path=path,
        query_params=tuple(params),
        body_params=tuple(body_params_for(headers, body)),
        headers=headers,
        raw_body=body,
        scanner_id=scanner_id,
    )


def _ingest_log(source: CaptureSource, diag: Diagnostics) -> Iterator[CapturedRequest]:
    try:
        fh = open(source.path, encoding="utf-8")
    except OSError as exc:
        raise IngestError(f"cannot read {source.path}: {exc}") from exc
    next_id = 1
    with fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                req = request_from_log(json.loads(line), next_id, source.scanner_id)
            except (ValueError, KeyError, TypeError) as exc:
                log.debug("%s:%d: skipped malformed entry (%s)", source.path, lineno, exc)
                diag.add("malformed-request")
                continue
            next_id += 1
            yield req


def ingest(source: CaptureSource, diagnostics: Diagnostics | None = None) -> Iterator[CapturedRequest]:
    """Yield every request in ``source`` in capture order.

    Recoverable problems (malformed requests, truncated captures) are counted
    in ``diagnostics``; an unreadable file raises ``IngestError``.
    """
    diag = diagnostics if diagnostics is not None else Diagnostics()
    if not Path(source.path).is_file():
        raise IngestError(f"no such capture file: {source.path}")
    if source.kind == PCAP:
        from .pcap import ingest_pcap

        return ingest_pcap(source, diag)
    return _ingest_log(source, diag)
