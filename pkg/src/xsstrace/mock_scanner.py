"""A scripted stand-in for a black-box scanner.

A profile lists payload templates whose slots are filled per request:

``<NUMk>``  k random digits        ``<STRk>``  k random alphanumerics
``<HEXk>``  k random hex digits    ``<SEQ>``   increasing request counter

Every catalog route receives the baseline value first and then one instance
of each corpus entry.  All traffic is logged in request-log format and
routes whose response reflects a payload verbatim become report findings.
"""

from __future__ import annotations

import http.client
import json
import random
import re
import string
import time
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Sequence
from urllib.parse import quote, urlsplit

from .capture import CapturedRequest, Param, write_request_log
from .correlation import ReportFinding, write_report
from .firing_range import PARAM, RETROFIT, TestCase, build_catalog
from .templating import NUM_MARK, STR_MARK, Template, tokens_from_encoded

REFLECTION = "reflection"
REFLECTION_SKIP_RETROFIT = "reflection-skip-retrofit"
DETECTION_MODES = (REFLECTION, REFLECTION_SKIP_RETROFIT)

_SLOT = re.compile(r"<(NUM|STR|HEX)(\d+)>|<SEQ>")


class ScanError(RuntimeError):
    pass


@dataclass(frozen=True)
class ScannerProfile:
    scanner_id: str
    corpus: tuple[str, ...] = ()
    signature_tag: str | None = None
    detection: str = REFLECTION
    description: str = ""

    def __post_init__(self):
        if self.detection not in DETECTION_MODES:
            raise ValueError(f"unknown detection mode {self.detection!r}")
        if self.signature_tag and any(self.signature_tag not in e for e in self.corpus):
            raise ValueError(f"{self.scanner_id}: every corpus entry must carry {self.signature_tag!r}")

    @classmethod
    def from_json(cls, obj: dict) -> "ScannerProfile":
        return cls(obj["scanner_id"], tuple(obj.get("corpus", ())), obj.get("signature_tag"),
                   obj.get("detection", REFLECTION), obj.get("description", ""))

    @classmethod
    def load(cls, name_or_path: str | Path) -> "ScannerProfile":
        """Load a bundled profile by name, or a profile file by path."""
        path = Path(name_or_path)
        if path.suffix == ".json" and path.exists():
            return cls.from_json(json.loads(path.read_text(encoding="utf-8")))
        res = resources.files("xsstrace.data").joinpath("profiles", f"{name_or_path}.json")
        if not res.is_file():
            raise ValueError(f"no such profile: {name_or_path}")
        return cls.from_json(json.loads(res.read_text(encoding="utf-8")))


def bundled_profiles() -> list[str]:
    folder = resources.files("xsstrace.data").joinpath("profiles")
    return sorted(p.name[:-5] for p in folder.iterdir() if p.name.endswith(".json"))


def slot_template(entry: str) -> Template:
    """The template every instance of a corpus entry matches."""
    def mark(m: re.Match) -> str:
        kind = m.group(1)
        return NUM_MARK if kind in (None, "NUM") else STR_MARK
    return Template(tokens_from_encoded(_SLOT.sub(mark, entry)))


class Instantiator:
    """Fills corpus slots; values of the same slot kind never repeat within a scan."""

    _ALPHABET = {"NUM": string.digits, "STR": string.ascii_lowercase + string.digits,
                 "HEX": "0123456789ABCDEF"}

    def __init__(self, seed: int = 0):
        self.rng = random.Random(seed)
        self.seq = 0
        self.used: dict[tuple[str, int], set[str]] = {}

    def _fresh(self, kind: str, width: int) -> str:
        seen = self.used.setdefault((kind, width), set())
        alphabet = self._ALPHABET[kind]
        if len(seen) >= len(alphabet) ** width:
            seen.clear()
        while True:
            value = "".join(self.rng.choice(alphabet) for _ in range(width))
            if value not in seen:
                seen.add(value)
                return value

    def __call__(self, entry: str) -> str:
        def fill(m: re.Match) -> str:
            if m.group(0) == "<SEQ>":
                self.seq += 1
                return str(self.seq)
            return self._fresh(m.group(1), int(m.group(2)))
        return _SLOT.sub(fill, entry)


def instantiate(profile: ScannerProfile, seed: int = 0) -> list[str]:
    fill = Instantiator(seed)
    return [fill(e) for e in profile.corpus]


@dataclass
class ScanResult:
    requests: list[CapturedRequest] = field(default_factory=list)
    findings: list[ReportFinding] = field(default_factory=list)
    skipped: int = 0


def scan(profile: ScannerProfile, target: str, catalog: Sequence[TestCase] | None = None,
         seed: int = 0, log_path: str | Path | None = None,
         report_path: str | Path | None = None, timeout: float = 10.0) -> ScanResult:
    """Attack every catalog route of the service at ``target``."""
    catalog = list(catalog if catalog is not None else build_catalog())
    parts = urlsplit(target)
    host, port = parts.hostname or "127.0.0.1", parts.port or 80
    conn = http.client.HTTPConnection(host, port, timeout=timeout)
    try:
        conn.connect()
    except OSError as exc:
        raise ScanError(f"target {target} unreachable: {exc}") from exc

    headers = [("Host", f"{host}:{port}"), ("User-Agent", f"mock-scanner ({profile.scanner_id})"),
               ("Accept", "*/*"), ("Accept-Encoding", "identity")]
    fill = Instantiator(seed)
    result = ScanResult()

    def send(path: str, value: str) -> str | None:
        raw = quote(value, safe="")
        try:
            conn.request("GET", f"{path}?{PARAM}={raw}", headers=dict(headers))
            resp = conn.getresponse()
            body = resp.read()
        except (OSError, http.client.HTTPException) as exc:
            raise ScanError(f"request to {target}{path} failed: {exc}") from exc
        result.requests.append(CapturedRequest(
            id=len(result.requests) + 1, timestamp=time.time(), method="GET", path=path,
            query_params=(Param(PARAM, raw, value),), headers=tuple(headers),
            scanner_id=profile.scanner_id))
        if resp.status != 200:
            result.skipped += 1
            return None
        return body.decode("utf-8", "replace")

    try:
        for case in catalog:
            send(case.route, case.sample_input)
            reported = False
            for entry in profile.corpus:
                value = fill(entry)
                page = send(case.route, value)
                if page is None or reported:
                    continue
                if profile.detection == REFLECTION_SKIP_RETROFIT and case.kind == RETROFIT:
                    continue
                if value in page:
                    result.findings.append(ReportFinding(
                        profile.scanner_id, f"{target.rstrip('/')}{case.route}", PARAM, "xss", value))
                    reported = True
    finally:
        conn.close()

    if log_path is not None:
        write_request_log(result.requests, log_path)
    if report_path is not None:
        write_report(profile.scanner_id, result.findings, report_path)
    return result
