"""Separation of injection traffic from crawling traffic and payload extraction."""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, field
from itertools import combinations
from pathlib import Path
from typing import Iterable, Mapping, Sequence

from .capture import CapturedRequest, percent_decode

SIGNATURE = "signature"
ATTACK_CHARS = "attack-chars"
CROSS_SCANNER = "cross-scanner"

QUERY, BODY, PATH, HEADER = "query", "body", "path", "header"
_KIND_ORDER = {QUERY: 0, BODY: 1, HEADER: 2, PATH: 3}

DEFAULT_ATTACK_CHARS = ("<", ">", '"', "'")


@dataclass(frozen=True, order=True)
class EntryPoint:
    kind: str
    name: str

    def sort_key(self):
        return (_KIND_ORDER.get(self.kind, 9), self.name)

    def to_json(self) -> dict:
        return {"kind": self.kind, "name": self.name}


@dataclass(frozen=True)
class Payload:
    id: int
    value: str
    raw_value: str
    request_id: int
    entry_point: EntryPoint
    scanner_id: str
    flagged_by: frozenset
    path: str = ""

    @property
    def is_path_injection(self) -> bool:
        return self.entry_point.kind == PATH

    def to_json(self) -> dict:
        return {
            "id": self.id,
            "value": self.value,
            "raw_value": self.raw_value,
            "request_id": self.request_id,
            "entry_point": self.entry_point.to_json(),
            "scanner_id": self.scanner_id,
            "flagged_by": sorted(self.flagged_by),
            "path": self.path,
        }

    @classmethod
    def from_json(cls, obj: Mapping) -> "Payload":
        ep = obj["entry_point"]
        return cls(
            id=obj["id"],
            value=obj["value"],
            raw_value=obj.get("raw_value", obj["value"]),
            request_id=obj["request_id"],
            entry_point=EntryPoint(ep["kind"], str(ep["name"])),
            scanner_id=obj["scanner_id"],
            flagged_by=frozenset(obj.get("flagged_by", ())),
            path=obj.get("path", ""),
        )


@dataclass(frozen=True)
class ScannerSignature:
    scanner_id: str
    patterns: tuple[str, ...]

    def __post_init__(self):
        if not self.patterns:
            raise ValueError(f"signature for {self.scanner_id!r} has no patterns")

    def matches(self, value: str) -> bool:
        for pat in self.patterns:
            if pat.startswith("re:"):
                if re.search(pat[3:], value):
                    return True
            elif pat in value:
                return True
        return False


@dataclass
class SignatureSet:
    """Per-scanner signature patterns plus the attack-character set."""

    signatures: dict[str, ScannerSignature] = field(default_factory=dict)
    attack_chars: tuple[str, ...] = DEFAULT_ATTACK_CHARS

    def for_scanner(self, scanner_id: str) -> ScannerSignature | None:
        return self.signatures.get(scanner_id)

    @classmethod
    def load(cls, path: str | Path) -> "SignatureSet":
        """Read ``{scanner_id: [pattern, ...]}``; an optional ``"_attack_chars"`` key extends the set.

        Patterns prefixed with ``re:`` are regular expressions, others literal
        substrings.
        """
        data = json.loads(Path(path).read_text(encoding="utf-8"))
        chars = tuple(dict.fromkeys(DEFAULT_ATTACK_CHARS + tuple(data.pop("_attack_chars", ()))))
        sigs = {sid: ScannerSignature(sid, tuple(pats)) for sid, pats in data.items()}
        return cls(sigs, chars)

    def to_json(self) -> dict:
        out = {sid: list(sig.patterns) for sid, sig in sorted(self.signatures.items())}
        extra = [c for c in self.attack_chars if c not in DEFAULT_ATTACK_CHARS]
        if extra:
            out["_attack_chars"] = extra
        return out


def _attack_pattern(chars: Iterable[str]) -> re.Pattern:
    alts = []
    for c in chars:
        alts.append(re.escape(c))
        if len(c) == 1:
            alts.append("%" + "".join(f"[{h.upper()}{h.lower()}]" if h.isalpha() else h
                                      for h in f"{ord(c):02x}"))
    return re.compile("|".join(alts))


def has_attack_chars(value: str, chars: Sequence[str] = DEFAULT_ATTACK_CHARS) -> bool:
    return bool(_attack_pattern(chars).search(value))


def _entry_values(req: CapturedRequest):
    for p in req.query_params:
        yield EntryPoint(QUERY, p.name), p.raw_value, p.decoded_value
    for p in req.body_params:
        yield EntryPoint(BODY, p.name), p.raw_value, p.decoded_value
    for name, value in req.headers:
        yield EntryPoint(HEADER, name), value, value


def _payload(req, ep, raw, decoded, how) -> Payload:
    return Payload(0, decoded, raw, req.id, ep, req.scanner_id, frozenset({how}), req.path)


def flag_by_signature(req: CapturedRequest, sigs: SignatureSet | Sequence[ScannerSignature]) -> list[Payload]:
    if not isinstance(sigs, SignatureSet):
        sigs = SignatureSet({s.scanner_id: s for s in sigs})
    sig = sigs.for_scanner(req.scanner_id)
    if sig is None:
        return []
    return [_payload(req, ep, raw, decoded, SIGNATURE)
            for ep, raw, decoded in _entry_values(req)
            if sig.matches(decoded) or sig.matches(raw)]


def flag_by_attack_chars(req: CapturedRequest, chars: Sequence[str] = DEFAULT_ATTACK_CHARS) -> list[Payload]:
    pattern = _attack_pattern(chars)
    return [_payload(req, ep, raw, decoded, ATTACK_CHARS)
            for ep, raw, decoded in _entry_values(req)
            if pattern.search(decoded) or pattern.search(raw)]


def _inserted_segment(path: str, known: str) -> tuple[str, int] | None:
    """If ``path`` is ``known`` with one substring inserted, return it and its segment index."""
    if len(path) <= len(known):
        return None
    limit = len(known)
    size = len(path) - limit
    pre = 0
    while pre < limit and path[pre] == known[pre]:
        pre += 1
    suf = 0
    while suf < limit and path[-1 - suf] == known[-1 - suf]:
        suf += 1
    if pre + suf < limit:
        return None
    # Several alignments may be valid; prefer one that does not swallow a separator.
    options = range(limit - suf, pre + 1)
    start = next((i for i in options if not (path[i] == "/" or path[i + size - 1] == "/")), pre)
    inserted = path[start:start + size]
    if start == pre and (inserted.startswith("/") or inserted.endswith("/")) and len(inserted) > 1:
        # a whole new segment: drop the separator that came with it
        if inserted.startswith("/"):
            inserted, start = inserted[1:], start + 1
        else:
            inserted = inserted[:-1]
    segment = max(path[:start].count("/") - 1, 0)
    return inserted, segment


_SEGMENT_SPLIT = re.compile(r"(?<!<)/")


def extract_path_payloads(req: CapturedRequest, known_paths: Iterable[str] = (),
                          chars: Sequence[str] = DEFAULT_ATTACK_CHARS) -> list[Payload]:
    """Payloads injected into the URL path.

    When the request path is a known route with one inserted substring, that
    substring is the payload.  Otherwise every path segment holding an attack
    character is taken whole.
    """
    pattern = _attack_pattern(chars)
    if not (pattern.search(req.path) or pattern.search(percent_decode(req.path))):
        return []
    decoded_path = percent_decode(req.path)
    for known in sorted(known_paths, key=lambda k: (-len(k), k)):
        hit = _inserted_segment(decoded_path, known)
        if hit and pattern.search(hit[0]):
            value, index = hit
            return [Payload(0, value, value, req.id, EntryPoint(PATH, str(index)),
                            req.scanner_id, frozenset({ATTACK_CHARS}), req.path)]
    out = []
    raw_segments = _SEGMENT_SPLIT.split(req.path.lstrip("/"))
    for index, raw in enumerate(raw_segments):
        decoded = percent_decode(raw)
        if pattern.search(decoded) or pattern.search(raw):
            out.append(Payload(0, decoded, raw, req.id, EntryPoint(PATH, str(index)),
                               req.scanner_id, frozenset({ATTACK_CHARS}), req.path))
    return out


@dataclass(frozen=True)
class ReviewItem:
    """A parameter whose values differ between two scanners' requests."""

    scanners: tuple[str, str]
    request_ids: tuple[int, int]
    path: str
    param: str
    values: tuple[str, str]

    def to_json(self) -> dict:
        return {"scanners": list(self.scanners), "request_ids": list(self.request_ids),
                "path": self.path, "param": self.param, "values": list(self.values)}


def cross_scanner_diff(runs: Mapping[str, Sequence[CapturedRequest]],
                       baseline: Mapping[tuple[str, str], str]) -> list[ReviewItem]:
    """Review queue of parameter mismatches between every pair of scanners."""
    def by_shape(reqs):
        groups: dict[tuple, list[CapturedRequest]] = {}
        for r in reqs:
            names = frozenset(p.name for p in r.query_params)
            groups.setdefault((r.path, names), []).append(r)
        return groups

    shaped = {sid: by_shape(reqs) for sid, reqs in runs.items()}
    items = []
    for sa, sb in combinations(sorted(runs), 2):
        ga, gb = shaped[sa], shaped[sb]
        for key in sorted(set(ga) & set(gb), key=lambda k: (k[0], sorted(k[1]))):
            path = key[0]
            for ra in ga[key]:
                va = {p.name: p.decoded_value for p in ra.query_params}
                for rb in gb[key]:
                    vb = {p.name: p.decoded_value for p in rb.query_params}
                    for name in sorted(va):
                        base = baseline.get((path, name))
                        differs = va[name] != vb[name]
                        if base is not None:
                            differs = differs or va[name] != base or vb[name] != base
                        if differs:
                            items.append(ReviewItem((sa, sb), (ra.id, rb.id), path, name,
                                                    (va[name], vb[name])))
    return items


def _merge(found: Iterable[Payload]) -> list[Payload]:
    merged: dict[tuple, Payload] = {}
    for p in found:
        key = (p.value, p.path, p.entry_point, p.scanner_id)
        prev = merged.get(key)
        if prev is None:
            merged[key] = p
        else:
            keep = prev if prev.request_id <= p.request_id else p
            merged[key] = Payload(keep.id, keep.value, keep.raw_value, keep.request_id,
                                  keep.entry_point, keep.scanner_id,
                                  prev.flagged_by | p.flagged_by, keep.path)
    return list(merged.values())


def extract_all(requests: Iterable[CapturedRequest], sigs: SignatureSet | None = None,
                baseline: Mapping[tuple[str, str], str] | None = None) -> list[Payload]:
    """Union of all heuristics, deduplicated and numbered in canonical order.

    ``baseline`` maps (path, parameter) to the testbed's legitimate value; its
    paths double as the known routes for path-injection isolation.
    """
    sigs = sigs or SignatureSet()
    baseline = baseline or {}
    known = sorted({path for path, _ in baseline})
    found = []
    for req in requests:
        found += flag_by_signature(req, sigs)
        found += flag_by_attack_chars(req, sigs.attack_chars)
        found += extract_path_payloads(req, known, sigs.attack_chars)
    payloads = _merge(found)
    payloads.sort(key=lambda p: (p.scanner_id, p.request_id, p.entry_point.sort_key(), p.value))
    return [Payload(i, p.value, p.raw_value, p.request_id, p.entry_point, p.scanner_id,
                    p.flagged_by, p.path)
            for i, p in enumerate(payloads, 1)]


def write_payloads(payloads: Iterable[Payload], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for p in payloads:
            fh.write(json.dumps(p.to_json()) + "\n")


def read_payloads(path: str | Path) -> list[Payload]:
    with open(path, encoding="utf-8") as fh:
        return [Payload.from_json(json.loads(line)) for line in fh if line.strip()]
