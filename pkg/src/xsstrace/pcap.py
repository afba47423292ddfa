"""Minimal libpcap reader with TCP reassembly and HTTP/1.x request parsing."""

from __future__ import annotations

import logging
import re
import struct
from dataclasses import dataclass, field
from typing import BinaryIO, Iterator

from .capture import (
    CapturedRequest,
    CaptureSource,
    Diagnostics,
    IngestError,
    body_params_for,
    parse_query_string,
    split_target,
)

log = logging.getLogger(__name__)

LINKTYPE_ETHERNET = 1
_MAGICS = {
    b"\xd4\xc3\xb2\xa1": ("<", 1e-6),
    b"\xa1\xb2\xc3\xd4": (">", 1e-6),
    b"\x4d\x3c\xb2\xa1": ("<", 1e-9),
    b"\xa1\xb2\x3c\x4d": (">", 1e-9),
}

_REQUEST_LINE = re.compile(rb"([A-Z]{3,10}) (\S+) HTTP/(\d)\.(\d)\r?\n")
_TLS_RECORD = re.compile(rb"[\x14-\x17]\x03[\x00-\x04]")


class MalformedRequest(ValueError):
    pass


class Incomplete(ValueError):
    pass


def read_packets(fh: BinaryIO, diag: Diagnostics) -> Iterator[tuple[float, bytes]]:
    """Yield (timestamp, frame bytes) for every complete record."""
    header = fh.read(24)
    if len(header) == 0:
        return
    if len(header) < 24 or header[:4] not in _MAGICS:
        raise IngestError("not a libpcap file")
    endian, unit = _MAGICS[header[:4]]
    linktype = struct.unpack(endian + "I", header[20:24])[0]
    if linktype != LINKTYPE_ETHERNET:
        raise IngestError(f"unsupported pcap linktype {linktype}")
    rec = struct.Struct(endian + "IIII")
    while True:
        hdr = fh.read(rec.size)
        if not hdr:
            return
        if len(hdr) < rec.size:
            diag.add("truncated-capture")
            return
        sec, frac, incl, _orig = rec.unpack(hdr)
        data = fh.read(incl)
        if len(data) < incl:
            diag.add("truncated-capture")
            return
        yield sec + frac * unit, data


def tcp_segment(frame: bytes):
    """Decode an Ethernet/IPv4/TCP frame; returns None for anything else."""
    if len(frame) < 14:
        return None
    ethertype = struct.unpack("!H", frame[12:14])[0]
    off = 14
    while ethertype in (0x8100, 0x88A8) and len(frame) >= off + 4:
        ethertype = struct.unpack("!H", frame[off + 2:off + 4])[0]
        off += 4
    if ethertype != 0x0800 or len(frame) < off + 20:
        return None
    ip = frame[off:]
    ihl = (ip[0] & 0x0F) * 4
    total = struct.unpack("!H", ip[2:4])[0]
    flags_frag = struct.unpack("!H", ip[6:8])[0]
    if ip[9] != 6 or flags_frag & 0x3FFF:
        # not TCP, or an IP fragment
        return None
    ip = ip[:total] if total else ip
    src, dst = ip[12:16], ip[16:20]
    tcp = ip[ihl:]
    if len(tcp) < 20:
        return None
    sport, dport, seq = struct.unpack("!HHI", tcp[:8])
    data_off = (tcp[12] >> 4) * 4
    flags = tcp[13]
    return (src, sport, dst, dport), seq, flags, tcp[data_off:]


@dataclass
class _Flow:
    order: int
    isn: int | None = None
    segments: dict = field(default_factory=dict)  # relative seq -> (ts, payload)


def _relative(seq: int, isn: int) -> int:
    return (seq - isn) % (1 << 32)


def reassemble(flow: _Flow, diag: Diagnostics) -> list[tuple[bytes, list[tuple[int, float]]]]:
    """Contiguous byte chunks of a flow, each with (offset, timestamp) marks.

    Segments are ordered by sequence number; duplicates and overlaps are
    trimmed.  A sequence gap starts a new chunk.
    """
    chunks = []
    buf = bytearray()
    marks: list[tuple[int, float]] = []
    expected = None
    for rel in sorted(flow.segments):
        ts, payload = flow.segments[rel]
        if expected is None:
            expected = rel
        if rel < expected:
            payload = payload[expected - rel:]
            rel = expected
            if not payload:
                continue
        if rel > expected:
            diag.add("sequence-gap")
            chunks.append((bytes(buf), marks))
            buf, marks = bytearray(), []
        marks.append((len(buf), ts))
        buf += payload
        expected = rel + len(payload)
    if buf:
        chunks.append((bytes(buf), marks))
    return chunks


def _dechunk(data: bytes, pos: int) -> tuple[bytes, int]:
    body = bytearray()
    while True:
        eol = data.find(b"\r\n", pos)
        if eol < 0:
            raise Incomplete
        size_text = data[pos:eol].split(b";", 1)[0].strip()
        try:
            size = int(size_text, 16)
        except ValueError:
            raise MalformedRequest("bad chunk size") from None
        pos = eol + 2
        if size == 0:
            end = data.find(b"\r\n\r\n", pos - 2)
            if end < 0:
                raise Incomplete
            return bytes(body), end + 4
        if len(data) < pos + size + 2:
            raise Incomplete
        body += data[pos:pos + size]
        pos += size + 2


def parse_request(data: bytes, pos: int):
    """Parse one request at ``pos``; returns (method, target, headers, body, flags, end)."""
    m = _REQUEST_LINE.match(data, pos)
    if not m:
        if len(data) - pos < 16 and b"\n" not in data[pos:]:
            raise Incomplete
        raise MalformedRequest("bad request line")
    head_end = data.find(b"\r\n\r\n", pos)
    if head_end < 0:
        raise Incomplete
    lines = data[m.end():head_end].split(b"\r\n") if head_end > m.end() else []
    headers = []
    for line in lines:
        name, sep, value = line.partition(b":")
        if not sep or not name or name != name.strip():
            raise MalformedRequest("bad header line")
        headers.append((name.decode("latin-1"), value.strip().decode("latin-1")))
    lower = {k.lower(): v for k, v in headers}
    end = head_end + 4
    flags = []
    if "chunked" in lower.get("transfer-encoding", "").lower():
        body, end = _dechunk(data, end)
    else:
        try:
            length = int(lower.get("content-length", "0"))
        except ValueError:
            raise MalformedRequest("bad content-length") from None
        if len(data) < end + length:
            raise Incomplete
        body = data[end:end + length]
        end += length
    enc = lower.get("content-encoding", "").strip().lower()
    if enc and enc != "identity":
        flags.append(f"content-encoding:{enc}")
    return m.group(1).decode("ascii"), m.group(2).decode("latin-1"), headers, body, tuple(flags), end


def _requests_in_chunk(data: bytes, marks, diag: Diagnostics):
    pos = 0
    while pos < len(data):
        try:
            method, target, headers, body, flags, end = parse_request(data, pos)
        except Incomplete:
            diag.add("incomplete-request")
            return
        except MalformedRequest:
            diag.add("malformed-request")
            nxt = data.find(b"\r\n\r\n", pos)
            if nxt < 0:
                return
            pos = nxt + 4
            continue
        ts = marks[0][1]
        for off, t in marks:
            if off > pos:
                break
            ts = t
        yield ts, pos, method, target, headers, body, flags
        pos = end


def ingest_pcap(source: CaptureSource, diag: Diagnostics) -> Iterator[CapturedRequest]:
    try:
        fh = open(source.path, "rb")
    except OSError as exc:
        raise IngestError(f"cannot read {source.path}: {exc}") from exc
    flows: dict[tuple, _Flow] = {}
    with fh:
        for ts, frame in read_packets(fh, diag):
            seg = tcp_segment(frame)
            if seg is None:
                continue
            key, seq, flags, payload = seg
            flow = flows.get(key)
            if flow is None:
                flow = flows[key] = _Flow(len(flows))
            if flags & 0x02:  # SYN
                flow.isn = (seq + 1) % (1 << 32)
                continue
            if not payload:
                continue
            if flow.isn is None:
                flow.isn = seq
            rel = _relative(seq, flow.isn)
            if rel in flow.segments and len(flow.segments[rel][1]) >= len(payload):
                diag.add("duplicate-segment")
                continue
            flow.segments[rel] = (ts, payload)

    found = []
    tls_flows = 0
    for flow in flows.values():
        for data, marks in reassemble(flow, diag):
            if data.startswith(b"HTTP/"):
                break  # server-to-client direction
            if _TLS_RECORD.match(data):
                tls_flows += 1
                break
            for ts, pos, method, target, headers, body, flags in _requests_in_chunk(data, marks, diag):
                found.append(((ts, flow.order, pos), method, target, headers, body, flags))
    if tls_flows:
        diag.add("tls-flow", tls_flows)
        if not found:
            raise IngestError(f"{source.path}: capture holds only TLS-encrypted traffic; "
                              "decrypted HTTP/1.x is required")
    if diag["truncated-capture"]:
        log.warning("%s: capture truncated; processed up to the last complete record", source.path)

    found.sort(key=lambda item: item[0])
    for req_id, ((ts, _, _), method, target, headers, body, flags) in enumerate(found, 1):
        path, query = split_target(target)
        yield CapturedRequest(
            id=req_id,
            timestamp=ts,
            method=method,
            path=path,
            query_params=tuple(parse_query_string(query)),
            body_params=tuple(body_params_for(headers, body)),
            headers=tuple(headers),
            raw_body=body,
            scanner_id=source.scanner_id,
            flags=flags,
        )
