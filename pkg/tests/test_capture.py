import json
from urllib.parse import parse_qsl

import dpkt
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from pcaputil import frame, stream_frames, write_pcap
from xsstrace.capture import (
    CapturedRequest,
    CaptureSource,
    Diagnostics,
    IngestError,
    Param,
    ingest,
    parse_query_string,
    request_from_log,
    request_to_log,
    write_request_log,
)

REQ = (b"GET /reflected/body?q=%3Cscript%3Ealert(232)%3C/script%3E&x=1 HTTP/1.1\r\n"
       b"Host: testbed\r\nUser-Agent: probe\r\n\r\n")


def _pcap(tmp_path, frames, name="cap.pcap", **kw):
    path = tmp_path / name
    write_pcap(path, frames, **kw)
    return CaptureSource("pcap-file", str(path), "s1")


@given(st.text(alphabet="ab=&%+2F3C<> ", max_size=40))
@settings(max_examples=300, deadline=None)
def test_query_parsing_agrees_with_stdlib(raw):
    ours = [(p.name, p.decoded_value) for p in parse_query_string(raw)]
    theirs = parse_qsl(raw, keep_blank_values=True)
    assert ours == theirs


def test_query_keeps_raw_and_decoded():
    [p] = parse_query_string("q=%3Cscript%3E+x")
    assert p == Param("q", "%3Cscript%3E+x", "<script> x")


def test_split_across_three_segments(tmp_path):
    src = _pcap(tmp_path, stream_frames(REQ, cuts=(10, 40)))
    [req] = list(ingest(src))
    assert req.path == "/reflected/body"
    assert req.query_params[0].decoded_value == "<script>alert(232)</script>"
    assert req.header("host") == "testbed"
    assert req.scanner_id == "s1"


def test_out_of_order_and_duplicate_segments(tmp_path):
    frames = stream_frames(REQ, cuts=(10, 40))
    frames = [frames[0], frames[2], frames[1], frames[3], frames[2]]
    diag = Diagnostics()
    [req] = list(ingest(_pcap(tmp_path, frames), diag))
    assert req.query_params[0].raw_value.startswith("%3Cscript")
    assert diag["duplicate-segment"] == 1


def test_pipelined_requests_in_one_segment(tmp_path):
    two = REQ + b"GET /reflected/comment?q=hi HTTP/1.1\r\nHost: testbed\r\n\r\n"
    reqs = list(ingest(_pcap(tmp_path, stream_frames(two))))
    assert [r.path for r in reqs] == ["/reflected/body", "/reflected/comment"]
    assert [r.id for r in reqs] == [1, 2]


def test_post_body_and_chunked(tmp_path):
    body = b"q=%22%3E%3Cimg&other=1"
    post = (b"POST /form HTTP/1.1\r\nHost: t\r\nContent-Type: application/x-www-form-urlencoded\r\n"
            b"Content-Length: " + str(len(body)).encode() + b"\r\n\r\n" + body)
    chunked = (b"POST /form HTTP/1.1\r\nHost: t\r\nContent-Type: application/x-www-form-urlencoded\r\n"
               b"Transfer-Encoding: chunked\r\n\r\n5\r\nq=%22\r\n4\r\n%3Ca\r\n0\r\n\r\n")
    reqs = list(ingest(_pcap(tmp_path, stream_frames(post + chunked))))
    assert reqs[0].body_params[0].decoded_value == '"><img'
    assert reqs[1].raw_body == b"q=%22%3Ca"
    assert reqs[1].body_params[0].decoded_value == '"<a'


def test_content_encoding_is_flagged(tmp_path):
    gz = (b"POST /x HTTP/1.1\r\nHost: t\r\nContent-Encoding: gzip\r\nContent-Length: 3\r\n\r\nabc")
    [req] = list(ingest(_pcap(tmp_path, stream_frames(gz))))
    assert req.flags == ("content-encoding:gzip",)


def test_malformed_request_is_skipped(tmp_path):
    bad = b"NOT A REQUEST LINE\r\nfoo\r\n\r\n" + REQ
    diag = Diagnostics()
    reqs = list(ingest(_pcap(tmp_path, stream_frames(bad)), diag))
    assert len(reqs) == 1
    assert diag["malformed-request"] == 1


def test_sequence_gap(tmp_path):
    frames = stream_frames(REQ + REQ, cuts=(len(REQ), len(REQ) + 10))
    del frames[2]  # lose the first 10 bytes of the second request
    diag = Diagnostics()
    reqs = list(ingest(_pcap(tmp_path, frames), diag))
    assert len(reqs) == 1
    assert diag["sequence-gap"] == 1


def test_truncated_capture(tmp_path):
    src = _pcap(tmp_path, stream_frames(REQ) + stream_frames(REQ, sport=40001, t0=2.0))
    data = open(src.path, "rb").read()
    open(src.path, "wb").write(data[:-20])
    diag = Diagnostics()
    reqs = list(ingest(src, diag))
    assert len(reqs) == 1
    assert diag["truncated-capture"] == 1


def test_tls_only_capture_is_rejected(tmp_path):
    hello = b"\x16\x03\x01\x00\x2e\x01\x00\x00\x2a\x03\x03" + b"\x00" * 40
    frames = [(1.0, frame(hello, 5000, dport=443))]
    with pytest.raises(IngestError, match="TLS"):
        list(ingest(_pcap(tmp_path, frames)))


def test_server_responses_are_ignored(tmp_path):
    resp = b"HTTP/1.1 200 OK\r\nContent-Length: 2\r\n\r\nok"
    frames = stream_frames(REQ) + [(1.5, frame(resp, 9000, sport=80, dport=40000,
                                               src=b"\x0a\x00\x00\x01", dst=b"\x0a\x00\x00\x02"))]
    assert len(list(ingest(_pcap(tmp_path, frames)))) == 1


def test_nanosecond_pcap(tmp_path):
    [req] = list(ingest(_pcap(tmp_path, stream_frames(REQ, t0=5.25), nano=True)))
    assert req.timestamp == pytest.approx(5.251, abs=1e-6)  # first data segment


def test_not_a_pcap(tmp_path):
    p = tmp_path / "junk.pcap"
    p.write_bytes(b"hello world, certainly not pcap")
    with pytest.raises(IngestError):
        list(ingest(CaptureSource("pcap-file", str(p), "s")))


def test_missing_file_raises_eagerly(tmp_path):
    with pytest.raises(IngestError):
        ingest(CaptureSource("request-log-file", str(tmp_path / "nope.jsonl"), "s"))


def test_requests_agree_with_dpkt_dissection(tmp_path):
    texts = [REQ, b"GET /a?x=%22 HTTP/1.0\r\nHost: h\r\n\r\n", b"GET / HTTP/1.1\r\nHost: h\r\n\r\n"]
    frames = []
    for k, t in enumerate(texts):
        frames += stream_frames(t, sport=41000 + k, t0=1.0 + k)
    src = _pcap(tmp_path, frames)
    ours = list(ingest(src))
    theirs = []
    with open(src.path, "rb") as fh:
        for _, buf in dpkt.pcap.Reader(fh):
            data = dpkt.ethernet.Ethernet(buf).data.data.data
            if data:
                theirs.append(dpkt.http.Request(data))
    assert len(ours) == len(theirs) == 3
    for a, b in zip(ours, theirs):
        assert a.method == b.method
        assert a.path + (f"?{a.query_string}" if a.query_string else "") == b.uri
        assert {k.lower(): v for k, v in a.headers} == dict(b.headers)


def test_request_log_round_trip(tmp_path):
    req = CapturedRequest(id=1, timestamp=12.5, method="POST", path="/f",
                          query_params=(Param("q", "%3C", "<"),),
                          headers=(("Content-Type", "application/x-www-form-urlencoded"),),
                          raw_body=b"a=%22", scanner_id="s")
    path = tmp_path / "log.jsonl"
    write_request_log([req], path)
    back = list(ingest(CaptureSource("request-log-file", str(path), "s")))
    assert len(back) == 1
    b = back[0]
    assert (b.method, b.path, b.query_params, b.raw_body) == (req.method, req.path, req.query_params, req.raw_body)
    assert b.body_params[0].decoded_value == '"'
    assert request_to_log(request_from_log(request_to_log(req), 1, "s")) == request_to_log(req)


def test_request_log_malformed_line(tmp_path):
    path = tmp_path / "log.jsonl"
    path.write_text(json.dumps({"path": "/a?q=%3C"}) + "\n{not json\n" + json.dumps({"method": "GET"}) + "\n")
    diag = Diagnostics()
    reqs = list(ingest(CaptureSource("request-log-file", str(path), "s"), diag))
    assert len(reqs) == 1 and reqs[0].query_params[0].decoded_value == "<"
    assert diag["malformed-request"] == 2


def test_source_kind_guess():
    assert CaptureSource.guess("x.pcap", "s").kind == "pcap-file"
    assert CaptureSource.guess("x.jsonl", "s").kind == "request-log-file"
