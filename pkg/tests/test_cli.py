import json
from pathlib import Path

import pytest

from xsstrace.cli import main
from xsstrace.extraction import EntryPoint, Payload, write_payloads

FIXTURES = Path(__file__).parent / "fixtures"
SIGS = str(Path(__file__).parents[1] / "src" / "xsstrace" / "data" / "signatures.json")


@pytest.fixture(scope="module")
def scans(tmp_path_factory):
    out = tmp_path_factory.mktemp("scans")
    for profile in ("numbered-prompt", "low-variety", "retrofit-blind"):
        assert main(["mock-scan", "--profile", profile, "--seed", "4", "--out", str(out)]) == 0
    return out


def capture_args(scans):
    args = []
    for log in sorted(scans.glob("*.log.jsonl")):
        args += ["--log", str(log)]
    for rep in sorted(scans.glob("*.report.json")):
        args += ["--report", str(rep)]
    return args


def split(args):
    logs = [a for i, a in enumerate(args) if i and args[i - 1] == "--log"]
    reps = [a for i, a in enumerate(args) if i and args[i - 1] == "--report"]
    return logs, reps


def test_usage_errors_exit_2(capsys):
    for argv in ([], ["frobnicate"], ["template"], ["template", "--in", "x", "--preset", "nope"]):
        with pytest.raises(SystemExit) as err:
            main(argv)
        assert err.value.code == 2


def test_runtime_failure_exit_1(tmp_path, capsys):
    assert main(["extract", "--log", str(tmp_path / "missing.jsonl"), "--out", str(tmp_path / "p")]) == 1
    assert "error" in capsys.readouterr().err
    assert main(["template", "--in", str(tmp_path / "missing.jsonl")]) == 1
    assert main(["template", "--in", str(tmp_path / "missing.jsonl"), "--params", "oblivion=7"]) == 1


def test_template_two_prompt_payloads(tmp_path):
    pays = [Payload(i, v, v, i, EntryPoint("query", "q"), "s", frozenset(), "/r")
            for i, v in enumerate(["<ScRiPt >prompt(905188)</ScRiPt>", "<ScRiPt >prompt(900741)</ScRiPt>"], 1)]
    write_payloads(pays, tmp_path / "p.jsonl")
    out = tmp_path / "t.jsonl"
    assert main(["template", "--in", str(tmp_path / "p.jsonl"), "--preset", "default", "--out", str(out)]) == 0
    rows = [json.loads(line) for line in out.read_text().splitlines()]
    assert [r["rendered"] for r in rows] == ["<ScRiPt >prompt(90_NUM_)</ScRiPt>"]


def test_extract_crawl_only(tmp_path, capsys):
    out = tmp_path / "p.jsonl"
    assert main(["extract", "--pcap", f"scanner-5={FIXTURES / 'crawl_only.pcap'}", "--out", str(out)]) == 0
    assert out.read_text() == ""


def test_composition_equals_pipeline(scans, tmp_path, capsys):
    args = capture_args(scans)
    logs, reps = split(args)
    a = tmp_path / "a"
    assert main(["pipeline", *args, "--signatures", SIGS, "--out", str(a), "--preset", "p15-08"]) == 0
    b = tmp_path / "b"
    b.mkdir()
    log_args = [x for log in logs for x in ("--log", log)]
    rep_args = [x for rep in reps for x in ("--report", rep)]
    assert main(["extract", *log_args, "--signatures", SIGS, "--out", str(b / "payloads.jsonl")]) == 0
    assert main(["template", "--in", str(b / "payloads.jsonl"), "--preset", "p15-08",
                 "--out", str(b / "templates.jsonl")]) == 0
    assert main(["evaluate", "--in", str(b / "payloads.jsonl"), "--templates", str(b / "templates.jsonl"),
                 "--out", str(b / "metrics.json")]) == 0
    assert main(["correlate", "--in", str(b / "payloads.jsonl"), *rep_args, "--preset", "p15-08",
                 "--out", str(b / "classified.jsonl")]) == 0
    for name in ("payloads.jsonl", "templates.jsonl", "metrics.json", "classified.jsonl"):
        assert (a / name).read_bytes() == (b / name).read_bytes(), name


def test_pipeline_emit_modes(scans, tmp_path, capsys):
    args = capture_args(scans)
    assert main(["pipeline", *args, "--out", str(tmp_path), "--emit", "csv"]) == 0
    header = (tmp_path / "summary.csv").read_text().splitlines()[0]
    assert header.startswith("scanner_id,payloads,distinct_payloads,templates,mean_m1,detected,not_detected")
    assert (tmp_path / "table1.csv").exists()
    capsys.readouterr()
    assert main(["pipeline", *args, "--out", str(tmp_path), "--emit", "json"]) == 0
    rows = json.loads(capsys.readouterr().out)
    assert {r["scanner_id"] for r in rows} == {"scanner-1", "scanner-3", "retrofit-blind"}
    assert main(["pipeline", *args, "--out", str(tmp_path)]) == 0
    assert "mean M1" in capsys.readouterr().out


def test_correlate_annotations_and_negatives(scans, tmp_path):
    logs, reps = split(capture_args(scans))
    pays = tmp_path / "p.jsonl"
    main(["extract", *[x for log in logs for x in ("--log", log)], "--out", str(pays)])
    rows = [json.loads(line) for line in pays.read_text().splitlines()]
    retro = next(r for r in rows if r["path"] == "/retrofit/style-expression")
    ann = tmp_path / "ann.jsonl"
    ann.write_text(json.dumps({"payload_id": retro["id"], "reason": "detection-failure"}) + "\n")
    neg = tmp_path / "neg.jsonl"
    out = tmp_path / "c.jsonl"
    assert main(["correlate", "--in", str(pays), *[x for r in reps for x in ("--report", r)],
                 "--annotations", str(ann), "--negatives", str(neg), "--out", str(out)]) == 0
    cls = {json.loads(line)["payload"]["id"]: json.loads(line) for line in out.read_text().splitlines()}
    assert cls[retro["id"]]["negative_reason"] == "detection-failure"
    assert neg.read_text().strip()
    bad = tmp_path / "bad.jsonl"
    bad.write_text(json.dumps({"payload_id": retro["id"], "reason": "because"}) + "\n")
    assert main(["correlate", "--in", str(pays), *[x for r in reps for x in ("--report", r)],
                 "--annotations", str(bad), "--out", str(out)]) == 1


def test_review_queue(scans, tmp_path, capsys):
    logs, _ = split(capture_args(scans))
    out = tmp_path / "q.jsonl"
    assert main(["review-queue", *[x for log in logs for x in ("--log", log)], "--out", str(out), "--limit", "2"]) == 0
    items = [json.loads(line) for line in out.read_text().splitlines()]
    assert items and all(i["values"][0] != i["values"][1] or "sample" not in i["values"] for i in items)
    assert "distinct mismatches" in capsys.readouterr().out


def test_serve_export_only(tmp_path):
    path = tmp_path / "cat.json"
    assert main(["serve", "--export-catalog", str(path), "--export-only"]) == 0
    assert len(json.loads(path.read_text())) == 19


def test_catalog_flag(scans, tmp_path, capsys):
    cat = tmp_path / "cat.json"
    main(["serve", "--export-catalog", str(cat), "--export-only"])
    args = capture_args(scans)
    assert main(["pipeline", *args, "--catalog", str(cat), "--out", str(tmp_path / "o")]) == 0
