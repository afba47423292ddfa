"""The testbed and a scripted scanner.

Starts the vulnerable service on a free port, checks every case's oracle
against its witness payload, then lets the reflection-probe profile attack
it.  Reflected pages are found; DOM pages are not, since the probe looks for
its payload in the server response and DOM sinks never echo it.
"""

import tempfile
from pathlib import Path
from urllib.parse import quote

from xsstrace.firing_range import DOM, FiringRange, build_catalog, oracle_check, running
from xsstrace.mock_scanner import ScannerProfile, scan

catalog = build_catalog()
app = FiringRange(catalog)
for case in catalog:
    page = app.respond(f"{case.route}?q={quote(case.witness, safe='')}")[1]
    print(f"  {case.kind:10}{case.route:36}witness fires: {oracle_check(case, page, case.witness)}")

with tempfile.TemporaryDirectory() as tmp, running() as url:
    profile = ScannerProfile.load("reflection-probe")
    result = scan(profile, url, seed=0, log_path=Path(tmp) / "log.jsonl",
                  report_path=Path(tmp) / "report.json")
    found = {f.path for f in result.findings}
    print(f"\n{profile.scanner_id}: {len(result.requests)} requests against {url}")
    print(f"  reported {len(found)} of {len(catalog)} routes")
    print("  DOM routes reported:", sorted(found & {c.route for c in catalog if c.kind == DOM}) or "none")
