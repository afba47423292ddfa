"""From raw traffic to payloads.

Reads the labeled pcap under tests/fixtures, reassembles the TCP streams,
parses the HTTP requests and keeps only the values that carry attack
characters or a scanner signature.  Crawl traffic (the baseline ``sample``
values, browser headers) is dropped.
"""

from collections import Counter
from importlib import resources
from pathlib import Path

from xsstrace.capture import CaptureSource, Diagnostics, ingest
from xsstrace.extraction import SignatureSet, extract_all
from xsstrace.pipeline import default_baseline

pcap = Path(__file__).resolve().parents[1] / "tests" / "fixtures" / "labeled_mixed.pcap"
source = CaptureSource("pcap-file", str(pcap), "scanner-5")

diag = Diagnostics()
requests = list(ingest(source, diag))
print(f"{len(requests)} requests reassembled from {pcap.name}")

sigs = SignatureSet.load(resources.files("xsstrace.data").joinpath("signatures.json"))
payloads = extract_all(requests, sigs, default_baseline())
print(f"{len(payloads)} payloads extracted\n")
for p in payloads:
    how = "+".join(sorted(p.flagged_by))
    print(f"  #{p.request_id:<3}{p.entry_point.kind:7}{p.entry_point.name:8}{how:22}{p.value!r}")

print("\nby entry point kind:", dict(Counter(p.entry_point.kind for p in payloads)))
print("path injections are extracted but left out of later analysis by default")
