"""Scoring templates.

Runs two bundled scanner profiles through templating and prints their
metrics: literal length (M1), literal alphabet (M2), custom callbacks (M3),
encodings (M4), evasion rules hit (M5) and the spread of member distances
(M6).  The roll-up row says whether the scanner mutates payloads, calls its
own functions and tries to evade filters.
"""

from xsstrace.metrics import evaluate, summarize_scanner
from xsstrace.mock_scanner import ScannerProfile, instantiate
from xsstrace.templating import cluster

for name in ("generic-probe", "context-breakout"):
    profile = ScannerProfile.load(name)
    values = instantiate(profile, 0) + instantiate(profile, 1) + instantiate(profile, 2)
    lookup = dict(enumerate(values))
    scored = [(t, evaluate(t, lookup)) for t in cluster(lookup)]
    print(f"{profile.scanner_id} ({name}): {profile.description}")
    for t, m in scored:
        print(f"  {t.rendered!r}")
        print(f"    M1={m.m1_length} M2={m.m2_distinct_chars} M3={m.m3_custom_callbacks} "
              f"M4={m.m4_multiple_encodings} M5={m.m5_evasion_count} {list(m.m5_rules)} "
              f"M6=({m.m6_lev_mean:.2f}, {m.m6_lev_variance:.2f})")
    s = summarize_scanner(scored, profile.scanner_id)
    print(f"  mutations={s.uses_mutations} callbacks={s.uses_callbacks} "
          f"filter evasion={s.uses_filter_evasion}\n")
