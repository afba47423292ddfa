"""Clustering scanner payloads into templates.

Two payloads that differ only in a random call argument collapse into one
template with a NUM placeholder.  A noisier batch shows the recursion at work:
each round merges pairs of the previous round's output while the thresholds
shrink, until nothing new appears.
"""

from xsstrace.templating import PRESETS, cluster, levenshtein, match, parse_params, run_rounds

pair = ["<ScRiPt >prompt(905188)</ScRiPt>", "<ScRiPt >prompt(900741)</ScRiPt>"]
print("edit distance:", levenshtein(*pair))
[template] = cluster(pair)
print("template:     ", template.rendered)

batch = [f"{tag}<alert><h1>SCANNER3_XSS{tail}" for tag, tail in
         [("y0cq", "65zt"), ("k2", "p9"), ("mmnx", "ab"), ("q", "0001"), ("zz9", "h")]]
batch += ["a><alert><h1>SCANNER3_XSS", "<svg/onload=alert(1)>"]

templates, final, rounds = run_rounds(batch, PRESETS["default"])
print(f"\n{len(batch)} payloads -> {len(templates)} templates in {rounds} rounds "
      f"(final lev threshold {final.lev_threshold:.1f})")
for t in templates:
    print(f"  {len(t.members):2d}  {t.rendered!r}")

# every payload is an instance of the template it was assigned to
assert all(match(t, m) for t in templates for m in t.members)

# a lower threshold keeps the prefixed probe apart from the bare one
pair2 = ["a><alert><h1>SCANNER3_XSS", "zz9<alert><h1>SCANNER3_XSSh"]
for p in (PRESETS["default"], parse_params("lev=2")):
    print(f"lev threshold {p.lev_threshold}: {[t.rendered for t in cluster(pair2, p)]}")
