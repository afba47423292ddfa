"""Template quality metrics and per-scanner roll-ups.

M1  literal length                 M4  multiple encodings
M2  distinct literal characters    M5  known filter-evasion techniques
M3  custom callbacks               M6  mean / variance of member edit distance
"""

from __future__ import annotations

import csv
import io
import json
import re
from dataclasses import dataclass
from functools import lru_cache
from importlib import resources
from itertools import combinations
from pathlib import Path
from typing import Iterable, Mapping, Sequence

from .templating import LIT, Template, levenshtein


@dataclass(frozen=True)
class EvasionRule:
    name: str
    pattern: re.Pattern
    reference: str = ""

    def matches(self, text: str) -> bool:
        return self.pattern.search(text) is not None


def load_rules(path: str | Path | None = None) -> list[EvasionRule]:
    """Evasion rules from a JSON list of ``{name, regex, reference}``."""
    if path is None:
        text = resources.files("xsstrace.data").joinpath("evasion_rules.json").read_text(encoding="utf-8")
    else:
        text = Path(path).read_text(encoding="utf-8")
    rules = [EvasionRule(r["name"], re.compile(r["regex"]), r.get("reference", ""))
             for r in json.loads(text)]
    names = [r.name for r in rules]
    if len(set(names)) != len(names):
        raise ValueError("evasion rule names must be unique")
    return rules


def load_builtins(path: str | Path | None = None) -> frozenset[str]:
    if path is None:
        text = resources.files("xsstrace.data").joinpath("builtins.json").read_text(encoding="utf-8")
    else:
        text = Path(path).read_text(encoding="utf-8")
    return frozenset(json.loads(text))


@lru_cache(maxsize=None)
def default_rules() -> tuple[EvasionRule, ...]:
    return tuple(load_rules())


@lru_cache(maxsize=None)
def default_builtins() -> frozenset[str]:
    return load_builtins()


def m1_length(t: Template) -> int:
    return sum(len(tok.text) for tok in t.tokens if tok.kind == LIT)


def m2_distinct_chars(t: Template) -> int:
    return len(set(t.literal_text))


# Placeholders are blanked out so they never read as identifiers.
def _placeholder_free(t: Template) -> str:
    return "".join(tok.text if tok.kind == LIT else " " for tok in t.tokens)


_CALL = re.compile(r"(?<![\w$.])([A-Za-z_$][\w$]*(?:\.[A-Za-z_$][\w$]*)*)\s*\(")


def called_functions(text: str) -> list[str]:
    return _CALL.findall(text)


def m3_custom_callbacks(t: Template, builtins: Iterable[str] | None = None) -> bool:
    builtins = default_builtins() if builtins is None else frozenset(builtins)
    for name in called_functions(_placeholder_free(t)):
        # window.alert / top.prompt count as their builtin
        if name not in builtins and name.rsplit(".", 1)[-1] not in builtins:
            return True
    return False


_ENCODING_DETECTORS = {
    "html-entity": re.compile(r"&#(?:[0-9]+|[xX][0-9a-fA-F]+);"),
    "backslash-escape": re.compile(r"\\x[0-9a-fA-F]{2}|\\u[0-9a-fA-F]{4}"),
    "control-char": re.compile(r"[\r\n\t\x00]|\\[rnt0]"),
    "utf7": re.compile(r"\+A[A-Za-z0-9+/]{2,}-"),
    "residual-percent": re.compile(r"%[0-9a-fA-F]{2}"),
}


def encodings_used(t: Template) -> list[str]:
    text = t.literal_text
    return [name for name, rx in _ENCODING_DETECTORS.items() if rx.search(text)]


def m4_multiple_encodings(t: Template) -> bool:
    return bool(encodings_used(t))


def m5_evasion_count(t: Template | str, rules: Sequence[EvasionRule] | None = None) -> tuple[int, list[str]]:
    rules = default_rules() if rules is None else rules
    text = t if isinstance(t, str) else t.rendered
    names = sorted({r.name for r in rules if r.matches(text)})
    return len(names), names


def m6_lev_stats(cluster: Template, payload_lookup: Mapping) -> tuple[float, float]:
    """Mean and population variance of edit distance over unordered member pairs."""
    values = [payload_lookup[m] for m in sorted(cluster.members, key=str)]
    if len(values) < 2:
        return 0.0, 0.0
    # distinct values with multiplicities; equal pairs contribute distance 0
    counts: dict[str, int] = {}
    for v in values:
        counts[v] = counts.get(v, 0) + 1
    n_pairs = len(values) * (len(values) - 1) // 2
    total = total_sq = 0
    for a, b in combinations(sorted(counts), 2):
        d = levenshtein(a, b)
        w = counts[a] * counts[b]
        total += w * d
        total_sq += w * d * d
    mean = total / n_pairs
    variance = max(total_sq / n_pairs - mean * mean, 0.0)
    return mean, variance


@dataclass(frozen=True)
class TemplateMetrics:
    m1_length: int
    m2_distinct_chars: int
    m3_custom_callbacks: bool
    m4_multiple_encodings: bool
    m5_evasion_count: int
    m5_rules: tuple[str, ...]
    m6_lev_mean: float
    m6_lev_variance: float


def evaluate(t: Template, payload_lookup: Mapping | None = None,
             rules: Sequence[EvasionRule] | None = None,
             builtins: Iterable[str] | None = None) -> TemplateMetrics:
    count, names = m5_evasion_count(t, rules)
    mean, var = m6_lev_stats(t, payload_lookup) if payload_lookup is not None else (0.0, 0.0)
    return TemplateMetrics(m1_length(t), m2_distinct_chars(t), m3_custom_callbacks(t, builtins),
                           m4_multiple_encodings(t), count, tuple(names), mean, var)


@dataclass(frozen=True)
class ScannerSummary:
    scanner_id: str
    uses_mutations: bool = False
    uses_callbacks: bool = False
    uses_filter_evasion: bool = False
    template_count: int = 0
    payload_count: int = 0
    mean_m1: float = 0.0

    def to_json(self) -> dict:
        return {
            "scanner_id": self.scanner_id,
            "uses_mutations": self.uses_mutations,
            "uses_callbacks": self.uses_callbacks,
            "uses_filter_evasion": self.uses_filter_evasion,
            "template_count": self.template_count,
            "payload_count": self.payload_count,
            "mean_m1": self.mean_m1,
        }


def summarize_scanner(templates: Sequence[tuple[Template, TemplateMetrics]], scanner_id: str) -> ScannerSummary:
    if not templates:
        return ScannerSummary(scanner_id)
    ms = [m for _, m in templates]
    evasion = (any(m.m2_distinct_chars > 0 for m in ms)
               and any(m.m4_multiple_encodings for m in ms)
               and any(m.m5_evasion_count >= 1 for m in ms))
    return ScannerSummary(
        scanner_id=scanner_id,
        uses_mutations=any(m.m4_multiple_encodings for m in ms),
        uses_callbacks=any(m.m3_custom_callbacks for m in ms),
        uses_filter_evasion=evasion,
        template_count=len(templates),
        payload_count=sum(len(t.members) for t, _ in templates),
        mean_m1=sum(m.m1_length for m in ms) / len(ms),
    )


def metrics_report(scanner_id: str, scored: Sequence[tuple[Template, TemplateMetrics]]) -> dict:
    return {
        "scanner_id": scanner_id,
        "templates": [
            {
                "rendered": t.rendered,
                "m1": m.m1_length,
                "m2": m.m2_distinct_chars,
                "m3": m.m3_custom_callbacks,
                "m4": m.m4_multiple_encodings,
                "m5": {"count": m.m5_evasion_count, "rules": list(m.m5_rules)},
                "m6": {"mean": round(m.m6_lev_mean, 6), "variance": round(m.m6_lev_variance, 6)},
                "member_count": len(t.members),
            }
            for t, m in scored
        ],
        "summary": summarize_scanner(scored, scanner_id).to_json(),
    }


def table1_csv(summaries: Iterable[ScannerSummary]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["scanner", "mutations_m4", "callbacks_m3", "filter_evasion_m2_m4_m5"])
    for s in summaries:
        w.writerow([s.scanner_id, int(s.uses_mutations), int(s.uses_callbacks), int(s.uses_filter_evasion)])
    return buf.getvalue()
