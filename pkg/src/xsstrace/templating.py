"""Recursive payload templating.

Payloads are clustered by repeatedly pairing strings that are close in edit
distance, keeping their long common blocks as literal text and replacing the
rest with ``_STR_`` / ``_NUM_`` placeholders.  The rendered templates of one
round are the input of the next, with both thresholds shrunk by the oblivion
factor, until a round produces nothing new.

Internally a template is handled as an *encoded* string where each
placeholder is a single private-use character, so edit distance and block
matching treat a placeholder as one atomic symbol.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field, replace
from typing import Hashable, Iterable, Mapping, Sequence

LIT, STR, NUM = "LIT", "STR", "NUM"

STR_MARK = "\ue000"
NUM_MARK = "\ue001"
_MARKS = {STR_MARK: STR, NUM_MARK: NUM}
_RENDER = {STR: "_STR_", NUM: "_NUM_"}
_PLACEHOLDER_TEXT = re.compile(r"_STR_|_NUM_")


@dataclass(frozen=True)
class Token:
    kind: str
    text: str = ""

    def to_json(self) -> dict:
        if self.kind == LIT:
            return {"kind": LIT, "text": self.text}
        return {"kind": self.kind}


@dataclass(frozen=True)
class Template:
    tokens: tuple[Token, ...]
    members: frozenset = field(default_factory=frozenset)
    generation: int = 0

    @property
    def rendered(self) -> str:
        return "".join(t.text if t.kind == LIT else _RENDER[t.kind] for t in self.tokens)

    @property
    def literal_text(self) -> str:
        return "".join(t.text for t in self.tokens if t.kind == LIT)

    def to_json(self) -> dict:
        return {
            "tokens": [t.to_json() for t in self.tokens],
            "rendered": self.rendered,
            "members": sorted(self.members, key=_member_key),
            "generation": self.generation,
        }

    @classmethod
    def from_json(cls, obj: Mapping) -> "Template":
        tokens = tuple(Token(t["kind"], t.get("text", "")) for t in obj["tokens"])
        return cls(tokens, frozenset(obj.get("members", ())), obj.get("generation", 0))


def _member_key(m):
    return (isinstance(m, str), m)


@dataclass(frozen=True)
class TemplatingParams:
    lev_threshold: float = 20
    min_block_len: float = 3
    oblivion: float = 0.9
    max_rounds: int = 20
    decay_block_len: bool = True

    def __post_init__(self):
        if not self.lev_threshold > 0:
            raise ValueError("lev_threshold must be positive")
        if not self.min_block_len >= 1:
            raise ValueError("min_block_len must be at least 1")
        if not 0 < self.oblivion <= 1:
            raise ValueError("oblivion must lie in (0, 1]")
        if self.max_rounds < 1:
            raise ValueError("max_rounds must be at least 1")

    def decayed(self) -> "TemplatingParams":
        """Thresholds for the next round (floored at 1)."""
        block = self.min_block_len
        if self.decay_block_len:
            block = max(1.0, block * self.oblivion)
        return replace(self, lev_threshold=max(1.0, self.lev_threshold * self.oblivion),
                       min_block_len=block)


# Published (lev_threshold, oblivion) pairs.  The first value of each pair is
# read as the distance threshold and the second as the decay factor.
PRESETS: dict[str, TemplatingParams] = {
    "default": TemplatingParams(20, 3, 0.9),
    "p20-09": TemplatingParams(20, 3, 0.9),
    "p15-05": TemplatingParams(15, 3, 0.5),
    "p15-08": TemplatingParams(15, 3, 0.8),
    "p15-09": TemplatingParams(15, 3, 0.9),
}


def parse_params(spec: str, base: TemplatingParams | None = None) -> TemplatingParams:
    """Parse ``lev=20,block=3,oblivion=0.9[,rounds=20]`` overrides."""
    base = base or PRESETS["default"]
    names = {"lev": "lev_threshold", "block": "min_block_len",
             "oblivion": "oblivion", "rounds": "max_rounds"}
    changes = {}
    for item in filter(None, (s.strip() for s in spec.split(","))):
        key, sep, value = item.partition("=")
        if not sep or key not in names:
            raise ValueError(f"bad templating parameter: {item!r}")
        changes[names[key]] = int(value) if key == "rounds" else float(value)
    return replace(base, **changes)


def levenshtein(a: str, b: str, max_distance: float | None = None) -> int:
    """Edit distance with unit-cost insertion, deletion and substitution.

    When ``max_distance`` is given the computation may stop early and return
    any value greater than ``max_distance`` once the bound is exceeded.
    """
    if a == b:
        return 0
    if len(a) < len(b):
        a, b = b, a
    if not b:
        return len(a)
    if max_distance is not None and len(a) - len(b) > max_distance:
        return len(a) - len(b)
    previous = list(range(len(b) + 1))
    for i, ca in enumerate(a, 1):
        current = [i]
        best = i
        for j, cb in enumerate(b, 1):
            cost = previous[j - 1] + (ca != cb)
            ins = current[j - 1] + 1
            dele = previous[j] + 1
            v = cost if cost < ins else ins
            if dele < v:
                v = dele
            current.append(v)
            if v < best:
                best = v
        if max_distance is not None and best > max_distance:
            return best
        previous = current
    return previous[-1]


def _longest_common(a: str, b: str, alo: int, ahi: int, blo: int, bhi: int):
    # Earliest start in a wins ties, then earliest start in b.
    best_i, best_j, best_k = alo, blo, 0
    prev = [0] * (bhi - blo + 1)
    for i in range(alo, ahi):
        cur = [0] * (bhi - blo + 1)
        ca = a[i]
        for j in range(blo, bhi):
            if ca == b[j]:
                k = prev[j - blo] + 1
                cur[j - blo + 1] = k
                start_i, start_j = i - k + 1, j - k + 1
                if k > best_k or (k == best_k and (start_i, start_j) < (best_i, best_j)):
                    best_i, best_j, best_k = start_i, start_j, k
        prev = cur
    return best_i, best_j, best_k


def matching_blocks(a: str, b: str) -> list[tuple[int, int, int]]:
    """Recursive longest-common-substring decomposition of ``a`` and ``b``.

    Returns ``(start_a, start_b, length)`` triples ordered in both strings.
    """
    blocks = []
    stack = [(0, len(a), 0, len(b))]
    while stack:
        alo, ahi, blo, bhi = stack.pop()
        if alo >= ahi or blo >= bhi:
            continue
        i, j, k = _longest_common(a, b, alo, ahi, blo, bhi)
        if k == 0:
            continue
        blocks.append((i, j, k))
        stack.append((alo, i, blo, j))
        stack.append((i + k, ahi, j + k, bhi))
    blocks.sort()
    return blocks


def encode(text: str) -> str:
    """Map rendered placeholder spellings onto their one-character marks."""
    return _PLACEHOLDER_TEXT.sub(lambda m: STR_MARK if m.group() == "_STR_" else NUM_MARK, text)


def tokens_from_encoded(enc: str) -> tuple[Token, ...]:
    tokens: list[Token] = []
    for ch in enc:
        kind = _MARKS.get(ch, LIT)
        if kind == LIT:
            if tokens and tokens[-1].kind == LIT:
                tokens[-1] = Token(LIT, tokens[-1].text + ch)
            else:
                tokens.append(Token(LIT, ch))
        elif not (tokens and tokens[-1].kind == kind):
            tokens.append(Token(kind))
    return tuple(tokens)


def encoded_from_tokens(tokens: Iterable[Token]) -> str:
    return "".join(t.text if t.kind == LIT else (STR_MARK if t.kind == STR else NUM_MARK)
                   for t in tokens)


def _gap_kind(*gaps: str) -> str:
    text = "".join(gaps)
    if all(c.isdigit() and c.isascii() or c == NUM_MARK for c in text):
        return NUM
    return STR


def _merge_encoded(a: str, b: str, p: TemplatingParams) -> str | None:
    if levenshtein(a, b, p.lev_threshold) > p.lev_threshold:
        return None
    kept = [blk for blk in matching_blocks(a, b) if blk[2] >= p.min_block_len]
    if not kept:
        return None
    out = []
    ia = ib = 0
    for i, j, k in kept + [(len(a), len(b), 0)]:
        gap_a, gap_b = a[ia:i], b[ib:j]
        if gap_a or gap_b:
            out.append(NUM_MARK if _gap_kind(gap_a, gap_b) == NUM else STR_MARK)
        out.append(a[i:i + k])
        ia, ib = i + k, j + k
    return encoded_from_tokens(tokens_from_encoded("".join(out)))


def merge_pair(a: str, b: str, p: TemplatingParams | None = None) -> Template | None:
    """Merge two payloads (or rendered templates) into one template, if close enough."""
    p = p or PRESETS["default"]
    merged = _merge_encoded(encode(a), encode(b), p)
    if merged is None:
        return None
    return Template(tokens_from_encoded(merged), frozenset({a, b}), 1)


def run_rounds(payloads: Sequence[str] | Mapping[Hashable, str],
               p: TemplatingParams | None = None) -> tuple[list[Template], TemplatingParams, int]:
    """Cluster payloads and also report the terminal thresholds and rounds run.

    ``payloads`` is either a sequence of strings (members are the strings
    themselves) or a mapping of payload id to string (members are the ids).
    """
    p = p or PRESETS["default"]
    items = payloads.items() if isinstance(payloads, Mapping) else ((v, v) for v in payloads)

    # encoded form -> (member ids, generation)
    current: dict[str, tuple[set, int]] = {}
    for pid, value in items:
        enc = encode(value)
        current.setdefault(enc, (set(), 0))[0].add(pid)
    if not current:
        return [], p, 0

    rounds = 0
    params = p
    while rounds < p.max_rounds:
        rounds += 1
        order = sorted(current)
        used = [False] * len(order)
        nxt: dict[str, tuple[set, int]] = {}

        def emit(enc, members, gen):
            slot = nxt.setdefault(enc, (set(), gen))
            slot[0].update(members)
            if gen > slot[1]:
                nxt[enc] = (slot[0], gen)

        for i, a in enumerate(order):
            if used[i]:
                continue
            for j in range(i + 1, len(order)):
                if used[j]:
                    continue
                merged = _merge_encoded(a, order[j], params)
                if merged is not None:
                    used[i] = used[j] = True
                    emit(merged, current[a][0] | current[order[j]][0], rounds)
                    break
            if not used[i]:
                emit(a, current[a][0], current[a][1])
        changed = set(nxt) != set(current)
        current = nxt
        if not changed:
            break
        params = params.decayed()

    templates = [Template(tokens_from_encoded(enc), frozenset(members), gen)
                 for enc, (members, gen) in current.items()]
    templates.sort(key=lambda t: (-len(t.members), t.rendered))
    return templates, params, rounds


def cluster(payloads: Sequence[str] | Mapping[Hashable, str],
            p: TemplatingParams | None = None) -> list[Template]:
    """Cluster payloads into templates, most populated first."""
    return run_rounds(payloads, p)[0]


def template_regex(template: Template) -> re.Pattern:
    parts = []
    for t in template.tokens:
        if t.kind == LIT:
            parts.append(re.escape(t.text))
        elif t.kind == NUM:
            parts.append("[0-9]*")
        else:
            parts.append(".*?")
    return re.compile("".join(parts), re.DOTALL)


def match(template: Template, payload: str) -> bool:
    """True when ``payload`` is an instance of ``template``.

    Placeholders may stand for an empty run, because a gap is allowed to be
    empty on one side of the pair it was built from.
    """
    return template_regex(template).fullmatch(payload) is not None


def template_from_string(text: str) -> Template:
    """Build a template from a rendered string such as ``a_NUM_b``."""
    return Template(tokens_from_encoded(encode(text)))
