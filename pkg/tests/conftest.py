import random
import string

import pytest

from xsstrace.mock_scanner import ScannerProfile, bundled_profiles, instantiate


def dp_levenshtein(a: str, b: str) -> int:
    """Textbook full-matrix edit distance, used as an independent oracle."""
    d = [[0] * (len(b) + 1) for _ in range(len(a) + 1)]
    for i in range(len(a) + 1):
        d[i][0] = i
    for j in range(len(b) + 1):
        d[0][j] = j
    for i in range(1, len(a) + 1):
        for j in range(1, len(b) + 1):
            d[i][j] = min(d[i - 1][j] + 1, d[i][j - 1] + 1,
                          d[i - 1][j - 1] + (a[i - 1] != b[j - 1]))
    return d[len(a)][len(b)]


def seeded_payloads(n: int = 200, seed: int = 7) -> list[str]:
    """n payloads drawn round-robin from every bundled profile."""
    pools = [instantiate(ScannerProfile.load(name), seed=seed + i)
             for i, name in enumerate(bundled_profiles())]
    rng = random.Random(seed)
    out = []
    k = 0
    while len(out) < n:
        pool = pools[k % len(pools)]
        entry = rng.choice(pool)
        # fresh slot values so the sample is not a handful of repeats
        out.append(entry + "".join(rng.choice(string.digits) for _ in range(rng.randint(0, 3))))
        k += 1
    return out


@pytest.fixture
def payload_sample():
    return seeded_payloads()


# -- acceptance report ---------------------------------------------------------

_ACCEPTANCE: dict[int, tuple[str, str]] = {}


@pytest.fixture
def criterion(request):
    """Record the outcome of one acceptance criterion; the line is printed at the end of the run."""
    state = {}

    def start(number: int, title: str):
        state["n"], state["title"] = number, title
        _ACCEPTANCE[number] = ("FAIL", title)

    yield start
    rep = getattr(request.node, "rep_call", None)
    if "n" in state and rep is not None and rep.passed:
        _ACCEPTANCE[state["n"]] = ("PASS", state["title"])


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    if rep.when == "call":
        item.rep_call = rep


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_ACCEPTANCE):
        status, title = _ACCEPTANCE[n]
        terminalreporter.write_line(f"criterion {n}: {status}  {title}")
