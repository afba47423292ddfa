import difflib
import random
import time

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import dp_levenshtein
from xsstrace.templating import (
    LIT,
    NUM,
    PRESETS,
    STR,
    TemplatingParams,
    cluster,
    levenshtein,
    match,
    matching_blocks,
    merge_pair,
    parse_params,
    run_rounds,
    template_from_string,
)

text = st.text(alphabet="ab<>()\"'0123456789xyz", max_size=24)


@given(text, text)
@settings(max_examples=300, deadline=None)
def test_levenshtein_matches_dp_oracle(a, b):
    assert levenshtein(a, b) == dp_levenshtein(a, b)


@given(text, text, st.integers(min_value=0, max_value=10))
@settings(max_examples=200, deadline=None)
def test_levenshtein_cutoff_never_underestimates(a, b, cap):
    exact = dp_levenshtein(a, b)
    capped = levenshtein(a, b, cap)
    if exact <= cap:
        assert capped == exact
    else:
        assert capped > cap


def test_levenshtein_frozen_values():
    assert levenshtein("<ScRiPt >prompt(905188)</ScRiPt>", "<ScRiPt >prompt(900741)</ScRiPt>") == 4
    assert levenshtein("kitten", "sitting") == 3
    assert levenshtein("", "abc") == 3


def _difflib_blocks(a, b):
    sm = difflib.SequenceMatcher(None, a, b, autojunk=False)
    return [tuple(m) for m in sm.get_matching_blocks() if m.size]


@given(text, text)
@settings(max_examples=300, deadline=None)
def test_matching_blocks_match_difflib(a, b):
    assert matching_blocks(a, b) == _difflib_blocks(a, b)


def test_golden_templates():
    t0 = time.perf_counter()
    pairs = [
        (("<ScRiPt >prompt(905188)</ScRiPt>", "<ScRiPt >prompt(900741)</ScRiPt>"),
         "<ScRiPt >prompt(90_NUM_)</ScRiPt>"),
        (("<ScRiPt >prompt(911853)</ScRiPt>", "<ScRiPt >prompt(911967)</ScRiPt>"),
         "<ScRiPt >prompt(911_NUM_)</ScRiPt>"),
        (('onerror=prompt("x6haqgl3")>', 'onerror=prompt("x6hbcxpn")>'),
         'onerror=prompt("x6h_STR_")>'),
    ]
    for payloads, expected in pairs:
        out = cluster(list(payloads))
        assert [t.rendered for t in out] == [expected]
        assert out[0].members == frozenset(payloads)
    assert time.perf_counter() - t0 < 1.0


def test_merge_pair_declines_far_pairs():
    assert merge_pair("aaaaaaaaaaaaaaaaaaaaaaaaa", "bbbbbbbbbbbbbbbbbbbbbbbbb") is None
    assert merge_pair("abc", "xyz") is None


def test_single_payload_is_its_own_template():
    [t] = cluster(["<script>alert(1)</script>"])
    assert t.rendered == "<script>alert(1)</script>"
    assert t.generation == 0


def test_empty_input():
    assert cluster([]) == []


def test_num_vs_str_gap_kind():
    t = merge_pair("id=12345;end", "id=67890;end")
    assert [tok.kind for tok in t.tokens if tok.kind != LIT] == [NUM]
    t = merge_pair("id=12a45;end", "id=67890;end")
    assert [tok.kind for tok in t.tokens if tok.kind != LIT] == [STR]
    # a trailing common run shorter than the block length is absorbed into the gap
    t = merge_pair("id=12345;", "id=67890;")
    assert t.rendered == "id=_STR_"


def test_match_examples():
    t = template_from_string("<ScRiPt >prompt(90_NUM_)</ScRiPt>")
    assert match(t, "<ScRiPt >prompt(905188)</ScRiPt>")
    assert not match(t, "<ScRiPt >prompt(90abc)</ScRiPt>")
    assert not match(t, "<script>prompt(905188)</script>")
    s = template_from_string('onerror=prompt("x6h_STR_")>')
    assert match(s, 'onerror=prompt("x6hbcxpn")>')
    assert match(s, 'onerror=prompt("x6h\n\t")>')


def test_rendered_template_round_trips():
    for text_ in ["a_NUM_b", "_STR_<alert>_STR_", "plain"]:
        assert template_from_string(text_).rendered == text_


def test_presets_and_overrides():
    assert PRESETS["default"] == TemplatingParams(20, 3, 0.9)
    assert PRESETS["p15-05"].oblivion == 0.5
    p = parse_params("lev=15,oblivion=0.8,rounds=5")
    assert (p.lev_threshold, p.min_block_len, p.oblivion, p.max_rounds) == (15, 3, 0.8, 5)
    with pytest.raises(ValueError):
        parse_params("oblivion=1.5")
    with pytest.raises(ValueError):
        parse_params("speed=3")


def test_decay_floors_at_one():
    p = TemplatingParams(2, 2, 0.1)
    d = p.decayed().decayed()
    assert d.lev_threshold >= 1 and d.min_block_len >= 1
    fixed = TemplatingParams(20, 3, 0.5, decay_block_len=False).decayed()
    assert fixed.min_block_len == 3 and fixed.lev_threshold == 10


def test_scanner3_collapse_default_preset():
    rng = random.Random(3)
    alnum = "abcdefghijklmnopqrstuvwxyz0123456789"
    payloads = ["".join(rng.choice(alnum) for _ in range(4)) + "<alert><h1>SCANNER3_XSS"
                + "".join(rng.choice(alnum) for _ in range(4)) for _ in range(14)]
    out = cluster(payloads, PRESETS["default"])
    assert len(out) == 1 and len(out[0].members) == 14
    assert "<alert><h1>SCANNER3_XSS" in out[0].rendered


def test_members_are_ids_when_given_mapping():
    out = cluster({1: "<ScRiPt >prompt(905188)</ScRiPt>", 2: "<ScRiPt >prompt(900741)</ScRiPt>"})
    assert out[0].members == frozenset({1, 2})


def test_duplicate_values_share_a_template():
    out = cluster({1: "abc", 2: "abc", 3: "zzzzzzzzzzzzzzzzzzzzzzzzzzzzz"})
    assert sorted(len(t.members) for t in out) == [1, 2]


# -- properties --------------------------------------------------------------

payloads_st = st.lists(
    st.builds(lambda pre, n, post: f"{pre}<script>alert({n})</script>{post}",
              st.sampled_from(["", "'\">", "-->", "a"]), st.integers(0, 10 ** 6),
              st.text(alphabet="xyz09", max_size=3)),
    min_size=1, max_size=25)


@given(payloads_st)
@settings(max_examples=60, deadline=None)
def test_coverage_and_compression(payloads):
    templates, _, rounds = run_rounds(payloads)
    assert rounds <= PRESETS["default"].max_rounds
    assert len(templates) <= len(set(payloads))
    for p in set(payloads):
        owners = [t for t in templates if p in t.members]
        assert len(owners) == 1
        assert match(owners[0], p)


@given(payloads_st, st.randoms(use_true_random=False))
@settings(max_examples=40, deadline=None)
def test_permutation_invariance(payloads, rnd):
    shuffled = list(payloads)
    rnd.shuffle(shuffled)
    a = {(t.rendered, t.members) for t in cluster(payloads)}
    b = {(t.rendered, t.members) for t in cluster(shuffled)}
    assert a == b


@given(payloads_st)
@settings(max_examples=40, deadline=None)
def test_fixpoint_at_terminal_thresholds(payloads):
    templates, final, _ = run_rounds(payloads)
    again, _, _ = run_rounds([t.rendered for t in templates], final)
    assert sorted(t.rendered for t in again) == sorted(t.rendered for t in templates)
