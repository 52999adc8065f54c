import itertools
import random

import pytest

from sbprof import generate, nfa, rex
from sbprof.errors import MalformedRegexBlob, RegexSyntaxError, TooManyStates
from sbprof.rex import AnchorStart, Char, CharClass, Concat, Star

REFERENCE_PATTERNS = (
    "/bin/*",
    "^/dev/ttys[0-9]*",
    r"^/private/tmp/\.webdavUDS\.[^/]+$",
)


def _language(ast, alphabet, max_len):
    """Brute-force oracle: full-match every string up to max_len."""
    out = set()
    for n in range(max_len + 1):
        for tup in itertools.product(sorted(alphabet), repeat=n):
            s = "".join(tup)
            if rex.ast_match(ast, s, full=True):
                out.add(s)
    return out


def test_parse_anchored_class_pattern():
    ast = rex.parse_regex("^/dev/ttys[0-9]*")
    assert isinstance(ast, Concat)
    assert isinstance(ast.parts[0], AnchorStart)
    tail = ast.parts[-1]
    assert isinstance(tail, Star) and isinstance(tail.inner, CharClass)
    assert tail.inner.ranges == ((0x30, 0x39),)


def test_parse_single_char():
    assert rex.parse_regex("a") == Char(ord("a"))


def test_parse_errors_carry_position():
    with pytest.raises(RegexSyntaxError) as err:
        rex.parse_regex("(")
    assert err.value.position == 0
    for bad in ("a)", "[z-a]", "[]", "a\\", "*a", "[abc"):
        with pytest.raises(RegexSyntaxError):
            rex.parse_regex(bad)
    with pytest.raises(RegexSyntaxError):
        rex.parse_regex("")


def test_print_parse_round_trip():
    for pat in REFERENCE_PATTERNS + ("a|b|c", "(ab)+c?", "[^a-z/]", "a.b$",
                                     "x(y|z)*", "\\.\\*\\["):
        ast = rex.parse_regex(pat)
        assert rex.parse_regex(rex.print_regex(ast)) == ast


def test_ast_matcher_search_vs_full():
    ast = rex.parse_regex("^/bin/.*")
    assert rex.ast_match(ast, "/bin/ls", full=False)
    assert not rex.ast_match(ast, "/etc/passwd", full=False)
    unanchored = rex.parse_regex("/bin/*")
    assert rex.ast_match(unanchored, "/usr/bin/ls", full=False)
    assert not rex.ast_match(unanchored, "/usr/bin/ls", full=True)


def test_build_nfa_trivial_shapes():
    m = nfa.build_nfa(Char(ord("a")))
    assert m.n_states == 2
    assert len([t for t in m.transitions]) == 1
    star = nfa.build_nfa(Star(Char(ord("a"))))
    for s, want in (("", True), ("a", True), ("aaaa", True), ("b", False)):
        assert nfa.nfa_match(star, s, full=True) is want


def test_nfa_language_equals_ast_matcher_on_random_asts(small):
    table, vocab = small
    rng = random.Random(11)
    alphabet = "ab/"
    for case in range(200):
        pat = generate.random_regex_pattern(rng, 3) if case % 2 else \
            _small_pattern(rng)
        ast = rex.parse_regex(pat)
        m = nfa.build_nfa(ast)
        for n in range(0, 7):
            for tup in itertools.product(alphabet, repeat=n):
                s = "".join(tup)
                assert nfa.nfa_match(m, s, full=True) == \
                    rex.ast_match(ast, s, full=True), (pat, s)


def _small_pattern(rng):
    atoms = ("a", "b", "/", ".", "[ab]", "[^a]")
    pieces = []
    for _ in range(rng.randint(1, 4)):
        piece = rng.choice(atoms)
        if rng.random() < 0.4:
            piece += rng.choice("*+?")
        pieces.append(piece)
    pat = "".join(pieces)
    if rng.random() < 0.3:
        pat = "%s|%s" % (pat, rng.choice(atoms))
    return pat


def test_serialize_single_char_is_two_records():
    blob = nfa.serialize_nfa(nfa.build_nfa(Char(ord("a"))))
    assert int.from_bytes(blob[:2], "little") == 2
    assert blob[2] == nfa.TAG_CHAR
    assert blob[5] == nfa.TAG_ACCEPT


def test_serialize_star_contains_backward_jump():
    blob = nfa.serialize_nfa(nfa.build_nfa(rex.parse_regex("a*")))
    m = nfa.deserialize_nfa(blob)
    tags = _record_tags(blob)
    back = [(i, t) for i, t in enumerate(tags) if t == nfa.TAG_JUMP_BCK]
    assert back, "closure must loop backwards"
    assert nfa.nfa_match(m, "aaa", full=True)


def _record_tags(blob):
    count = int.from_bytes(blob[:2], "little")
    tags = []
    pos = 2
    for _ in range(count):
        tag = blob[pos]
        tags.append(tag)
        if tag in (nfa.TAG_CLASS, nfa.TAG_CLASS_NEG):
            pos += 2 + 2 * blob[pos + 1]
        else:
            pos += 3
    return tags


def _jump_targets(blob):
    count = int.from_bytes(blob[:2], "little")
    pos = 2
    for i in range(count):
        tag = blob[pos]
        if tag in (nfa.TAG_CLASS, nfa.TAG_CLASS_NEG):
            pos += 2 + 2 * blob[pos + 1]
            continue
        operand = int.from_bytes(blob[pos + 1:pos + 3], "little")
        pos += 3
        if tag in (nfa.TAG_JUMP_FWD, nfa.TAG_JUMP_BCK):
            yield i, tag, operand


def test_jump_index_invariant_on_emitted_streams(small):
    rng = random.Random(5)
    for _ in range(100):
        pat = generate.random_regex_pattern(rng, 4)
        blob = nfa.serialize_nfa(nfa.build_nfa(rex.parse_regex(pat)))
        for i, tag, target in _jump_targets(blob):
            if tag == nfa.TAG_JUMP_FWD:
                assert target > i, pat
            else:
                assert target < i, pat


def test_serialize_deserialize_preserves_bounded_language():
    rng = random.Random(21)
    for _ in range(200):
        pat = generate.random_regex_pattern(rng, 3)
        m = nfa.build_nfa(rex.parse_regex(pat))
        m2 = nfa.deserialize_nfa(nfa.serialize_nfa(m))
        assert m2.n_states == int.from_bytes(nfa.serialize_nfa(m)[:2], "little")
        alphabet = _pattern_alphabet(pat)
        equal, witness = nfa.bounded_language_equal(m, m2, alphabet, 6)
        assert equal, (pat, witness)


def _pattern_alphabet(pat, cap=8):
    chars = sorted(set(c for c in pat if c.isalnum() or c == "/"))[:cap - 1]
    return set(chars) | {"~"}


def test_deserialize_rejects_malformed():
    with pytest.raises(MalformedRegexBlob):
        nfa.deserialize_nfa(b"")
    with pytest.raises(MalformedRegexBlob):
        nfa.deserialize_nfa(b"\x00\x00")  # zero nodes
    good = nfa.serialize_nfa(nfa.build_nfa(rex.parse_regex("ab")))
    with pytest.raises(MalformedRegexBlob):
        nfa.deserialize_nfa(good[:4])  # truncated mid-record
    with pytest.raises(MalformedRegexBlob):
        nfa.deserialize_nfa(b"\x02\x00" + bytes([nfa.TAG_JUMP_BCK, 1, 0]) +
                            bytes([nfa.TAG_ACCEPT, 0, 0]))  # backward jump forwards
    with pytest.raises(MalformedRegexBlob):
        nfa.deserialize_nfa(b"\x01\x00" + bytes([nfa.TAG_CHAR, 97, 0]))  # flows off end
    with pytest.raises(MalformedRegexBlob):
        nfa.deserialize_nfa(b"\x01\x00" + bytes([0xFF, 0, 0]))  # unknown tag


def test_deserialize_requires_accept():
    blob = b"\x02\x00" + bytes([nfa.TAG_CHAR, 97, 0]) + bytes([nfa.TAG_CLASS, 0])
    with pytest.raises(MalformedRegexBlob):
        nfa.deserialize_nfa(blob)


def test_nfa_to_regex_two_state_chain():
    m = nfa.Nfa(2, ((0, Char(ord("a")), 1),), 0, frozenset([1]))
    assert nfa.nfa_to_regex(m) == Char(ord("a"))


def test_nfa_to_regex_chain_with_self_loop():
    # three-state chain where the middle state loops on itself
    a, b = Char(ord("a")), Char(ord("b"))
    m = nfa.Nfa(3, ((0, a, 1), (1, b, 1), (1, a, 2)), 0, frozenset([2]))
    back = nfa.nfa_to_regex(m)
    rebuilt = nfa.build_nfa(back)
    equal, witness = nfa.bounded_language_equal(m, rebuilt, "ab", 7)
    assert equal, witness


def test_nfa_to_regex_language_preserved_on_random_asts():
    rng = random.Random(31)
    for _ in range(200):
        pat = generate.random_regex_pattern(rng, 3)
        m = nfa.build_nfa(rex.parse_regex(pat))
        back = nfa.nfa_to_regex(m)
        rebuilt = nfa.build_nfa(back)
        equal, witness = nfa.bounded_language_equal(
            m, rebuilt, _pattern_alphabet(pat), 6)
        assert equal, (pat, rex.print_regex(back), witness)


def test_reference_patterns_reverse_to_identical_text():
    for pat in REFERENCE_PATTERNS:
        m = nfa.deserialize_nfa(nfa.serialize_nfa(nfa.build_nfa(rex.parse_regex(pat))))
        assert rex.print_regex(nfa.nfa_to_regex(m)) == pat


def test_state_removal_step_count():
    # augmented automaton sheds exactly (states - 2): every original state
    for pat in ("a", "ab|c", "/bin/*", "^x[0-9]+$"):
        m = nfa.build_nfa(rex.parse_regex(pat))
        if m.start in m.accepts:
            continue
        _ast, steps = nfa.reverse_with_stats(m)
        assert steps == m.n_states


def test_enumerate_language_examples():
    m = nfa.build_nfa(rex.parse_regex("a*"))
    assert nfa.enumerate_language(m, "ab", 2) == {"", "a", "aa"}
    m = nfa.build_nfa(rex.parse_regex("a|b"))
    assert nfa.enumerate_language(m, "ab", 1) == {"a", "b"}


def test_enumerate_commutes_with_serialization():
    rng = random.Random(41)
    for _ in range(40):
        pat = generate.random_regex_pattern(rng, 2)
        m = nfa.build_nfa(rex.parse_regex(pat))
        m2 = nfa.deserialize_nfa(nfa.serialize_nfa(m))
        alphabet = _pattern_alphabet(pat, cap=5)
        assert nfa.enumerate_language(m, alphabet, 4) == \
            nfa.enumerate_language(m2, alphabet, 4)


def test_bounded_language_equal_detects_differences():
    pairs = (("a", "b", "a"), ("a*", "a+", ""), ("ab", "ab|ac", "ac"),
             ("a", "a|aa", "aa"), ("[ab]", "[abc]", "c"))
    for left, right, expected_witness in pairs:
        ml = nfa.build_nfa(rex.parse_regex(left))
        mr = nfa.build_nfa(rex.parse_regex(right))
        equal, witness = nfa.bounded_language_equal(ml, mr, "abc", 4)
        assert not equal, (left, right)
        if expected_witness is not None:
            assert witness == expected_witness, (left, right, witness)


def test_anchors_inside_pattern_agree_with_oracle():
    for pat, s, want_search in (
        ("^a", "ba", False),
        ("a$", "ab", False),
        ("a$", "ba", True),
        ("^$", "", True),
        ("^$", "x", False),
    ):
        ast = rex.parse_regex(pat)
        m = nfa.build_nfa(ast)
        assert rex.ast_match(ast, s, full=False) is want_search, pat
        assert nfa.nfa_match(m, s, full=False) is want_search, pat


def test_reversal_state_cap():
    big = nfa.Nfa(5000, tuple((i, Char(97), i + 1) for i in range(4999)),
                  0, frozenset([4999]))
    with pytest.raises(TooManyStates):
        nfa.nfa_to_regex(big)
