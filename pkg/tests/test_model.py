import pytest

from sbprof import generate, sbpl
from sbprof.errors import UnknownFilterKey, UnknownOperation, VocabularyError
from sbprof.model import (
    Atom,
    Decision,
    FilterKey,
    FilterVocabulary,
    OperationTable,
    RequireAll,
    RequireAny,
    RequireNot,
    ValueForm,
    ValueKind,
    canonicalize,
    lookup_filter,
    lookup_operation,
    validate_profile,
)


def test_decision_negate_is_involution():
    for d in Decision:
        assert d.negate().negate() is d
        assert d.negate() is not d


def test_lookup_operation_default_is_index_zero(small):
    table, _ = small
    assert lookup_operation(table, "default") == 0


def test_lookup_operation_matches_list_position(small):
    table, _ = small
    assert lookup_operation(table, "file-read*") == table.entries.index("file-read*")


def test_lookup_operation_unknown(small):
    table, _ = small
    with pytest.raises(UnknownOperation):
        lookup_operation(table, "no-such-op")


def test_lookup_filter_codes(large):
    _, vocab = large
    assert lookup_filter(vocab, "literal") == (0x01, ValueKind.LITERAL_STRING)
    assert lookup_filter(vocab, "vnode-type") == (0x1d, ValueKind.ENUM_NAMED)
    assert lookup_filter(vocab, "socket-type") == (0x0c, ValueKind.ENUM_NAMED)
    assert lookup_filter(vocab, "regex") == (0x81, ValueKind.REGEX_INDEX)
    with pytest.raises(UnknownFilterKey):
        lookup_filter(vocab, "no-such-key")


def test_filter_enum_codes_from_reference_mappings(large):
    _, vocab = large
    assert vocab.by_name("vnode-type").named_values["REGULAR-FILE"] == 0x0001
    assert vocab.by_name("socket-type").named_values["SOCK_STREAM"] == 0x0001
    assert vocab.by_name("target").named_values["children"] == 0x0004


def test_vocab_code_name_round_trip(large):
    _, vocab = large
    for entry in vocab.entries:
        assert vocab.by_code(entry.code).name == entry.name
        assert vocab.by_name(entry.name).code == entry.code


def test_regex_key_carries_high_bit(large):
    _, vocab = large
    for entry in vocab.entries:
        if entry.kind is ValueKind.REGEX_INDEX:
            assert entry.code & 0x80
        if entry.kind is ValueKind.LITERAL_STRING:
            assert not entry.code & 0x80


def test_vocab_rejects_duplicate_codes():
    with pytest.raises(VocabularyError):
        FilterVocabulary((
            FilterKey("a", 0x01, ValueKind.LITERAL_STRING),
            FilterKey("b", 0x01, ValueKind.LITERAL_STRING),
        ))


def test_operation_table_requires_default_first():
    with pytest.raises(VocabularyError):
        OperationTable(("file-read*", "default"))


def test_operation_table_rejects_parent_cycle():
    with pytest.raises(VocabularyError):
        OperationTable(("default", "a", "b"), parents={"a": "b", "b": "a"})


def _atom(key="literal", value="/x"):
    return Atom(key, value, ValueForm.STRING)


def test_canonicalize_removes_double_negation():
    a = _atom()
    assert canonicalize(RequireNot(RequireNot(a))) == a


def test_canonicalize_flattens_nested_combinators():
    a, b, c = _atom(value="/a"), _atom(value="/b"), _atom(value="/c")
    got = canonicalize(RequireAny((a, RequireAny((b, c)))))
    assert got == RequireAny((a, b, c))
    got = canonicalize(RequireAll((RequireAll((a, b)), c)))
    assert got == RequireAll((a, b, c))


def test_canonicalize_collapses_single_child():
    a = _atom()
    assert canonicalize(RequireAll((a,))) == a
    assert canonicalize(RequireAny((a,))) == a


def test_canonicalize_deduplicates():
    a, b = _atom(value="/a"), _atom(value="/b")
    assert canonicalize(RequireAny((b, a, b))) == RequireAny((a, b))


def test_canonicalize_sorts_by_key_code(small):
    _, vocab = small
    lit = _atom("literal", "/x")
    vn = Atom("vnode-type", "REGULAR-FILE", ValueForm.SYMBOL)
    rx = Atom("regex", "/x", ValueForm.REGEX)
    got = canonicalize(RequireAny((rx, vn, lit)), vocab)
    # literal 0x01 < vnode-type 0x1d < regex 0x81
    assert got == RequireAny((lit, vn, rx))


def test_canonicalize_idempotent_on_random_exprs(small):
    table, vocab = small
    gen = generate.ProfileGenerator(table, vocab, seed=99, max_depth=4)
    for _ in range(1000):
        expr = gen._random_expr(4)
        once = canonicalize(expr, vocab)
        assert canonicalize(once, vocab) == once


def test_validate_accepts_reference_profile(small):
    table, vocab = small
    profile = sbpl.parse_sbpl(
        '(deny default)\n'
        '(allow file-read* (require-any (regex #"/bin/*") (vnode-type REGULAR-FILE)))')
    assert validate_profile(profile, table, vocab) == []


def test_validate_missing_default(small):
    table, vocab = small
    profile = sbpl.parse_sbpl('(allow file-read* (literal "/x"))')
    codes = [d.code for d in validate_profile(profile, table, vocab)]
    assert "MissingDefault" in codes


def test_validate_unknown_filter_key(small):
    table, vocab = small
    profile = sbpl.parse_sbpl('(deny default)\n(allow file-read* (frobnicate "/x"))')
    codes = [d.code for d in validate_profile(profile, table, vocab)]
    assert "UnknownFilterKey" in codes


def test_validate_unknown_operation_and_enum_value(small):
    table, vocab = small
    profile = sbpl.parse_sbpl(
        '(deny default)\n(allow teleport (literal "/x"))\n'
        '(allow file-read* (vnode-type NOT-A-THING))')
    codes = {d.code for d in validate_profile(profile, table, vocab)}
    assert {"UnknownOperation", "UnknownFilterValue"} <= codes


def test_validate_flags_unreachable_rule(small):
    table, vocab = small
    profile = sbpl.parse_sbpl(
        '(deny default)\n(allow file-read*)\n(deny file-read* (literal "/x"))')
    codes = [d.code for d in validate_profile(profile, table, vocab)]
    assert "UnreachableRule" in codes


def test_canonicalize_preserves_matching_semantics(small):
    from sbprof import evaluate

    table, vocab = small
    gen = generate.ProfileGenerator(table, vocab, seed=17, max_depth=4)
    for _ in range(150):
        expr = gen._random_expr(4)
        canon = canonicalize(expr, vocab)
        triples = []
        from sbprof.model import expr_atoms

        for atom in expr_atoms(expr):
            entry = vocab.by_name(atom.key)
            triples.append((entry.context_key, entry.kind, atom.value))
        universe = evaluate.build_universe(triples, vocab)
        for ctx in evaluate.exhaustive_contexts(universe, cap=4096):
            assert evaluate.expr_matches(expr, ctx, vocab) == \
                evaluate.expr_matches(canon, ctx, vocab)
