"""Core policy model: decisions, vocabularies, filter expressions, profiles.

All types here are immutable after construction and safe to share across
threads. The compiler, decompiler and evaluator all work on this model.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Mapping, Union

from .errors import UnknownFilterKey, UnknownOperation, VocabularyError

REGEX_KEY_FLAG = 0x80  # high bit of a filter key code marks the regex variant


class Decision(enum.Enum):
    ALLOW = "allow"
    DENY = "deny"

    def negate(self) -> "Decision":
        return Decision.DENY if self is Decision.ALLOW else Decision.ALLOW

    def __str__(self) -> str:
        return self.value


class ValueKind(enum.Enum):
    """How a filter's 16-bit serialized value is interpreted."""

    LITERAL_STRING = "literal_string"    # pool index of a length-prefixed string
    REGEX_INDEX = "regex_index"          # pool index of a serialized automaton
    ENUM_NAMED = "enum_named"            # named constant code
    NUMERIC = "numeric"                  # raw 16-bit number
    NETWORK_ENDPOINT = "network_endpoint"  # pool index of "proto host:port"


# Pool-backed kinds store their value as a pool index rather than inline.
POOLED_KINDS = frozenset(
    {ValueKind.LITERAL_STRING, ValueKind.REGEX_INDEX, ValueKind.NETWORK_ENDPOINT}
)


@dataclass(frozen=True)
class FilterKey:
    """One vocabulary entry: a filter key name and its wire encoding.

    context_key names the runtime binding the filter tests; several keys may
    test the same binding (e.g. literal and regex both test "path").
    """

    name: str
    code: int
    kind: ValueKind
    named_values: Mapping[str, int] | None = None
    context_key: str = ""

    def __post_init__(self):
        if not self.context_key:
            object.__setattr__(self, "context_key", self.name)

    def value_name(self, code: int) -> str | None:
        if not self.named_values:
            return None
        for name, c in self.named_values.items():
            if c == code:
                return name
        return None


@dataclass(frozen=True)
class FilterVocabulary:
    entries: tuple[FilterKey, ...]
    version_tag: str = ""

    def __post_init__(self):
        names = set()
        codes = set()
        for e in self.entries:
            if e.name in names:
                raise VocabularyError(f"duplicate filter name {e.name!r}")
            if e.code in codes:
                raise VocabularyError(f"duplicate filter code 0x{e.code:02x}")
            names.add(e.name)
            codes.add(e.code)
            if not 0 <= e.code <= 0xFF:
                raise VocabularyError(f"filter code out of range: {e.code}")
            if e.kind is ValueKind.ENUM_NAMED:
                if not e.named_values:
                    raise VocabularyError(f"{e.name}: enum filter without values")
                if len(set(e.named_values.values())) != len(e.named_values):
                    raise VocabularyError(f"{e.name}: duplicate enum value codes")
            # The regex/literal split rides on the high bit of the key code.
            if e.kind is ValueKind.REGEX_INDEX and not e.code & REGEX_KEY_FLAG:
                raise VocabularyError(f"{e.name}: regex filter code needs high bit set")
            if e.kind is ValueKind.LITERAL_STRING and e.code & REGEX_KEY_FLAG:
                raise VocabularyError(f"{e.name}: literal filter code has high bit set")

    def by_name(self, name: str) -> FilterKey:
        for e in self.entries:
            if e.name == name:
                return e
        raise UnknownFilterKey(name)

    def by_code(self, code: int) -> FilterKey:
        for e in self.entries:
            if e.code == code:
                return e
        raise UnknownFilterKey(f"0x{code:02x}")

    def has_name(self, name: str) -> bool:
        return any(e.name == name for e in self.entries)


@dataclass(frozen=True)
class OperationTable:
    """Ordered operation names; list position is the wire index."""

    entries: tuple[str, ...]
    version_tag: str = ""
    # op name -> parent op name; consulted only for operations with no rules
    parents: Mapping[str, str] = field(default_factory=dict)

    def __post_init__(self):
        if not self.entries or self.entries[0] != "default":
            raise VocabularyError('operation table must start with "default"')
        if len(set(self.entries)) != len(self.entries):
            raise VocabularyError("duplicate operation names")
        for child, parent in self.parents.items():
            if child not in self.entries or parent not in self.entries:
                raise VocabularyError(f"parent link {child} -> {parent} names unknown op")
        # reject parent cycles up front
        for name in self.parents:
            seen = set()
            cur = name
            while cur in self.parents:
                if cur in seen:
                    raise VocabularyError(f"parent cycle through {cur!r}")
                seen.add(cur)
                cur = self.parents[cur]

    def index(self, name: str) -> int:
        try:
            return self.entries.index(name)
        except ValueError:
            raise UnknownOperation(name) from None

    def __len__(self) -> int:
        return len(self.entries)


def lookup_operation(table: OperationTable, name: str) -> int:
    """0-based operation index; index 0 is always "default"."""
    return table.index(name)


def lookup_filter(vocab: FilterVocabulary, key_name: str) -> tuple[int, ValueKind]:
    entry = vocab.by_name(key_name)
    return entry.code, entry.kind


# ---------------------------------------------------------------------------
# Filter expressions

class ValueForm(enum.Enum):
    """Surface syntax of an atom value, preserved so printing is lossless."""

    STRING = "string"      # (literal "/bin/ls")
    SYMBOL = "symbol"      # (vnode-type REGULAR-FILE)
    REGEX = "regex"        # (regex #"/bin/*")
    NUMBER = "number"      # (file-mode 438)
    ENDPOINT = "endpoint"  # (remote tcp "localhost:22")


AtomValue = Union[str, int, tuple]


@dataclass(frozen=True)
class Atom:
    key: str
    value: AtomValue
    form: ValueForm = ValueForm.STRING


@dataclass(frozen=True)
class RequireAll:
    children: tuple


@dataclass(frozen=True)
class RequireAny:
    children: tuple


@dataclass(frozen=True)
class RequireNot:
    child: "FilterExpr"


FilterExpr = Union[Atom, RequireAll, RequireAny, RequireNot]


def _expr_sort_key(expr: FilterExpr, vocab: FilterVocabulary | None):
    if isinstance(expr, Atom):
        if vocab is not None and vocab.has_name(expr.key):
            key_part = (0, vocab.by_name(expr.key).code, "")
        else:
            key_part = (1, 0, expr.key)
        return (0, key_part, repr(expr.value))
    if isinstance(expr, RequireNot):
        return (1, _expr_sort_key(expr.child, vocab), "")
    rank = 2 if isinstance(expr, RequireAll) else 3
    return (rank, tuple(_expr_sort_key(c, vocab) for c in expr.children), "")


def canonicalize(expr: FilterExpr, vocab: FilterVocabulary | None = None) -> FilterExpr:
    """Structural normal form: flattened, double-negation free, sorted.

    Children of require-all/require-any are flattened into their parent when
    the combinator matches, deduplicated and ordered by (key code, value);
    single-child combinators collapse. Idempotent.
    """
    if isinstance(expr, Atom):
        return expr
    if isinstance(expr, RequireNot):
        child = canonicalize(expr.child, vocab)
        if isinstance(child, RequireNot):
            return child.child
        return RequireNot(child)
    cls = type(expr)
    flat = []
    for c in expr.children:
        c = canonicalize(c, vocab)
        if isinstance(c, cls):
            flat.extend(c.children)
        else:
            flat.append(c)
    unique = []
    for c in flat:
        if c not in unique:
            unique.append(c)
    unique.sort(key=lambda c: _expr_sort_key(c, vocab))
    if len(unique) == 1:
        return unique[0]
    return cls(tuple(unique))


def expr_atoms(expr: FilterExpr):
    """Yield every atom in the expression tree."""
    if isinstance(expr, Atom):
        yield expr
    elif isinstance(expr, RequireNot):
        yield from expr_atoms(expr.child)
    else:
        for c in expr.children:
            yield from expr_atoms(c)


# ---------------------------------------------------------------------------
# Rules and profiles

@dataclass(frozen=True)
class Rule:
    decision: Decision
    filter: FilterExpr | None = None  # None = unconditional

    @property
    def unconditional(self) -> bool:
        return self.filter is None


@dataclass(frozen=True)
class Profile:
    """A named policy: default decision plus per-operation rule lists.

    rules maps operation name -> rules in source order. The default
    operation's single unconditional rule is stored as default_decision
    (None when the source had no default rule; validate_profile flags it).
    """

    name: str
    default_decision: Decision | None
    rules: Mapping[str, tuple[Rule, ...]]

    def operations(self) -> tuple[str, ...]:
        return tuple(self.rules)


@dataclass(frozen=True)
class Diagnostic:
    code: str
    where: str
    message: str

    def __str__(self) -> str:
        return f"[{self.code}] {self.where}: {self.message}"


def _check_expr(expr, op, vocab, out):
    from . import rex  # local import: model stays importable standalone

    if isinstance(expr, Atom):
        try:
            entry = vocab.by_name(expr.key)
        except UnknownFilterKey:
            out.append(Diagnostic("UnknownFilterKey", op, f"filter key {expr.key!r}"))
            return
        kind = entry.kind
        if kind is ValueKind.NUMERIC:
            if not isinstance(expr.value, int) or not 0 <= expr.value <= 0xFFFF:
                out.append(Diagnostic("BadValue", op,
                                      f"{expr.key}: expected 16-bit number, got {expr.value!r}"))
        elif kind is ValueKind.ENUM_NAMED:
            if expr.value not in (entry.named_values or {}):
                out.append(Diagnostic("UnknownFilterValue", op,
                                      f"{expr.key}: {expr.value!r}"))
        elif kind is ValueKind.REGEX_INDEX:
            if expr.form is not ValueForm.REGEX or not isinstance(expr.value, str):
                out.append(Diagnostic("BadValue", op,
                                      f"{expr.key}: expected a regex pattern"))
            else:
                try:
                    rex.parse_regex(expr.value)
                except Exception as exc:  # RegexSyntaxError
                    out.append(Diagnostic("BadRegex", op, f"{expr.key}: {exc}"))
        elif kind is ValueKind.NETWORK_ENDPOINT:
            if not (isinstance(expr.value, tuple) and len(expr.value) == 2):
                out.append(Diagnostic("BadValue", op,
                                      f"{expr.key}: expected (proto, address)"))
        else:  # literal string
            if not isinstance(expr.value, str):
                out.append(Diagnostic("BadValue", op,
                                      f"{expr.key}: expected a string, got {expr.value!r}"))
    elif isinstance(expr, RequireNot):
        _check_expr(expr.child, op, vocab, out)
    else:
        if not expr.children:
            out.append(Diagnostic("EmptyMetafilter", op,
                                  f"{type(expr).__name__} with no children"))
        for c in expr.children:
            _check_expr(c, op, vocab, out)


def validate_profile(profile: Profile, table: OperationTable,
                     vocab: FilterVocabulary) -> list[Diagnostic]:
    """Collect every invariant violation; empty list means compilable."""
    out: list[Diagnostic] = []
    if profile.default_decision is None:
        out.append(Diagnostic("MissingDefault", "default",
                              "profile has no (allow|deny default) rule"))
    for op, rules in profile.rules.items():
        if op == "default":
            out.append(Diagnostic("BadDefaultRule", op,
                                  "default takes a bare decision, nothing else"))
            continue
        if op not in table.entries:
            out.append(Diagnostic("UnknownOperation", op, "not in operation table"))
        reachable = True
        for rule in rules:
            if not reachable:
                out.append(Diagnostic("UnreachableRule", op,
                                      "rule after an unconditional rule"))
                break
            if rule.filter is not None:
                _check_expr(rule.filter, op, vocab, out)
            else:
                reachable = False
    return out
