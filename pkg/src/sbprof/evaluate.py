"""Semantic oracle: decide allow/deny for (operation, context) queries against
either the AST (reference semantics) or a binary blob (graph walk), and check
two verdict sources for equivalence over derived context universes.

An atom matches when its context key is bound and the bound value satisfies
the filter; unbound keys never match, so require-not of an unbound-key atom
always matches.
"""

from __future__ import annotations

import itertools
import random
from dataclasses import dataclass, field

from . import nfa as nfa_mod
from . import rex
from .codec import BinaryProfile, decode_blob
from .errors import (
    CycleDetected,
    InvalidProfile,
    MalformedBlob,
    SandboxError,
    UnknownFilterValue,
)
from .model import (
    Atom,
    Decision,
    FilterVocabulary,
    OperationTable,
    Profile,
    RequireAll,
    RequireAny,
    RequireNot,
    ValueKind,
    expr_atoms,
)


@dataclass(frozen=True)
class QueryContext:
    """Concrete filter bindings for one access-control query."""

    bindings: dict = field(default_factory=dict)

    def get(self, key):
        return self.bindings.get(key)

    def __str__(self):
        if not self.bindings:
            return "{}"
        parts = ", ".join(f"{k}={v!r}" for k, v in sorted(self.bindings.items()))
        return "{" + parts + "}"


class _RegexCache:
    def __init__(self):
        self.by_pattern = {}

    def automaton(self, pattern: str):
        m = self.by_pattern.get(pattern)
        if m is None:
            m = nfa_mod.build_nfa(rex.parse_regex(pattern))
            self.by_pattern[pattern] = m
        return m


def _value_matches(kind: ValueKind, atom_value, bound, rx_cache) -> bool:
    if bound is None:
        return False
    if kind is ValueKind.REGEX_INDEX:
        if not isinstance(bound, str):
            return False
        matcher = atom_value if isinstance(atom_value, nfa_mod.Nfa) \
            else rx_cache.automaton(atom_value)
        return nfa_mod.nfa_match(matcher, bound, full=False)
    return bound == atom_value


def expr_matches(expr, ctx: "QueryContext", vocab: FilterVocabulary,
                 rx_cache: "_RegexCache | None" = None) -> bool:
    """Reference matching semantics for a filter expression."""
    rx = rx_cache or _RegexCache()
    if isinstance(expr, Atom):
        entry = vocab.by_name(expr.key)
        return _value_matches(entry.kind, expr.value, ctx.get(entry.context_key), rx)
    if isinstance(expr, RequireNot):
        return not expr_matches(expr.child, ctx, vocab, rx)
    if isinstance(expr, RequireAll):
        return all(expr_matches(c, ctx, vocab, rx) for c in expr.children)
    if isinstance(expr, RequireAny):
        return any(expr_matches(c, ctx, vocab, rx) for c in expr.children)
    raise TypeError(f"not a filter expression: {expr!r}")


# ---------------------------------------------------------------------------
# AST semantics

class AstEvaluator:
    """First matching rule wins; rule-less operations fall back through the
    table's parent links; nothing matching means the default decision."""

    def __init__(self, profile: Profile, table: OperationTable,
                 vocab: FilterVocabulary, rx_cache: _RegexCache | None = None):
        if profile.default_decision is None:
            raise InvalidProfile([("MissingDefault", "default", "no default rule")])
        self.profile = profile
        self.table = table
        self.vocab = vocab
        self.rx = rx_cache or _RegexCache()
        self._effective = {}

    def _rules(self, op: str):
        cached = self._effective.get(op)
        if cached is None:
            cur = op
            while cur is not None and not self.profile.rules.get(cur):
                cur = self.table.parents.get(cur)
            cached = self.profile.rules.get(cur, ()) if cur else ()
            self._effective[op] = cached
        return cached

    def verdict(self, op_name: str, ctx: QueryContext) -> Decision:
        self.table.index(op_name)  # raises UnknownOperation
        if op_name == "default":
            return self.profile.default_decision
        for rule in self._rules(op_name):
            if rule.filter is None or expr_matches(rule.filter, ctx,
                                                   self.vocab, self.rx):
                return rule.decision
        return self.profile.default_decision


def evaluate_ast(profile: Profile, op_name: str, ctx: QueryContext,
                 table: OperationTable, vocab: FilterVocabulary) -> Decision:
    return AstEvaluator(profile, table, vocab).verdict(op_name, ctx)


# ---------------------------------------------------------------------------
# Graph-walk semantics

class BlobEvaluator:
    def __init__(self, bp, table: OperationTable, vocab: FilterVocabulary):
        if isinstance(bp, (bytes, bytearray)):
            bp = decode_blob(bytes(bp))
        if bp.op_count != len(table):
            raise MalformedBlob(0, f"blob has {bp.op_count} operations, "
                                   f"table has {len(table)}")
        self.bp = bp
        self.table = table
        self.vocab = vocab
        self._prepared = {}

    def _prepare(self, unit: int):
        node = self._prepared.get(unit)
        if node is not None:
            return node
        rec = self.bp.record_at(unit)
        if rec.is_terminal:
            node = (None, rec.decision, None, None)
        else:
            entry = self.vocab.by_code(rec.filter_key)
            kind = entry.kind
            if kind is ValueKind.NUMERIC:
                value = rec.filter_value
            elif kind is ValueKind.ENUM_NAMED:
                value = entry.value_name(rec.filter_value)
                if value is None:
                    raise UnknownFilterValue(entry.name, rec.filter_value)
            elif kind is ValueKind.REGEX_INDEX:
                value = nfa_mod.deserialize_nfa(self.bp.regex_blob_at(rec.filter_value))
            elif kind is ValueKind.NETWORK_ENDPOINT:
                text = self.bp.string_at(rec.filter_value)
                proto, _, addr = text.partition(" ")
                value = (proto, addr)
            else:
                value = self.bp.string_at(rec.filter_value)
            node = (entry, value, rec.match_offset, rec.unmatch_offset)
        self._prepared[unit] = node
        return node

    def verdict(self, op_name: str, ctx: QueryContext,
                trace: list | None = None) -> Decision:
        idx = self.table.index(op_name)
        unit = self.bp.op_pointers[idx]
        rx = _RegexCache()
        for _ in range(len(self.bp.records) + 1):
            entry, value, match_off, unmatch_off = self._prepare(unit)
            if entry is None:
                if trace is not None:
                    trace.append((unit, str(value), None))
                return value
            bound = ctx.get(entry.context_key)
            matched = _value_matches(entry.kind, value, bound, rx)
            if trace is not None:
                trace.append((unit, entry.name, matched))
            unit = match_off if matched else unmatch_off
        raise CycleDetected(idx, unit)


def evaluate(bp, op_name: str, ctx: QueryContext, table: OperationTable,
             vocab: FilterVocabulary) -> Decision:
    return BlobEvaluator(bp, table, vocab).verdict(op_name, ctx)


def as_source(thing, table, vocab):
    """Wrap a Profile, BinaryProfile or raw blob as a verdict source."""
    if isinstance(thing, Profile):
        return AstEvaluator(thing, table, vocab)
    if isinstance(thing, (bytes, bytearray, BinaryProfile)):
        return BlobEvaluator(thing, table, vocab)
    if hasattr(thing, "verdict"):
        return thing
    raise TypeError(f"not a verdict source: {thing!r}")


# ---------------------------------------------------------------------------
# Context universes

def _accepted_samples(matcher, alphabet, limit=3, max_len=12):
    """Shortest strings the automaton accepts in search mode; deterministic.
    The start state is re-injected at every position, mirroring nfa_match."""
    eps, cons = nfa_mod._edge_maps(matcher)
    letters = sorted(set(alphabet))
    far = max_len + 1
    out = []
    s0 = frozenset(nfa_mod._closure({matcher.start}, eps, 0, far))
    frontier = {s0: ""}
    seen = {s0}
    for depth in range(max_len + 1):
        for states, prefix in sorted(frontier.items(), key=lambda kv: kv[1]):
            if nfa_mod._closure(set(states), eps, depth, depth) & matcher.accepts:
                out.append(prefix)
                if len(out) >= limit:
                    return out
        if depth == max_len:
            break
        nxt = {}
        for states, prefix in frontier.items():
            for ch in letters:
                stepped = nfa_mod._step(states, cons, ch)
                stepped.add(matcher.start)
                key = frozenset(nfa_mod._closure(stepped, eps, depth + 1, far))
                if key not in seen:
                    seen.add(key)
                    nxt[key] = prefix + ch
        frontier = nxt
        if not frontier:
            break
    return out


def _pattern_alphabet(matcher):
    chars = set("/.")
    for _src, label, _dst in matcher.transitions:
        if isinstance(label, rex.Char):
            chars.add(chr(label.byte))
        elif isinstance(label, rex.CharClass):
            for lo, hi in label.ranges:
                for b in range(lo, min(hi, lo + 2) + 1):
                    chars.add(chr(b))
            if label.negated:
                chars.add("a")
    return chars


def collect_atoms(source, table, vocab):
    """(context_key, kind, value) triples appearing in a verdict source."""
    out = []
    src = as_source(source, table, vocab)
    if isinstance(src, AstEvaluator):
        for rules in src.profile.rules.values():
            for rule in rules:
                if rule.filter is None:
                    continue
                for atom in expr_atoms(rule.filter):
                    entry = vocab.by_name(atom.key)
                    out.append((entry.context_key, entry.kind, atom.value))
    else:
        for rec in src.bp.records:
            if rec.is_terminal:
                continue
            entry, value, _m, _u = src._prepare(rec.unit)
            out.append((entry.context_key, entry.kind, value))
    return out


def build_universe(atom_triples, vocab, rx_cache=None):
    """Candidate binding values per context key, plus one never-matching
    sentinel per key so the 'bound but unmatched' path is always exercised."""
    rx = rx_cache or _RegexCache()
    values: dict[str, list] = {}

    def add(key, v):
        values.setdefault(key, [])
        if v not in values[key]:
            values[key].append(v)

    regexes: dict[str, list] = {}
    for ctx_key, kind, value in atom_triples:
        if kind is ValueKind.REGEX_INDEX:
            matcher = value if isinstance(value, nfa_mod.Nfa) else rx.automaton(value)
            regexes.setdefault(ctx_key, []).append(matcher)
            for s in _accepted_samples(matcher, _pattern_alphabet(matcher)):
                add(ctx_key, s)
        else:
            add(ctx_key, value)

    for ctx_key in sorted(set(values) | set(regexes)):
        vals = values.setdefault(ctx_key, [])
        if any(isinstance(v, int) for v in vals):
            sentinel = next(n for n in range(0x10000)
                            if n not in vals)
        elif any(isinstance(v, tuple) for v in vals):
            sentinel = ("none", "none:0")
            if sentinel in vals:
                sentinel = ("none", "none:1")
        else:
            sentinel = None
            for i in range(1000):
                cand = f"~miss{i}~"
                if cand in vals:
                    continue
                if any(nfa_mod.nfa_match(m, cand, full=False)
                       for m in regexes.get(ctx_key, ())):
                    continue
                sentinel = cand
                break
        if sentinel is not None:
            vals.append(sentinel)
    return values


def exhaustive_contexts(universe: dict, cap: int = 8192):
    """Every combination of unbound/candidate per key, capped for safety."""
    keys = sorted(universe)
    pools = [[None] + universe[k] for k in keys]
    total = 1
    for pool in pools:
        total *= len(pool)
    if total > cap:
        raise SandboxError(f"context universe too large for exhaustive mode "
                           f"({total} > {cap})")
    for combo in itertools.product(*pools):
        bindings = {k: v for k, v in zip(keys, combo) if v is not None}
        yield QueryContext(bindings)


def sampled_contexts(universe: dict, seed: int, count: int):
    rng = random.Random(seed)
    keys = sorted(universe)
    for _ in range(count):
        bindings = {}
        for k in keys:
            if rng.random() < 0.25:
                continue
            bindings[k] = rng.choice(universe[k])
        yield QueryContext(bindings)


def _source_op_keys(src, op: str, vocab) -> set:
    """Context keys the operation's verdict can depend on."""
    if isinstance(src, AstEvaluator):
        keys = set()
        for rule in src._rules(op):
            if rule.filter is not None:
                for atom in expr_atoms(rule.filter):
                    keys.add(vocab.by_name(atom.key).context_key)
        return keys
    keys = set()
    seen = set()
    stack = [src.bp.op_pointers[src.table.index(op)]]
    while stack:
        unit = stack.pop()
        if unit in seen:
            continue
        seen.add(unit)
        if src.bp.record_at(unit).is_terminal:
            continue
        entry, _value, match_off, unmatch_off = src._prepare(unit)
        keys.add(entry.context_key)
        stack.append(match_off)
        stack.append(unmatch_off)
    return keys


@dataclass
class EquivalenceReport:
    equivalent: bool
    checked: int
    mode: str
    witness: tuple | None = None  # (op, ctx, verdict_a, verdict_b)

    def __str__(self):
        if self.equivalent:
            return f"equivalent ({self.checked} checks, {self.mode})"
        op, ctx, va, vb = self.witness
        return (f"DISAGREEMENT after {self.checked} checks ({self.mode}): "
                f"op={op} ctx={ctx}: {va} vs {vb}")


def check_equivalence(a, b, table: OperationTable, vocab: FilterVocabulary,
                      ops=None, mode: str = "exhaustive", seed: int = 0,
                      samples: int = 1000) -> EquivalenceReport:
    """Compare two verdict sources. Exhaustive mode enumerates, per
    operation, every combination of that operation's own atom values;
    sampled mode draws seeded random contexts from the combined universe."""
    src_a = as_source(a, table, vocab)
    src_b = as_source(b, table, vocab)
    if ops is None:
        ops = list(table.entries)
    rx = _RegexCache()
    atoms = collect_atoms(src_a, table, vocab) + collect_atoms(src_b, table, vocab)
    universe = build_universe(atoms, vocab, rx)
    checked = 0

    def compare(op, ctx):
        nonlocal checked
        checked += 1
        va = src_a.verdict(op, ctx)
        vb = src_b.verdict(op, ctx)
        if va is not vb:
            return EquivalenceReport(False, checked, mode, (op, ctx, va, vb))
        return None

    if mode == "exhaustive":
        # only the keys an operation's own (inherited) atoms test can change
        # its verdict; everything else stays at the empty context
        for op in ops:
            keys = _source_op_keys(src_a, op, vocab) | _source_op_keys(src_b, op, vocab)
            sub = {k: universe[k] for k in sorted(keys) if k in universe}
            for ctx in exhaustive_contexts(sub):
                bad = compare(op, ctx)
                if bad:
                    return bad
    else:
        interesting = [op for op in ops if op != "default"]
        rng = random.Random(seed)
        ctxs = list(sampled_contexts(universe, seed, samples))
        for ctx in ctxs:
            op = rng.choice(interesting)
            bad = compare(op, ctx)
            if bad:
                return bad
        for op in ops:
            bad = compare(op, QueryContext({}))
            if bad:
                return bad
    return EquivalenceReport(True, checked, mode)
