"""Regex abstract syntax: parser, printer, direct matcher and simplifier.

Supported syntax: literals, ".", "*", "+", "?", "|", "(...)", "[...]" and
"[^...]" with ranges, "^", "$", and backslash escapes for metacharacters.
No capture groups, backreferences, lazy quantifiers or class sugar; patterns
are byte-oriented. The matcher here works straight off the AST and serves as
the independent oracle for the automaton pipeline.
"""

from __future__ import annotations

from dataclasses import dataclass

from .errors import RegexSyntaxError

_META = set(".*+?|()[]^$\\")


@dataclass(frozen=True)
class Empty:
    pass


@dataclass(frozen=True)
class Char:
    byte: int


@dataclass(frozen=True)
class AnyChar:
    pass


@dataclass(frozen=True)
class CharClass:
    negated: bool
    ranges: tuple  # ((lo, hi), ...) sorted, merged, lo <= hi

    def matches(self, ch: str) -> bool:
        o = ord(ch)
        hit = any(lo <= o <= hi for lo, hi in self.ranges)
        return hit != self.negated


@dataclass(frozen=True)
class AnchorStart:
    pass


@dataclass(frozen=True)
class AnchorEnd:
    pass


@dataclass(frozen=True)
class Concat:
    parts: tuple


@dataclass(frozen=True)
class Alternate:
    options: tuple


@dataclass(frozen=True)
class Star:
    inner: "RegexAst"


@dataclass(frozen=True)
class Plus:
    inner: "RegexAst"


@dataclass(frozen=True)
class Optional:
    inner: "RegexAst"


RegexAst = object  # union of the classes above

# A negated class covering every byte can never match: the canonical
# empty-language pattern (state removal of a dead automaton produces it).
NEVER_MATCH = CharClass(True, ((0x00, 0xFF),))


def _merge_ranges(ranges):
    ranges = sorted(ranges)
    out = [ranges[0]]
    for lo, hi in ranges[1:]:
        plo, phi = out[-1]
        if lo <= phi + 1:
            out[-1] = (plo, max(phi, hi))
        else:
            out.append((lo, hi))
    return tuple(out)


# ---------------------------------------------------------------------------
# Parser

class _Parser:
    def __init__(self, pattern: str):
        self.pattern = pattern
        self.pos = 0

    def _fail(self, message):
        raise RegexSyntaxError(message, self.pos)

    def _peek(self):
        return self.pattern[self.pos] if self.pos < len(self.pattern) else ""

    def _byte(self, ch):
        if ord(ch) > 0xFF:
            self._fail(f"non-byte character {ch!r}")
        return ord(ch)

    def parse(self):
        ast = self._alternate()
        if self.pos != len(self.pattern):
            self._fail(f"unexpected {self._peek()!r}")
        return ast

    def _alternate(self):
        options = [self._concat()]
        while self._peek() == "|":
            self.pos += 1
            options.append(self._concat())
        if len(options) == 1:
            return options[0]
        return Alternate(tuple(options))

    def _concat(self):
        parts = []
        while self._peek() not in ("", "|", ")"):
            parts.append(self._repeat())
        if not parts:
            return Empty()
        if len(parts) == 1:
            return parts[0]
        return Concat(tuple(parts))

    def _repeat(self):
        ast = self._atom()
        while self._peek() in ("*", "+", "?"):
            op = self.pattern[self.pos]
            self.pos += 1
            if op == "*":
                ast = Star(ast)
            elif op == "+":
                ast = Plus(ast)
            else:
                ast = Optional(ast)
        return ast

    def _atom(self):
        ch = self._peek()
        if ch == "":
            self._fail("pattern ended where a term was expected")
        if ch == "(":
            open_pos = self.pos
            self.pos += 1
            inner = self._alternate()
            if self._peek() != ")":
                self.pos = open_pos
                self._fail("unbalanced (")
            self.pos += 1
            return inner
        if ch == "[":
            return self._char_class()
        if ch == ".":
            self.pos += 1
            return AnyChar()
        if ch == "^":
            self.pos += 1
            return AnchorStart()
        if ch == "$":
            self.pos += 1
            return AnchorEnd()
        if ch == "\\":
            self.pos += 1
            if self.pos >= len(self.pattern):
                self._fail("dangling escape")
            lit = self.pattern[self.pos]
            self.pos += 1
            return Char(self._byte(lit))
        if ch in ("*", "+", "?", ")", "]"):
            self._fail(f"misplaced {ch!r}")
        self.pos += 1
        return Char(self._byte(ch))

    def _class_char(self):
        ch = self._peek()
        if ch in ("", "]"):
            self._fail("unterminated character class")
        self.pos += 1
        if ch == "\\":
            if self.pos >= len(self.pattern):
                self._fail("dangling escape")
            ch = self.pattern[self.pos]
            self.pos += 1
        return self._byte(ch)

    def _char_class(self):
        self.pos += 1  # "["
        negated = False
        if self._peek() == "^":
            negated = True
            self.pos += 1
        ranges = []
        while self._peek() != "]":
            lo = self._class_char()
            if (self._peek() == "-" and self.pos + 1 < len(self.pattern)
                    and self.pattern[self.pos + 1] != "]"):
                self.pos += 1
                hi = self._class_char()
                if hi < lo:
                    self._fail("inverted class range")
                ranges.append((lo, hi))
            else:
                ranges.append((lo, lo))
        self.pos += 1  # "]"
        if not ranges:
            self._fail("empty character class")
        return CharClass(negated, _merge_ranges(ranges))


def parse_regex(pattern: str) -> RegexAst:
    if pattern == "":
        raise RegexSyntaxError("empty pattern", 0)
    return _Parser(pattern).parse()


# ---------------------------------------------------------------------------
# Printer

_PREC_ALT, _PREC_CAT, _PREC_POST = 0, 1, 2


def _class_char_text(o: int) -> str:
    ch = chr(o)
    if ch in "]\\^-":
        return "\\" + ch
    return ch


def _render(ast, prec) -> str:
    if isinstance(ast, Empty):
        return "()"
    if isinstance(ast, Char):
        ch = chr(ast.byte)
        return "\\" + ch if ch in _META else ch
    if isinstance(ast, AnyChar):
        return "."
    if isinstance(ast, AnchorStart):
        return "^"
    if isinstance(ast, AnchorEnd):
        return "$"
    if isinstance(ast, CharClass):
        body = []
        for lo, hi in ast.ranges:
            if lo == hi:
                body.append(_class_char_text(lo))
            elif hi == lo + 1:
                body.append(_class_char_text(lo) + _class_char_text(hi))
            else:
                body.append(f"{_class_char_text(lo)}-{_class_char_text(hi)}")
        return "[" + ("^" if ast.negated else "") + "".join(body) + "]"
    if isinstance(ast, (Star, Plus, Optional)):
        mark = {"Star": "*", "Plus": "+", "Optional": "?"}[type(ast).__name__]
        return _render(ast.inner, _PREC_POST + 1) + mark
    if isinstance(ast, Concat):
        text = "".join(_render(p, _PREC_CAT) for p in ast.parts)
        return f"({text})" if prec > _PREC_CAT else text
    if isinstance(ast, Alternate):
        text = "|".join(_render(o, _PREC_CAT) for o in ast.options)
        return f"({text})" if prec > _PREC_ALT else text
    raise TypeError(f"not a regex node: {ast!r}")


def print_regex(ast: RegexAst) -> str:
    return _render(ast, _PREC_ALT)


# ---------------------------------------------------------------------------
# Direct AST matcher (oracle)

def _match_ends(ast, s, start, memo):
    key = (id(ast), start)
    cached = memo.get(key)
    if cached is not None:
        return cached
    memo[key] = frozenset()  # cycle guard; real value stored below
    if isinstance(ast, Empty):
        out = frozenset([start])
    elif isinstance(ast, Char):
        ok = start < len(s) and ord(s[start]) == ast.byte
        out = frozenset([start + 1]) if ok else frozenset()
    elif isinstance(ast, AnyChar):
        out = frozenset([start + 1]) if start < len(s) else frozenset()
    elif isinstance(ast, CharClass):
        ok = start < len(s) and ast.matches(s[start])
        out = frozenset([start + 1]) if ok else frozenset()
    elif isinstance(ast, AnchorStart):
        out = frozenset([start]) if start == 0 else frozenset()
    elif isinstance(ast, AnchorEnd):
        out = frozenset([start]) if start == len(s) else frozenset()
    elif isinstance(ast, Concat):
        cur = {start}
        for part in ast.parts:
            nxt = set()
            for p in cur:
                nxt |= _match_ends(part, s, p, memo)
            cur = nxt
            if not cur:
                break
        out = frozenset(cur)
    elif isinstance(ast, Alternate):
        acc = set()
        for opt in ast.options:
            acc |= _match_ends(opt, s, start, memo)
        out = frozenset(acc)
    elif isinstance(ast, Star):
        seen = {start}
        frontier = {start}
        while frontier:
            nxt = set()
            for p in frontier:
                nxt |= _match_ends(ast.inner, s, p, memo)
            frontier = nxt - seen
            seen |= nxt
        out = frozenset(seen)
    elif isinstance(ast, Plus):
        out = frozenset()
        first = set()
        for p in _match_ends(ast.inner, s, start, memo):
            first.add(p)
        if first:
            star = Star(ast.inner)
            acc = set()
            for p in first:
                acc |= _match_ends(star, s, p, memo)
            out = frozenset(acc)
    elif isinstance(ast, Optional):
        out = frozenset([start]) | _match_ends(ast.inner, s, start, memo)
    else:
        raise TypeError(f"not a regex node: {ast!r}")
    memo[key] = out
    return out


def ast_match(ast: RegexAst, s: str, full: bool = True) -> bool:
    """Match straight off the AST. full=True requires the whole string;
    full=False is substring search (the filter-matching mode)."""
    memo = {}
    if full:
        return len(s) in _match_ends(ast, s, 0, memo)
    for i in range(len(s) + 1):
        if _match_ends(ast, s, i, memo):
            return True
    return False


# ---------------------------------------------------------------------------
# Simplifier (used by automaton reversal to recover readable patterns)

def cat(parts) -> RegexAst:
    flat = []
    for p in parts:
        if isinstance(p, Concat):
            flat.extend(p.parts)
        elif not isinstance(p, Empty):
            flat.append(p)
    if not flat:
        return Empty()
    if len(flat) == 1:
        return flat[0]
    return Concat(tuple(flat))


def alt(options) -> RegexAst:
    flat = []
    for o in options:
        if isinstance(o, Alternate):
            for sub in o.options:
                if sub not in flat:
                    flat.append(sub)
        elif o not in flat:
            flat.append(o)
    if len(flat) == 1:
        return flat[0]
    return Alternate(tuple(flat))


def _as_list(ast):
    return list(ast.parts) if isinstance(ast, Concat) else [ast]


def _simplify_cat(parts):
    out = []
    for p in parts:
        if not out:
            out.append(p)
            continue
        prev = out[-1]
        if isinstance(p, Star) and p.inner == prev:
            out[-1] = Plus(p.inner)                       # x x* -> x+
        elif isinstance(prev, Star) and prev.inner == p:
            out[-1] = Plus(p)                             # x* x -> x+
        elif isinstance(p, Star) and prev == p:
            pass                                          # x* x* -> x*
        elif isinstance(p, Star) and isinstance(prev, Plus) and prev.inner == p.inner:
            pass                                          # x+ x* -> x+
        elif isinstance(prev, Star) and isinstance(p, Plus) and prev.inner == p.inner:
            out[-1] = p                                   # x* x+ -> x+
        else:
            out.append(p)
    return out


def _replace_pair(options, i, j, new):
    out = []
    for n, o in enumerate(options):
        if n == i:
            out.append(new)
        elif n != j:
            out.append(o)
    return out


def _factor_once(options):
    """Factor one shared prefix or suffix out of a pair of alternatives."""
    for i in range(len(options)):
        for j in range(i + 1, len(options)):
            a, b = _as_list(options[i]), _as_list(options[j])
            k = 0
            while k < len(a) and k < len(b) and a[k] == b[k]:
                k += 1
            if k:
                rest = alt([cat(a[k:]), cat(b[k:])])
                return _replace_pair(options, i, j, cat(a[:k] + [rest]))
            k = 0
            while k < len(a) and k < len(b) and a[-1 - k] == b[-1 - k]:
                k += 1
            if k:
                rest = alt([cat(a[:len(a) - k]), cat(b[:len(b) - k])])
                return _replace_pair(options, i, j, cat([rest] + a[len(a) - k:]))
    return None


def _simp(ast):
    if isinstance(ast, Concat):
        parts = _simplify_cat([_simp(p) for p in ast.parts])
        return cat(parts)
    if isinstance(ast, Alternate):
        options = []
        has_empty = False
        for o in ast.options:
            o = _simp(o)
            if isinstance(o, Empty):
                has_empty = True
            elif isinstance(o, Alternate):
                for sub in o.options:
                    if sub not in options:
                        options.append(sub)
            elif o not in options:
                options.append(o)
        # x | x+ -> x+ ; x | x* -> x* ; x? | x -> x?
        drop = set()
        for o in options:
            for other in options:
                if isinstance(other, (Plus, Star, Optional)) and other.inner == o:
                    drop.add(o)
        options = [o for o in options if o not in drop]
        factored = _factor_once(options) if len(options) > 1 else None
        if factored is not None:
            options = [_simp(o) for o in factored]
        if not options:
            return Empty()
        body = options[0] if len(options) == 1 else Alternate(tuple(options))
        if has_empty:
            return _simp_opt(body)
        return body
    if isinstance(ast, Star):
        return _simp_star(_simp(ast.inner))
    if isinstance(ast, Plus):
        return _simp_plus(_simp(ast.inner))
    if isinstance(ast, Optional):
        return _simp_opt(_simp(ast.inner))
    return ast


def _simp_star(inner):
    if isinstance(inner, Empty):
        return Empty()
    if isinstance(inner, (Star, Plus, Optional)):
        return Star(inner.inner)
    return Star(inner)


def _simp_plus(inner):
    if isinstance(inner, Empty):
        return Empty()
    if isinstance(inner, (Star, Optional)):
        return Star(inner.inner)
    if isinstance(inner, Plus):
        return inner
    return Plus(inner)


def _simp_opt(inner):
    if isinstance(inner, Empty):
        return Empty()
    if isinstance(inner, (Star, Optional)):
        return _simp_star(inner.inner)
    if isinstance(inner, Plus):
        return Star(inner.inner)
    return Optional(inner)


def simplify(ast: RegexAst) -> RegexAst:
    cur = ast
    for _ in range(30):
        nxt = _simp(cur)
        if nxt == cur:
            return cur
        cur = nxt
    return cur
