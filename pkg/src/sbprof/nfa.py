"""Nondeterministic automata: construction, matching, the serialized wire
format, and reversal back to regex text via state removal.

Wire format (documented bit-exactly in docs/format.md): a u16-le node count
followed by one record per node. Records are 1-byte tag + 2-byte le operand,
except classes which carry a range-count byte and (lo, hi) byte pairs.
Jump records fork execution: control continues at the next node and at the
jump target; backward jumps must target a lower node index, forward jumps a
higher one. A class with zero ranges never matches and serves as a dead end
after an unconditional jump.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

from .errors import MalformedRegexBlob, TooManyStates
from . import rex
from .rex import (
    AnchorEnd,
    AnchorStart,
    AnyChar,
    Char,
    CharClass,
    Concat,
    Empty,
    Alternate,
    Optional,
    Plus,
    Star,
)

TAG_ACCEPT = 0x01
TAG_CHAR = 0x02
TAG_ANY = 0x03
TAG_LINE_START = 0x04
TAG_LINE_END = 0x05
TAG_JUMP_FWD = 0x06
TAG_JUMP_BCK = 0x07
TAG_CLASS = 0x08
TAG_CLASS_NEG = 0x09

MAX_NODES = 0xFFFF
REVERSAL_STATE_CAP = 4096  # guards state removal against absurd foreign blobs

_DEAD_CLASS = CharClass(False, ())  # zero ranges: matches nothing


@dataclass(frozen=True)
class Nfa:
    """Automaton with labelled edges. Labels are regex leaves: Empty is an
    epsilon edge, anchors are position predicates, the rest consume a char."""

    n_states: int
    transitions: tuple  # ((src, label, dst), ...)
    start: int
    accepts: frozenset

    def __post_init__(self):
        assert 0 <= self.start < self.n_states
        for src, _label, dst in self.transitions:
            assert 0 <= src < self.n_states and 0 <= dst < self.n_states


def _label_matches(label, ch: str) -> bool:
    if isinstance(label, Char):
        return ord(ch) == label.byte
    if isinstance(label, AnyChar):
        return True
    if isinstance(label, CharClass):
        return label.matches(ch)
    return False


def _is_consuming(label) -> bool:
    return isinstance(label, (Char, AnyChar, CharClass))


# ---------------------------------------------------------------------------
# Thompson-style construction

def build_nfa(ast) -> Nfa:
    transitions = []
    counter = [0]

    def new():
        counter[0] += 1
        return counter[0] - 1

    def edge(src, label, dst):
        transitions.append((src, label, dst))

    def build(a):
        if isinstance(a, Empty):
            s = new()
            return s, s
        if isinstance(a, (Char, AnyChar, CharClass, AnchorStart, AnchorEnd)):
            s, t = new(), new()
            edge(s, a, t)
            return s, t
        if isinstance(a, Concat):
            first_in, out = build(a.parts[0])
            for part in a.parts[1:]:
                nxt_in, nxt_out = build(part)
                edge(out, Empty(), nxt_in)
                out = nxt_out
            return first_in, out
        if isinstance(a, Alternate):
            s, t = new(), new()
            for opt in a.options:
                i, o = build(opt)
                edge(s, Empty(), i)
                edge(o, Empty(), t)
            return s, t
        if isinstance(a, Star):
            hub = new()
            i, o = build(a.inner)
            edge(hub, Empty(), i)
            edge(o, Empty(), hub)
            return hub, hub
        if isinstance(a, Plus):
            i, o = build(a.inner)
            edge(o, Empty(), i)
            return i, o
        if isinstance(a, Optional):
            s = new()
            i, o = build(a.inner)
            edge(s, Empty(), i)
            edge(s, Empty(), o)
            return s, o
        raise TypeError(f"not a regex node: {a!r}")

    start, out = build(ast)
    return Nfa(counter[0], tuple(transitions), start, frozenset([out]))


# ---------------------------------------------------------------------------
# Simulation

def _edge_maps(nfa: Nfa):
    eps = {}
    cons = {}
    for src, label, dst in nfa.transitions:
        if _is_consuming(label):
            cons.setdefault(src, []).append((label, dst))
        else:
            eps.setdefault(src, []).append((label, dst))
    return eps, cons


def _closure(states, eps, pos, length):
    """Expand epsilon and position-predicate edges at string position pos."""
    stack = list(states)
    seen = set(states)
    while stack:
        s = stack.pop()
        for label, dst in eps.get(s, ()):
            if isinstance(label, AnchorStart) and pos != 0:
                continue
            if isinstance(label, AnchorEnd) and pos != length:
                continue
            if dst not in seen:
                seen.add(dst)
                stack.append(dst)
    return seen


def _step(states, cons, ch):
    out = set()
    for s in states:
        for label, dst in cons.get(s, ()):
            if _label_matches(label, ch):
                out.add(dst)
    return out


def nfa_match(nfa: Nfa, s: str, full: bool = False) -> bool:
    """full=True: s itself must be in the language. full=False is the filter
    semantics: some substring matches, with ^/$ pinned to the string ends."""
    eps, cons = _edge_maps(nfa)
    n = len(s)
    if full:
        cur = _closure({nfa.start}, eps, 0, n)
        for i, ch in enumerate(s):
            if not cur:
                return False
            cur = _closure(_step(cur, cons, ch), eps, i + 1, n)
        return bool(cur & nfa.accepts)
    cur = set()
    for pos in range(n + 1):
        cur.add(nfa.start)
        cur = _closure(cur, eps, pos, n)
        if cur & nfa.accepts:
            return True
        if pos < n:
            cur = _step(cur, cons, s[pos])
    return False


def enumerate_language(nfa: Nfa, alphabet, max_len: int) -> set:
    """Exact set of accepted strings up to max_len, full-match mode."""
    if max_len > 10:
        raise ValueError("enumerate_language caps at length 10")
    eps, cons = _edge_maps(nfa)
    letters = sorted(set(alphabet))
    found = set()

    def accepts_here(states, length):
        # a trailing AnchorEnd may still fire when we stop consuming here
        return bool(_closure(states, eps, length, length) & nfa.accepts)

    def walk(states, prefix):
        if accepts_here(states, len(prefix)):
            found.add(prefix)
        if len(prefix) == max_len:
            return
        # mid-string closure: use an unreachable end position so $ stays shut
        mid = _closure(states, eps, len(prefix), max_len + 1)
        for ch in letters:
            nxt = _step(mid, cons, ch)
            if nxt:
                walk(nxt, prefix + ch)

    walk({nfa.start}, "")
    return found


def bounded_language_equal(a: Nfa, b: Nfa, alphabet, max_len: int):
    """Compare full-match languages up to max_len. Returns (True, None) or
    (False, witness) where witness is a shortest distinguishing string."""
    eps_a, cons_a = _edge_maps(a)
    eps_b, cons_b = _edge_maps(b)
    letters = sorted(set(alphabet))
    far = max_len + 1  # position that is never the end while extending

    def accept(states, nfa_, eps, length):
        return bool(_closure(states, eps, length, length) & nfa_.accepts)

    start = (frozenset(_closure({a.start}, eps_a, 0, far)),
             frozenset(_closure({b.start}, eps_b, 0, far)))
    frontier = {start: ""}
    visited = {start}
    for depth in range(max_len + 1):
        for (sa, sb), witness in sorted(frontier.items(), key=lambda kv: kv[1]):
            if accept(sa, a, eps_a, depth) != accept(sb, b, eps_b, depth):
                return False, witness
        if depth == max_len:
            break
        nxt = {}
        for (sa, sb), witness in frontier.items():
            for ch in letters:
                na = frozenset(_closure(_step(sa, cons_a, ch), eps_a, depth + 1, far))
                nb = frozenset(_closure(_step(sb, cons_b, ch), eps_b, depth + 1, far))
                if not na and not nb:
                    continue
                key = (na, nb)
                if key not in visited:
                    visited.add(key)
                    nxt[key] = witness + ch
        frontier = nxt
        if not frontier:
            break
    return True, None


# ---------------------------------------------------------------------------
# Serialization

def _label_sort_key(label):
    if isinstance(label, Char):
        return (0, label.byte, 0)
    if isinstance(label, AnyChar):
        return (1, 0, 0)
    if isinstance(label, CharClass):
        return (2, int(label.negated), label.ranges)
    if isinstance(label, AnchorStart):
        return (3, 0, 0)
    if isinstance(label, AnchorEnd):
        return (4, 0, 0)
    return (5, 0, 0)  # epsilon last


def serialize_nfa(nfa: Nfa) -> bytes:
    """Flatten the reachable part of the automaton into the wire format."""
    out_edges = {}
    for src, label, dst in nfa.transitions:
        if isinstance(label, Empty) and src == dst:
            continue  # epsilon self-loop is a no-op
        out_edges.setdefault(src, []).append((label, dst))
    for src in out_edges:
        out_edges[src].sort(key=lambda e: (_label_sort_key(e[0]), e[1]))

    recs = []       # dicts: kind=accept|dead|consume|jump
    placed = {}     # state -> record index of its block
    pending = {}    # state -> [record indexes awaiting the block index]

    def emit_jump(target_state):
        idx = len(recs)
        recs.append({"kind": "jump", "target": None})
        if target_state in placed:
            recs[idx]["target"] = placed[target_state]
        else:
            pending.setdefault(target_state, []).append(idx)
        recs.append({"kind": "dead"})

    def place(state):
        # Depth-first: a block's final item may fall straight through into
        # its target's block, so tail pushes always run before anything else.
        work = [("block", state)]
        while work:
            op, arg = work.pop()
            if op == "block":
                if arg in placed:
                    continue
                placed[arg] = len(recs)
                for idx in pending.pop(arg, ()):
                    recs[idx]["target"] = placed[arg]
                items = []
                if arg in nfa.accepts:
                    items.append(("accept", None, None))
                for label, dst in out_edges.get(arg, ()):
                    items.append(("edge", label, dst))
                if not items:
                    recs.append({"kind": "dead"})
                    continue
                work.append(("last", items[-1]))
                # every earlier item gets a fork record and emits in full now
                for kind, label, dst in items[:-1]:
                    branch_idx = len(recs)
                    recs.append({"kind": "jump", "target": None})
                    if kind == "accept":
                        recs.append({"kind": "accept"})
                    else:
                        if not isinstance(label, Empty):
                            recs.append({"kind": "consume", "label": label})
                        emit_jump(dst)
                    recs[branch_idx]["target"] = len(recs)
            else:  # the block's final item
                kind, label, dst = arg
                if kind == "accept":
                    recs.append({"kind": "accept"})
                    continue
                if not isinstance(label, Empty):
                    recs.append({"kind": "consume", "label": label})
                if dst not in placed:
                    work.append(("block", dst))  # fall through, no jump
                else:
                    emit_jump(dst)

    place(nfa.start)
    while pending:
        nxt = min(pending)
        place(nxt)
    if len(recs) > MAX_NODES:
        raise TooManyStates(f"{len(recs)} serialized nodes")

    out = [struct.pack("<H", len(recs))]
    for i, rec in enumerate(recs):
        kind = rec["kind"]
        if kind == "accept":
            out.append(struct.pack("<BH", TAG_ACCEPT, 0))
        elif kind == "dead":
            out.append(struct.pack("<BB", TAG_CLASS, 0))
        elif kind == "jump":
            target = rec["target"]
            tag = TAG_JUMP_FWD if target > i else TAG_JUMP_BCK
            out.append(struct.pack("<BH", tag, target))
        else:
            label = rec["label"]
            if isinstance(label, Char):
                out.append(struct.pack("<BH", TAG_CHAR, label.byte))
            elif isinstance(label, AnyChar):
                out.append(struct.pack("<BH", TAG_ANY, 0))
            elif isinstance(label, AnchorStart):
                out.append(struct.pack("<BH", TAG_LINE_START, 0))
            elif isinstance(label, AnchorEnd):
                out.append(struct.pack("<BH", TAG_LINE_END, 0))
            else:
                tag = TAG_CLASS_NEG if label.negated else TAG_CLASS
                out.append(struct.pack("<BB", tag, len(label.ranges)))
                for lo, hi in label.ranges:
                    out.append(struct.pack("<BB", lo, hi))
    return b"".join(out)


def deserialize_nfa(data: bytes) -> Nfa:
    """Decode the wire format; node count comes from the header. Trailing
    bytes beyond the last record are ignored (pool items are packed)."""
    if len(data) < 2:
        raise MalformedRegexBlob(0, "truncated header")
    (count,) = struct.unpack_from("<H", data, 0)
    if count == 0:
        raise MalformedRegexBlob(0, "zero nodes")
    pos = 2
    transitions = []
    accepts = set()

    def need(n, what):
        if pos + n > len(data):
            raise MalformedRegexBlob(pos, f"truncated {what}")

    def flows_next(i, what):
        if i + 1 >= count:
            raise MalformedRegexBlob(pos, f"{what} at last node flows past the end")

    for i in range(count):
        need(1, "record")
        tag = data[pos]
        rec_at = pos
        pos += 1
        if tag == TAG_ACCEPT:
            need(2, "record")
            pos += 2
            accepts.add(i)
        elif tag in (TAG_CHAR, TAG_ANY, TAG_LINE_START, TAG_LINE_END):
            need(2, "record")
            (operand,) = struct.unpack_from("<H", data, pos)
            pos += 2
            if tag == TAG_CHAR:
                if operand > 0xFF:
                    raise MalformedRegexBlob(rec_at, "char operand out of range")
                label = Char(operand)
            elif tag == TAG_ANY:
                label = AnyChar()
            elif tag == TAG_LINE_START:
                label = AnchorStart()
            else:
                label = AnchorEnd()
            flows_next(i, "matchable node")
            transitions.append((i, label, i + 1))
        elif tag in (TAG_JUMP_FWD, TAG_JUMP_BCK):
            need(2, "record")
            (target,) = struct.unpack_from("<H", data, pos)
            pos += 2
            if target >= count:
                raise MalformedRegexBlob(rec_at, "jump target out of range")
            if tag == TAG_JUMP_FWD and target <= i:
                raise MalformedRegexBlob(rec_at, "forward jump going backwards")
            if tag == TAG_JUMP_BCK and target >= i:
                raise MalformedRegexBlob(rec_at, "backward jump going forwards")
            flows_next(i, "jump")
            transitions.append((i, Empty(), target))
            transitions.append((i, Empty(), i + 1))
        elif tag in (TAG_CLASS, TAG_CLASS_NEG):
            need(1, "class header")
            n_ranges = data[pos]
            pos += 1
            need(2 * n_ranges, "class ranges")
            ranges = []
            for _ in range(n_ranges):
                lo, hi = data[pos], data[pos + 1]
                pos += 2
                if lo > hi:
                    raise MalformedRegexBlob(rec_at, "inverted class range")
                ranges.append((lo, hi))
            label = CharClass(tag == TAG_CLASS_NEG, tuple(ranges))
            if not n_ranges and tag == TAG_CLASS:
                continue  # dead node, no outgoing edge
            flows_next(i, "matchable node")
            transitions.append((i, label, i + 1))
        else:
            raise MalformedRegexBlob(rec_at, f"unknown tag 0x{tag:02x}")
    if not accepts:
        raise MalformedRegexBlob(0, "no accepting node")
    return Nfa(count, tuple(transitions), 0, frozenset(accepts))


def serialized_length(data: bytes) -> int:
    """Byte length of the record stream starting at data[0] (header included)."""
    nfa = deserialize_nfa(data)  # bounds-checked walk
    pos = 2
    for _ in range(nfa.n_states):
        tag = data[pos]
        if tag in (TAG_CLASS, TAG_CLASS_NEG):
            pos += 2 + 2 * data[pos + 1]
        else:
            pos += 3
    return pos


# ---------------------------------------------------------------------------
# Reversal: state removal over a generalized automaton

def reverse_with_stats(nfa: Nfa):
    """Remove every original state from the augmented automaton, gluing
    regex fragments onto the surviving edges. Returns (ast, steps)."""
    if nfa.n_states > REVERSAL_STATE_CAP:
        raise TooManyStates(
            f"{nfa.n_states} states exceeds the reversal cap {REVERSAL_STATE_CAP}")
    src, snk = nfa.n_states, nfa.n_states + 1
    edges = {}

    def add(u, v, ast):
        if (u, v) in edges:
            edges[(u, v)] = rex.alt([edges[(u, v)], ast])
        else:
            edges[(u, v)] = ast

    add(src, nfa.start, Empty())
    for acc in sorted(nfa.accepts):
        add(acc, snk, Empty())
    for u, label, v in nfa.transitions:
        add(u, v, label)

    steps = 0
    for q in range(nfa.n_states):
        steps += 1
        loop = edges.pop((q, q), None)
        ins = [(u, a) for (u, v), a in edges.items() if v == q]
        outs = [(v, a) for (u, v), a in edges.items() if u == q]
        for u, _ in ins:
            del edges[(u, q)]
        for v, _ in outs:
            del edges[(q, v)]
        if loop is not None:
            loop = Star(loop)
        for u, a_in in ins:
            for v, a_out in outs:
                parts = [a_in, loop, a_out] if loop is not None else [a_in, a_out]
                add(u, v, rex.cat(parts))
    final = edges.get((src, snk))
    if final is None:
        return rex.NEVER_MATCH, steps
    return rex.simplify(final), steps


def nfa_to_regex(nfa: Nfa):
    """Language-equivalent regex AST for the automaton."""
    ast, _ = reverse_with_stats(nfa)
    return ast
