"""Reverse binary profiles to policy text: per-operation graph construction,
require-not normalization, require-any/require-all aggregation by node
removal, implicit-rule cleanup, and the full pipeline back to SBPL.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass

from . import nfa as nfa_mod
from . import rex
from .codec import BinaryProfile, decode_blob
from .errors import (
    CycleDetected,
    DecompileError,
    IrreducibleGraph,
    MalformedBlob,
    SandboxError,
    UnknownFilterValue,
)
from .evaluate import check_equivalence
from .model import (
    Atom,
    Decision,
    FilterVocabulary,
    OperationTable,
    Profile,
    RequireAll,
    RequireAny,
    RequireNot,
    Rule,
    ValueForm,
    ValueKind,
    canonicalize,
)
from .sbpl import ImplicitRuleSet, condition_holds, print_sbpl

# Successors are either a node id (int) or a terminal Decision.
ALLOW = Decision.ALLOW
DENY = Decision.DENY


@dataclass
class GraphNode:
    expr: object           # FilterExpr
    match: object          # int | Decision
    unmatch: object        # int | Decision


@dataclass
class OpGraph:
    nodes: dict            # id -> GraphNode
    entry: object          # int | Decision
    default: Decision | None = None  # set once normalized


def _resolve_atom(bp: BinaryProfile, rec, vocab: FilterVocabulary,
                  regex_text_cache: dict) -> Atom:
    entry = vocab.by_code(rec.filter_key)
    kind = entry.kind
    if kind is ValueKind.NUMERIC:
        return Atom(entry.name, rec.filter_value, ValueForm.NUMBER)
    if kind is ValueKind.ENUM_NAMED:
        name = entry.value_name(rec.filter_value)
        if name is None:
            raise UnknownFilterValue(entry.name, rec.filter_value)
        return Atom(entry.name, name, ValueForm.SYMBOL)
    if kind is ValueKind.REGEX_INDEX:
        text = regex_text_cache.get(rec.filter_value)
        if text is None:
            automaton = nfa_mod.deserialize_nfa(bp.regex_blob_at(rec.filter_value))
            text = rex.print_regex(nfa_mod.nfa_to_regex(automaton))
            regex_text_cache[rec.filter_value] = text
        return Atom(entry.name, text, ValueForm.REGEX)
    if kind is ValueKind.NETWORK_ENDPOINT:
        raw = bp.string_at(rec.filter_value)
        proto, _, addr = raw.partition(" ")
        return Atom(entry.name, (proto, addr), ValueForm.ENDPOINT)
    return Atom(entry.name, bp.string_at(rec.filter_value), ValueForm.STRING)


def build_graph(bp: BinaryProfile, op_index: int, vocab: FilterVocabulary,
                regex_text_cache: dict | None = None) -> OpGraph:
    """Reachable graph for one operation, atoms resolved through the
    vocabulary and regex values reversed to pattern text."""
    if regex_text_cache is None:
        regex_text_cache = {}
    if not 0 <= op_index < bp.op_count:
        raise MalformedBlob(0, f"operation index {op_index} out of range")
    entry_unit = bp.op_pointers[op_index]

    ids = {}
    order = []
    stack = [entry_unit]
    while stack:
        unit = stack.pop()
        rec = bp.record_at(unit)
        if rec.is_terminal or unit in ids:
            continue
        ids[unit] = len(order)
        order.append(unit)
        stack.append(rec.unmatch_offset)
        stack.append(rec.match_offset)

    # cycle check: iterative DFS with a grey set
    state = {}
    dfs = [(entry_unit, False)]
    while dfs:
        unit, done = dfs.pop()
        rec = bp.record_at(unit)
        if rec.is_terminal:
            continue
        if done:
            state[unit] = 2
            continue
        if state.get(unit) == 1:
            raise CycleDetected(op_index, unit)
        if state.get(unit) == 2:
            continue
        state[unit] = 1
        dfs.append((unit, True))
        for nxt in (rec.match_offset, rec.unmatch_offset):
            nxt_state = state.get(nxt)
            if nxt_state == 1:
                if not bp.record_at(nxt).is_terminal:
                    raise CycleDetected(op_index, nxt)
            elif nxt_state is None:
                dfs.append((nxt, False))

    def succ(unit):
        rec = bp.record_at(unit)
        return rec.decision if rec.is_terminal else ids[unit]

    nodes = {}
    for unit in order:
        rec = bp.record_at(unit)
        nodes[ids[unit]] = GraphNode(
            expr=_resolve_atom(bp, rec, vocab, regex_text_cache),
            match=succ(rec.match_offset),
            unmatch=succ(rec.unmatch_offset))
    return OpGraph(nodes=nodes, entry=succ(entry_unit))


# ---------------------------------------------------------------------------
# Normalization (require-not recovery)

def _negated(expr):
    if isinstance(expr, RequireNot):
        return expr.child
    return RequireNot(expr)


def _splice_constant_nodes(g: OpGraph):
    """A node whose match and unmatch agree never influences the verdict;
    route around it (foreign blobs only, the encoder never emits one)."""
    changed = True
    while changed:
        changed = False
        for nid, node in list(g.nodes.items()):
            if node.match == node.unmatch:
                target = node.match
                for other in g.nodes.values():
                    if other.match == nid:
                        other.match = target
                    if other.unmatch == nid:
                        other.unmatch = target
                if g.entry == nid:
                    g.entry = target
                del g.nodes[nid]
                changed = True
                break


def normalize_graph(g: OpGraph, default: Decision) -> OpGraph:
    """Negate-and-swap until match edges can only reach the success terminal
    and unmatch edges only the failure terminal (orientation given by the
    default decision). Verdicts are preserved; idempotent."""
    success = default.negate()
    fail = default
    out = OpGraph(nodes={nid: GraphNode(n.expr, n.match, n.unmatch)
                         for nid, n in g.nodes.items()},
                  entry=g.entry, default=default)
    _splice_constant_nodes(out)
    for node in out.nodes.values():
        if node.match == fail or node.unmatch == success:
            node.expr = _negated(node.expr)
            node.match, node.unmatch = node.unmatch, node.match
    return out


def check_match_graph(g: OpGraph) -> None:
    """Machine check of the normalized-graph invariant."""
    assert g.default is not None, "graph not normalized"
    success = g.default.negate()
    fail = g.default
    for nid, node in g.nodes.items():
        if node.match == fail:
            raise AssertionError(f"node {nid}: match edge reaches {fail}")
        if node.unmatch == success:
            raise AssertionError(f"node {nid}: unmatch edge reaches {success}")


# ---------------------------------------------------------------------------
# Aggregation (require-any / require-all recovery by node removal)

def _any_of(a, b):
    left = list(a.children) if isinstance(a, RequireAny) else [a]
    right = list(b.children) if isinstance(b, RequireAny) else [b]
    return RequireAny(tuple(left + right))


def _all_of(a, b):
    left = list(a.children) if isinstance(a, RequireAll) else [a]
    right = list(b.children) if isinstance(b, RequireAll) else [b]
    return RequireAll(tuple(left + right))


def _dump_graph(g: OpGraph) -> str:
    from .sbpl import format_filter

    lines = [f"entry: {g.entry}"]
    for nid in sorted(g.nodes):
        node = g.nodes[nid]
        lines.append(f"  {nid}: {format_filter(node.expr)} "
                     f"match->{node.match} unmatch->{node.unmatch}")
    return "\n".join(lines)


def aggregate(g: OpGraph):
    """Collapse a normalized graph to one filter expression by node removal:
    unmatch chains with a shared match target fold into require-any, then a
    node whose match successor has the same failure path folds into
    require-all. Returns None for an unconditionally-successful entry."""
    if g.default is None:
        raise IrreducibleGraph("aggregate needs a normalized graph")
    success = g.default.negate()
    fail = g.default
    if isinstance(g.entry, Decision):
        if g.entry == success:
            return None
        raise IrreducibleGraph("entry is the failure terminal; nothing to emit")

    reachable = set()
    stack = [g.entry]
    while stack:
        cur = stack.pop()
        if isinstance(cur, Decision) or cur in reachable:
            continue
        reachable.add(cur)
        stack.append(g.nodes[cur].match)
        stack.append(g.nodes[cur].unmatch)
    nodes = {nid: GraphNode(n.expr, n.match, n.unmatch)
             for nid, n in g.nodes.items() if nid in reachable}
    entry = g.entry
    preds: dict[int, set] = {nid: set() for nid in nodes}
    for nid, node in nodes.items():
        for succ in (node.match, node.unmatch):
            if not isinstance(succ, Decision):
                preds[succ].add(nid)

    next_id = max(nodes) + 1 if nodes else 0

    def refs(nid):
        return len(preds[nid]) + (1 if entry == nid else 0)

    def retarget(parent, old, new):
        node = nodes[parent]
        if node.match == old:
            node.match = new
        if node.unmatch == old:
            node.unmatch = new

    def clone_for(parent, target):
        nonlocal next_id
        src = nodes[target]
        cid = next_id
        next_id += 1
        nodes[cid] = GraphNode(src.expr, src.match, src.unmatch)
        preds[cid] = {parent}
        preds[target].discard(parent)
        retarget(parent, target, cid)
        for succ in (src.match, src.unmatch):
            if not isinstance(succ, Decision):
                preds[succ].add(cid)
        return cid

    def absorb(n, m):
        """Drop m after merging it into n; n inherits nothing else."""
        node_m = nodes[m]
        for succ in (node_m.match, node_m.unmatch):
            if not isinstance(succ, Decision):
                preds[succ].discard(m)
                if succ in (nodes[n].match, nodes[n].unmatch):
                    preds[succ].add(n)
        del nodes[m]
        del preds[m]

    queue = deque(sorted(nodes))
    queued = set(queue)

    def enqueue(nid):
        if nid in nodes and nid not in queued:
            queue.append(nid)
            queued.add(nid)

    steps = 0
    limit = 60 * (len(nodes) + 4)
    while queue:
        steps += 1
        if steps > limit:
            raise IrreducibleGraph("aggregation did not converge", _dump_graph(g))
        nid = queue.popleft()
        queued.discard(nid)
        if nid not in nodes:
            continue
        node = nodes[nid]
        merged = False
        # require-any: alternative chained on the unmatch edge, same match target
        m = node.unmatch
        if not isinstance(m, Decision) and nodes[m].match == node.match:
            if refs(m) > 1:
                m = clone_for(nid, m)
            node.expr = _any_of(node.expr, nodes[m].expr)
            node.unmatch = nodes[m].unmatch
            absorb(nid, m)
            merged = True
        if not merged:
            # require-all: child on the match edge, same failure continuation
            m = node.match
            if not isinstance(m, Decision) and nodes[m].unmatch == node.unmatch:
                if refs(m) > 1:
                    m = clone_for(nid, m)
                node.expr = _all_of(node.expr, nodes[m].expr)
                node.match = nodes[m].match
                absorb(nid, m)
                merged = True
        if not merged:
            # negated nesting leaves a node whose branches diverge; once both
            # successors are fully reduced, expand f ? M : U into
            # (f and M) or (not f and U)
            m, u = node.match, node.unmatch
            if (not isinstance(m, Decision) and not isinstance(u, Decision)
                    and nodes[m].match == success and nodes[m].unmatch == fail
                    and nodes[u].match == success and nodes[u].unmatch == fail):
                if refs(m) > 1:
                    m = clone_for(nid, m)
                if refs(u) > 1:
                    u = clone_for(nid, u)
                node.expr = _any_of(_all_of(node.expr, nodes[m].expr),
                                    _all_of(_negated(node.expr), nodes[u].expr))
                node.match = success
                node.unmatch = fail
                absorb(nid, m)
                absorb(nid, u)
                merged = True
        if merged and node.match == node.unmatch:
            # merges can collapse a node into a constant; route around it
            target = node.match
            for pid in sorted(preds.get(nid, ())):
                retarget(pid, nid, target)
                if not isinstance(target, Decision):
                    preds[target].add(pid)
                enqueue(pid)
            if entry == nid:
                entry = target
            if not isinstance(target, Decision):
                preds[target].discard(nid)
            del nodes[nid]
            del preds[nid]
            continue
        if merged:
            enqueue(nid)
            for p in sorted(preds.get(nid, ())):
                enqueue(p)

    if isinstance(entry, Decision):
        if entry == success:
            return None
        raise IrreducibleGraph("entry collapsed to the failure terminal")
    if len(nodes) == 1 and entry in nodes:
        node = nodes[entry]
        if node.match == success and node.unmatch == fail:
            return node.expr
    raise IrreducibleGraph(
        f"residual graph with {len(nodes)} nodes cannot be reduced",
        _dump_graph(OpGraph(nodes=nodes, entry=entry, default=g.default)))


# ---------------------------------------------------------------------------
# Rule emission

def _emit_op_rules(expr, default: Decision, vocab) -> tuple:
    """Turn the aggregated expression into SBPL rules. Top-level negated
    conjuncts become leading exception rules with the default's decision,
    reproducing the deny-then-allow source shape; top-level disjunctions
    split into one rule per alternative."""
    success = default.negate()
    if expr is None:
        return (Rule(success, None),)
    expr = canonicalize(expr, vocab)
    exceptions = []
    body = expr
    if isinstance(expr, RequireAll):
        negs = [c for c in expr.children if isinstance(c, RequireNot)]
        rest = [c for c in expr.children if not isinstance(c, RequireNot)]
        if negs and rest:
            exceptions = [Rule(default, n.child) for n in negs]
            body = rest[0] if len(rest) == 1 else RequireAll(tuple(rest))
    if isinstance(body, RequireAny):
        positives = [Rule(success, c) for c in body.children]
    else:
        positives = [Rule(success, body)]
    return tuple(exceptions + positives)


def _parents_first(table: OperationTable):
    seen = set()
    out = []

    def visit(op):
        if op in seen:
            return
        seen.add(op)
        parent = table.parents.get(op)
        if parent is not None:
            visit(parent)
        out.append(op)

    for op in table.entries:
        visit(op)
    return out


def emit_rules(bp: BinaryProfile, table: OperationTable,
               vocab: FilterVocabulary, permissive: bool = False):
    """Decompile every operation. Returns (profile, errors); errors is empty
    unless permissive is set, otherwise the first failure raises."""
    if bp.op_count != len(table):
        raise MalformedBlob(0, f"blob has {bp.op_count} operations, "
                               f"table has {len(table)}")
    default = bp.default_decision()
    regex_text_cache: dict = {}
    rules = {}
    emitted_units = {}
    errors = []
    for op in _parents_first(table):
        idx = table.index(op)
        if idx == 0:
            continue
        unit = bp.op_pointers[idx]
        # an operation sharing its entry with an emitted ancestor is the
        # compiled image of plain fallback; the parent link reproduces it
        ancestor = table.parents.get(op)
        while ancestor is not None and ancestor not in emitted_units:
            ancestor = table.parents.get(ancestor)
        if ancestor is not None and emitted_units[ancestor] == unit:
            continue
        try:
            graph = build_graph(bp, idx, vocab, regex_text_cache)
            normalized = normalize_graph(graph, default)
            check_match_graph(normalized)
            # constant-node splicing can collapse the whole graph to a terminal
            if isinstance(normalized.entry, Decision):
                if normalized.entry == default:
                    if ancestor is not None:
                        # an emitted ancestor would otherwise capture this
                        # operation through the parent link; pin it back
                        rules[op] = (Rule(default, None),)
                        emitted_units[op] = unit
                    continue
                expr = None
            else:
                expr = aggregate(normalized)
            rules[op] = _emit_op_rules(expr, default, vocab)
            emitted_units[op] = unit
        except SandboxError as exc:
            wrapped = DecompileError(op, exc)
            if not permissive:
                raise wrapped from exc
            errors.append(wrapped)
    ordered = {op: rules[op] for op in table.entries if op in rules}
    profile = Profile(name=bp.name or "", default_decision=default, rules=ordered)
    return profile, errors


# ---------------------------------------------------------------------------
# Cleanup

def inject_implicit(profile: Profile, implicit: ImplicitRuleSet) -> Profile:
    """Prepend the standard-policy rules a compiler would add, honoring the
    conditional guards against the given profile."""
    rules = {op: list(rs) for op, rs in profile.rules.items()}
    for item in implicit.rules:
        if not condition_holds(item.condition, profile):
            continue
        rules.setdefault(item.operation, [])
        rules[item.operation].insert(0, item.rule)
    return Profile(profile.name, profile.default_decision,
                   {op: tuple(rs) for op, rs in rules.items()})


def _rule_runs(rules, vocab):
    """Canonical view of a rule list: adjacent same-decision conditional
    rules merge into one disjunct list; an unconditional rule ends the list
    (later rules are unreachable). Runs are (decision, children | None)."""
    runs = []
    for rule in rules:
        if rule.filter is None:
            runs.append([rule.decision, None])
            break
        expr = canonicalize(rule.filter, vocab)
        children = list(expr.children) if isinstance(expr, RequireAny) else [expr]
        if runs and runs[-1][1] is not None and runs[-1][0] is rule.decision:
            for c in children:
                if c not in runs[-1][1]:
                    runs[-1][1].append(c)
        else:
            runs.append([rule.decision, children])
    return runs


def _runs_to_rules(runs):
    out = []
    for decision, children in runs:
        if children is None:
            out.append(Rule(decision, None))
        else:
            out.extend(Rule(decision, c) for c in children)
    return tuple(out)


def cleanup(profile: Profile, implicit, table: OperationTable,
            vocab: FilterVocabulary) -> Profile:
    """Strip rules matching the implicit standard policy, plus operations
    whose rules cannot change the default verdict. Every removal is verified
    against the evaluator: the cleaned profile with implicits re-injected
    must agree with the input everywhere we can observe."""
    if isinstance(implicit, Profile):
        items = [(op, rule) for op, rs in implicit.rules.items() for rule in rs]
        injectable = None  # plain profile: re-inject unconditionally
    else:
        items = [(it.operation, it.rule) for it in implicit.rules]
        injectable = implicit

    current = {op: _rule_runs(rs, vocab) for op, rs in profile.rules.items()}

    def as_profile(runs_dict):
        rules = {op: _runs_to_rules(runs) for op, runs in runs_dict.items() if runs}
        return Profile(profile.name, profile.default_decision,
                       {op: rs for op, rs in rules.items() if rs})

    def with_implicits(candidate):
        if injectable is not None:
            return inject_implicit(candidate, injectable)
        merged_rules = {op: list(rs) for op, rs in candidate.rules.items()}
        for op, rule in items:
            merged_rules.setdefault(op, [])
            merged_rules[op].insert(0, rule)
        return Profile(candidate.name, candidate.default_decision,
                       {op: tuple(rs) for op, rs in merged_rules.items()})

    def verdict_safe(candidate_runs):
        # a removal is safe when the compiled result (profile plus injected
        # standard policy) keeps every verdict it had before the removal
        before = with_implicits(as_profile(current))
        after = with_implicits(as_profile(candidate_runs))
        return check_equivalence(before, after, table, vocab).equivalent

    def copy_runs(runs_dict):
        return {op: [[d, None if cs is None else list(cs)] for d, cs in runs]
                for op, runs in runs_dict.items()}

    # strip implicit rules: a rule matches a run of the same decision that
    # contains all its disjuncts; removal is applied only if verdict-safe
    for op, implicit_rule in items:
        runs = current.get(op)
        if not runs:
            continue
        if implicit_rule.filter is None:
            want = None
        else:
            expr = canonicalize(implicit_rule.filter, vocab)
            want = list(expr.children) if isinstance(expr, RequireAny) else [expr]
        for ridx, (decision, children) in enumerate(runs):
            if decision is not implicit_rule.decision:
                continue
            trial = copy_runs(current)
            if want is None:
                if children is not None:
                    continue
                del trial[op][ridx]
            else:
                if children is None or any(w not in children for w in want):
                    continue
                trial[op][ridx][1] = [c for c in children if c not in want]
                if not trial[op][ridx][1]:
                    del trial[op][ridx]
            if verdict_safe(trial):
                current = trial
                break

    # drop operations that only restate the default decision
    for op in sorted(current):
        runs = current[op]
        if runs and all(d is profile.default_decision for d, _c in runs):
            trial = copy_runs(current)
            trial[op] = []
            if verdict_safe(trial):
                current = trial

    return as_profile(current)


# ---------------------------------------------------------------------------
# Full pipeline

def decompile_view(view: BinaryProfile, table: OperationTable,
                   vocab: FilterVocabulary, implicit=None,
                   permissive: bool = False, name: str = "") -> str:
    profile, errors = emit_rules(view, table, vocab, permissive=permissive)
    if name:
        profile = Profile(name, profile.default_decision, profile.rules)
    if implicit is not None:
        profile = cleanup(profile, implicit, table, vocab)
    text = print_sbpl(profile, table)
    if errors:
        text += "".join(f"; unreversed {e.operation}: {e.cause}\n" for e in errors)
    return text


def decompile(blob: bytes, table: OperationTable, vocab: FilterVocabulary,
              implicit: ImplicitRuleSet | None = None,
              permissive: bool = False, name: str = "") -> str:
    """decode -> per-operation reversal -> cleanup -> SBPL text. The output
    reparses and recompiles; with permissive set, operations that cannot be
    reversed become comment lines instead of failing the run."""
    return decompile_view(decode_blob(blob), table, vocab, implicit,
                          permissive=permissive, name=name)


# ---------------------------------------------------------------------------
# Graph dump

def dot_graph(bp: BinaryProfile, op_index: int, vocab: FilterVocabulary,
              op_name: str = "") -> tuple:
    """Graphviz text for one operation's decoded graph: match edges solid,
    unmatch edges dashed, terminals with thick borders. Returns
    (text, node_count, edge_count)."""
    from .sbpl import format_filter

    graph = build_graph(bp, op_index, vocab)
    lines = [f'digraph "{op_name or f"op{op_index}"}" {{']
    lines.append('    node [shape=box];')
    terminals = set()
    edges = 0

    def succ_name(succ):
        if isinstance(succ, Decision):
            terminals.add(succ)
            return f"t_{succ.value}"
        return f"n{succ}"

    if isinstance(graph.entry, Decision):
        entry_name = succ_name(graph.entry)
    else:
        entry_name = f"n{graph.entry}"
    for nid in sorted(graph.nodes):
        node = graph.nodes[nid]
        label = format_filter(node.expr).replace('"', '\\"')
        lines.append(f'    n{nid} [label="{label}"];')
    body = []
    for nid in sorted(graph.nodes):
        node = graph.nodes[nid]
        body.append(f'    n{nid} -> {succ_name(node.match)};')
        body.append(f'    n{nid} -> {succ_name(node.unmatch)} [style=dashed];')
        edges += 2
    for term in sorted(terminals, key=lambda d: d.value):
        lines.append(f'    t_{term.value} [label="{term.value}" penwidth=2];')
    lines.append(f'    entry [shape=point];')
    lines.append(f'    entry -> {entry_name};')
    lines.extend(body)
    lines.append("}")
    return "\n".join(lines) + "\n", len(graph.nodes), edges
