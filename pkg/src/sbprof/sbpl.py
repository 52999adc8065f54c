"""SBPL frontend: parse policy text into Profile, print Profile back out.

The language is a small s-expression dialect: rules are
(decision operation filter...), filters are (key value) pairs composed with
require-all / require-any / require-not, ";" comments run to end of line.
String escapes are restricted to \\" and \\\\; inside #"..." regex literals
only \\" is special so regex escapes pass through untouched.
"""

from __future__ import annotations

from dataclasses import dataclass

from .errors import SbplSyntaxError, UnsupportedConstruct, UnsupportedVersion
from .model import (
    Atom,
    Decision,
    FilterExpr,
    OperationTable,
    Profile,
    RequireAll,
    RequireAny,
    RequireNot,
    Rule,
    ValueForm,
)

MAX_LINE = 78


# ---------------------------------------------------------------------------
# Reader

@dataclass(frozen=True)
class SAtom:
    text: str
    kind: str  # "symbol" | "string" | "regex" | "int"
    line: int
    column: int


@dataclass(frozen=True)
class SList:
    items: tuple
    line: int
    column: int


class _Reader:
    def __init__(self, text: str):
        self.text = text
        self.pos = 0
        self.line = 1
        self.col = 1

    def _peek(self):
        return self.text[self.pos] if self.pos < len(self.text) else ""

    def _next(self):
        ch = self.text[self.pos]
        self.pos += 1
        if ch == "\n":
            self.line += 1
            self.col = 1
        else:
            self.col += 1
        return ch

    def _skip_blank(self):
        while self.pos < len(self.text):
            ch = self._peek()
            if ch == ";":
                while self.pos < len(self.text) and self._peek() != "\n":
                    self._next()
            elif ch in " \t\r\n":
                self._next()
            else:
                return

    def _error(self, message):
        raise SbplSyntaxError(message, self.line, self.col)

    def _read_string(self, regex_mode):
        line, col = self.line, self.col
        self._next()  # opening quote
        out = []
        while True:
            if self.pos >= len(self.text):
                raise SbplSyntaxError("unterminated string", line, col)
            ch = self._next()
            if ch == '"':
                return "".join(out)
            if ch == "\\":
                if self.pos >= len(self.text):
                    raise SbplSyntaxError("unterminated string", line, col)
                nxt = self._next()
                if nxt == '"':
                    out.append('"')
                elif nxt == "\\" and not regex_mode:
                    out.append("\\")
                else:
                    out.append("\\")
                    out.append(nxt)
            else:
                out.append(ch)

    def read_form(self):
        self._skip_blank()
        if self.pos >= len(self.text):
            return None
        line, col = self.line, self.col
        ch = self._peek()
        if ch == "(":
            self._next()
            items = []
            while True:
                self._skip_blank()
                if self.pos >= len(self.text):
                    raise SbplSyntaxError("unclosed list", line, col)
                if self._peek() == ")":
                    self._next()
                    return SList(tuple(items), line, col)
                items.append(self.read_form())
        if ch == ")":
            self._error("unexpected )")
        if ch == '"':
            return SAtom(self._read_string(regex_mode=False), "string", line, col)
        if ch == "#" and self.pos + 1 < len(self.text) and self.text[self.pos + 1] == '"':
            self._next()
            return SAtom(self._read_string(regex_mode=True), "regex", line, col)
        # bare token: symbol or integer
        out = []
        while self.pos < len(self.text) and self._peek() not in ' \t\r\n();"':
            out.append(self._next())
        token = "".join(out)
        if not token:
            self._error(f"unexpected character {ch!r}")
        try:
            int(token)
        except ValueError:
            return SAtom(token, "symbol", line, col)
        return SAtom(token, "int", line, col)


def read_forms(text: str) -> list:
    reader = _Reader(text)
    forms = []
    while True:
        form = reader.read_form()
        if form is None:
            return forms
        forms.append(form)


# ---------------------------------------------------------------------------
# Forms -> Profile

def _err(form, message):
    raise SbplSyntaxError(message, form.line, form.column)


def _parse_filter(form) -> FilterExpr:
    if not isinstance(form, SList):
        _err(form, "filter must be a list")
    if not form.items:
        _err(form, "empty filter")
    head = form.items[0]
    if not isinstance(head, SAtom) or head.kind != "symbol":
        _err(form, "filter key must be a symbol")
    name = head.text
    if name == "require-not":
        if len(form.items) != 2:
            _err(form, "require-not takes exactly one filter")
        return RequireNot(_parse_filter(form.items[1]))
    if name in ("require-all", "require-any"):
        if len(form.items) < 2:
            _err(form, f"{name} needs at least one filter")
        children = tuple(_parse_filter(f) for f in form.items[1:])
        cls = RequireAll if name == "require-all" else RequireAny
        return cls(children)
    args = form.items[1:]
    if len(args) == 1 and isinstance(args[0], SAtom):
        arg = args[0]
        if arg.kind == "string":
            return Atom(name, arg.text, ValueForm.STRING)
        if arg.kind == "regex":
            return Atom(name, arg.text, ValueForm.REGEX)
        if arg.kind == "int":
            return Atom(name, int(arg.text), ValueForm.NUMBER)
        return Atom(name, arg.text, ValueForm.SYMBOL)
    if (len(args) == 2 and isinstance(args[0], SAtom) and args[0].kind == "symbol"
            and isinstance(args[1], SAtom) and args[1].kind == "string"):
        return Atom(name, (args[0].text, args[1].text), ValueForm.ENDPOINT)
    _err(form, f"cannot read value of filter {name!r}")


def _parse_rule(form, rules, state):
    decision = Decision(form.items[0].text)
    if len(form.items) < 2 or not isinstance(form.items[1], SAtom) \
            or form.items[1].kind != "symbol":
        _err(form, "rule needs an operation name")
    op = form.items[1].text
    filters = [_parse_filter(f) for f in form.items[2:]]
    if op == "default" and not filters and not state["have_default"]:
        state["have_default"] = True
        state["default"] = decision
        return
    if len(filters) == 0:
        rule = Rule(decision, None)
    elif len(filters) == 1:
        rule = Rule(decision, filters[0])
    else:
        # sibling filters are require-any sugar; lower at parse time
        rule = Rule(decision, RequireAny(tuple(filters)))
    rules.setdefault(op, []).append(rule)


def parse_sbpl(text: str, name: str = "") -> Profile:
    """Parse policy text. Syntax errors raise; semantic problems are left
    for validate_profile so the caller can report them all at once."""
    rules: dict[str, list[Rule]] = {}
    state = {"have_default": False, "default": None}
    for form in read_forms(text):
        if not isinstance(form, SList) or not form.items:
            _err(form, "top-level form must be a rule list")
        head = form.items[0]
        if not isinstance(head, SAtom) or head.kind != "symbol":
            _err(form, "expected a rule")
        if head.text == "version":
            if len(form.items) != 2 or not isinstance(form.items[1], SAtom) \
                    or form.items[1].kind != "int":
                _err(form, "version takes one integer")
            if int(form.items[1].text) != 1:
                raise UnsupportedVersion(int(form.items[1].text))
            continue
        if head.text in ("allow", "deny"):
            _parse_rule(form, rules, state)
            continue
        if head.text in ("define", "if", "import", "let", "lambda"):
            raise UnsupportedConstruct(
                f"({head.text} ...) is only valid in the implicit-rules file",
                form.line, form.column)
        _err(form, f"unknown rule head {head.text!r}")
    return Profile(
        name=name,
        default_decision=state["default"],
        rules={op: tuple(rs) for op, rs in rules.items()},
    )


# ---------------------------------------------------------------------------
# Profile -> text

def _escape_string(s: str) -> str:
    return s.replace("\\", "\\\\").replace('"', '\\"')


def _escape_regex_text(s: str) -> str:
    return s.replace('"', '\\"')


def format_value(atom: Atom) -> str:
    if atom.form is ValueForm.STRING:
        return f'"{_escape_string(atom.value)}"'
    if atom.form is ValueForm.REGEX:
        return f'#"{_escape_regex_text(atom.value)}"'
    if atom.form is ValueForm.NUMBER:
        return str(atom.value)
    if atom.form is ValueForm.ENDPOINT:
        proto, addr = atom.value
        return f'{proto} "{_escape_string(addr)}"'
    return str(atom.value)  # symbol


def format_filter(expr: FilterExpr) -> str:
    if isinstance(expr, Atom):
        return f"({expr.key} {format_value(expr)})"
    if isinstance(expr, RequireNot):
        return f"(require-not {format_filter(expr.child)})"
    word = "require-all" if isinstance(expr, RequireAll) else "require-any"
    inner = " ".join(format_filter(c) for c in expr.children)
    return f"({word} {inner})"


def _format_filter_block(expr: FilterExpr, indent: int) -> str:
    """Multi-line rendering for filters that do not fit on one line."""
    pad = " " * indent
    flat = format_filter(expr)
    if len(flat) + indent <= MAX_LINE or isinstance(expr, Atom):
        return pad + flat
    if isinstance(expr, RequireNot):
        return (pad + "(require-not\n"
                + _format_filter_block(expr.child, indent + 4) + ")")
    word = "require-all" if isinstance(expr, RequireAll) else "require-any"
    lines = [pad + f"({word}"]
    for c in expr.children:
        lines.append(_format_filter_block(c, indent + 4))
    return "\n".join(lines) + ")"


def _format_rule(op: str, rule: Rule) -> str:
    head = f"({rule.decision} {op}"
    if rule.filter is None:
        return head + ")"
    flat = f"{head} {format_filter(rule.filter)})"
    if len(flat) <= MAX_LINE:
        return flat
    return head + "\n" + _format_filter_block(rule.filter, 4) + ")"


def print_sbpl(profile: Profile, table: OperationTable | None = None) -> str:
    """Emit the profile: version clause, default rule, then operations in
    table order (insertion order when no table is given)."""
    if profile.default_decision is None:
        raise SbplSyntaxError("profile has no default decision", 0, 0)
    lines = ["(version 1)", f"({profile.default_decision} default)"]
    ops = list(profile.rules)
    if table is not None:
        ops.sort(key=table.index)
    for op in ops:
        for rule in profile.rules[op]:
            lines.append(_format_rule(op, rule))
    return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------
# Implicit-rules file (restricted define/if preamble)

@dataclass(frozen=True)
class ImplicitRule:
    operation: str
    rule: Rule
    condition: tuple | None = None  # parsed guard, None = unconditional


@dataclass(frozen=True)
class ImplicitRuleSet:
    rules: tuple[ImplicitRule, ...]
    default_decision: Decision | None = None

    def as_profile(self, name: str = "implicit") -> Profile:
        grouped: dict[str, list[Rule]] = {}
        for item in self.rules:
            grouped.setdefault(item.operation, []).append(item.rule)
        return Profile(name, self.default_decision,
                       {op: tuple(rs) for op, rs in grouped.items()})


def _parse_condition(form):
    if isinstance(form, SList) and form.items:
        head = form.items[0]
        if isinstance(head, SAtom) and head.kind == "symbol":
            if head.text == "not" and len(form.items) == 2:
                return ("not", _parse_condition(form.items[1]))
            if head.text in ("allowed?", "denied?") and len(form.items) == 2 \
                    and isinstance(form.items[1], SAtom):
                return (head.text, form.items[1].text)
    _err(form, "unsupported condition in implicit-rules file")


def parse_implicit_rules(text: str) -> ImplicitRuleSet:
    """Parse the implicit-rules file, tolerating its define/if preamble.
    Rules guarded by (if ...) keep their condition for the injection helper;
    cleanup treats every rule as a removal candidate either way."""
    collected: list[ImplicitRule] = []
    default = None

    def add_rules(form, condition):
        nonlocal default
        decision = Decision(form.items[0].text)
        op = form.items[1].text
        filters = [_parse_filter(f) for f in form.items[2:]]
        if op == "default" and not filters:
            default = decision
            return
        if len(filters) == 0:
            filt = None
        elif len(filters) == 1:
            filt = filters[0]
        else:
            filt = RequireAny(tuple(filters))
        collected.append(ImplicitRule(op, Rule(decision, filt), condition))

    for form in read_forms(text):
        if not isinstance(form, SList) or not form.items:
            _err(form, "top-level form must be a list")
        head = form.items[0]
        if not isinstance(head, SAtom):
            _err(form, "expected a rule")
        if head.text == "version":
            continue
        if head.text == "define":
            continue  # helper predicates; the conditions below name them directly
        if head.text == "if":
            if len(form.items) < 3:
                _err(form, "if needs a condition and a body")
            condition = _parse_condition(form.items[1])
            for body in form.items[2:]:
                if isinstance(body, SList) and body.items and \
                        isinstance(body.items[0], SAtom) and \
                        body.items[0].text in ("allow", "deny"):
                    add_rules(body, condition)
                else:
                    _err(body, "if body must be rules")
            continue
        if head.text in ("allow", "deny"):
            add_rules(form, None)
            continue
        _err(form, f"unknown form {head.text!r} in implicit-rules file")
    return ImplicitRuleSet(tuple(collected), default)


def condition_holds(condition, profile: Profile) -> bool:
    """Approximate guard evaluation: an operation "can return" a decision if
    the default says so or any of its rules carries that decision."""
    if condition is None:
        return True
    kind = condition[0]
    if kind == "not":
        return not condition_holds(condition[1], profile)
    op = condition[1]
    wanted = Decision.ALLOW if kind == "allowed?" else Decision.DENY
    if profile.default_decision is wanted:
        return True
    return any(r.decision is wanted for r in profile.rules.get(op, ()))
