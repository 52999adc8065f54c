"""Bit-exact binary profile codec.

All integers are little-endian; every offset is a u16 counted in 8-byte
units from blob start. Layouts (see docs/format.md for the full walkthrough):

separated   u16 format_id=0x0000 | u16 pool_count | u16 op_count
            u16 op_pointer[op_count]
            u16 pool_pointer[pool_count]
            zero pad to 8 | node records | pool items (8-aligned)

bundled     u16 format_id=0x8000 | u16 pool_count | u16 op_count | u16 count
            per profile: u16 name_offset, u16 op_pointer[op_count]
            u16 pool_pointer[pool_count]
            zero pad to 8 | shared node records | shared pool items

A node record is 8 bytes: u8 type, u8 filter key, u16 value, u16 match
offset, u16 unmatch offset. Type 0x01 marks a terminal; terminals reuse the
key byte as the decision (0x00 deny, 0x01 allow) and zero the rest. Pool
items are u16-length-prefixed UTF-8 strings or serialized regex programs.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

from . import nfa, rex
from .errors import (
    CapacityExceeded,
    DanglingOffset,
    InvalidProfile,
    MalformedBlob,
    NoBundleFound,
    SandboxError,
    UnknownFilterValue,
    WrongFormatId,
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
    validate_profile,
)

FORMAT_SEPARATED = 0x0000
FORMAT_BUNDLED = 0x8000

NODE_NON_TERMINAL = 0x00
NODE_TERMINAL = 0x01
TERMINAL_DENY = 0x00
TERMINAL_ALLOW = 0x01

_RECORD = struct.Struct("<BBHHH")


def _align8(n: int) -> int:
    return (n + 7) & ~7


def _pack_string(text: str) -> bytes:
    data = text.encode("utf-8")
    if len(data) > 0xFFFF:
        raise CapacityExceeded("pool string longer than 65535 bytes")
    return struct.pack("<H", len(data)) + data


def _read_pool_string(raw: bytes, off: int) -> str:
    if off + 2 > len(raw):
        raise MalformedBlob(off, "string header past end")
    (length,) = struct.unpack_from("<H", raw, off)
    if off + 2 + length > len(raw):
        raise MalformedBlob(off, "string body past end")
    try:
        return raw[off + 2:off + 2 + length].decode("utf-8")
    except UnicodeDecodeError:
        raise MalformedBlob(off, "string is not valid UTF-8") from None


# ---------------------------------------------------------------------------
# Decoded view

@dataclass(frozen=True)
class NodeRecord:
    unit: int
    node_type: int
    filter_key: int
    filter_value: int
    match_offset: int
    unmatch_offset: int

    @property
    def is_terminal(self) -> bool:
        return self.node_type == NODE_TERMINAL

    @property
    def decision(self) -> Decision:
        return Decision.ALLOW if self.filter_key == TERMINAL_ALLOW else Decision.DENY


@dataclass(frozen=True)
class BinaryProfile:
    """Decoded sections over one profile (possibly a view into a bundle)."""

    format_id: int
    op_count: int
    pool_count: int
    op_pointers: tuple
    records: tuple
    node_base: int          # unit offset of records[0]
    pool_pointers: tuple
    raw: bytes
    pool_start: int         # byte offset where pool items begin
    name: str = ""

    def record_at(self, unit: int) -> NodeRecord:
        idx = unit - self.node_base
        if not 0 <= idx < len(self.records):
            raise DanglingOffset(unit)
        return self.records[idx]

    def _pool_offset(self, index: int) -> int:
        if not 0 <= index < self.pool_count:
            raise MalformedBlob(0, f"pool index {index} out of range")
        return self.pool_pointers[index] * 8

    def string_at(self, index: int) -> str:
        return _read_pool_string(self.raw, self._pool_offset(index))

    def regex_blob_at(self, index: int) -> bytes:
        return self.raw[self._pool_offset(index):]

    def default_decision(self) -> Decision:
        entry = self.record_at(self.op_pointers[0])
        if not entry.is_terminal:
            raise MalformedBlob(self.op_pointers[0] * 8,
                                "default operation does not point at a terminal")
        return entry.decision

    def to_bytes(self) -> bytes:
        """Re-encode the decoded view; byte-identical for decoded blobs."""
        if self.format_id != FORMAT_SEPARATED:
            raise WrongFormatId(self.format_id, FORMAT_SEPARATED)
        out = [struct.pack("<HHH", self.format_id, self.pool_count, self.op_count)]
        out.append(struct.pack(f"<{self.op_count}H", *self.op_pointers))
        if self.pool_count:
            out.append(struct.pack(f"<{self.pool_count}H", *self.pool_pointers))
        head = 6 + 2 * self.op_count + 2 * self.pool_count
        out.append(b"\x00" * (_align8(head) - head))
        for rec in self.records:
            out.append(_RECORD.pack(rec.node_type, rec.filter_key, rec.filter_value,
                                    rec.match_offset, rec.unmatch_offset))
        out.append(self.raw[self.pool_start:])
        return b"".join(out)


def _parse_records(raw, node_start, pool_start):
    base = node_start // 8
    count = (pool_start - node_start) // 8
    records = []
    allow = deny = 0
    for i in range(count):
        off = node_start + 8 * i
        node_type, key, value, match, unmatch = _RECORD.unpack_from(raw, off)
        if node_type == NODE_TERMINAL:
            if key not in (TERMINAL_DENY, TERMINAL_ALLOW):
                raise MalformedBlob(off, f"terminal with decision byte 0x{key:02x}")
            if value or match or unmatch:
                raise MalformedBlob(off, "terminal with nonzero payload")
            if key == TERMINAL_ALLOW:
                allow += 1
            else:
                deny += 1
        elif node_type == NODE_NON_TERMINAL:
            for target in (match, unmatch):
                if not base <= target < base + count:
                    raise MalformedBlob(off, f"edge offset 0x{target:04x} out of range")
        else:
            raise MalformedBlob(off, f"unknown node type 0x{node_type:02x}")
        records.append(NodeRecord(base + i, node_type, key, value, match, unmatch))
    if allow != 1 or deny != 1:
        raise MalformedBlob(node_start,
                            f"expected one allow and one deny terminal, got {allow}/{deny}")
    return tuple(records)


def decode_blob(blob: bytes) -> BinaryProfile:
    """Structural decode of a separated profile with full bounds checking."""
    if len(blob) < 6:
        raise MalformedBlob(0, "truncated header")
    format_id, pool_count, op_count = struct.unpack_from("<HHH", blob, 0)
    if format_id != FORMAT_SEPARATED:
        raise WrongFormatId(format_id, FORMAT_SEPARATED)
    head = 6 + 2 * op_count + 2 * pool_count
    if len(blob) < head:
        raise MalformedBlob(0, "pointer tables past end of blob")
    op_pointers = struct.unpack_from(f"<{op_count}H", blob, 6)
    pool_pointers = struct.unpack_from(f"<{pool_count}H", blob, 6 + 2 * op_count)
    node_start = _align8(head)
    pool_start = len(blob)
    for p in pool_pointers:
        off = p * 8
        if off >= len(blob):
            raise MalformedBlob(off, "pool pointer past end of blob")
        pool_start = min(pool_start, off)
    if pool_start < node_start:
        raise MalformedBlob(pool_start, "pool overlaps the pointer tables")
    if (pool_start - node_start) % 8 or pool_start == node_start:
        raise MalformedBlob(node_start, "node section is empty or misaligned")
    if pool_start > len(blob):
        raise MalformedBlob(node_start, "node section past end of blob")
    records = _parse_records(blob, node_start, pool_start)
    base = node_start // 8
    for i, ptr in enumerate(op_pointers):
        if not base <= ptr < base + len(records):
            raise MalformedBlob(6 + 2 * i, f"operation pointer 0x{ptr:04x} out of range")
    return BinaryProfile(
        format_id=format_id, op_count=op_count, pool_count=pool_count,
        op_pointers=op_pointers, records=records, node_base=base,
        pool_pointers=pool_pointers, raw=bytes(blob), pool_start=pool_start)


# ---------------------------------------------------------------------------
# Lowering: Profile -> node rows

_TERM = {"allow": ("t", Decision.ALLOW), "deny": ("t", Decision.DENY)}


def _term(decision: Decision):
    return ("t", decision)


class _NodeStore:
    """Interning store for lowered nodes; identical records share one id."""

    def __init__(self, vocab: FilterVocabulary, dedup: bool = True):
        self.vocab = vocab
        self.dedup = dedup
        self.rows = []   # (key_code, payload, match_ref, unmatch_ref)
        self.memo = {}

    def intern(self, key_code, payload, match_ref, unmatch_ref):
        key = (key_code, payload, match_ref, unmatch_ref)
        if self.dedup:
            found = self.memo.get(key)
            if found is not None:
                return ("n", found)
        self.rows.append(key)
        self.memo[key] = len(self.rows) - 1
        return ("n", len(self.rows) - 1)

    def lower_atom(self, atom: Atom, match_ref, unmatch_ref):
        entry = self.vocab.by_name(atom.key)
        if entry.kind is ValueKind.NUMERIC:
            payload = ("inline", int(atom.value))
        elif entry.kind is ValueKind.ENUM_NAMED:
            code = entry.named_values.get(atom.value)
            if code is None:
                raise UnknownFilterValue(atom.key, atom.value)
            payload = ("inline", code)
        elif entry.kind is ValueKind.REGEX_INDEX:
            blob = nfa.serialize_nfa(nfa.build_nfa(rex.parse_regex(atom.value)))
            payload = ("pool", blob)
        elif entry.kind is ValueKind.NETWORK_ENDPOINT:
            proto, addr = atom.value
            payload = ("pool", _pack_string(f"{proto} {addr}"))
        else:
            payload = ("pool", _pack_string(atom.value))
        return self.intern(entry.code, payload, match_ref, unmatch_ref)

    def lower_expr(self, expr, match_ref, unmatch_ref):
        if isinstance(expr, Atom):
            return self.lower_atom(expr, match_ref, unmatch_ref)
        if isinstance(expr, RequireNot):
            return self.lower_expr(expr.child, unmatch_ref, match_ref)
        if isinstance(expr, RequireAll):
            # conjunction chains along match edges
            ref = match_ref
            for child in reversed(expr.children):
                ref = self.lower_expr(child, ref, unmatch_ref)
            return ref
        if isinstance(expr, RequireAny):
            # alternatives chain along unmatch edges
            ref = unmatch_ref
            for child in reversed(expr.children):
                ref = self.lower_expr(child, match_ref, ref)
            return ref
        raise TypeError(f"not a filter expression: {expr!r}")

    def lower_rules(self, rules, default: Decision):
        target = _term(default)
        for rule in reversed(rules):
            if rule.filter is None:
                target = _term(rule.decision)
            else:
                target = self.lower_expr(rule.filter, _term(rule.decision), target)
        return target


def _resolve_entries(profile: Profile, table: OperationTable, store: _NodeStore):
    """Entry ref per operation; rule-less operations inherit through parent
    links, everything else lands on the default terminal."""
    default = profile.default_decision
    owner_refs: dict[str, tuple] = {}

    def owner_of(op):
        seen = set()
        cur = op
        while cur not in profile.rules or not profile.rules[cur]:
            cur = table.parents.get(cur)
            if cur is None or cur in seen:
                return None
            seen.add(cur)
        return cur

    entries = []
    for op in table.entries:
        if op == "default":
            entries.append(_term(default))
            continue
        owner = owner_of(op)
        if owner is None:
            entries.append(_term(default))
            continue
        if owner not in owner_refs:
            owner_refs[owner] = store.lower_rules(profile.rules[owner], default)
        entries.append(owner_refs[owner])
    return entries


def _dfs_order(rows, entries):
    """Node emission order: preorder from each entry, match edge first."""
    order = []
    position = {}
    for ref in entries:
        if ref[0] != "n" or ref[1] in position:
            continue
        stack = [ref[1]]
        while stack:
            node = stack.pop()
            if node in position:
                continue
            position[node] = len(order)
            order.append(node)
            _key, _payload, match_ref, unmatch_ref = rows[node]
            for nxt in (unmatch_ref, match_ref):  # LIFO: match visited first
                if nxt[0] == "n" and nxt[1] not in position:
                    stack.append(nxt[1])
    return order, position


def _emit_separated(rows, entries):
    """Assemble a separated blob from lowered rows and per-op entry refs."""
    order, position = _dfs_order(rows, entries)
    n_records = len(order) + 2  # plus the two terminals
    op_count = len(entries)

    # pool indexes in record order, first use wins; dedup on laid-out bytes
    pool_items = []
    pool_memo = {}
    values = {}
    for node in order:
        _key, payload, _m, _u = rows[node]
        if payload[0] == "inline":
            values[node] = payload[1]
        else:
            data = payload[1]
            idx = pool_memo.get(data)
            if idx is None:
                idx = len(pool_items)
                pool_items.append(data)
                pool_memo[data] = idx
            values[node] = idx
    pool_count = len(pool_items)

    head = 6 + 2 * op_count + 2 * pool_count
    node_start = _align8(head)
    base = node_start // 8
    allow_unit = base + len(order)
    deny_unit = allow_unit + 1

    def unit(ref):
        if ref[0] == "n":
            return base + position[ref[1]]
        return allow_unit if ref[1] is Decision.ALLOW else deny_unit

    if deny_unit > 0xFFFF:
        raise CapacityExceeded(f"{n_records} node records do not fit 16-bit offsets")

    record_bytes = []
    for node in order:
        key, _payload, match_ref, unmatch_ref = rows[node]
        record_bytes.append(_RECORD.pack(NODE_NON_TERMINAL, key, values[node],
                                         unit(match_ref), unit(unmatch_ref)))
    record_bytes.append(_RECORD.pack(NODE_TERMINAL, TERMINAL_ALLOW, 0, 0, 0))
    record_bytes.append(_RECORD.pack(NODE_TERMINAL, TERMINAL_DENY, 0, 0, 0))

    pool_ptrs = []
    pool_bytes = []
    offset = node_start + 8 * n_records
    for data in pool_items:
        if offset % 8:
            pad = 8 - offset % 8
            pool_bytes.append(b"\x00" * pad)
            offset += pad
        if offset // 8 > 0xFFFF:
            raise CapacityExceeded("pool does not fit 16-bit offsets")
        pool_ptrs.append(offset // 8)
        pool_bytes.append(data)
        offset += len(data)

    out = [struct.pack("<HHH", FORMAT_SEPARATED, pool_count, op_count)]
    out.append(struct.pack(f"<{op_count}H", *(unit(r) for r in entries)))
    if pool_count:
        out.append(struct.pack(f"<{pool_count}H", *pool_ptrs))
    out.append(b"\x00" * (node_start - head))
    out.extend(record_bytes)
    out.extend(pool_bytes)
    return b"".join(out)


def compile_profile(profile: Profile, table: OperationTable,
                    vocab: FilterVocabulary, *, dedup: bool = True) -> bytes:
    """Deterministic lowering of a validated profile to a separated blob.
    dedup=False keeps duplicate records; it exists so tests can show that
    record sharing never changes a verdict."""
    diagnostics = validate_profile(profile, table, vocab)
    if diagnostics:
        raise InvalidProfile(diagnostics)
    store = _NodeStore(vocab, dedup=dedup)
    entries = _resolve_entries(profile, table, store)
    return _emit_separated(store.rows, entries)


# ---------------------------------------------------------------------------
# Bundles

def pack_bundle(profiles, table: OperationTable, vocab: FilterVocabulary) -> bytes:
    if not profiles:
        raise SandboxError("a bundle needs at least one profile")
    names = [p.name for p in profiles]
    if len(set(names)) != len(names):
        raise SandboxError("bundle profile names must be unique")
    for p in profiles:
        diagnostics = validate_profile(p, table, vocab)
        if diagnostics:
            raise InvalidProfile(diagnostics)

    store = _NodeStore(vocab)  # shared across profiles: cross-profile dedup
    all_entries = [_resolve_entries(p, table, store) for p in profiles]
    flat_entries = [ref for entries in all_entries for ref in entries]
    order, position = _dfs_order(store.rows, flat_entries)
    n_records = len(order) + 2
    op_count = len(table)
    profile_count = len(profiles)

    pool_items = []
    pool_memo = {}
    values = {}

    def pool_index(data):
        idx = pool_memo.get(data)
        if idx is None:
            idx = len(pool_items)
            pool_items.append(data)
            pool_memo[data] = idx
        return idx

    for node in order:
        _key, payload, _m, _u = store.rows[node]
        values[node] = payload[1] if payload[0] == "inline" else pool_index(payload[1])
    name_indexes = [pool_index(_pack_string(name)) for name in names]
    pool_count = len(pool_items)

    head = 8 + profile_count * (2 + 2 * op_count) + 2 * pool_count
    node_start = _align8(head)
    base = node_start // 8
    allow_unit = base + len(order)
    deny_unit = allow_unit + 1

    def unit(ref):
        if ref[0] == "n":
            return base + position[ref[1]]
        return allow_unit if ref[1] is Decision.ALLOW else deny_unit

    record_bytes = []
    for node in order:
        key, _payload, match_ref, unmatch_ref = store.rows[node]
        record_bytes.append(_RECORD.pack(NODE_NON_TERMINAL, key, values[node],
                                         unit(match_ref), unit(unmatch_ref)))
    record_bytes.append(_RECORD.pack(NODE_TERMINAL, TERMINAL_ALLOW, 0, 0, 0))
    record_bytes.append(_RECORD.pack(NODE_TERMINAL, TERMINAL_DENY, 0, 0, 0))

    pool_ptrs = []
    pool_bytes = []
    offset = node_start + 8 * n_records
    for data in pool_items:
        if offset % 8:
            pad = 8 - offset % 8
            pool_bytes.append(b"\x00" * pad)
            offset += pad
        pool_ptrs.append(offset // 8)
        pool_bytes.append(data)
        offset += len(data)
    if deny_unit > 0xFFFF or (pool_ptrs and pool_ptrs[-1] > 0xFFFF):
        raise CapacityExceeded("bundle does not fit 16-bit offsets")

    out = [struct.pack("<HHHH", FORMAT_BUNDLED, pool_count, op_count, profile_count)]
    for entries, name_idx in zip(all_entries, name_indexes):
        out.append(struct.pack("<H", pool_ptrs[name_idx]))
        out.append(struct.pack(f"<{op_count}H", *(unit(r) for r in entries)))
    if pool_count:
        out.append(struct.pack(f"<{pool_count}H", *pool_ptrs))
    out.append(b"\x00" * (node_start - head))
    out.extend(record_bytes)
    out.extend(pool_bytes)
    return b"".join(out)


def _decode_bundle_at(data: bytes):
    if len(data) < 8:
        raise MalformedBlob(0, "truncated bundle header")
    format_id, pool_count, op_count, profile_count = struct.unpack_from("<HHHH", data, 0)
    if format_id != FORMAT_BUNDLED:
        raise WrongFormatId(format_id, FORMAT_BUNDLED)
    if profile_count < 1:
        raise MalformedBlob(0, "bundle with no profiles")
    per = 2 + 2 * op_count
    head = 8 + profile_count * per + 2 * pool_count
    if len(data) < head:
        raise MalformedBlob(0, "bundle tables past end of blob")
    name_offsets = []
    op_pointer_sets = []
    for i in range(profile_count):
        at = 8 + i * per
        (name_off,) = struct.unpack_from("<H", data, at)
        name_offsets.append(name_off)
        op_pointer_sets.append(struct.unpack_from(f"<{op_count}H", data, at + 2))
    pool_pointers = struct.unpack_from(f"<{pool_count}H", data, 8 + profile_count * per)
    node_start = _align8(head)
    pool_start = len(data)
    for p in list(pool_pointers) + name_offsets:
        off = p * 8
        if off >= len(data):
            raise MalformedBlob(off, "pool pointer past end of blob")
        pool_start = min(pool_start, off)
    if pool_start < node_start:
        raise MalformedBlob(pool_start, "pool overlaps the pointer tables")
    if (pool_start - node_start) % 8 or pool_start == node_start:
        raise MalformedBlob(node_start, "node section is empty or misaligned")
    records = _parse_records(data, node_start, pool_start)
    base = node_start // 8

    views = []
    seen_names = set()
    raw = bytes(data)
    for name_off, op_pointers in zip(name_offsets, op_pointer_sets):
        for ptr in op_pointers:
            if not base <= ptr < base + len(records):
                raise MalformedBlob(0, f"operation pointer 0x{ptr:04x} out of range")
        name = _read_pool_string(raw, name_off * 8)
        if name in seen_names:
            raise MalformedBlob(name_off * 8, f"duplicate profile name {name!r}")
        seen_names.add(name)
        views.append((name, BinaryProfile(
            format_id=FORMAT_BUNDLED, op_count=op_count, pool_count=pool_count,
            op_pointers=op_pointers, records=records, node_base=base,
            pool_pointers=pool_pointers, raw=raw, pool_start=pool_start,
            name=name)))
    return views


def unpack_bundle(blob: bytes, scan: bool = True):
    """Decode a bundle. With scan (the default, container-file mode) the
    header id is searched for anywhere in the input, so leading padding or
    garbage is fine. Without scan the blob must be a bundle from byte 0.
    Returns (start_offset, [(name, view), ...])."""
    if not scan:
        if len(blob) < 2:
            raise MalformedBlob(0, "truncated header")
        (first,) = struct.unpack_from("<H", blob, 0)
        if first != FORMAT_BUNDLED:
            raise WrongFormatId(first, FORMAT_BUNDLED)
        return 0, _decode_bundle_at(blob)
    for i in range(max(len(blob) - 7, 0)):
        if blob[i] == 0x00 and blob[i + 1] == 0x80:
            try:
                return i, _decode_bundle_at(blob[i:])
            except SandboxError:
                continue
    raise NoBundleFound("no bundle header found")


# ---------------------------------------------------------------------------
# View extraction (bundle view -> standalone separated blob)

def extract_profile(view: BinaryProfile, vocab: FilterVocabulary) -> bytes:
    """Re-encode one profile view as a separated blob. The node walk, pool
    ordering and layout match compile_profile, so extracting a bundled
    profile reproduces its standalone compilation byte for byte."""
    row_of = {}
    ordered_units = []
    for ptr in view.op_pointers:
        stack = [ptr]
        while stack:
            unit = stack.pop()
            rec = view.record_at(unit)
            if rec.is_terminal or unit in row_of:
                continue
            row_of[unit] = len(ordered_units)
            ordered_units.append(unit)
            stack.append(rec.unmatch_offset)
            stack.append(rec.match_offset)  # LIFO: match edge numbered first

    def ref(unit):
        rec = view.record_at(unit)
        if rec.is_terminal:
            return _term(rec.decision)
        return ("n", row_of[unit])

    rows = []
    for unit in ordered_units:
        rec = view.record_at(unit)
        entry = vocab.by_code(rec.filter_key)
        if entry.kind in (ValueKind.NUMERIC, ValueKind.ENUM_NAMED):
            payload = ("inline", rec.filter_value)
        elif entry.kind is ValueKind.REGEX_INDEX:
            blob = view.regex_blob_at(rec.filter_value)
            payload = ("pool", bytes(blob[:nfa.serialized_length(blob)]))
        else:
            payload = ("pool", _pack_string(view.string_at(rec.filter_value)))
        rows.append((entry.code, payload, ref(rec.match_offset), ref(rec.unmatch_offset)))

    entries = [ref(ptr) for ptr in view.op_pointers]
    return _emit_separated(rows, entries)


def section_sizes(blob: bytes) -> dict:
    """Byte sizes of the decoded sections, for the CLI summary."""
    bp = decode_blob(blob)
    head = 6 + 2 * bp.op_count + 2 * bp.pool_count
    return {
        "header": 6,
        "op_pointers": 2 * bp.op_count,
        "pool_pointers": 2 * bp.pool_count,
        "padding": _align8(head) - head,
        "nodes": 8 * len(bp.records),
        "pool": len(blob) - bp.pool_start,
    }
