"""Serialisation of provenance graphs to the ``.sprov`` text dialect.

The dialect is a restricted, line-oriented PROV-N-style grammar: a
``document`` / ``endDocument`` envelope, ``prefix`` declarations, one
statement per line and ``//`` comments. Sport specialisations ride along as
attributes in the ``sport:`` namespace (``sport:type`` on nodes,
``sport:connection`` on edges), mirroring how workflow tools mix their own
namespace into standard PROV exports. Attribute values are JSON literals,
so arbitrary scalars, lists and maps round-trip exactly.

Serialisation is deterministic: equal graphs produce byte-identical
documents. The full grammar ships in ``docs/sprov-grammar.md``.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, field
from typing import Any

from .graph import (
    CONSTRUCT_TOP_LEVEL,
    Connection,
    Construct,
    EdgeKind,
    NodeKind,
    PROV_NS,
    ProvEdge,
    ProvError,
    ProvGraph,
    ProvNode,
    Relation,
    SPORT_NS,
    TopLevel,
)

SPROV_EXTENSION = ".sprov"

_RECORD_NAMES = {
    TopLevel.ENTITY: "entity",
    TopLevel.ACTIVITY: "activity",
    TopLevel.AGENT: "agent",
}
_RECORD_BY_NAME = {v: k for k, v in _RECORD_NAMES.items()}
_RELATION_BY_NAME = {r.value: r for r in Relation}

_NODE_RANK = {TopLevel.ENTITY: 0, TopLevel.ACTIVITY: 1, TopLevel.AGENT: 2}
_EDGE_RANK = {r: 3 + i for i, r in enumerate(Relation)}

# prov:type values implied by a construct; emitted on serialisation and
# folded back out on parse so they do not pollute node attrs.
_DERIVED_PROV_TYPE = {
    Construct.PLAYER: "prov:Person",
    Construct.HUMAN: "prov:Person",
    Construct.SENSOR: "prov:SoftwareAgent",
    Construct.WEB_PORTAL: "prov:SoftwareAgent",
}

# sport-namespace attribute names with structural meaning; user attrs with
# these local names are emitted in quoted form instead.
_RESERVED_SPORT = {"type", "seq", "connection"}

_NAME_RE = re.compile(r"[A-Za-z][A-Za-z0-9_.\-]*")
_CONSTRUCT_BY_VALUE = {c.value: c for c in Construct}


class InvalidGraph(ProvError):
    pass


class SprovSyntaxError(ProvError):
    """Malformed document; carries the offending line and column (1-based)."""

    def __init__(self, message: str, line: int, col: int) -> None:
        super().__init__(f"line {line}, col {col}: {message}")
        self.line = line
        self.col = col


class UnknownRelation(ProvError):
    pass


@dataclass
class NodeStatement:
    record: TopLevel
    node_id: str
    construct: Construct | None
    label: str
    attrs: dict[str, Any]
    seq: int | None

    def sort_key(self) -> tuple:
        return (_NODE_RANK[self.record], self.node_id)


@dataclass
class EdgeStatement:
    relation: Relation
    src: str
    dst: str
    connection: Connection | None
    label: str | None
    attrs: dict[str, Any]

    def sort_key(self) -> tuple:
        return (
            _EDGE_RANK[self.relation],
            self.src,
            self.dst,
            self.connection.value if self.connection else "",
            self.label or "",
            json.dumps(self.attrs, sort_keys=True, ensure_ascii=False),
        )


@dataclass
class ProvDocument:
    """A provenance document: namespace declarations plus ordered statements."""

    namespaces: dict[str, str] = field(default_factory=dict)
    statements: list[NodeStatement | EdgeStatement] = field(default_factory=list)

    @classmethod
    def from_graph(cls, graph: ProvGraph) -> "ProvDocument":
        violations = graph.validate()
        if violations:
            raise InvalidGraph(
                "graph fails validation: " + "; ".join(str(v) for v in violations)
            )
        doc = cls(namespaces=dict(graph.namespaces))
        for node in graph.nodes.values():
            doc.statements.append(
                NodeStatement(
                    record=node.kind.top_level,
                    node_id=node.id,
                    construct=node.kind.construct,
                    label=node.label,
                    attrs=dict(node.attrs),
                    seq=node.created_at,
                )
            )
        for edge in graph.edges:
            doc.statements.append(
                EdgeStatement(
                    relation=edge.kind.relation,
                    src=edge.src,
                    dst=edge.dst,
                    connection=edge.kind.connection,
                    label=edge.label,
                    attrs=dict(edge.attrs),
                )
            )
        doc.statements.sort(key=lambda s: s.sort_key())
        return doc

    def to_graph(self) -> ProvGraph:
        graph = ProvGraph()
        graph.namespaces = {"prov": PROV_NS, "sport": SPORT_NS} | dict(self.namespaces)
        edges = [s for s in self.statements if isinstance(s, EdgeStatement)]
        for stmt in self.statements:
            if isinstance(stmt, NodeStatement):
                kind = (
                    NodeKind.of(stmt.construct)
                    if stmt.construct is not None
                    else NodeKind(stmt.record)
                )
                graph.add_node(
                    ProvNode(
                        stmt.node_id,
                        kind,
                        label=stmt.label,
                        attrs=dict(stmt.attrs),
                        created_at=stmt.seq,
                    )
                )
        for stmt in edges:
            graph.add_edge(
                ProvEdge(
                    stmt.src,
                    stmt.dst,
                    EdgeKind(stmt.relation, stmt.connection),
                    label=stmt.label,
                    attrs=dict(stmt.attrs),
                )
            )
        return graph

    def render(self) -> str:
        lines = ["document"]
        for prefix in sorted(self.namespaces):
            lines.append(f"  prefix {prefix} <{self.namespaces[prefix]}>")
        for stmt in self.statements:
            lines.append("  " + _render_statement(stmt, self.namespaces))
        lines.append("endDocument")
        return "\n".join(lines) + "\n"


# -- rendering ---------------------------------------------------------


def _ident(local: str) -> str:
    if _NAME_RE.fullmatch(local) and local not in _RESERVED_SPORT:
        return f"sport:{local}"
    return "sport:" + json.dumps(local, ensure_ascii=False)


def _attr_key(key: str, namespaces: dict[str, str]) -> str:
    prefix, sep, rest = key.partition(":")
    if sep and prefix in namespaces and _NAME_RE.fullmatch(rest or ""):
        return key  # verbatim foreign-namespace attribute
    return _ident(key)


def _attr_items(attrs: dict[str, Any], namespaces: dict[str, str]) -> list[str]:
    items = []
    for key in sorted(attrs):
        if key == "prov:label":  # reserved; normalised away
            continue
        value = json.dumps(attrs[key], ensure_ascii=False, allow_nan=False, sort_keys=True)
        items.append(f"{_attr_key(key, namespaces)}={value}")
    return items


def _render_statement(
    stmt: NodeStatement | EdgeStatement, namespaces: dict[str, str]
) -> str:
    if isinstance(stmt, NodeStatement):
        parts = []
        if stmt.label:
            parts.append(f"prov:label={json.dumps(stmt.label, ensure_ascii=False)}")
        prov_type = stmt.attrs.get("prov:type") or (
            _DERIVED_PROV_TYPE.get(stmt.construct) if stmt.construct else None
        )
        if prov_type:
            parts.append(f"prov:type={json.dumps(prov_type, ensure_ascii=False)}")
        if stmt.construct:
            parts.append(f"sport:type={json.dumps(stmt.construct.value)}")
        parts.append(f"sport:seq={stmt.seq}")
        rest = {k: v for k, v in stmt.attrs.items() if k != "prov:type"}
        parts.extend(_attr_items(rest, namespaces))
        return f"{_RECORD_NAMES[stmt.record]}({_ident(stmt.node_id)}, [{', '.join(parts)}])"
    parts = []
    if stmt.label:
        parts.append(f"prov:label={json.dumps(stmt.label, ensure_ascii=False)}")
    if stmt.connection:
        parts.append(f"sport:connection={json.dumps(stmt.connection.value)}")
    parts.extend(_attr_items(stmt.attrs, namespaces))
    body = f"{_ident(stmt.src)}, {_ident(stmt.dst)}"
    if parts:
        body += f", [{', '.join(parts)}]"
    return f"{stmt.relation.value}({body})"


# -- parsing -----------------------------------------------------------


class _Cursor:
    """Character cursor over one line, tracking the column for errors."""

    def __init__(self, text: str, line_no: int) -> None:
        self.text = text
        self.pos = 0
        self.line_no = line_no

    def error(self, message: str) -> SprovSyntaxError:
        return SprovSyntaxError(message, self.line_no, self.pos + 1)

    def skip_ws(self) -> None:
        while self.pos < len(self.text) and self.text[self.pos] in " \t":
            self.pos += 1

    def at_end(self) -> bool:
        self.skip_ws()
        return self.pos >= len(self.text) or self.text.startswith("//", self.pos)

    def peek(self) -> str:
        self.skip_ws()
        return self.text[self.pos] if self.pos < len(self.text) else ""

    def expect(self, literal: str) -> None:
        self.skip_ws()
        if not self.text.startswith(literal, self.pos):
            raise self.error(f"expected {literal!r}")
        self.pos += len(literal)

    def read_name(self) -> str:
        self.skip_ws()
        m = _NAME_RE.match(self.text, self.pos)
        if not m:
            raise self.error("expected a name")
        self.pos = m.end()
        return m.group()

    def read_json(self) -> Any:
        self.skip_ws()
        try:
            value, end = json.JSONDecoder().raw_decode(self.text, self.pos)
        except json.JSONDecodeError:
            raise self.error("expected a JSON value") from None
        self.pos = end
        return value

    def read_qualified(self, namespaces: dict[str, str]) -> tuple[str, str, bool]:
        """Read ``prefix:local``; returns (prefix, local, was_quoted)."""
        prefix = self.read_name()
        if self.pos >= len(self.text) or self.text[self.pos] != ":":
            raise self.error("expected ':' after namespace prefix")
        if prefix not in namespaces:
            raise self.error(f"undeclared namespace prefix {prefix!r}")
        self.pos += 1
        if self.pos < len(self.text) and self.text[self.pos] == '"':
            value = self.read_json()
            if not isinstance(value, str):
                raise self.error("quoted identifier must be a JSON string")
            return prefix, value, True
        m = _NAME_RE.match(self.text, self.pos)
        if not m:
            raise self.error("expected identifier after ':'")
        self.pos = m.end()
        return prefix, m.group(), False


def _parse_attrs(
    cur: _Cursor, namespaces: dict[str, str]
) -> list[tuple[str, str, bool, Any]]:
    """Parse ``[k=v, ...]`` into (prefix, local, was_quoted, value) tuples."""
    cur.expect("[")
    out = []
    if cur.peek() == "]":
        cur.expect("]")
        return out
    while True:
        prefix, local, quoted = cur.read_qualified(namespaces)
        cur.expect("=")
        value = cur.read_json()
        out.append((prefix, local, quoted, value))
        if cur.peek() == ",":
            cur.expect(",")
            continue
        cur.expect("]")
        return out


def _fold_attrs(
    raw: list[tuple[str, str, bool, Any]], cur: _Cursor
) -> tuple[dict[str, Any], str, Any, Construct | None, int | None, Connection | None]:
    """Split raw attributes into user attrs and structural fields."""
    attrs: dict[str, Any] = {}
    label = ""
    prov_type: Any = None
    construct: Construct | None = None
    seq: int | None = None
    connection: Connection | None = None
    for prefix, local, quoted, value in raw:
        if prefix == "prov" and local == "label" and not quoted:
            label = value
        elif prefix == "prov" and local == "type" and not quoted:
            prov_type = value
        elif prefix == "sport" and not quoted and local == "type":
            if value not in _CONSTRUCT_BY_VALUE:
                raise cur.error(f"unknown sport:type {value!r}")
            construct = _CONSTRUCT_BY_VALUE[value]
        elif prefix == "sport" and not quoted and local == "seq":
            if not isinstance(value, int):
                raise cur.error("sport:seq must be an integer")
            seq = value
        elif prefix == "sport" and not quoted and local == "connection":
            try:
                connection = Connection(value)
            except ValueError:
                raise cur.error(f"unknown connection class {value!r}") from None
        elif prefix == "sport":
            attrs[local] = value
        else:
            attrs[f"{prefix}:{local}"] = value
    if prov_type is not None:
        derived = _DERIVED_PROV_TYPE.get(construct) if construct else None
        if prov_type != derived:
            attrs["prov:type"] = prov_type
    return attrs, label, prov_type, construct, seq, connection


def parse_document(text: str) -> ProvDocument:
    """Parse ``.sprov`` text into a document, with line/column on failure."""
    doc = ProvDocument()
    saw_open = saw_close = False
    for line_no, line in enumerate(text.splitlines(), start=1):
        cur = _Cursor(line, line_no)
        if cur.at_end():
            continue
        if saw_close:
            raise cur.error("content after endDocument")
        if not saw_open:
            cur.expect("document")
            if not cur.at_end():
                raise cur.error("unexpected content after 'document'")
            saw_open = True
            continue
        if cur.text.lstrip().startswith("endDocument"):
            cur.expect("endDocument")
            if not cur.at_end():
                raise cur.error("unexpected content after 'endDocument'")
            saw_close = True
            continue
        head = cur.read_name()
        if head == "prefix":
            prefix = cur.read_name()
            cur.expect("<")
            start = cur.pos
            end = cur.text.find(">", start)
            if end < 0:
                raise cur.error("unterminated namespace URI")
            doc.namespaces[prefix] = cur.text[start:end]
            cur.pos = end + 1
        elif head in _RECORD_BY_NAME:
            cur.expect("(")
            _, node_id, _ = cur.read_qualified(doc.namespaces)
            cur.expect(",")
            raw = _parse_attrs(cur, doc.namespaces)
            cur.expect(")")
            attrs, label, _, construct, seq, _ = _fold_attrs(raw, cur)
            record = _RECORD_BY_NAME[head]
            if construct is not None and CONSTRUCT_TOP_LEVEL[construct] is not record:
                raise cur.error(
                    f"sport:type {construct.value} is not valid on a {head} record"
                )
            doc.statements.append(
                NodeStatement(record, node_id, construct, label, attrs, seq)
            )
        elif head in _RELATION_BY_NAME:
            cur.expect("(")
            _, src, _ = cur.read_qualified(doc.namespaces)
            cur.expect(",")
            _, dst, _ = cur.read_qualified(doc.namespaces)
            raw = []
            if cur.peek() == ",":
                cur.expect(",")
                raw = _parse_attrs(cur, doc.namespaces)
            cur.expect(")")
            attrs, label, _, _, _, connection = _fold_attrs(raw, cur)
            doc.statements.append(
                EdgeStatement(
                    _RELATION_BY_NAME[head], src, dst, connection, label or None, attrs
                )
            )
        else:
            raise UnknownRelation(
                f"line {line_no}: unknown statement type {head!r}"
            )
        if not cur.at_end():
            raise cur.error("unexpected trailing content")
    if not saw_open:
        raise SprovSyntaxError("missing 'document' header", 1, 1)
    if not saw_close:
        raise SprovSyntaxError("missing 'endDocument'", len(text.splitlines()) or 1, 1)
    return doc


# -- public operations ---------------------------------------------------


def serialize(graph: ProvGraph) -> str:
    """Deterministic text form of a valid graph (see :class:`InvalidGraph`)."""
    return ProvDocument.from_graph(graph).render()


def parse(text: str) -> ProvGraph:
    """Inverse of :func:`serialize`; see :class:`SprovSyntaxError` for failures."""
    return parse_document(text).to_graph()


def strip_specialisation(graph: ProvGraph) -> ProvGraph:
    """Project away sport constructs, leaving only the four generic
    top-level categories (entity / activity / agent / connection).

    Topology, attributes and sequence numbers are preserved; the operation
    is idempotent.
    """
    out = ProvGraph()
    out.namespaces = dict(graph.namespaces)
    for node in graph.nodes.values():
        out.add_node(
            ProvNode(
                node.id,
                NodeKind(node.kind.top_level),
                label=node.label,
                attrs=dict(node.attrs),
                created_at=node.created_at,
            )
        )
    for edge in graph.edges:
        out.add_edge(
            ProvEdge(
                edge.src,
                edge.dst,
                EdgeKind(edge.kind.relation),
                label=edge.label,
                attrs=dict(edge.attrs),
            )
        )
    return out


# -- JSON graph form (service wire format) --------------------------------


def graph_to_json(graph: ProvGraph) -> dict[str, Any]:
    """JSON rendering of the document body, used by the HTTP API."""
    nodes = [
        {
            "id": node.id,
            "top_level": node.kind.top_level.value,
            "construct": node.kind.construct.value if node.kind.construct else None,
            "label": node.label,
            "attrs": dict(node.attrs),
            "created_at": node.created_at,
        }
        for node in sorted(graph.nodes.values(), key=lambda n: n.id)
    ]
    edges = [
        {
            "src": edge.src,
            "dst": edge.dst,
            "relation": edge.kind.relation.value,
            "connection": edge.kind.connection.value if edge.kind.connection else None,
            "label": edge.label,
            "attrs": dict(edge.attrs),
        }
        for edge in sorted(graph.edges, key=lambda e: e.key())
    ]
    return {"namespaces": dict(graph.namespaces), "nodes": nodes, "edges": edges}


def graph_from_json(data: dict[str, Any]) -> ProvGraph:
    graph = ProvGraph()
    graph.namespaces = dict(data.get("namespaces") or graph.namespaces)
    for n in data.get("nodes", ()):
        construct = Construct(n["construct"]) if n.get("construct") else None
        kind = (
            NodeKind.of(construct)
            if construct
            else NodeKind(TopLevel(n["top_level"]))
        )
        graph.add_node(
            ProvNode(
                n["id"],
                kind,
                label=n.get("label", ""),
                attrs=dict(n.get("attrs") or {}),
                created_at=n.get("created_at"),
            )
        )
    for e in data.get("edges", ()):
        connection = Connection(e["connection"]) if e.get("connection") else None
        graph.add_edge(
            ProvEdge(
                e["src"],
                e["dst"],
                EdgeKind(Relation(e["relation"]), connection),
                label=e.get("label"),
                attrs=dict(e.get("attrs") or {}),
            )
        )
    return graph
