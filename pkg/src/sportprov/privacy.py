"""De-identification, partial graph export and collaborator merge.

Player identifiers are replaced by anonymous codes from a privately held
bijection. Exported partial graphs contain only the nodes downstream of the
de-identify boundary, with the boundary activities themselves reduced to
opaque frontier stubs, so a recipient cannot trace player data back past the
de-identification step. When the collaborator returns their findings plus
provenance, ``merge_external`` stitches the graphs back together at the
frontier ids and the full lineage becomes traceable again on the club side.

The mapping file is plaintext JSON carrying a ``SECRET`` marker; keep it out
of anything you share. Note that event timestamps alone may narrow down who
a code refers to; this module does not attempt to mitigate that.
"""

from __future__ import annotations

import hashlib
import hmac
import json
from dataclasses import dataclass
from typing import Any, Iterable

from .graph import (
    Connection,
    Construct,
    DEPENDENCY_RELATIONS,
    EdgeKind,
    NodeKind,
    ProvEdge,
    ProvError,
    ProvGraph,
    ProvNode,
    Relation,
    UnknownNode,
)
from .interop import ProvDocument, parse_document

DEFAULT_PLAYER_FIELDS = ("player", "target_player")


class EmptyInput(ProvError):
    pass


class UnmappedPlayer(ProvError):
    pass


class UnknownCode(ProvError):
    pass


class FrontierMismatch(ProvError):
    pass


class ConflictingNode(ProvError):
    pass


class MergeInvalid(ProvError):
    pass


@dataclass
class RedactionMap:
    """Private bijection between player ids and anonymous codes."""

    map_id: str
    entries: dict[str, str]
    created_by: str = "analyst"
    secret: bool = True

    def inverse(self) -> dict[str, str]:
        return {code: player for player, code in self.entries.items()}

    def to_dict(self) -> dict[str, Any]:
        return {
            "SECRET": "do not share this file; it reverses de-identification",
            "map_id": self.map_id,
            "entries": dict(self.entries),
            "created_by": self.created_by,
        }

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "RedactionMap":
        return cls(
            map_id=d["map_id"],
            entries=dict(d["entries"]),
            created_by=d.get("created_by", "analyst"),
        )


def make_map(player_ids: Iterable[str], seed: bytes, created_by: str = "analyst") -> RedactionMap:
    """Deterministic keyed-hash code assignment, format ``A`` + 6 hex chars.

    Codes never contain any player id as a substring and never collide;
    both conditions are enforced with a retry counter, so the result is a
    pure function of (player_ids, seed).
    """
    players = sorted(set(player_ids))
    if not players:
        raise EmptyInput("cannot build a redaction map for zero players")
    lowered = [p.lower() for p in players]
    entries: dict[str, str] = {}
    used: set[str] = set()
    for player in players:
        attempt = 0
        while True:
            digest = hmac.new(seed, f"{player}|{attempt}".encode(), hashlib.sha256)
            code = "A" + digest.hexdigest()[:6]
            clean = code not in used and not any(p in code.lower() for p in lowered)
            if clean:
                break
            attempt += 1
        entries[player] = code
        used.add(code)
    map_id = "rmap-" + hashlib.sha256(seed + "|".join(players).encode()).hexdigest()[:8]
    return RedactionMap(map_id=map_id, entries=entries, created_by=created_by)


def apply_mapping(
    rows: list[dict[str, Any]],
    entries: dict[str, str],
    fields: Iterable[str] = DEFAULT_PLAYER_FIELDS,
    direction: str = "deidentify",
) -> list[dict[str, Any]]:
    """Substitute player fields through ``entries`` (or its inverse)."""
    if direction == "deidentify":
        table = dict(entries)
        missing_error = UnmappedPlayer
    elif direction == "reidentify":
        table = {code: player for player, code in entries.items()}
        missing_error = UnknownCode
    else:
        raise ValueError(f"unknown direction {direction!r}")
    fields = tuple(fields)
    out = []
    for row in rows:
        new_row = dict(row)
        for column in fields:
            value = new_row.get(column)
            if value is None:
                continue
            if value not in table:
                raise missing_error(f"{column}={value!r} not in mapping")
            new_row[column] = table[value]
        out.append(new_row)
    return out


@dataclass
class DeidentifyResult:
    rows: list[dict[str, Any]]
    activity_id: str | None = None
    entity_id: str | None = None


def deidentify(
    rows: list[dict[str, Any]],
    rmap: RedactionMap,
    fields: Iterable[str] = DEFAULT_PLAYER_FIELDS,
    graph: ProvGraph | None = None,
    source_entity: str | None = None,
    author: str | None = None,
) -> DeidentifyResult:
    """Replace player fields with codes; optionally record the operation.

    When ``graph`` is given, a ``DeIdentify`` activity is added that used the
    source entity and generated the anonymised dataset. The redaction map is
    referenced by id only — its entries never enter the graph.
    """
    out_rows = apply_mapping(rows, rmap.entries, fields, "deidentify")
    result = DeidentifyResult(out_rows)
    if graph is not None:
        digest = hashlib.sha256(
            json.dumps(out_rows, sort_keys=True, ensure_ascii=False).encode()
        ).hexdigest()[:12]
        activity_id = f"deid:{digest}"
        entity_id = f"data:deid:{digest}"
        if activity_id not in graph:
            graph.add_node(
                ProvNode(
                    activity_id,
                    NodeKind.of(Construct.DE_IDENTIFY),
                    label="de-identify players",
                    attrs={"map_id": rmap.map_id},
                )
            )
        if entity_id not in graph:
            graph.add_node(
                ProvNode(
                    entity_id,
                    NodeKind.of(Construct.DATASET),
                    label="de-identified dataset",
                    attrs={"digest": digest, "rows": len(out_rows)},
                )
            )
        if source_entity is not None:
            graph.add_edge(
                ProvEdge(activity_id, source_entity, EdgeKind(Relation.USED, Connection.DATA))
            )
        graph.add_edge(
            ProvEdge(entity_id, activity_id, EdgeKind(Relation.WAS_GENERATED_BY, Connection.DATA))
        )
        if author:
            agent_id = f"agent:{author}"
            if agent_id not in graph:
                graph.add_node(
                    ProvNode(agent_id, NodeKind.of(Construct.HUMAN), label=author)
                )
            graph.add_edge(
                ProvEdge(
                    activity_id, agent_id, EdgeKind(Relation.WAS_ASSOCIATED_WITH, Connection.DATA)
                )
            )
        result.activity_id = activity_id
        result.entity_id = entity_id
    return result


def reidentify(
    rows: list[dict[str, Any]],
    rmap: RedactionMap,
    fields: Iterable[str] = DEFAULT_PLAYER_FIELDS,
) -> list[dict[str, Any]]:
    """Inverse of :func:`deidentify` on the same mapping."""
    return apply_mapping(rows, rmap.entries, fields, "reidentify")


def _downstream_of(graph: ProvGraph, boundary: set[str]) -> set[str]:
    """Nodes with a dependency path into the boundary (reverse reachability),
    plus agents attached to the included activities."""
    incoming: dict[str, list[str]] = {}
    for edge in graph.edges:
        if edge.kind.relation in DEPENDENCY_RELATIONS:
            incoming.setdefault(edge.dst, []).append(edge.src)
    keep = set(boundary)
    stack = list(boundary)
    while stack:
        cur = stack.pop()
        for src in incoming.get(cur, ()):
            if src not in keep:
                keep.add(src)
                stack.append(src)
    for edge in graph.edges:
        if edge.kind.relation is Relation.WAS_ASSOCIATED_WITH and edge.src in keep:
            if edge.src not in boundary:  # frontier stubs carry no attribution
                keep.add(edge.dst)
    return keep


def export_partial(graph: ProvGraph, boundary: Iterable[str]) -> ProvDocument:
    """Shareable document: everything downstream of the de-identify boundary.

    Boundary activities are included as opaque frontier stubs (attributes
    stripped, label dropped) so the recipient has stable stitch points but
    no pre-boundary information. An empty boundary is an explicit opt-out
    and exports the full graph.
    """
    boundary = set(boundary)
    unknown = boundary - graph.nodes.keys()
    if unknown:
        raise UnknownNode(f"boundary nodes not in graph: {sorted(unknown)!r}")
    if not boundary:
        return ProvDocument.from_graph(graph)
    keep = _downstream_of(graph, boundary)
    sub = graph.subgraph(keep)
    for node_id in boundary:
        node = sub.nodes[node_id]
        node.attrs = {"frontier": True}
        node.label = ""
    # frontier stubs keep their incoming generation edges (the stitch points)
    # but lose all outgoing ones: no pre-boundary lineage, no attribution.
    sub.edges = [e for e in sub.edges if e.src not in boundary]
    sub._edge_keys = {e.key() for e in sub.edges}
    return ProvDocument.from_graph(sub)


def merge_external(local: ProvGraph, external: ProvDocument | str) -> ProvGraph:
    """Union an external document into a copy of the local graph.

    Stitch rule: an external node with a locally known id must either be
    byte-identical to the local node (deduplicated) or be a frontier stub of
    a local de-identify activity. A stub whose id is unknown locally raises
    :class:`FrontierMismatch`; any other id collision with different content
    raises :class:`ConflictingNode`. The merged graph must validate.
    """
    if isinstance(external, str):
        external = parse_document(external)
    incoming = external.to_graph()
    merged = local.copy()
    for node in incoming.nodes.values():
        is_stub = node.attrs.get("frontier") is True
        if is_stub:
            if node.id not in merged.nodes:
                raise FrontierMismatch(
                    f"external frontier {node.id!r} has no local counterpart"
                )
            continue  # keep the local, fully attributed copy
        ours = merged.nodes.get(node.id)
        if ours is None:
            merged.add_node(
                ProvNode(node.id, node.kind, node.label, dict(node.attrs), node.created_at)
            )
            continue
        if (ours.kind, ours.label, ours.attrs) != (node.kind, node.label, node.attrs):
            raise ConflictingNode(f"node {node.id!r} differs between graphs")
    for edge in incoming.edges:
        if edge.src in merged.nodes and edge.dst in merged.nodes:
            merged.add_edge(
                ProvEdge(edge.src, edge.dst, edge.kind, edge.label, dict(edge.attrs))
            )
    violations = merged.validate()
    if violations:
        raise MergeInvalid("; ".join(str(v) for v in violations))
    return merged


def scan_for_identifiers(text: str, player_ids: Iterable[str]) -> list[str]:
    """Player ids occurring as substrings of ``text`` (leak check helper)."""
    return sorted({p for p in player_ids if p and p in text})
