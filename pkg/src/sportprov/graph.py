"""Typed, append-only provenance graph with a sport-specific vocabulary.

Nodes are W3C-PROV-style entities, activities and agents, specialised into
sport constructs (game states, game actions, players, roles, sensors, ...).
Edges point in the direction of dependency: ``src`` depends on / was derived
from ``dst``.  The graph is append-only; corrections are modelled as new
revision nodes linked with ``wasDerivedFrom`` rather than edits in place.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from enum import Enum
from typing import Any, Iterable, Iterator

PROV_NS = "http://www.w3.org/ns/prov#"
SPORT_NS = "https://example.org/ns/sport#"


class ProvError(Exception):
    """Base class for all provenance engine errors."""


class DuplicateId(ProvError):
    pass


class MissingEndpoint(ProvError):
    pass


class CycleIntroduced(ProvError):
    pass


class DuplicateGeneration(ProvError):
    pass


class IllegalRelation(ProvError):
    pass


class InvalidNode(ProvError):
    pass


class UnknownNode(ProvError):
    pass


class TopLevel(Enum):
    """The three top-level provenance constructs."""

    ENTITY = "Entity"
    ACTIVITY = "Activity"
    AGENT = "Agent"


class Construct(Enum):
    """Sport specialisations of the top-level constructs.

    ``DATASET`` and ``GAME_ACTION`` are plumbing additions: tabular data
    flowing through analysis pipelines and on-field actions both need
    first-class nodes even though they are ordinary entities/activities
    at the top level.
    """

    # entities
    VIDEO_FEED = "VideoFeed"
    PHYSICAL_GAME_STATE = "PhysicalGameState"
    METRIC = "Metric"
    DATASET = "Dataset"
    # activities
    ANNOTATION = "Annotation"
    COMPUTATION = "Computation"
    DE_IDENTIFY = "DeIdentify"
    GAME_ACTION = "GameAction"
    # agents
    HUMAN = "Human"
    PLAYER = "Player"
    PLAYER_ROLE = "PlayerRole"
    SENSOR = "Sensor"
    WEB_PORTAL = "WebPortal"


CONSTRUCT_TOP_LEVEL: dict[Construct, TopLevel] = {
    Construct.VIDEO_FEED: TopLevel.ENTITY,
    Construct.PHYSICAL_GAME_STATE: TopLevel.ENTITY,
    Construct.METRIC: TopLevel.ENTITY,
    Construct.DATASET: TopLevel.ENTITY,
    Construct.ANNOTATION: TopLevel.ACTIVITY,
    Construct.COMPUTATION: TopLevel.ACTIVITY,
    Construct.DE_IDENTIFY: TopLevel.ACTIVITY,
    Construct.GAME_ACTION: TopLevel.ACTIVITY,
    Construct.HUMAN: TopLevel.AGENT,
    Construct.PLAYER: TopLevel.AGENT,
    Construct.PLAYER_ROLE: TopLevel.AGENT,
    Construct.SENSOR: TopLevel.AGENT,
    Construct.WEB_PORTAL: TopLevel.AGENT,
}

# Constructs living in the physical layer; only edges between these may
# carry the physical-causality connection class.
PHYSICAL_CONSTRUCTS = {
    Construct.PHYSICAL_GAME_STATE,
    Construct.GAME_ACTION,
    Construct.PLAYER,
    Construct.PLAYER_ROLE,
}


class Relation(Enum):
    """The six relations the engine emits and accepts."""

    USED = "used"
    WAS_GENERATED_BY = "wasGeneratedBy"
    WAS_ASSOCIATED_WITH = "wasAssociatedWith"
    ACTED_ON_BEHALF_OF = "actedOnBehalfOf"
    WAS_DERIVED_FROM = "wasDerivedFrom"
    WAS_INFORMED_BY = "wasInformedBy"


# Relations that express data/physical lineage; the subgraph restricted to
# these must stay acyclic. Attribution (wasAssociatedWith) and delegation
# (actedOnBehalfOf) are exempt.
DEPENDENCY_RELATIONS = {
    Relation.USED,
    Relation.WAS_GENERATED_BY,
    Relation.WAS_DERIVED_FROM,
    Relation.WAS_INFORMED_BY,
}

# relation -> (src top level, dst top level)
RELATION_SIGNATURE: dict[Relation, tuple[TopLevel, TopLevel]] = {
    Relation.USED: (TopLevel.ACTIVITY, TopLevel.ENTITY),
    Relation.WAS_GENERATED_BY: (TopLevel.ENTITY, TopLevel.ACTIVITY),
    Relation.WAS_ASSOCIATED_WITH: (TopLevel.ACTIVITY, TopLevel.AGENT),
    Relation.ACTED_ON_BEHALF_OF: (TopLevel.AGENT, TopLevel.AGENT),
    Relation.WAS_DERIVED_FROM: (TopLevel.ENTITY, TopLevel.ENTITY),
    Relation.WAS_INFORMED_BY: (TopLevel.ACTIVITY, TopLevel.ACTIVITY),
}


class Connection(Enum):
    """Connection class of an edge: data dependency or physical causality."""

    DATA = "data"
    PHYSICAL = "physical"


@dataclass(frozen=True)
class NodeKind:
    """Top-level construct plus optional sport specialisation."""

    top_level: TopLevel
    construct: Construct | None = None

    def __post_init__(self) -> None:
        if self.construct is not None:
            expected = CONSTRUCT_TOP_LEVEL[self.construct]
            if expected is not self.top_level:
                raise InvalidNode(
                    f"construct {self.construct.value} belongs to "
                    f"{expected.value}, not {self.top_level.value}"
                )

    @classmethod
    def of(cls, construct: Construct) -> "NodeKind":
        return cls(CONSTRUCT_TOP_LEVEL[construct], construct)

    @property
    def is_physical(self) -> bool:
        return self.construct in PHYSICAL_CONSTRUCTS


@dataclass(frozen=True)
class EdgeKind:
    """Relation plus connection class (``None`` once specialisation is stripped)."""

    relation: Relation
    connection: Connection | None = None


@dataclass
class ProvNode:
    """One graph node. ``created_at`` is a logical sequence number assigned
    by the owning graph when left as ``None``."""

    id: str
    kind: NodeKind
    label: str = ""
    attrs: dict[str, Any] = field(default_factory=dict)
    created_at: int | None = None


@dataclass
class ProvEdge:
    """Directed edge; ``src`` depends on ``dst``."""

    src: str
    dst: str
    kind: EdgeKind
    label: str | None = None
    attrs: dict[str, Any] = field(default_factory=dict)

    def key(self) -> tuple:
        """Canonical identity used for deduplication and ordering."""
        return (
            self.kind.relation.value,
            self.src,
            self.dst,
            self.kind.connection.value if self.kind.connection else "",
            self.label or "",
            json.dumps(self.attrs, sort_keys=True, ensure_ascii=False),
        )


@dataclass(frozen=True)
class Violation:
    """One broken invariant, naming the rule and the offending node/edge."""

    rule: str
    subject: str
    detail: str = ""

    def __str__(self) -> str:
        msg = f"{self.rule}@{self.subject}"
        return f"{msg}: {self.detail}" if self.detail else msg


def derive_id(kind: NodeKind, label: str, ts: int | None = None) -> str:
    """Deterministic node id from (kind, label, timestamp).

    Replaying the same source data therefore produces the same ids, which
    makes replay and merge idempotent.
    """
    tag = kind.construct.value if kind.construct else kind.top_level.value
    digest = hashlib.sha256(f"{tag}|{label}|{ts}".encode()).hexdigest()[:12]
    return f"{tag.lower()}-{digest}"


class ProvGraph:
    """Append-only provenance graph.

    A single writer mutates an instance through :meth:`add_node` /
    :meth:`add_edge`; :meth:`copy` produces an independent snapshot that is
    safe to hand to concurrent readers.
    """

    def __init__(self) -> None:
        self.nodes: dict[str, ProvNode] = {}
        self.edges: list[ProvEdge] = []
        self.namespaces: dict[str, str] = {"prov": PROV_NS, "sport": SPORT_NS}
        self._edge_keys: set[tuple] = set()
        self._generated: set[str] = set()  # entities with an outgoing wasGeneratedBy
        self._dep_out: dict[str, set[str]] = {}  # dependency adjacency, src -> dsts
        self._dep_in: dict[str, int] = {}  # incoming dependency edge counts
        self._seq = 0

    # -- construction -------------------------------------------------

    def next_seq(self) -> int:
        self._seq += 1
        return self._seq

    def add_node(self, node: ProvNode) -> ProvNode:
        """Insert a node; raises :class:`DuplicateId` if the id is taken."""
        if node.id in self.nodes:
            raise DuplicateId(f"node id already present: {node.id!r}")
        self._check_node(node)
        if node.created_at is None:
            node.created_at = self.next_seq()
        else:
            self._seq = max(self._seq, node.created_at)
        self.nodes[node.id] = node
        return node

    def add_edge(self, edge: ProvEdge) -> ProvEdge | None:
        """Insert an edge, enforcing endpoint typing, generation uniqueness
        and acyclicity of the dependency subgraph.

        Re-adding a byte-identical edge is a no-op (returns ``None``) so that
        replays stay idempotent.
        """
        key = edge.key()
        if key in self._edge_keys:
            return None
        src = self.nodes.get(edge.src)
        dst = self.nodes.get(edge.dst)
        if src is None or dst is None:
            missing = edge.src if src is None else edge.dst
            raise MissingEndpoint(f"edge endpoint not in graph: {missing!r}")
        self._check_edge_typing(edge, src, dst)
        relation = edge.kind.relation
        if relation is Relation.WAS_GENERATED_BY and edge.src in self._generated:
            raise DuplicateGeneration(
                f"entity {edge.src!r} already has a generating activity"
            )
        if relation in DEPENDENCY_RELATIONS and self._would_cycle(edge.src, edge.dst):
            raise CycleIntroduced(f"dependency cycle via {edge.src!r} -> {edge.dst!r}")
        self._insert_edge(edge, key)
        return edge

    def _insert_edge(self, edge: ProvEdge, key: tuple) -> None:
        self.edges.append(edge)
        self._edge_keys.add(key)
        if edge.kind.relation is Relation.WAS_GENERATED_BY:
            self._generated.add(edge.src)
        if edge.kind.relation in DEPENDENCY_RELATIONS:
            self._dep_out.setdefault(edge.src, set()).add(edge.dst)
            self._dep_in[edge.dst] = self._dep_in.get(edge.dst, 0) + 1

    def _add_edge_unchecked(self, edge: ProvEdge) -> None:
        """Bypass invariant checks (tests and trusted internal rebuilds only)."""
        key = edge.key()
        if key not in self._edge_keys:
            self._insert_edge(edge, key)

    def _check_node(self, node: ProvNode) -> None:
        if node.kind.construct is Construct.VIDEO_FEED:
            attrs = node.attrs
            if "video_ref" not in attrs:
                raise InvalidNode(f"video feed {node.id!r} lacks video_ref")
            start, end = attrs.get("start_ms"), attrs.get("end_ms")
            if not isinstance(start, int) or not isinstance(end, int) or start > end:
                raise InvalidNode(
                    f"video feed {node.id!r} needs integer start_ms <= end_ms"
                )

    def _check_edge_typing(self, edge: ProvEdge, src: ProvNode, dst: ProvNode) -> None:
        want_src, want_dst = RELATION_SIGNATURE[edge.kind.relation]
        if src.kind.top_level is not want_src or dst.kind.top_level is not want_dst:
            raise IllegalRelation(
                f"{edge.kind.relation.value} requires {want_src.value}->"
                f"{want_dst.value}, got {src.kind.top_level.value}->"
                f"{dst.kind.top_level.value}"
            )
        if edge.kind.connection is Connection.PHYSICAL:
            if not (src.kind.is_physical and dst.kind.is_physical):
                raise IllegalRelation(
                    "physical-causality edges require both endpoints in the "
                    f"physical layer: {edge.src!r} -> {edge.dst!r}"
                )

    def _would_cycle(self, src: str, dst: str) -> bool:
        # Adding src -> dst creates a cycle iff dst already reaches src.
        # A src with no incoming dependency edges cannot be reached at all.
        if self._dep_in.get(src, 0) == 0:
            return False
        stack, seen = [dst], set()
        while stack:
            cur = stack.pop()
            if cur == src:
                return True
            if cur in seen:
                continue
            seen.add(cur)
            stack.extend(self._dep_out.get(cur, ()))
        return False

    # -- queries ------------------------------------------------------

    def out_edges(self, node_id: str) -> Iterator[ProvEdge]:
        return (e for e in self.edges if e.src == node_id)

    def in_edges(self, node_id: str) -> Iterator[ProvEdge]:
        return (e for e in self.edges if e.dst == node_id)

    def subgraph(self, node_ids: Iterable[str]) -> "ProvGraph":
        """Induced subgraph on ``node_ids`` (edges kept iff both endpoints kept)."""
        wanted = set(node_ids)
        unknown = wanted - self.nodes.keys()
        if unknown:
            raise UnknownNode(f"not in graph: {sorted(unknown)!r}")
        sub = ProvGraph()
        sub.namespaces = dict(self.namespaces)
        for node_id in sorted(wanted):
            node = self.nodes[node_id]
            sub.nodes[node_id] = ProvNode(
                node.id, node.kind, node.label, dict(node.attrs), node.created_at
            )
        sub._seq = self._seq
        for edge in self.edges:
            if edge.src in wanted and edge.dst in wanted:
                sub._add_edge_unchecked(
                    ProvEdge(edge.src, edge.dst, edge.kind, edge.label, dict(edge.attrs))
                )
        return sub

    def copy(self) -> "ProvGraph":
        """Independent snapshot; safe for concurrent readers."""
        return self.subgraph(self.nodes.keys())

    def validate(self) -> list[Violation]:
        """Re-check every invariant from scratch, independent of the
        bookkeeping maintained by :meth:`add_edge`.

        Returns an empty list iff the graph is well formed.
        """
        out: list[Violation] = []
        for node in self.nodes.values():
            if node.kind.construct is not None:
                if CONSTRUCT_TOP_LEVEL[node.kind.construct] is not node.kind.top_level:
                    out.append(Violation("KindMismatch", node.id))
            if node.kind.construct is Construct.VIDEO_FEED:
                attrs = node.attrs
                start, end = attrs.get("start_ms"), attrs.get("end_ms")
                if (
                    "video_ref" not in attrs
                    or not isinstance(start, int)
                    or not isinstance(end, int)
                    or start > end
                ):
                    out.append(Violation("InvalidVideoFeed", node.id))

        generated: set[str] = set()
        adjacency: dict[str, set[str]] = {}
        for edge in self.edges:
            subject = f"{edge.src}->{edge.dst}"
            src = self.nodes.get(edge.src)
            dst = self.nodes.get(edge.dst)
            if src is None or dst is None:
                out.append(Violation("MissingEndpoint", subject))
                continue
            want_src, want_dst = RELATION_SIGNATURE[edge.kind.relation]
            if src.kind.top_level is not want_src or dst.kind.top_level is not want_dst:
                out.append(Violation("IllegalRelation", subject, edge.kind.relation.value))
            if edge.kind.connection is Connection.PHYSICAL and not (
                src.kind.is_physical and dst.kind.is_physical
            ):
                out.append(Violation("IllegalPhysicalConnection", subject))
            if edge.kind.relation is Relation.WAS_GENERATED_BY:
                if edge.src in generated:
                    out.append(Violation("DuplicateGeneration", edge.src))
                generated.add(edge.src)
            if edge.kind.relation in DEPENDENCY_RELATIONS:
                adjacency.setdefault(edge.src, set()).add(edge.dst)

        cycle_node = _find_cycle(adjacency)
        if cycle_node is not None:
            out.append(Violation("DependencyCycle", cycle_node))
        return out

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, ProvGraph):
            return NotImplemented
        if self.namespaces != other.namespaces:
            return False
        if self.nodes.keys() != other.nodes.keys():
            return False
        for node_id, node in self.nodes.items():
            theirs = other.nodes[node_id]
            if (node.kind, node.label, node.attrs, node.created_at) != (
                theirs.kind,
                theirs.label,
                theirs.attrs,
                theirs.created_at,
            ):
                return False
        return sorted(e.key() for e in self.edges) == sorted(
            e.key() for e in other.edges
        )

    def __len__(self) -> int:
        return len(self.nodes)

    def __contains__(self, node_id: str) -> bool:
        return node_id in self.nodes


def _find_cycle(adjacency: dict[str, set[str]]) -> str | None:
    """Return a node on a cycle in ``adjacency``, or ``None`` if acyclic."""
    WHITE, GREY, BLACK = 0, 1, 2
    colour: dict[str, int] = {}
    for root in adjacency:
        if colour.get(root, WHITE) != WHITE:
            continue
        stack: list[tuple[str, Iterator[str]]] = [(root, iter(adjacency.get(root, ())))]
        colour[root] = GREY
        while stack:
            node, it = stack[-1]
            advanced = False
            for nxt in it:
                state = colour.get(nxt, WHITE)
                if state == GREY:
                    return nxt
                if state == WHITE:
                    colour[nxt] = GREY
                    stack.append((nxt, iter(adjacency.get(nxt, ()))))
                    advanced = True
                    break
            if not advanced:
                colour[node] = BLACK
                stack.pop()
    return None
