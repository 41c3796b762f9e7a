"""Influence queries over the provenance graph.

``trace_influences`` walks dependency-direction edges from a target node and
returns everything that contributed to it, optionally pruned by node kind,
activity depth and connection class. Depth counts *activity* nodes on the
dependency path (entities and agents are free), so "agents two activities
away" are the agents attached to activities at depth <= 2. Agents are always
collected through ``wasAssociatedWith`` during the walk; kind filters prune
the answer, never the traversal.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field
from typing import Any

from .graph import (
    Connection,
    Construct,
    DEPENDENCY_RELATIONS,
    ProvError,
    ProvGraph,
    ProvNode,
    Relation,
    TopLevel,
    UnknownNode,
)

DEFAULT_CLIP_PAD_MS = 5000


class NotAGoal(ProvError):
    pass


class NotAMetric(ProvError):
    pass


@dataclass
class QueryFilter:
    """Pruning options for :func:`trace_influences`."""

    node_kinds: set[Construct] | None = None
    max_activity_depth: int | None = None
    stop_at_reset: bool = True
    connection_classes: set[Connection] | None = None

    def to_dict(self) -> dict[str, Any]:
        return {
            "node_kinds": sorted(k.value for k in self.node_kinds)
            if self.node_kinds is not None
            else None,
            "max_activity_depth": self.max_activity_depth,
            "stop_at_reset": self.stop_at_reset,
            "connection_classes": sorted(c.value for c in self.connection_classes)
            if self.connection_classes is not None
            else None,
        }

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "QueryFilter":
        kinds = d.get("node_kinds")
        classes = d.get("connection_classes")
        return cls(
            node_kinds={Construct(k) for k in kinds} if kinds is not None else None,
            max_activity_depth=d.get("max_activity_depth"),
            stop_at_reset=d.get("stop_at_reset", True),
            connection_classes={Connection(c) for c in classes}
            if classes is not None
            else None,
        )


@dataclass
class GoalAssists:
    scorer: str | None
    assists: list[str] = field(default_factory=list)


@dataclass(frozen=True)
class ClipRef:
    """A video segment backing one game event."""

    event_id: str
    video_ref: str
    start_ms: int
    end_ms: int

    def to_dict(self) -> dict[str, Any]:
        return {
            "event_id": self.event_id,
            "video_ref": self.video_ref,
            "start_ms": self.start_ms,
            "end_ms": self.end_ms,
        }


def is_reset_node(node: ProvNode) -> bool:
    """Chain-origin activities sever lineage; traversal never expands past them."""
    return (
        node.kind.construct is Construct.GAME_ACTION
        and node.attrs.get("reset") is True
    )


def influence_depths(
    graph: ProvGraph, target: str, qf: QueryFilter
) -> dict[str, int]:
    """Minimal activity depth of every node reachable from ``target``.

    0/1 BFS: stepping onto an activity costs 1, anything else is free. The
    target itself is depth 0 regardless of its kind.
    """
    if target not in graph.nodes:
        raise UnknownNode(f"not in graph: {target!r}")
    out_edges: dict[str, list] = {}
    for edge in graph.edges:
        out_edges.setdefault(edge.src, []).append(edge)
    depths = {target: 0}
    queue: deque[str] = deque([target])
    while queue:
        cur = queue.popleft()
        cur_depth = depths[cur]
        blocked = qf.stop_at_reset and is_reset_node(graph.nodes[cur])
        for edge in out_edges.get(cur, ()):
            if blocked and edge.kind.relation in DEPENDENCY_RELATIONS:
                continue
            if (
                qf.connection_classes is not None
                and edge.kind.connection not in qf.connection_classes
            ):
                continue
            dst = graph.nodes[edge.dst]
            step = 1 if dst.kind.top_level is TopLevel.ACTIVITY else 0
            depth = cur_depth + step
            if (
                qf.max_activity_depth is not None
                and depth > qf.max_activity_depth
            ):
                continue
            if edge.dst not in depths or depth < depths[edge.dst]:
                depths[edge.dst] = depth
                if step == 0:
                    queue.appendleft(edge.dst)
                else:
                    queue.append(edge.dst)
    return depths


def trace_influences(
    graph: ProvGraph, target: str, qf: QueryFilter | None = None
) -> ProvGraph:
    """Induced subgraph of everything upstream of ``target``, pruned by ``qf``.

    The result always contains the target, respects ``stop_at_reset`` and,
    when ``connection_classes`` is given, keeps only edges of those classes.
    """
    qf = qf or QueryFilter()
    depths = influence_depths(graph, target, qf)
    kept = set(depths)
    if qf.node_kinds is not None:
        kept = {
            node_id
            for node_id in kept
            if graph.nodes[node_id].kind.construct in qf.node_kinds
        }
        kept.add(target)
    result = graph.subgraph(kept)
    if qf.connection_classes is not None:
        result.edges = [
            e for e in result.edges if e.kind.connection in qf.connection_classes
        ]
        result._edge_keys = {e.key() for e in result.edges}
    return result


def ordered_node_ids(
    graph: ProvGraph, nodes: set[str] | None = None, context: ProvGraph | None = None
) -> list[str]:
    """Deterministic presentation order: ts_ms descending, then id ascending.

    Agents carry no timestamp of their own; they sort by the latest activity
    they are associated with, looked up in ``context`` (useful when ``graph``
    is a filtered result whose attribution edges were pruned away).
    """
    context = context or graph

    def effective_ts(node_id: str) -> int:
        node = graph.nodes[node_id]
        ts = node.attrs.get("ts_ms")
        if isinstance(ts, int):
            return ts
        if node.kind.top_level is TopLevel.AGENT:
            linked = [
                context.nodes[e.src].attrs.get("ts_ms")
                for e in context.edges
                if e.kind.relation is Relation.WAS_ASSOCIATED_WITH
                and e.dst == node_id
                and e.src in context.nodes
            ]
            stamps = [t for t in linked if isinstance(t, int)]
            if stamps:
                return max(stamps)
        return -1

    ids = nodes if nodes is not None else set(graph.nodes)
    return sorted(ids, key=lambda nid: (-effective_ts(nid), nid))


def goal_assists(graph: ProvGraph, goal: str) -> GoalAssists:
    """Scorer and assisting players for a goal state.

    The scorer is the player associated with the generating action; assists
    are players attached to activities one or two activities upstream,
    ordered by descending action timestamp.
    """
    if goal not in graph.nodes:
        raise UnknownNode(f"not in graph: {goal!r}")
    node = graph.nodes[goal]
    if (
        node.kind.construct is not Construct.PHYSICAL_GAME_STATE
        or node.attrs.get("score_type") != "goal"
    ):
        raise NotAGoal(f"{goal!r} is not a goal game state")
    depths = influence_depths(graph, goal, QueryFilter(stop_at_reset=True))
    generators = {
        e.dst
        for e in graph.edges
        if e.kind.relation is Relation.WAS_GENERATED_BY and e.src == goal
    }
    latest_ts: dict[str, int] = {}  # player label -> latest contributing action ts
    scorer: str | None = None
    for edge in graph.edges:
        if edge.kind.relation is not Relation.WAS_ASSOCIATED_WITH:
            continue
        activity_depth = depths.get(edge.src)
        if activity_depth is None or not 1 <= activity_depth <= 2:
            continue
        agent = graph.nodes.get(edge.dst)
        if agent is None or agent.kind.construct is not Construct.PLAYER:
            continue
        ts = graph.nodes[edge.src].attrs.get("ts_ms", 0)
        player = agent.label or agent.id
        latest_ts[player] = max(ts, latest_ts.get(player, ts))
        if edge.src in generators:
            scorer = player
    assists = sorted(
        (p for p in latest_ts if p != scorer),
        key=lambda p: (-latest_ts[p], p),
    )
    return GoalAssists(scorer=scorer, assists=assists)


def drill_down(graph: ProvGraph, metric_node: str) -> list[ClipRef]:
    """Video segments of every game event that contributed to a metric.

    Follows data-dependency edges only: the walk descends through datasets to
    the game events their rows decompose into, and stops there rather than
    continuing along physical causality into the rest of the chain.
    """
    if metric_node not in graph.nodes:
        raise UnknownNode(f"not in graph: {metric_node!r}")
    if graph.nodes[metric_node].kind.construct is not Construct.METRIC:
        raise NotAMetric(f"{metric_node!r} is not a metric entity")
    trace = trace_influences(
        graph, metric_node, QueryFilter(connection_classes={Connection.DATA})
    )
    clips: dict[str, ClipRef] = {}
    for node in trace.nodes.values():
        event_id = node.attrs.get("event_id")
        video_ref = node.attrs.get("video_ref")
        if not event_id or not video_ref or event_id in clips:
            continue
        ts = node.attrs.get("ts_ms", 0)
        start = node.attrs.get("clip_start_ms", max(0, ts - DEFAULT_CLIP_PAD_MS))
        end = node.attrs.get("clip_end_ms", ts + DEFAULT_CLIP_PAD_MS)
        clips[event_id] = ClipRef(event_id, video_ref, start, end)

    def sort_key(clip: ClipRef) -> tuple:
        return (-clip.start_ms, clip.event_id)

    return sorted(clips.values(), key=sort_key)
