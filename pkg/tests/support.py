"""Shared fixtures, random-instance generators and independent oracles.

The oracles deliberately use different algorithms from the library (edge-list
Bellman-Ford relaxation instead of 0/1 BFS, set algebra instead of indexed
adjacency) so that agreement between the two is meaningful.
"""

from __future__ import annotations

import random
from typing import Any

from sportprov.graph import (
    Connection,
    Construct,
    DEPENDENCY_RELATIONS,
    EdgeKind,
    NodeKind,
    ProvEdge,
    ProvGraph,
    ProvNode,
    RELATION_SIGNATURE,
    Relation,
    TopLevel,
)
from sportprov.events import EventKind, GameEvent, GameIngest, events_to_jsonl
from sportprov.query import QueryFilter, is_reset_node
from sportprov.workflow import StepDef, WireEdge, WorkflowDef, WorkflowEngine

PLAYERS = ["P3", "P7", "P12"]


# -- the goal-chain fixture (motivating scenario) --------------------------


def fixture_events(video: str = "game1.mp4") -> list[GameEvent]:
    """Centre bounce, tap by P3, kick by P12, kick by P7, goal by P7, with a
    mid-chain injury annotation for P3."""
    return [
        GameEvent("e1", 0, EventKind.CENTRE_BOUNCE, video_ref=video),
        GameEvent("e2", 2000, EventKind.TAP, player="P3", target_player="P12", video_ref=video),
        GameEvent("e3", 5000, EventKind.INJURY, player="P3", video_ref=video, attrs={"body_part": "knee"}),
        GameEvent("e4", 10000, EventKind.KICK, player="P12", target_player="P7", video_ref=video),
        GameEvent("e5", 18000, EventKind.KICK, player="P7", video_ref=video),
        GameEvent("e6", 20000, EventKind.GOAL, player="P7", video_ref=video),
    ]


def build_goal_chain(roster: list[str] | None = None) -> GameIngest:
    ingest = GameIngest("game1", roster=roster)
    for ev in fixture_events():
        ingest.ingest(ev)
    return ingest


GOAL_STATE = "state:e6"  # score state of the fixture


# -- random event streams ---------------------------------------------------


def random_event_stream(rng: random.Random, n_events: int, roster: list[str] | None = None) -> list[GameEvent]:
    """A valid, ordered annotation stream: bounces open chains, actions need
    an open chain, goals/behinds close chains."""
    roster = roster or PLAYERS
    events: list[GameEvent] = []
    ts = 0
    open_chain = False
    counter = 0

    def next_id() -> str:
        nonlocal counter
        counter += 1
        return f"r{counter}"

    while len(events) < n_events:
        ts += rng.randint(1, 4000)
        if not open_chain:
            events.append(GameEvent(next_id(), ts, EventKind.CENTRE_BOUNCE, video_ref="v.mp4"))
            open_chain = True
            continue
        roll = rng.random()
        player = rng.choice(roster)
        if roll < 0.1:
            events.append(GameEvent(next_id(), ts, EventKind.CENTRE_BOUNCE, video_ref="v.mp4"))
        elif roll < 0.18:
            events.append(
                GameEvent(
                    next_id(), ts, EventKind.INJURY, player=player,
                    video_ref="v.mp4", attrs={"body_part": rng.choice(["knee", "ankle"])},
                )
            )
        elif roll < 0.24:
            attrs = {"influence": True} if rng.random() < 0.5 else {}
            events.append(GameEvent(next_id(), ts, EventKind.WIND_GUST, video_ref="v.mp4", attrs=attrs))
        elif roll < 0.40:
            kind = EventKind.GOAL if rng.random() < 0.6 else EventKind.BEHIND
            events.append(GameEvent(next_id(), ts, kind, player=player, video_ref="v.mp4"))
            open_chain = False
        else:
            kind = rng.choice([EventKind.TAP, EventKind.KICK, EventKind.MARK])
            events.append(GameEvent(next_id(), ts, kind, player=player, video_ref="v.mp4"))
    return events


# -- random valid provenance graphs ----------------------------------------

_CONSTRUCT_POOL = list(Construct) + [None, None, None]
_WEIRD_IDS = ["näöde {}", "id {}:x", "a/{}.b", "N{}"]


def _random_scalar(rng: random.Random) -> Any:
    roll = rng.random()
    if roll < 0.3:
        return rng.choice(["high", "low", "täst", 'quo"te', "multi\nline", ""])
    if roll < 0.55:
        return rng.randint(-1000, 1000)
    if roll < 0.7:
        return round(rng.uniform(-5, 5), 3)
    if roll < 0.8:
        return rng.random() < 0.5
    if roll < 0.9:
        return None
    if roll < 0.95:
        return [rng.randint(0, 9) for _ in range(rng.randint(0, 3))]
    return {"k": rng.randint(0, 9), "nested": {"deep": "värde"}}


def _random_attrs(rng: random.Random, foreign_ns: bool) -> dict[str, Any]:
    attrs = {}
    for _ in range(rng.randint(0, 3)):
        key = rng.choice(["ts_ms", "note", "weird key", "värdegrund", "a:b:c", "x"])
        attrs[key] = _random_scalar(rng)
    if foreign_ns and rng.random() < 0.3:
        attrs["vt:id"] = rng.randint(0, 99)
    return attrs


def random_valid_graph(rng: random.Random, max_nodes: int = 200) -> ProvGraph:
    graph = ProvGraph()
    foreign = rng.random() < 0.3
    if foreign:
        graph.namespaces["vt"] = "http://example.org/vt#"
    n = rng.randint(1, max_nodes)
    node_ids: list[str] = []
    for i in range(n):
        construct = rng.choice(_CONSTRUCT_POOL)
        kind = (
            NodeKind.of(construct)
            if construct is not None
            else NodeKind(rng.choice(list(TopLevel)))
        )
        node_id = rng.choice(_WEIRD_IDS).format(i) if rng.random() < 0.2 else f"n{i}"
        attrs = _random_attrs(rng, foreign)
        if construct is Construct.VIDEO_FEED:
            lo, hi = sorted((rng.randint(0, 99000), rng.randint(0, 99000)))
            attrs.update({"video_ref": "v.mp4", "start_ms": lo, "end_ms": hi})
        if construct is Construct.GAME_ACTION and rng.random() < 0.25:
            attrs["reset"] = True
        label = rng.choice(["", "göal", "plain label", 'l"bl'])
        graph.add_node(ProvNode(node_id, kind, label=label, attrs=attrs))
        node_ids.append(node_id)

    by_level: dict[TopLevel, list[tuple[int, str]]] = {t: [] for t in TopLevel}
    for idx, node_id in enumerate(node_ids):
        by_level[graph.nodes[node_id].kind.top_level].append((idx, node_id))

    generated: set[str] = set()
    for _ in range(rng.randint(0, 3 * n)):
        relation = rng.choice(list(Relation))
        want_src, want_dst = RELATION_SIGNATURE[relation]
        if not by_level[want_src] or not by_level[want_dst]:
            continue
        src_idx, src = rng.choice(by_level[want_src])
        dst_idx, dst = rng.choice(by_level[want_dst])
        if relation in DEPENDENCY_RELATIONS and src_idx <= dst_idx:
            continue  # dependency edges point at earlier nodes: acyclic by index
        if src == dst:
            continue
        if relation is Relation.WAS_GENERATED_BY and src in generated:
            continue
        src_node, dst_node = graph.nodes[src], graph.nodes[dst]
        if src_node.kind.is_physical and dst_node.kind.is_physical:
            connection = rng.choice([Connection.PHYSICAL, Connection.DATA, None])
        else:
            connection = rng.choice([Connection.DATA, None])
        label = rng.choice([None, None, "assisted by"])
        attrs = _random_attrs(rng, foreign) if rng.random() < 0.3 else {}
        edge = ProvEdge(src, dst, EdgeKind(relation, connection), label=label, attrs=attrs)
        if graph.add_edge(edge) is not None and relation is Relation.WAS_GENERATED_BY:
            generated.add(src)
    return graph


def random_filter(rng: random.Random) -> QueryFilter:
    kinds = None
    if rng.random() < 0.4:
        kinds = set(rng.sample(list(Construct), rng.randint(1, 4)))
    depth = rng.choice([None, None, 0, 1, 2, 3, 5])
    classes = None
    if rng.random() < 0.3:
        classes = set(rng.sample(list(Connection), rng.randint(1, 2)))
    return QueryFilter(
        node_kinds=kinds,
        max_activity_depth=depth,
        stop_at_reset=rng.random() < 0.7,
        connection_classes=classes,
    )


# -- workflow fixtures -------------------------------------------------------


def goalpct_events() -> list[GameEvent]:
    """P7 scores three goals and one behind (at 19s); P3 contributes taps."""
    events = []
    ts, n = 0, 0

    def ev(kind: EventKind, player: str | None = None, at: int | None = None) -> GameEvent:
        nonlocal ts, n
        n += 1
        ts = at if at is not None else ts + 1000
        return GameEvent(f"g{n}", ts, kind, player=player, video_ref="game1.mp4")

    for _ in range(3):
        events.append(ev(EventKind.CENTRE_BOUNCE))
        events.append(ev(EventKind.TAP, "P3"))
        events.append(ev(EventKind.KICK, "P7"))
        events.append(ev(EventKind.GOAL, "P7"))
    events.append(ev(EventKind.CENTRE_BOUNCE))
    events.append(ev(EventKind.KICK, "P7", at=18000))
    events.append(ev(EventKind.BEHIND, "P7", at=19000))
    return events


def goalpct_jsonl() -> str:
    return events_to_jsonl(goalpct_events())


def goalpct_workflow(workflow_id: str = "goalpct") -> WorkflowDef:
    """The de-identified metric pipeline: load, anonymise, compute, re-identify."""
    return WorkflowDef(
        workflow_id,
        steps=[
            StepDef("load", builtin="load_events"),
            StepDef(
                "deid",
                builtin="join_mapping",
                params={"direction": "deidentify", "fields": ["player", "target_player"]},
            ),
            StepDef("pct", builtin="compute_goal_pct"),
            StepDef(
                "reid",
                builtin="join_mapping",
                params={"direction": "reidentify", "fields": ["player"]},
            ),
        ],
        edges=[
            WireEdge("load", "table", "deid", "table"),
            WireEdge("deid", "table", "pct", "table"),
            WireEdge("pct", "table", "reid", "table"),
        ],
    )


def windy_workflow(workflow_id: str = "windy") -> WorkflowDef:
    """Goal% adjusted by the wind sensor, with an unrelated counting branch."""
    return WorkflowDef(
        workflow_id,
        steps=[
            StepDef("load", builtin="load_events"),
            StepDef("pct", builtin="compute_goal_pct"),
            StepDef("by_kind", builtin="count_by", params={"key": "kind"}),
        ],
        edges=[
            WireEdge("load", "table", "pct", "table"),
            WireEdge("load", "table", "by_kind", "table"),
        ],
    )


# -- random pipelines for incremental testing --------------------------------

_MAPPING = {"P3": "Ax03", "P7": "Ax07", "P12": "Ax12"}


def random_pipeline(
    rng: random.Random, workflow_id: str, max_steps: int = 8
) -> tuple[WorkflowDef, dict[str, Any]]:
    """A random type-correct DAG over the builtin registry plus matching root
    inputs. Pipelines are constructed so no step can fail (mapping domains are
    tracked so de/re-identification always resolves)."""
    steps = [StepDef("load", builtin="load_events")]
    edges: list[WireEdge] = []
    # (step_id, port) -> "raw" | "coded" player namespace in that table
    table_ports: list[tuple[str, str, str]] = [("load", "table", "raw")]
    inputs: dict[str, Any] = {
        "load.source": events_to_jsonl(random_event_stream(rng, rng.randint(4, 25)))
    }
    n_extra = rng.randint(1, max_steps - 2)
    for i in range(n_extra):
        sid = f"s{i}"
        src_step, src_port, namespace = rng.choice(table_ports)
        choice = rng.random()
        if choice < 0.3:
            field = rng.choice(["kind", "player"])
            value = rng.choice(
                ["Goal", "Behind", "Kick", "Tap"] if field == "kind" else PLAYERS
            )
            steps.append(
                StepDef(sid, builtin="filter_events", params={"field": field, "equals": value})
            )
            edges.append(WireEdge(src_step, src_port, sid, "table"))
            table_ports.append((sid, "table", namespace))
        elif choice < 0.5:
            steps.append(
                StepDef(sid, builtin="count_by", params={"key": rng.choice(["kind", "player"])})
            )
            edges.append(WireEdge(src_step, src_port, sid, "table"))
            # counted rows no longer carry raw/coded player fields safely; stop mapping them
            table_ports.append((sid, "table", "counted"))
        elif choice < 0.7:
            steps.append(StepDef(sid, builtin="compute_goal_pct"))
            edges.append(WireEdge(src_step, src_port, sid, "table"))
            table_ports.append((sid, "table", namespace))
        elif choice < 0.85 and namespace in ("raw", "coded"):
            direction = "deidentify" if namespace == "raw" else "reidentify"
            fields = ["player", "target_player"] if namespace == "raw" else ["player"]
            steps.append(
                StepDef(
                    sid,
                    builtin="join_mapping",
                    params={"direction": direction, "fields": fields},
                )
            )
            edges.append(WireEdge(src_step, src_port, sid, "table"))
            inputs[f"{sid}.mapping"] = dict(_MAPPING)
            table_ports.append(
                (sid, "table", "coded" if direction == "deidentify" else "raw")
            )
        else:
            steps.append(StepDef(sid, builtin="export_table"))
            edges.append(WireEdge(src_step, src_port, sid, "table"))
    return WorkflowDef(workflow_id, steps, edges), inputs


def pipeline_dirty_closure(defn: WorkflowDef, changed_inputs: set[str], changed_steps: set[str]) -> set[str]:
    """Independent dirty-closure computation from the definition alone."""
    seeds = set(changed_steps)
    for step in defn.steps:
        for port in step.inputs:
            if f"{step.step_id}.{port}" in changed_inputs:
                seeds.add(step.step_id)
    out_adj: dict[str, set[str]] = {}
    for e in defn.edges:
        out_adj.setdefault(e.src_step, set()).add(e.dst_step)
    closure = set(seeds)
    stack = list(seeds)
    while stack:
        for nxt in out_adj.get(stack.pop(), ()):
            if nxt not in closure:
                closure.add(nxt)
                stack.append(nxt)
    return closure


def check_provenance_completeness(engine: WorkflowEngine, wf_id: str) -> None:
    """Every step output entity must reach every root entity feeding its
    transitive upstream, along used/generated/derived edges."""
    state = engine.workflows[wf_id]
    defn = state.defn
    producers = {(e.dst_step, e.dst_port): e for e in defn.edges}

    def ancestor_roots(step_id: str, seen: set[str]) -> set[str]:
        if step_id in seen:
            return set()
        seen.add(step_id)
        roots: set[str] = set()
        step = defn.step(step_id)
        for port in step.inputs:
            edge = producers.get((step_id, port))
            if edge is not None:
                roots |= ancestor_roots(edge.src_step, seen)
            else:
                name = f"{step_id}.{port}"
                entity = state.slot_entities.get(f"input:{name}")
                if entity is not None:
                    roots.add(entity)
        return roots

    graph = engine.graph
    adjacency: dict[str, set[str]] = {}
    for e in graph.edges:
        if e.kind.relation in DEPENDENCY_RELATIONS:
            adjacency.setdefault(e.src, set()).add(e.dst)

    def reaches(start: str, goal: str) -> bool:
        stack, seen = [start], set()
        while stack:
            cur = stack.pop()
            if cur == goal:
                return True
            if cur in seen:
                continue
            seen.add(cur)
            stack.extend(adjacency.get(cur, ()))
        return False

    for step in defn.steps:
        for port in step.outputs:
            entity = state.slot_entities.get(f"output:{step.step_id}.{port}")
            assert entity is not None, f"no output entity for {step.step_id}.{port}"
            for root in ancestor_roots(step.step_id, set()):
                assert reaches(entity, root), (
                    f"{entity} cannot reach contributing input {root}"
                )


# -- trace oracle -----------------------------------------------------------


def oracle_trace(
    graph: ProvGraph, target: str, qf: QueryFilter
) -> tuple[set[str], set[tuple]]:
    """Brute-force reverse reachability with post-hoc filtering.

    Bellman-Ford relaxation over the raw edge list: the activity depth of a
    node is the minimum number of activity nodes stepped onto along any
    admissible path from the target (the target itself is free).
    """
    INF = float("inf")
    depth: dict[str, Any] = {node_id: INF for node_id in graph.nodes}
    depth[target] = 0
    changed = True
    while changed:
        changed = False
        for edge in graph.edges:
            if depth[edge.src] is INF:
                continue
            if (
                qf.stop_at_reset
                and is_reset_node(graph.nodes[edge.src])
                and edge.kind.relation in DEPENDENCY_RELATIONS
            ):
                continue
            if (
                qf.connection_classes is not None
                and edge.kind.connection not in qf.connection_classes
            ):
                continue
            step = 1 if graph.nodes[edge.dst].kind.top_level is TopLevel.ACTIVITY else 0
            candidate = depth[edge.src] + step
            if candidate < depth[edge.dst]:
                depth[edge.dst] = candidate
                changed = True
    kept = {
        node_id
        for node_id, d in depth.items()
        if d is not INF
        and (qf.max_activity_depth is None or d <= qf.max_activity_depth)
    }
    if qf.node_kinds is not None:
        kept = {n for n in kept if graph.nodes[n].kind.construct in qf.node_kinds}
        kept.add(target)
    edges = {
        edge.key()
        for edge in graph.edges
        if edge.src in kept
        and edge.dst in kept
        and (
            qf.connection_classes is None
            or edge.kind.connection in qf.connection_classes
        )
    }
    return kept, edges
