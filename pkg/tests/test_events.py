from __future__ import annotations

import random

import pytest

from sportprov.events import (
    EventKind,
    GameEvent,
    GameIngest,
    InvalidEvent,
    InvalidInterval,
    NoOpenChain,
    OutOfOrderEvent,
    Terminal,
    UnknownPlayer,
    events_to_jsonl,
    parse_events_jsonl,
)
from sportprov.graph import Construct, Relation
from support import build_goal_chain, fixture_events, random_event_stream


def test_goal_chain_shape():
    ingest = build_goal_chain()
    assert len(ingest.chains) == 1
    chain = ingest.chains[0]
    assert chain.events == ["e1", "e2", "e4", "e5", "e6"]
    assert chain.terminal is Terminal.GOAL
    g = ingest.graph
    activities = [
        n for n in g.nodes.values() if n.kind.construct is Construct.GAME_ACTION
    ]
    chain_states = [
        n
        for n in g.nodes.values()
        if n.kind.construct is Construct.PHYSICAL_GAME_STATE
        and not n.id.startswith("injury")
    ]
    assert len(activities) == 4  # bounce, tap, kick, kick; the goal is a state
    assert len(chain_states) == 5
    assert {"P3", "P12", "P7"} <= set(g.nodes)
    assert all(
        g.nodes[p].kind.construct is Construct.PLAYER for p in ("P3", "P12", "P7")
    )


def test_goal_state_generated_by_scoring_kick():
    g = build_goal_chain().graph
    gen = [e for e in g.edges if e.src == "state:e6" and e.kind.relation is Relation.WAS_GENERATED_BY]
    assert len(gen) == 1 and gen[0].dst == "act:e5"
    assert g.nodes["state:e6"].attrs["score_type"] == "goal"


def test_injury_branches_off_concurrent_state():
    ingest = build_goal_chain()
    g = ingest.graph
    edges = [e for e in g.edges if e.src == "injury:e3"]
    assert len(edges) == 1
    assert edges[0].dst == "state:e2"  # the post-tap state
    assert edges[0].kind.relation is Relation.WAS_DERIVED_FROM
    assert "e3" not in ingest.chains[0].events


def test_out_of_order_event():
    ingest = GameIngest("g")
    ingest.ingest(GameEvent("a", 0, EventKind.CENTRE_BOUNCE))
    ingest.ingest(GameEvent("b", 10, EventKind.KICK, player="P12"))
    with pytest.raises(OutOfOrderEvent):
        ingest.ingest(GameEvent("c", 4, EventKind.TAP, player="P3"))


def test_action_before_bounce():
    ingest = GameIngest("g")
    with pytest.raises(NoOpenChain):
        ingest.ingest(GameEvent("a", 0, EventKind.KICK, player="P1"))


def test_action_after_score_needs_new_bounce():
    ingest = GameIngest("g")
    ingest.ingest(GameEvent("a", 0, EventKind.CENTRE_BOUNCE))
    ingest.ingest(GameEvent("b", 5, EventKind.GOAL, player="P1"))
    with pytest.raises(NoOpenChain):
        ingest.ingest(GameEvent("c", 9, EventKind.KICK, player="P1"))
    ingest.ingest(GameEvent("d", 12, EventKind.CENTRE_BOUNCE))
    ingest.ingest(GameEvent("e", 15, EventKind.KICK, player="P1"))
    assert ingest.open_chain is not None


def test_goal_then_bounce_reopens():
    ingest = GameIngest("g")
    for ev in fixture_events():
        ingest.ingest(ev)
    ingest.ingest(GameEvent("e7", 40000, EventKind.CENTRE_BOUNCE))
    assert ingest.chains[0].terminal is Terminal.GOAL
    assert ingest.open_chain is not None
    assert ingest.open_chain.start_event == "e7"


def test_reset_without_score():
    ingest = GameIngest("g")
    ingest.ingest(GameEvent("a", 0, EventKind.CENTRE_BOUNCE))
    ingest.ingest(GameEvent("b", 5, EventKind.TAP, player="P3"))
    ingest.ingest(GameEvent("c", 40, EventKind.CENTRE_BOUNCE))
    assert ingest.chains[0].terminal is Terminal.RESET


def test_close_chain_without_open():
    ingest = GameIngest("g")
    with pytest.raises(NoOpenChain):
        ingest.close_chain()


def test_reset_breaks_lineage():
    ingest = GameIngest("g")
    ingest.ingest(GameEvent("a", 0, EventKind.CENTRE_BOUNCE))
    ingest.ingest(GameEvent("b", 5, EventKind.KICK, player="P3"))
    ingest.ingest(GameEvent("c", 40, EventKind.CENTRE_BOUNCE))
    g = ingest.graph
    # the new origin state has no dependency edges leaving its generator
    assert [e for e in g.edges if e.src == "act:c" and e.kind.relation is Relation.USED] == []


def test_roster_enforced_when_given():
    ingest = GameIngest("g", roster=["P3", "P7"])
    ingest.ingest(GameEvent("a", 0, EventKind.CENTRE_BOUNCE))
    with pytest.raises(UnknownPlayer):
        ingest.ingest(GameEvent("b", 5, EventKind.KICK, player="P99"))
    ingest.ingest(GameEvent("c", 9, EventKind.KICK, player="P7"))


def test_roster_bind_intervals():
    ingest = GameIngest("g")
    d1 = ingest.bind_role("P7", "Half Forward", 0)
    assert d1.edges == 1
    d2 = ingest.bind_role("P3", "Ruck", 0, 3000)
    d3 = ingest.bind_role("P3", "Bench", 3000)
    assert d2.edges == 1 and d3.edges == 1
    bind_edges = [
        e for e in ingest.graph.edges if e.kind.relation is Relation.ACTED_ON_BEHALF_OF
    ]
    assert len(bind_edges) == 3
    p3_edges = [e for e in bind_edges if e.src == "P3"]
    intervals = sorted(
        (e.attrs["from_ms"], e.attrs.get("to_ms")) for e in p3_edges
    )
    assert intervals == [(0, 3000), (3000, None)]
    with pytest.raises(InvalidInterval):
        ingest.bind_role("P3", "Ruck", 10, 5)


def test_roster_bind_idempotent():
    ingest = GameIngest("g")
    ingest.bind_role("P7", "Half Forward", 0)
    d = ingest.bind_role("P7", "Half Forward", 0)
    assert d.edges == 0


def test_replay_is_deterministic():
    a = build_goal_chain().graph
    b = build_goal_chain().graph
    assert a == b


def test_reingesting_seen_event_is_noop():
    ingest = GameIngest("g")
    events = fixture_events()
    for ev in events:
        ingest.ingest(ev)
    snapshot = ingest.graph.copy()
    for ev in events:
        delta = ingest.ingest(ev)
        assert delta.skipped
    assert ingest.graph == snapshot


def test_event_validation():
    with pytest.raises(InvalidEvent):
        GameEvent("x", -1, EventKind.CENTRE_BOUNCE)
    with pytest.raises(InvalidEvent):
        GameEvent("x", 0, EventKind.TAP)
    with pytest.raises(InvalidEvent):
        GameEvent("x", 0, EventKind.INJURY, player="P3")


def test_jsonl_round_trip():
    events = fixture_events()
    text = events_to_jsonl(events)
    parsed = parse_events_jsonl(text)
    assert parsed == events
    with pytest.raises(InvalidEvent):
        parse_events_jsonl('{"event_id": "x"\n')


def test_wind_gust_floating_by_default():
    ingest = GameIngest("g")
    ingest.ingest(GameEvent("a", 0, EventKind.CENTRE_BOUNCE))
    ingest.ingest(GameEvent("w", 3, EventKind.WIND_GUST))
    ingest.ingest(GameEvent("b", 5, EventKind.KICK, player="P3"))
    g = ingest.graph
    assert "wind:w" in g
    assert [e for e in g.edges if e.dst == "wind:w"] == []


def test_wind_gust_influences_next_action_when_marked():
    ingest = GameIngest("g")
    ingest.ingest(GameEvent("a", 0, EventKind.CENTRE_BOUNCE))
    ingest.ingest(GameEvent("w", 3, EventKind.WIND_GUST, attrs={"influence": True}))
    ingest.ingest(GameEvent("b", 5, EventKind.KICK, player="P3"))
    g = ingest.graph
    used = [e for e in g.edges if e.src == "act:b" and e.dst == "wind:w"]
    assert len(used) == 1 and used[0].kind.relation is Relation.USED


def test_wind_influence_does_not_cross_reset():
    ingest = GameIngest("g")
    ingest.ingest(GameEvent("a", 0, EventKind.CENTRE_BOUNCE))
    ingest.ingest(GameEvent("w", 3, EventKind.WIND_GUST, attrs={"influence": True}))
    ingest.ingest(GameEvent("c", 7, EventKind.CENTRE_BOUNCE))
    ingest.ingest(GameEvent("b", 9, EventKind.KICK, player="P3"))
    assert [e for e in ingest.graph.edges if e.dst == "wind:w"] == []


def test_chains_partition_action_events():
    rng = random.Random(5)
    for _ in range(15):
        ingest = GameIngest("g")
        events = random_event_stream(rng, 60)
        for ev in events:
            ingest.ingest(ev)
        chains = ingest.chains + ([ingest.open_chain] if ingest.open_chain else [])
        seen: set[str] = set()
        for chain in chains:
            for event_id in chain.events:
                assert event_id not in seen
                seen.add(event_id)
        action_ids = {
            ev.event_id
            for ev in events
            if ev.kind in (EventKind.TAP, EventKind.KICK, EventKind.MARK, EventKind.GOAL, EventKind.BEHIND)
        }
        assert action_ids <= seen


def test_action_uses_nearest_preceding_state():
    rng = random.Random(9)
    ingest = GameIngest("g")
    events = random_event_stream(rng, 80)
    for ev in events:
        ingest.ingest(ev)
    g = ingest.graph
    by_id = {ev.event_id: ev for ev in events}
    for node in g.nodes.values():
        if node.kind.construct is not Construct.GAME_ACTION or node.attrs.get("reset"):
            continue
        used_states = [
            e.dst
            for e in g.edges
            if e.src == node.id
            and e.kind.relation is Relation.USED
            and not e.dst.startswith("wind")
        ]
        assert len(used_states) == 1
        state_ts = g.nodes[used_states[0]].attrs["ts_ms"]
        assert state_ts <= by_id[node.attrs["event_id"]].ts_ms


def test_graph_validates_on_random_streams():
    rng = random.Random(21)
    for _ in range(10):
        ingest = GameIngest("g")
        for ev in random_event_stream(rng, 50):
            ingest.ingest(ev)
        assert ingest.graph.validate() == []
