"""Timeline annotations to physical provenance chains.

A game is ingested as an ordered stream of :class:`GameEvent` records. Each
on-field action becomes a ``GameAction`` activity that consumes the current
``PhysicalGameState`` and generates the next one; a centre bounce resets the
game state and starts a fresh possession chain with no lineage back into the
previous one. Injuries branch off the concurrent game state; wind gusts are
floating annotations unless explicitly marked as influencing the next action.

Interchange format: JSON Lines, one event per line, snake_case keys matching
the :class:`GameEvent` fields.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from enum import Enum
from typing import Any, Iterable

from .graph import (
    Connection,
    Construct,
    EdgeKind,
    NodeKind,
    ProvEdge,
    ProvError,
    ProvGraph,
    ProvNode,
    Relation,
)


class InvalidEvent(ProvError):
    pass


class OutOfOrderEvent(ProvError):
    pass


class UnknownPlayer(ProvError):
    pass


class NoOpenChain(ProvError):
    pass


class InvalidInterval(ProvError):
    pass


class EventKind(Enum):
    CENTRE_BOUNCE = "CentreBounce"
    TAP = "Tap"
    KICK = "Kick"
    MARK = "Mark"
    GOAL = "Goal"
    BEHIND = "Behind"
    INJURY = "Injury"
    WIND_GUST = "WindGust"


# Possession-chain members; these require a player and advance the game state.
ACTION_KINDS = {
    EventKind.TAP,
    EventKind.KICK,
    EventKind.MARK,
    EventKind.GOAL,
    EventKind.BEHIND,
}
SCORING_KINDS = {EventKind.GOAL, EventKind.BEHIND}


class Terminal(Enum):
    GOAL = "Goal"
    BEHIND = "Behind"
    TURNOVER = "Turnover"
    RESET = "Reset"


@dataclass
class GameEvent:
    """One timestamped timeline annotation referencing a video segment."""

    event_id: str
    ts_ms: int
    kind: EventKind
    player: str | None = None
    target_player: str | None = None
    video_ref: str = ""
    attrs: dict[str, Any] = field(default_factory=dict)

    def __post_init__(self) -> None:
        if self.ts_ms < 0:
            raise InvalidEvent(f"{self.event_id}: ts_ms must be >= 0")
        if self.kind in ACTION_KINDS and not self.player:
            raise InvalidEvent(f"{self.event_id}: {self.kind.value} requires a player")
        if self.kind is EventKind.INJURY:
            if not self.player:
                raise InvalidEvent(f"{self.event_id}: Injury requires a player")
            if "body_part" not in self.attrs:
                raise InvalidEvent(f"{self.event_id}: Injury requires attrs.body_part")

    def to_dict(self) -> dict[str, Any]:
        return {
            "event_id": self.event_id,
            "ts_ms": self.ts_ms,
            "kind": self.kind.value,
            "player": self.player,
            "target_player": self.target_player,
            "video_ref": self.video_ref,
            "attrs": dict(self.attrs),
        }

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "GameEvent":
        try:
            kind = EventKind(d["kind"])
        except (KeyError, ValueError):
            raise InvalidEvent(f"unknown event kind: {d.get('kind')!r}") from None
        if "event_id" not in d or "ts_ms" not in d:
            raise InvalidEvent("event requires event_id and ts_ms")
        return cls(
            event_id=str(d["event_id"]),
            ts_ms=int(d["ts_ms"]),
            kind=kind,
            player=d.get("player"),
            target_player=d.get("target_player"),
            video_ref=d.get("video_ref", "") or "",
            attrs=dict(d.get("attrs") or {}),
        )


@dataclass
class PossessionChain:
    """Events from one centre bounce up to a score or reset."""

    chain_id: str
    start_event: str
    events: list[str] = field(default_factory=list)
    terminal: Terminal | None = None

    def to_dict(self) -> dict[str, Any]:
        return {
            "chain_id": self.chain_id,
            "start_event": self.start_event,
            "events": list(self.events),
            "terminal": self.terminal.value if self.terminal else None,
        }


@dataclass
class IngestDelta:
    """Summary of what one ingested event added to the graph."""

    event_id: str
    nodes: list[str] = field(default_factory=list)
    edges: int = 0
    chain_id: str | None = None
    closed_chain: PossessionChain | None = None
    skipped: bool = False  # already-seen event id (idempotent replay)

    def to_dict(self) -> dict[str, Any]:
        return {
            "event_id": self.event_id,
            "nodes": list(self.nodes),
            "edges": self.edges,
            "chain_id": self.chain_id,
            "closed_chain": self.closed_chain.to_dict() if self.closed_chain else None,
            "skipped": self.skipped,
        }


class GameIngest:
    """Single-writer ingest state for one game.

    Emits provenance into ``graph`` (a private one by default). Node ids are
    derived from event ids, so replaying the same stream into a fresh state
    produces an identical graph, and re-ingesting an already-seen event id is
    a no-op — which makes log replay after a restart safe.

    ``roster`` is optional: when given, events referencing players outside it
    raise :class:`UnknownPlayer`; when omitted the roster is open and players
    are registered on first use (interchange files carry no roster).
    """

    def __init__(
        self,
        game_id: str = "",
        graph: ProvGraph | None = None,
        roster: Iterable[str] | None = None,
        id_prefix: str = "",
    ) -> None:
        self.game_id = game_id
        self.graph = graph if graph is not None else ProvGraph()
        self.roster: set[str] | None = set(roster) if roster is not None else None
        self.prefix = id_prefix
        self.chains: list[PossessionChain] = []
        self.open_chain: PossessionChain | None = None
        self.current_state: str | None = None
        self.last_ts = -1
        self.seen: set[str] = set()
        self._pending_wind: list[str] = []
        self._chain_states: list[str] = []  # state node ids of the open chain
        self._last_action: tuple[str, str | None] | None = None  # (act node, player)

    # -- node id scheme (deterministic per event id) --------------------

    def _nid(self, tag: str, local: str) -> str:
        return f"{self.prefix}{tag}:{local}" if tag else f"{self.prefix}{local}"

    def player_node_id(self, player: str) -> str:
        return self._nid("", player)

    def role_node_id(self, role: str) -> str:
        return self._nid("role", role)

    def state_node_id(self, event_id: str) -> str:
        return self._nid("state", event_id)

    def action_node_id(self, event_id: str) -> str:
        return self._nid("act", event_id)

    def event_index(self) -> dict[str, str]:
        """event_id -> state node id, for decomposing datasets into events."""
        index = {}
        for chain in self.chains + ([self.open_chain] if self.open_chain else []):
            for event_id in chain.events:
                index[event_id] = self.state_node_id(event_id)
        return index

    # -- ingest ----------------------------------------------------------

    def ingest(self, ev: GameEvent) -> IngestDelta:
        if ev.event_id in self.seen:
            return IngestDelta(ev.event_id, skipped=True)
        if ev.ts_ms < self.last_ts:
            raise OutOfOrderEvent(
                f"{ev.event_id}: ts_ms {ev.ts_ms} < last ingested {self.last_ts}"
            )
        self._check_roster(ev.player)
        delta = IngestDelta(ev.event_id)
        if ev.kind is EventKind.CENTRE_BOUNCE:
            self._ingest_bounce(ev, delta)
        elif ev.kind in ACTION_KINDS:
            self._ingest_action(ev, delta)
        elif ev.kind is EventKind.INJURY:
            self._ingest_injury(ev, delta)
        else:
            self._ingest_wind(ev, delta)
        self.last_ts = ev.ts_ms
        self.seen.add(ev.event_id)
        if self.open_chain is not None:
            delta.chain_id = self.open_chain.chain_id
        return delta

    def close_chain(self, terminal: Terminal = Terminal.RESET) -> PossessionChain:
        """Finalize the open chain; subsequent actions need a new bounce."""
        if self.open_chain is None:
            raise NoOpenChain("no possession chain is open")
        chain = self.open_chain
        chain.terminal = terminal
        self.chains.append(chain)
        self.open_chain = None
        self.current_state = None
        self._chain_states = []
        self._pending_wind = []
        self._last_action = None
        return chain

    def bind_role(
        self, player: str, role: str, from_ts: int, to_ts: int | None = None
    ) -> IngestDelta:
        """Bind a player to a role over a validity interval (many:many)."""
        if to_ts is not None and from_ts >= to_ts:
            raise InvalidInterval(f"from_ts {from_ts} must precede to_ts {to_ts}")
        delta = IngestDelta(event_id=f"bind:{player}:{role}:{from_ts}")
        pid = self._ensure_player(player, delta, check_roster=False)
        rid = self.role_node_id(role)
        if rid not in self.graph:
            self.graph.add_node(
                ProvNode(rid, NodeKind.of(Construct.PLAYER_ROLE), label=role)
            )
            delta.nodes.append(rid)
        attrs: dict[str, Any] = {"from_ms": from_ts}
        if to_ts is not None:
            attrs["to_ms"] = to_ts
        added = self.graph.add_edge(
            ProvEdge(
                pid,
                rid,
                EdgeKind(Relation.ACTED_ON_BEHALF_OF, Connection.PHYSICAL),
                attrs=attrs,
            )
        )
        if added is not None:
            delta.edges += 1
        return delta

    # -- per-kind handlers ------------------------------------------------

    def _ingest_bounce(self, ev: GameEvent, delta: IngestDelta) -> None:
        if self.open_chain is not None:
            delta.closed_chain = self.close_chain(Terminal.RESET)
        act_id = self._add_action_node(ev, delta, reset=True)
        state_id = self._add_state_node(ev, delta)
        self._link_generation(state_id, act_id, delta)
        if ev.player:
            self._associate_player(act_id, ev.player, delta)
        chain_id = self._nid("chain", ev.event_id)
        self.open_chain = PossessionChain(chain_id, ev.event_id, [ev.event_id])
        self.current_state = state_id
        self._chain_states = [state_id]
        self._pending_wind = []  # a reset severs any pending wind influence

    def _ingest_action(self, ev: GameEvent, delta: IngestDelta) -> None:
        if self.open_chain is None:
            raise NoOpenChain(f"{ev.event_id}: action before a centre bounce")
        # A score is the outcome of the scorer's most recent action: the
        # Goal/Behind annotation adds the score state, generated by that
        # action, rather than an action of its own. A fresh action is only
        # created when the stream has no matching action to attach to.
        scoring = ev.kind in SCORING_KINDS
        act_id: str | None = None
        if scoring and self._last_action and self._last_action[1] == ev.player:
            act_id = self._last_action[0]
        if act_id is None:
            act_id = self._add_action_node(ev, delta)
            prior = self.current_state
            if prior is not None:
                self.graph.add_edge(
                    ProvEdge(act_id, prior, EdgeKind(Relation.USED, Connection.PHYSICAL))
                )
                delta.edges += 1
            self._associate_player(act_id, ev.player, delta)
        for wind_id in self._pending_wind:
            self.graph.add_edge(
                ProvEdge(act_id, wind_id, EdgeKind(Relation.USED, Connection.PHYSICAL))
            )
            delta.edges += 1
        self._pending_wind = []
        state_id = self._add_state_node(ev, delta)
        self._link_generation(state_id, act_id, delta)
        self.open_chain.events.append(ev.event_id)
        self.open_chain.events.sort(key=lambda eid: (self._ts_of(eid), eid))
        self.current_state = state_id
        self._chain_states.append(state_id)
        self._last_action = (act_id, ev.player)
        if scoring:
            terminal = Terminal.GOAL if ev.kind is EventKind.GOAL else Terminal.BEHIND
            delta.closed_chain = self.close_chain(terminal)

    def _ingest_injury(self, ev: GameEvent, delta: IngestDelta) -> None:
        self._ensure_player(ev.player, delta)
        node_id = self._nid("injury", ev.event_id)
        attrs = {
            "event_id": ev.event_id,
            "ts_ms": ev.ts_ms,
            "video_ref": ev.video_ref,
            "player": ev.player,
            **ev.attrs,
        }
        self.graph.add_node(
            ProvNode(
                node_id,
                NodeKind.of(Construct.PHYSICAL_GAME_STATE),
                label=f"injury {ev.player} ({ev.attrs['body_part']})",
                attrs=attrs,
            )
        )
        delta.nodes.append(node_id)
        if self.current_state is not None:
            self.graph.add_edge(
                ProvEdge(
                    node_id,
                    self.current_state,
                    EdgeKind(Relation.WAS_DERIVED_FROM, Connection.PHYSICAL),
                )
            )
            delta.edges += 1

    def _ingest_wind(self, ev: GameEvent, delta: IngestDelta) -> None:
        node_id = self._nid("wind", ev.event_id)
        attrs = {
            "event_id": ev.event_id,
            "ts_ms": ev.ts_ms,
            "video_ref": ev.video_ref,
            **ev.attrs,
        }
        self.graph.add_node(
            ProvNode(
                node_id,
                NodeKind.of(Construct.PHYSICAL_GAME_STATE),
                label="wind gust",
                attrs=attrs,
            )
        )
        delta.nodes.append(node_id)
        if ev.attrs.get("influence") is True:
            self._pending_wind.append(node_id)

    # -- shared helpers ----------------------------------------------------

    def _ts_of(self, event_id: str) -> int:
        state = self.graph.nodes.get(self.state_node_id(event_id))
        if state is not None:
            return state.attrs.get("ts_ms", 0)
        action = self.graph.nodes.get(self.action_node_id(event_id))
        return action.attrs.get("ts_ms", 0) if action else 0

    def _check_roster(self, player: str | None) -> None:
        if player and self.roster is not None and player not in self.roster:
            raise UnknownPlayer(f"player {player!r} not in roster")

    def _ensure_player(
        self, player: str | None, delta: IngestDelta, check_roster: bool = True
    ) -> str:
        assert player is not None
        if check_roster:
            self._check_roster(player)
        node_id = self.player_node_id(player)
        if node_id not in self.graph:
            self.graph.add_node(
                ProvNode(node_id, NodeKind.of(Construct.PLAYER), label=player)
            )
            delta.nodes.append(node_id)
        return node_id

    def _add_action_node(
        self, ev: GameEvent, delta: IngestDelta, reset: bool = False
    ) -> str:
        act_id = self.action_node_id(ev.event_id)
        attrs: dict[str, Any] = {
            "event_id": ev.event_id,
            "ts_ms": ev.ts_ms,
            "kind": ev.kind.value,
            "video_ref": ev.video_ref,
        }
        if ev.player:
            attrs["player"] = ev.player
        if ev.target_player:
            attrs["target_player"] = ev.target_player
        if reset:
            attrs["reset"] = True
        attrs.update(ev.attrs)
        label = ev.kind.value.lower() + (f" {ev.player}" if ev.player else "")
        self.graph.add_node(
            ProvNode(act_id, NodeKind.of(Construct.GAME_ACTION), label=label, attrs=attrs)
        )
        delta.nodes.append(act_id)
        return act_id

    def _add_state_node(self, ev: GameEvent, delta: IngestDelta) -> str:
        state_id = self.state_node_id(ev.event_id)
        attrs: dict[str, Any] = {
            "event_id": ev.event_id,
            "ts_ms": ev.ts_ms,
            "video_ref": ev.video_ref,
        }
        if ev.kind in SCORING_KINDS:
            attrs["score_type"] = ev.kind.value.lower()
        if ev.player:
            attrs["possession"] = ev.target_player or ev.player
        label = f"game state after {ev.kind.value.lower()} @{ev.ts_ms}"
        self.graph.add_node(
            ProvNode(
                state_id,
                NodeKind.of(Construct.PHYSICAL_GAME_STATE),
                label=label,
                attrs=attrs,
            )
        )
        delta.nodes.append(state_id)
        return state_id

    def _link_generation(self, state_id: str, act_id: str, delta: IngestDelta) -> None:
        self.graph.add_edge(
            ProvEdge(
                state_id, act_id, EdgeKind(Relation.WAS_GENERATED_BY, Connection.PHYSICAL)
            )
        )
        delta.edges += 1

    def _associate_player(
        self, act_id: str, player: str | None, delta: IngestDelta
    ) -> None:
        if not player:
            return
        pid = self._ensure_player(player, delta)
        self.graph.add_edge(
            ProvEdge(
                act_id, pid, EdgeKind(Relation.WAS_ASSOCIATED_WITH, Connection.PHYSICAL)
            )
        )
        delta.edges += 1


def parse_events_jsonl(text: str) -> list[GameEvent]:
    """Parse the JSON Lines interchange format (blank lines ignored)."""
    events = []
    for lineno, line in enumerate(text.splitlines(), start=1):
        if not line.strip():
            continue
        try:
            record = json.loads(line)
        except json.JSONDecodeError as exc:
            raise InvalidEvent(f"line {lineno}: not valid JSON ({exc.msg})") from None
        events.append(GameEvent.from_dict(record))
    return events


def events_to_jsonl(events: Iterable[GameEvent]) -> str:
    return "".join(
        json.dumps(ev.to_dict(), ensure_ascii=False, sort_keys=True) + "\n"
        for ev in events
    )
