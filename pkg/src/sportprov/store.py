"""Persistent application state shared by the CLI and the HTTP service.

One store owns one provenance graph. Game ingests write physical provenance
into it (node ids are prefixed with the game id); the workflow engine writes
computation provenance into the same graph and resolves event ids back to
game-state nodes, which is what lets a metric drill all the way down to video
segments.

Persistence is a write-ahead JSON-Lines log per game (events and role binds,
appended before the in-memory mutation is considered durable) plus a snapshot
pair: the full graph as a ``.sprov`` document and the remaining state as
JSON. Loading prefers the snapshot and then replays any write-ahead records
it does not know yet; ingest is idempotent on event ids, so an overlap
between snapshot and log is harmless.
"""

from __future__ import annotations

import json
import re
from pathlib import Path
from typing import Any, Iterable

from .events import GameEvent, GameIngest, PossessionChain, Terminal, events_to_jsonl
from .graph import ProvGraph
from .interop import parse_document, serialize
from .privacy import merge_external
from .workflow import WorkflowEngine

_SAFE_GAME_ID = re.compile(r"[A-Za-z0-9_\-]+")


class Store:
    def __init__(self, root: str | Path | None = None) -> None:
        self.root = Path(root) if root is not None else None
        self.graph = ProvGraph()
        self.games: dict[str, GameIngest] = {}
        self.events: dict[str, list[GameEvent]] = {}
        self.engine = WorkflowEngine(graph=self.graph, resolve_event=self._resolve_event)
        # workflow input name -> game id, for live re-feeding on ingest
        self.bindings: dict[str, dict[str, str]] = {}
        self._event_index: dict[str, str] = {}
        if self.root is not None:
            self.root.mkdir(parents=True, exist_ok=True)
            self._load()

    # -- games -----------------------------------------------------------

    def game(self, game_id: str, roster: Iterable[str] | None = None) -> GameIngest:
        if not _SAFE_GAME_ID.fullmatch(game_id):
            raise ValueError(f"game id must be alphanumeric: {game_id!r}")
        ingest = self.games.get(game_id)
        if ingest is None:
            ingest = GameIngest(
                game_id, graph=self.graph, roster=roster, id_prefix=f"{game_id}:"
            )
            self.games[game_id] = ingest
            self.events[game_id] = []
        return ingest

    def ingest_event(self, game_id: str, ev: GameEvent, log: bool = True):
        ingest = self.game(game_id)
        delta = ingest.ingest(ev)
        if not delta.skipped:
            self.events[game_id].append(ev)
            self._event_index[ev.event_id] = ingest.state_node_id(ev.event_id)
            if log:
                self._append_wal(game_id, {"type": "event", **ev.to_dict()})
        return delta

    def bind_role(
        self, game_id: str, player: str, role: str, from_ts: int, to_ts: int | None = None
    ):
        ingest = self.game(game_id)
        delta = ingest.bind_role(player, role, from_ts, to_ts)
        self._append_wal(
            game_id,
            {"type": "bind", "player": player, "role": role, "from_ts": from_ts, "to_ts": to_ts},
        )
        return delta

    def game_events_jsonl(self, game_id: str) -> str:
        return events_to_jsonl(self.events.get(game_id, []))

    def chains(self, game_id: str) -> dict[str, Any]:
        ingest = self.game(game_id)
        return {
            "finalized": [c.to_dict() for c in ingest.chains],
            "open": ingest.open_chain.to_dict() if ingest.open_chain else None,
        }

    def _resolve_event(self, event_id: str) -> str | None:
        return self._event_index.get(event_id)

    # -- workflows ---------------------------------------------------------

    def bind_workflow_input(self, wf_id: str, input_name: str, game_id: str) -> None:
        self.bindings.setdefault(wf_id, {})[input_name] = game_id

    def refresh_bound_inputs(self, wf_id: str) -> None:
        for input_name, game_id in self.bindings.get(wf_id, {}).items():
            self.engine.set_input(wf_id, input_name, self.game_events_jsonl(game_id))

    def workflows_bound_to(self, game_id: str) -> list[str]:
        return sorted(
            wf_id
            for wf_id, binds in self.bindings.items()
            if game_id in binds.values()
        )

    # -- import/export -------------------------------------------------------

    def export_sprov(self, boundary: Iterable[str] | None = None) -> str:
        from .privacy import export_partial

        if boundary:
            return export_partial(self.graph, set(boundary)).render()
        return serialize(self.graph)

    def import_sprov(self, text: str) -> dict[str, int]:
        document = parse_document(text)
        if len(self.graph) == 0:
            # bootstrap: loading a (possibly partial) document into an empty
            # store is a plain load, not a frontier stitch — this is how a
            # collaborator receives the club's shared graph in the first place
            merged = document.to_graph()
        else:
            merged = merge_external(self.graph, document)
        added_nodes = len(merged.nodes) - len(self.graph.nodes)
        added_edges = len(merged.edges) - len(self.graph.edges)
        self._swap_graph(merged)
        return {"nodes_added": added_nodes, "edges_added": added_edges}

    def _swap_graph(self, graph: ProvGraph) -> None:
        self.graph = graph
        self.engine.graph = graph
        for ingest in self.games.values():
            ingest.graph = graph

    # -- persistence -----------------------------------------------------

    def _wal_path(self, game_id: str) -> Path:
        assert self.root is not None
        return self.root / f"events-{game_id}.jsonl"

    def _append_wal(self, game_id: str, record: dict[str, Any]) -> None:
        if self.root is None:
            return
        with self._wal_path(game_id).open("a", encoding="utf-8") as fh:
            fh.write(json.dumps(record, ensure_ascii=False, sort_keys=True) + "\n")

    def save(self) -> None:
        """Write the snapshot pair (graph document + JSON state)."""
        if self.root is None:
            return
        (self.root / "snapshot.sprov").write_text(serialize(self.graph), encoding="utf-8")
        state = {
            "engine": self.engine.dump_state(),
            "bindings": self.bindings,
            "event_index": self._event_index,
            "games": {
                game_id: _ingest_state(ingest, self.events[game_id])
                for game_id, ingest in self.games.items()
            },
        }
        (self.root / "state.json").write_text(
            json.dumps(state, ensure_ascii=False, sort_keys=True, indent=1),
            encoding="utf-8",
        )

    def _load(self) -> None:
        assert self.root is not None
        state_path = self.root / "state.json"
        snapshot_path = self.root / "snapshot.sprov"
        if state_path.exists() and snapshot_path.exists():
            graph = parse_document(snapshot_path.read_text(encoding="utf-8")).to_graph()
            self._swap_graph(graph)
            state = json.loads(state_path.read_text(encoding="utf-8"))
            self.engine.load_state(state.get("engine", {}))
            self.bindings = state.get("bindings", {})
            self._event_index = state.get("event_index", {})
            for game_id, blob in state.get("games", {}).items():
                ingest = GameIngest(game_id, graph=self.graph, id_prefix=f"{game_id}:")
                events = _restore_ingest(ingest, blob)
                self.games[game_id] = ingest
                self.events[game_id] = events
        # replay write-ahead records the snapshot has not seen yet
        for wal in sorted(self.root.glob("events-*.jsonl")):
            game_id = wal.stem[len("events-"):]
            for line in wal.read_text(encoding="utf-8").splitlines():
                if not line.strip():
                    continue
                record = json.loads(line)
                if record.get("type") == "bind":
                    self.game(game_id).bind_role(
                        record["player"], record["role"], record["from_ts"], record.get("to_ts")
                    )
                else:
                    record.pop("type", None)
                    self.ingest_event(game_id, GameEvent.from_dict(record), log=False)


def _ingest_state(ingest: GameIngest, events: list[GameEvent]) -> dict[str, Any]:
    return {
        "roster": sorted(ingest.roster) if ingest.roster is not None else None,
        "chains": [c.to_dict() for c in ingest.chains],
        "open_chain": ingest.open_chain.to_dict() if ingest.open_chain else None,
        "current_state": ingest.current_state,
        "last_ts": ingest.last_ts,
        "seen": sorted(ingest.seen),
        "pending_wind": ingest._pending_wind,
        "chain_states": ingest._chain_states,
        "last_action": list(ingest._last_action) if ingest._last_action else None,
        "events": [ev.to_dict() for ev in events],
    }


def _restore_ingest(ingest: GameIngest, blob: dict[str, Any]) -> list[GameEvent]:
    roster = blob.get("roster")
    ingest.roster = set(roster) if roster is not None else None
    ingest.chains = [_chain_from_dict(c) for c in blob.get("chains", ())]
    open_chain = blob.get("open_chain")
    ingest.open_chain = _chain_from_dict(open_chain) if open_chain else None
    ingest.current_state = blob.get("current_state")
    ingest.last_ts = blob.get("last_ts", -1)
    ingest.seen = set(blob.get("seen", ()))
    ingest._pending_wind = list(blob.get("pending_wind", ()))
    ingest._chain_states = list(blob.get("chain_states", ()))
    last_action = blob.get("last_action")
    ingest._last_action = (last_action[0], last_action[1]) if last_action else None
    return [GameEvent.from_dict(e) for e in blob.get("events", ())]


def _chain_from_dict(d: dict[str, Any]) -> PossessionChain:
    return PossessionChain(
        chain_id=d["chain_id"],
        start_event=d["start_event"],
        events=list(d["events"]),
        terminal=Terminal(d["terminal"]) if d.get("terminal") else None,
    )
