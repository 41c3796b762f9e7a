"""Single-node HTTP front door.

JSON request/response endpoints over the store, plus a long-lived push
channel (``GET /stream``) that emits newline-delimited JSON messages with a
strictly increasing sequence number per connection: ``event_ingested``,
``metrics_updated`` and ``run_state``. Delivery is at-least-once; clients
deduplicate on ``seq``.

Ingesting an event re-feeds every workflow bound to that game and
incrementally recomputes it, so metric updates follow event entries on the
stream. Errors come back as ``{"code", "message", "detail"}`` with an HTTP
status mirroring the error class (conflicts 409, unknown ids 404, bad
requests 400).
"""

from __future__ import annotations

import json
import queue
import re
import threading
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from pathlib import Path
from typing import Any
from urllib.parse import parse_qs, urlparse

from .events import GameEvent, NoOpenChain, OutOfOrderEvent
from .graph import (
    CycleIntroduced,
    DuplicateGeneration,
    DuplicateId,
    ProvError,
    UnknownNode,
)
from .interop import graph_to_json
from .privacy import ConflictingNode, FrontierMismatch
from .query import QueryFilter, ordered_node_ids, trace_influences
from .store import Store
from .workflow import (
    InvalidWorkflow,
    UnknownEntity,
    UnknownRun,
    UnknownVersion,
    UnknownWorkflow,
    WorkflowDef,
)

_STATUS_BY_ERROR: list[tuple[type[Exception], int]] = [
    (OutOfOrderEvent, 409),
    (NoOpenChain, 409),
    (DuplicateId, 409),
    (DuplicateGeneration, 409),
    (ConflictingNode, 409),
    (FrontierMismatch, 409),
    (CycleIntroduced, 409),
    (UnknownNode, 404),
    (UnknownWorkflow, 404),
    (UnknownVersion, 404),
    (UnknownRun, 404),
    (UnknownEntity, 404),
    (ProvError, 400),
]


def _status_for(exc: Exception) -> int:
    for klass, status in _STATUS_BY_ERROR:
        if isinstance(exc, klass):
            return status
    return 500


class StreamHub:
    """Fan-out of ordered service events to any number of subscribers."""

    def __init__(self) -> None:
        self._lock = threading.Lock()
        self._seq = 0
        self._subscribers: list[queue.SimpleQueue] = []

    def publish(self, kind: str, data: dict[str, Any]) -> int:
        with self._lock:
            self._seq += 1
            message = {"seq": self._seq, "type": kind, "data": data}
            for q in list(self._subscribers):
                q.put(message)
            return self._seq

    def subscribe(self) -> queue.SimpleQueue:
        q: queue.SimpleQueue = queue.SimpleQueue()
        with self._lock:
            self._subscribers.append(q)
        return q

    def unsubscribe(self, q: queue.SimpleQueue) -> None:
        with self._lock:
            if q in self._subscribers:
                self._subscribers.remove(q)


class ProvService:
    """Application operations behind the HTTP handlers; everything returns
    plain JSON-compatible payloads so the CLI can share the code paths."""

    def __init__(self, store: Store) -> None:
        self.store = store
        self.hub = StreamHub()
        self._lock = threading.RLock()  # serialises mutations per process
        # queries run against the last committed snapshot; it is re-copied
        # lazily on the first read after a mutation
        self._snapshot = store.graph.copy()
        self._snapshot_stale = False

    def _graph_snapshot(self):
        with self._lock:
            if self._snapshot_stale:
                self._snapshot = self.store.graph.copy()
                self._snapshot_stale = False
            return self._snapshot

    def _mark_mutated(self) -> None:
        self._snapshot_stale = True

    # -- games ---------------------------------------------------------

    def post_event(self, game_id: str, payload: dict[str, Any]) -> dict[str, Any]:
        ev = GameEvent.from_dict(payload)
        with self._lock:
            delta = self.store.ingest_event(game_id, ev)
            summary = delta.to_dict()
            summary["game"] = game_id
            seq = self.hub.publish("event_ingested", summary)
            summary["seq"] = seq
            if not delta.skipped:
                self._recompute_bound(game_id)
            self._mark_mutated()
            self.store.save()
        return summary

    def _recompute_bound(self, game_id: str) -> None:
        for wf_id in self.store.workflows_bound_to(game_id):
            self.store.refresh_bound_inputs(wf_id)
            if self.store.engine.is_dirty(wf_id):
                report = self.store.engine.recompute_dirty(wf_id)
                self.hub.publish(
                    "metrics_updated",
                    {
                        "workflow": wf_id,
                        "recomputed": report.recomputed,
                        "status": report.status,
                        "outputs": report.outputs,
                    },
                )

    def get_chains(self, game_id: str) -> dict[str, Any]:
        return self.store.chains(game_id)

    # -- queries ---------------------------------------------------------

    def query_trace(self, payload: dict[str, Any]) -> dict[str, Any]:
        target = payload.get("target")
        if not isinstance(target, str):
            raise InvalidWorkflow("query needs a string target")
        qf = QueryFilter.from_dict(payload.get("filter") or {})
        snapshot = self._graph_snapshot()
        result = trace_influences(snapshot, target, qf)
        return {
            "target": target,
            "graph": graph_to_json(result),
            "ordered": ordered_node_ids(result, context=snapshot),
        }

    # -- workflows ---------------------------------------------------------

    def define_workflow(self, payload: dict[str, Any]) -> dict[str, Any]:
        defn = WorkflowDef.from_dict(payload)
        with self._lock:
            wf_id = self.store.engine.define_workflow(defn)
            version = self.store.engine.workflows[wf_id].defn.version
            self._mark_mutated()
            self.store.save()
        return {"workflow_id": wf_id, "version": version}

    def run_workflow(self, wf_id: str, payload: dict[str, Any]) -> dict[str, Any]:
        inputs = payload.get("inputs") or {}
        with self._lock:
            resolved: dict[str, Any] = {}
            for name, value in inputs.items():
                if isinstance(value, dict) and "$game" in value:
                    game_id = value["$game"]
                    self.store.bind_workflow_input(wf_id, name, game_id)
                    resolved[name] = self.store.game_events_jsonl(game_id)
                else:
                    resolved[name] = value
            report = self.store.engine.execute(wf_id, resolved)
            self.hub.publish(
                "run_state",
                {"run_id": report.run_id, "workflow": wf_id, "status": report.status},
            )
            self._mark_mutated()
            self.store.save()
        return report.to_dict()

    def recompute(self, wf_id: str) -> dict[str, Any]:
        with self._lock:
            self.store.refresh_bound_inputs(wf_id)
            report = self.store.engine.recompute_dirty(wf_id)
            self.hub.publish(
                "run_state",
                {"run_id": report.run_id, "workflow": wf_id, "status": report.status},
            )
            self._mark_mutated()
            self.store.save()
        return report.to_dict()

    def resolve_manual(self, run_id: str, step_id: str, payload: dict[str, Any]) -> dict[str, Any]:
        outputs = payload.get("outputs") or {}
        agent = payload.get("agent") or "analyst"
        with self._lock:
            report = self.store.engine.resolve_manual(run_id, step_id, outputs, agent)
            self.hub.publish(
                "run_state",
                {"run_id": run_id, "workflow": report.workflow_id, "status": report.status},
            )
            self._mark_mutated()
            self.store.save()
        return report.to_dict()

    def latest_metrics(self, wf_id: str) -> dict[str, Any]:
        engine = self.store.engine
        state = engine.workflows.get(wf_id)
        if state is None:
            raise UnknownWorkflow(f"no workflow {wf_id!r}")
        outputs = engine.latest_outputs(wf_id)
        consumed = {(e.src_step, e.src_port) for e in state.defn.edges}
        terminal_tables = [
            value
            for key, value in sorted(outputs.items())
            if isinstance(value, list)
            and tuple(key.split(".", 1)) not in consumed
        ]
        return {
            "workflow": wf_id,
            "version": state.defn.version,
            "dirty": engine.is_dirty(wf_id),
            "outputs": outputs,
            "table": terminal_tables[0] if terminal_tables else None,
        }

    # -- documents ---------------------------------------------------------

    def export_sprov(self, boundary: list[str] | None) -> str:
        from .interop import serialize
        from .privacy import export_partial

        snapshot = self._graph_snapshot()
        if boundary:
            return export_partial(snapshot, set(boundary)).render()
        return serialize(snapshot)

    def import_sprov(self, text: str) -> dict[str, Any]:
        with self._lock:
            result = self.store.import_sprov(text)
            self._mark_mutated()
            self.store.save()
        return result


class _Handler(BaseHTTPRequestHandler):
    service: ProvService  # injected by make_server
    protocol_version = "HTTP/1.1"

    # route table: (method, compiled pattern) -> handler name
    ROUTES: list[tuple[str, re.Pattern, str]] = [
        ("POST", re.compile(r"^/games/([^/]+)/events$"), "r_post_event"),
        ("GET", re.compile(r"^/games/([^/]+)/chains$"), "r_chains"),
        ("POST", re.compile(r"^/query/trace$"), "r_trace"),
        ("GET", re.compile(r"^/metrics/([^/]+)/latest$"), "r_metrics"),
        ("POST", re.compile(r"^/workflows$"), "r_define"),
        ("POST", re.compile(r"^/workflows/([^/]+)/run$"), "r_run"),
        ("POST", re.compile(r"^/workflows/([^/]+)/recompute$"), "r_recompute"),
        ("POST", re.compile(r"^/runs/([^/]+)/manual/([^/]+)$"), "r_manual"),
        ("GET", re.compile(r"^/export/sprov$"), "r_export"),
        ("POST", re.compile(r"^/import/sprov$"), "r_import"),
        ("GET", re.compile(r"^/stream$"), "r_stream"),
    ]

    def log_message(self, fmt: str, *args: Any) -> None:  # quiet by default
        pass

    def _dispatch(self, method: str) -> None:
        parsed = urlparse(self.path)
        for verb, pattern, name in self.ROUTES:
            if verb != method:
                continue
            match = pattern.match(parsed.path)
            if match:
                try:
                    getattr(self, name)(match, parse_qs(parsed.query))
                except BrokenPipeError:
                    pass
                except Exception as exc:  # map to structured error payload
                    self._send_error(exc)
                return
        if method == "GET" and self._serve_static(parsed.path):
            return
        self._send_json(404, {"code": "NotFound", "message": f"no route {parsed.path}"})

    def _serve_static(self, path: str) -> bool:
        """Serve the annotator app when the server was given a UI directory."""
        ui_dir: Path | None = getattr(self.service, "ui_dir", None)
        if ui_dir is None:
            return False
        candidate = ui_dir / "index.html" if path == "/" else ui_dir / path.lstrip("/")
        try:
            resolved = candidate.resolve()
            resolved.relative_to(ui_dir.resolve())
        except (OSError, ValueError):
            return False
        if not resolved.is_file():
            return False
        content_types = {
            ".html": "text/html",
            ".js": "text/javascript",
            ".css": "text/css",
            ".svg": "image/svg+xml",
            ".json": "application/json",
        }
        body = resolved.read_bytes()
        self.send_response(200)
        self.send_header(
            "Content-Type", content_types.get(resolved.suffix, "application/octet-stream")
        )
        self.send_header("Content-Length", str(len(body)))
        self.end_headers()
        self.wfile.write(body)
        return True

    def do_GET(self) -> None:  # noqa: N802 (http.server API)
        self._dispatch("GET")

    def do_POST(self) -> None:  # noqa: N802
        self._dispatch("POST")

    # -- helpers -----------------------------------------------------------

    def _body(self) -> dict[str, Any]:
        length = int(self.headers.get("Content-Length") or 0)
        raw = self.rfile.read(length) if length else b"{}"
        try:
            data = json.loads(raw.decode("utf-8") or "{}")
        except (UnicodeDecodeError, json.JSONDecodeError):
            raise InvalidWorkflow("request body is not valid JSON") from None
        if not isinstance(data, dict):
            raise InvalidWorkflow("request body must be a JSON object")
        return data

    def _body_text(self) -> str:
        length = int(self.headers.get("Content-Length") or 0)
        return self.rfile.read(length).decode("utf-8") if length else ""

    def _send_json(self, status: int, payload: Any) -> None:
        body = json.dumps(payload, ensure_ascii=False).encode("utf-8")
        self.send_response(status)
        self.send_header("Content-Type", "application/json")
        self.send_header("Content-Length", str(len(body)))
        self.send_header("Access-Control-Allow-Origin", "*")
        self.end_headers()
        self.wfile.write(body)

    def _send_text(self, status: int, text: str, content_type: str = "text/plain") -> None:
        body = text.encode("utf-8")
        self.send_response(status)
        self.send_header("Content-Type", f"{content_type}; charset=utf-8")
        self.send_header("Content-Length", str(len(body)))
        self.send_header("Access-Control-Allow-Origin", "*")
        self.end_headers()
        self.wfile.write(body)

    def _send_error(self, exc: Exception) -> None:
        status = _status_for(exc)
        self._send_json(
            status,
            {
                "code": type(exc).__name__,
                "message": str(exc),
                "detail": {"status": status},
            },
        )

    # -- routes --------------------------------------------------------------

    def r_post_event(self, match: re.Match, query: dict) -> None:
        self._send_json(200, self.service.post_event(match.group(1), self._body()))

    def r_chains(self, match: re.Match, query: dict) -> None:
        self._send_json(200, self.service.get_chains(match.group(1)))

    def r_trace(self, match: re.Match, query: dict) -> None:
        self._send_json(200, self.service.query_trace(self._body()))

    def r_metrics(self, match: re.Match, query: dict) -> None:
        self._send_json(200, self.service.latest_metrics(match.group(1)))

    def r_define(self, match: re.Match, query: dict) -> None:
        self._send_json(200, self.service.define_workflow(self._body()))

    def r_run(self, match: re.Match, query: dict) -> None:
        self._send_json(200, self.service.run_workflow(match.group(1), self._body()))

    def r_recompute(self, match: re.Match, query: dict) -> None:
        self._send_json(200, self.service.recompute(match.group(1)))

    def r_manual(self, match: re.Match, query: dict) -> None:
        self._send_json(
            200, self.service.resolve_manual(match.group(1), match.group(2), self._body())
        )

    def r_export(self, match: re.Match, query: dict) -> None:
        boundary = []
        for chunk in query.get("boundary", []):
            boundary.extend(b for b in chunk.split(",") if b)
        self._send_text(200, self.service.export_sprov(boundary or None))

    def r_import(self, match: re.Match, query: dict) -> None:
        self._send_json(200, self.service.import_sprov(self._body_text()))

    def r_stream(self, match: re.Match, query: dict) -> None:
        q = self.service.hub.subscribe()
        try:
            self.send_response(200)
            self.send_header("Content-Type", "application/x-ndjson")
            self.send_header("Cache-Control", "no-store")
            self.send_header("Access-Control-Allow-Origin", "*")
            self.send_header("Connection", "close")
            self.end_headers()
            self.wfile.write(
                (json.dumps({"seq": 0, "type": "hello", "data": {}}) + "\n").encode()
            )
            self.wfile.flush()
            while True:
                message = q.get()
                self.wfile.write(
                    (json.dumps(message, ensure_ascii=False) + "\n").encode("utf-8")
                )
                self.wfile.flush()
        except (BrokenPipeError, ConnectionResetError):
            pass
        finally:
            self.service.hub.unsubscribe(q)


def make_server(
    store: Store,
    host: str = "127.0.0.1",
    port: int = 8800,
    ui_dir: str | Path | None = None,
) -> ThreadingHTTPServer:
    service = ProvService(store)
    service.ui_dir = Path(ui_dir) if ui_dir is not None else None  # type: ignore[attr-defined]
    handler = type("BoundHandler", (_Handler,), {"service": service})
    server = ThreadingHTTPServer((host, port), handler)
    server.service = service  # type: ignore[attr-defined]
    return server


def serve(
    store: Store,
    host: str = "127.0.0.1",
    port: int = 8800,
    ui_dir: str | Path | None = None,
) -> None:
    server = make_server(store, host, port, ui_dir=ui_dir)
    print(f"listening on http://{host}:{port}")
    try:
        server.serve_forever()
    except KeyboardInterrupt:
        pass
    finally:
        server.shutdown()
