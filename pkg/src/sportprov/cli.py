"""Command-line front door.

Every command is a thin adapter over the library against a persistent store
directory (``--store``, default ``./.sportprov``). ``--json`` switches the
output to the same payloads the HTTP API serves. Exit codes: 0 success,
1 user error (bad arguments or a domain error), 2 internal failure.
"""

from __future__ import annotations

import argparse
import json
import sys
import time
import traceback
from pathlib import Path
from typing import Any

from .events import parse_events_jsonl
from .graph import Construct, Connection, ProvError
from .privacy import (
    RedactionMap,
    deidentify,
    make_map,
    reidentify,
)
from .query import QueryFilter, ordered_node_ids, trace_influences
from .service import serve as serve_http
from .store import Store
from .workflow import WorkflowDef

SECRET_WARNING = (
    "warning: the mapping file reverses de-identification - keep it private"
)


def _store(args: argparse.Namespace) -> Store:
    return Store(args.store)


def _parse_input_value(store: Store, wf_id: str, name: str, raw: str) -> Any:
    if raw.startswith("@game:"):
        game_id = raw[len("@game:"):]
        store.bind_workflow_input(wf_id, name, game_id)
        return store.game_events_jsonl(game_id)
    if raw.startswith("@"):
        path = Path(raw[1:])
        text = path.read_text(encoding="utf-8")
        return json.loads(text) if path.suffix == ".json" else text
    try:
        return json.loads(raw)
    except json.JSONDecodeError:
        return raw


def _emit(args: argparse.Namespace, payload: Any, human: str | None = None) -> None:
    if args.json:
        print(json.dumps(payload, ensure_ascii=False, sort_keys=True, indent=1))
    elif human is not None:
        print(human)
    else:
        print(json.dumps(payload, ensure_ascii=False, sort_keys=True, indent=1))


# -- commands ----------------------------------------------------------------


def cmd_ingest(args: argparse.Namespace) -> None:
    store = _store(args)
    events = parse_events_jsonl(Path(args.events).read_text(encoding="utf-8"))
    ingested = skipped = 0
    for ev in events:
        delta = store.ingest_event(args.game, ev)
        ingested += 0 if delta.skipped else 1
        skipped += 1 if delta.skipped else 0
    for wf_id in store.workflows_bound_to(args.game):
        store.refresh_bound_inputs(wf_id)
        if store.engine.is_dirty(wf_id):
            store.engine.recompute_dirty(wf_id)
    store.save()
    payload = {"game": args.game, "ingested": ingested, "skipped": skipped}
    _emit(args, payload, f"ingested {ingested} events into game {args.game} ({skipped} already known)")


def cmd_replay(args: argparse.Namespace) -> None:
    store = _store(args)
    events = parse_events_jsonl(Path(args.events).read_text(encoding="utf-8"))
    timed = args.speed != "max"
    speed = float(args.speed) if timed else None
    started = time.monotonic()
    last_ts: int | None = None
    for ev in events:
        if timed and last_ts is not None and ev.ts_ms > last_ts:
            time.sleep((ev.ts_ms - last_ts) / 1000.0 / speed)
        last_ts = ev.ts_ms
        store.ingest_event(args.game, ev)
        if timed:
            _replay_recompute(store, args.game)
    if not timed:
        _replay_recompute(store, args.game)
    store.save()
    elapsed = time.monotonic() - started
    payload = {"game": args.game, "events": len(events), "seconds": round(elapsed, 3)}
    _emit(args, payload, f"replayed {len(events)} events in {elapsed:.2f}s")


def _replay_recompute(store: Store, game_id: str) -> None:
    for wf_id in store.workflows_bound_to(game_id):
        store.refresh_bound_inputs(wf_id)
        if store.engine.is_dirty(wf_id):
            store.engine.recompute_dirty(wf_id)


def cmd_query_trace(args: argparse.Namespace) -> None:
    store = _store(args)
    kinds = None
    if args.kinds:
        kinds = {Construct(k) for k in args.kinds.split(",") if k}
    classes = None
    if args.classes:
        classes = {Connection(c) for c in args.classes.split(",") if c}
    qf = QueryFilter(
        node_kinds=kinds,
        max_activity_depth=args.depth,
        stop_at_reset=not args.no_stop_at_reset,
        connection_classes=classes,
    )
    result = trace_influences(store.graph, args.target, qf)
    ordered = ordered_node_ids(result, context=store.graph)
    from .interop import graph_to_json

    payload = {"target": args.target, "graph": graph_to_json(result), "ordered": ordered}
    # the human line lists only nodes matching the kind filter; the target is
    # always part of the graph payload but not necessarily of the answer line
    if kinds is not None:
        shown = [
            n for n in ordered if result.nodes[n].kind.construct in kinds
        ]
    else:
        shown = ordered
    _emit(args, payload, ", ".join(shown))


def cmd_run(args: argparse.Namespace) -> None:
    store = _store(args)
    defn = WorkflowDef.from_dict(json.loads(Path(args.workflow).read_text(encoding="utf-8")))
    wf_id = store.engine.define_workflow(defn)
    inputs = {}
    for pair in args.inputs or []:
        name, sep, raw = pair.partition("=")
        if not sep:
            raise ProvError(f"--in expects name=value, got {pair!r}")
        inputs[name] = _parse_input_value(store, wf_id, name, raw)
    report = store.engine.execute(wf_id, inputs)
    store.save()
    _emit(
        args,
        report.to_dict(),
        f"run {report.run_id}: {report.status}"
        + (f", awaiting {', '.join(report.awaiting)}" if report.awaiting else ""),
    )


def cmd_recompute(args: argparse.Namespace) -> None:
    store = _store(args)
    store.refresh_bound_inputs(args.workflow)
    report = store.engine.recompute_dirty(args.workflow)
    store.save()
    _emit(
        args,
        report.to_dict(),
        f"recomputed {len(report.recomputed)} steps: {', '.join(report.recomputed) or '(none)'}",
    )


def cmd_rollback(args: argparse.Namespace) -> None:
    store = _store(args)
    defn = store.engine.rollback(args.workflow, args.version)
    store.save()
    _emit(
        args,
        {"workflow_id": args.workflow, "version": defn.version},
        f"{args.workflow} now at version {defn.version}",
    )


def cmd_diff(args: argparse.Namespace) -> None:
    store = _store(args)
    delta = store.engine.diff(args.workflow, args.from_version, args.to_version)
    lines = []
    for step in delta.steps_added:
        lines.append(f"+step {step.step_id}")
    for step_id in delta.steps_removed:
        lines.append(f"-step {step_id}")
    for edge in delta.edges_added:
        lines.append(f"+edge {edge.src_step}.{edge.src_port} -> {edge.dst_step}.{edge.dst_port}")
    for edge in delta.edges_removed:
        lines.append(f"-edge {edge.src_step}.{edge.src_port} -> {edge.dst_step}.{edge.dst_port}")
    for step_id in sorted(delta.params_changed):
        lines.append(f"~param {step_id}")
    _emit(args, delta.to_dict(), "\n".join(lines) if lines else "(no differences)")


def cmd_redact_make_map(args: argparse.Namespace) -> None:
    players = [p for p in args.players.split(",") if p]
    rmap = make_map(players, seed=args.seed.encode("utf-8"))
    Path(args.out).write_text(
        json.dumps(rmap.to_dict(), ensure_ascii=False, sort_keys=True, indent=1),
        encoding="utf-8",
    )
    print(SECRET_WARNING, file=sys.stderr)
    _emit(
        args,
        {"map_id": rmap.map_id, "players": len(players), "out": args.out},
        f"wrote mapping {rmap.map_id} for {len(players)} players to {args.out}",
    )


def _load_map(path: str) -> RedactionMap:
    print(SECRET_WARNING, file=sys.stderr)
    return RedactionMap.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))


def cmd_redact_apply(args: argparse.Namespace) -> None:
    rmap = _load_map(args.map)
    rows = json.loads(Path(args.table).read_text(encoding="utf-8"))
    fields = tuple(f for f in args.fields.split(",") if f)
    out = deidentify(rows, rmap, fields=fields).rows
    Path(args.out).write_text(json.dumps(out, ensure_ascii=False, indent=1), encoding="utf-8")
    _emit(args, {"rows": len(out), "out": args.out}, f"de-identified {len(out)} rows -> {args.out}")


def cmd_redact_reidentify(args: argparse.Namespace) -> None:
    rmap = _load_map(args.map)
    rows = json.loads(Path(args.table).read_text(encoding="utf-8"))
    fields = tuple(f for f in args.fields.split(",") if f)
    out = reidentify(rows, rmap, fields=fields)
    Path(args.out).write_text(json.dumps(out, ensure_ascii=False, indent=1), encoding="utf-8")
    _emit(args, {"rows": len(out), "out": args.out}, f"re-identified {len(out)} rows -> {args.out}")


def cmd_redact_export_partial(args: argparse.Namespace) -> None:
    store = _store(args)
    boundary = [b for b in args.boundary.split(",") if b]
    text = store.export_sprov(boundary)
    if args.out:
        Path(args.out).write_text(text, encoding="utf-8")
        _emit(args, {"out": args.out, "boundary": boundary}, f"wrote partial document to {args.out}")
    else:
        print(text, end="")


def cmd_redact_merge(args: argparse.Namespace) -> None:
    store = _store(args)
    result = store.import_sprov(Path(args.document).read_text(encoding="utf-8"))
    store.save()
    _emit(
        args,
        result,
        f"merged: +{result['nodes_added']} nodes, +{result['edges_added']} edges",
    )


def cmd_export(args: argparse.Namespace) -> None:
    store = _store(args)
    boundary = [b for b in (args.boundary or "").split(",") if b]
    text = store.export_sprov(boundary or None)
    if args.out:
        Path(args.out).write_text(text, encoding="utf-8")
        _emit(args, {"out": args.out}, f"wrote {args.out}")
    else:
        print(text, end="")


def cmd_import(args: argparse.Namespace) -> None:
    store = _store(args)
    result = store.import_sprov(Path(args.document).read_text(encoding="utf-8"))
    store.save()
    _emit(
        args,
        result,
        f"imported: +{result['nodes_added']} nodes, +{result['edges_added']} edges",
    )


def cmd_serve(args: argparse.Namespace) -> None:
    serve_http(_store(args), host=args.host, port=args.port, ui_dir=args.ui)


# -- parser -------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="sportprov",
        description="provenance engine for sport performance analysis",
    )
    parser.add_argument("--store", default=".sportprov", help="store directory")
    parser.add_argument("--json", action="store_true", help="machine-readable output")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("ingest", help="ingest an event file into a game")
    p.add_argument("events")
    p.add_argument("--game", required=True)
    p.set_defaults(func=cmd_ingest)

    p = sub.add_parser("replay", help="re-emit an event file (timed or flat out)")
    p.add_argument("events")
    p.add_argument("--game", required=True)
    p.add_argument("--speed", default="max", help="realtime multiplier or 'max'")
    p.set_defaults(func=cmd_replay)

    p = sub.add_parser("query", help="provenance queries")
    qsub = p.add_subparsers(dest="query_command", required=True)
    q = qsub.add_parser("trace", help="trace influences on a node")
    q.add_argument("--target", required=True)
    q.add_argument("--kinds", help="comma-separated node specialisations")
    q.add_argument("--depth", type=int, default=None)
    q.add_argument("--no-stop-at-reset", action="store_true")
    q.add_argument("--classes", help="comma-separated connection classes (data,physical)")
    q.set_defaults(func=cmd_query_trace)

    p = sub.add_parser("run", help="define and execute a workflow")
    p.add_argument("workflow")
    p.add_argument(
        "--in",
        dest="inputs",
        action="append",
        metavar="NAME=VALUE",
        help="root input (VALUE may be JSON, @file, or @game:<id>)",
    )
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("recompute", help="re-execute only what changed")
    p.add_argument("--workflow", required=True)
    p.set_defaults(func=cmd_recompute)

    p = sub.add_parser("rollback", help="restore an earlier workflow version")
    p.add_argument("--workflow", required=True)
    p.add_argument("--version", type=int, required=True)
    p.set_defaults(func=cmd_rollback)

    p = sub.add_parser("diff", help="compare two workflow versions")
    p.add_argument("--workflow", required=True)
    p.add_argument("--from", dest="from_version", type=int, required=True)
    p.add_argument("--to", dest="to_version", type=int, required=True)
    p.set_defaults(func=cmd_diff)

    p = sub.add_parser("redact", help="de-identification tooling")
    rsub = p.add_subparsers(dest="redact_command", required=True)
    r = rsub.add_parser("make-map", help="build a player/code mapping")
    r.add_argument("--players", required=True, help="comma-separated player ids")
    r.add_argument("--seed", required=True)
    r.add_argument("--out", required=True)
    r.set_defaults(func=cmd_redact_make_map)
    r = rsub.add_parser("apply", help="de-identify a JSON table")
    r.add_argument("--map", required=True)
    r.add_argument("--table", required=True)
    r.add_argument("--out", required=True)
    r.add_argument("--fields", default="player,target_player")
    r.set_defaults(func=cmd_redact_apply)
    r = rsub.add_parser("reidentify", help="re-identify a JSON table")
    r.add_argument("--map", required=True)
    r.add_argument("--table", required=True)
    r.add_argument("--out", required=True)
    r.add_argument("--fields", default="player,target_player")
    r.set_defaults(func=cmd_redact_reidentify)
    r = rsub.add_parser("export-partial", help="export the shareable partial graph")
    r.add_argument("--boundary", required=True, help="comma-separated de-identify activity ids")
    r.add_argument("--out")
    r.set_defaults(func=cmd_redact_export_partial)
    r = rsub.add_parser("merge", help="merge a collaborator's document")
    r.add_argument("document")
    r.set_defaults(func=cmd_redact_merge)

    p = sub.add_parser("export", help="export the full graph as .sprov")
    esub = p.add_subparsers(dest="export_format", required=True)
    e = esub.add_parser("sprov")
    e.add_argument("--out")
    e.add_argument("--boundary")
    e.set_defaults(func=cmd_export)

    p = sub.add_parser("import", help="import an .sprov document")
    isub = p.add_subparsers(dest="import_format", required=True)
    i = isub.add_parser("sprov")
    i.add_argument("document")
    i.set_defaults(func=cmd_import)

    p = sub.add_parser("serve", help="start the HTTP service")
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=8800)
    p.add_argument("--ui", help="directory with the annotator app to serve at /")
    p.set_defaults(func=cmd_serve)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return 0 if exc.code in (0, None) else 1
    try:
        args.func(args)
        return 0
    except (ProvError, FileNotFoundError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except Exception:
        traceback.print_exc()
        return 2


if __name__ == "__main__":
    sys.exit(main())
