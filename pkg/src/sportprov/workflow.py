"""Pipeline engine mixing automated and manual steps, with caching,
incremental recomputation, manual overrides and versioned history.

A workflow is a DAG of typed steps. Automated steps run registered builtins;
manual steps suspend the run until a human supplies the outputs. Every step
execution is cached by a digest of (builtin, params, engine schema version,
transitive input digests), and each completed computation is written into the
provenance graph as an activity with used/generated edges, so any output can
be traced back to every contributing input.

Incremental model: mutating an input (or applying an override) marks the
structural dirty closure — every step transitively downstream of the change —
and ``recompute_dirty`` re-executes exactly that set, serving everything else
from cache. Overrides create revision entities derived from the original;
sticky overrides stay in force when fresh upstream data arrives.

Version history is a tree: every definition change creates a new version with
a parent pointer, and rolling back then editing branches instead of erasing.
"""

from __future__ import annotations

import hashlib
import json
import threading
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from decimal import ROUND_HALF_UP, Decimal
from typing import Any, Callable, Iterable

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
    TopLevel,
)
from .privacy import apply_mapping

ENGINE_SCHEMA_VERSION = 1


class CyclicWorkflow(ProvError):
    pass


class PortTypeMismatch(ProvError):
    pass


class UnknownBuiltin(ProvError):
    pass


class UnknownWorkflow(ProvError):
    pass


class UnknownVersion(ProvError):
    pass


class UnknownRun(ProvError):
    pass


class MissingInput(ProvError):
    pass


class NotAwaiting(ProvError):
    pass


class SchemaMismatch(ProvError):
    pass


class UnknownEntity(ProvError):
    pass


class InvalidWorkflow(ProvError):
    pass


# -- value plumbing ------------------------------------------------------


def canonical_digest(value: Any) -> str:
    payload = json.dumps(
        value, sort_keys=True, ensure_ascii=False, separators=(",", ":")
    )
    return hashlib.sha256(payload.encode()).hexdigest()


_TYPE_CHECKS: dict[str, Callable[[Any], bool]] = {
    "table": lambda v: isinstance(v, list) and all(isinstance(r, dict) for r in v),
    "jsonl": lambda v: isinstance(v, str),
    "text": lambda v: isinstance(v, str),
    "mapping": lambda v: isinstance(v, dict),
    "number": lambda v: isinstance(v, (int, float)) and not isinstance(v, bool),
    "flag": lambda v: isinstance(v, bool),
}


def value_matches(type_tag: str, value: Any) -> bool:
    check = _TYPE_CHECKS.get(type_tag)
    return True if check is None else check(value)


# -- builtins ------------------------------------------------------------


@dataclass
class MetricRecord:
    """Per-row metric emitted by a builtin, with its contributing events."""

    key: str
    value: Any
    source_event_ids: list[str] = field(default_factory=list)


@dataclass
class BuiltinResult:
    outputs: dict[str, Any]
    metrics: list[MetricRecord] = field(default_factory=list)
    construct: Construct = Construct.COMPUTATION


@dataclass(frozen=True)
class BuiltinSpec:
    name: str
    inputs: dict[str, str]
    outputs: dict[str, str]
    fn: Callable[[dict[str, Any], dict[str, Any]], BuiltinResult]
    defaults: dict[str, Any] = field(default_factory=dict)


def _builtin_load_events(params: dict, inputs: dict) -> BuiltinResult:
    from .events import parse_events_jsonl

    events = parse_events_jsonl(inputs["source"])
    return BuiltinResult({"table": [ev.to_dict() for ev in events]})


def _builtin_filter_events(params: dict, inputs: dict) -> BuiltinResult:
    column = params.get("field")
    if column is None:
        raise ValueError("filter_events requires params.field")
    rows = inputs["table"]
    if "equals" in params:
        keep = [r for r in rows if r.get(column) == params["equals"]]
    elif "not_equals" in params:
        keep = [r for r in rows if r.get(column) != params["not_equals"]]
    elif "one_of" in params:
        allowed = set(params["one_of"])
        keep = [r for r in rows if r.get(column) in allowed]
    else:
        raise ValueError("filter_events requires equals / not_equals / one_of")
    return BuiltinResult({"table": keep})


def _builtin_count_by(params: dict, inputs: dict) -> BuiltinResult:
    key = params.get("key")
    if key is None:
        raise ValueError("count_by requires params.key")
    counts: dict[Any, int] = {}
    for row in inputs["table"]:
        counts[row.get(key)] = counts.get(row.get(key), 0) + 1
    rows = [
        {key: value, "count": counts[value]}
        for value in sorted(counts, key=lambda v: (v is None, str(v)))
    ]
    return BuiltinResult({"table": rows})


def goal_pct(goals: int, behinds: int) -> float | None:
    """Scoring accuracy: 100 * goals / (goals + behinds), half-up to one
    decimal; undefined (None) when the player registered no shots."""
    if goals + behinds == 0:
        return None
    ratio = Decimal(100 * goals) / Decimal(goals + behinds)
    return float(ratio.quantize(Decimal("0.1"), rounding=ROUND_HALF_UP))


def _builtin_compute_goal_pct(params: dict, inputs: dict) -> BuiltinResult:
    player_field = params.get("player_field", "player")
    kind_field = params.get("kind_field", "kind")
    ts_field = params.get("ts_field", "ts_ms")
    wind = inputs.get("wind") or []
    high_windows = [
        (w.get("start_ms", 0), w.get("end_ms", 0))
        for w in wind
        if w.get("condition") == "high"
    ]

    def wind_assisted(ts: Any) -> bool:
        return isinstance(ts, int) and any(a <= ts <= b for a, b in high_windows)

    tallies: dict[str, dict[str, Any]] = {}
    for row in inputs["table"]:
        player, kind = row.get(player_field), row.get(kind_field)
        if player is None or kind not in ("Goal", "Behind"):
            continue
        # a miss in marked high-wind conditions is not counted against the player
        if kind == "Behind" and wind_assisted(row.get(ts_field)):
            continue
        tally = tallies.setdefault(player, {"goals": 0, "behinds": 0, "events": []})
        tally["goals" if kind == "Goal" else "behinds"] += 1
        if row.get("event_id"):
            tally["events"].append(row["event_id"])
    rows, metrics = [], []
    for player in sorted(tallies):
        tally = tallies[player]
        pct = goal_pct(tally["goals"], tally["behinds"])
        rows.append(
            {
                "player": player,
                "goals": tally["goals"],
                "behinds": tally["behinds"],
                "goal_pct": pct,
            }
        )
        metrics.append(MetricRecord(player, pct, tally["events"]))
    return BuiltinResult({"table": rows}, metrics=metrics)


def _builtin_join_mapping(params: dict, inputs: dict) -> BuiltinResult:
    direction = params.get("direction", "deidentify")
    fields = params.get("fields", ["player", "target_player"])
    mapping = inputs["mapping"]
    # accept a whole mapping file payload as well as bare entries
    if "entries" in mapping and ("map_id" in mapping or "SECRET" in mapping):
        mapping = mapping["entries"]
    rows = apply_mapping(inputs["table"], mapping, fields, direction)
    construct = (
        Construct.DE_IDENTIFY if direction == "deidentify" else Construct.COMPUTATION
    )
    return BuiltinResult({"table": rows}, construct=construct)


def _csv_cell(value: Any) -> str:
    if value is None:
        text = ""
    elif isinstance(value, bool):
        text = "true" if value else "false"
    elif isinstance(value, (list, dict)):
        text = json.dumps(value, ensure_ascii=False, sort_keys=True)
    else:
        text = str(value)
    if any(ch in text for ch in ',"\n\r'):
        text = '"' + text.replace('"', '""') + '"'
    return text


def _builtin_export_table(params: dict, inputs: dict) -> BuiltinResult:
    rows = inputs["table"]
    columns = sorted({key for row in rows for key in row})
    lines = [",".join(_csv_cell(c) for c in columns)]
    lines.extend(
        ",".join(_csv_cell(row.get(c)) for c in columns) for row in rows
    )
    return BuiltinResult({"csv": "\n".join(lines) + "\n"})


BUILTINS: dict[str, BuiltinSpec] = {
    spec.name: spec
    for spec in (
        BuiltinSpec("load_events", {"source": "jsonl"}, {"table": "table"}, _builtin_load_events),
        BuiltinSpec("filter_events", {"table": "table"}, {"table": "table"}, _builtin_filter_events),
        BuiltinSpec("count_by", {"table": "table"}, {"table": "table"}, _builtin_count_by),
        BuiltinSpec(
            "compute_goal_pct",
            {"table": "table", "wind": "table"},
            {"table": "table"},
            _builtin_compute_goal_pct,
            defaults={"wind": []},
        ),
        BuiltinSpec(
            "join_mapping",
            {"table": "table", "mapping": "mapping"},
            {"table": "table"},
            _builtin_join_mapping,
        ),
        BuiltinSpec("export_table", {"table": "table"}, {"csv": "text"}, _builtin_export_table),
    )
}


# -- definitions -----------------------------------------------------------


@dataclass(frozen=True)
class WireEdge:
    src_step: str
    src_port: str
    dst_step: str
    dst_port: str

    def to_dict(self) -> dict[str, Any]:
        return {"from": [self.src_step, self.src_port], "to": [self.dst_step, self.dst_port]}

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "WireEdge":
        return cls(d["from"][0], d["from"][1], d["to"][0], d["to"][1])


@dataclass
class StepDef:
    step_id: str
    mode: str = "automated"  # or "manual"
    builtin: str | None = None
    params: dict[str, Any] = field(default_factory=dict)
    prompt: str | None = None
    inputs: dict[str, str] = field(default_factory=dict)
    outputs: dict[str, str] = field(default_factory=dict)
    defaults: dict[str, Any] = field(default_factory=dict)

    def signature(self) -> tuple:
        """Everything but params; params-only changes diff as a modification."""
        return (
            self.step_id,
            self.mode,
            self.builtin,
            self.prompt,
            tuple(sorted(self.inputs.items())),
            tuple(sorted(self.outputs.items())),
            canonical_digest(self.defaults),
        )

    def to_dict(self) -> dict[str, Any]:
        d: dict[str, Any] = {"step_id": self.step_id, "mode": self.mode}
        if self.builtin is not None:
            d["builtin"] = self.builtin
        if self.prompt is not None:
            d["prompt"] = self.prompt
        if self.params:
            d["params"] = self.params
        d["inputs"] = dict(self.inputs)
        d["outputs"] = dict(self.outputs)
        if self.defaults:
            d["defaults"] = self.defaults
        return d

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "StepDef":
        return cls(
            step_id=d["step_id"],
            mode=d.get("mode", "automated"),
            builtin=d.get("builtin"),
            params=dict(d.get("params") or {}),
            prompt=d.get("prompt"),
            inputs=dict(d.get("inputs") or {}),
            outputs=dict(d.get("outputs") or {}),
            defaults=dict(d.get("defaults") or {}),
        )


@dataclass
class WorkflowDef:
    workflow_id: str
    steps: list[StepDef] = field(default_factory=list)
    edges: list[WireEdge] = field(default_factory=list)
    version: int = 1

    def step(self, step_id: str) -> StepDef:
        for s in self.steps:
            if s.step_id == step_id:
                return s
        raise UnknownWorkflow(f"no step {step_id!r} in {self.workflow_id!r}")

    def consumers(self) -> dict[tuple[str, str], list[WireEdge]]:
        by_src: dict[tuple[str, str], list[WireEdge]] = {}
        for e in self.edges:
            by_src.setdefault((e.src_step, e.src_port), []).append(e)
        return by_src

    def producers(self) -> dict[tuple[str, str], WireEdge]:
        return {(e.dst_step, e.dst_port): e for e in self.edges}

    def upstream_steps(self, step_id: str) -> set[str]:
        return {e.src_step for e in self.edges if e.dst_step == step_id}

    def downstream_closure(self, seeds: Iterable[str]) -> set[str]:
        """Seed steps plus everything transitively downstream of them."""
        out_adj: dict[str, set[str]] = {}
        for e in self.edges:
            out_adj.setdefault(e.src_step, set()).add(e.dst_step)
        closure = set(seeds)
        stack = list(closure)
        while stack:
            for nxt in out_adj.get(stack.pop(), ()):
                if nxt not in closure:
                    closure.add(nxt)
                    stack.append(nxt)
        return closure

    def root_inputs(self) -> dict[str, str]:
        """Unconnected, undefaulted input ports, as ``step.port`` -> type tag."""
        fed = {(e.dst_step, e.dst_port) for e in self.edges}
        roots = {}
        for step in self.steps:
            for port, tag in step.inputs.items():
                if (step.step_id, port) in fed:
                    continue
                if port in step.defaults or port in _builtin_defaults(step):
                    continue
                roots[f"{step.step_id}.{port}"] = tag
        return roots

    def to_dict(self) -> dict[str, Any]:
        return {
            "workflow_id": self.workflow_id,
            "version": self.version,
            "steps": [s.to_dict() for s in self.steps],
            "edges": [e.to_dict() for e in self.edges],
        }

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "WorkflowDef":
        return cls(
            workflow_id=d["workflow_id"],
            steps=[StepDef.from_dict(s) for s in d.get("steps", ())],
            edges=[WireEdge.from_dict(e) for e in d.get("edges", ())],
            version=d.get("version", 1),
        )


def _builtin_defaults(step: StepDef) -> dict[str, Any]:
    if step.mode == "automated" and step.builtin in BUILTINS:
        return BUILTINS[step.builtin].defaults
    return {}


def validate_def(defn: WorkflowDef) -> None:
    seen_steps: set[str] = set()
    for step in defn.steps:
        if step.step_id in seen_steps:
            raise InvalidWorkflow(f"duplicate step id {step.step_id!r}")
        seen_steps.add(step.step_id)
        if step.mode == "automated":
            if step.builtin not in BUILTINS:
                raise UnknownBuiltin(f"step {step.step_id!r}: {step.builtin!r}")
            spec = BUILTINS[step.builtin]
            if not step.inputs:
                step.inputs = dict(spec.inputs)
            if not step.outputs:
                step.outputs = dict(spec.outputs)
            if step.inputs != spec.inputs or step.outputs != spec.outputs:
                raise PortTypeMismatch(
                    f"step {step.step_id!r} ports do not match builtin "
                    f"{step.builtin!r} signature"
                )
        elif step.mode == "manual":
            if not step.outputs:
                raise InvalidWorkflow(f"manual step {step.step_id!r} needs outputs")
        else:
            raise InvalidWorkflow(f"step {step.step_id!r}: unknown mode {step.mode!r}")
    fed: set[tuple[str, str]] = set()
    for edge in defn.edges:
        if edge.src_step not in seen_steps or edge.dst_step not in seen_steps:
            raise InvalidWorkflow(f"edge references unknown step: {edge}")
        src = defn.step(edge.src_step)
        dst = defn.step(edge.dst_step)
        if edge.src_port not in src.outputs or edge.dst_port not in dst.inputs:
            raise InvalidWorkflow(f"edge references unknown port: {edge}")
        if src.outputs[edge.src_port] != dst.inputs[edge.dst_port]:
            raise PortTypeMismatch(
                f"{edge.src_step}.{edge.src_port} ({src.outputs[edge.src_port]}) "
                f"-> {edge.dst_step}.{edge.dst_port} ({dst.inputs[edge.dst_port]})"
            )
        if (edge.dst_step, edge.dst_port) in fed:
            raise InvalidWorkflow(f"port fed twice: {edge.dst_step}.{edge.dst_port}")
        fed.add((edge.dst_step, edge.dst_port))
    # cycle check over step dependencies
    adj = {s.step_id: set() for s in defn.steps}
    for edge in defn.edges:
        adj[edge.src_step].add(edge.dst_step)
    visiting: set[str] = set()
    done: set[str] = set()

    def visit(node: str) -> None:
        if node in done:
            return
        if node in visiting:
            raise CyclicWorkflow(f"cycle through step {node!r}")
        visiting.add(node)
        for nxt in adj[node]:
            visit(nxt)
        visiting.discard(node)
        done.add(node)

    for node in adj:
        visit(node)


def diff_defs(a: WorkflowDef, b: WorkflowDef) -> "WorkflowDiff":
    a_steps = {s.step_id: s for s in a.steps}
    b_steps = {s.step_id: s for s in b.steps}
    added, removed, params_changed = [], [], {}
    for step_id, step in b_steps.items():
        old = a_steps.get(step_id)
        if old is None:
            added.append(step)
        elif old.signature() != step.signature():
            removed.append(step_id)
            added.append(step)
        elif old.params != step.params:
            params_changed[step_id] = dict(step.params)
    for step_id in a_steps:
        if step_id not in b_steps:
            removed.append(step_id)
    a_edges, b_edges = set(a.edges), set(b.edges)
    return WorkflowDiff(
        steps_added=added,
        steps_removed=sorted(set(removed)),
        edges_added=sorted(b_edges - a_edges, key=lambda e: e.to_dict()["from"] + e.to_dict()["to"]),
        edges_removed=sorted(a_edges - b_edges, key=lambda e: e.to_dict()["from"] + e.to_dict()["to"]),
        params_changed=params_changed,
    )


@dataclass
class WorkflowDiff:
    steps_added: list[StepDef] = field(default_factory=list)
    steps_removed: list[str] = field(default_factory=list)
    edges_added: list[WireEdge] = field(default_factory=list)
    edges_removed: list[WireEdge] = field(default_factory=list)
    params_changed: dict[str, dict[str, Any]] = field(default_factory=dict)

    @property
    def empty(self) -> bool:
        return not (
            self.steps_added
            or self.steps_removed
            or self.edges_added
            or self.edges_removed
            or self.params_changed
        )

    def touched_steps(self) -> set[str]:
        return (
            {s.step_id for s in self.steps_added}
            | set(self.steps_removed)
            | set(self.params_changed)
            | {e.dst_step for e in self.edges_added}
            | {e.dst_step for e in self.edges_removed}
        )

    def to_dict(self) -> dict[str, Any]:
        return {
            "steps_added": [s.to_dict() for s in self.steps_added],
            "steps_removed": list(self.steps_removed),
            "edges_added": [e.to_dict() for e in self.edges_added],
            "edges_removed": [e.to_dict() for e in self.edges_removed],
            "params_changed": dict(self.params_changed),
        }


def apply_diff(base: WorkflowDef, diff: WorkflowDiff) -> WorkflowDef:
    steps = [s for s in base.steps if s.step_id not in set(diff.steps_removed)]
    steps = [
        replace(s, params=dict(diff.params_changed.get(s.step_id, s.params)))
        for s in steps
    ]
    steps.extend(replace(s) for s in diff.steps_added)
    removed_edges = set(diff.edges_removed)
    edges = [e for e in base.edges if e not in removed_edges]
    edges.extend(diff.edges_added)
    return WorkflowDef(base.workflow_id, steps, edges, base.version)


# -- overrides and runtime records -----------------------------------------


@dataclass
class Override:
    entity_id: str
    value: Any
    reason: str = ""
    author: str = "analyst"
    sticky: bool = False


@dataclass
class StepRun:
    run_id: str
    step_id: str
    status: str  # ok | error | awaiting | skipped
    input_digests: dict[str, str] = field(default_factory=dict)
    output_digests: dict[str, str] = field(default_factory=dict)
    agent: str | None = None
    started: int | None = None
    ended: int | None = None
    cache_hit: bool = False
    error: str | None = None

    def to_dict(self) -> dict[str, Any]:
        return {
            "run_id": self.run_id,
            "step_id": self.step_id,
            "status": self.status,
            "input_digests": dict(self.input_digests),
            "output_digests": dict(self.output_digests),
            "agent": self.agent,
            "started": self.started,
            "ended": self.ended,
            "cache_hit": self.cache_hit,
            "error": self.error,
        }


@dataclass
class RunReport:
    run_id: str
    workflow_id: str
    version: int
    status: str  # ok | error | awaiting
    step_runs: list[StepRun] = field(default_factory=list)
    recomputed: list[str] = field(default_factory=list)
    skipped: list[str] = field(default_factory=list)
    awaiting: list[str] = field(default_factory=list)
    outputs: dict[str, Any] = field(default_factory=dict)

    def to_dict(self) -> dict[str, Any]:
        return {
            "run_id": self.run_id,
            "workflow_id": self.workflow_id,
            "version": self.version,
            "status": self.status,
            "steps": [s.to_dict() for s in self.step_runs],
            "recomputed": list(self.recomputed),
            "skipped": list(self.skipped),
            "awaiting": list(self.awaiting),
            "outputs": self.outputs,
        }


@dataclass
class _CacheRecord:
    outputs: dict[str, Any]
    activity_id: str
    entity_ids: dict[str, str]
    construct: str


@dataclass
class _WorkflowState:
    defn: WorkflowDef
    versions: dict[int, tuple[WorkflowDef, int | None]] = field(default_factory=dict)
    inputs: dict[str, Any] = field(default_factory=dict)
    overrides: dict[str, Override] = field(default_factory=dict)  # slot -> override
    dirty: set[str] = field(default_factory=set)
    slot_entities: dict[str, str] = field(default_factory=dict)  # slot -> entity id
    last_values: dict[str, Any] = field(default_factory=dict)  # "step.port" -> value


class _RunState:
    def __init__(self, run_id: str, wf_id: str, defn: WorkflowDef, mode: str, scope: set[str]):
        self.run_id = run_id
        self.workflow_id = wf_id
        self.defn = defn
        self.mode = mode  # "execute" | "recompute"
        self.scope = scope  # steps that must actually run in recompute mode
        self.statuses: dict[str, str] = {s.step_id: "pending" for s in defn.steps}
        self.step_runs: dict[str, StepRun] = {}
        self.values: dict[tuple[str, str], Any] = {}
        self.recomputed: list[str] = []
        self.agent: str | None = None
        self.finished = False


class WorkflowEngine:
    """Owns workflow definitions, the execution cache, the dirty bookkeeping
    and the provenance graph all runs are recorded into.

    Thread model: steps with no dependency relation run concurrently inside a
    run; all engine state mutations happen under one lock. Manual resolutions
    may arrive from any thread.
    """

    def __init__(
        self,
        graph: ProvGraph | None = None,
        agent: str = "engine",
        resolve_event: Callable[[str], str | None] | None = None,
        max_workers: int = 4,
    ) -> None:
        self.graph = graph if graph is not None else ProvGraph()
        self.agent_label = agent
        self.resolve_event = resolve_event
        self.workflows: dict[str, _WorkflowState] = {}
        self.cache: dict[str, _CacheRecord] = {}
        self.runs: dict[str, _RunState] = {}
        self._lock = threading.RLock()
        self._clock_value = 0
        self._run_seq = 0
        self._max_workers = max_workers

    def _tick(self) -> int:
        self._clock_value += 1
        return self._clock_value

    # -- definition lifecycle ------------------------------------------

    def define_workflow(self, defn: WorkflowDef) -> str:
        """Create a workflow (version 1) or register a new version of an
        existing one; identical redefinitions are no-ops. Returns the id."""
        validate_def(defn)
        with self._lock:
            state = self.workflows.get(defn.workflow_id)
            if state is None:
                defn.version = 1
                state = _WorkflowState(defn=defn)
                state.versions[1] = (defn, None)
                state.dirty = {s.step_id for s in defn.steps}
                self.workflows[defn.workflow_id] = state
                self._emit_plan(defn, parent=None)
                return defn.workflow_id
            current = state.defn
            delta = diff_defs(current, defn)
            if delta.empty:
                return defn.workflow_id
            defn.version = max(state.versions) + 1
            state.versions[defn.version] = (defn, current.version)
            state.defn = defn
            state.dirty |= defn.downstream_closure(
                delta.touched_steps() & {s.step_id for s in defn.steps}
            )
            self._emit_plan(defn, parent=current.version)
            return defn.workflow_id

    def rollback(self, wf_id: str, version: int) -> WorkflowDef:
        """Restore an earlier version; history is kept, later edits branch."""
        state = self._state(wf_id)
        with self._lock:
            if version not in state.versions:
                raise UnknownVersion(f"{wf_id!r} has no version {version}")
            if version == state.defn.version:
                return state.defn
            old = state.defn
            state.defn = state.versions[version][0]
            delta = diff_defs(old, state.defn)
            state.dirty |= state.defn.downstream_closure(
                delta.touched_steps() & {s.step_id for s in state.defn.steps}
            )
            return state.defn

    def diff(self, wf_id: str, version_a: int, version_b: int) -> WorkflowDiff:
        state = self._state(wf_id)
        for v in (version_a, version_b):
            if v not in state.versions:
                raise UnknownVersion(f"{wf_id!r} has no version {v}")
        return diff_defs(state.versions[version_a][0], state.versions[version_b][0])

    def versions(self, wf_id: str) -> list[dict[str, Any]]:
        state = self._state(wf_id)
        return [
            {"version": v, "parent": parent, "current": v == state.defn.version}
            for v, (_, parent) in sorted(state.versions.items())
        ]

    # -- inputs and overrides --------------------------------------------

    def set_input(self, wf_id: str, name: str, value: Any) -> bool:
        """Register a root input value; returns True if this dirtied anything."""
        state = self._state(wf_id)
        with self._lock:
            old = state.inputs.get(name)
            if name in state.inputs and canonical_digest(old) == canonical_digest(value):
                return False
            state.inputs[name] = value
            slot = f"input:{name}"
            override = state.overrides.get(slot)
            base_entity = self._ensure_input_entity(name, value)
            if override is not None:
                if override.sticky:
                    # fresh upstream data arrives underneath a sticky override:
                    # re-derive the revision from the new base, keep the value.
                    self._emit_override(state, name, override, base_entity)
                    return False
                del state.overrides[slot]
            state.slot_entities[slot] = base_entity
            self._mark_input_dirty(state, name)
            return True

    def apply_override(self, wf_id: str, override: Override) -> str:
        """Replace the value behind a provenance entity; returns the revision
        entity id. Dependent steps are marked dirty."""
        state = self._state(wf_id)
        with self._lock:
            slot = None
            for candidate, entity in state.slot_entities.items():
                if entity == override.entity_id:
                    slot = candidate
                    break
            if slot is None or not slot.startswith("input:"):
                raise UnknownEntity(
                    f"{override.entity_id!r} is not an active input entity"
                )
            name = slot[len("input:"):]
            state.overrides[slot] = override
            revision = self._emit_override(state, name, override, override.entity_id)
            self._mark_input_dirty(state, name)
            return revision

    def _mark_input_dirty(self, state: _WorkflowState, name: str) -> None:
        consumers = {
            s.step_id
            for s in state.defn.steps
            for port in s.inputs
            if f"{s.step_id}.{port}" == name
        }
        state.dirty |= state.defn.downstream_closure(consumers)

    def is_dirty(self, wf_id: str) -> bool:
        return bool(self._state(wf_id).dirty)

    def input_entity(self, wf_id: str, name: str) -> str:
        """Provenance entity currently backing a root input (post overrides)."""
        entity = self._state(wf_id).slot_entities.get(f"input:{name}")
        if entity is None:
            raise UnknownEntity(f"input {name!r} has no recorded value")
        return entity

    def latest_outputs(self, wf_id: str) -> dict[str, Any]:
        return dict(self._state(wf_id).last_values)

    # -- execution ---------------------------------------------------------

    def execute(self, wf_id: str, inputs: dict[str, Any] | None = None) -> RunReport:
        """Run the whole workflow (cached steps are served from cache)."""
        state = self._state(wf_id)
        for name, value in (inputs or {}).items():
            self.set_input(wf_id, name, value)
        self._check_roots(state)
        run = self._new_run(state, mode="execute", scope=set())
        return self._drive(state, run)

    def recompute_dirty(self, wf_id: str) -> RunReport:
        """Re-execute exactly the dirty closure; everything else is cache-fed."""
        state = self._state(wf_id)
        self._check_roots(state)
        run = self._new_run(state, mode="recompute", scope=set(state.dirty))
        return self._drive(state, run)

    def resolve_manual(
        self, run_id: str, step_id: str, outputs: dict[str, Any], agent: str
    ) -> RunReport:
        """Supply a suspended manual step's outputs and resume the run."""
        with self._lock:
            run = self.runs.get(run_id)
            if run is None:
                raise UnknownRun(f"no run {run_id!r}")
            if run.statuses.get(step_id) != "awaiting":
                raise NotAwaiting(f"step {step_id!r} of {run_id!r} is not awaiting")
            state = self._state(run.workflow_id)
            step = run.defn.step(step_id)
            for port, tag in step.outputs.items():
                if port not in outputs:
                    raise SchemaMismatch(f"missing output port {port!r}")
                if not value_matches(tag, outputs[port]):
                    raise SchemaMismatch(f"output {port!r} is not a {tag!r}")
            extra = outputs.keys() - step.outputs.keys()
            if extra:
                raise SchemaMismatch(f"unexpected outputs: {sorted(extra)}")
            key, input_entities, digests = self._step_key(state, run, step)
            record = self._record_computation(
                state,
                run,
                step,
                key,
                input_entities,
                BuiltinResult(dict(outputs), construct=Construct.ANNOTATION),
                agent_label=agent,
                human=True,
            )
            self._finish_step(state, run, step, record, digests, cache_hit=False, agent=f"agent:{agent}")
            run.recomputed.append(step_id)
        return self._drive(state, run)

    # -- internals -----------------------------------------------------

    def _state(self, wf_id: str) -> _WorkflowState:
        state = self.workflows.get(wf_id)
        if state is None:
            raise UnknownWorkflow(f"no workflow {wf_id!r}")
        return state

    def _check_roots(self, state: _WorkflowState) -> None:
        for name in state.defn.root_inputs():
            if name not in state.inputs:
                raise MissingInput(f"root input {name!r} not supplied")

    def _new_run(self, state: _WorkflowState, mode: str, scope: set[str]) -> _RunState:
        with self._lock:
            self._run_seq += 1
            run_id = f"run-{self._run_seq}"
            run = _RunState(run_id, state.defn.workflow_id, state.defn, mode, scope)
            self.runs[run_id] = run
            return run

    def _effective_input(
        self, state: _WorkflowState, run: _RunState, step: StepDef, port: str
    ) -> tuple[Any, str | None]:
        """Value and provenance entity feeding ``step.port`` in this run."""
        producer = state.defn.producers().get((step.step_id, port))
        if producer is not None:
            slot = f"output:{producer.src_step}.{producer.src_port}"
            value = run.values[(producer.src_step, producer.src_port)]
            return value, state.slot_entities.get(slot)
        name = f"{step.step_id}.{port}"
        slot = f"input:{name}"
        if name in state.inputs or slot in state.overrides:
            override = state.overrides.get(slot)
            if override is not None:
                return override.value, state.slot_entities.get(slot)
            return state.inputs[name], state.slot_entities.get(slot)
        if port in step.defaults:
            return step.defaults[port], None
        return _builtin_defaults(step)[port], None

    def _step_key(
        self, state: _WorkflowState, run: _RunState, step: StepDef
    ) -> tuple[str, list[str], dict[str, str]]:
        digests, entities = {}, []
        for port in sorted(step.inputs):
            value, entity = self._effective_input(state, run, step, port)
            digests[port] = canonical_digest(value)
            if entity:
                entities.append(entity)
        payload = {
            "schema": ENGINE_SCHEMA_VERSION,
            "mode": step.mode,
            "builtin": step.builtin,
            "prompt": step.prompt,
            "params": step.params,
            "inputs": digests,
            "outputs": step.outputs,
        }
        return canonical_digest(payload), entities, digests

    def _ready_steps(self, state: _WorkflowState, run: _RunState) -> list[StepDef]:
        ready = []
        for step in run.defn.steps:
            if run.statuses[step.step_id] != "pending":
                continue
            producers = run.defn.upstream_steps(step.step_id)
            if any(run.statuses[p] in ("error", "skipped") for p in producers):
                run.statuses[step.step_id] = "skipped"
                run.step_runs[step.step_id] = StepRun(
                    run.run_id, step.step_id, "skipped"
                )
                continue
            if all(run.statuses[p] == "ok" for p in producers):
                ready.append(step)
        return ready

    def _drive(self, state: _WorkflowState, run: _RunState) -> RunReport:
        while True:
            with self._lock:
                ready = self._ready_steps(state, run)
                runnable = []
                for step in ready:
                    key, input_entities, digests = self._step_key(state, run, step)
                    record = self.cache.get(key)
                    must_run = run.mode == "recompute" and step.step_id in run.scope
                    if record is not None and not must_run:
                        self._finish_step(
                            state, run, step, record, digests, cache_hit=True,
                            agent=f"agent:{self.agent_label}",
                        )
                    elif step.mode == "manual" and record is None:
                        run.statuses[step.step_id] = "awaiting"
                        run.step_runs[step.step_id] = StepRun(
                            run.run_id, step.step_id, "awaiting", input_digests=digests
                        )
                    elif record is not None:  # dirty but byte-identical inputs
                        self._finish_step(
                            state, run, step, record, digests, cache_hit=False,
                            agent=f"agent:{self.agent_label}",
                        )
                        run.recomputed.append(step.step_id)
                    else:
                        runnable.append((step, key, input_entities, digests))
                if not runnable:
                    progressed = any(
                        run.statuses[s.step_id] == "ok" for s in ready
                    )
                    if not progressed:
                        break
                    continue
            results = self._run_batch(state, run, runnable)
            with self._lock:
                for step, key, input_entities, digests, outcome in results:
                    if isinstance(outcome, Exception):
                        run.statuses[step.step_id] = "error"
                        run.step_runs[step.step_id] = StepRun(
                            run.run_id,
                            step.step_id,
                            "error",
                            input_digests=digests,
                            error=f"{type(outcome).__name__}: {outcome}",
                        )
                        continue
                    record = self._record_computation(
                        state, run, step, key, input_entities, outcome,
                        agent_label=self.agent_label, human=False,
                    )
                    self._finish_step(
                        state, run, step, record, digests, cache_hit=False,
                        agent=f"agent:{self.agent_label}",
                    )
                    run.recomputed.append(step.step_id)
        return self._report(state, run)

    def _run_batch(self, state, run, runnable):
        def invoke(item):
            step, key, input_entities, digests = item
            values = {}
            for port in step.inputs:
                values[port], _ = self._effective_input(state, run, step, port)
            try:
                result = BUILTINS[step.builtin].fn(step.params, values)
                for port, tag in step.outputs.items():
                    if port not in result.outputs or not value_matches(
                        tag, result.outputs[port]
                    ):
                        raise SchemaMismatch(
                            f"builtin {step.builtin!r} produced a bad {port!r}"
                        )
                return (step, key, input_entities, digests, result)
            except Exception as exc:  # recorded as StepFailed on the report
                return (step, key, input_entities, digests, exc)

        if len(runnable) == 1:
            return [invoke(runnable[0])]
        with ThreadPoolExecutor(max_workers=self._max_workers) as pool:
            return list(pool.map(invoke, runnable))

    def _finish_step(
        self,
        state: _WorkflowState,
        run: _RunState,
        step: StepDef,
        record: _CacheRecord,
        digests: dict[str, str],
        cache_hit: bool,
        agent: str,
    ) -> None:
        started = self._tick()
        for port, value in record.outputs.items():
            slot = f"output:{step.step_id}.{port}"
            run.values[(step.step_id, port)] = value
            state.slot_entities[slot] = record.entity_ids[port]
            state.last_values[f"{step.step_id}.{port}"] = value
        run.statuses[step.step_id] = "ok"
        run.step_runs[step.step_id] = StepRun(
            run.run_id,
            step.step_id,
            "ok",
            input_digests=digests,
            output_digests={
                port: canonical_digest(v) for port, v in record.outputs.items()
            },
            agent=agent,
            started=started,
            ended=self._tick(),
            cache_hit=cache_hit,
        )
        state.dirty.discard(step.step_id)

    def _report(self, state: _WorkflowState, run: _RunState) -> RunReport:
        statuses = run.statuses
        awaiting = sorted(s for s, st in statuses.items() if st == "awaiting")
        skipped = sorted(s for s, st in statuses.items() if st == "skipped")
        errors = [s for s, st in statuses.items() if st == "error"]
        if errors:
            overall = "error"
        elif awaiting or any(st == "pending" for st in statuses.values()):
            overall = "awaiting"
        else:
            overall = "ok"
        consumed = {(e.src_step, e.src_port) for e in run.defn.edges}
        outputs = {
            f"{step.step_id}.{port}": run.values[(step.step_id, port)]
            for step in run.defn.steps
            for port in step.outputs
            if (step.step_id, port) in run.values
            and (step.step_id, port) not in consumed
        }
        report = RunReport(
            run_id=run.run_id,
            workflow_id=run.workflow_id,
            version=run.defn.version,
            status=overall,
            step_runs=[run.step_runs[s.step_id] for s in run.defn.steps if s.step_id in run.step_runs],
            recomputed=sorted(set(run.recomputed)),
            skipped=skipped,
            awaiting=awaiting,
            outputs=outputs,
        )
        return report

    # -- provenance emission ------------------------------------------

    def _ensure_agent(self, label: str, human: bool) -> str:
        agent_id = f"agent:{label}"
        if agent_id not in self.graph:
            kind = (
                NodeKind.of(Construct.HUMAN)
                if human
                else NodeKind(TopLevel.AGENT)
            )
            self.graph.add_node(ProvNode(agent_id, kind, label=label))
        return agent_id

    def _ensure_input_entity(self, name: str, value: Any) -> str:
        digest = canonical_digest(value)
        entity_id = f"input:{name}:{digest[:12]}"
        if entity_id not in self.graph:
            attrs: dict[str, Any] = {"input": name, "digest": digest[:12]}
            if isinstance(value, list):
                attrs["rows"] = len(value)
            self.graph.add_node(
                ProvNode(
                    entity_id,
                    NodeKind.of(Construct.DATASET),
                    label=f"input {name}",
                    attrs=attrs,
                )
            )
        return entity_id

    def _emit_plan(self, defn: WorkflowDef, parent: int | None) -> None:
        plan_id = f"plan:{defn.workflow_id}:v{defn.version}"
        if plan_id in self.graph:
            return
        self.graph.add_node(
            ProvNode(
                plan_id,
                NodeKind(TopLevel.ENTITY),
                label=f"workflow {defn.workflow_id} v{defn.version}",
                attrs={
                    "prov:type": "prov:Plan",
                    "workflow_id": defn.workflow_id,
                    "version": defn.version,
                    "steps": sorted(s.step_id for s in defn.steps),
                },
            )
        )
        if parent is not None:
            parent_id = f"plan:{defn.workflow_id}:v{parent}"
            if parent_id in self.graph:
                self.graph.add_edge(
                    ProvEdge(
                        plan_id,
                        parent_id,
                        EdgeKind(Relation.WAS_DERIVED_FROM, Connection.DATA),
                    )
                )

    def _emit_override(
        self, state: _WorkflowState, name: str, override: Override, base_entity: str
    ) -> str:
        digest = canonical_digest(override.value)
        revision_id = f"input:{name}:{digest[:12]}"
        activity_id = f"override:{name}:{base_entity.rsplit(':', 1)[-1]}:{digest[:8]}"
        if activity_id not in self.graph:
            self.graph.add_node(
                ProvNode(
                    activity_id,
                    NodeKind.of(Construct.ANNOTATION),
                    label=f"manual override of {name}",
                    attrs={"reason": override.reason, "sticky": override.sticky},
                )
            )
            self.graph.add_edge(
                ProvEdge(activity_id, base_entity, EdgeKind(Relation.USED, Connection.DATA))
            )
            agent_id = self._ensure_agent(override.author, human=True)
            self.graph.add_edge(
                ProvEdge(
                    activity_id, agent_id, EdgeKind(Relation.WAS_ASSOCIATED_WITH, Connection.DATA)
                )
            )
        if revision_id not in self.graph:
            self.graph.add_node(
                ProvNode(
                    revision_id,
                    NodeKind.of(Construct.DATASET),
                    label=f"override of {name}",
                    attrs={"input": name, "digest": digest[:12], "override": True},
                )
            )
            self.graph.add_edge(
                ProvEdge(
                    revision_id, activity_id, EdgeKind(Relation.WAS_GENERATED_BY, Connection.DATA)
                )
            )
        self.graph.add_edge(
            ProvEdge(
                revision_id, base_entity, EdgeKind(Relation.WAS_DERIVED_FROM, Connection.DATA)
            )
        )
        state.slot_entities[f"input:{name}"] = revision_id
        return revision_id

    def _record_computation(
        self,
        state: _WorkflowState,
        run: _RunState,
        step: StepDef,
        key: str,
        input_entities: list[str],
        result: BuiltinResult,
        agent_label: str,
        human: bool,
    ) -> _CacheRecord:
        short = key[:12]
        activity_id = f"step:{step.step_id}:{short}"
        if activity_id not in self.graph:
            attrs: dict[str, Any] = {
                "step_id": step.step_id,
                "run_id": run.run_id,
                "workflow_id": run.workflow_id,
            }
            if step.mode == "manual":
                attrs["prompt"] = step.prompt or ""
            else:
                attrs["builtin"] = step.builtin
                if step.params:
                    attrs["params"] = step.params
            self.graph.add_node(
                ProvNode(
                    activity_id,
                    NodeKind.of(result.construct),
                    label=f"{step.step_id} ({'manual' if step.mode == 'manual' else step.builtin})",
                    attrs=attrs,
                )
            )
            for entity in dict.fromkeys(input_entities):
                self.graph.add_edge(
                    ProvEdge(activity_id, entity, EdgeKind(Relation.USED, Connection.DATA))
                )
            agent_id = self._ensure_agent(agent_label, human=human)
            self.graph.add_edge(
                ProvEdge(
                    activity_id, agent_id, EdgeKind(Relation.WAS_ASSOCIATED_WITH, Connection.DATA)
                )
            )
        entity_ids = {}
        for port, value in result.outputs.items():
            entity_id = f"data:{short}:{port}"
            entity_ids[port] = entity_id
            if entity_id not in self.graph:
                attrs = {
                    "step_id": step.step_id,
                    "port": port,
                    "digest": canonical_digest(value)[:12],
                }
                if isinstance(value, list):
                    attrs["rows"] = len(value)
                self.graph.add_node(
                    ProvNode(
                        entity_id,
                        NodeKind.of(Construct.DATASET),
                        label=f"{step.step_id}.{port}",
                        attrs=attrs,
                    )
                )
                self.graph.add_edge(
                    ProvEdge(
                        entity_id, activity_id, EdgeKind(Relation.WAS_GENERATED_BY, Connection.DATA)
                    )
                )
                self._decompose_rows(entity_id, value)
        for metric in result.metrics:
            metric_id = f"metric:{short}:{metric.key}"
            if metric_id in self.graph:
                continue
            self.graph.add_node(
                ProvNode(
                    metric_id,
                    NodeKind.of(Construct.METRIC),
                    label=f"goal_pct {metric.key}",
                    attrs={
                        "player": metric.key,
                        "value": metric.value,
                        "source_event_ids": list(metric.source_event_ids),
                    },
                )
            )
            self.graph.add_edge(
                ProvEdge(
                    metric_id, activity_id, EdgeKind(Relation.WAS_GENERATED_BY, Connection.DATA)
                )
            )
            for event_id in metric.source_event_ids:
                state_node = self.resolve_event(event_id) if self.resolve_event else None
                if state_node and state_node in self.graph:
                    self.graph.add_edge(
                        ProvEdge(
                            metric_id,
                            state_node,
                            EdgeKind(Relation.WAS_DERIVED_FROM, Connection.DATA),
                        )
                    )
        record = _CacheRecord(
            outputs=dict(result.outputs),
            activity_id=activity_id,
            entity_ids=entity_ids,
            construct=result.construct.value,
        )
        self.cache[key] = record
        return record

    def _decompose_rows(self, entity_id: str, value: Any) -> None:
        """Link a tabular dataset to the game states its rows represent."""
        if self.resolve_event is None or not isinstance(value, list):
            return
        seen: set[str] = set()
        for row in value:
            if not isinstance(row, dict):
                continue
            event_id = row.get("event_id")
            if not event_id or event_id in seen:
                continue
            seen.add(event_id)
            state_node = self.resolve_event(event_id)
            if state_node and state_node in self.graph:
                self.graph.add_edge(
                    ProvEdge(
                        entity_id,
                        state_node,
                        EdgeKind(Relation.WAS_DERIVED_FROM, Connection.DATA),
                    )
                )


    # -- persistence -----------------------------------------------------

    def dump_state(self) -> dict[str, Any]:
        """JSON-compatible snapshot of definitions, inputs, overrides, dirty
        sets, the value cache and run log (the provenance graph is persisted
        separately as a document)."""
        with self._lock:
            workflows = {}
            for wf_id, state in self.workflows.items():
                workflows[wf_id] = {
                    "current": state.defn.version,
                    "versions": [
                        {"version": v, "parent": parent, "def": defn.to_dict()}
                        for v, (defn, parent) in sorted(state.versions.items())
                    ],
                    "inputs": state.inputs,
                    "overrides": {
                        slot: {
                            "entity_id": ov.entity_id,
                            "value": ov.value,
                            "reason": ov.reason,
                            "author": ov.author,
                            "sticky": ov.sticky,
                        }
                        for slot, ov in state.overrides.items()
                    },
                    "dirty": sorted(state.dirty),
                    "slot_entities": state.slot_entities,
                    "last_values": state.last_values,
                }
            runs = {}
            for run_id, run in self.runs.items():
                runs[run_id] = {
                    "workflow_id": run.workflow_id,
                    "version": run.defn.version,
                    "mode": run.mode,
                    "scope": sorted(run.scope),
                    "statuses": run.statuses,
                    "recomputed": run.recomputed,
                    "values": [
                        [step, port, value] for (step, port), value in run.values.items()
                    ],
                }
            cache = {
                key: {
                    "outputs": rec.outputs,
                    "activity_id": rec.activity_id,
                    "entity_ids": rec.entity_ids,
                    "construct": rec.construct,
                }
                for key, rec in self.cache.items()
            }
            return {
                "clock": self._clock_value,
                "run_seq": self._run_seq,
                "workflows": workflows,
                "cache": cache,
                "runs": runs,
            }

    def load_state(self, data: dict[str, Any]) -> None:
        with self._lock:
            self._clock_value = data.get("clock", 0)
            self._run_seq = data.get("run_seq", 0)
            self.cache = {
                key: _CacheRecord(
                    outputs=rec["outputs"],
                    activity_id=rec["activity_id"],
                    entity_ids=rec["entity_ids"],
                    construct=rec["construct"],
                )
                for key, rec in data.get("cache", {}).items()
            }
            self.workflows = {}
            for wf_id, blob in data.get("workflows", {}).items():
                versions: dict[int, tuple[WorkflowDef, int | None]] = {}
                for entry in blob["versions"]:
                    defn = WorkflowDef.from_dict(entry["def"])
                    defn.version = entry["version"]
                    versions[entry["version"]] = (defn, entry["parent"])
                state = _WorkflowState(defn=versions[blob["current"]][0])
                state.versions = versions
                state.inputs = blob.get("inputs", {})
                state.overrides = {
                    slot: Override(**fields)
                    for slot, fields in blob.get("overrides", {}).items()
                }
                state.dirty = set(blob.get("dirty", ()))
                state.slot_entities = blob.get("slot_entities", {})
                state.last_values = blob.get("last_values", {})
                self.workflows[wf_id] = state
            self.runs = {}
            for run_id, blob in data.get("runs", {}).items():
                wf_state = self.workflows.get(blob["workflow_id"])
                if wf_state is None:
                    continue
                defn = wf_state.versions.get(blob["version"], (wf_state.defn, None))[0]
                run = _RunState(
                    run_id, blob["workflow_id"], defn, blob["mode"], set(blob["scope"])
                )
                run.statuses = blob["statuses"]
                run.recomputed = blob["recomputed"]
                run.values = {
                    (step, port): value for step, port, value in blob["values"]
                }
                self.runs[run_id] = run


def load_workflow_json(text: str) -> WorkflowDef:
    return WorkflowDef.from_dict(json.loads(text))
