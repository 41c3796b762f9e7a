"""Provenance engine for sport performance analysis.

One graph holds both the physical provenance of the game (possession chains
of states, actions and players) and the workflow provenance of everything
computed from it (datasets, computations, metrics), so a metric can be traced
all the way back to the video segments of the events that produced it.
"""

from .graph import (
    Connection,
    Construct,
    CycleIntroduced,
    DuplicateGeneration,
    DuplicateId,
    EdgeKind,
    IllegalRelation,
    InvalidNode,
    MissingEndpoint,
    NodeKind,
    ProvEdge,
    ProvError,
    ProvGraph,
    ProvNode,
    Relation,
    TopLevel,
    UnknownNode,
    Violation,
    derive_id,
)
from .events import (
    EventKind,
    GameEvent,
    GameIngest,
    IngestDelta,
    InvalidEvent,
    InvalidInterval,
    NoOpenChain,
    OutOfOrderEvent,
    PossessionChain,
    Terminal,
    UnknownPlayer,
    events_to_jsonl,
    parse_events_jsonl,
)
from .query import (
    ClipRef,
    GoalAssists,
    NotAGoal,
    NotAMetric,
    QueryFilter,
    drill_down,
    goal_assists,
    ordered_node_ids,
    trace_influences,
)
from .interop import (
    InvalidGraph,
    ProvDocument,
    SprovSyntaxError,
    UnknownRelation,
    graph_from_json,
    graph_to_json,
    parse,
    parse_document,
    serialize,
    strip_specialisation,
)
from .workflow import (
    BUILTINS,
    Override,
    RunReport,
    StepDef,
    StepRun,
    WireEdge,
    WorkflowDef,
    WorkflowDiff,
    WorkflowEngine,
    apply_diff,
    diff_defs,
    goal_pct,
    load_workflow_json,
)
from .privacy import (
    ConflictingNode,
    EmptyInput,
    FrontierMismatch,
    RedactionMap,
    UnknownCode,
    UnmappedPlayer,
    deidentify,
    export_partial,
    make_map,
    merge_external,
    reidentify,
    scan_for_identifiers,
)

__version__ = "0.1.0"
