/** Typed client for the sportprov HTTP API and its NDJSON push stream. */

export interface GameEventPayload {
  event_id: string;
  ts_ms: number;
  kind: string;
  player?: string | null;
  target_player?: string | null;
  video_ref?: string;
  attrs?: Record<string, unknown>;
}

export interface IngestSummary {
  event_id: string;
  nodes: string[];
  edges: number;
  chain_id: string | null;
  closed_chain: ChainJson | null;
  skipped: boolean;
  game: string;
  seq: number;
}

export interface ChainJson {
  chain_id: string;
  start_event: string;
  events: string[];
  terminal: string | null;
}

export interface ChainsResponse {
  finalized: ChainJson[];
  open: ChainJson | null;
}

export interface NodeJson {
  id: string;
  top_level: string;
  construct: string | null;
  label: string;
  attrs: Record<string, unknown>;
  created_at: number | null;
}

export interface EdgeJson {
  src: string;
  dst: string;
  relation: string;
  connection: string | null;
  label: string | null;
  attrs: Record<string, unknown>;
}

export interface GraphJson {
  namespaces: Record<string, string>;
  nodes: NodeJson[];
  edges: EdgeJson[];
}

export interface TraceFilter {
  node_kinds?: string[] | null;
  max_activity_depth?: number | null;
  stop_at_reset?: boolean;
  connection_classes?: string[] | null;
}

export interface TraceResponse {
  target: string;
  graph: GraphJson;
  ordered: string[];
}

export interface MetricRow {
  player: string;
  goals: number;
  behinds: number;
  goal_pct: number | null;
}

export interface MetricsResponse {
  workflow: string;
  version: number;
  dirty: boolean;
  outputs: Record<string, unknown>;
  table: MetricRow[] | null;
}

export interface StreamMessage {
  seq: number;
  type: string;
  data: Record<string, unknown>;
}

/** Error payload shape the service returns for every failure. */
export class ApiError extends Error {
  constructor(
    public status: number,
    public code: string,
    message: string,
  ) {
    super(message);
  }
}

export class ApiClient {
  constructor(private base: string) {}

  private async request<T>(method: string, path: string, body?: unknown): Promise<T> {
    const response = await fetch(this.base + path, {
      method,
      headers: body !== undefined ? { "Content-Type": "application/json" } : undefined,
      body: body !== undefined ? JSON.stringify(body) : undefined,
    });
    const text = await response.text();
    const payload = text ? JSON.parse(text) : {};
    if (!response.ok) {
      throw new ApiError(response.status, payload.code ?? "Unknown", payload.message ?? text);
    }
    return payload as T;
  }

  postEvent(game: string, event: GameEventPayload): Promise<IngestSummary> {
    return this.request("POST", `/games/${encodeURIComponent(game)}/events`, event);
  }

  chains(game: string): Promise<ChainsResponse> {
    return this.request("GET", `/games/${encodeURIComponent(game)}/chains`);
  }

  trace(target: string, filter: TraceFilter): Promise<TraceResponse> {
    return this.request("POST", "/query/trace", { target, filter });
  }

  metrics(workflow: string): Promise<MetricsResponse> {
    return this.request("GET", `/metrics/${encodeURIComponent(workflow)}/latest`);
  }

  defineWorkflow(definition: Record<string, unknown>): Promise<{ workflow_id: string; version: number }> {
    return this.request("POST", "/workflows", definition);
  }

  runWorkflow(workflow: string, inputs: Record<string, unknown>): Promise<Record<string, unknown>> {
    return this.request("POST", `/workflows/${encodeURIComponent(workflow)}/run`, { inputs });
  }

  /**
   * Open the push stream and invoke `onMessage` per decoded line until the
   * signal aborts or the connection drops. Resolves when the stream ends.
   */
  async stream(onMessage: (message: StreamMessage) => void, signal?: AbortSignal): Promise<void> {
    const response = await fetch(this.base + "/stream", { signal });
    if (!response.ok || response.body === null) {
      throw new ApiError(response.status, "StreamUnavailable", "cannot open /stream");
    }
    const reader = response.body.getReader();
    const decoder = new TextDecoder();
    let buffered = "";
    for (;;) {
      const { done, value } = await reader.read();
      if (done) return;
      buffered += decoder.decode(value, { stream: true });
      for (;;) {
        const newline = buffered.indexOf("\n");
        if (newline < 0) break;
        const line = buffered.slice(0, newline).trim();
        buffered = buffered.slice(newline + 1);
        if (line) onMessage(JSON.parse(line) as StreamMessage);
      }
    }
  }
}
