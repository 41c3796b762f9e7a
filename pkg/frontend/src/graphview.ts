/**
 * Provenance viewer: lays out a query answer and renders it as SVG.
 *
 * The viewer never computes provenance itself — it draws exactly the graph
 * the service returned. Arrows point at the dependency (head on the node the
 * source depends on) and every arrow carries its relation name as a label,
 * because an unlabelled arrow is routinely misread as data flow.
 *
 * Layout is deterministic and per-node: x comes from the event timestamp
 * when present (time flows left to right) or an id hash otherwise, y from
 * the construct lane plus an id-hash jitter. Because a node's position never
 * depends on which other nodes are visible, toggling filters hides branches
 * without the rest of the picture jumping.
 */

import type { GraphJson } from "./api.js";
import { edgeStyleFor, symbolFor, type EdgeStyle, type SymbolStyle } from "./notation.js";
import { escapeHtml } from "./tiles.js";

export interface PositionedNode {
  id: string;
  x: number;
  y: number;
  label: string;
  construct: string | null;
  topLevel: string;
  style: SymbolStyle;
  fallback: boolean;
  videoRef: string | null;
  clipStart: number | null;
  clipEnd: number | null;
}

export interface PositionedEdge {
  src: string;
  dst: string;
  relation: string;
  style: EdgeStyle;
  x1: number;
  y1: number;
  x2: number;
  y2: number;
}

export interface GraphModel {
  nodes: PositionedNode[];
  edges: PositionedEdge[];
  width: number;
  height: number;
}

/** Deterministic 32-bit hash (FNV-1a) used for stable pseudo-positions. */
export function hashId(text: string, seed = 0x811c9dc5): number {
  let hash = seed >>> 0;
  for (let i = 0; i < text.length; i++) {
    hash ^= text.charCodeAt(i);
    hash = Math.imul(hash, 0x01000193) >>> 0;
  }
  return hash >>> 0;
}

const LANES: Record<string, [number, number]> = {
  Activity: [0.12, 0.3],
  Entity: [0.4, 0.58],
  Agent: [0.68, 0.86],
};

export function layoutGraph(graph: GraphJson, width = 960, height = 520, seed = 1): GraphModel {
  const stamps = graph.nodes
    .map((n) => n.attrs["ts_ms"])
    .filter((t): t is number => typeof t === "number");
  const minTs = stamps.length ? Math.min(...stamps) : 0;
  const maxTs = stamps.length ? Math.max(...stamps) : 1;
  const span = Math.max(1, maxTs - minTs);

  const positioned = new Map<string, PositionedNode>();
  for (const node of graph.nodes) {
    const hash = hashId(node.id, 0x811c9dc5 + seed);
    const ts = node.attrs["ts_ms"];
    const x =
      typeof ts === "number"
        ? 70 + ((ts - minTs) / span) * (width - 140)
        : 70 + (hash % 1000) / 1000 * (width - 140);
    const [laneLo, laneHi] = LANES[node.top_level] ?? LANES.Entity;
    const jitter = ((hash >>> 10) % 1000) / 1000;
    const y = height * (laneLo + jitter * (laneHi - laneLo));
    const resolved = symbolFor(node.construct);
    positioned.set(node.id, {
      id: node.id,
      x: Math.round(x),
      y: Math.round(y),
      label: node.label || node.id,
      construct: node.construct,
      topLevel: node.top_level,
      style: resolved.style,
      fallback: resolved.fallback,
      videoRef: (node.attrs["video_ref"] as string) ?? null,
      clipStart: (node.attrs["clip_start_ms"] as number) ?? null,
      clipEnd: (node.attrs["clip_end_ms"] as number) ?? null,
    });
  }

  const edges: PositionedEdge[] = [];
  for (const edge of graph.edges) {
    const src = positioned.get(edge.src);
    const dst = positioned.get(edge.dst);
    if (!src || !dst) continue;
    edges.push({
      src: edge.src,
      dst: edge.dst,
      relation: edge.relation,
      style: edgeStyleFor(edge.connection),
      x1: src.x,
      y1: src.y,
      x2: dst.x,
      y2: dst.y,
    });
  }
  return { nodes: [...positioned.values()], edges, width, height };
}

const NODE_R = 16;

function shapePath(style: SymbolStyle, x: number, y: number): string {
  const r = NODE_R;
  const attrs = `fill="${style.colour}" fill-opacity="0.2" stroke="${style.colour}" stroke-width="2"`;
  switch (style.shape) {
    case "circle":
      return `<circle cx="${x}" cy="${y}" r="${r}" ${attrs}/>`;
    case "ring":
      return `<circle cx="${x}" cy="${y}" r="${r}" ${attrs}/><circle cx="${x}" cy="${y}" r="${r - 5}" fill="none" stroke="${style.colour}" stroke-width="2"/>`;
    case "ellipse":
      return `<ellipse cx="${x}" cy="${y}" rx="${r + 6}" ry="${r - 3}" ${attrs}/>`;
    case "capsule":
      return `<rect x="${x - r - 6}" y="${y - r + 5}" width="${2 * r + 12}" height="${2 * r - 10}" rx="${r - 5}" ${attrs}/>`;
    case "rect":
      return `<rect x="${x - r}" y="${y - r + 3}" width="${2 * r}" height="${2 * r - 6}" ${attrs}/>`;
    case "rounded":
      return `<rect x="${x - r}" y="${y - r + 3}" width="${2 * r}" height="${2 * r - 6}" rx="6" ${attrs}/>`;
    case "diamond":
      return polygon(attrs, [x, y - r], [x + r, y], [x, y + r], [x - r, y]);
    case "hexagon":
      return polygon(
        attrs,
        [x - r, y],
        [x - r / 2, y - r],
        [x + r / 2, y - r],
        [x + r, y],
        [x + r / 2, y + r],
        [x - r / 2, y + r],
      );
    case "octagon": {
      const k = r * 0.42;
      return polygon(
        attrs,
        [x - k, y - r], [x + k, y - r], [x + r, y - k], [x + r, y + k],
        [x + k, y + r], [x - k, y + r], [x - r, y + k], [x - r, y - k],
      );
    }
    case "house":
      return polygon(attrs, [x - r, y + r], [x - r, y - 3], [x, y - r], [x + r, y - 3], [x + r, y + r]);
    case "shield":
      return polygon(attrs, [x - r, y - r + 4], [x + r, y - r + 4], [x + r, y + 2], [x, y + r], [x - r, y + 2]);
    case "triangle":
      return polygon(attrs, [x, y - r], [x + r, y + r], [x - r, y + r]);
    case "trapezoid":
      return polygon(attrs, [x - r + 6, y - r + 5], [x + r - 6, y - r + 5], [x + r, y + r - 5], [x - r, y + r - 5]);
    case "star": {
      const points: Array<[number, number]> = [];
      for (let i = 0; i < 10; i++) {
        const radius = i % 2 === 0 ? r : r / 2.4;
        const angle = -Math.PI / 2 + (i * Math.PI) / 5;
        points.push([x + radius * Math.cos(angle), y + radius * Math.sin(angle)]);
      }
      return polygon(attrs, ...points);
    }
  }
}

function polygon(attrs: string, ...points: Array<[number, number]>): string {
  const joined = points.map(([px, py]) => `${Math.round(px)},${Math.round(py)}`).join(" ");
  return `<polygon points="${joined}" ${attrs}/>`;
}

/** Render the model as an SVG string (the app injects it into the page). */
export function renderSvg(model: GraphModel): string {
  const parts: string[] = [
    `<svg viewBox="0 0 ${model.width} ${model.height}" xmlns="http://www.w3.org/2000/svg">`,
    `<defs><marker id="dep-arrow" markerWidth="9" markerHeight="7" refX="8" refY="3.5" orient="auto"><polygon points="0 0, 9 3.5, 0 7" fill="#334155"/></marker></defs>`,
  ];
  for (const edge of model.edges) {
    // trim the line so the arrowhead rests on the target symbol's rim
    const dx = edge.x2 - edge.x1;
    const dy = edge.y2 - edge.y1;
    const len = Math.max(1, Math.hypot(dx, dy));
    const tx = edge.x2 - (dx / len) * (NODE_R + 6);
    const ty = edge.y2 - (dy / len) * (NODE_R + 6);
    const dash = edge.style.dash ? ` stroke-dasharray="${edge.style.dash}"` : "";
    parts.push(
      `<line x1="${edge.x1}" y1="${edge.y1}" x2="${Math.round(tx)}" y2="${Math.round(ty)}" stroke="${edge.style.colour}" stroke-width="${edge.style.width}"${dash} marker-end="url(#dep-arrow)"/>`,
    );
    const midX = Math.round((edge.x1 + tx) / 2);
    const midY = Math.round((edge.y1 + ty) / 2) - 4;
    parts.push(
      `<text x="${midX}" y="${midY}" class="edge-label" text-anchor="middle">${escapeHtml(edge.relation)}</text>`,
    );
  }
  for (const node of model.nodes) {
    const clip = node.videoRef
      ? ` data-video-ref="${escapeHtml(node.videoRef)}" data-clip-start="${node.clipStart ?? ""}" data-clip-end="${node.clipEnd ?? ""}"`
      : "";
    parts.push(`<g class="node" data-node-id="${escapeHtml(node.id)}"${clip}>`);
    parts.push(shapePath(node.style, node.x, node.y));
    parts.push(
      `<text x="${node.x}" y="${node.y + 5}" text-anchor="middle" class="node-icon">${node.style.icon}</text>`,
    );
    parts.push(
      `<text x="${node.x}" y="${node.y + NODE_R + 14}" text-anchor="middle" class="node-label">${escapeHtml(shorten(node.label))}</text>`,
    );
    if (node.fallback) {
      parts.push(
        `<text x="${node.x + NODE_R}" y="${node.y - NODE_R}" class="warning-badge">⚠</text>`,
      );
    }
    parts.push("</g>");
  }
  parts.push("</svg>");
  return parts.join("\n");
}

function shorten(label: string, max = 26): string {
  return label.length > max ? label.slice(0, max - 1) + "…" : label;
}
