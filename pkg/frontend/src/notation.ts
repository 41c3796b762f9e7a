/**
 * The visual notation: every sport construct carries its own (shape, colour,
 * icon) triple, and the two connection classes get their own line styles.
 *
 * Shape and colour are assigned together (dual coding): all entries are
 * pairwise distinct in shape AND in colour, so symbols stay tellable apart
 * for colour-blind users, and no two constructs collapse onto one glyph.
 * Dependency arrows are always labelled with the relation name — unlabelled
 * arrows read as data flow, which is exactly backwards.
 */

export type Shape =
  | "circle"
  | "ring"
  | "ellipse"
  | "capsule"
  | "rect"
  | "rounded"
  | "diamond"
  | "hexagon"
  | "octagon"
  | "house"
  | "shield"
  | "triangle"
  | "trapezoid"
  | "star";

export interface SymbolStyle {
  shape: Shape;
  colour: string;
  icon: string;
}

export interface EdgeStyle {
  colour: string;
  dash: string | null; // SVG dash pattern, null = solid
  width: number;
}

/** Node constructs (11 from the domain vocabulary + 2 plumbing additions). */
export const CONSTRUCT_SYMBOLS: Record<string, SymbolStyle> = {
  VideoFeed: { shape: "ellipse", colour: "#7c3aed", icon: "🎥" },
  PhysicalGameState: { shape: "circle", colour: "#0ea5e9", icon: "🏉" },
  Metric: { shape: "ring", colour: "#f59e0b", icon: "📊" },
  Dataset: { shape: "capsule", colour: "#64748b", icon: "🗃️" },
  Annotation: { shape: "rect", colour: "#10b981", icon: "✏️" },
  Computation: { shape: "rounded", colour: "#2563eb", icon: "⚙️" },
  DeIdentify: { shape: "shield", colour: "#dc2626", icon: "🕶️" },
  GameAction: { shape: "diamond", colour: "#ea580c", icon: "⚡" },
  Human: { shape: "house", colour: "#16a34a", icon: "🧑" },
  Player: { shape: "hexagon", colour: "#65a30d", icon: "🏃" },
  PlayerRole: { shape: "trapezoid", colour: "#a16207", icon: "🎽" },
  Sensor: { shape: "triangle", colour: "#db2777", icon: "📡" },
  WebPortal: { shape: "octagon", colour: "#0891b2", icon: "🌐" },
};

/** Connection classes (the remaining two constructs of the vocabulary). */
export const CONNECTION_STYLES: Record<string, EdgeStyle> = {
  data: { colour: "#475569", dash: "6 3", width: 1.5 },
  physical: { colour: "#c2410c", dash: null, width: 2.5 },
};

export const DEFAULT_EDGE_STYLE: EdgeStyle = { colour: "#94a3b8", dash: "2 3", width: 1 };

/** Unknown specialisations render with this symbol plus a warning badge. */
export const FALLBACK_SYMBOL: SymbolStyle = { shape: "star", colour: "#9ca3af", icon: "❓" };

export interface ResolvedSymbol {
  style: SymbolStyle;
  fallback: boolean;
}

export function symbolFor(construct: string | null): ResolvedSymbol {
  if (construct !== null && construct in CONSTRUCT_SYMBOLS) {
    return { style: CONSTRUCT_SYMBOLS[construct], fallback: false };
  }
  return { style: FALLBACK_SYMBOL, fallback: true };
}

export function edgeStyleFor(connection: string | null): EdgeStyle {
  return (connection !== null && CONNECTION_STYLES[connection]) || DEFAULT_EDGE_STYLE;
}

export interface LegendEntry {
  construct: string;
  description: string;
  style: SymbolStyle | null; // null for connection classes (line samples)
  edge: EdgeStyle | null;
}

/**
 * The 13 constructs of the domain vocabulary, in table order: video feed,
 * physical game state, metric; annotation, computation, de-identify; human,
 * player, player role, sensor, web portal; data dependency, physical
 * causality. (Dataset and GameAction are listed after them as additions.)
 */
export function legendEntries(): LegendEntry[] {
  const node = (construct: string, description: string): LegendEntry => ({
    construct,
    description,
    style: CONSTRUCT_SYMBOLS[construct],
    edge: null,
  });
  return [
    node("VideoFeed", "video feed segment"),
    node("PhysicalGameState", "state of play / possession"),
    node("Metric", "computed performance metric"),
    node("Annotation", "manual annotation work"),
    node("Computation", "automated computation"),
    node("DeIdentify", "anonymisation step"),
    node("Human", "analyst or staff member"),
    node("Player", "player"),
    node("PlayerRole", "role, e.g. Half Forward"),
    node("Sensor", "measurement device"),
    node("WebPortal", "external portal / service"),
    {
      construct: "DataDependency",
      description: "derived from data",
      style: null,
      edge: CONNECTION_STYLES.data,
    },
    {
      construct: "PhysicalCausality",
      description: "caused on the field",
      style: null,
      edge: CONNECTION_STYLES.physical,
    },
    node("Dataset", "tabular dataset (addition)"),
    node("GameAction", "on-field action (addition)"),
  ];
}
