/** Editor state and the URL-encodable session descriptor. */

export interface EditorState {
  modelA: string | null;
  modelB: string | null;
  selectedPart: number;
  t: number;
  globalScope: boolean;
  head: string;
  composeSlots: Record<number, "A" | "B">;
  k: number;
}

export function initialState(k = 4): EditorState {
  return {
    modelA: null,
    modelB: null,
    selectedPart: 1,
    t: 0,
    globalScope: false,
    head: "vae",
    composeSlots: {},
    k,
  };
}

export function setPart(state: EditorState, part: number): EditorState {
  if (!Number.isInteger(part) || part < 1 || part > state.k) {
    throw new Error(`part must lie in 1..${state.k}`);
  }
  return { ...state, selectedPart: part };
}

export function setSlider(state: EditorState, t: number): EditorState {
  if (!(t >= 0 && t <= 1)) {
    throw new Error("slider value must lie in [0, 1]");
  }
  return { ...state, t };
}

export function assignComposeSlot(
  state: EditorState,
  part: number,
  source: "A" | "B",
): EditorState {
  if (part < 1 || part > state.k) {
    throw new Error(`part must lie in 1..${state.k}`);
  }
  return { ...state, composeSlots: { ...state.composeSlots, [part]: source } };
}

/** Session descriptors round-trip through the URL hash so an editing
 * session is shareable and reproducible. */
export function encodeSession(state: EditorState): string {
  const slots = Object.entries(state.composeSlots)
    .map(([part, src]) => `${part}${src}`)
    .sort()
    .join(".");
  const fields = [
    `a=${state.modelA ?? ""}`,
    `b=${state.modelB ?? ""}`,
    `p=${state.selectedPart}`,
    `t=${state.t}`,
    `g=${state.globalScope ? 1 : 0}`,
    `h=${state.head}`,
    `c=${slots}`,
    `k=${state.k}`,
  ];
  return fields.join("&");
}

export function decodeSession(hash: string): EditorState {
  const params = new Map<string, string>();
  for (const piece of hash.replace(/^#/, "").split("&")) {
    const eq = piece.indexOf("=");
    if (eq > 0) params.set(piece.slice(0, eq), piece.slice(eq + 1));
  }
  const k = Math.max(1, parseInt(params.get("k") ?? "4", 10) || 4);
  const state = initialState(k);
  state.modelA = params.get("a") || null;
  state.modelB = params.get("b") || null;
  const part = parseInt(params.get("p") ?? "1", 10);
  state.selectedPart = part >= 1 && part <= k ? part : 1;
  const t = parseFloat(params.get("t") ?? "0");
  state.t = t >= 0 && t <= 1 ? t : 0;
  state.globalScope = params.get("g") === "1";
  state.head = params.get("h") || "vae";
  const slots = params.get("c") ?? "";
  for (const token of slots.split(".")) {
    const match = /^(\d+)([AB])$/.exec(token);
    if (match) {
      const slot = parseInt(match[1], 10);
      if (slot >= 1 && slot <= k) {
        state.composeSlots[slot] = match[2] as "A" | "B";
      }
    }
  }
  return state;
}
