/** Browser part editor: load two clouds, inspect predicted parts, swap or
 * interpolate a selected part, compose from both sources, shuffle a part
 * from a generative head, and watch decoded results live. */

import { ApiClient, Cloud, ServiceError } from "./api.js";
import { partColorCss } from "./colors.js";
import { CloudView } from "./renderer.js";
import { debounce, LatestWins } from "./requests.js";
import {
  EditorState,
  assignComposeSlot,
  decodeSession,
  encodeSession,
  initialState,
  setPart,
  setSlider,
} from "./state.js";

const SERVICE_URL =
  new URLSearchParams(location.search).get("service") ?? "http://127.0.0.1:8787";

const api = new ApiClient(SERVICE_URL);
let state: EditorState = location.hash.length > 1
  ? decodeSession(location.hash)
  : initialState();

const el = (id: string) => document.getElementById(id) as HTMLElement;
const views = {
  A: new CloudView(el("view-a")),
  B: new CloudView(el("view-b")),
  result: new CloudView(el("view-result")),
};
const interpolationStream = new LatestWins<Cloud>();

function toast(message: string): void {
  const box = el("toast");
  box.textContent = message;
  box.classList.add("visible");
  const dismiss = () => box.classList.remove("visible");
  box.onclick = dismiss;
  setTimeout(dismiss, 6000);
}

function reportError(err: unknown): void {
  if (err instanceof ServiceError) {
    toast(`service error ${err.status}: ${err.message}`);
  } else {
    toast(String(err));
  }
}

function syncHash(): void {
  history.replaceState(null, "", `#${encodeSession(state)}`);
}

function renderResult(cloud: Cloud): void {
  views.result.show(cloud.points, cloud.labels);
}

async function loadModel(which: "A" | "B", file: File): Promise<void> {
  try {
    const text = await file.text();
    const parsed = JSON.parse(text);
    if (!Array.isArray(parsed.points)) {
      throw new Error("cloud JSON needs a 'points' array");
    }
    const enc = await api.encode(parsed.points, parsed.labels);
    const decoded = await api.decode(enc.model_id);
    if (which === "A") state.modelA = enc.model_id;
    else state.modelB = enc.model_id;
    state.k = enc.k;
    views[which].show(decoded.points, decoded.labels);
    renderPartButtons();
    syncHash();
  } catch (err) {
    reportError(err);
  }
}

async function swapPart(): Promise<void> {
  if (!state.modelA || !state.modelB) {
    toast("load both source models first");
    return;
  }
  try {
    const resp = await api.exchange(state.modelA, state.modelB, state.selectedPart);
    renderResult(resp.cloud);
    el("result-id").textContent = resp.model_id;
  } catch (err) {
    reportError(err);
  }
}

async function interpolateNow(t: number): Promise<void> {
  if (!state.modelA || !state.modelB) return;
  try {
    const ok = await interpolationStream.run(
      () =>
        api
          .interpolate(
            state.modelA as string,
            state.modelB as string,
            t,
            state.globalScope ? null : state.selectedPart,
          )
          .then((resp) => {
            el("result-id").textContent = resp.model_id;
            return resp.cloud;
          }),
      renderResult,
    );
    if (!ok) return; // stale response discarded
  } catch (err) {
    reportError(err);
  }
}

const interpolateDebounced = debounce(interpolateNow, 100);

async function composeNow(): Promise<void> {
  const slots: Array<[string, number]> = [];
  for (let part = 1; part <= state.k; part += 1) {
    const source = state.composeSlots[part];
    if (!source) continue;
    const id = source === "A" ? state.modelA : state.modelB;
    if (!id) {
      toast(`slot ${part} uses model ${source}, which is not loaded`);
      return;
    }
    slots.push([id, part]);
  }
  if (!slots.length) {
    toast("assign at least one compose slot");
    return;
  }
  try {
    const resp = await api.compose(slots);
    renderResult(resp.cloud);
    el("result-id").textContent = resp.model_id;
  } catch (err) {
    reportError(err);
  }
}

async function regeneratePart(): Promise<void> {
  if (!state.modelA) {
    toast("load model A first");
    return;
  }
  try {
    const resp = await api.regenerate(state.modelA, state.selectedPart, state.head);
    renderResult(resp.cloud);
    el("result-id").textContent = resp.model_id;
  } catch (err) {
    reportError(err);
  }
}

function renderPartButtons(): void {
  const host = el("part-buttons");
  host.innerHTML = "";
  for (let part = 1; part <= state.k; part += 1) {
    const btn = document.createElement("button");
    btn.textContent = `part ${part}`;
    btn.style.borderColor = partColorCss(part);
    if (part === state.selectedPart) btn.classList.add("active");
    btn.onclick = () => {
      state = setPart(state, part);
      renderPartButtons();
      syncHash();
    };
    host.appendChild(btn);
  }
  const slotHost = el("compose-slots");
  slotHost.innerHTML = "";
  for (let part = 1; part <= state.k; part += 1) {
    const row = document.createElement("div");
    row.className = "slot-row";
    const label = document.createElement("span");
    label.textContent = `part ${part}`;
    label.style.color = partColorCss(part);
    row.appendChild(label);
    for (const source of ["A", "B"] as const) {
      const btn = document.createElement("button");
      btn.textContent = source;
      if (state.composeSlots[part] === source) btn.classList.add("active");
      btn.onclick = () => {
        state = assignComposeSlot(state, part, source);
        renderPartButtons();
        syncHash();
      };
      row.appendChild(btn);
    }
    slotHost.appendChild(row);
  }
}

function wire(): void {
  (el("file-a") as HTMLInputElement).onchange = (ev) => {
    const file = (ev.target as HTMLInputElement).files?.[0];
    if (file) void loadModel("A", file);
  };
  (el("file-b") as HTMLInputElement).onchange = (ev) => {
    const file = (ev.target as HTMLInputElement).files?.[0];
    if (file) void loadModel("B", file);
  };
  el("swap").onclick = () => void swapPart();
  el("compose").onclick = () => void composeNow();
  el("regenerate").onclick = () => void regeneratePart();
  const slider = el("slider") as HTMLInputElement;
  slider.value = String(state.t);
  slider.oninput = () => {
    state = setSlider(state, parseFloat(slider.value));
    el("slider-value").textContent = state.t.toFixed(2);
    syncHash();
    interpolateDebounced(state.t);
  };
  const scope = el("global-scope") as HTMLInputElement;
  scope.checked = state.globalScope;
  scope.onchange = () => {
    state.globalScope = scope.checked;
    syncHash();
    interpolateDebounced(state.t);
  };
  const head = el("head-select") as HTMLSelectElement;
  head.value = state.head;
  head.onchange = () => {
    state.head = head.value;
    syncHash();
  };
  api
    .health()
    .then((h) => {
      state.k = h.k;
      el("status").textContent =
        `service ready: k=${h.k} l=${h.l} n=${h.n}` +
        (h.heads.length ? ` heads=[${h.heads.join(", ")}]` : " (no heads)");
      renderPartButtons();
    })
    .catch(() => {
      el("status").textContent = `service unreachable at ${SERVICE_URL}`;
    });
  renderPartButtons();
}

wire();
