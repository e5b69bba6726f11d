// Single-page study client. State is server-authoritative: a refresh (or a
// second tab) simply refetches the next unanswered trial, so nothing is
// ever lost client-side.

import { ApiError, getSummary, getTrial, postChoice, type Side, type TrialView } from "./api.js";
import {
  applyAck,
  applyConflict,
  applyTrial,
  beginSubmit,
  canSubmit,
  initialState,
  keyToChoice,
  nextZoom,
  progressPercent,
  type FlowState,
} from "./state.js";
import { UI_TEXT } from "./ui_text.js";

const API_BASE = "";

let state: FlowState;
let zoom = 1.0;

function el<K extends keyof HTMLElementTagNameMap>(
  tag: K,
  cls?: string,
  text?: string,
): HTMLElementTagNameMap[K] {
  const node = document.createElement(tag);
  if (cls) node.className = cls;
  if (text !== undefined) node.textContent = text;
  return node;
}

function root(): HTMLElement {
  const node = document.getElementById("app");
  if (!node) throw new Error("missing #app container");
  return node;
}

function renderMessage(text: string, withRetry = false): void {
  const app = root();
  app.replaceChildren();
  const box = el("div", "message");
  box.appendChild(el("p", undefined, text));
  if (withRetry) {
    const btn = el("button", "retry", UI_TEXT.retry);
    btn.addEventListener("click", () => void boot());
    box.appendChild(btn);
  }
  app.appendChild(box);
}

function renderComplete(): void {
  const app = root();
  app.replaceChildren();
  const box = el("div", "message");
  box.appendChild(el("h2", undefined, UI_TEXT.completeHeading));
  box.appendChild(el("p", undefined, UI_TEXT.completeBody));
  box.appendChild(el("p", undefined, UI_TEXT.progress(state.total, state.total, 100)));
  const link = el("a", undefined, UI_TEXT.summaryLink);
  link.setAttribute(
    "href",
    `${API_BASE}/sessions/${encodeURIComponent(state.sessionId)}/summary`,
  );
  box.appendChild(link);
  app.appendChild(box);
}

function renderProgressView(answered: number, total: number): void {
  const app = root();
  app.replaceChildren();
  const pct = progressPercent(answered, total);
  const box = el("div", "message");
  box.appendChild(el("h2", undefined, UI_TEXT.title));
  box.appendChild(el("p", undefined, UI_TEXT.progress(answered, total, pct)));
  box.appendChild(el("p", undefined, UI_TEXT.remaining(total - answered)));
  if (answered === total && total > 0) {
    const link = el("a", undefined, UI_TEXT.summaryLink);
    link.setAttribute(
      "href",
      `${API_BASE}/sessions/${encodeURIComponent(state.sessionId)}/summary`,
    );
    box.appendChild(link);
  }
  app.appendChild(box);
}

function applyZoom(): void {
  for (const img of document.querySelectorAll<HTMLImageElement>(".pane img")) {
    img.style.transform = `scale(${zoom})`;
  }
}

function renderTrial(trial: TrialView): void {
  const app = root();
  app.replaceChildren();

  const header = el("header");
  header.appendChild(el("h2", undefined, UI_TEXT.title));
  const pct = progressPercent(trial.answered_count, trial.total);
  header.appendChild(el("p", "progress", UI_TEXT.progress(trial.answered_count, trial.total, pct)));
  app.appendChild(header);

  const original = el("div", "original");
  const origImg = el("img");
  origImg.src = trial.image_url;
  origImg.alt = UI_TEXT.originalLabel;
  original.appendChild(origImg);
  app.appendChild(original);

  const row = el("div", "panes");
  for (const side of ["left", "right"] as Side[]) {
    const pane = el("div", "pane");
    const img = el("img");
    img.src = side === "left" ? trial.left_url : trial.right_url;
    img.alt = side === "left" ? UI_TEXT.leftLabel : UI_TEXT.rightLabel;
    pane.appendChild(img);
    pane.appendChild(el("p", undefined, side === "left" ? UI_TEXT.leftLabel : UI_TEXT.rightLabel));
    pane.addEventListener("click", () => void submit(side));
    row.appendChild(pane);
  }
  app.appendChild(row);

  const controls = el("div", "controls");
  controls.appendChild(el("p", undefined, UI_TEXT.prompt));
  const zin = el("button", undefined, UI_TEXT.zoomIn);
  zin.addEventListener("click", () => {
    zoom = nextZoom(zoom, 1);
    applyZoom();
  });
  const zout = el("button", undefined, UI_TEXT.zoomOut);
  zout.addEventListener("click", () => {
    zoom = nextZoom(zoom, -1);
    applyZoom();
  });
  controls.appendChild(zout);
  controls.appendChild(zin);
  app.appendChild(controls);
  applyZoom();
}

async function showTrial(index: number): Promise<void> {
  try {
    const trial = await getTrial(API_BASE, state.sessionId, index);
    state = applyTrial(state, trial);
    if (state.done) {
      renderComplete();
      return;
    }
    if (state.index !== null && state.index !== trial.index) {
      // answered trial: follow the redirect to the next unanswered one
      return showTrial(state.index);
    }
    const url = new URL(window.location.href);
    url.searchParams.set("trial", String(trial.index));
    window.history.replaceState(null, "", url.toString());
    renderTrial(trial);
  } catch (err) {
    handleError(err);
  }
}

async function submit(choice: Side): Promise<void> {
  if (!canSubmit(state) || state.index === null) return;
  const index = state.index;
  state = beginSubmit(state);
  try {
    const ack = await postChoice(API_BASE, state.sessionId, index, choice);
    state = applyAck(state, ack);
    if (state.done || state.index === null) {
      renderComplete();
    } else {
      await showTrial(state.index);
    }
  } catch (err) {
    if (err instanceof ApiError && err.status === 409) {
      // someone already answered this trial; resync from the server
      state = applyConflict(state);
      await showTrial(index);
      return;
    }
    state = applyConflict(state);
    handleError(err);
  }
}

function handleError(err: unknown): void {
  if (err instanceof ApiError && err.status === 404) {
    renderMessage(UI_TEXT.unknownSession);
    return;
  }
  renderMessage(UI_TEXT.unreachable, true);
}

async function boot(): Promise<void> {
  const params = new URLSearchParams(window.location.search);
  const sessionId = params.get("session");
  if (!sessionId) {
    renderMessage(UI_TEXT.missingSession);
    return;
  }
  state = initialState(sessionId);
  try {
    if (params.get("view") === "progress") {
      const summary = await getSummary(API_BASE, sessionId);
      state = { ...state, total: summary.total_trials, answeredCount: summary.answered };
      renderProgressView(summary.answered, summary.total_trials);
      return;
    }
    const requested = Number(params.get("trial") ?? "0");
    await showTrial(Number.isFinite(requested) && requested >= 0 ? requested : 0);
  } catch (err) {
    handleError(err);
  }
}

window.addEventListener("keydown", (event) => {
  const choice = keyToChoice(event.key);
  if (choice) {
    event.preventDefault();
    void submit(choice);
  }
});

void boot();
