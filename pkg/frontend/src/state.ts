// Pure trial-flow state machine. All session state is server-authoritative;
// the client only tracks which trial it is showing and an in-flight flag
// that guards against double submission.

import type { ChoiceAck, Side, TrialView } from "./api.js";

export interface FlowState {
  sessionId: string;
  index: number | null; // trial on screen; null before the first load
  total: number;
  answeredCount: number;
  submitting: boolean;
  done: boolean;
}

export function initialState(sessionId: string): FlowState {
  return {
    sessionId,
    index: null,
    total: 0,
    answeredCount: 0,
    submitting: false,
    done: false,
  };
}

export function applyTrial(state: FlowState, trial: TrialView): FlowState {
  // an already-answered trial redirects to the next unanswered one
  if (trial.answered && trial.next_unanswered !== null) {
    return {
      ...state,
      index: trial.next_unanswered,
      total: trial.total,
      answeredCount: trial.answered_count,
      submitting: false,
      done: false,
    };
  }
  return {
    ...state,
    index: trial.index,
    total: trial.total,
    answeredCount: trial.answered_count,
    submitting: false,
    done: trial.complete,
  };
}

export function canSubmit(state: FlowState): boolean {
  return state.index !== null && !state.submitting && !state.done;
}

export function beginSubmit(state: FlowState): FlowState {
  return { ...state, submitting: true };
}

export function applyAck(state: FlowState, ack: ChoiceAck): FlowState {
  return {
    ...state,
    answeredCount: ack.answered_count,
    total: ack.total,
    index: ack.next_unanswered,
    submitting: false,
    done: ack.complete,
  };
}

// A 409 means this trial was already answered (e.g. a second tab); local
// state stays valid — clear the in-flight flag and let the caller refetch.
export function applyConflict(state: FlowState): FlowState {
  return { ...state, submitting: false };
}

export function progressPercent(answered: number, total: number): number {
  if (total <= 0) return 100;
  return Math.round((1000 * answered) / total) / 10;
}

export function keyToChoice(key: string): Side | null {
  if (key === "ArrowLeft") return "left";
  if (key === "ArrowRight") return "right";
  return null;
}

// synchronized zoom applied to both panes; client-only state
export const ZOOM_MIN = 1.0;
export const ZOOM_MAX = 4.0;
export const ZOOM_STEP = 0.25;

export function nextZoom(current: number, direction: 1 | -1): number {
  const z = current + direction * ZOOM_STEP;
  return Math.min(ZOOM_MAX, Math.max(ZOOM_MIN, Math.round(z * 100) / 100));
}
