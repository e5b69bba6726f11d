import { describe, expect, it } from "vitest";

import type { ChoiceAck, TrialView } from "../src/api.js";
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
  ZOOM_MAX,
  ZOOM_MIN,
} from "../src/state.js";
import { allUiStrings } from "../src/ui_text.js";

function trial(partial: Partial<TrialView> = {}): TrialView {
  return {
    session_id: "s1",
    index: 0,
    total: 300,
    answered: false,
    answered_count: 0,
    complete: false,
    image_url: "/sessions/s1/trials/0/png/image",
    left_url: "/sessions/s1/trials/0/png/left",
    right_url: "/sessions/s1/trials/0/png/right",
    next_unanswered: 0,
    ...partial,
  };
}

function ack(partial: Partial<ChoiceAck> = {}): ChoiceAck {
  return {
    recorded: true,
    index: 0,
    answered_count: 1,
    total: 300,
    complete: false,
    next_unanswered: 1,
    ...partial,
  };
}

describe("trial flow", () => {
  it("loads a fresh trial", () => {
    const s = applyTrial(initialState("s1"), trial());
    expect(s.index).toBe(0);
    expect(s.total).toBe(300);
    expect(canSubmit(s)).toBe(true);
  });

  it("redirects an answered trial to the next unanswered", () => {
    const s = applyTrial(initialState("s1"), trial({ answered: true, next_unanswered: 7 }));
    expect(s.index).toBe(7);
    expect(s.done).toBe(false);
  });

  it("advances on ack and finishes on completion", () => {
    let s = applyTrial(initialState("s1"), trial());
    s = beginSubmit(s);
    s = applyAck(s, ack());
    expect(s.index).toBe(1);
    expect(s.answeredCount).toBe(1);
    const finished = applyAck(s, ack({ answered_count: 300, complete: true, next_unanswered: null }));
    expect(finished.done).toBe(true);
    expect(canSubmit(finished)).toBe(false);
  });

  it("guards against double submission", () => {
    let s = applyTrial(initialState("s1"), trial());
    expect(canSubmit(s)).toBe(true);
    s = beginSubmit(s);
    expect(canSubmit(s)).toBe(false); // second dispatch blocked while in flight
    s = applyAck(s, ack());
    expect(canSubmit(s)).toBe(true);
  });

  it("recovers from a conflict without corrupting state", () => {
    let s = applyTrial(initialState("s1"), trial());
    s = beginSubmit(s);
    s = applyConflict(s);
    expect(s.submitting).toBe(false);
    expect(s.index).toBe(0); // caller refetches; local state intact
  });
});

describe("progress math", () => {
  it("computes percentages", () => {
    expect(progressPercent(0, 300)).toBe(0);
    expect(progressPercent(300, 300)).toBe(100);
    expect(progressPercent(150, 300)).toBe(50);
    expect(progressPercent(1, 3)).toBeCloseTo(33.3, 5);
  });

  it("treats an empty session as complete", () => {
    expect(progressPercent(0, 0)).toBe(100);
  });
});

describe("keyboard mapping", () => {
  it("maps arrows to sides and ignores the rest", () => {
    expect(keyToChoice("ArrowLeft")).toBe("left");
    expect(keyToChoice("ArrowRight")).toBe("right");
    expect(keyToChoice("Enter")).toBeNull();
    expect(keyToChoice("a")).toBeNull();
  });
});

describe("synchronized zoom", () => {
  it("steps and clamps", () => {
    expect(nextZoom(1.0, 1)).toBe(1.25);
    expect(nextZoom(ZOOM_MAX, 1)).toBe(ZOOM_MAX);
    expect(nextZoom(ZOOM_MIN, -1)).toBe(ZOOM_MIN);
  });
});

describe("blinding", () => {
  it("keeps method identities out of every UI string", () => {
    const banned = ["cfseg", "chexmask", "silver", "expert", "u-net", "unet", "method a", "method b"];
    for (const text of allUiStrings()) {
      const lower = text.toLowerCase();
      for (const word of banned) {
        expect(lower.includes(word), `"${text}" leaks "${word}"`).toBe(false);
      }
    }
  });
});
