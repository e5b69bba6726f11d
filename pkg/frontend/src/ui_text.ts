// Every user-facing string lives here so the blinding test can scan them:
// nothing may hint at which method produced which side.

export const UI_TEXT = {
  title: "Segmentation preference study",
  prompt: "Which segmentation do you prefer? Click a panel or press ← / →.",
  leftLabel: "Left",
  rightLabel: "Right",
  originalLabel: "Unannotated image",
  progress: (answered: number, total: number, pct: number) =>
    `${answered} of ${total} answered (${pct}%)`,
  remaining: (n: number) => `${n} trial${n === 1 ? "" : "s"} remaining`,
  completeHeading: "All trials answered",
  completeBody: "Progress 100%. Thank you — your preferences are recorded.",
  summaryLink: "View session summary",
  missingSession: "No session id. Open this page with ?session=<id>.",
  unknownSession: "Unknown session. Check the link you were given.",
  unreachable: "Service unreachable. Your answers are safe on the server.",
  retry: "Retry",
  zoomIn: "Zoom +",
  zoomOut: "Zoom −",
  alreadyAnswered: "That trial was already answered; moving on.",
} as const;

export function allUiStrings(): string[] {
  const out: string[] = [];
  for (const v of Object.values(UI_TEXT)) {
    if (typeof v === "string") out.push(v);
  }
  out.push(UI_TEXT.progress(3, 7, 42.9), UI_TEXT.remaining(1), UI_TEXT.remaining(2));
  return out;
}
