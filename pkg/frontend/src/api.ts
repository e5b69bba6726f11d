// Typed client for the study service. The rater's client only ever touches
// these endpoints; none of them carry method identities.

export type Side = "left" | "right";

export interface TrialView {
  session_id: string;
  index: number;
  total: number;
  answered: boolean;
  answered_count: number;
  complete: boolean;
  image_url: string;
  left_url: string;
  right_url: string;
  next_unanswered: number | null;
}

export interface ChoiceAck {
  recorded: boolean;
  index: number;
  answered_count: number;
  total: number;
  complete: boolean;
  next_unanswered: number | null;
}

export interface ProgressSummary {
  complete: boolean;
  total_trials: number;
  answered: number;
  warning?: string;
  groups: Record<string, { total: number; answered: number }>;
}

export class ApiError extends Error {
  constructor(
    readonly status: number,
    message: string,
  ) {
    super(message);
    this.name = "ApiError";
  }
}

async function request<T>(url: string, init?: RequestInit): Promise<T> {
  let resp: Response;
  try {
    resp = await fetch(url, init);
  } catch (err) {
    throw new ApiError(0, `service unreachable: ${String(err)}`);
  }
  if (!resp.ok) {
    let detail = resp.statusText;
    try {
      const body = (await resp.json()) as { detail?: string };
      if (body.detail) detail = body.detail;
    } catch {
      // non-JSON error body; keep the status text
    }
    throw new ApiError(resp.status, detail);
  }
  return (await resp.json()) as T;
}

export function getTrial(base: string, sessionId: string, index: number): Promise<TrialView> {
  return request<TrialView>(`${base}/sessions/${encodeURIComponent(sessionId)}/trials/${index}`);
}

export function postChoice(
  base: string,
  sessionId: string,
  index: number,
  choice: Side,
): Promise<ChoiceAck> {
  return request<ChoiceAck>(
    `${base}/sessions/${encodeURIComponent(sessionId)}/trials/${index}/choice`,
    {
      method: "POST",
      headers: { "Content-Type": "application/json" },
      body: JSON.stringify({ choice }),
    },
  );
}

export function getSummary(base: string, sessionId: string): Promise<ProgressSummary> {
  return request<ProgressSummary>(`${base}/sessions/${encodeURIComponent(sessionId)}/summary`);
}
