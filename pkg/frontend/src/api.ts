import type { AnswerSelection, SessionTrace, SessionView } from "./types.js";

export class ApiError extends Error {
  constructor(
    readonly status: number,
    readonly detail: string,
  ) {
    super(`HTTP ${status}: ${detail}`);
  }
}

async function parseError(response: Response): Promise<ApiError> {
  let detail = response.statusText;
  try {
    const body = await response.json();
    if (body && typeof body.detail === "string") detail = body.detail;
    else if (body) detail = JSON.stringify(body);
  } catch {
    /* non-JSON error body */
  }
  return new ApiError(response.status, detail);
}

/** Thin typed client over the session endpoints. */
export class SessionApi {
  constructor(readonly baseUrl: string = "") {}

  private url(path: string): string {
    return `${this.baseUrl}${path}`;
  }

  async health(): Promise<{ status: string; kb_fingerprint: string; config_hash: string }> {
    const res = await fetch(this.url("/health"));
    if (!res.ok) throw await parseError(res);
    return res.json();
  }

  async createSession(record: unknown): Promise<SessionView> {
    const res = await fetch(this.url("/v1/sessions"), {
      method: "POST",
      headers: { "Content-Type": "application/json" },
      body: JSON.stringify(record),
    });
    if (!res.ok) throw await parseError(res);
    return res.json();
  }

  async getSession(sessionId: string): Promise<SessionView> {
    const res = await fetch(this.url(`/v1/sessions/${sessionId}`));
    if (!res.ok) throw await parseError(res);
    return res.json();
  }

  async submitAnswers(
    sessionId: string,
    round: number,
    answers: AnswerSelection[],
  ): Promise<SessionView> {
    const res = await fetch(this.url(`/v1/sessions/${sessionId}/answers`), {
      method: "POST",
      headers: { "Content-Type": "application/json" },
      body: JSON.stringify({ round, answers }),
    });
    if (!res.ok) throw await parseError(res);
    return res.json();
  }

  async submitFreeText(sessionId: string, round: number, text: string): Promise<SessionView> {
    const res = await fetch(this.url(`/v1/sessions/${sessionId}/answers`), {
      method: "POST",
      headers: { "Content-Type": "application/json" },
      body: JSON.stringify({ round, free_text: text }),
    });
    if (!res.ok) throw await parseError(res);
    return res.json();
  }

  async getTrace(sessionId: string): Promise<SessionTrace> {
    const res = await fetch(this.url(`/v1/sessions/${sessionId}/trace`));
    if (!res.ok) throw await parseError(res);
    return res.json();
  }
}
