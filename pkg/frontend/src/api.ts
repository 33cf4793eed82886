// Thin wrappers over the session endpoints.

import { BatchReply, ClientEvent } from "./types.js";

export class ApiError extends Error {
  constructor(readonly status: number, readonly code: string, message: string) {
    super(message);
  }
}

async function parseError(response: Response): Promise<ApiError> {
  let code = "http_error";
  let message = `HTTP ${response.status}`;
  try {
    const body = await response.json();
    code = body.code ?? code;
    message = body.message ?? message;
  } catch {
    // non-JSON error body; keep defaults
  }
  return new ApiError(response.status, code, message);
}

export class SessionApi {
  constructor(
    readonly sessionId: string,
    private readonly fetcher: typeof fetch = fetch,
    private readonly baseUrl = "",
  ) {}

  async postEvents(events: ClientEvent[]): Promise<BatchReply> {
    const response = await this.fetcher(
      `${this.baseUrl}/api/sessions/${this.sessionId}/events`,
      {
        method: "POST",
        headers: { "content-type": "application/json" },
        body: JSON.stringify({ events }),
      },
    );
    if (!response.ok) throw await parseError(response);
    return (await response.json()) as BatchReply;
  }

  async postSurvey(responses: Record<string, unknown>): Promise<string> {
    const response = await this.fetcher(
      `${this.baseUrl}/api/sessions/${this.sessionId}/survey`,
      {
        method: "POST",
        headers: { "content-type": "application/json" },
        body: JSON.stringify({ responses }),
      },
    );
    if (!response.ok) throw await parseError(response);
    const body = await response.json();
    return body.completion_token as string;
  }
}
