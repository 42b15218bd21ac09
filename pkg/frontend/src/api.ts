import type {
  ApiErrorBody,
  CasePayload,
  DecisionAck,
  QueueResponse,
  ReviewConfig,
  SessionInfo,
  Verdict,
} from "./types";

export class ApiError extends Error {
  constructor(
    public status: number,
    public code: string,
    message: string,
  ) {
    super(message);
  }
}

async function request<T>(path: string, init?: RequestInit): Promise<T> {
  const response = await fetch(path, {
    headers: { "Content-Type": "application/json" },
    ...init,
  });
  if (!response.ok) {
    let body: ApiErrorBody = { code: "HttpError", message: response.statusText };
    try {
      body = (await response.json()) as ApiErrorBody;
    } catch {
      // non-JSON error body; keep the status text
    }
    throw new ApiError(response.status, body.code, body.message);
  }
  return (await response.json()) as T;
}

export function createSession(
  reviewerId: string,
  config: ReviewConfig,
): Promise<SessionInfo> {
  return request<SessionInfo>("/sessions", {
    method: "POST",
    body: JSON.stringify({ reviewer_id: reviewerId, config }),
  });
}

export function getQueue(sessionId: string): Promise<QueueResponse> {
  return request<QueueResponse>(`/sessions/${sessionId}/cases`);
}

export function getCase(caseId: string, sessionId: string): Promise<CasePayload> {
  const params = new URLSearchParams({ session: sessionId });
  return request<CasePayload>(`/cases/${caseId}?${params}`);
}

export function submitDecision(
  sessionId: string,
  caseId: string,
  verdicts: Record<string, Verdict>,
): Promise<DecisionAck> {
  return request<DecisionAck>(`/sessions/${sessionId}/cases/${caseId}/decision`, {
    method: "POST",
    body: JSON.stringify({ verdicts }),
  });
}
