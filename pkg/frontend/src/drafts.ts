import type { SessionInfo, Verdict } from "./types";

// Draft verdicts survive refreshes: keyed per session and case so two
// sessions reviewing the same case never share state.
function draftKey(sessionId: string, caseId: string): string {
  return `confguide.draft.${sessionId}.${caseId}`;
}

const SESSION_KEY = "confguide.session";

// The active session is stored too; a refresh resumes it instead of minting
// a new session id, which is what keeps the draft keys valid.
export function loadStoredSession(): SessionInfo | null {
  try {
    const raw = window.localStorage.getItem(SESSION_KEY);
    return raw ? (JSON.parse(raw) as SessionInfo) : null;
  } catch {
    return null;
  }
}

export function storeSession(info: SessionInfo | null): void {
  try {
    if (info === null) {
      window.localStorage.removeItem(SESSION_KEY);
    } else {
      window.localStorage.setItem(SESSION_KEY, JSON.stringify(info));
    }
  } catch {
    // storage full or unavailable; persistence is best-effort
  }
}

export function loadDraft(
  sessionId: string,
  caseId: string,
): Record<string, Verdict> {
  try {
    const raw = window.localStorage.getItem(draftKey(sessionId, caseId));
    return raw ? (JSON.parse(raw) as Record<string, Verdict>) : {};
  } catch {
    return {};
  }
}

export function saveDraft(
  sessionId: string,
  caseId: string,
  verdicts: Record<string, Verdict>,
): void {
  try {
    window.localStorage.setItem(
      draftKey(sessionId, caseId),
      JSON.stringify(verdicts),
    );
  } catch {
    // storage full or unavailable; drafts are best-effort
  }
}

export function clearDraft(sessionId: string, caseId: string): void {
  try {
    window.localStorage.removeItem(draftKey(sessionId, caseId));
  } catch {
    // ignore
  }
}
