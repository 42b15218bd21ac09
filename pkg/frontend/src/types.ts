export type ReviewConfig = "crc_plus_plus" | "confguide";
export type Verdict = "present" | "absent";

export interface SessionInfo {
  session_id: string;
  reviewer_id: string;
  config: ReviewConfig;
  done: number;
  total: number;
}

export interface CaseStatus {
  case_id: string;
  complete: boolean;
}

export interface QueueResponse {
  session_id: string;
  reviewer_id: string;
  config: ReviewConfig;
  cases: CaseStatus[];
  done: number;
  total: number;
}

export interface GuidancePayload {
  label_name: string;
  favor: string;
  against: string;
}

export interface FlaggedLabel {
  label_name: string;
  guidance: GuidancePayload | null;
}

export interface CasePayload {
  case_id: string;
  image_url: string;
  flagged: FlaggedLabel[];
  class_names: string[];
}

export interface DecisionAck {
  case_id: string;
  decisions: number[];
  provenance: string[];
  config: ReviewConfig;
  reviewer_id: string;
  done: number;
  total: number;
}

export interface ProgressResponse {
  session_id: string;
  done: number;
  total: number;
  complete: boolean;
}

export interface ApiErrorBody {
  code: string;
  message: string;
}
