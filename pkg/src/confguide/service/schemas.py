"""Request and response bodies for the review API.

Case payloads are blinded: they carry flagged labels and guidance text but
never ground-truth labels, which only surface through /metrics.
"""

from __future__ import annotations

from typing import Literal

from pydantic import BaseModel, Field

ReviewConfig = Literal["crc_plus_plus", "confguide"]
Verdict = Literal["present", "absent"]


class SessionCreate(BaseModel):
    reviewer_id: str = Field(min_length=1)
    config: ReviewConfig
    case_ids: list[str] | None = None


class SessionInfo(BaseModel):
    session_id: str
    reviewer_id: str
    config: ReviewConfig
    total: int
    done: int


class CaseStatus(BaseModel):
    case_id: str
    complete: bool


class QueueResponse(BaseModel):
    session_id: str
    reviewer_id: str
    config: ReviewConfig
    cases: list[CaseStatus]
    done: int
    total: int


class GuidancePayload(BaseModel):
    label_name: str
    favor: str
    against: str


class FlaggedLabel(BaseModel):
    label_name: str
    guidance: GuidancePayload | None = None


class CasePayload(BaseModel):
    case_id: str
    image_url: str
    flagged: list[FlaggedLabel]
    class_names: list[str]


class DecisionSubmit(BaseModel):
    verdicts: dict[str, Verdict]


class DecisionAck(BaseModel):
    case_id: str
    decisions: list[int]
    provenance: list[str]
    config: str
    reviewer_id: str
    done: int
    total: int


class ProgressResponse(BaseModel):
    session_id: str
    done: int
    total: int
    complete: bool


class ErrorBody(BaseModel):
    code: str
    message: str
