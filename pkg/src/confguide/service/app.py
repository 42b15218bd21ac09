"""FastAPI review service.

Serves blinded case payloads (image URL, flagged labels, optional guidance)
and records reviewer verdicts as DecisionRecords. Ground-truth labels never
leave the process except through /metrics aggregates. Optional bearer-token
auth is enabled by setting the CONFGUIDE_REVIEW_TOKEN environment variable.
"""

from __future__ import annotations

import json
import os
import random
import threading
from pathlib import Path

from fastapi import FastAPI, Request
from fastapi.exceptions import RequestValidationError
from fastapi.responses import JSONResponse
from fastapi.staticfiles import StaticFiles

from ..decision import DecisionStore, review_case
from ..errors import (
    ConfguideError,
    DuplicateDecision,
    ImageUnreadable,
    IncompleteReview,
    MissingArtifact,
    MissingGuidance,
    RangeError,
    StaleArtifact,
    UnknownCase,
    UnknownLabel,
    UnknownSession,
    VerdictOutsideSet,
)
from ..evaluation import (
    compute_metrics,
    count_confusion,
    decisions_to_matrix,
    empirical_fnr_report,
    report_to_dict,
)
from ..guidance import STATUS_OK, GuidanceStore, template_hash
from ..ingestion import SPLIT_TEST, load_dataset, load_manifest, split_dataset
from ..pipeline import (
    DECISIONS_FILE,
    GUIDANCE_FILE,
    SETS_CRC_FILE,
    RunConfig,
    load_sets,
)
from .schemas import (
    CasePayload,
    CaseStatus,
    DecisionAck,
    DecisionSubmit,
    FlaggedLabel,
    GuidancePayload,
    ProgressResponse,
    QueueResponse,
    SessionCreate,
    SessionInfo,
)

AUTH_TOKEN_ENV = "CONFGUIDE_REVIEW_TOKEN"

ERROR_STATUS: dict[type, int] = {
    VerdictOutsideSet: 409,
    DuplicateDecision: 409,
    StaleArtifact: 409,
    MissingGuidance: 409,
    IncompleteReview: 422,
    UnknownLabel: 422,
    RangeError: 422,
    UnknownCase: 404,
    UnknownSession: 404,
    MissingArtifact: 404,
    ImageUnreadable: 404,
}


def _status_for(exc: ConfguideError) -> int:
    for cls, status in ERROR_STATUS.items():
        if isinstance(exc, cls):
            return status
    return 500


class ReviewState:
    """Everything the service needs, loaded once from pipeline artifacts."""

    def __init__(self, run: RunConfig):
        self.run = run
        scores, labels, self.schema = load_dataset(run.scores, run.labels, run.schema)
        self.manifest = load_manifest(run.manifest)
        _, (test_scores, test_labels) = split_dataset(scores, labels, self.manifest)
        # Held for /metrics only; never serialized into case payloads.
        self._test_labels = test_labels
        self.sets = load_sets(run.artifact(SETS_CRC_FILE))
        guidance_path = run.artifact(GUIDANCE_FILE)
        self.guidance = GuidanceStore(guidance_path) if guidance_path.exists() else None
        self.decisions = DecisionStore(run.artifact(DECISIONS_FILE))
        self.sessions_path = run.artifact("sessions.json")
        self.sessions: dict[str, dict] = {}
        self._lock = threading.Lock()
        if self.sessions_path.exists():
            self.sessions = json.loads(self.sessions_path.read_text(encoding="utf-8"))
        self.case_order = [
            e.case_id
            for e in self.manifest.entries
            if e.split == SPLIT_TEST and e.case_id in self.sets
        ]

    def save_sessions(self) -> None:
        self.sessions_path.parent.mkdir(parents=True, exist_ok=True)
        self.sessions_path.write_text(
            json.dumps(self.sessions, indent=2, sort_keys=True) + "\n",
            encoding="utf-8",
        )

    def session(self, session_id: str) -> dict:
        try:
            return self.sessions[session_id]
        except KeyError:
            raise UnknownSession(f"no review session {session_id!r}") from None

    def case(self, case_id: str):
        if case_id not in self.sets:
            raise UnknownCase(f"case {case_id!r} is not served by this run")
        return self.manifest.by_id(case_id)

    def is_complete(self, session: dict, case_id: str) -> bool:
        return (
            self.decisions.get(case_id, session["config"], session["reviewer_id"])
            is not None
        )

    def done_count(self, session: dict) -> int:
        return sum(1 for cid in session["queue"] if self.is_complete(session, cid))

    def guidance_for(self, case_id: str, label_name: str) -> GuidancePayload | None:
        if self.guidance is None:
            return None
        record = self.guidance.get(
            case_id,
            label_name,
            self.run.guidance_endpoint.model_id,
            template_hash(),
        )
        if record is None:
            record = self.guidance.lookup(case_id, label_name)
        if record is None or record.status != STATUS_OK:
            return None
        return GuidancePayload(
            label_name=record.label_name, favor=record.favor, against=record.against
        )


def create_app(run: RunConfig) -> FastAPI:
    state = ReviewState(run)
    app = FastAPI(title="confguide review api", version="1.0")
    app.state.review = state
    token = os.environ.get(AUTH_TOKEN_ENV, "")

    @app.exception_handler(ConfguideError)
    async def _domain_error(request: Request, exc: ConfguideError):
        return JSONResponse(
            status_code=_status_for(exc),
            content={"code": type(exc).__name__, "message": str(exc)},
        )

    @app.exception_handler(RequestValidationError)
    async def _validation_error(request: Request, exc: RequestValidationError):
        return JSONResponse(
            status_code=422,
            content={"code": "ValidationError", "message": str(exc.errors())},
        )

    @app.middleware("http")
    async def _auth(request: Request, call_next):
        if token and not request.url.path.startswith("/images"):
            supplied = request.headers.get("authorization", "")
            if supplied != f"Bearer {token}":
                return JSONResponse(
                    status_code=401,
                    content={"code": "Unauthorized", "message": "bad or missing token"},
                )
        return await call_next(request)

    if run.image_root is not None and Path(run.image_root).is_dir():
        app.mount("/images", StaticFiles(directory=str(run.image_root)), name="images")

    def _session_info(sid: str, session: dict) -> SessionInfo:
        return SessionInfo(
            session_id=sid,
            reviewer_id=session["reviewer_id"],
            config=session["config"],
            total=len(session["queue"]),
            done=state.done_count(session),
        )

    @app.post("/sessions", response_model=SessionInfo, status_code=201)
    def create_session(body: SessionCreate) -> SessionInfo:
        if body.config == "confguide" and state.guidance is None:
            raise MissingArtifact(
                "confguide sessions need guidance records; run the guide stage"
            )
        if body.case_ids is None:
            queue = list(state.case_order)
            random.Random(run.seed).shuffle(queue)
        else:
            for cid in body.case_ids:
                state.case(cid)
            queue = list(body.case_ids)
        with state._lock:
            sid = f"s{len(state.sessions) + 1:04d}"
            state.sessions[sid] = {
                "reviewer_id": body.reviewer_id,
                "config": body.config,
                "queue": queue,
            }
            state.save_sessions()
        return _session_info(sid, state.sessions[sid])

    @app.get("/sessions/{sid}", response_model=SessionInfo)
    def get_session(sid: str) -> SessionInfo:
        return _session_info(sid, state.session(sid))

    @app.get("/sessions/{sid}/cases", response_model=QueueResponse)
    def get_queue(sid: str) -> QueueResponse:
        session = state.session(sid)
        cases = [
            CaseStatus(case_id=cid, complete=state.is_complete(session, cid))
            for cid in session["queue"]
        ]
        return QueueResponse(
            session_id=sid,
            reviewer_id=session["reviewer_id"],
            config=session["config"],
            cases=cases,
            done=sum(1 for c in cases if c.complete),
            total=len(cases),
        )

    @app.get("/cases/{cid}", response_model=CasePayload)
    def get_case(cid: str, session: str | None = None) -> CasePayload:
        entry = state.case(cid)
        with_guidance = False
        if session is not None:
            with_guidance = state.session(session)["config"] == "confguide"
        flagged = []
        for idx in sorted(state.sets[cid].members):
            name = state.schema.names[idx]
            flagged.append(
                FlaggedLabel(
                    label_name=name,
                    guidance=state.guidance_for(cid, name) if with_guidance else None,
                )
            )
        return CasePayload(
            case_id=cid,
            image_url="/images/" + Path(entry.image).as_posix(),
            flagged=flagged,
            class_names=list(state.schema.names),
        )

    @app.post(
        "/sessions/{sid}/cases/{cid}/decision",
        response_model=DecisionAck,
        status_code=201,
    )
    def submit_decision(sid: str, cid: str, body: DecisionSubmit) -> DecisionAck:
        session = state.session(sid)
        if cid not in session["queue"]:
            raise UnknownCase(f"case {cid!r} is not in session {sid!r}")
        verdicts = {
            state.schema.index_of(name): verdict
            for name, verdict in body.verdicts.items()
        }
        record = review_case(
            state.sets[cid],
            verdicts,
            state.schema.k,
            config=session["config"],
            reviewer_id=session["reviewer_id"],
        )
        state.decisions.append(record)
        done = state.done_count(session)
        return DecisionAck(
            case_id=record.case_id,
            decisions=list(record.decisions),
            provenance=list(record.provenance),
            config=record.config,
            reviewer_id=record.reviewer_id,
            done=done,
            total=len(session["queue"]),
        )

    @app.get("/metrics")
    def get_metrics(config: str | None = None, reviewer: str | None = None) -> dict:
        groups: dict[tuple[str, str], list] = {}
        for record in state.decisions.records(config=config, reviewer_id=reviewer):
            groups.setdefault((record.config, record.reviewer_id), []).append(record)
        reports = []
        for key in sorted(groups):
            matrix, truth = decisions_to_matrix(groups[key], state._test_labels)
            counts = count_confusion(matrix, truth, state.schema.names)
            fnr = empirical_fnr_report(matrix, truth)
            reports.append(
                report_to_dict(compute_metrics(counts, key[0], key[1], fnr))
            )
        return {"reports": reports}

    @app.get("/progress/{sid}", response_model=ProgressResponse)
    def get_progress(sid: str) -> ProgressResponse:
        session = state.session(sid)
        done = state.done_count(session)
        total = len(session["queue"])
        return ProgressResponse(
            session_id=sid, done=done, total=total, complete=done == total
        )

    return app
