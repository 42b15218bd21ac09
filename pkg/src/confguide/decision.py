"""Final per-case decisions under the four pipeline configurations.

A decision is a length-K bit vector plus, per class, a provenance tag
explaining how that bit was set.  The direct configurations (standard, crc)
copy the prediction set; the reviewed configurations (crc_plus_plus,
confguide) let a reviewer veto flagged classes but never add new ones, so a
decision vector is always pointwise <= its prediction set.
"""

from __future__ import annotations

import json
import logging
import re
import threading
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Mapping

from .errors import (
    DuplicateDecision,
    IncompleteReview,
    MissingGuidance,
    RangeError,
    VerdictOutsideSet,
)
from .guidance import GuidanceRecord, load_template, read_image
from .ingestion import CaseEntry, LabelSchema
from .riskcontrol import PredictionSet
from .vlm_client import TransportFailure, VlmClient, VlmEndpointConfig, with_retries

log = logging.getLogger(__name__)

CONFIG_STANDARD = "standard"
CONFIG_CRC = "crc"
CONFIG_CRC_PLUS_PLUS = "crc_plus_plus"
CONFIG_CONFGUIDE = "confguide"
ALL_CONFIGS = (CONFIG_STANDARD, CONFIG_CRC, CONFIG_CRC_PLUS_PLUS, CONFIG_CONFGUIDE)
REVIEWED_CONFIGS = (CONFIG_CRC_PLUS_PLUS, CONFIG_CONFGUIDE)

# The standard baseline keeps each class iff score >= 0.5, i.e. lambda = 0.5.
STANDARD_LAMBDA = 0.5

TAG_FORCED_ABSENT = "forced_absent"
TAG_REVIEWED_PRESENT = "reviewed_present"
TAG_REVIEWED_ABSENT = "reviewed_absent"
TAG_SET_DIRECT = "set_direct"

VERDICT_PRESENT = "present"
VERDICT_ABSENT = "absent"

REVIEWER_ID_NONE = "none"

_VERDICT_WORD = re.compile(r"\b(present|absent)\b", re.IGNORECASE)


@dataclass(frozen=True)
class DecisionRecord:
    """One case's final bit vector, with per-class provenance."""

    case_id: str
    decisions: tuple[int, ...]
    provenance: tuple[str, ...]
    config: str
    reviewer_id: str

    def __post_init__(self) -> None:
        if len(self.decisions) != len(self.provenance):
            raise RangeError(
                f"decisions and provenance lengths differ for case "
                f"{self.case_id!r}: {len(self.decisions)} vs {len(self.provenance)}"
            )
        if self.config not in ALL_CONFIGS:
            raise RangeError(f"unknown config {self.config!r}")
        for bit, tag in zip(self.decisions, self.provenance):
            if bit not in (0, 1):
                raise RangeError(f"decision bits must be 0 or 1, got {bit!r}")
            if bit == 1 and tag not in (TAG_REVIEWED_PRESENT, TAG_SET_DIRECT):
                raise RangeError(
                    f"positive decision with provenance {tag!r} in case "
                    f"{self.case_id!r}"
                )

    @property
    def k(self) -> int:
        return len(self.decisions)

    def to_dict(self) -> dict:
        return {
            "case_id": self.case_id,
            "decisions": list(self.decisions),
            "provenance": list(self.provenance),
            "config": self.config,
            "reviewer_id": self.reviewer_id,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "DecisionRecord":
        return cls(
            case_id=data["case_id"],
            decisions=tuple(int(b) for b in data["decisions"]),
            provenance=tuple(str(t) for t in data["provenance"]),
            config=data["config"],
            reviewer_id=data.get("reviewer_id", REVIEWER_ID_NONE),
        )


def decide_direct(
    pred_set: PredictionSet,
    k: int,
    config: str = CONFIG_CRC,
    reviewer_id: str = REVIEWER_ID_NONE,
) -> DecisionRecord:
    """Copy the prediction set straight into a decision vector."""
    if config in REVIEWED_CONFIGS:
        raise RangeError(
            f"config {config!r} requires a review; use review_case or simulate_reviewer"
        )
    decisions = tuple(1 if i in pred_set.members else 0 for i in range(k))
    provenance = tuple(
        TAG_SET_DIRECT if i in pred_set.members else TAG_FORCED_ABSENT
        for i in range(k)
    )
    return DecisionRecord(
        case_id=pred_set.case_id,
        decisions=decisions,
        provenance=provenance,
        config=config,
        reviewer_id=reviewer_id,
    )


def review_case(
    pred_set: PredictionSet,
    verdicts: Mapping[int, str],
    k: int,
    config: str = CONFIG_CRC_PLUS_PLUS,
    reviewer_id: str = REVIEWER_ID_NONE,
) -> DecisionRecord:
    """Apply reviewer verdicts to the flagged classes of one case.

    Every flagged class needs a verdict and only flagged classes may carry
    one; unflagged classes are forced absent without review.
    """
    outside = sorted(set(verdicts) - pred_set.members)
    if outside:
        raise VerdictOutsideSet(
            f"case {pred_set.case_id!r}: verdicts for unflagged classes {outside}"
        )
    missing = sorted(pred_set.members - set(verdicts))
    if missing:
        raise IncompleteReview(
            f"case {pred_set.case_id!r}: flagged classes {missing} lack verdicts"
        )
    decisions = []
    provenance = []
    for i in range(k):
        if i not in pred_set.members:
            decisions.append(0)
            provenance.append(TAG_FORCED_ABSENT)
            continue
        verdict = verdicts[i]
        if verdict == VERDICT_PRESENT:
            decisions.append(1)
            provenance.append(TAG_REVIEWED_PRESENT)
        elif verdict == VERDICT_ABSENT:
            decisions.append(0)
            provenance.append(TAG_REVIEWED_ABSENT)
        else:
            raise RangeError(
                f"verdict for class {i} must be 'present' or 'absent', "
                f"got {verdict!r}"
            )
    return DecisionRecord(
        case_id=pred_set.case_id,
        decisions=tuple(decisions),
        provenance=tuple(provenance),
        config=config,
        reviewer_id=reviewer_id,
    )


def parse_verdict(text: str) -> str | None:
    """First present/absent word in the response, or None if neither occurs."""
    match = _VERDICT_WORD.search(text)
    if match is None:
        return None
    return match.group(1).lower()


def render_reviewer_prompt(label_name: str, guidance: GuidanceRecord | None = None) -> str:
    """Fill the reviewer template for one flagged label."""
    template = load_template("reviewer.txt")
    if guidance is None:
        block = "No written guidance is available for this finding."
    else:
        block = (
            "Structured guidance for this finding:\n"
            f"Reasons for presence: {guidance.favor}\n"
            f"Reasons against presence: {guidance.against}"
        )
    return template.replace("{label_name}", label_name).replace(
        "{guidance_block}", block
    )


def simulate_reviewer(
    case: CaseEntry,
    pred_set: PredictionSet,
    schema: LabelSchema,
    config: str,
    endpoint: VlmEndpointConfig,
    guidance: Mapping[str, GuidanceRecord] | None = None,
    image_root: str | Path | None = None,
    client: VlmClient | None = None,
) -> DecisionRecord:
    """Query a model reviewer once per flagged label, then apply the verdicts.

    confguide requires a guidance record for every flagged label and puts the
    favor/against texts in the prompt; crc_plus_plus shows the image only.
    Unparseable answers and endpoint failures default to present, which keeps
    the flag rather than silently dropping it.
    """
    if config not in REVIEWED_CONFIGS:
        raise RangeError(
            f"simulate_reviewer handles {REVIEWED_CONFIGS}, got {config!r}"
        )
    members = sorted(pred_set.members)
    if config == CONFIG_CONFGUIDE:
        have = guidance or {}
        missing = [schema.names[i] for i in members if schema.names[i] not in have]
        if missing:
            raise MissingGuidance(
                f"case {case.case_id!r}: confguide review needs guidance for "
                f"{missing}"
            )
    if client is None:
        client = VlmClient(endpoint)
    verdicts: dict[int, str] = {}
    if members:
        image = read_image(case, image_root)
        for i in members:
            label_name = schema.names[i]
            record = guidance.get(label_name) if config == CONFIG_CONFGUIDE else None
            prompt = render_reviewer_prompt(label_name, record)
            meta = {"case_id": case.case_id, "label_name": label_name, "kind": "reviewer"}
            try:
                response = with_retries(client, prompt, image, meta)
            except TransportFailure as exc:
                log.warning(
                    "reviewer endpoint failed for case %s label %s: %s; "
                    "defaulting to present",
                    case.case_id,
                    label_name,
                    exc,
                )
                verdicts[i] = VERDICT_PRESENT
                continue
            verdict = parse_verdict(response)
            if verdict is None:
                log.warning(
                    "unparseable reviewer verdict for case %s label %s: %r; "
                    "defaulting to present",
                    case.case_id,
                    label_name,
                    response,
                )
                verdict = VERDICT_PRESENT
            verdicts[i] = verdict
    return review_case(
        pred_set,
        verdicts,
        schema.k,
        config=config,
        reviewer_id=endpoint.model_id,
    )


class DecisionStore:
    """Append-only JSONL store of DecisionRecords.

    One record per (case_id, config, reviewer_id); a second append for the
    same key raises DuplicateDecision so concurrent writers cannot silently
    overwrite each other.
    """

    def __init__(self, path: str | Path):
        self.path = Path(path)
        self._lock = threading.Lock()
        self._records: dict[tuple[str, str, str], DecisionRecord] = {}
        if self.path.exists():
            with self.path.open("r", encoding="utf-8") as handle:
                for line in handle:
                    line = line.strip()
                    if not line:
                        continue
                    record = DecisionRecord.from_dict(json.loads(line))
                    self._records[self._key(record)] = record

    @staticmethod
    def _key(record: DecisionRecord) -> tuple[str, str, str]:
        return (record.case_id, record.config, record.reviewer_id)

    def __len__(self) -> int:
        return len(self._records)

    def get(
        self, case_id: str, config: str, reviewer_id: str = REVIEWER_ID_NONE
    ) -> DecisionRecord | None:
        return self._records.get((case_id, config, reviewer_id))

    def append(self, record: DecisionRecord) -> None:
        with self._lock:
            key = self._key(record)
            if key in self._records:
                raise DuplicateDecision(
                    f"decision already recorded for case {record.case_id!r}, "
                    f"config {record.config!r}, reviewer {record.reviewer_id!r}"
                )
            self.path.parent.mkdir(parents=True, exist_ok=True)
            with self.path.open("a", encoding="utf-8") as handle:
                handle.write(json.dumps(record.to_dict(), sort_keys=True) + "\n")
            self._records[key] = record

    def records(
        self, config: str | None = None, reviewer_id: str | None = None
    ) -> list[DecisionRecord]:
        out = []
        for record in self._records.values():
            if config is not None and record.config != config:
                continue
            if reviewer_id is not None and record.reviewer_id != reviewer_id:
                continue
            out.append(record)
        return out


def load_decisions(path: str | Path) -> list[DecisionRecord]:
    """Read every record in a decisions JSONL file, in file order."""
    records = []
    with Path(path).open("r", encoding="utf-8") as handle:
        for line in handle:
            line = line.strip()
            if line:
                records.append(DecisionRecord.from_dict(json.loads(line)))
    return records


def simulate_batch(
    cases: Iterable[CaseEntry],
    sets_by_case: Mapping[str, PredictionSet],
    schema: LabelSchema,
    config: str,
    endpoint: VlmEndpointConfig,
    guidance_by_case: Mapping[str, Mapping[str, GuidanceRecord]] | None = None,
    image_root: str | Path | None = None,
) -> list[DecisionRecord]:
    """Run simulate_reviewer over a batch; per-case failures stop the batch
    only for precondition errors, endpoint trouble is absorbed per label."""
    client = VlmClient(endpoint)
    records = []
    for case in cases:
        pred_set = sets_by_case[case.case_id]
        per_case = (guidance_by_case or {}).get(case.case_id, {})
        records.append(
            simulate_reviewer(
                case,
                pred_set,
                schema,
                config,
                endpoint,
                guidance=per_case,
                image_root=image_root,
                client=client,
            )
        )
    return records
