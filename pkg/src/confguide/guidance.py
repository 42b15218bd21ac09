"""Per-label for/against argument generation through a VLM endpoint.

Each flagged label gets its own prompt (rendered from the stored template)
and its own endpoint call; responses are parsed leniently because hosted
models like to wrap their JSON in prose or code fences. A JSONL store doubles
as a cache keyed by (case_id, label_name, model_id, template hash), so
replaying a finished run never touches the endpoint.
"""

from __future__ import annotations

import hashlib
import json
import threading
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from importlib import resources
from pathlib import Path

from .errors import ImageUnreadable, UnknownLabel
from .ingestion import CaseEntry, DEFAULT_SCHEMA, LabelSchema
from .riskcontrol import PredictionSet
from .vlm_client import TransportFailure, VlmClient

STATUS_OK = "ok"
STATUS_PARSE_FAILED = "parse_failed"
STATUS_API_FAILED = "api_failed"

_VIEW_DESCRIPTIONS = {
    "AP": "AP view (anterior-posterior projection)",
    "PA": "PA view (posterior-anterior projection)",
    "LATERAL": "lateral view",
}


def load_template(name: str = "guidance.txt") -> str:
    return resources.files("confguide.prompts").joinpath(name).read_text(encoding="utf-8")


def template_hash(template: str | None = None) -> str:
    text = template if template is not None else load_template()
    return hashlib.sha256(text.encode("utf-8")).hexdigest()[:16]


def render_prompt(
    label_name: str, schema: LabelSchema = DEFAULT_SCHEMA, view: str = "AP"
) -> str:
    """Instantiate the guidance prompt for one flagged label.

    Both the {item} and {label_name} placeholders bind to the class name; the
    template does not distinguish them.
    """
    if label_name not in schema.names:
        raise UnknownLabel(f"{label_name!r} is not in the label schema")
    view_text = _VIEW_DESCRIPTIONS.get(view, f"{view} view")
    template = load_template()
    return (
        template.replace("{item}", label_name)
        .replace("{label_name}", label_name)
        .replace("{view}", view_text)
    )


@dataclass(frozen=True)
class GuidanceRecord:
    """One (case, label) favor/against argument pair and how it was obtained."""

    case_id: str
    label_name: str
    favor: str
    against: str
    model_id: str
    raw_response: str
    status: str
    template_hash: str = ""

    def to_dict(self) -> dict:
        return {
            "case_id": self.case_id,
            "label_name": self.label_name,
            "favor": self.favor,
            "against": self.against,
            "model_id": self.model_id,
            "raw_response": self.raw_response,
            "status": self.status,
            "template_hash": self.template_hash,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "GuidanceRecord":
        return cls(
            case_id=data["case_id"],
            label_name=data["label_name"],
            favor=data.get("favor", ""),
            against=data.get("against", ""),
            model_id=data.get("model_id", ""),
            raw_response=data.get("raw_response", ""),
            status=data.get("status", STATUS_PARSE_FAILED),
            template_hash=data.get("template_hash", ""),
        )


def extract_first_json(text: str) -> dict | None:
    """First JSON object found in the text, fences and prose tolerated."""
    decoder = json.JSONDecoder()
    idx = text.find("{")
    while idx != -1:
        try:
            obj, _ = decoder.raw_decode(text[idx:])
        except json.JSONDecodeError:
            idx = text.find("{", idx + 1)
            continue
        if isinstance(obj, dict):
            return obj
        idx = text.find("{", idx + 1)
    return None


def parse_guidance_json(
    raw: str,
    expected_label: str,
    case_id: str = "",
    model_id: str = "",
    tmpl_hash: str = "",
) -> GuidanceRecord:
    """Parse an endpoint response into a record; failures land in status."""
    obj = extract_first_json(raw)
    ok = (
        obj is not None
        and isinstance(obj.get("label"), str)
        and obj["label"].strip().lower() == expected_label.strip().lower()
        and isinstance(obj.get("favor"), str)
        and obj["favor"].strip() != ""
        and isinstance(obj.get("against"), str)
        and obj["against"].strip() != ""
    )
    if not ok:
        return GuidanceRecord(
            case_id=case_id,
            label_name=expected_label,
            favor="",
            against="",
            model_id=model_id,
            raw_response=raw,
            status=STATUS_PARSE_FAILED,
            template_hash=tmpl_hash,
        )
    return GuidanceRecord(
        case_id=case_id,
        label_name=expected_label,
        favor=obj["favor"].strip(),
        against=obj["against"].strip(),
        model_id=model_id,
        raw_response=raw,
        status=STATUS_OK,
        template_hash=tmpl_hash,
    )


class GuidanceStore:
    """JSON Lines store of GuidanceRecords with a serialized appender.

    Lookup key is (case_id, label_name, model_id, template_hash); a hit means
    the endpoint call can be skipped entirely.
    """

    def __init__(self, path: str | Path):
        self.path = Path(path)
        self._lock = threading.Lock()
        self._records: dict[tuple, GuidanceRecord] = {}
        if self.path.exists():
            for line in self.path.read_text(encoding="utf-8").splitlines():
                if not line.strip():
                    continue
                rec = GuidanceRecord.from_dict(json.loads(line))
                self._records[self._key(rec)] = rec

    @staticmethod
    def _key(rec: GuidanceRecord) -> tuple:
        return (rec.case_id, rec.label_name, rec.model_id, rec.template_hash)

    def get(self, case_id: str, label_name: str, model_id: str, tmpl_hash: str) -> GuidanceRecord | None:
        return self._records.get((case_id, label_name, model_id, tmpl_hash))

    def lookup(self, case_id: str, label_name: str) -> GuidanceRecord | None:
        """Latest record for a (case, label) regardless of model/template."""
        found = None
        for rec in self._records.values():
            if rec.case_id == case_id and rec.label_name == label_name:
                found = rec
        return found

    def append(self, rec: GuidanceRecord) -> None:
        with self._lock:
            self._records[self._key(rec)] = rec
            with open(self.path, "a", encoding="utf-8") as fh:
                fh.write(json.dumps(rec.to_dict(), sort_keys=True) + "\n")

    def records(self) -> list[GuidanceRecord]:
        return list(self._records.values())

    def __len__(self) -> int:
        return len(self._records)


def read_image(case: CaseEntry, image_root: str | Path | None) -> bytes:
    path = Path(case.image)
    if image_root is not None and not path.is_absolute():
        path = Path(image_root) / path
    try:
        return path.read_bytes()
    except OSError as exc:
        raise ImageUnreadable(f"cannot read image for case {case.case_id!r}: {path}") from exc


def generate_guidance(
    case: CaseEntry,
    pred_set: PredictionSet,
    client: VlmClient,
    schema: LabelSchema = DEFAULT_SCHEMA,
    view: str = "AP",
    store: GuidanceStore | None = None,
    image_root: str | Path | None = None,
) -> list[GuidanceRecord]:
    """One favor/against record per flagged label, ordered by class index.

    Cached records are served from the store without touching the endpoint.
    Transport failures and unparseable responses are retried up to the
    client's max_retries, then recorded with a terminal status; a bad label
    never aborts the rest of the batch.
    """
    members = sorted(pred_set.members)
    if not members:
        return []
    tmpl_hash = template_hash()
    model_id = client.config.model_id

    todo: list[tuple[int, str]] = []
    cached: dict[int, GuidanceRecord] = {}
    for idx in members:
        label = schema.names[idx]
        hit = store.get(case.case_id, label, model_id, tmpl_hash) if store else None
        if hit is not None:
            cached[idx] = hit
        else:
            todo.append((idx, label))

    image_bytes = read_image(case, image_root) if todo else b""

    def fetch(label: str) -> GuidanceRecord:
        prompt = render_prompt(label, schema, view)
        meta = {"case_id": case.case_id, "label": label}
        record = None
        for _ in range(client.config.max_retries + 1):
            try:
                raw = client.complete(prompt, image_bytes, meta)
            except TransportFailure as exc:
                record = GuidanceRecord(
                    case_id=case.case_id,
                    label_name=label,
                    favor="",
                    against="",
                    model_id=model_id,
                    raw_response=str(exc),
                    status=STATUS_API_FAILED,
                    template_hash=tmpl_hash,
                )
                continue
            record = parse_guidance_json(raw, label, case.case_id, model_id, tmpl_hash)
            if record.status == STATUS_OK:
                break
        return record

    fresh: dict[int, GuidanceRecord] = {}
    if todo:
        if client.config.max_parallel > 1:
            with ThreadPoolExecutor(max_workers=client.config.max_parallel) as pool:
                results = pool.map(fetch, [label for _, label in todo])
            for (idx, _), rec in zip(todo, results):
                fresh[idx] = rec
        else:
            for idx, label in todo:
                fresh[idx] = fetch(label)
        if store is not None:
            for idx, _ in todo:
                store.append(fresh[idx])

    return [cached.get(idx) or fresh[idx] for idx in members]
