"""Loading, validation, and splitting of score/label matrices and case manifests.

File formats:
  scores.csv / labels.csv  header ``case_id,<name1>,...,<nameK>``, UTF-8, '.' decimals
  schema.json              JSON array of K class-name strings
  manifest.json            JSON array of {case_id, image, split} objects
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import (
    AlignmentError,
    MissingSplitTag,
    ParseError,
    RangeError,
    SchemaMismatch,
    UnknownLabel,
)

# Scores are persisted with this many decimal digits; loaded values are used
# exactly as parsed, so thresholding near 1 - lambda sees no extra rounding.
SCORE_DECIMALS = 6

# Canonical 14-class chest pathology schema. "Enlarged Cardiomediastinum" is
# the canonical name; the shorter alias "Cardiomediastinum" appears in some
# exported score files and refers to the same class.
DEFAULT_CLASS_NAMES = (
    "Atelectasis",
    "Cardiomegaly",
    "Consolidation",
    "Edema",
    "Enlarged Cardiomediastinum",
    "Fracture",
    "Lung Lesion",
    "Lung Opacity",
    "No Finding",
    "Pleural Effusion",
    "Pleural Other",
    "Pneumonia",
    "Pneumothorax",
    "Support Devices",
)
CLASS_NAME_ALIASES = {"Cardiomediastinum": "Enlarged Cardiomediastinum"}

SPLIT_CALIBRATION = "calibration"
SPLIT_TEST = "test"


@dataclass(frozen=True)
class LabelSchema:
    """Ordered, unique class names; k is the class count."""

    names: tuple[str, ...]

    def __post_init__(self):
        if len(self.names) < 1:
            raise SchemaMismatch("schema must contain at least one class name")
        if len(set(self.names)) != len(self.names):
            raise SchemaMismatch("schema class names must be unique")

    @property
    def k(self) -> int:
        return len(self.names)

    def index_of(self, name: str) -> int:
        try:
            return self.names.index(name)
        except ValueError:
            raise UnknownLabel(f"unknown class name: {name!r}") from None


DEFAULT_SCHEMA = LabelSchema(DEFAULT_CLASS_NAMES)


def _frozen_array(values, dtype) -> np.ndarray:
    arr = np.array(values, dtype=dtype)
    if arr.ndim != 2:
        arr = arr.reshape(len(arr), -1)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class ScoreMatrix:
    """n x K matrix of per-class scores in [0, 1], one row per case."""

    values: np.ndarray
    case_ids: tuple[str, ...]

    def __post_init__(self):
        arr = _frozen_array(self.values, float)
        object.__setattr__(self, "values", arr)
        object.__setattr__(self, "case_ids", tuple(self.case_ids))
        if arr.shape[0] != len(self.case_ids):
            raise AlignmentError(
                f"{arr.shape[0]} score rows for {len(self.case_ids)} case ids"
            )
        if len(set(self.case_ids)) != len(self.case_ids):
            raise AlignmentError("duplicate case ids in score matrix")
        if arr.size and (np.min(arr) < 0.0 or np.max(arr) > 1.0):
            raise RangeError("scores must lie in [0, 1]")

    @property
    def n(self) -> int:
        return self.values.shape[0]

    @property
    def k(self) -> int:
        return self.values.shape[1]

    def row(self, case_id: str) -> np.ndarray:
        return self.values[self.case_ids.index(case_id)]


@dataclass(frozen=True)
class LabelMatrix:
    """n x K matrix of {0,1} ground-truth bits, aligned with a ScoreMatrix."""

    values: np.ndarray
    case_ids: tuple[str, ...]

    def __post_init__(self):
        arr = _frozen_array(self.values, np.int64)
        object.__setattr__(self, "values", arr)
        object.__setattr__(self, "case_ids", tuple(self.case_ids))
        if arr.shape[0] != len(self.case_ids):
            raise AlignmentError(
                f"{arr.shape[0]} label rows for {len(self.case_ids)} case ids"
            )
        if len(set(self.case_ids)) != len(self.case_ids):
            raise AlignmentError("duplicate case ids in label matrix")
        if arr.size and not np.isin(arr, (0, 1)).all():
            raise RangeError("labels must be 0 or 1")

    @property
    def n(self) -> int:
        return self.values.shape[0]

    @property
    def k(self) -> int:
        return self.values.shape[1]

    def row(self, case_id: str) -> np.ndarray:
        return self.values[self.case_ids.index(case_id)]


@dataclass(frozen=True)
class CaseEntry:
    case_id: str
    image: str
    split: str | None = None


@dataclass(frozen=True)
class CaseManifest:
    """Per-case image references and optional calibration/test split tags."""

    entries: tuple[CaseEntry, ...]

    def __post_init__(self):
        object.__setattr__(self, "entries", tuple(self.entries))
        ids = [e.case_id for e in self.entries]
        if len(set(ids)) != len(ids):
            raise ParseError("duplicate case ids in manifest")

    def by_id(self, case_id: str) -> CaseEntry:
        for entry in self.entries:
            if entry.case_id == case_id:
                return entry
        raise AlignmentError(f"case {case_id!r} not in manifest")

    @property
    def case_ids(self) -> tuple[str, ...]:
        return tuple(e.case_id for e in self.entries)


def canonical_name(name: str) -> str:
    """Resolve a known class-name alias to its canonical form."""
    return CLASS_NAME_ALIASES.get(name, name)


def load_schema(path: str | Path) -> LabelSchema:
    """Read schema.json (a JSON array of class names); aliases canonicalized."""
    try:
        raw = json.loads(Path(path).read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise ParseError(f"cannot read schema {path}: {exc}") from exc
    if not isinstance(raw, list) or not all(isinstance(x, str) for x in raw):
        raise ParseError(f"schema {path} must be a JSON array of strings")
    return LabelSchema(tuple(canonical_name(x) for x in raw))


def _read_matrix_csv(path: Path, schema: LabelSchema):
    """Parse one matrix CSV; returns (case_ids, list of value-string rows)."""
    try:
        with open(path, newline="", encoding="utf-8") as fh:
            rows = list(csv.reader(fh))
    except OSError as exc:
        raise ParseError(f"cannot read {path}: {exc}") from exc
    if not rows:
        raise ParseError(f"{path} is empty")
    header = rows[0]
    if not header or header[0] != "case_id":
        raise ParseError(f"{path}: first header column must be 'case_id'")
    if len(header) - 1 != schema.k:
        raise SchemaMismatch(
            f"{path}: {len(header) - 1} value columns, schema has {schema.k}"
        )
    if tuple(canonical_name(h) for h in header[1:]) != schema.names:
        raise SchemaMismatch(f"{path}: header names do not match the schema")
    case_ids, cells = [], []
    for lineno, row in enumerate(rows[1:], start=2):
        if not row:
            continue
        if len(row) != schema.k + 1:
            raise ParseError(f"{path}:{lineno}: expected {schema.k + 1} columns")
        case_ids.append(row[0])
        cells.append(row[1:])
    if len(set(case_ids)) != len(case_ids):
        raise ParseError(f"{path}: duplicate case ids")
    return case_ids, cells


def load_scores(path: str | Path, schema: LabelSchema) -> ScoreMatrix:
    path = Path(path)
    case_ids, cells = _read_matrix_csv(path, schema)
    values = np.empty((len(case_ids), schema.k), dtype=float)
    for i, row in enumerate(cells):
        for j, cell in enumerate(row):
            try:
                v = float(cell)
            except ValueError:
                raise ParseError(f"{path}: bad score {cell!r} for case {case_ids[i]}") from None
            if not 0.0 <= v <= 1.0:
                raise RangeError(f"{path}: score {cell} for case {case_ids[i]} outside [0, 1]")
            values[i, j] = v
    return ScoreMatrix(values, tuple(case_ids))


def load_labels(path: str | Path, schema: LabelSchema) -> LabelMatrix:
    path = Path(path)
    case_ids, cells = _read_matrix_csv(path, schema)
    values = np.empty((len(case_ids), schema.k), dtype=np.int64)
    for i, row in enumerate(cells):
        for j, cell in enumerate(row):
            if cell not in ("0", "1"):
                raise RangeError(f"{path}: label {cell!r} for case {case_ids[i]} not in {{0,1}}")
            values[i, j] = int(cell)
    return LabelMatrix(values, tuple(case_ids))


def load_dataset(
    score_path: str | Path, label_path: str | Path, schema_path: str | Path
) -> tuple[ScoreMatrix, LabelMatrix, LabelSchema]:
    """Load and align the three dataset files.

    Label rows are reordered to score-matrix order; the case-id sets must
    match exactly or AlignmentError is raised.
    """
    schema = load_schema(schema_path)
    scores = load_scores(score_path, schema)
    labels = load_labels(label_path, schema)
    if set(scores.case_ids) != set(labels.case_ids):
        only_s = sorted(set(scores.case_ids) - set(labels.case_ids))
        only_l = sorted(set(labels.case_ids) - set(scores.case_ids))
        raise AlignmentError(
            f"case ids differ between scores and labels "
            f"(only in scores: {only_s[:5]}, only in labels: {only_l[:5]})"
        )
    if labels.case_ids != scores.case_ids:
        order = [labels.case_ids.index(cid) for cid in scores.case_ids]
        labels = LabelMatrix(labels.values[order], scores.case_ids)
    return scores, labels, schema


def save_dataset(
    scores: ScoreMatrix,
    labels: LabelMatrix,
    schema: LabelSchema,
    score_path: str | Path,
    label_path: str | Path,
    schema_path: str | Path,
) -> None:
    """Write the dataset back out; scores keep SCORE_DECIMALS digits."""
    header = ["case_id", *schema.names]
    with open(score_path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for cid, row in zip(scores.case_ids, scores.values):
            writer.writerow([cid, *(f"{v:.{SCORE_DECIMALS}f}" for v in row)])
    with open(label_path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for cid, row in zip(labels.case_ids, labels.values):
            writer.writerow([cid, *(str(int(v)) for v in row)])
    Path(schema_path).write_text(
        json.dumps(list(schema.names), indent=2) + "\n", encoding="utf-8"
    )


def load_manifest(path: str | Path) -> CaseManifest:
    """Read manifest.json (array of {case_id, image, split} objects)."""
    try:
        raw = json.loads(Path(path).read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise ParseError(f"cannot read manifest {path}: {exc}") from exc
    if not isinstance(raw, list):
        raise ParseError(f"manifest {path} must be a JSON array")
    entries = []
    for item in raw:
        if not isinstance(item, dict) or "case_id" not in item or "image" not in item:
            raise ParseError(f"manifest {path}: every entry needs case_id and image")
        split = item.get("split")
        if split is not None and split not in (SPLIT_CALIBRATION, SPLIT_TEST):
            raise ParseError(
                f"manifest {path}: split {split!r} for case {item['case_id']!r} "
                f"must be '{SPLIT_CALIBRATION}' or '{SPLIT_TEST}'"
            )
        entries.append(CaseEntry(str(item["case_id"]), str(item["image"]), split))
    return CaseManifest(tuple(entries))


def save_manifest(manifest: CaseManifest, path: str | Path) -> None:
    payload = [
        {"case_id": e.case_id, "image": e.image, "split": e.split}
        for e in manifest.entries
    ]
    Path(path).write_text(json.dumps(payload, indent=2) + "\n", encoding="utf-8")


def split_dataset(
    scores: ScoreMatrix, labels: LabelMatrix, manifest: CaseManifest
) -> tuple[tuple[ScoreMatrix, LabelMatrix], tuple[ScoreMatrix, LabelMatrix]]:
    """Partition into (calibration, test) pairs by the manifest split tags.

    Ordering within each split follows the input matrix order. Every case in
    the matrices must carry a split tag; a case absent from the manifest
    counts as untagged.
    """
    if scores.case_ids != labels.case_ids:
        raise AlignmentError("scores and labels must share case order")
    tags = {e.case_id: e.split for e in manifest.entries}
    cal_idx, test_idx = [], []
    for i, cid in enumerate(scores.case_ids):
        tag = tags.get(cid)
        if tag is None:
            raise MissingSplitTag(f"case {cid!r} has no calibration/test split tag")
        (cal_idx if tag == SPLIT_CALIBRATION else test_idx).append(i)

    def _take(idx):
        ids = tuple(scores.case_ids[i] for i in idx)
        return (
            ScoreMatrix(scores.values[idx].reshape(len(idx), scores.k), ids),
            LabelMatrix(labels.values[idx].reshape(len(idx), labels.k), ids),
        )

    return _take(cal_idx), _take(test_idx)
