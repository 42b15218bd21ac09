"""Batch pipeline stages and their artifact provenance.

Stages form a DAG: calibrate -> predict -> guide -> simulate -> evaluate,
with sweep as a sibling of calibrate. Every artifact records the sha256 of
the inputs it was built from; a stage refuses to consume an upstream
artifact whose recorded inputs no longer match the files on disk, unless
forced. With mock endpoints and a fixed seed the whole pipeline is
byte-reproducible, so artifacts carry no timestamps and JSON keys are
always sorted.
"""

from __future__ import annotations

import csv
import hashlib
import json
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterable

from .decision import (
    ALL_CONFIGS,
    CONFIG_CONFGUIDE,
    CONFIG_CRC,
    CONFIG_CRC_PLUS_PLUS,
    CONFIG_STANDARD,
    REVIEWED_CONFIGS,
    REVIEWER_ID_NONE,
    STANDARD_LAMBDA,
    DecisionStore,
    decide_direct,
    simulate_reviewer,
)
from .errors import MissingArtifact, RangeError, StaleArtifact
from .evaluation import (
    compare_configs,
    compute_metrics,
    count_confusion,
    decisions_to_matrix,
    empirical_fnr_report,
    render_markdown,
    report_to_dict,
)
from .guidance import GuidanceStore, generate_guidance, template_hash
from .ingestion import (
    CaseManifest,
    LabelSchema,
    SPLIT_TEST,
    load_dataset,
    load_manifest,
    load_schema,
    split_dataset,
)
from .operating_point import (
    DEFAULT_ALPHA_GRID,
    detect_plateaus,
    select_alpha,
    sweep_alpha,
)
from .riskcontrol import (
    CalibrationResult,
    LambdaGrid,
    PredictionSet,
    calibrate_lambda,
    default_lambda_grid,
    prediction_set,
)
from .vlm_client import VlmClient, VlmEndpointConfig

STAGE_CALIBRATE = "calibrate"
STAGE_SWEEP = "sweep"
STAGE_PREDICT = "predict"
STAGE_GUIDE = "guide"
STAGE_SIMULATE = "simulate"
STAGE_EVALUATE = "evaluate"

CALIBRATION_FILE = "calibration.json"
SWEEP_FILE = "sweep.csv"
PLATEAUS_FILE = "plateaus.json"
SETS_CRC_FILE = "sets_crc.jsonl"
SETS_STANDARD_FILE = "sets_standard.jsonl"
GUIDANCE_FILE = "guidance.jsonl"
DECISIONS_FILE = "decisions.jsonl"
REPORT_JSON_FILE = "report.json"
REPORT_MD_FILE = "report.md"

# Which stage produces each artifact; used in error messages and for
# recursive freshness checks.
ARTIFACT_STAGE = {
    CALIBRATION_FILE: STAGE_CALIBRATE,
    SWEEP_FILE: STAGE_SWEEP,
    PLATEAUS_FILE: STAGE_SWEEP,
    SETS_CRC_FILE: STAGE_PREDICT,
    SETS_STANDARD_FILE: STAGE_PREDICT,
    GUIDANCE_FILE: STAGE_GUIDE,
    DECISIONS_FILE: STAGE_SIMULATE,
    REPORT_JSON_FILE: STAGE_EVALUATE,
    REPORT_MD_FILE: STAGE_EVALUATE,
}


def _default_guidance_endpoint() -> VlmEndpointConfig:
    return VlmEndpointConfig(base_url="mock://guidance", model_id="mock-guidance")


def _default_reviewer_endpoint() -> VlmEndpointConfig:
    return VlmEndpointConfig(base_url="mock://reviewer/echo", model_id="mock-reviewer")


@dataclass(frozen=True)
class RunConfig:
    """Everything one pipeline run needs: paths, grids, endpoints, seed."""

    scores: Path
    labels: Path
    schema: Path
    manifest: Path
    out_dir: Path
    image_root: Path | None = None
    alpha: float = 0.45
    alpha_grid: tuple[float, ...] = DEFAULT_ALPHA_GRID
    lambda_grid_size: int = 1001
    guidance_endpoint: VlmEndpointConfig = field(
        default_factory=_default_guidance_endpoint
    )
    reviewer_endpoint: VlmEndpointConfig = field(
        default_factory=_default_reviewer_endpoint
    )
    configs: tuple[str, ...] = ALL_CONFIGS
    seed: int = 0
    view: str = "AP"

    def __post_init__(self):
        if not 0.0 < self.alpha <= 1.0:
            raise RangeError(f"alpha must lie in (0, 1], got {self.alpha}")
        if self.lambda_grid_size < 2:
            raise RangeError("lambda grid needs at least two points")
        unknown = [c for c in self.configs if c not in ALL_CONFIGS]
        if unknown:
            raise RangeError(f"unknown configs {unknown}; choose from {ALL_CONFIGS}")

    def lambda_grid(self) -> LambdaGrid:
        n = self.lambda_grid_size
        if n == 1001:
            return default_lambda_grid()
        return LambdaGrid(tuple(i / (n - 1) for i in range(n)))

    def artifact(self, name: str) -> Path:
        return self.out_dir / name

    def role_path(self, role: str) -> Path:
        """Resolve a provenance role name to the file it refers to."""
        fixed = {
            "scores": self.scores,
            "labels": self.labels,
            "schema": self.schema,
            "manifest": self.manifest,
        }
        if role in fixed:
            return fixed[role]
        if role in ARTIFACT_STAGE:
            return self.artifact(role)
        raise RangeError(f"unknown provenance role {role!r}")


def _endpoint_from_dict(data: dict, default: VlmEndpointConfig) -> VlmEndpointConfig:
    if not data:
        return default
    return VlmEndpointConfig(
        base_url=data["base_url"],
        model_id=data["model_id"],
        auth_env_var=data.get("auth_env_var"),
        timeout_seconds=float(data.get("timeout_seconds", 60.0)),
        max_retries=int(data.get("max_retries", 2)),
        max_parallel=int(data.get("max_parallel", 1)),
        temperature=float(data.get("temperature", 0.0)),
        backoff_seconds=float(data.get("backoff_seconds", 0.0)),
    )


def load_run_config(path: str | Path, **overrides) -> RunConfig:
    """Read a run-config JSON file; relative paths resolve against it."""
    path = Path(path)
    try:
        data = json.loads(path.read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise MissingArtifact(f"run config not found: {path}") from None
    base = path.parent

    def _resolve(key, required=True):
        value = data.get(key)
        if value is None:
            if required:
                raise RangeError(f"run config is missing required path {key!r}")
            return None
        p = Path(value)
        return p if p.is_absolute() else base / p

    config = RunConfig(
        scores=_resolve("scores"),
        labels=_resolve("labels"),
        schema=_resolve("schema"),
        manifest=_resolve("manifest"),
        out_dir=_resolve("out_dir"),
        image_root=_resolve("image_root", required=False),
        alpha=float(data.get("alpha", 0.45)),
        alpha_grid=tuple(data.get("alpha_grid", DEFAULT_ALPHA_GRID)),
        lambda_grid_size=int(data.get("lambda_grid_size", 1001)),
        guidance_endpoint=_endpoint_from_dict(
            data.get("guidance_endpoint", {}), _default_guidance_endpoint()
        ),
        reviewer_endpoint=_endpoint_from_dict(
            data.get("reviewer_endpoint", {}), _default_reviewer_endpoint()
        ),
        configs=tuple(data.get("configs", ALL_CONFIGS)),
        seed=int(data.get("seed", 0)),
        view=data.get("view", "AP"),
    )
    if overrides:
        config = replace(config, **overrides)
    return config


def file_sha256(path: str | Path) -> str:
    digest = hashlib.sha256()
    with Path(path).open("rb") as handle:
        for chunk in iter(lambda: handle.read(65536), b""):
            digest.update(chunk)
    return digest.hexdigest()


def _input_hashes(run: RunConfig, roles: Iterable[str]) -> dict[str, str]:
    hashes = {}
    for role in roles:
        target = run.role_path(role)
        if not target.exists():
            raise MissingArtifact(f"input for role {role!r} not found: {target}")
        hashes[role] = file_sha256(target)
    return hashes


def write_json(path: Path, obj) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def _write_sidecar(path: Path, stage: str, inputs: dict[str, str]) -> Path:
    sidecar = path.with_name(path.name + ".meta.json")
    write_json(sidecar, {"stage": stage, "inputs": inputs})
    return sidecar


def load_artifact_meta(path: Path) -> dict:
    """Provenance of an artifact: inline for JSON objects, sidecar otherwise."""
    if path.suffix == ".json":
        data = json.loads(path.read_text(encoding="utf-8"))
        if isinstance(data, dict):
            return {"stage": data.get("stage", ""), "inputs": data.get("inputs", {})}
    sidecar = path.with_name(path.name + ".meta.json")
    if not sidecar.exists():
        raise MissingArtifact(f"provenance sidecar missing for {path.name}")
    data = json.loads(sidecar.read_text(encoding="utf-8"))
    return {"stage": data.get("stage", ""), "inputs": data.get("inputs", {})}


def require_fresh(run: RunConfig, artifact_name: str, force: bool = False) -> Path:
    """Check an upstream artifact exists and none of its inputs changed.

    The check recurses through artifact-typed inputs, so editing scores.csv
    marks everything downstream of calibration stale. --force skips the
    staleness part but still requires the file to exist.
    """
    path = run.artifact(artifact_name)
    stage = ARTIFACT_STAGE.get(artifact_name, "?")
    if not path.exists():
        raise MissingArtifact(
            f"{artifact_name} not found in {run.out_dir}; "
            f"run the {stage!r} stage first"
        )
    if force:
        return path
    meta = load_artifact_meta(path)
    for role, recorded in meta["inputs"].items():
        target = run.role_path(role)
        if not target.exists() or file_sha256(target) != recorded:
            raise StaleArtifact(
                f"{artifact_name} is stale: input {role!r} changed since the "
                f"{stage!r} stage ran; re-run it or pass --force"
            )
        if role in ARTIFACT_STAGE:
            require_fresh(run, role, force=False)
    return path


def _load_split(run: RunConfig):
    scores, labels, schema = load_dataset(run.scores, run.labels, run.schema)
    manifest = load_manifest(run.manifest)
    cal, test = split_dataset(scores, labels, manifest)
    return schema, manifest, cal, test


def stage_calibrate(
    run: RunConfig, alpha: float | None = None, force: bool = False
) -> tuple[Path, CalibrationResult]:
    """Calibrate lambda-hat on the calibration split and write calibration.json."""
    target_alpha = run.alpha if alpha is None else alpha
    inputs = _input_hashes(run, ("scores", "labels", "schema", "manifest"))
    _, _, (cal_scores, cal_labels), _ = _load_split(run)
    grid = run.lambda_grid()
    result = calibrate_lambda(cal_scores, cal_labels, target_alpha, grid)
    out = run.artifact(CALIBRATION_FILE)
    write_json(
        out,
        {
            "stage": STAGE_CALIBRATE,
            "inputs": inputs,
            "alpha": result.alpha,
            "lambda_hat": result.lambda_hat,
            "n_calibration": result.n_calibration,
            "vacuous": result.vacuous,
            "risk_curve": [[lam, adjusted] for lam, adjusted in result.risk_curve],
        },
    )
    return out, result


def stage_sweep(run: RunConfig, force: bool = False) -> tuple[Path, Path, float]:
    """Sweep the alpha grid, write sweep.csv and plateaus.json, pick alpha*."""
    inputs = _input_hashes(run, ("scores", "labels", "schema", "manifest"))
    _, _, (cal_scores, cal_labels), _ = _load_split(run)
    points = sweep_alpha(cal_scores, cal_labels, run.alpha_grid, run.lambda_grid())
    plateaus = detect_plateaus(points)
    alpha_star = select_alpha(plateaus)

    sweep_path = run.artifact(SWEEP_FILE)
    sweep_path.parent.mkdir(parents=True, exist_ok=True)
    with sweep_path.open("w", encoding="utf-8", newline="") as handle:
        writer = csv.writer(handle)
        writer.writerow(["alpha", "lambda_hat", "risk", "avg_set_size", "selected"])
        for point in points:
            writer.writerow(
                [
                    repr(point.alpha),
                    repr(point.lambda_hat),
                    repr(point.empirical_risk),
                    repr(point.avg_set_size),
                    "1" if point.alpha == alpha_star else "0",
                ]
            )
    _write_sidecar(sweep_path, STAGE_SWEEP, inputs)

    plateaus_path = run.artifact(PLATEAUS_FILE)
    write_json(
        plateaus_path,
        [
            {
                "alpha_lo": p.alpha_lo,
                "alpha_hi": p.alpha_hi,
                "length": p.length,
                "risk": p.risk,
                "avg_set_size": p.avg_set_size,
                "selected": p.alpha_lo == alpha_star,
            }
            for p in plateaus
        ],
    )
    _write_sidecar(plateaus_path, STAGE_SWEEP, inputs)
    return sweep_path, plateaus_path, alpha_star


def _write_sets(path: Path, sets: list[PredictionSet]) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8") as handle:
        for ps in sets:
            handle.write(
                json.dumps(
                    {
                        "case_id": ps.case_id,
                        "lambda_used": ps.lambda_used,
                        "members": sorted(ps.members),
                    },
                    sort_keys=True,
                )
                + "\n"
            )


def load_sets(path: str | Path) -> dict[str, PredictionSet]:
    """Read a prediction-set JSONL file into a case_id-keyed dict."""
    path = Path(path)
    if not path.exists():
        raise MissingArtifact(f"prediction sets not found: {path}")
    sets = {}
    with path.open("r", encoding="utf-8") as handle:
        for line in handle:
            line = line.strip()
            if not line:
                continue
            data = json.loads(line)
            sets[data["case_id"]] = PredictionSet(
                case_id=data["case_id"],
                members=frozenset(int(m) for m in data["members"]),
                lambda_used=float(data["lambda_used"]),
            )
    return sets


def stage_predict(run: RunConfig, force: bool = False) -> tuple[Path, Path]:
    """Write CRC and standard prediction sets for every test-split case."""
    calibration_path = require_fresh(run, CALIBRATION_FILE, force)
    calibration = json.loads(calibration_path.read_text(encoding="utf-8"))
    lambda_hat = float(calibration["lambda_hat"])
    inputs = _input_hashes(
        run, ("scores", "schema", "manifest", CALIBRATION_FILE)
    )
    _, _, _, (test_scores, _) = _load_split(run)

    crc_sets, std_sets = [], []
    for i, case_id in enumerate(test_scores.case_ids):
        row = test_scores.values[i]
        crc_sets.append(prediction_set(row, lambda_hat, case_id))
        std_sets.append(prediction_set(row, STANDARD_LAMBDA, case_id))

    crc_path = run.artifact(SETS_CRC_FILE)
    std_path = run.artifact(SETS_STANDARD_FILE)
    _write_sets(crc_path, crc_sets)
    _write_sets(std_path, std_sets)
    _write_sidecar(crc_path, STAGE_PREDICT, inputs)
    _write_sidecar(std_path, STAGE_PREDICT, inputs)
    return crc_path, std_path


def _test_cases(manifest: CaseManifest, order: tuple[str, ...]):
    by_id = {e.case_id: e for e in manifest.entries}
    return [by_id[cid] for cid in order if by_id[cid].split == SPLIT_TEST]


def stage_guide(run: RunConfig, force: bool = False) -> tuple[Path, int]:
    """Generate favor/against guidance for every flagged test label.

    Returns the guidance path and how many endpoint calls were made; a rerun
    with a warm cache makes zero calls.
    """
    sets_path = require_fresh(run, SETS_CRC_FILE, force)
    inputs = _input_hashes(run, ("schema", "manifest", SETS_CRC_FILE))
    schema = load_schema(run.schema)
    manifest = load_manifest(run.manifest)
    sets = load_sets(sets_path)

    store = GuidanceStore(run.artifact(GUIDANCE_FILE))
    store.path.parent.mkdir(parents=True, exist_ok=True)
    store.path.touch(exist_ok=True)
    client = VlmClient(run.guidance_endpoint)
    for case in _test_cases(manifest, tuple(sets)):
        generate_guidance(
            case,
            sets[case.case_id],
            client,
            schema=schema,
            view=run.view,
            store=store,
            image_root=run.image_root,
        )
    _write_sidecar(store.path, STAGE_GUIDE, inputs)
    return store.path, client.calls_made


def stage_simulate(run: RunConfig, force: bool = False) -> tuple[Path, int]:
    """Produce DecisionRecords for every requested config on the test split.

    Direct configs copy their prediction sets; reviewed configs query the
    reviewer endpoint per flagged label. Existing (case, config, reviewer)
    records are kept as-is, so reruns are idempotent.
    """
    sets_crc = load_sets(require_fresh(run, SETS_CRC_FILE, force))
    roles = ["schema", "manifest", SETS_CRC_FILE]
    sets_std = {}
    if CONFIG_STANDARD in run.configs:
        sets_std = load_sets(require_fresh(run, SETS_STANDARD_FILE, force))
        roles.append(SETS_STANDARD_FILE)

    guidance_store = None
    if CONFIG_CONFGUIDE in run.configs:
        guidance_path = require_fresh(run, GUIDANCE_FILE, force)
        guidance_store = GuidanceStore(guidance_path)
        roles.append(GUIDANCE_FILE)

    inputs = _input_hashes(run, roles)
    schema = load_schema(run.schema)
    manifest = load_manifest(run.manifest)
    cases = _test_cases(manifest, tuple(sets_crc))
    store = DecisionStore(run.artifact(DECISIONS_FILE))
    client = VlmClient(run.reviewer_endpoint)
    tmpl_hash = template_hash()
    guidance_model = run.guidance_endpoint.model_id

    written = 0
    for config in ALL_CONFIGS:
        if config not in run.configs:
            continue
        for case in cases:
            reviewer = (
                run.reviewer_endpoint.model_id
                if config in REVIEWED_CONFIGS
                else REVIEWER_ID_NONE
            )
            if store.get(case.case_id, config, reviewer) is not None:
                continue
            if config == CONFIG_STANDARD:
                record = decide_direct(
                    sets_std[case.case_id], schema.k, config, REVIEWER_ID_NONE
                )
            elif config == CONFIG_CRC:
                record = decide_direct(
                    sets_crc[case.case_id], schema.k, config, REVIEWER_ID_NONE
                )
            else:
                pred_set = sets_crc[case.case_id]
                guidance = {}
                if config == CONFIG_CONFGUIDE and guidance_store is not None:
                    for idx in sorted(pred_set.members):
                        name = schema.names[idx]
                        hit = guidance_store.get(
                            case.case_id, name, guidance_model, tmpl_hash
                        )
                        if hit is not None:
                            guidance[name] = hit
                record = simulate_reviewer(
                    case,
                    pred_set,
                    schema,
                    config,
                    run.reviewer_endpoint,
                    guidance=guidance,
                    image_root=run.image_root,
                    client=client,
                )
            store.append(record)
            written += 1
    _write_sidecar(store.path, STAGE_SIMULATE, inputs)
    return store.path, written


def stage_evaluate(run: RunConfig, force: bool = False) -> tuple[Path, Path]:
    """Score every (config, reviewer) group against labels; write reports."""
    decisions_path = require_fresh(run, DECISIONS_FILE, force)
    inputs = _input_hashes(run, ("labels", "schema", "manifest", DECISIONS_FILE))
    schema = load_schema(run.schema)
    _, _, _, (_, test_labels) = _load_split(run)
    store = DecisionStore(decisions_path)

    groups: dict[tuple[str, str], list] = {}
    for record in store.records():
        if record.config not in run.configs:
            continue
        groups.setdefault((record.config, record.reviewer_id), []).append(record)

    ordered_keys = sorted(
        groups, key=lambda key: (ALL_CONFIGS.index(key[0]), key[1])
    )
    reports = []
    for config, reviewer_id in ordered_keys:
        matrix, truth = decisions_to_matrix(groups[(config, reviewer_id)], test_labels)
        counts = count_confusion(matrix, truth, schema.names)
        fnr = empirical_fnr_report(matrix, truth)
        reports.append(compute_metrics(counts, config, reviewer_id, fnr))

    table = compare_configs(reports)
    report_json = run.artifact(REPORT_JSON_FILE)
    write_json(
        report_json,
        {
            "stage": STAGE_EVALUATE,
            "inputs": inputs,
            "reports": [report_to_dict(r) for r in reports],
        },
    )
    report_md = run.artifact(REPORT_MD_FILE)
    report_md.write_text(render_markdown(table, schema.names), encoding="utf-8")
    _write_sidecar(report_md, STAGE_EVALUATE, inputs)
    return report_json, report_md
