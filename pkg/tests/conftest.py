"""Shared fixtures: oracle datasets, the bundled e2e fixture, run builders."""

from __future__ import annotations

from pathlib import Path

import numpy as np
import pytest

from confguide.ingestion import (
    CaseEntry,
    CaseManifest,
    LabelMatrix,
    LabelSchema,
    ScoreMatrix,
    SPLIT_CALIBRATION,
    SPLIT_TEST,
    save_dataset,
    save_manifest,
)
from confguide.pipeline import RunConfig
from confguide.vlm_client import VlmEndpointConfig

FIXTURES = Path(__file__).parent / "fixtures"
GOLDEN = Path(__file__).parent / "golden"
E2E10 = FIXTURES / "e2e10"

# Thresholds t where each single-positive case starts being covered. Ties in
# this list are what create the plateau structure: runs [0.10,0.15],
# [0.35,0.40], [0.45,0.55] (the longest), and [0.65,0.70] over the default
# alpha grid, so select_alpha must return 0.45.
SWEEP19_THRESHOLDS = (
    0.98, 0.90, 0.90, 0.85, 0.80, 0.75, 0.70, 0.70, 0.60, 0.60,
    0.60, 0.50, 0.40, 0.40, 0.30, 0.25, 0.20, 0.15, 0.10,
)


def make_matrices(scores, labels, prefix="c", case_ids=None):
    scores = np.asarray(scores, dtype=float)
    labels = np.asarray(labels, dtype=np.int64)
    ids = case_ids or tuple(f"{prefix}{i:03d}" for i in range(scores.shape[0]))
    return ScoreMatrix(scores, ids), LabelMatrix(labels, ids)


@pytest.fixture
def hand3():
    """Three single-positive cases with positive scores 0.9 / 0.6 / 0.3."""
    scores = [[0.9, 0.1], [0.6, 0.1], [0.3, 0.1]]
    labels = [[1, 0], [1, 0], [1, 0]]
    return make_matrices(scores, labels, prefix="h")


@pytest.fixture
def sweep19():
    """19 single-positive cases shaped to reproduce the plateau structure."""
    n = len(SWEEP19_THRESHOLDS)
    scores = np.zeros((n, 3))
    labels = np.zeros((n, 3), dtype=np.int64)
    for i, t in enumerate(SWEEP19_THRESHOLDS):
        scores[i, 0] = round(1.0 - t, 6)
        labels[i, 0] = 1
    return make_matrices(scores, labels, prefix="s")


@pytest.fixture
def e2e_run(tmp_path):
    """RunConfig over the bundled 10-case fixture, writing into tmp."""

    def factory(out_name="out", **overrides):
        kwargs = dict(
            scores=E2E10 / "scores.csv",
            labels=E2E10 / "labels.csv",
            schema=E2E10 / "schema.json",
            manifest=E2E10 / "manifest.json",
            out_dir=tmp_path / out_name,
            image_root=E2E10,
            alpha=0.45,
            seed=7,
        )
        kwargs.update(overrides)
        return RunConfig(**kwargs)

    return factory


def write_dataset_files(
    directory: Path,
    scores,
    labels,
    class_names,
    splits,
    with_images=True,
):
    """Write a complete on-disk dataset; returns the four paths."""
    scores = np.asarray(scores, dtype=float)
    labels = np.asarray(labels, dtype=np.int64)
    ids = tuple(f"c{i:03d}" for i in range(scores.shape[0]))
    schema = LabelSchema(tuple(class_names))
    directory.mkdir(parents=True, exist_ok=True)
    save_dataset(
        ScoreMatrix(scores, ids),
        LabelMatrix(labels, ids),
        schema,
        directory / "scores.csv",
        directory / "labels.csv",
        directory / "schema.json",
    )
    entries = []
    if with_images:
        (directory / "images").mkdir(exist_ok=True)
    for i, cid in enumerate(ids):
        image = f"images/{cid}.png"
        if with_images:
            (directory / image).write_bytes(_tiny_png(10 * i + 3))
        entries.append(CaseEntry(cid, image, splits[i]))
    save_manifest(CaseManifest(tuple(entries)), directory / "manifest.json")
    return (
        directory / "scores.csv",
        directory / "labels.csv",
        directory / "schema.json",
        directory / "manifest.json",
    )


def _tiny_png(gray: int) -> bytes:
    import struct
    import zlib

    def chunk(tag, data):
        body = struct.pack(">I", len(data)) + tag + data
        return body + struct.pack(">I", zlib.crc32(tag + data) & 0xFFFFFFFF)

    ihdr = struct.pack(">IIBBBBB", 1, 1, 8, 0, 0, 0, 0)
    idat = zlib.compress(b"\x00" + bytes([gray]))
    return b"\x89PNG\r\n\x1a\n" + chunk(b"IHDR", ihdr) + chunk(b"IDAT", idat) + chunk(b"IEND", b"")


@pytest.fixture
def service_run(tmp_path):
    """A tiny 6-case dataset with known flags, pipelined up through guidance.

    Test cases: c003 flags {A, C}, c004 flags {B}, c005 flags nothing.
    """
    from confguide.pipeline import stage_calibrate, stage_guide, stage_predict

    # Calibration positives all score 0.90, so lambda_hat = 0.1 exactly and
    # the flag threshold is just under 0.9.
    names = ("Alpha", "Beta", "Gamma", "Delta")
    scores = [
        [0.90, 0.10, 0.90, 0.10],  # calibration
        [0.90, 0.20, 0.10, 0.10],
        [0.10, 0.90, 0.20, 0.10],
        [0.90, 0.10, 0.95, 0.05],  # test: flags Alpha, Gamma
        [0.05, 0.92, 0.10, 0.05],  # test: flags Beta
        [0.05, 0.10, 0.05, 0.02],  # test: flags nothing
    ]
    labels = [
        [1, 0, 1, 0],
        [1, 0, 0, 0],
        [0, 1, 0, 0],
        [1, 0, 1, 0],
        [0, 1, 0, 0],
        [0, 0, 0, 0],
    ]
    splits = [SPLIT_CALIBRATION] * 3 + [SPLIT_TEST] * 3
    data_dir = tmp_path / "data"
    s, l, sc, m = write_dataset_files(data_dir, scores, labels, names, splits)
    run = RunConfig(
        scores=s,
        labels=l,
        schema=sc,
        manifest=m,
        out_dir=tmp_path / "out",
        image_root=data_dir,
        alpha=0.5,
        seed=11,
        guidance_endpoint=VlmEndpointConfig(
            base_url="mock://guidance", model_id="mock-guidance"
        ),
    )
    stage_calibrate(run)
    stage_predict(run)
    stage_guide(run)
    return run
