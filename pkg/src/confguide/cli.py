"""Command-line entry points for the pipeline stages and the review service.

Every command takes --config pointing at a run-config JSON file; stage
commands run in-process and exit nonzero with the error name on the first
domain failure.
"""

from __future__ import annotations

import functools
import sys

import click

from .errors import ConfguideError
from .pipeline import (
    RunConfig,
    load_run_config,
    stage_calibrate,
    stage_evaluate,
    stage_guide,
    stage_predict,
    stage_simulate,
    stage_sweep,
)


def _fail(exc: ConfguideError) -> None:
    click.echo(f"error: {type(exc).__name__}: {exc}", err=True)
    sys.exit(1)


def run_options(fn):
    @click.option("--config", "config_path", required=True, type=click.Path(), help="Run-config JSON file.")
    @click.option("--force", is_flag=True, help="Ignore stale upstream artifacts.")
    @click.option("--seed", type=int, default=None, help="Override the config seed.")
    @functools.wraps(fn)
    def wrapper(*args, **kwargs):
        return fn(*args, **kwargs)

    return wrapper


def _load(config_path: str, seed: int | None, **overrides) -> RunConfig:
    if seed is not None:
        overrides["seed"] = seed
    return load_run_config(config_path, **overrides)


@click.group()
def main() -> None:
    """Risk-controlled decision guidance pipeline."""


@main.command()
@run_options
@click.option("--alpha", type=float, default=None, help="Target risk level override.")
@click.option("--strict", is_flag=True, help="Fail when calibration is vacuous.")
def calibrate(config_path, force, seed, alpha, strict) -> None:
    """Pick lambda-hat on the calibration split."""
    try:
        run = _load(config_path, seed)
        out, result = stage_calibrate(run, alpha=alpha, force=force)
    except ConfguideError as exc:
        _fail(exc)
    click.echo(
        f"lambda_hat={result.lambda_hat} alpha={result.alpha} "
        f"n={result.n_calibration} vacuous={result.vacuous} -> {out}"
    )
    if strict and result.vacuous:
        click.echo("error: calibration is vacuous at this alpha", err=True)
        sys.exit(1)


@main.command()
@run_options
def sweep(config_path, force, seed) -> None:
    """Sweep the alpha grid and select the operating point."""
    try:
        run = _load(config_path, seed)
        sweep_path, plateaus_path, alpha_star = stage_sweep(run, force=force)
    except ConfguideError as exc:
        _fail(exc)
    click.echo(f"alpha_star={alpha_star} -> {sweep_path}, {plateaus_path}")


@main.command()
@run_options
def predict(config_path, force, seed) -> None:
    """Write CRC and standard prediction sets for the test split."""
    try:
        run = _load(config_path, seed)
        crc_path, std_path = stage_predict(run, force=force)
    except ConfguideError as exc:
        _fail(exc)
    click.echo(f"wrote {crc_path} and {std_path}")


@main.command()
@run_options
def guide(config_path, force, seed) -> None:
    """Generate favor/against guidance for flagged labels."""
    try:
        run = _load(config_path, seed)
        path, calls = stage_guide(run, force=force)
    except ConfguideError as exc:
        _fail(exc)
    click.echo(f"guidance at {path} ({calls} endpoint calls)")


def _parse_configs(value: str | None) -> tuple[str, ...] | None:
    if value is None:
        return None
    return tuple(part.strip() for part in value.split(",") if part.strip())


@main.command()
@run_options
@click.option("--configs", default=None, help="Comma-separated subset of configurations.")
def simulate(config_path, force, seed, configs) -> None:
    """Produce decision records for every requested configuration."""
    try:
        overrides = {}
        chosen = _parse_configs(configs)
        if chosen is not None:
            overrides["configs"] = chosen
        run = _load(config_path, seed, **overrides)
        path, written = stage_simulate(run, force=force)
    except ConfguideError as exc:
        _fail(exc)
    click.echo(f"decisions at {path} ({written} new records)")


@main.command()
@run_options
@click.option("--configs", default=None, help="Comma-separated subset of configurations.")
def evaluate(config_path, force, seed, configs) -> None:
    """Score decisions against ground truth and write reports."""
    try:
        overrides = {}
        chosen = _parse_configs(configs)
        if chosen is not None:
            overrides["configs"] = chosen
        run = _load(config_path, seed, **overrides)
        report_json, report_md = stage_evaluate(run, force=force)
    except ConfguideError as exc:
        _fail(exc)
    click.echo(f"wrote {report_json} and {report_md}")


@main.command()
@run_options
@click.option("--host", default="127.0.0.1", show_default=True)
@click.option("--port", default=8000, show_default=True, type=int)
def serve(config_path, force, seed, host, port) -> None:
    """Run the HTTP review service."""
    try:
        run = _load(config_path, seed)
        from .service import create_app

        app = create_app(run)
    except ConfguideError as exc:
        _fail(exc)
    import uvicorn

    uvicorn.run(app, host=host, port=port)


if __name__ == "__main__":
    main()
