"""Command line entry points.

Exit codes: 0 success, 2 usage error (click), 3 pipeline failure,
4 configuration problem. Backend selection: --replay plays a recorded
cassette, --record wraps the live HTTP backend (or the scripted one when
no endpoint is configured) and captures every turn, and with neither flag
the deterministic scripted backend runs on its own.
"""

from __future__ import annotations

import json
import os
import sys
from pathlib import Path

import click

from .backend import (
    ENV_API_BASE,
    Cassette,
    HttpBackend,
    RecordingBackend,
    ReplayBackend,
)
from .config import load_config
from .domain import normalize_target_identifier
from .drafting import ScriptedBackend
from .errors import (
    ConfigurationError,
    GraphInvalid,
    LayerInvalid,
    SkillNotFound,
    TsaError,
)
from .evaluation import evaluate_all
from .orchestrator import (
    COMPLETED,
    REPORT_MD,
    Assessment,
    export as export_assessment,
    plan,
    resume as resume_assessment,
    run as run_pipeline,
)

_CONFIG_ERRORS = (ConfigurationError, SkillNotFound, GraphInvalid, LayerInvalid)


def _fail(exc: TsaError) -> None:
    click.echo(str(exc), err=True)
    sys.exit(4 if isinstance(exc, _CONFIG_ERRORS) else 3)


def _build_backend(record: str | None, replay: str | None):
    if replay:
        return ReplayBackend(Cassette.load(replay))
    if record:
        live = HttpBackend() if os.environ.get(ENV_API_BASE) else ScriptedBackend()
        return RecordingBackend(live, record)
    return ScriptedBackend()


def _build_judge(config: dict):
    if config.get("judge") != "replay":
        return None
    cassette = config.get("judge_cassette")
    if not cassette:
        raise ConfigurationError("judge is 'replay' but judge_cassette is unset")
    return ReplayBackend(Cassette.load(cassette))


def _overrides(fixtures: str | None, assessment_id: str | None) -> dict:
    overrides: dict = {}
    if fixtures:
        overrides["servers"] = [
            {"transport": "inproc", "corpus_dir": str(Path(fixtures).resolve())}
        ]
    if assessment_id:
        overrides["assessment_id"] = assessment_id
    return overrides


@click.group()
def main():
    """Evidence-grounded target safety assessment drafting."""


@main.command("run")
@click.option("--target", required=True, help="gene symbol, Ensembl id, or UniProt accession")
@click.option("--context", default=None, help="free-text context for the user layer")
@click.option("--config", "config_path", default=None, type=click.Path())
@click.option("--record", default=None, type=click.Path(),
              help="record model turns into this cassette")
@click.option("--replay", default=None, type=click.Path(),
              help="replay model turns from this cassette")
@click.option("--fixtures", default=None, type=click.Path(exists=True, file_okay=False),
              help="corpus directory served through an in-process tool server")
@click.option("--out", default=None, type=click.Path(),
              help="assessment directory (default: ./<assessment id>)")
@click.option("--assessment-id", default=None)
def run_cmd(target, context, config_path, record, replay, fixtures, out,
            assessment_id):
    """Run the full pipeline for one target."""
    try:
        config = load_config(config_path, overrides=_overrides(fixtures, assessment_id))
        query = normalize_target_identifier(target, free_text_context=context)
        plan_ = plan(query, config)
        directory = Path(out) if out else Path.cwd() / plan_.assessment_id
        backend = _build_backend(record, replay)
        run_pipeline(plan_, directory, backend, judge=_build_judge(config))
    except TsaError as exc:
        _fail(exc)
    click.echo(f"completed: {directory / REPORT_MD}")


@main.command("resume")
@click.argument("directory", type=click.Path(exists=True, file_okay=False))
@click.option("--record", default=None, type=click.Path())
@click.option("--replay", default=None, type=click.Path())
def resume_cmd(directory, record, replay):
    """Continue an interrupted or killed assessment."""
    try:
        assessment = Assessment.open(directory)
        if assessment.state.status == COMPLETED:
            click.echo("already completed")
            return
        config = assessment.config.get("config", {})
        backend = _build_backend(record, replay)
        resume_assessment(directory, backend, judge=_build_judge(config))
    except TsaError as exc:
        _fail(exc)
    click.echo(f"completed: {Path(directory) / REPORT_MD}")


@main.command("evaluate")
@click.argument("directory", type=click.Path(exists=True, file_okay=False))
@click.option("--json", "as_json", is_flag=True, help="emit the full report as JSON")
def evaluate_cmd(directory, as_json):
    """Score a completed assessment on the evaluation dimensions."""
    try:
        report = evaluate_all(directory)
    except TsaError as exc:
        _fail(exc)
    if as_json:
        click.echo(json.dumps(report.to_dict(), indent=2, ensure_ascii=False))
    else:
        click.echo(report.render_text())


@main.command("export")
@click.argument("directory", type=click.Path(exists=True, file_okay=False))
@click.option("--format", "fmt", default="md",
              type=click.Choice(["md", "html", "json"]))
@click.option("--out", default=None, type=click.Path(),
              help="write here instead of stdout")
def export_cmd(directory, fmt, out):
    """Render a completed assessment as markdown, HTML, or JSON."""
    try:
        rendered = export_assessment(directory, fmt)
    except TsaError as exc:
        _fail(exc)
    if out:
        Path(out).write_text(rendered, encoding="utf-8")
        click.echo(f"wrote {out}")
    else:
        click.echo(rendered, nl=False)


@main.command("serve")
@click.option("--host", default="127.0.0.1")
@click.option("--port", default=8400, type=int)
@click.option("--root", default=".", type=click.Path(file_okay=False),
              help="directory that holds assessment directories")
@click.option("--config", "config_path", default=None, type=click.Path())
@click.option("--record", default=None, type=click.Path())
@click.option("--replay", default=None, type=click.Path())
@click.option("--fixtures", default=None, type=click.Path(exists=True, file_okay=False))
def serve_cmd(host, port, root, config_path, record, replay, fixtures):
    """Serve the review API over HTTP."""
    import uvicorn

    from .service import create_app

    try:
        config = load_config(config_path, overrides=_overrides(fixtures, None))
        judge = _build_judge(config)
        app = create_app(
            Path(root), config, lambda: _build_backend(record, replay), judge=judge
        )
    except TsaError as exc:
        _fail(exc)
    uvicorn.run(app, host=host, port=port, log_level="warning")


if __name__ == "__main__":
    main()
