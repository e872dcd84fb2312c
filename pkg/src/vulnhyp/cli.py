"""Command-line entry points: detect, evaluate, context-extract, and helpers.

Run layout under ``--out``::

    reports/<sample_id>.report   one detection report per sample
    manifest.run                 config snapshot, accounting, per-sample status
    cache/                       recorded model responses (replayable)
"""

from __future__ import annotations

import json
import logging
import re
import sys
from pathlib import Path
from typing import Optional

import click

from .context import ContextError, extract_directory, load_context, save_context
from .eval import DatasetError, evaluate, load_pairs
from .fsutil import atomic_write_text
from .llmgate import ConfigInvalid, accounting, build_gateway, load_script
from .model import CodeSample, DetectionReport, Language, canonical_dumps, dumps
from .orchestrator import Pipeline, PipelineConfig, load_config
from .schema import KINDS, MalformedDocument, validate_data, validate_schema

EXIT_OK, EXIT_FATAL, EXIT_PARTIAL = 0, 1, 2
REPORTS_DIR = "reports"
MANIFEST = "manifest.run"
CACHE_DIR = "cache"
REPORT_SUFFIX = ".report"

_LANG = {".c": Language.C, ".h": Language.C, ".cc": Language.CPP, ".cpp": Language.CPP, ".cxx": Language.CPP, ".hpp": Language.CPP, ".py": Language.PYTHON}
_UNSAFE = re.compile(r"[^A-Za-z0-9._-]")


def report_filename(sample_id: str) -> str:
    return _UNSAFE.sub("_", sample_id) + REPORT_SUFFIX


def read_samples(path: Path) -> list[CodeSample]:
    """A JSON-lines dataset, a single JSON sample, or a bare source file."""
    text = path.read_text(encoding="utf-8")
    suffix = path.suffix.lower()
    if suffix in (".ndjson", ".jsonl"):
        samples = []
        for i, line in enumerate(l for l in text.splitlines() if l.strip()):
            data = json.loads(line)
            res = validate_data(data, "code_sample")
            if not res.ok:
                raise ConfigInvalid(f"{path} record {i}: " + "; ".join(map(str, res.violations)))
            samples.append(CodeSample.from_dict(data))
        ids = [s.id for s in samples]
        if len(set(ids)) != len(ids):
            raise ConfigInvalid(f"{path}: duplicate sample ids")
        return samples
    if suffix == ".json":
        data = json.loads(text)
        res = validate_data(data, "code_sample")
        if not res.ok:
            raise ConfigInvalid(f"{path}: " + "; ".join(map(str, res.violations)))
        return [CodeSample.from_dict(data)]
    return [CodeSample(id=path.stem, source=text, language_hint=_LANG.get(suffix, Language.OTHER))]


def _fail(message: str, code: int = EXIT_FATAL) -> None:
    click.echo(f"error: {message}", err=True)
    sys.exit(code)


@click.group()
@click.option("-v", "--verbose", is_flag=True, help="Log progress to stderr.")
def main(verbose: bool) -> None:
    """Hypothesis-validation vulnerability detection."""
    logging.basicConfig(level=logging.INFO if verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")


@main.command("detect")
@click.argument("inputs", type=click.Path(path_type=Path))
@click.option("--backend", type=click.Choice(["live", "replay", "mock"]), default="mock", show_default=True)
@click.option("--workers", type=int, default=None, help="Sample worker pool width (default 8).")
@click.option("--context", "context_path", type=click.Path(path_type=Path), default=None)
@click.option("--mock-script", type=click.Path(path_type=Path), default=None)
@click.option("--dispatcher", type=click.Choice(["lexical", "llm"]), default=None)
@click.option("--config", "config_path", type=click.Path(path_type=Path), default=None)
@click.option("--cache", "cache_dir", type=click.Path(path_type=Path), default=None, help="Response cache (default <out>/cache).")
@click.option("--out", "out_dir", type=click.Path(path_type=Path), default=Path("run"), show_default=True)
def cmd_detect(
    inputs: Path,
    backend: str,
    workers: Optional[int],
    context_path: Optional[Path],
    mock_script: Optional[Path],
    dispatcher: Optional[str],
    config_path: Optional[Path],
    cache_dir: Optional[Path],
    out_dir: Path,
) -> None:
    """Run detection over a dataset or a single source file."""
    try:
        config = load_config(config_path) if config_path else PipelineConfig()
        config = config.replace(workers=workers, dispatcher_mode=dispatcher)
        samples = read_samples(inputs)
        ctx = load_context(context_path) if context_path else None
        script = load_script(mock_script) if mock_script else None
        gateway = build_gateway(backend, cache_dir=cache_dir or out_dir / CACHE_DIR, script=script)
    except (ConfigInvalid, ContextError, MalformedDocument) as exc:
        _fail(f"config-invalid: {exc}")
    except (OSError, ValueError) as exc:
        _fail(f"io-failure: {exc}")

    outcomes = Pipeline(gateway, config).run_many(samples, ctx)
    entries = []
    try:
        for o in outcomes:
            entry: dict = {"sample_id": o.sample_id}
            if o.report is not None:
                name = report_filename(o.sample_id)
                atomic_write_text(out_dir / REPORTS_DIR / name, dumps(o.report))
                entry.update(
                    status="partial" if o.report.skipped_agents else "ok",
                    report=f"{REPORTS_DIR}/{name}",
                    vulnerable=o.report.vulnerable,
                    call_count=o.report.call_count,
                    output_tokens=o.report.output_tokens,
                    skipped_agents=list(o.report.skipped_agents),
                )
            else:
                entry.update(status="failed", stage=o.error.stage, error=str(o.error.cause))
            entries.append(entry)
        done = [o.report for o in outcomes if o.report is not None]
        manifest = {
            "backend": backend,
            "model_id": gateway.model_id,
            "config": config.to_dict(),
            "inputs": inputs.name,
            "accounting": accounting(done).to_dict(),
            "samples": entries,
        }
        atomic_write_text(out_dir / MANIFEST, canonical_dumps(manifest))
    except OSError as exc:
        _fail(f"io-failure: {exc}")

    failed = [e for e in entries if e["status"] == "failed"]
    partial = [e for e in entries if e["status"] == "partial"]
    click.echo(f"{len(done)}/{len(entries)} samples reported, {len(failed)} failed, {len(partial)} partial -> {out_dir}")
    if failed:
        sys.exit(EXIT_FATAL)
    sys.exit(EXIT_PARTIAL if partial else EXIT_OK)


def read_reports(directory: Path) -> dict[str, DetectionReport]:
    if (directory / REPORTS_DIR).is_dir():
        directory = directory / REPORTS_DIR
    reports = {}
    for path in sorted(directory.glob(f"*{REPORT_SUFFIX}")):
        text = path.read_text(encoding="utf-8")
        res = validate_schema(text, "detection_report")
        if not res.ok:
            raise ConfigInvalid(f"{path}: " + "; ".join(map(str, res.violations)))
        report = DetectionReport.from_dict(json.loads(text))
        reports[report.sample_id] = report
    return reports


@main.command("evaluate")
@click.argument("reports_dir", type=click.Path(path_type=Path, file_okay=False))
@click.argument("dataset", type=click.Path(path_type=Path, dir_okay=False))
@click.option("--assume-benign", is_flag=True, help="Predict benign for samples without a report.")
@click.option("--out", "out_dir", type=click.Path(path_type=Path), default=None, help="Write evaluation.json and evaluation.md here.")
def cmd_evaluate(reports_dir: Path, dataset: Path, assume_benign: bool, out_dir: Optional[Path]) -> None:
    """Score a run's reports against a labelled pair dataset."""
    try:
        samples = load_pairs(dataset)
        reports = read_reports(reports_dir)
        result = evaluate(samples, reports, assume_benign=assume_benign)
    except DatasetError as exc:
        _fail(f"{type(exc).__name__}: {exc}")
    except (ConfigInvalid, MalformedDocument) as exc:
        _fail(f"config-invalid: {exc}")
    except OSError as exc:
        _fail(f"io-failure: {exc}")
    markdown = result.to_markdown()
    if out_dir is not None:
        atomic_write_text(out_dir / "evaluation.json", canonical_dumps(result.to_dict()))
        atomic_write_text(out_dir / "evaluation.md", markdown)
    click.echo(markdown, nl=False)


@main.command("context-extract")
@click.argument("source_dir", type=click.Path(path_type=Path))
@click.argument("out_file", type=click.Path(path_type=Path, dir_okay=False))
@click.option("--target", default=None, help="Name of the function under test.")
@click.option("--project", default="", help="Project name for the bundle metadata.")
def cmd_context_extract(source_dir: Path, out_file: Path, target: Optional[str], project: str) -> None:
    """Extract a lightweight program-context bundle from a source tree."""
    try:
        bundle = extract_directory(source_dir, target=target, project=project)
        save_context(bundle, out_file)
    except (ContextError, OSError) as exc:
        _fail(f"io-failure: {exc}")
    click.echo(f"{len(bundle.functions)} functions, {len(bundle.call_edges)} call edges -> {out_file}")


@main.command("validate-schema")
@click.argument("kind", type=click.Choice(KINDS))
@click.argument("files", nargs=-1, required=True, type=click.Path(path_type=Path, exists=True, dir_okay=False))
def cmd_validate_schema(kind: str, files: tuple[Path, ...]) -> None:
    """Check serialized artifacts against a schema; prints each violation path."""
    bad = 0
    for path in files:
        try:
            res = validate_schema(path.read_text(encoding="utf-8"), kind)
        except MalformedDocument as exc:
            click.echo(f"{path}: $: {exc}")
            bad += 1
            continue
        for v in res.violations:
            click.echo(f"{path}: {v.path}: {v.reason}")
        bad += not res.ok
    sys.exit(EXIT_FATAL if bad else EXIT_OK)


@main.command("scenario")
@click.argument("names", nargs=-1)
@click.option("--check/--print", "check", default=True, help="Compare with the golden report, or print the report.")
def cmd_scenario(names: tuple[str, ...], check: bool) -> None:
    """Run shipped scripted scenarios (all when no name is given)."""
    from .scenarios import list_scenarios, load_scenario

    failed = 0
    for name in names or list_scenarios():
        sc = load_scenario(name)
        text = sc.render()
        if not check:
            click.echo(text, nl=False)
            continue
        same = sc.golden.is_file() and sc.golden.read_text(encoding="utf-8") == text
        click.echo(f"{'PASS' if same else 'FAIL'} {sc.name}")
        failed += not same
    sys.exit(EXIT_FATAL if failed else EXIT_OK)


if __name__ == "__main__":
    main()
