"""Operator surface: ingest, link, index, query, and eval subcommands.

Workspace model: each command stages its artifacts in a directory and later
commands read them back, so a full run is

    gridtext ingest -w ws --tables t.jsonl --passages p.jsonl
    gridtext link -w ws
    gridtext index -w ws
    gridtext query -w ws -q "..." -k 10
    gridtext eval -w ws --qa qa.jsonl --ks 2,5,10

Exit codes: 0 ok, 1 usage, 2 data error, 3 remote-service error,
4 acceptance violation.
"""

from __future__ import annotations

import dataclasses
import json
import logging
import sys
from pathlib import Path

import click

from . import evaluation, workspace
from .errors import (
    AcceptanceViolation,
    GridTextError,
    TransportError,
)
from .pipeline import PipelineConfig, run_query

logger = logging.getLogger(__name__)


def _load_workspace_config(ws: Path) -> PipelineConfig:
    config = workspace.read_config(ws).with_env_overrides()
    _notice_stand_ins(config)
    return config


def _notice_stand_ins(config: PipelineConfig) -> None:
    if not config.embedder.endpoint:
        click.echo("notice: no embed endpoint configured; using the deterministic embedder", err=True)
    if not config.refiner.endpoint and config.refinement_enabled:
        click.echo("notice: no chat endpoint configured; using the rule-oracle refiner", err=True)


@click.group()
@click.option("--verbose", is_flag=True, help="Enable debug logging.")
def cli(verbose: bool) -> None:
    logging.basicConfig(level=logging.DEBUG if verbose else logging.WARNING)


@cli.command("ingest")
@click.option("--tables", "tables_file", required=True, type=click.Path(exists=True, path_type=Path))
@click.option("--passages", "passages_file", required=True, type=click.Path(exists=True, path_type=Path))
@click.option("-w", "--workspace", "ws", required=True, type=click.Path(path_type=Path))
@click.option("--config", "config_path", type=click.Path(exists=True, path_type=Path), default=None)
def cmd_ingest(tables_file: Path, passages_file: Path, ws: Path, config_path: Path | None) -> None:
    """Load corpus files, segment tables, and initialize the workspace."""
    config = PipelineConfig.load(config_path) if config_path else PipelineConfig()
    config = config.with_env_overrides()
    corpus = workspace.do_ingest(tables_file, passages_file, ws, config)
    click.echo(
        f"ingested {len(corpus.tables)} tables, {len(corpus.passages)} passages, "
        f"{len(corpus.segments)} segments -> {ws}"
    )


@cli.command("link")
@click.option("-w", "--workspace", "ws", required=True, type=click.Path(path_type=Path))
def cmd_link(ws: Path) -> None:
    """Run early fusion: build and persist the offline data graph."""
    graph = workspace.do_link(ws)
    click.echo(f"linked data graph: {graph.num_nodes} nodes, {graph.num_edges} edges")


@cli.command("index")
@click.option("-w", "--workspace", "ws", required=True, type=click.Path(path_type=Path))
def cmd_index(ws: Path) -> None:
    """Embed data-graph edges and node collections into on-disk indexes."""
    config = _load_workspace_config(ws)
    workspace.write_config(ws, config)
    workspace.do_index(ws)
    click.echo(f"indexes written to {ws}")


@cli.command("query")
@click.option("-w", "--workspace", "ws", required=True, type=click.Path(path_type=Path))
@click.option("-q", "--question", required=True)
@click.option("-k", "top_k", type=int, default=None, help="Output list size (defaults to config).")
@click.option("--trace-out", type=click.Path(path_type=Path), default=None)
def cmd_query(ws: Path, question: str, top_k: int | None, trace_out: Path | None) -> None:
    """Run the full pipeline for one question and print ranked edges."""
    _load_workspace_config(ws)
    state = workspace.load_state(ws)
    if top_k is not None:
        state = dataclasses.replace(
            state, config=dataclasses.replace(state.config, output_k=top_k)
        )
    result = run_query(state, question)
    if not result.ranked:
        click.echo("no candidates")
        return
    click.echo(f"{'rank':<5}{'score':>12}  {'stage':<12}{'segment':<28}passage")
    for rank, edge in enumerate(result.ranked, start=1):
        stage = result.provenance.get(edge.key, "retrieval")
        click.echo(f"{rank:<5}{edge.score:>12.4f}  {stage:<12}{edge.segment.id:<28}{edge.passage.id}")
    for verdict in result.trace.get("verdicts", []):
        click.echo(
            f"verdict {verdict['center']}: kept={len(verdict['kept'])} "
            f"added_rows={len(verdict['added_rows'])} status={verdict['parse_status']}"
        )
    if trace_out is not None:
        workspace.atomic_write_text(
            trace_out, json.dumps(result.trace, ensure_ascii=False, sort_keys=True) + "\n"
        )


@cli.command("eval")
@click.option("-w", "--workspace", "ws", required=True, type=click.Path(path_type=Path))
@click.option("--qa", "qa_file", required=True, type=click.Path(exists=True, path_type=Path))
@click.option("--ks", default="2,5,10,20,50", show_default=True)
@click.option("--expansion/--no-expansion", "expansion", default=None, help="Override the expansion toggle.")
@click.option("--refinement/--no-refinement", "refinement", default=None, help="Override the refinement toggle.")
@click.option("--report-out", type=click.Path(path_type=Path), default=None)
@click.option("--trace-file", type=click.Path(path_type=Path), default=None)
def cmd_eval(
    ws: Path,
    qa_file: Path,
    ks: str,
    expansion: bool | None,
    refinement: bool | None,
    report_out: Path | None,
    trace_file: Path | None,
) -> None:
    """Evaluate a QA file against the workspace; write report and trace files."""
    _load_workspace_config(ws)
    state = workspace.load_state(ws)
    config = state.config
    if expansion is not None:
        config = dataclasses.replace(config, expansion_enabled=expansion)
    if refinement is not None:
        config = dataclasses.replace(config, refinement_enabled=refinement)
    state = dataclasses.replace(state, config=config)

    try:
        k_values = [int(part) for part in ks.split(",") if part.strip()]
    except ValueError:
        raise click.UsageError(f"--ks must be comma-separated integers, got {ks!r}")
    pairs = evaluation.load_qa_pairs(qa_file)
    report = evaluation.run_eval(
        lambda q: run_query(state, q),
        pairs,
        k_values,
        corpus_for=lambda result: result.corpus,
        hits_budget=config.hits_budget,
    )

    report_path = report_out or ws / "report.json"
    trace_path = trace_file or ws / "trace.jsonl"
    workspace.atomic_write_text(
        report_path,
        json.dumps(report.to_json_dict(), ensure_ascii=False, sort_keys=True, indent=2) + "\n",
    )
    trace_lines = [
        json.dumps(row, ensure_ascii=False, sort_keys=True) for row in report.per_query
    ]
    workspace.atomic_write_text(trace_path, "\n".join(trace_lines) + "\n")

    for k in sorted(report.ar_at):
        click.echo(f"AR@{k}: {report.ar_at[k]:.4f}   nDCG@{k}: {report.ndcg_at[k]:.4f}")
    click.echo(f"Hits@{config.hits_budget}: {report.hits_4k:.4f}   failures: {report.failures}")
    click.echo(f"report -> {report_path}; trace -> {trace_path}")

    _check_thresholds(report, config)


def _check_thresholds(report: evaluation.EvalReport, config: PipelineConfig) -> None:
    violations = []
    for name, threshold in sorted(config.acceptance_thresholds.items()):
        metric, _, k = name.partition("@")
        actual: float | None
        if metric == "ar" and k:
            actual = report.ar_at.get(int(k))
        elif metric == "ndcg" and k:
            actual = report.ndcg_at.get(int(k))
        elif metric == "hits":
            actual = report.hits_4k
        else:
            raise click.UsageError(f"unknown acceptance threshold {name!r}")
        if actual is None or actual < threshold:
            violations.append(f"{name}: {actual} < {threshold}")
    if violations:
        raise AcceptanceViolation("; ".join(violations))


def main(argv: list[str] | None = None) -> int:
    """Entry point with the documented exit-code contract."""
    try:
        cli.main(args=argv, standalone_mode=False)
        return 0
    except click.exceptions.Exit as exc:
        return int(exc.exit_code)
    except click.exceptions.Abort:
        return 1
    except click.UsageError as exc:
        click.echo(f"usage error: {exc.format_message()}", err=True)
        return 1
    except TransportError as exc:
        click.echo(f"remote service error: {exc}", err=True)
        return 3
    except AcceptanceViolation as exc:
        click.echo(f"acceptance violation: {exc}", err=True)
        return 4
    except GridTextError as exc:
        click.echo(f"error: {exc}", err=True)
        return 2
    except OSError as exc:
        click.echo(f"error: {exc}", err=True)
        return 2


if __name__ == "__main__":
    sys.exit(main())
