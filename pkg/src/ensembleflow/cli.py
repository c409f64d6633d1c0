"""Command-line driver: validate flows, execute runs, extract and export
timelines, and serve the HTTP API."""

from __future__ import annotations

import json
import os
import sys
from pathlib import Path

import click
import yaml

from . import scenario, timeline as tl
from .engine import run_ensemble
from .errors import EnsembleFlowError, InvalidFlow, ParseError
from .flowspec import load_flow, load_run_config
from .service import create_app
from .store import RunStore
from .util import canonical_json
from .core import validate_flow

STORE_ENV = "ENSEMBLEFLOW_STORE_ROOT"
BUDGET_ENV = "ENSEMBLEFLOW_EXTRACT_BUDGET"


def _store_root(value: str | None) -> Path:
    return Path(value or os.environ.get(STORE_ENV, "./runs"))


@click.group()
def main():
    """Continuous-coupled simulation ensembles and timeline exploration."""


@main.command()
@click.argument("flow_spec", type=click.Path(exists=True, dir_okay=False))
def validate(flow_spec):
    """Parse and validate a flow-spec file."""
    try:
        flow = load_flow(flow_spec)
    except ParseError as exc:
        click.echo(f"error: {exc}", err=True)
        sys.exit(1)
    report = validate_flow(flow, registry=scenario.build_registry())
    if report:
        for v in report:
            click.echo(str(v), err=True)
        sys.exit(1)
    click.echo(f"{flow.name}: ok ({len(flow.nodes)} models, {len(flow.edges)} edges)")


@main.command()
@click.argument("flow_spec", type=click.Path(exists=True, dir_okay=False))
@click.argument("run_config", type=click.Path(exists=True, dir_okay=False))
@click.option("--store", "store_path", default=None, help="Store root directory.")
@click.option("--seed", type=int, default=None, help="Override the global seed.")
@click.option("--force", is_flag=True, help="Overwrite an existing run with the same id.")
def run(flow_spec, run_config, store_path, seed, force):
    """Execute a run config against a flow and persist the ensemble graph."""
    try:
        flow = load_flow(flow_spec)
        config = load_run_config(run_config, flow, seed_override=seed)
    except ParseError as exc:
        click.echo(f"error: {exc}", err=True)
        sys.exit(1)
    store = RunStore(_store_root(store_path))
    try:
        run_id = run_ensemble(
            config,
            store,
            scenario.build_registry(),
            overwrite=force,
            progress=lambda msg: click.echo(msg, err=True),
        )
    except InvalidFlow as exc:
        for v in exc.violations:
            click.echo(str(v), err=True)
        sys.exit(1)
    except EnsembleFlowError as exc:
        click.echo(f"error: {exc}", err=True)
        sys.exit(1)
    click.echo(run_id)


def _load_criterion(path: str) -> tl.PreferenceCriterion:
    doc = yaml.safe_load(Path(path).read_text(encoding="utf-8"))
    return tl.criterion_from_dict(doc)


@main.command()
@click.argument("run_id")
@click.option("--criterion", "criterion_path", required=True, type=click.Path(exists=True))
@click.option("-k", type=int, default=3, show_default=True)
@click.option("--lambda", "lam", type=float, default=0.3, show_default=True)
@click.option("--beam-width", type=int, default=64, show_default=True)
@click.option("--out", "out_dir", type=click.Path(file_okay=False), default=None,
              help="Directory for timeline export files.")
@click.option("--store", "store_path", default=None)
def timelines(run_id, criterion_path, k, lam, beam_width, out_dir, store_path):
    """Extract up to K diverse timelines and export them."""
    store = RunStore(_store_root(store_path))
    try:
        graph = store.load(run_id)
    except EnsembleFlowError:
        click.echo(f"error: unknown run {run_id!r}", err=True)
        sys.exit(1)
    try:
        criterion = _load_criterion(criterion_path)
        diversity = tl.DiversityConfig(k=k, lam=lam, beam_width=beam_width)
    except (ValueError, KeyError, yaml.YAMLError) as exc:
        click.echo(f"error: bad criterion: {exc}", err=True)
        sys.exit(1)
    found = tl.extract_top_k(graph, criterion, diversity)
    if len(found) < k:
        click.echo(
            f"warning: only {len(found)} maximal timeline(s) exist, requested {k}",
            err=True,
        )
    click.echo(f"{'rank':<5}{'timeline':<18}{'score':>12}{'coverage':>10}{'nodes':>7}")
    for rank, t in enumerate(found, start=1):
        click.echo(
            f"{rank:<5}{t.timeline_id:<18}{t.score:>12.6g}{t.coverage:>10.3f}"
            f"{len(t.node_ids):>7}"
        )
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        for t in found:
            doc = tl.export_timeline(graph, t, criterion, diversity)
            path = out / f"{t.timeline_id}.json"
            path.write_text(canonical_json(doc), encoding="utf-8")
            click.echo(f"wrote {path}", err=True)


@main.command()
@click.argument("run_id")
@click.option("--criterion", "criterion_path", required=True, type=click.Path(exists=True))
@click.option("--rank", type=int, default=1, show_default=True,
              help="1-based rank of the timeline to export.")
@click.option("--lambda", "lam", type=float, default=0.3, show_default=True)
@click.option("--out", "out_path", type=click.Path(dir_okay=False), required=True)
@click.option("--store", "store_path", default=None)
def export(run_id, criterion_path, rank, lam, out_path, store_path):
    """Export the rank-th extracted timeline to a file."""
    store = RunStore(_store_root(store_path))
    try:
        graph = store.load(run_id)
    except EnsembleFlowError:
        click.echo(f"error: unknown run {run_id!r}", err=True)
        sys.exit(1)
    criterion = _load_criterion(criterion_path)
    diversity = tl.DiversityConfig(k=rank, lam=lam)
    found = tl.extract_top_k(graph, criterion, diversity)
    if len(found) < rank:
        click.echo(f"error: only {len(found)} timeline(s) exist", err=True)
        sys.exit(1)
    doc = tl.export_timeline(graph, found[rank - 1], criterion, diversity)
    Path(out_path).write_text(canonical_json(doc), encoding="utf-8")
    click.echo(out_path)


@main.command()
@click.option("--host", default="127.0.0.1", show_default=True)
@click.option("--port", type=int, default=8800, show_default=True)
@click.option("--store", "store_path", default=None)
@click.option("--budget", type=float, default=None,
              help=f"Extraction time budget in seconds (or ${BUDGET_ENV}).")
@click.option("--static-dir", type=click.Path(file_okay=False), default=None,
              help="Directory of built explorer assets to serve at /.")
def serve(host, port, store_path, budget, static_dir):
    """Serve the HTTP API (and the explorer UI when assets are present)."""
    import uvicorn

    if budget is None:
        budget = float(os.environ.get(BUDGET_ENV, "15"))
    if static_dir is None:
        candidate = Path(__file__).resolve().parents[2].parent / "frontend" / "dist"
        static_dir = candidate if candidate.is_dir() else None
    app = create_app(
        _store_root(store_path),
        extraction_budget_s=budget,
        static_dir=static_dir,
    )
    uvicorn.run(app, host=host, port=port)


@main.command("demo-files")
@click.argument("out_dir", type=click.Path(file_okay=False))
def demo_files(out_dir):
    """Copy the bundled demo flow/config files for editing."""
    from importlib import resources

    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    for name in ("demo_flow.yaml", "demo_run.yaml"):
        data = resources.files("ensembleflow").joinpath(f"data/{name}").read_text()
        (out / name).write_text(data, encoding="utf-8")
        click.echo(str(out / name))


if __name__ == "__main__":
    main()
