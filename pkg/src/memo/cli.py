"""Command-line surface: batch episode runs, corpus ingest, offline
clustering, retrieval dry-runs, held-out evaluation, and the HTTP service.

Every run embeds the resolved config in its logs, and runs against the
scripted backend are bit-reproducible.
"""

from __future__ import annotations

import json
import os
import sys
from pathlib import Path

import click
import yaml

from . import cluster as cluster_mod
from . import dsl, feedback, policy, simenv
from .config import MemoConfig
from .embedding import HashingEmbedder, RemoteEmbedder, embed_key
from .modelclient import RemoteModel, ScriptedModel
from .skillbook import (
    RetrievalQuery,
    Skillbook,
    SkillbookError,
    TemplateEntry,
    retrieve_with_config,
)

FIXTURE_DIR = Path(__file__).parent / "assets" / "fixtures"
SUITE_DIR = Path(__file__).parent / "assets" / "suites"


def _load_config(path) -> MemoConfig:
    return MemoConfig.load(path) if path else MemoConfig()


def _make_embedder(config: MemoConfig):
    url = os.environ.get("MEMO_EMBED_URL")
    if url:
        return RemoteEmbedder(url)
    return HashingEmbedder(config.embedding_dim)


def _make_model():
    if os.environ.get("MEMO_MODEL_URL"):
        return RemoteModel()
    return ScriptedModel.from_files(sorted(FIXTURE_DIR.glob("*.yaml")))


def _open_book(path, embedder) -> Skillbook:
    path = Path(path)
    if path.exists():
        return Skillbook.load(path, expected_embedder_id=embedder.embedder_id)
    return Skillbook(embedder.dim, embedder.embedder_id, path)


class StdinTeacher:
    """Interactive teacher for terminal runs: asks for a correction after
    each failed attempt; empty input means no feedback."""

    def wants_interrupt(self) -> bool:
        return False

    def verdict(self, subtask_name, computed_ok):
        return computed_ok

    def feedback(self, subtask_name, trace, program, subtask_ok):
        click.echo(f'subtask "{subtask_name}" failed; enter feedback (empty to skip):')
        line = sys.stdin.readline().strip()
        return line or None


@click.group()
def main():
    """Retrieval-augmented manipulation policy toolkit."""


@main.command()
@click.option("--task", "task_name", required=True)
@click.option("--skillbook", "book_path", required=True, type=click.Path())
@click.option("--no-retrieval", is_flag=True, help="ablation: skip skillbook retrieval")
@click.option("--teacher", type=click.Choice(["scripted", "interactive"]), default="scripted")
@click.option("--trials", default=1, show_default=True)
@click.option("--config", "config_path", type=click.Path(exists=True))
@click.option("--log-dir", type=click.Path(), help="episode log directory (default: <skillbook>.logs)")
def run(task_name, book_path, no_retrieval, teacher, trials, config_path, log_dir):
    """Run N trials of one task and report the success rate."""
    config = _load_config(config_path)
    try:
        spec = simenv.find_task(task_name)
    except simenv.SimError:
        click.echo(f"unknown task {task_name!r}; available tasks:")
        for name in simenv.list_tasks():
            click.echo(f"  {name}")
        sys.exit(2)
    embedder = _make_embedder(config)
    try:
        book = _open_book(book_path, embedder)
    except SkillbookError as exc:
        raise click.ClickException(f"skillbook load failed: {exc}")
    model = _make_model()
    log_root = Path(log_dir) if log_dir else Path(str(book_path) + ".logs")
    log_root.mkdir(parents=True, exist_ok=True)

    successes = 0
    feedback_total = 0
    for trial in range(trials):
        if teacher == "interactive":
            t = StdinTeacher()
        else:
            t = simenv.ScriptedTeacher(spec.teacher)
        result = policy.run_episode(
            spec, book, model, embedder, teacher=t, config=config,
            no_retrieval=no_retrieval,
        )
        log_path = log_root / f"{spec.name.replace(' ', '_')}.trial{trial + 1}.json"
        log_path.write_text(json.dumps(result.to_json(), indent=2, sort_keys=True) + "\n")
        if result.outcome == "success":
            successes += 1
        feedback_total += result.feedback_count
    click.echo(f"{successes}/{trials}, avg feedback {feedback_total / trials:.1f}")


@main.command()
@click.option("--corpus", "corpus_path", required=True, type=click.Path(exists=True))
@click.option("--skillbook", "book_path", required=True, type=click.Path())
@click.option("--config", "config_path", type=click.Path(exists=True))
def ingest(corpus_path, book_path, config_path):
    """Replay a recorded feedback corpus into the skillbook."""
    config = _load_config(config_path)
    embedder = _make_embedder(config)
    try:
        book = _open_book(book_path, embedder)
    except SkillbookError as exc:
        raise click.ClickException(f"skillbook load failed: {exc}")
    report = feedback.ingest_corpus(
        corpus_path, book, embedder, _make_model(), config
    )
    click.echo(json.dumps(report.to_dict(), sort_keys=True))


@main.command()
@click.option("--skillbook", "book_path", required=True, type=click.Path(exists=True))
@click.option("--config", "config_path", type=click.Path(exists=True))
@click.option("--report", "report_path", type=click.Path(), help="cluster-report JSON file")
def cluster(book_path, config_path, report_path):
    """One offline clustering/compression pass over the skillbook."""
    config = _load_config(config_path)
    embedder = _make_embedder(config)
    try:
        book = Skillbook.load(book_path, expected_embedder_id=embedder.embedder_id)
    except SkillbookError as exc:
        raise click.ClickException(f"skillbook load failed: {exc}")
    report = cluster_mod.run_offline(book, _make_model(), config)
    out = json.dumps(report.to_dict(), indent=2, sort_keys=True)
    target = Path(report_path) if report_path else Path(str(book_path) + ".cluster-report.json")
    target.write_text(out + "\n")
    click.echo(out)


def _parse_query(query: str):
    if "|" in query:
        action, _, objects = query.partition("|")
    else:
        action, objects = query, ""
    labels = tuple(o.strip() for o in objects.split(",") if o.strip())
    return action.strip(), labels


@main.command()
@click.option("--skillbook", "book_path", required=True, type=click.Path(exists=True))
@click.option("--query", "query_text", help='retrieval dry-run, "<action>|<obj1>,<obj2>"')
@click.option("--config", "config_path", type=click.Path(exists=True))
def inspect(book_path, query_text, config_path):
    """List entries, or rank them against a query without running a task."""
    config = _load_config(config_path)
    embedder = _make_embedder(config)
    try:
        book = Skillbook.load(book_path, expected_embedder_id=embedder.embedder_id)
    except SkillbookError as exc:
        raise click.ClickException(f"skillbook load failed: {exc}")
    view = book.snapshot()
    if not query_text:
        click.echo(json.dumps(view.stats(), sort_keys=True))
        for e in view.entries():
            click.echo(json.dumps(_entry_summary(e), sort_keys=True))
        return
    action, labels = _parse_query(query_text)
    key = embed_key(embedder, action, labels)
    result = retrieve_with_config(book, RetrievalQuery.from_key(key), config)
    click.echo(f"generation {result.generation}")
    for eid, score in result.ranked:
        summary = _entry_summary(view.get(eid))
        click.echo(f"{score:.6f}  #{eid}  {summary['kind']}  {summary['text']}")
    for gid in result.globals:
        summary = _entry_summary(view.get(gid))
        click.echo(f"global    #{gid}  {summary['text']}")


def _entry_summary(e) -> dict:
    if isinstance(e.payload, TemplateEntry):
        text = dsl.render_template(e.payload.template).splitlines()[0]
    else:
        text = e.payload.text
    return {
        "id": e.id,
        "kind": e.payload.type,
        "active": e.active,
        "task": e.provenance.task_name,
        "text": text,
    }


@main.command()
@click.option("--suite", "suite_path", required=True, help="suite YAML path or packaged suite name")
@click.option("--skillbook", "book_path", required=True, type=click.Path())
@click.option("--trials", default=1, show_default=True)
@click.option("--no-retrieval", is_flag=True)
@click.option("--config", "config_path", type=click.Path(exists=True))
def eval(suite_path, book_path, trials, no_retrieval, config_path):
    """Zero-shot evaluation over a task suite; per-task success table."""
    config = _load_config(config_path)
    path = Path(suite_path)
    if not path.exists():
        path = SUITE_DIR / f"{suite_path}.yaml"
    if not path.exists():
        raise click.ClickException(f"no such suite: {suite_path}")
    suite = yaml.safe_load(path.read_text())
    embedder = _make_embedder(config)
    try:
        book = _open_book(book_path, embedder)
    except SkillbookError as exc:
        raise click.ClickException(f"skillbook load failed: {exc}")
    model = _make_model()
    total = 0
    click.echo(f"suite {suite['name']}: {len(suite['tasks'])} tasks, {trials} trial(s) each")
    for task_name in suite["tasks"]:
        spec = simenv.find_task(task_name)
        wins = 0
        for _trial in range(trials):
            result = policy.run_episode(
                spec, book, model, embedder, config=config, no_retrieval=no_retrieval
            )
            if result.outcome == "success":
                wins += 1
        total += wins
        click.echo(f"  {task_name:40s} {wins}/{trials}")
    click.echo(f"total {total}/{len(suite['tasks']) * trials}")


@main.command()
@click.option("--skillbook", "book_path", required=True, type=click.Path())
@click.option("--host", default="127.0.0.1", show_default=True)
@click.option("--port", default=8000, show_default=True)
@click.option("--config", "config_path", type=click.Path(exists=True))
def serve(book_path, host, port, config_path):
    """Run the HTTP service for the web console."""
    import uvicorn

    from .service import create_app

    config = _load_config(config_path)
    embedder = _make_embedder(config)
    book = _open_book(book_path, embedder)
    app = create_app(book, _make_model(), embedder, config)
    uvicorn.run(app, host=host, port=port)


if __name__ == "__main__":
    main()
