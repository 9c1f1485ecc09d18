"""Command-line front end over the conversion/run/eval pipeline.

Exit codes: 0 on success, 1 when the command finished but some work
failed (skipped records, failed turns, missing responses), 2 on bad
arguments or configuration.
"""
from __future__ import annotations

import json
import os
import sys
from collections import defaultdict
from pathlib import Path

import click

from .analysis import bundled_lexicons, category_stats, load_lexicon_dir
from .corpus import SPLITS, aggregate_split, load_corpus, split_stats, write_corpus
from .importer import import_raw_corpus
from .net import ProviderError
from .prompting import PromptConfig, ablation_configs, config_label
from .providers import (
    CompletionProvider,
    EchoOracle,
    NearestNeighborBaseline,
    RemoteProvider,
    RemoteProviderConfig,
    ResponseCache,
)
from .retrieval import (
    EmbeddingCache,
    EmbeddingProvider,
    HashedTrigramEmbedding,
    RemoteEmbedding,
    SentenceTransformerEmbedding,
    build_index,
    load_index,
    save_index,
)
from .runner import evaluate_run_dir, execute_run, load_manifest
from .world import detect_builder_mistakes

_FORMATS = click.Choice(["json", "table"])


def _print_table(rows: list[dict], columns: list[str]) -> None:
    def fmt(value) -> str:
        if value is None:
            return "N/A"
        if isinstance(value, float):
            return f"{value:.4f}"
        return str(value)

    cells = [[fmt(row.get(col)) for col in columns] for row in rows]
    widths = [
        max(len(col), *(len(row[i]) for row in cells)) if cells else len(col)
        for i, col in enumerate(columns)
    ]
    click.echo("  ".join(col.ljust(widths[i]) for i, col in enumerate(columns)).rstrip())
    click.echo("  ".join("-" * widths[i] for i in range(len(columns))))
    for row in cells:
        click.echo("  ".join(row[i].ljust(widths[i]) for i in range(len(columns))).rstrip())


def _emit(data, output_format: str, rows: list[dict] | None = None, columns: list[str] | None = None):
    if output_format == "json":
        click.echo(json.dumps(data, indent=2, sort_keys=True))
    else:
        _print_table(rows if rows is not None else [data], columns or list(data))


def _load_pairs(corpus: str, split: str):
    games, diagnostics = load_corpus(corpus, split)
    if not games:
        raise click.UsageError(f"no {split} games found in {corpus}")
    for diag in diagnostics:
        click.echo(f"warning: {corpus}: {diag.message}", err=True)
    return aggregate_split(games, with_world=False), diagnostics


_SECTION_NAMES = {
    "system": "include_system",
    "environment": "include_env",
    "env": "include_env",
    "task": "include_task",
    "other": "include_other",
}


def _parse_sections(value: str) -> dict[str, bool]:
    flags = {"include_system": False, "include_env": False, "include_task": False,
             "include_other": False}
    for token in value.split(","):
        token = token.strip().lower()
        if not token:
            continue
        if token in ("context", "footer"):  # always rendered; body size follows --k
            continue
        if token not in _SECTION_NAMES:
            raise click.BadParameter(
                f"unknown section {token!r}; choose from system, environment, task, "
                "context, other"
            )
        flags[_SECTION_NAMES[token]] = True
    return flags


def _make_embedder(name: str) -> EmbeddingProvider:
    if name == "lexical":
        return HashedTrigramEmbedding()
    if name == "st":
        return SentenceTransformerEmbedding()
    path = Path(name)
    if path.is_file():
        with open(path, encoding="utf-8") as handle:
            return RemoteEmbedding(**json.load(handle))
    raise click.UsageError(
        f"unknown embedding provider {name!r}; use 'lexical', 'st', or a config file"
    )


def _make_provider(name: str, model: str | None, index, embedder) -> tuple[CompletionProvider, str]:
    if name == "echo":
        return EchoOracle(), model or "echo-oracle"
    if name == "nearest":
        if index is None or embedder is None:
            raise click.UsageError("--provider nearest requires --index")
        return NearestNeighborBaseline(index, embedder), model or "nearest-neighbor"
    path = Path(name)
    if path.is_file():
        try:
            config = RemoteProviderConfig.from_file(path)
        except (ProviderError, json.JSONDecodeError, OSError) as exc:
            raise click.UsageError(f"bad provider config {name}: {exc}")
        model_id = model or config.model_id
        if not model_id:
            raise click.UsageError("remote provider needs --model or model_id in the config")
        return RemoteProvider(config), model_id
    raise click.UsageError(
        f"unknown provider {name!r}; use 'echo', 'nearest', or a config file"
    )


def _default_parallelism(provider: str) -> int:
    # Mocks are free to fan out; remote endpoints stay at a polite 4.
    if provider in ("echo", "nearest"):
        return os.cpu_count() or 1
    return 4


corpus_option = click.option("--corpus", required=True, help="Normalized corpus file or directory.")
split_option = click.option("--split", default="test", type=click.Choice(list(SPLITS)),
                            show_default=True)
format_option = click.option("--format", "output_format", type=_FORMATS, default="table",
                             show_default=True)
seed_option = click.option("--seed", type=int, default=0, show_default=True,
                           help="Reserved; current components are deterministic.")


@click.group()
@click.version_option(package_name="voxeval")
def main() -> None:
    """Evaluate instruction-to-action-code models on building dialogues."""


@main.command()
@click.argument("raw_path", type=click.Path(exists=True))
@click.argument("out_path", type=click.Path())
@click.option("--splits-file", type=click.Path(exists=True),
              help="JSON mapping split names to game id lists (raw imports only).")
@format_option
def convert(raw_path: str, out_path: str, splits_file: str | None, output_format: str) -> None:
    """Convert a corpus (raw game logs or normalized JSONL) into per-split JSONL."""
    source = Path(raw_path)
    normalized = source.suffix == ".jsonl" or (
        source.is_dir() and any((source / f"{s}.jsonl").exists() for s in SPLITS)
    )
    diagnostics = []
    games = []
    if normalized:
        for split in SPLITS:
            try:
                split_games, diags = load_corpus(source, split)
            except FileNotFoundError:
                continue
            games.extend(split_games)
            diagnostics.extend(diags)
    else:
        games, diagnostics = import_raw_corpus(source, splits_file)
    if not games:
        raise click.UsageError(f"no games recovered from {raw_path}")

    out = Path(out_path)
    out.mkdir(parents=True, exist_ok=True)
    by_split = defaultdict(list)
    for game in games:
        by_split[game.split].append(game)
    rows = []
    for split in SPLITS:
        write_corpus(by_split[split], out / f"{split}.jsonl")
        stats = split_stats(by_split[split], split)
        rows.append({"split": split, "games": stats.game_count, "pairs": stats.pair_count})
    for diag in diagnostics:
        click.echo(f"warning: {diag.message}", err=True)
    _emit({"splits": rows, "skipped": len(diagnostics)}, output_format,
          rows=rows, columns=["split", "games", "pairs"])
    if diagnostics:
        sys.exit(1)


@main.command()
@corpus_option
@click.option("--split", default="train", type=click.Choice(list(SPLITS)), show_default=True)
@click.option("--embedding-provider", default="lexical", show_default=True,
              help="'lexical', 'st', or a remote-embedding config file.")
@click.option("--out", "out_path", required=True, help="Where to write the index file.")
@click.option("--embedding-cache", type=click.Path(), help="JSONL vector cache.")
@click.option("--parallel", default=1, show_default=True)
@seed_option
def index(corpus: str, split: str, embedding_provider: str, out_path: str,
          embedding_cache: str | None, parallel: int, seed: int) -> None:
    """Embed a split's instructions into a retrieval index."""
    pairs, _ = _load_pairs(corpus, split)
    embedder = _make_embedder(embedding_provider)
    cache = EmbeddingCache(embedding_cache) if embedding_cache else None
    built = build_index(embedder, pairs, parallelism=parallel, cache=cache)
    save_index(built, out_path)
    click.echo(f"indexed {len(built)} instructions ({embedder.name}) -> {out_path}")


def _execute_with_config(pairs, split, provider, model_id, config, idx, embedder,
                         cache_dir, runs_dir, parallel):
    cache = ResponseCache(cache_dir)
    return execute_run(
        pairs,
        split=split,
        provider=provider,
        model_id=model_id,
        prompt_config=config,
        index=idx,
        embedder=embedder,
        cache=cache,
        runs_root=runs_dir,
        parallelism=parallel,
    )


@main.command()
@corpus_option
@split_option
@click.option("--provider", default="echo", show_default=True,
              help="'echo', 'nearest', or a remote-provider config file.")
@click.option("--model", default=None, help="Model identifier sent to the provider.")
@click.option("--k", default=3, show_default=True, help="In-context examples per prompt.")
@click.option("--prompt-sections", default="system,environment,task,context,other",
              show_default=True, help="Comma-separated sections to include.")
@click.option("--template-set", default="default", show_default=True)
@click.option("--index", "index_path", type=click.Path(exists=True),
              help="Retrieval index built by the index command (needed when k > 0).")
@click.option("--embedding-provider", default="lexical", show_default=True)
@click.option("--cache-dir", default="cache", show_default=True)
@click.option("--runs-dir", default="runs", show_default=True)
@click.option("--parallel", type=int, default=None,
              help="Concurrent turns [default: CPU count for mocks, 4 remote].")
@seed_option
@format_option
def run(corpus: str, split: str, provider: str, model: str | None, k: int,
        prompt_sections: str, template_set: str, index_path: str | None,
        embedding_provider: str, cache_dir: str, runs_dir: str,
        parallel: int | None, seed: int, output_format: str) -> None:
    """Prompt a provider on every turn of a split, resumably."""
    if parallel is None:
        parallel = _default_parallelism(provider)
    pairs, _ = _load_pairs(corpus, split)
    config = PromptConfig(**_parse_sections(prompt_sections), k_examples=k,
                          template_set=template_set)
    idx = embedder = None
    if k > 0:
        if index_path is None:
            raise click.UsageError("--k > 0 requires --index")
        idx = load_index(index_path)
        embedder = _make_embedder(embedding_provider)
        if embedder.name != idx.provider_name:
            raise click.UsageError(
                f"index was built with {idx.provider_name!r} but "
                f"--embedding-provider gives {embedder.name!r}"
            )
    completion_provider, model_id = _make_provider(provider, model, idx, embedder)
    manifest, run_dir = _execute_with_config(
        pairs, split, completion_provider, model_id, config, idx, embedder,
        cache_dir, runs_dir, parallel,
    )
    summary = {
        "run_id": manifest.run_id,
        "run_dir": str(run_dir),
        "turns": len(manifest.turns),
        "failed": manifest.failed_count,
    }
    _emit(summary, output_format, columns=["run_id", "run_dir", "turns", "failed"])
    if not manifest.complete:
        sys.exit(1)


@main.command(name="eval")
@click.argument("run_dir", type=click.Path(exists=True, file_okay=False))
@corpus_option
@click.option("--ordered", is_flag=True,
              help="Credit predictions only while they match gold in order.")
@format_option
def eval_cmd(run_dir: str, corpus: str, ordered: bool, output_format: str) -> None:
    """Score a finished run; writes report.json into the run directory."""
    manifest = load_manifest(run_dir)
    pairs, _ = _load_pairs(corpus, manifest.split)
    report = evaluate_run_dir(run_dir, pairs, ordered=ordered)
    rows = [
        {"metric": "micro_precision", "value": report.overall.precision},
        {"metric": "micro_recall", "value": report.overall.recall},
        {"metric": "micro_f1", "value": report.overall.f1},
        {"metric": "net_gold_f1", "value": report.variant_net_gold.f1},
        {"metric": "turns", "value": len(report.turns)},
        {"metric": "missing_responses", "value": len(report.missing)},
    ]
    _emit(report.to_dict() | {"run_id": manifest.run_id}, output_format,
          rows=rows, columns=["metric", "value"])
    if report.missing:
        sys.exit(1)


@main.command()
@click.argument("run_dir", type=click.Path(exists=True, file_okay=False))
@corpus_option
@click.option("--lexicon-dir", type=click.Path(exists=True, file_okay=False),
              help="Directory of <category>.txt files; defaults to the bundled set.")
@format_option
def analyze(run_dir: str, corpus: str, lexicon_dir: str | None, output_format: str) -> None:
    """Break a run's errors down by instruction category; flag builder mistakes."""
    manifest = load_manifest(run_dir)
    pairs, _ = _load_pairs(corpus, manifest.split)
    report = evaluate_run_dir(run_dir, pairs)
    lexicons = load_lexicon_dir(lexicon_dir) if lexicon_dir else bundled_lexicons()
    wanted = {(t.game_id, t.turn_index) for t in manifest.turns}
    scoped = [p for p in pairs if (p.game_id, p.turn_index) in wanted]
    stats = category_stats(scoped, report.turns, lexicons)
    mistakes = detect_builder_mistakes(scoped)
    rows = [
        {
            "category": s.category,
            "turns": s.turn_count,
            "share_of_turns": s.fraction_of_turns,
            "correct_fraction": s.correct_fraction,
        }
        for s in stats.values()
    ]
    data = {
        "categories": {name: s.to_dict() for name, s in stats.items()},
        "builder_mistakes": mistakes.to_dict(),
    }
    _emit(data, output_format, rows=rows,
          columns=["category", "turns", "share_of_turns", "correct_fraction"])
    if output_format == "table":
        click.echo(
            f"builder mistakes: {len(mistakes.flagged)} of {mistakes.turn_count} turns "
            f"({mistakes.flagged_fraction:.4f})"
        )


@main.command()
@corpus_option
@click.option("--split", default="dev", type=click.Choice(list(SPLITS)), show_default=True,
              help="Ablations score on the development split.")
@click.option("--provider", default="echo", show_default=True)
@click.option("--model", default=None)
@click.option("--index", "index_path", type=click.Path(exists=True))
@click.option("--embedding-provider", default="lexical", show_default=True)
@click.option("--cache-dir", default="cache", show_default=True)
@click.option("--runs-dir", default="runs", show_default=True)
@click.option("--parallel", type=int, default=None,
              help="Concurrent turns [default: CPU count for mocks, 4 remote].")
@seed_option
@format_option
def ablate(corpus: str, split: str, provider: str, model: str | None,
           index_path: str | None, embedding_provider: str, cache_dir: str,
           runs_dir: str, parallel: int | None, seed: int, output_format: str) -> None:
    """Run and score every prompt-ablation configuration."""
    if parallel is None:
        parallel = _default_parallelism(provider)
    pairs, _ = _load_pairs(corpus, split)
    configs = ablation_configs()
    needs_retrieval = any(c.k_examples > 0 for c in configs)
    idx = embedder = None
    if needs_retrieval:
        if index_path is None:
            raise click.UsageError("ablations include k > 0 rows; --index is required")
        idx = load_index(index_path)
        embedder = _make_embedder(embedding_provider)
    completion_provider, model_id = _make_provider(provider, model, idx, embedder)
    rows = []
    incomplete = 0
    for config in configs:
        manifest, run_dir = _execute_with_config(
            pairs, split, completion_provider, model_id, config,
            idx if config.k_examples > 0 else None,
            embedder if config.k_examples > 0 else None,
            cache_dir, runs_dir, parallel,
        )
        report = evaluate_run_dir(run_dir, pairs)
        incomplete += 0 if manifest.complete else 1
        rows.append({
            "configuration": config_label(config),
            "f1": report.overall.f1,
            "run_id": manifest.run_id,
        })
    _emit({"rows": rows}, output_format, rows=rows,
          columns=["configuration", "f1", "run_id"])
    if incomplete:
        sys.exit(1)


@main.command()
@click.argument("run_dirs", nargs=-1, required=True,
                type=click.Path(exists=True, file_okay=False))
@click.option("--corpus", default=None,
              help="Needed only for runs without a stored report.json.")
@format_option
def report(run_dirs: tuple[str, ...], corpus: str | None, output_format: str) -> None:
    """Compare finished runs in a model-by-F1 table."""
    rows = []
    for run_dir in run_dirs:
        manifest = load_manifest(run_dir)
        report_path = Path(run_dir) / "report.json"
        if report_path.exists():
            with open(report_path, encoding="utf-8") as handle:
                overall = json.load(handle)["overall"]
            f1, precision, recall = overall["f1"], overall["precision"], overall["recall"]
        elif corpus is not None:
            pairs, _ = _load_pairs(corpus, manifest.split)
            scored = evaluate_run_dir(run_dir, pairs)
            f1, precision, recall = (scored.overall.f1, scored.overall.precision,
                                     scored.overall.recall)
        else:
            raise click.UsageError(f"{run_dir} has no report.json; pass --corpus to score it")
        rows.append({
            "model": manifest.model_id,
            "provider": manifest.provider_name,
            "split": manifest.split,
            "precision": precision,
            "recall": recall,
            "f1": f1,
        })
    _emit({"runs": rows}, output_format, rows=rows,
          columns=["model", "provider", "split", "precision", "recall", "f1"])


if __name__ == "__main__":
    main()
