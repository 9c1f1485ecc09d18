from pathlib import Path

import pytest

from voxeval.corpus import aggregate_split, load_corpus
from voxeval.net import ProviderError
from voxeval.prompting import PromptConfig
from voxeval.providers import EchoOracle, ResponseCache
from voxeval.retrieval import HashedTrigramEmbedding, build_index
from voxeval.runner import (
    STATUS_COMPLETE,
    STATUS_FAILED,
    evaluate_run_dir,
    execute_run,
    load_manifest,
    load_responses,
)


def load_pairs(corpus_dir, split):
    games, _ = load_corpus(corpus_dir, split)
    return aggregate_split(games, with_world=False)


def run_args(corpus_dir, tmp_path, tag=""):
    train = load_pairs(corpus_dir, "train")
    test = load_pairs(corpus_dir, "test")
    embedder = HashedTrigramEmbedding()
    index = build_index(embedder, train)
    return {
        "pairs": test,
        "split": "test",
        "provider": EchoOracle(),
        "model_id": "echo",
        "prompt_config": PromptConfig(),
        "index": index,
        "embedder": embedder,
        "cache": ResponseCache(tmp_path / f"cache{tag}"),
        "runs_root": tmp_path / f"runs{tag}",
    }


class FlakyEcho(EchoOracle):
    """Echo mock that starts failing after a budget of successes."""

    def __init__(self, succeed_first: int) -> None:
        self.remaining = succeed_first

    def complete(self, request):
        if self.remaining <= 0:
            raise ProviderError("simulated outage")
        self.remaining -= 1
        return super().complete(request)


def dir_snapshot(run_dir: Path) -> dict[str, bytes]:
    """All run files except the wallclock sidecar."""
    return {
        str(p.relative_to(run_dir)): p.read_bytes()
        for p in sorted(run_dir.rglob("*"))
        if p.is_file() and p.name != "meta.json"
    }


class TestExecuteRun:
    def test_completes_and_persists(self, corpus_dir, tmp_path):
        args = run_args(corpus_dir, tmp_path)
        manifest, run_dir = execute_run(**args)
        assert manifest.complete
        assert len(manifest.turns) == len(args["pairs"])
        assert (run_dir / "manifest.json").exists()
        assert len(list((run_dir / "prompts").glob("*.txt"))) == len(args["pairs"])
        assert len(list((run_dir / "responses").glob("*.json"))) == len(args["pairs"])

    def test_run_id_deterministic(self, corpus_dir, tmp_path):
        a, _ = execute_run(**run_args(corpus_dir, tmp_path, "a"))
        b, _ = execute_run(**run_args(corpus_dir, tmp_path, "b"))
        assert a.run_id == b.run_id

    def test_run_id_changes_with_config(self, corpus_dir, tmp_path):
        args = run_args(corpus_dir, tmp_path)
        a, _ = execute_run(**args)
        args["prompt_config"] = PromptConfig(k_examples=1)
        b, _ = execute_run(**args)
        assert a.run_id != b.run_id

    def test_failures_recorded_without_abort(self, corpus_dir, tmp_path):
        args = run_args(corpus_dir, tmp_path)
        args["provider"] = FlakyEcho(succeed_first=3)
        manifest, run_dir = execute_run(**args)
        assert not manifest.complete
        statuses = [t.status for t in manifest.turns]
        assert statuses.count(STATUS_COMPLETE) == 3
        assert statuses.count(STATUS_FAILED) == len(statuses) - 3
        failed = next(t for t in manifest.turns if t.status == STATUS_FAILED)
        assert "simulated outage" in failed.error

    def test_kill_and_rerun_matches_uninterrupted(self, corpus_dir, tmp_path):
        clean_args = run_args(corpus_dir, tmp_path, "clean")
        _, clean_dir = execute_run(**clean_args)

        resumed_args = run_args(corpus_dir, tmp_path, "resumed")
        resumed_args["provider"] = FlakyEcho(succeed_first=4)
        partial, _ = execute_run(**resumed_args)
        assert not partial.complete

        resumed_args["provider"] = EchoOracle()
        manifest, resumed_dir = execute_run(**resumed_args)
        assert manifest.complete
        assert dir_snapshot(resumed_dir) == dir_snapshot(clean_dir)

    def test_resume_skips_completed_turns(self, corpus_dir, tmp_path):
        args = run_args(corpus_dir, tmp_path)
        execute_run(**args)

        class Exploding(EchoOracle):
            def complete(self, request):
                raise AssertionError("should not be called on resume")

        args["provider"] = Exploding()
        manifest, _ = execute_run(**args)
        assert manifest.complete

    def test_parallel_equals_serial(self, corpus_dir, tmp_path):
        serial_args = run_args(corpus_dir, tmp_path, "s")
        _, serial_dir = execute_run(**serial_args)
        parallel_args = run_args(corpus_dir, tmp_path, "p")
        parallel_args["parallelism"] = 4
        _, parallel_dir = execute_run(**parallel_args)
        assert dir_snapshot(serial_dir) == dir_snapshot(parallel_dir)

    def test_retrieval_required_when_k_positive(self, corpus_dir, tmp_path):
        args = run_args(corpus_dir, tmp_path)
        args["index"] = None
        with pytest.raises(ValueError):
            execute_run(**args)

    def test_k_zero_needs_no_index(self, corpus_dir, tmp_path):
        args = run_args(corpus_dir, tmp_path)
        args["index"] = None
        args["embedder"] = None
        args["prompt_config"] = PromptConfig(k_examples=0)
        manifest, _ = execute_run(**args)
        assert manifest.complete


class TestRunArtifacts:
    def test_load_responses(self, corpus_dir, tmp_path):
        args = run_args(corpus_dir, tmp_path)
        manifest, run_dir = execute_run(**args)
        responses = load_responses(run_dir)
        assert len(responses) == len(manifest.turns)
        assert all(text is not None for text in responses.values())

    def test_failed_turn_maps_to_none(self, corpus_dir, tmp_path):
        args = run_args(corpus_dir, tmp_path)
        args["provider"] = FlakyEcho(succeed_first=1)
        _, run_dir = execute_run(**args)
        responses = load_responses(run_dir)
        assert sum(1 for t in responses.values() if t is None) == len(responses) - 1

    def test_evaluate_run_dir_writes_report(self, corpus_dir, tmp_path):
        args = run_args(corpus_dir, tmp_path)
        _, run_dir = execute_run(**args)
        report = evaluate_run_dir(run_dir, args["pairs"])
        assert report.overall.f1 == 1.0
        assert (run_dir / "report.json").exists()

    def test_evaluate_rejects_wrong_corpus(self, corpus_dir, tmp_path):
        args = run_args(corpus_dir, tmp_path)
        _, run_dir = execute_run(**args)
        with pytest.raises(ValueError):
            evaluate_run_dir(run_dir, args["pairs"][:1])

    def test_manifest_round_trip(self, corpus_dir, tmp_path):
        args = run_args(corpus_dir, tmp_path)
        manifest, run_dir = execute_run(**args)
        assert load_manifest(run_dir) == manifest

    def test_prompt_snapshot_matches_config(self, corpus_dir, tmp_path):
        args = run_args(corpus_dir, tmp_path)
        args["prompt_config"] = PromptConfig(include_env=False)
        _, run_dir = execute_run(**args)
        prompt = (run_dir / "prompts" / "00000.txt").read_text(encoding="utf-8")
        assert "11x9x11" not in prompt
        assert "System Info" in prompt
