"""End-to-end run orchestration with on-disk, resumable state.

A run is a directory, never just memory:

    <run_dir>/
      manifest.json        identity, config, per-turn completion status
      meta.json            wallclock bookkeeping, kept out of the manifest
      prompts/NNNNN.txt    exact prompt sent for each turn
      responses/NNNNN.json completion record for each turn
      report.json          written by evaluate_run_dir

The manifest contains no wallclock values, so killing a run and rerunning
it with deterministic providers reproduces the directory byte for byte;
timestamps live in meta.json and inside each cached completion record.
"""
from __future__ import annotations

import concurrent.futures
import hashlib
import json
import logging
import os
import threading
import time
from dataclasses import dataclass, field, replace
from datetime import datetime, timezone
from pathlib import Path
from typing import Sequence

from .corpus import TurnPair
from .dsl import serialize_action
from .prompting import PromptConfig, render_prompt
from .providers import (
    CompletionProvider,
    CompletionRequest,
    ProviderError,
    ResponseCache,
    cached_complete,
)
from .retrieval import EmbeddingProvider, ExampleIndex, top_k
from .scoring import EvalReport, evaluate_run

__all__ = [
    "TurnStatus",
    "RunManifest",
    "derive_run_id",
    "execute_run",
    "load_manifest",
    "load_responses",
    "evaluate_run_dir",
]

logger = logging.getLogger(__name__)

MANIFEST_VERSION = 1

STATUS_PENDING = "pending"
STATUS_COMPLETE = "complete"
STATUS_FAILED = "failed"


@dataclass(frozen=True)
class TurnStatus:
    game_id: str
    turn_index: int
    status: str
    request_hash: str | None = None
    error: str | None = None

    def to_dict(self) -> dict:
        return {
            "game_id": self.game_id,
            "turn_index": self.turn_index,
            "status": self.status,
            "request_hash": self.request_hash,
            "error": self.error,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "TurnStatus":
        return cls(
            game_id=data["game_id"],
            turn_index=data["turn_index"],
            status=data["status"],
            request_hash=data.get("request_hash"),
            error=data.get("error"),
        )


@dataclass(frozen=True)
class RunManifest:
    run_id: str
    corpus_digest: str
    split: str
    provider_name: str
    model_id: str
    prompt_config: PromptConfig
    retrieval_provider: str
    k: int
    turns: tuple[TurnStatus, ...] = ()

    @property
    def complete(self) -> bool:
        return bool(self.turns) and all(t.status == STATUS_COMPLETE for t in self.turns)

    @property
    def failed_count(self) -> int:
        return sum(1 for t in self.turns if t.status == STATUS_FAILED)

    def to_dict(self) -> dict:
        return {
            "version": MANIFEST_VERSION,
            "run_id": self.run_id,
            "corpus_digest": self.corpus_digest,
            "split": self.split,
            "provider_name": self.provider_name,
            "model_id": self.model_id,
            "prompt_config": self.prompt_config.to_dict(),
            "retrieval_provider": self.retrieval_provider,
            "k": self.k,
            "turns": [t.to_dict() for t in self.turns],
        }

    @classmethod
    def from_dict(cls, data: dict) -> "RunManifest":
        return cls(
            run_id=data["run_id"],
            corpus_digest=data["corpus_digest"],
            split=data["split"],
            provider_name=data["provider_name"],
            model_id=data["model_id"],
            prompt_config=PromptConfig.from_dict(data["prompt_config"]),
            retrieval_provider=data["retrieval_provider"],
            k=data["k"],
            turns=tuple(TurnStatus.from_dict(t) for t in data.get("turns", [])),
        )


def corpus_digest(pairs: Sequence[TurnPair]) -> str:
    """Fingerprint of the evaluated turns (ids, instructions, gold code)."""
    h = hashlib.sha256()
    for pair in pairs:
        h.update(
            json.dumps(
                [
                    pair.game_id,
                    pair.turn_index,
                    pair.instruction,
                    [serialize_action(a) for a in pair.gold_actions],
                ],
                sort_keys=True,
                separators=(",", ":"),
            ).encode("utf-8")
        )
        h.update(b"\n")
    return h.hexdigest()


def derive_run_id(
    corpus_digest_value: str,
    split: str,
    provider_name: str,
    model_id: str,
    prompt_config: PromptConfig,
    retrieval_provider: str,
) -> str:
    payload = json.dumps(
        {
            "corpus_digest": corpus_digest_value,
            "split": split,
            "provider": provider_name,
            "model": model_id,
            "prompt_config": prompt_config.to_dict(),
            "retrieval": retrieval_provider,
        },
        sort_keys=True,
        separators=(",", ":"),
    )
    return hashlib.sha256(payload.encode("utf-8")).hexdigest()[:16]


def _atomic_write_json(path: Path, data: dict) -> None:
    tmp = path.with_name(path.name + f".tmp{os.getpid()}")
    with open(tmp, "w", encoding="utf-8", newline="\n") as handle:
        json.dump(data, handle, sort_keys=True, indent=2)
        handle.write("\n")
    tmp.replace(path)


def _turn_stem(position: int) -> str:
    return f"{position:05d}"


def load_manifest(run_dir: str | Path) -> RunManifest:
    path = Path(run_dir) / "manifest.json"
    with open(path, encoding="utf-8") as handle:
        return RunManifest.from_dict(json.load(handle))


def _load_completed(run_dir: Path, manifest: RunManifest) -> set[tuple[str, int]]:
    done: set[tuple[str, int]] = set()
    for position, turn in enumerate(manifest.turns):
        response_path = run_dir / "responses" / f"{_turn_stem(position)}.json"
        if turn.status == STATUS_COMPLETE and response_path.exists():
            done.add((turn.game_id, turn.turn_index))
    return done


def execute_run(
    pairs: Sequence[TurnPair],
    *,
    split: str,
    provider: CompletionProvider,
    model_id: str,
    prompt_config: PromptConfig,
    index: ExampleIndex | None,
    embedder: EmbeddingProvider | None,
    cache: ResponseCache,
    runs_root: str | Path,
    parallelism: int = 1,
) -> tuple[RunManifest, Path]:
    """Run the prompt→complete loop over pairs, resuming prior progress.

    Retrieval is skipped entirely when prompt_config.k_examples is 0 or
    the index is None. Provider failures mark the turn failed and the run
    carries on; rerunning retries only pending and failed turns.
    """
    if prompt_config.k_examples > 0 and (index is None or embedder is None):
        raise ValueError("k_examples > 0 requires a retrieval index and embedder")

    digest = corpus_digest(pairs)
    run_id = derive_run_id(
        digest, split, provider.name, model_id, prompt_config,
        index.provider_name if index is not None else "none",
    )
    run_dir = Path(runs_root) / run_id
    (run_dir / "prompts").mkdir(parents=True, exist_ok=True)
    (run_dir / "responses").mkdir(parents=True, exist_ok=True)

    manifest = RunManifest(
        run_id=run_id,
        corpus_digest=digest,
        split=split,
        provider_name=provider.name,
        model_id=model_id,
        prompt_config=prompt_config,
        retrieval_provider=index.provider_name if index is not None else "none",
        k=prompt_config.k_examples,
        turns=tuple(
            TurnStatus(game_id=p.game_id, turn_index=p.turn_index, status=STATUS_PENDING)
            for p in pairs
        ),
    )
    manifest_path = run_dir / "manifest.json"
    if manifest_path.exists():
        previous = load_manifest(run_dir)
        if previous.run_id != run_id:
            raise ValueError(f"run directory {run_dir} holds a different run {previous.run_id}")
        by_key = {(t.game_id, t.turn_index): t for t in previous.turns}
        completed = _load_completed(run_dir, previous)
        manifest = replace(
            manifest,
            turns=tuple(
                by_key[key] if (key := (t.game_id, t.turn_index)) in completed else t
                for t in manifest.turns
            ),
        )

    started = time.monotonic()
    statuses = list(manifest.turns)
    lock = threading.Lock()

    def run_turn(position: int) -> None:
        pair = pairs[position]
        if statuses[position].status == STATUS_COMPLETE:
            return
        try:
            examples = (
                top_k(index, pair.instruction, prompt_config.k_examples, embedder)
                if prompt_config.k_examples > 0 and index is not None
                else []
            )
            prompt = render_prompt(prompt_config, examples, pair.instruction)
            request = CompletionRequest(
                model_id=model_id, prompt=prompt, turn=pair
            )
            stem = _turn_stem(position)
            prompt_path = run_dir / "prompts" / f"{stem}.txt"
            if not prompt_path.exists():
                tmp = prompt_path.with_name(prompt_path.name + f".tmp{os.getpid()}")
                tmp.write_text(prompt.text, encoding="utf-8")
                tmp.replace(prompt_path)
            record = cached_complete(provider, request, cache)
            _atomic_write_json(
                run_dir / "responses" / f"{stem}.json",
                {
                    "game_id": pair.game_id,
                    "turn_index": pair.turn_index,
                    "record": record.to_dict(),
                },
            )
            status = TurnStatus(
                game_id=pair.game_id,
                turn_index=pair.turn_index,
                status=STATUS_COMPLETE,
                request_hash=record.request_hash,
            )
        except ProviderError as exc:
            logger.warning("turn %s/%s failed: %s", pair.game_id, pair.turn_index, exc)
            status = TurnStatus(
                game_id=pair.game_id,
                turn_index=pair.turn_index,
                status=STATUS_FAILED,
                error=str(exc),
            )
        with lock:
            statuses[position] = status

    positions = [i for i, s in enumerate(statuses) if s.status != STATUS_COMPLETE]
    if parallelism > 1 and len(positions) > 1:
        with concurrent.futures.ThreadPoolExecutor(max_workers=parallelism) as pool:
            list(pool.map(run_turn, positions))
    else:
        for position in positions:
            run_turn(position)

    manifest = replace(manifest, turns=tuple(statuses))
    _atomic_write_json(manifest_path, manifest.to_dict())
    _atomic_write_json(
        run_dir / "meta.json",
        {
            "finished_at": datetime.now(timezone.utc).isoformat(),
            "elapsed_seconds": round(time.monotonic() - started, 3),
            "parallelism": parallelism,
        },
    )
    return manifest, run_dir


def load_responses(run_dir: str | Path) -> dict[tuple[str, int], str | None]:
    """Raw response text per turn; failed or missing turns map to None."""
    run_dir = Path(run_dir)
    manifest = load_manifest(run_dir)
    responses: dict[tuple[str, int], str | None] = {}
    for position, turn in enumerate(manifest.turns):
        key = (turn.game_id, turn.turn_index)
        path = run_dir / "responses" / f"{_turn_stem(position)}.json"
        if turn.status == STATUS_COMPLETE and path.exists():
            with open(path, encoding="utf-8") as handle:
                responses[key] = json.load(handle)["record"]["response_text"]
        else:
            responses[key] = None
    return responses


def evaluate_run_dir(
    run_dir: str | Path,
    pairs: Sequence[TurnPair],
    *,
    ordered: bool = False,
) -> EvalReport:
    """Score a run directory against gold and persist report.json."""
    run_dir = Path(run_dir)
    manifest = load_manifest(run_dir)
    wanted = {(t.game_id, t.turn_index) for t in manifest.turns}
    scoped = [p for p in pairs if (p.game_id, p.turn_index) in wanted]
    if len(scoped) != len(manifest.turns):
        raise ValueError(
            f"corpus provides {len(scoped)} of the {len(manifest.turns)} turns in run "
            f"{manifest.run_id}"
        )
    report = evaluate_run(scoped, load_responses(run_dir), ordered=ordered)
    _atomic_write_json(run_dir / "report.json", report.to_dict())
    return report
