"""Normalized dialogue-game corpus: loading, turn aggregation, split stats.

On-disk schema is JSONL, one game per line, UTF-8 with LF endings::

    {"game_id": str, "split": "train"|"dev"|"test",
     "target_structure_id": str (optional),
     "events": [{"kind": "utterance", "speaker": "architect"|"builder", "text": str}
                | {"kind": "builder_action",
                   "action": {"kind": "place"|"pick", "color": str,
                              "x": int, "y": int, "z": int}}]}

A corpus path may be a single JSONL file (records filtered by their split
field) or a directory holding one ``<split>.jsonl`` file per split.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Union

from .dsl import Action, _COLOR_SET
from .world import GridSpec, Violation, WorldState, apply_sequence, new_world

SPLITS = ("train", "dev", "test")

ARCHITECT = "architect"
BUILDER = "builder"


@dataclass(frozen=True)
class Utterance:
    speaker: str
    text: str


@dataclass(frozen=True)
class BuilderAction:
    action: Action


Event = Union[Utterance, BuilderAction]


@dataclass(frozen=True)
class DialogueGame:
    game_id: str
    split: str
    events: tuple[Event, ...]
    target_structure_id: str | None = None


@dataclass(frozen=True)
class TurnPair:
    """One aggregated instruction plus the builder-action block it triggered.

    world_before is derived (replay of all earlier turns' gold actions from
    the empty world) and excluded from equality.
    """

    game_id: str
    turn_index: int
    instruction: str
    gold_actions: tuple[Action, ...]
    world_before: WorldState | None = field(default=None, compare=False)


@dataclass(frozen=True)
class SplitStats:
    split: str
    game_count: int
    pair_count: int


@dataclass(frozen=True)
class RecordDiagnostic:
    """A malformed record: where it sits, which field broke, and why."""

    record_index: int  # 1-based line number
    field: str
    message: str


INSTRUCTION_SEPARATOR = ". "


def _check_str(value, fieldname: str) -> str:
    if not isinstance(value, str):
        raise _SchemaError(fieldname, f"expected string, got {type(value).__name__}")
    return value


def _check_int(value, fieldname: str) -> int:
    if isinstance(value, bool) or not isinstance(value, int):
        raise _SchemaError(fieldname, f"expected integer, got {value!r}")
    return value


class _SchemaError(Exception):
    def __init__(self, fieldname: str, message: str) -> None:
        super().__init__(message)
        self.fieldname = fieldname
        self.message = message


def _event_from_dict(data: dict, fieldname: str) -> Event:
    if not isinstance(data, dict):
        raise _SchemaError(fieldname, "event must be an object")
    kind = data.get("kind")
    if kind == "utterance":
        speaker = _check_str(data.get("speaker"), f"{fieldname}.speaker")
        if speaker not in (ARCHITECT, BUILDER):
            raise _SchemaError(f"{fieldname}.speaker", f"unknown speaker {speaker!r}")
        return Utterance(speaker=speaker, text=_check_str(data.get("text"), f"{fieldname}.text"))
    if kind == "builder_action":
        raw = data.get("action")
        if not isinstance(raw, dict):
            raise _SchemaError(f"{fieldname}.action", "action must be an object")
        action_kind = raw.get("kind")
        if action_kind not in ("place", "pick"):
            raise _SchemaError(f"{fieldname}.action.kind", f"unknown action kind {action_kind!r}")
        color = _check_str(raw.get("color"), f"{fieldname}.action.color")
        if color not in _COLOR_SET:
            raise _SchemaError(f"{fieldname}.action.color", f"unknown color {color!r}")
        return BuilderAction(
            action=Action(
                kind=action_kind,
                color=color,
                x=_check_int(raw.get("x"), f"{fieldname}.action.x"),
                y=_check_int(raw.get("y"), f"{fieldname}.action.y"),
                z=_check_int(raw.get("z"), f"{fieldname}.action.z"),
            )
        )
    raise _SchemaError(f"{fieldname}.kind", f"unknown event kind {kind!r}")


def game_from_dict(data: dict) -> DialogueGame:
    """Validate one normalized record; raises _SchemaError on violations."""
    game_id = data.get("game_id")
    if not isinstance(game_id, str) or not game_id:
        raise _SchemaError("game_id", "game_id must be a non-empty string")
    split = data.get("split")
    if split not in SPLITS:
        raise _SchemaError("split", f"split must be one of {SPLITS}, got {split!r}")
    raw_events = data.get("events")
    if not isinstance(raw_events, list):
        raise _SchemaError("events", "events must be a list")
    events = tuple(
        _event_from_dict(event, f"events[{index}]") for index, event in enumerate(raw_events)
    )
    target = data.get("target_structure_id")
    if target is not None:
        target = _check_str(target, "target_structure_id")
    return DialogueGame(game_id=game_id, split=split, events=events, target_structure_id=target)


def event_to_dict(event: Event) -> dict:
    if isinstance(event, Utterance):
        return {"kind": "utterance", "speaker": event.speaker, "text": event.text}
    a = event.action
    return {
        "kind": "builder_action",
        "action": {"kind": a.kind, "color": a.color, "x": a.x, "y": a.y, "z": a.z},
    }


def game_to_dict(game: DialogueGame) -> dict:
    record = {
        "game_id": game.game_id,
        "split": game.split,
        "events": [event_to_dict(event) for event in game.events],
    }
    if game.target_structure_id is not None:
        record["target_structure_id"] = game.target_structure_id
    return record


def _resolve_split_file(path: Path, split: str) -> Path:
    if path.is_dir():
        candidate = path / f"{split}.jsonl"
        if not candidate.exists():
            raise FileNotFoundError(f"no {split}.jsonl under {path}")
        return candidate
    if not path.exists():
        raise FileNotFoundError(str(path))
    return path


def load_corpus(
    path: str | Path, split: str
) -> tuple[list[DialogueGame], list[RecordDiagnostic]]:
    """Read all games of one split, in file order.

    Malformed records become RecordDiagnostics instead of being silently
    dropped; a duplicate game_id within the split keeps the first occurrence
    and flags the later one.
    """
    if split not in SPLITS:
        raise ValueError(f"split must be one of {SPLITS}, got {split!r}")
    split_file = _resolve_split_file(Path(path), split)

    games: list[DialogueGame] = []
    diagnostics: list[RecordDiagnostic] = []
    seen_ids: set[str] = set()
    with open(split_file, encoding="utf-8") as handle:
        for line_number, line in enumerate(handle, start=1):
            if not line.strip():
                continue
            try:
                record = json.loads(line)
            except json.JSONDecodeError as exc:
                diagnostics.append(RecordDiagnostic(line_number, "-", f"invalid JSON: {exc}"))
                continue
            if not isinstance(record, dict):
                diagnostics.append(RecordDiagnostic(line_number, "-", "record must be an object"))
                continue
            try:
                game = game_from_dict(record)
            except _SchemaError as exc:
                diagnostics.append(RecordDiagnostic(line_number, exc.fieldname, exc.message))
                continue
            if game.split != split:
                continue
            if game.game_id in seen_ids:
                diagnostics.append(
                    RecordDiagnostic(line_number, "game_id", f"duplicate game_id {game.game_id!r}")
                )
                continue
            seen_ids.add(game.game_id)
            games.append(game)
    return games, diagnostics


def write_corpus(games: Iterable[DialogueGame], path: str | Path) -> None:
    """Write games in the canonical byte form: sorted keys, compact, LF."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "w", encoding="utf-8", newline="\n") as handle:
        for game in games:
            handle.write(json.dumps(game_to_dict(game), sort_keys=True, separators=(",", ":")))
            handle.write("\n")
    tmp.replace(path)


def aggregate_turns(
    game: DialogueGame,
    spec: GridSpec | None = None,
    *,
    with_world: bool = True,
    violations_out: list[Violation] | None = None,
) -> list[TurnPair]:
    """Convert a game into (instruction, gold action block) turn pairs.

    Consecutive builder actions form one block; every utterance (either
    speaker) since the previous block joins the next instruction with ". ".
    Utterances after the final block yield no pair. When with_world is set,
    each pair carries the world replayed leniently from the empty grid up to
    its turn; replay violations land in violations_out if given.
    """
    pairs: list[TurnPair] = []
    pending: list[str] = []
    world = new_world(spec) if with_world else None
    events = game.events
    index = 0
    turn_index = 0
    while index < len(events):
        event = events[index]
        if isinstance(event, Utterance):
            pending.append(event.text)
            index += 1
            continue
        block: list[Action] = []
        while index < len(events) and isinstance(events[index], BuilderAction):
            block.append(events[index].action)
            index += 1
        pairs.append(
            TurnPair(
                game_id=game.game_id,
                turn_index=turn_index,
                instruction=INSTRUCTION_SEPARATOR.join(pending),
                gold_actions=tuple(block),
                world_before=world,
            )
        )
        if world is not None:
            world, violations = apply_sequence(
                world, block, mode="lenient", turn_context=(game.game_id, turn_index)
            )
            if violations_out is not None:
                violations_out.extend(violations)
        pending = []
        turn_index += 1
    return pairs


def aggregate_split(
    games: Iterable[DialogueGame],
    spec: GridSpec | None = None,
    *,
    with_world: bool = True,
    violations_out: list[Violation] | None = None,
) -> list[TurnPair]:
    pairs: list[TurnPair] = []
    for game in games:
        pairs.extend(
            aggregate_turns(game, spec, with_world=with_world, violations_out=violations_out)
        )
    return pairs


def split_stats(games: list[DialogueGame], split: str | None = None) -> SplitStats:
    """Count games and turn pairs; split is inferred from the games if unset."""
    if split is None:
        observed = {game.split for game in games}
        split = observed.pop() if len(observed) == 1 else "mixed"
    pair_count = sum(len(aggregate_turns(game, with_world=False)) for game in games)
    return SplitStats(split=split, game_count=len(games), pair_count=pair_count)
